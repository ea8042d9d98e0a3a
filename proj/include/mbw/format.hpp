#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace mbw {

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return res.ec == std::errc{} ? std::string(buf, res.ptr) : std::string("nan");
}

}  // namespace mbw
