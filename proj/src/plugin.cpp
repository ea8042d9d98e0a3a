#include <string>

#include <json.hpp>

#include "mbw/errors.hpp"
#include "mbw/perception.hpp"

namespace mbw::perception {

using nlohmann::json;

namespace {

json parse_line(const std::string& line)
{
    try
    {
        return json::parse(line);
    }
    catch (const json::parse_error& e)
    {
        throw ProtocolError(std::string("malformed JSON: ") + e.what());
    }
}

int require_int(const json& obj, const char* key)
{
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_number_integer())
        throw ProtocolError(std::string("field '") + key + "' must be an integer");
    return it->get<int>();
}

}  // namespace

std::string format_detect_request(FrameView key, const FrameDescriptor& descriptor)
{
    json j;
    j["op"] = "detect";
    j["frame"] = key.frame;
    j["view"] = key.view;
    j["descriptor"] = std::vector<double>(descriptor.values.data(), descriptor.values.data() + descriptor.values.size());
    return j.dump();
}

std::pair<FrameView, FrameDescriptor> parse_detect_request(const std::string& line)
{
    const json j = parse_line(line);
    if (!j.is_object())
        throw ProtocolError("request must be a JSON object");
    auto op = j.find("op");
    if (op == j.end() || !op->is_string() || op->get<std::string>() != "detect")
        throw ProtocolError("unsupported op (expected \"detect\")");
    FrameView key{require_int(j, "frame"), require_int(j, "view")};
    auto d = j.find("descriptor");
    if (d == j.end() || !d->is_array())
        throw ProtocolError("field 'descriptor' must be an array");
    FrameDescriptor desc;
    desc.values.resize(static_cast<Eigen::Index>(d->size()));
    Eigen::Index i = 0;
    for (const auto& x : *d)
    {
        if (!x.is_number())
            throw ProtocolError("descriptor entries must be numbers");
        desc.values(i++) = x.get<double>();
    }
    return {key, std::move(desc)};
}

std::string format_detect_response(const Landmarks2D& points)
{
    json pts = json::array();
    for (Eigen::Index i = 0; i < points.size(); ++i)
        pts.push_back({points.points(i, 0), points.points(i, 1)});
    return json{{"points", pts}}.dump();
}

Landmarks2D parse_detect_response(const std::string& line, int num_points)
{
    const json j = parse_line(line);
    if (!j.is_object() || !j.contains("points") || !j["points"].is_array())
        throw ProtocolError("response must be an object with a 'points' array");
    const auto& pts = j["points"];
    if (static_cast<int>(pts.size()) != num_points)
        throw ProtocolError("response has " + std::to_string(pts.size()) + " points, expected " +
                            std::to_string(num_points));
    Mat2X out(num_points, 2);
    for (int i = 0; i < num_points; ++i)
    {
        const auto& p = pts[static_cast<std::size_t>(i)];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
            throw ProtocolError("point " + std::to_string(i) + " must be [x, y]");
        out(i, 0) = p[0].get<double>();
        out(i, 1) = p[1].get<double>();
    }
    return Landmarks2D(std::move(out));
}

void serve_detector(const DetectorModel& model, std::istream& in, std::ostream& out)
{
    std::string line;
    while (std::getline(in, line))
    {
        const auto [key, desc] = parse_detect_request(line);
        if (desc.values.size() != model.descriptor_dim())
            throw ProtocolError("descriptor length does not match the detector");
        out << format_detect_response(detect(model, desc)) << '\n';
        out.flush();
    }
}

Landmarks2D StreamDetector::detect(FrameView key, const FrameDescriptor& descriptor)
{
    out_ << format_detect_request(key, descriptor) << '\n';
    out_.flush();
    std::string line;
    if (!std::getline(in_, line))
        throw ProtocolError("plugin closed the stream before responding");
    return parse_detect_response(line, num_points_);
}

}  // namespace mbw::perception
