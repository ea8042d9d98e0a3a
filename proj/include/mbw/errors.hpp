#pragma once

#include <stdexcept>
#include <string>

namespace mbw {

/// Base of every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

#define MBW_DECLARE_ERROR(Name)                                                                                        \
    class Name : public Error                                                                                          \
    {                                                                                                                  \
    public:                                                                                                            \
        explicit Name(const std::string& what) : Error(std::string(#Name ": ") + what) {}                              \
    }

MBW_DECLARE_ERROR(DegenerateConfiguration);
MBW_DECLARE_ERROR(ShapeMismatch);
MBW_DECLARE_ERROR(IncompleteInput);
MBW_DECLARE_ERROR(InsufficientLabels);
MBW_DECLARE_ERROR(SingularSystem);
MBW_DECLARE_ERROR(NoSeeds);
MBW_DECLARE_ERROR(TooFewFrames);
MBW_DECLARE_ERROR(AllMissing);
MBW_DECLARE_ERROR(MissingHeadBone);
MBW_DECLARE_ERROR(BadGrid);
MBW_DECLARE_ERROR(NoPositives);
MBW_DECLARE_ERROR(ProtocolError);
MBW_DECLARE_ERROR(IoError);

#undef MBW_DECLARE_ERROR

/// Training produced a NaN or infinite objective.
class NonFiniteLoss : public Error
{
public:
    NonFiniteLoss(int step, const std::string& what)
        : Error("NonFiniteLoss at step " + std::to_string(step) + ": " + what), step_(step)
    {
    }
    int step() const { return step_; }

private:
    int step_;
};

/// Malformed annotation or manifest file.
class SchemaError : public Error
{
public:
    SchemaError(std::size_t line, const std::string& key, const std::string& what)
        : Error("SchemaError at line " + std::to_string(line) + (key.empty() ? "" : " (key '" + key + "')") + ": " +
                what),
          line_(line), key_(key)
    {
    }
    std::size_t line() const { return line_; }
    const std::string& key() const { return key_; }

private:
    std::size_t line_;
    std::string key_;
};

}  // namespace mbw
