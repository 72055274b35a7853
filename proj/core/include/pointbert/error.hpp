#pragma once

#include <stdexcept>
#include <string>

namespace pointbert {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define POINTBERT_DEFINE_ERROR(Name)            \
    class Name : public Error {                 \
    public:                                     \
        using Error::Error;                     \
    }

POINTBERT_DEFINE_ERROR(ShapeError);
POINTBERT_DEFINE_ERROR(DomainError);
POINTBERT_DEFINE_ERROR(LabelError);
POINTBERT_DEFINE_ERROR(NumericsError);
POINTBERT_DEFINE_ERROR(SizeError);
POINTBERT_DEFINE_ERROR(SimplexError);
POINTBERT_DEFINE_ERROR(RatioError);
POINTBERT_DEFINE_ERROR(NormError);
POINTBERT_DEFINE_ERROR(SpecError);
POINTBERT_DEFINE_ERROR(FormatError);

#undef POINTBERT_DEFINE_ERROR

/// Configuration problems carry the offending dotted key.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace pointbert
