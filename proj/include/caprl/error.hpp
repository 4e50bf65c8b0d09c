#pragma once

#include <stdexcept>
#include <string>

namespace caprl {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CAPRL_DEFINE_ERROR(Name)          \
    class Name : public Error {           \
    public:                               \
        using Error::Error;               \
    }

CAPRL_DEFINE_ERROR(ParseError);
CAPRL_DEFINE_ERROR(EmptyCorpusError);
CAPRL_DEFINE_ERROR(LengthError);
CAPRL_DEFINE_ERROR(DimensionError);
CAPRL_DEFINE_ERROR(ValidationError);
CAPRL_DEFINE_ERROR(ShapeError);
CAPRL_DEFINE_ERROR(ConfigError);
CAPRL_DEFINE_ERROR(IndexError);
CAPRL_DEFINE_ERROR(NumericError);
CAPRL_DEFINE_ERROR(MissingReferenceError);
CAPRL_DEFINE_ERROR(MissingFeatureError);
CAPRL_DEFINE_ERROR(NotFoundError);
CAPRL_DEFINE_ERROR(ServiceError);
CAPRL_DEFINE_ERROR(IoError);

#undef CAPRL_DEFINE_ERROR

}  // namespace caprl
