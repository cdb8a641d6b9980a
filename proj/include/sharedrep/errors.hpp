#pragma once

#include <stdexcept>
#include <string>

namespace sharedrep {

// Every library failure derives from Error so the CLI can report a single
// machine-readable kind string.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

#define SHAREDREP_ERROR(Name, Kind)                                   \
    class Name : public Error {                                        \
    public:                                                            \
        using Error::Error;                                            \
        const char* kind() const noexcept override { return Kind; }    \
    };

SHAREDREP_ERROR(DimensionError, "dimension")
SHAREDREP_ERROR(UsageError, "usage")
SHAREDREP_ERROR(ConfigError, "config")
SHAREDREP_ERROR(DataError, "data")
SHAREDREP_ERROR(NumericError, "numeric")
SHAREDREP_ERROR(LoadError, "load")
SHAREDREP_ERROR(IoError, "io")

#undef SHAREDREP_ERROR

}  // namespace sharedrep
