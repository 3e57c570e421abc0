#pragma once

#include <stdexcept>
#include <string>

namespace fsl {

// Error categories mirrored 1:1 by the C API status codes.
enum class ErrorCode {
    invalid_argument = 1,
    dimension,
    config,
    parse,
    schema,
    io,
    version,
    integrity,
    sampling,
    contract,
    numeric,
    unsupported,
    internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

const char* error_code_name(ErrorCode code);

} // namespace fsl
