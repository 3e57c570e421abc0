#pragma once

#include <functional>

#include "fsl/errors.hpp"

namespace fsl_test {

// Runs fn and reports the error code it raised; code 0 means no throw, which
// never equals a real code.
inline fsl::ErrorCode error_code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const fsl::Error& e) {
        return e.code();
    }
    return static_cast<fsl::ErrorCode>(0);
}

} // namespace fsl_test
