#pragma once

#include <string_view>

#include "tepid/errors.hpp"

namespace tepid {

/// Feature formulation used for sensitivity regression.
///   baseline: adjacent-sample increments
///   mean:     window-mean removal anchored at the window's leading sample
///   variance: window variance/covariance statistics
enum class Method { baseline, mean, variance };

inline constexpr const char* to_string(Method m) {
    switch (m) {
        case Method::baseline: return "baseline";
        case Method::mean: return "mean";
        case Method::variance: return "variance";
    }
    return "?";
}

inline Method method_from_string(std::string_view s) {
    if (s == "baseline") return Method::baseline;
    if (s == "mean") return Method::mean;
    if (s == "variance") return Method::variance;
    throw ConfigError("unknown method: " + std::string(s));
}

}  // namespace tepid
