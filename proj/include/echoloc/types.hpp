// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace echoloc {

using Vec3 = Eigen::Vector3d;

inline constexpr double kIntersectEpsilon = 1e-4;  // meters, self-hit bias
inline constexpr double kMinTriangleArea = 1e-9;   // square meters

/// Input/validation problems the caller can act on (exit code 2 in the CLI).
struct UserError : std::runtime_error {
    explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : UserError {
    explicit ParseError(const std::string& msg) : UserError(msg) {}
};

struct ValidationError : UserError {
    explicit ValidationError(const std::string& msg) : UserError(msg) {}
};

}  // namespace echoloc
