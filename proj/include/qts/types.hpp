#pragma once

#include <Eigen/Core>

namespace qts {

// Fixed problem dimensions of the quadruple-tank process.
inline constexpr int kStates = 4;        // tank masses [g]
inline constexpr int kInputs = 2;        // pump flows [cm^3/s]
inline constexpr int kDisturbances = 4;  // unknown inflows [cm^3/s]
inline constexpr int kMeasurements = 4;  // tank levels [cm]
inline constexpr int kOutputs = 2;       // lower tank levels [cm]
inline constexpr int kAugmented = kStates + kDisturbances;

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Vec8 = Eigen::Matrix<double, kAugmented, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat4 = Eigen::Matrix4d;
using Mat8 = Eigen::Matrix<double, kAugmented, kAugmented>;
using Mat42 = Eigen::Matrix<double, 4, 2>;
using Mat24 = Eigen::Matrix<double, 2, 4>;
using Mat48 = Eigen::Matrix<double, 4, 8>;
using Mat84 = Eigen::Matrix<double, 8, 4>;
using Mat82 = Eigen::Matrix<double, 8, 2>;

}  // namespace qts
