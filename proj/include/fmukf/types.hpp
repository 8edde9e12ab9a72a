#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string_view>
#include <array>

namespace fmukf {

inline constexpr int kStateDim = 10;
inline constexpr int kControlDim = 2;

/// Canonical state layout shared by every module: [u, v, p, r, x, y, phi, psi, delta, n].
namespace idx {
inline constexpr int u = 0;
inline constexpr int v = 1;
inline constexpr int p = 2;
inline constexpr int r = 3;
inline constexpr int x = 4;
inline constexpr int y = 5;
inline constexpr int phi = 6;
inline constexpr int psi = 7;
inline constexpr int delta = 8;
inline constexpr int n = 9;
}  // namespace idx

/// Control layout: [delta_c, n_c].
namespace cidx {
inline constexpr int delta_c = 0;
inline constexpr int n_c = 1;
}  // namespace cidx

inline constexpr std::array<std::string_view, kStateDim> kStateNames = {
    "u", "v", "p", "r", "x", "y", "phi", "psi", "delta", "n"};
inline constexpr std::array<std::string_view, kControlDim> kControlNames = {"delta_c", "n_c"};

/// Ship state in SI units (m/s, rad/s, m, rad, rev/s). Angles are stored unwrapped.
using ShipState = Eigen::Matrix<double, kStateDim, 1>;
/// Actuator command: commanded rudder angle (rad) and shaft speed (rev/s).
using ControlInput = Eigen::Matrix<double, kControlDim, 1>;
using StateDerivative = Eigen::Matrix<double, kStateDim, 1>;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool is_angle_index(int i) { return i == idx::phi || i == idx::psi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  if (w > std::numbers::pi) w -= two_pi;
  return w;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace fmukf
