#pragma once

#include "fmukf/error.hpp"
#include "fmukf/ship_params.hpp"
#include "fmukf/types.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace fmukf {

/// Speeds below this are clamped before nondimensionalisation. Every force
/// term vanishes with the velocities, so the clamp only regularises 0/0.
inline constexpr double kMinSpeed = 1e-3;
inline constexpr double kDefaultDt = 1.0;
inline constexpr double kCapsizeRollDeg = 60.0;

inline void require_finite(const ShipState& x, const ControlInput& u) {
  if (!x.allFinite() || !u.allFinite()) {
    throw Error(ErrorCode::NonFiniteState, "state or input contains NaN/Inf");
  }
}

/// Rates of the pose block (x, y, phi, psi) given body velocities and attitude.
struct PoseRates {
  double x, y, phi, psi;
};

inline PoseRates kinematic_rates(double u, double v, double p, double r, double phi, double psi) {
  const double cphi = std::cos(phi);
  return {std::cos(psi) * u - std::sin(psi) * cphi * v,
          std::sin(psi) * u + std::cos(psi) * cphi * v, p, cphi * r};
}

inline PoseRates kinematic_rates(const ShipState& s) {
  return kinematic_rates(s[idx::u], s[idx::v], s[idx::p], s[idx::r], s[idx::phi], s[idx::psi]);
}

struct ActuatorRates {
  double delta_dot, n_dot;
};

/// Rudder: magnitude-saturated command, rate-saturated response. Shaft:
/// saturated command, speed-dependent time constant.
inline ActuatorRates actuator_rates(double delta, double n, const ControlInput& input, const ShipParams& P) {
  const double dmax = P.delta_max();
  const double delta_c = std::clamp(input[cidx::delta_c], -dmax, dmax);
  const double nmax = P.n_max();
  const double n_c = std::clamp(input[cidx::n_c], -nmax, nmax);
  const double Tm = n > P.shaft_tm_switch ? P.shaft_tm_num / n : P.shaft_tm_low;
  return {std::clamp(delta_c - delta, -P.ddelta_max(), P.ddelta_max()), (n_c - n) / Tm};
}

/// Continuous-time dynamics of the container ship. The kinetic equations are
/// evaluated in the prime system (normalised by L and the speed U) and mapped
/// back to SI units; rudder and shaft follow saturated first-order lags.
/// The caller is responsible for `validate(params)`.
inline StateDerivative derivative(const ShipState& state, const ControlInput& input,
                                  const ShipParams& P) {
  require_finite(state, input);
  using std::abs;
  using std::cos;
  using std::sin;
  const double L = P.L;
  const double U = std::max(std::hypot(state[idx::u], state[idx::v]), kMinSpeed);

  const double u = state[idx::u] / U;
  const double v = state[idx::v] / U;
  const double p = state[idx::p] * L / U;
  const double r = state[idx::r] * L / U;
  const double phi = state[idx::phi];
  const double psi = state[idx::psi];
  const double delta = state[idx::delta];
  const double n = state[idx::n];  // rev/s

  const auto [delta_dot, n_dot] = actuator_rates(delta, n, input, P);

  const double m11 = P.m + P.mx;
  const double m22 = P.m + P.my;
  const double m32 = -P.my * P.ly;
  const double m42 = P.my * P.alphay;
  const double m33 = P.Ix + P.Jx;
  const double m44 = P.Iz + P.Jz;

  const double W = P.rho * P.g * P.nabla / (P.rho * L * L * U * U / 2.0);
  const double GM = P.GM / L;

  const double vR = P.ga * v + P.cRr * r + P.cRrrr * r * r * r + P.cRrrv * r * r * v;
  const double uP = cos(v) * ((1.0 - P.wp) + P.tau * ((v + P.xp * r) * (v + P.xp * r) +
                                                      P.cpv * v + P.cpr * r));
  // Advance ratio enters through 1/J = nD/(uP U) so that n = 0 stays regular.
  const double invJ = n * P.D / (uP * U);
  const double KT_over_J2 = 0.527 * invJ * invJ - 0.455 * invJ;
  const double uR = uP * P.epsilon * std::sqrt(1.0 + 8.0 * P.kk * KT_over_J2 / std::numbers::pi);
  const double alphaR = delta + std::atan(vR / uR);
  const double FN = -((6.13 * P.Delta) / (P.Delta + 2.25)) * (P.AR / (L * L)) *
                    (uR * uR + vR * vR) * sin(alphaR);
  // Thrust, with KT*n|n| written without dividing by n.
  const double T = 2.0 * std::pow(P.D, 4) / (U * U * L * L) *
                   (0.527 * n * abs(n) - 0.455 * abs(n) * uP * U / P.D);

  const double v2 = v * v, r2 = r * r, phi2 = phi * phi;
  const double X = P.Xuu * u * u + (1.0 - P.t) * T + P.Xvr * v * r + P.Xvv * v2 + P.Xrr * r2 +
                   P.Xphiphi * phi2 + P.cRX * FN * sin(delta) + (P.m + P.my) * v * r;

  const double Y = P.Yv * v + P.Yr * r + P.Yp * p + P.Yphi * phi + P.Yvvv * v2 * v +
                   P.Yrrr * r2 * r + P.Yvvr * v2 * r + P.Yvrr * v * r2 + P.Yvvphi * v2 * phi +
                   P.Yvphiphi * v * phi2 + P.Yrrphi * r2 * phi + P.Yrphiphi * r * phi2 +
                   (1.0 + P.aH) * FN * cos(delta) - (P.m + P.mx) * u * r;

  const double K = P.Kv * v + P.Kr * r + P.Kp * p + P.Kphi * phi + P.Kvvv * v2 * v +
                   P.Krrr * r2 * r + P.Kvvr * v2 * r + P.Kvrr * v * r2 + P.Kvvphi * v2 * phi +
                   P.Kvphiphi * v * phi2 + P.Krrphi * r2 * phi + P.Krphiphi * r * phi2 -
                   (1.0 + P.aH) * P.zR * FN * cos(delta) + P.mx * P.lx * u * r - W * GM * phi;

  const double N = P.Nv * v + P.Nr * r + P.Np * p + P.Nphi * phi + P.Nvvv * v2 * v +
                   P.Nrrr * r2 * r + P.Nvvr * v2 * r + P.Nvrr * v * r2 + P.Nvvphi * v2 * phi +
                   P.Nvphiphi * v * phi2 + P.Nrrphi * r2 * phi + P.Nrphiphi * r * phi2 +
                   (P.xR + P.aH * P.xH) * FN * cos(delta);

  const double detM = m22 * m33 * m44 - m32 * m32 * m44 - m42 * m42 * m33;
  const double U2L = U * U / L;
  const double U2L2 = U2L / L;

  const PoseRates pose = kinematic_rates(state);

  StateDerivative dx;
  dx[idx::u] = X * U2L / m11;
  dx[idx::v] = -((-m33 * m44 * Y + m32 * m44 * K + m42 * m33 * N) / detM) * U2L;
  dx[idx::p] = ((-m32 * m44 * Y + K * m22 * m44 - K * m42 * m42 + m32 * m42 * N) / detM) * U2L2;
  dx[idx::r] = ((-m42 * m33 * Y + m32 * m42 * K + N * m22 * m33 - N * m32 * m32) / detM) * U2L2;
  dx[idx::x] = pose.x;
  dx[idx::y] = pose.y;
  dx[idx::phi] = pose.phi;
  dx[idx::psi] = pose.psi;
  dx[idx::delta] = delta_dot;
  dx[idx::n] = n_dot;
  return dx;
}

/// One classical RK4 step of `derivative` with a zero-order-hold input.
/// The rudder state is clamped to its magnitude limit afterwards.
inline ShipState step(const ShipState& state, const ControlInput& input, const ShipParams& params,
                      double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidParams, "dt must be positive");
  const StateDerivative k1 = derivative(state, input, params);
  const StateDerivative k2 = derivative(state + 0.5 * dt * k1, input, params);
  const StateDerivative k3 = derivative(state + 0.5 * dt * k2, input, params);
  const StateDerivative k4 = derivative(state + dt * k3, input, params);
  ShipState next = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  const double dmax = params.delta_max();
  next[idx::delta] = std::clamp(next[idx::delta], -dmax, dmax);
  if (!next.allFinite()) throw Error(ErrorCode::Diverged, "integration produced non-finite state");
  return next;
}

/// Rolls out every probe command sequence from `init` and reports whether the
/// ship stays upright (|phi| below the capsize threshold) and finite.
inline bool is_stable(const ShipParams& params, const ShipState& init,
                      std::span<const std::vector<ControlInput>> probes, double dt, int horizon,
                      double capsize_deg = kCapsizeRollDeg) {
  const double limit = capsize_deg * std::numbers::pi / 180.0;
  try {
    validate(params);
    for (const auto& probe : probes) {
      if (probe.empty()) continue;
      ShipState s = init;
      for (int k = 0; k < horizon; ++k) {
        s = step(s, probe[static_cast<std::size_t>(k) % probe.size()], params, dt);
        if (std::abs(s[idx::phi]) > limit) return false;
      }
    }
  } catch (const Error&) {
    return false;
  }
  return true;
}

/// Mirror image across the centre plane: lateral block and rudder negated.
inline ShipState mirror(const ShipState& s) {
  ShipState m = s;
  for (int i : {idx::v, idx::p, idx::r, idx::y, idx::phi, idx::psi, idx::delta}) m[i] = -m[i];
  return m;
}

inline ControlInput mirror(const ControlInput& c) {
  return ControlInput(-c[cidx::delta_c], c[cidx::n_c]);
}

}  // namespace fmukf
