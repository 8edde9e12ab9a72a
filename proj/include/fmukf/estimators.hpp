#pragma once

#include "fmukf/e2e.hpp"
#include "fmukf/excitation.hpp"
#include "fmukf/sensors.hpp"
#include "fmukf/sequence_model.hpp"
#include "fmukf/ship_dynamics.hpp"
#include "fmukf/ukf.hpp"

#include <memory>
#include <string>

namespace fmukf {

enum class EstimatorKind { FmUkf, FmUkfIntegrator, OracleUkf, BaseUkf, CvUkf, End2End };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::FmUkf: return "FM_UKF";
    case EstimatorKind::FmUkfIntegrator: return "FM_UKF_INTEGRATOR";
    case EstimatorKind::OracleUkf: return "ORACLE_UKF";
    case EstimatorKind::BaseUkf: return "BASE_UKF";
    case EstimatorKind::CvUkf: return "CV_UKF";
    case EstimatorKind::End2End: return "END2END";
  }
  return "?";
}

inline EstimatorKind estimator_kind_from_string(const std::string& s) {
  for (auto k : {EstimatorKind::FmUkf, EstimatorKind::FmUkfIntegrator, EstimatorKind::OracleUkf,
                 EstimatorKind::BaseUkf, EstimatorKind::CvUkf, EstimatorKind::End2End}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown estimator kind " + s);
}

/// Shared pose update: pose += dt * g(velocities, pose).
inline void advance_pose_euler(Vector& x, const Vector& rates_from, double dt) {
  const auto g = kinematic_rates(rates_from[idx::u], rates_from[idx::v], rates_from[idx::p], rates_from[idx::r],
                                 x[idx::phi], x[idx::psi]);
  x[idx::x] += dt * g.x;
  x[idx::y] += dt * g.y;
  x[idx::phi] += dt * g.phi;
  x[idx::psi] += dt * g.psi;
}

/// Rudder and shaft advanced by RK4 of their own lag equations.
inline void advance_actuators(Vector& x, const Vector& u, const ShipParams& p, double dt) {
  const ControlInput cmd(u[cidx::delta_c], u[cidx::n_c]);
  auto f = [&](double d, double n) { return actuator_rates(d, n, cmd, p); };
  const double d0 = x[idx::delta], n0 = x[idx::n];
  const auto k1 = f(d0, n0);
  const auto k2 = f(d0 + 0.5 * dt * k1.delta_dot, n0 + 0.5 * dt * k1.n_dot);
  const auto k3 = f(d0 + 0.5 * dt * k2.delta_dot, n0 + 0.5 * dt * k2.n_dot);
  const auto k4 = f(d0 + dt * k3.delta_dot, n0 + dt * k3.n_dot);
  x[idx::delta] = std::clamp(d0 + dt / 6 * (k1.delta_dot + 2 * k2.delta_dot + 2 * k3.delta_dot + k4.delta_dot),
                             -p.delta_max(), p.delta_max());
  x[idx::n] = n0 + dt / 6 * (k1.n_dot + 2 * k2.n_dot + 2 * k3.n_dot + k4.n_dot);
}

/// Velocities and rates held; pose advanced by the kinematics; actuators lag
/// toward the command.
class ConstantVelocityModel final : public MemorylessModel {
 public:
  ConstantVelocityModel(ShipParams actuator_params, double dt) : p_(std::move(actuator_params)), dt_(dt) {}

  Vector propagate(const Vector& x, const Vector& u) const override {
    Vector next = x;
    advance_pose_euler(next, x, dt_);
    advance_actuators(next, u, p_, dt_);
    return next;
  }

 private:
  ShipParams p_;
  double dt_;
};

/// One RK4 step of the ship equations with fixed parameters (true ones for
/// the oracle, nominal ones for the base model).
class ShipProcessModel final : public MemorylessModel {
 public:
  ShipProcessModel(ShipParams params, double dt) : p_(std::move(params)), dt_(dt) {}

  Vector propagate(const Vector& x, const Vector& u) const override {
    return step(ShipState(x), ControlInput(u), p_, dt_);
  }

 private:
  ShipParams p_;
  double dt_;
};

inline std::shared_ptr<ProcessModel> cv_process_model(const ShipParams& actuator_params, double dt) {
  return std::make_shared<ConstantVelocityModel>(actuator_params, dt);
}

inline std::shared_ptr<ProcessModel> oracle_process_model(const ShipParams& true_params, double dt) {
  return std::make_shared<ShipProcessModel>(true_params, dt);
}

inline std::shared_ptr<ProcessModel> base_process_model(const ShipParams& base, double dt) {
  return std::make_shared<ShipProcessModel>(base, dt);
}

/// Overwrites the pose of `next` by midpoint integration from `prev`:
/// pose += dt/2 * (g(vel_prev, pose_prev) + g(vel_next, pose_prev)).
inline void midpoint_pose(const Vector& prev, Vector& next, double dt) {
  const auto a = kinematic_rates(prev[idx::u], prev[idx::v], prev[idx::p], prev[idx::r], prev[idx::phi],
                                 prev[idx::psi]);
  const auto b = kinematic_rates(next[idx::u], next[idx::v], next[idx::p], next[idx::r], prev[idx::phi],
                                 prev[idx::psi]);
  next[idx::x] = prev[idx::x] + 0.5 * dt * (a.x + b.x);
  next[idx::y] = prev[idx::y] + 0.5 * dt * (a.y + b.y);
  next[idx::phi] = prev[idx::phi] + 0.5 * dt * (a.phi + b.phi);
  next[idx::psi] = prev[idx::psi] + 0.5 * dt * (a.psi + b.psi);
}

/// Next-state predictions for many histories sharing one control sequence.
template <typename History>
std::vector<Vector> predict_next_batch(const SequenceModel& m, const std::vector<const History*>& states,
                                       const History& controls) {
  std::vector<Vector> out;
  out.reserve(states.size());
  for (const auto* s : states) out.push_back(predict_next(m, *s, controls));
  return out;
}

/// Sigma-point prediction through the learned dynamics model, each sigma
/// index conditioned on its own trajectory.
class FoundationProcessModel final : public ProcessModel {
 public:
  FoundationProcessModel(std::shared_ptr<const SequenceModel> model, bool integrator, double dt)
      : model_(std::move(model)), integrator_(integrator), dt_(dt) {
    if (model_->kind != "dynamics") throw Error(ErrorCode::ConfigError, "FM-UKF needs a dynamics model");
  }

  bool history_conditioned() const override { return true; }

  std::vector<Vector> predict(const SigmaHistory& history) const override {
    std::vector<const std::deque<Vector>*> trajs;
    for (int n = 0; n < history.num_indices(); ++n) trajs.push_back(&history.trajectory(n));
    auto out = predict_next_batch(*model_, trajs, history.controls());
    if (integrator_) {
      for (std::size_t n = 0; n < out.size(); ++n) midpoint_pose(trajs[n]->back(), out[n], dt_);
    }
    return out;
  }

  bool integrator() const { return integrator_; }

 private:
  std::shared_ptr<const SequenceModel> model_;
  bool integrator_;
  double dt_;
};

inline std::shared_ptr<ProcessModel> fm_process_model(std::shared_ptr<const SequenceModel> model, bool integrator,
                                                      double dt) {
  return std::make_shared<FoundationProcessModel>(std::move(model), integrator, dt);
}

inline MeasurementModel measurement_model(const SensorConfig& s) {
  return {[s](const Vector& x) { return h(x, s); }, s.noise_cov(), s.angle_channels()};
}

/// Prior spread for components the sensor does not see.
struct InitPolicy {
  double observed_variance_factor = 10.0;
  Vector unobserved_std = (Vector(kStateDim) << 1.5, 0.3, 0.01, 0.01, 10.0, 10.0, 0.05, 0.5, 0.05, 0.2).finished();
  ExcitationConfig nominal;
};

/// Mean: the first measurement on observed components, nominal cruise values
/// elsewhere. Covariance: diagonal, 10x measurement variance where observed.
inline GaussianBelief initial_belief(const Vector& y0, const SensorConfig& s, const InitPolicy& policy = {}) {
  GaussianBelief b;
  b.mean = Vector(cruise_state(policy.nominal));
  Vector var = policy.unobserved_std.array().square();
  for (int c = 0; c < s.size(); ++c) {
    const int i = s.observed_indices[static_cast<std::size_t>(c)];
    b.mean[i] = y0[c];
    var[i] = policy.observed_variance_factor * s.noise_std[c] * s.noise_std[c];
  }
  b.cov = var.asDiagonal();
  return b;
}

/// Default diagonal process-noise shape; the evaluated Q is a scalar
/// multiple of it.
inline Vector base_process_noise_std() {
  return (Vector(kStateDim) << 0.02, 0.01, 2e-4, 2e-4, 0.5, 0.5, 2e-3, 2e-3, 2e-3, 2e-3).finished();
}

inline Matrix process_noise(double scale, const Vector& std_dev = base_process_noise_std()) {
  return (scale * std_dev.array().square()).matrix().asDiagonal();
}

/// Everything needed to instantiate any estimator on one trajectory.
struct EstimatorContext {
  ShipParams base;
  double dt = 1.0;
  Matrix Q = process_noise(1.0);
  InitPolicy init;
  std::shared_ptr<const SequenceModel> fm;
  std::shared_ptr<const SequenceModel> e2e;
};

struct EstimateResult {
  std::vector<Vector> estimates;
  bool ok = true;
  std::string error;
};

/// Measurements for one trajectory; every estimator consumes this same draw.
inline std::vector<Vector> synthesize_measurements(const std::vector<Vector>& states, const SensorConfig& s,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> ys;
  ys.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) ys.push_back(measure(states[k], s, rng, static_cast<int>(k)).values);
  return ys;
}

/// UKF run over given measurements; estimate k uses y_0..y_k.
inline std::vector<Vector> run_ukf(std::shared_ptr<const ProcessModel> model, const Matrix& Q,
                                   const std::vector<Vector>& ys, const std::vector<Vector>& controls,
                                   const SensorConfig& s, const InitPolicy& init,
                                   const std::function<void(const GaussianBelief&)>& observe = {}) {
  UnscentedKalmanFilter ukf(model, Q, 192);
  const auto mm = measurement_model(s);
  std::vector<Vector> out;
  out.reserve(ys.size());
  GaussianBelief b = initial_belief(ys.front(), s, init);
  if (observe) observe(b);
  out.push_back(b.mean);
  for (std::size_t k = 1; k < ys.size(); ++k) {
    b = ukf.update(ukf.predict(b, controls[k - 1]), ys[k], mm);
    if (!b.mean.allFinite() || !b.cov.allFinite()) throw Error(ErrorCode::ModelFailure, "non-finite belief");
    if (observe) observe(b);
    out.push_back(b.mean);
  }
  return out;
}

/// Runs one estimator on precomputed measurements. `true_params` is needed
/// only for the oracle. Failures are reported, not thrown.
inline EstimateResult run_estimator(EstimatorKind kind, const EstimatorContext& ctx, const ShipParams* true_params,
                                    const std::vector<Vector>& ys, const std::vector<Vector>& controls,
                                    const SensorConfig& s) {
  EstimateResult r;
  try {
    switch (kind) {
      case EstimatorKind::CvUkf:
        r.estimates = run_ukf(cv_process_model(ctx.base, ctx.dt), ctx.Q, ys, controls, s, ctx.init);
        break;
      case EstimatorKind::BaseUkf:
        r.estimates = run_ukf(base_process_model(ctx.base, ctx.dt), ctx.Q, ys, controls, s, ctx.init);
        break;
      case EstimatorKind::OracleUkf:
        if (true_params == nullptr) throw Error(ErrorCode::ConfigError, "oracle needs the true parameters");
        r.estimates = run_ukf(oracle_process_model(*true_params, ctx.dt), ctx.Q, ys, controls, s, ctx.init);
        break;
      case EstimatorKind::FmUkf:
      case EstimatorKind::FmUkfIntegrator:
        if (!ctx.fm) throw Error(ErrorCode::ConfigError, "FM-UKF needs a dynamics model");
        r.estimates = run_ukf(fm_process_model(ctx.fm, kind == EstimatorKind::FmUkfIntegrator, ctx.dt), ctx.Q, ys,
                              controls, s, ctx.init);
        break;
      case EstimatorKind::End2End:
        if (!ctx.e2e) throw Error(ErrorCode::ConfigError, "End2End needs an estimator model");
        r.estimates = e2e_estimate(*ctx.e2e, ys, controls, s);
        break;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    r.ok = false;
    r.error = e.what();
    r.estimates.clear();
  }
  return r;
}

}  // namespace fmukf
