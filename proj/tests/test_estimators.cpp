#include "fmukf/dataset.hpp"
#include "fmukf/estimators.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace fmukf;
using fmukf::testing::base_params;

namespace {

Vector state_vec(std::initializer_list<double> v) {
  Vector x(kStateDim);
  int i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

Trajectory ship_trajectory(const ShipParams& p, std::uint64_t seed, int length = 192) {
  ExcitationConfig ex;
  return rollout(p, sample_initial_state(ex, seed), pink_noise_commands(p, ex, length, seed), 1.0);
}

std::vector<Vector> as_vectors(const std::vector<ShipState>& v) { return {v.begin(), v.end()}; }
std::vector<Vector> as_vectors(const std::vector<ControlInput>& v) { return {v.begin(), v.end()}; }

ShipParams far_instance() {
  ShipParams p = base_params();
  p.m *= 1.25;
  p.Iz *= 0.75;
  p.Yv *= 1.3;
  p.Nr *= 0.7;
  p.instance_id = 99;
  return p;
}

NormStats unit_ship_stats() {
  NormStats s;
  s.layout = FeatureLayout::ship();
  s.state_mean = Vector::Zero(12);
  s.state_std = Vector::Ones(12);
  s.control_mean = Vector::Zero(2);
  s.control_std = Vector::Ones(2);
  return s;
}

nn::SeqModelConfig small_model() {
  auto c = nn::SeqModelConfig::desk(0, 0);
  c.embed_dim = 16;
  c.n_heads = 2;
  c.mlp_width = 32;
  c.residual_block_width = 32;
  return c;
}

}  // namespace

TEST(CvModel, ZeroVelocityOnlyMovesActuators) {
  ConstantVelocityModel cv(base_params(), 1.0);
  const Vector x = state_vec({0, 0, 0, 0, 5, -3, 0.01, 0.4, 0.0, 1.0});
  const Vector u = (Vector(2) << 0.1, 1.2).finished();
  const Vector next = cv.propagate(x, u);
  EXPECT_EQ(next.head(8), x.head(8));
  EXPECT_GT(next[idx::delta], 0.0);
  EXPECT_GT(next[idx::n], 1.0);
  const Vector hold = (Vector(2) << 0.0, 1.0).finished();
  EXPECT_EQ(cv.propagate(x, hold), x);
}

TEST(CvModel, KinematicsAdvancePose) {
  ConstantVelocityModel cv(base_params(), 1.0);
  const Vector cmd = (Vector(2) << 0.0, 1.0).finished();
  const Vector straight = cv.propagate(state_vec({2, 0, 0, 0, 0, 0, 0, 0, 0, 1}), cmd);
  EXPECT_DOUBLE_EQ(straight[idx::x], 2.0);
  EXPECT_DOUBLE_EQ(straight[idx::y], 0.0);
  const double r = 0.01, phi = 0.1;
  const Vector turn = cv.propagate(state_vec({0, 0, 0, r, 0, 0, phi, 0.3, 0, 1}), cmd);
  EXPECT_DOUBLE_EQ(turn[idx::psi], 0.3 + r * std::cos(phi));
  EXPECT_EQ(turn[idx::r], r);
}

TEST(ShipModels, OracleReproducesTheGeneratingModel) {
  const ShipParams p = far_instance();
  const auto t = ship_trajectory(p, 1, 20);
  auto oracle = oracle_process_model(p, 1.0);
  auto base = base_process_model(base_params(), 1.0);
  const auto& om = dynamic_cast<const MemorylessModel&>(*oracle);
  const auto& bm = dynamic_cast<const MemorylessModel&>(*base);
  double base_err = 0;
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    EXPECT_EQ(om.propagate(t.states[k], t.controls[k]), Vector(t.states[k + 1]));
    base_err += (bm.propagate(t.states[k], t.controls[k]) - Vector(t.states[k + 1])).norm();
  }
  EXPECT_GT(base_err, 1e-3);
  const auto& same = dynamic_cast<const MemorylessModel&>(*oracle_process_model(base_params(), 1.0));
  EXPECT_EQ(same.propagate(t.states[3], t.controls[3]), bm.propagate(t.states[3], t.controls[3]));
}

TEST(Integrator, EqualVelocitiesReduceToEuler) {
  const Vector prev = state_vec({3, 0.2, 0.001, 0.01, 10, 20, 0.02, 0.5, 0, 1});
  Vector next = prev;
  next[idx::x] = next[idx::y] = 1e6;
  midpoint_pose(prev, next, 1.0);
  Vector euler = prev;
  advance_pose_euler(euler, prev, 1.0);
  EXPECT_NEAR((next.segment(idx::x, 4) - euler.segment(idx::x, 4)).norm(), 0.0, 1e-12);
}

TEST(Integrator, ThirdOrderLocalErrorWithExactVelocities) {
  // Constant body velocities with a steady turn; the exact pose comes from a
  // fine-step integration of the kinematics.
  const double u = 5, v = 0.3, r = 0.05;
  auto exact = [&](double dt) {
    Vector x = state_vec({u, v, 0, r, 0, 0, 0, 0.2, 0, 1});
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double h = dt / n;
      const auto g1 = kinematic_rates(u, v, 0, r, x[idx::phi], x[idx::psi]);
      const auto g2 = kinematic_rates(u, v, 0, r, x[idx::phi], x[idx::psi] + 0.5 * h * g1.psi);
      x[idx::x] += h * g2.x;
      x[idx::y] += h * g2.y;
      x[idx::psi] += h * g2.psi;
    }
    return x;
  };
  auto err = [&](double dt, bool mid) {
    const Vector prev = state_vec({u, v, 0, r, 0, 0, 0, 0.2, 0, 1});
    Vector next = prev;
    if (mid) {
      // The velocity predictor is perfect; the heading used for the second
      // rate sample is the exact one at the end of the step.
      Vector end = exact(dt);
      Vector start = prev;
      const auto a = kinematic_rates(u, v, 0, r, 0, start[idx::psi]);
      const auto b = kinematic_rates(u, v, 0, r, 0, end[idx::psi]);
      next[idx::x] = start[idx::x] + 0.5 * dt * (a.x + b.x);
      next[idx::y] = start[idx::y] + 0.5 * dt * (a.y + b.y);
    } else {
      advance_pose_euler(next, prev, dt);
    }
    const Vector ex = exact(dt);
    return std::hypot(next[idx::x] - ex[idx::x], next[idx::y] - ex[idx::y]);
  };
  const double mid_ratio = err(1.0, true) / err(0.5, true);
  const double euler_ratio = err(1.0, false) / err(0.5, false);
  EXPECT_NEAR(std::log2(mid_ratio), 3.0, 0.3);
  EXPECT_NEAR(std::log2(euler_ratio), 2.0, 0.3);
}

TEST(FoundationModel, IntegratorOnlyOverwritesPose) {
  auto model = std::make_shared<const SequenceModel>(make_dynamics_model(unit_ship_stats(), small_model(), 3));
  FoundationProcessModel raw(model, false, 1.0), integ(model, true, 1.0);
  SigmaHistory hist(192);
  GaussianBelief b{Vector(cruise_state({})), Matrix::Identity(kStateDim, kStateDim) * 1e-4};
  const Vector u = (Vector(2) << 0.0, 1.3).finished();
  for (int k = 0; k < 3; ++k) hist.append(sigma_points(b), u);
  const auto a = raw.predict(hist);
  const auto c = integ.predict(hist);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(a[n], predict_next(*model, hist.trajectory(static_cast<int>(n)), hist.controls()));
    for (int i : {idx::u, idx::v, idx::p, idx::r, idx::delta, idx::n}) EXPECT_EQ(a[n][i], c[n][i]);
    Vector expect = a[n];
    midpoint_pose(hist.trajectory(static_cast<int>(n)).back(), expect, 1.0);
    EXPECT_EQ(c[n], expect);
  }
}

TEST(FoundationModel, BatchedEqualsSequential) {
  auto model = make_dynamics_model(unit_ship_stats(), small_model(), 4);
  std::vector<std::deque<Vector>> histories(20);
  std::deque<Vector> controls;
  Rng rng(5);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 37; ++k) {
    for (auto& h : histories) h.push_back(Vector(cruise_state({})) + 0.01 * Vector::NullaryExpr(kStateDim, [&] { return nd(rng); }));
    controls.push_back((Vector(2) << 0.01 * k, 1.3).finished());
  }
  std::vector<const std::deque<Vector>*> ptrs;
  for (const auto& h : histories) ptrs.push_back(&h);
  const auto batch = predict_next_batch(model, ptrs, controls);
  for (std::size_t n = 0; n < histories.size(); ++n) {
    EXPECT_LT((batch[n] - predict_next(model, histories[n], controls)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(End2End, SlotEncodingMarksUnobservedChannels) {
  const auto stats = unit_ship_stats();
  const auto slots = SlotLayout::ship();
  const Vector x = state_vec({8, 0.3, 0.001, 0.002, 50, 60, 0.02, 1.0, 0, 1.3});
  const Vector u = (Vector(2) << 0.0, 1.3).finished();
  const auto h1 = make_sensor(SensorId::H1), h2 = make_sensor(SensorId::H2);
  const Vector r1 = e2e_input_row(h(x, h1), h1, u, stats, slots);
  const Vector r2 = e2e_input_row(h(x, h2), h2, u, stats, slots);
  ASSERT_EQ(r1.size(), 20);
  const int mask = slots.value_width(stats.layout);
  EXPECT_EQ(mask, 10);
  EXPECT_EQ(r1.segment(mask, 8), Vector::Ones(8));
  EXPECT_EQ(r2[mask + 0], 0.0);
  EXPECT_EQ(r2[mask + 1], 0.0);
  EXPECT_EQ(r2.segment(mask + 2, 6), Vector::Ones(6));
  EXPECT_EQ(r2[0], 0.0);
  EXPECT_EQ(r2[1], 0.0);
  EXPECT_EQ(r1[0], 8.0);
  EXPECT_EQ(r1[1], 0.3);
  EXPECT_EQ(r1.tail(2), r2.tail(2));

  SensorConfig odd = h1;
  odd.observed_indices = {idx::delta};
  odd.noise_std = Vector::Ones(1);
  EXPECT_THROW(e2e_input_row(Vector::Zero(1), odd, u, stats, slots), Error);
}

TEST(End2End, UntrainedModelGivesFiniteEstimates) {
  const auto model = make_e2e_model(unit_ship_stats(), SlotLayout::ship(), small_model(), 6);
  const auto t = ship_trajectory(base_params(), 2, 9);
  for (auto id : {SensorId::H1, SensorId::H2}) {
    const auto s = make_sensor(id);
    const auto ys = synthesize_measurements(as_vectors(t.states), s, 1);
    const auto est = e2e_estimate(model, ys, as_vectors(t.controls), s);
    ASSERT_EQ(est.size(), 9u);
    for (const auto& e : est) {
      EXPECT_EQ(e.size(), kStateDim);
      EXPECT_TRUE(e.allFinite());
    }
  }
}

TEST(RunEstimator, NearNoiselessOracleTracksTruth) {
  const ShipParams p = far_instance();
  const auto t = ship_trajectory(p, 3);
  SensorConfig s = make_sensor(SensorId::H1);
  s.noise_std.setConstant(1e-7);
  EstimatorContext ctx;
  ctx.base = base_params();
  ctx.Q = process_noise(1e-10);
  const auto ys = synthesize_measurements(as_vectors(t.states), s, 4);
  const auto r = run_estimator(EstimatorKind::OracleUkf, ctx, &p, ys, as_vectors(t.controls), s);
  ASSERT_TRUE(r.ok) << r.error;
  for (int j = 0; j < kStateDim; ++j) {
    double mae = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      double d = r.estimates[k][j] - t.states[k][j];
      if (is_angle_index(j)) d = wrap_angle(d);
      mae += std::abs(d) / static_cast<double>(t.size());
    }
    EXPECT_LT(mae, 1e-3) << kStateNames[static_cast<std::size_t>(j)];
  }
}

TEST(RunEstimator, DeterministicAndCausal) {
  const ShipParams p = far_instance();
  const auto t = ship_trajectory(p, 5, 60);
  const auto s = make_sensor(SensorId::H2);
  EstimatorContext ctx;
  ctx.base = base_params();
  ctx.e2e = std::make_shared<const SequenceModel>(make_e2e_model(unit_ship_stats(), SlotLayout::ship(), small_model(), 7));
  const auto xs = as_vectors(t.states);
  const auto us = as_vectors(t.controls);
  const auto ys = synthesize_measurements(xs, s, 6);
  EXPECT_EQ(ys, synthesize_measurements(xs, s, 6));
  auto altered = ys;
  for (std::size_t k = 40; k < altered.size(); ++k) altered[k].array() += 0.5;
  for (auto kind : {EstimatorKind::BaseUkf, EstimatorKind::CvUkf, EstimatorKind::End2End}) {
    const auto a = run_estimator(kind, ctx, &p, ys, us, s);
    const auto b = run_estimator(kind, ctx, &p, ys, us, s);
    const auto c = run_estimator(kind, ctx, &p, altered, us, s);
    ASSERT_TRUE(a.ok && c.ok) << a.error << c.error;
    EXPECT_EQ(a.estimates, b.estimates) << to_string(kind);
    for (std::size_t k = 0; k < 40; ++k) EXPECT_EQ(a.estimates[k], c.estimates[k]) << to_string(kind) << " step " << k;
    EXPECT_NE(a.estimates[45], c.estimates[45]) << to_string(kind);
  }
}

TEST(RunEstimator, MissingModelIsAConfigError) {
  EstimatorContext ctx;
  ctx.base = base_params();
  const auto s = make_sensor(SensorId::H1);
  std::vector<Vector> ys(3, Vector::Zero(8)), us(3, Vector::Zero(2));
  EXPECT_THROW(run_estimator(EstimatorKind::FmUkf, ctx, nullptr, ys, us, s), Error);
  EXPECT_THROW(run_estimator(EstimatorKind::OracleUkf, ctx, nullptr, ys, us, s), Error);
  EXPECT_EQ(estimator_kind_from_string("FM_UKF_INTEGRATOR"), EstimatorKind::FmUkfIntegrator);
  EXPECT_THROW(estimator_kind_from_string("EKF"), Error);
}

TEST(InitPolicy, ObservedComponentsFromFirstMeasurement) {
  const auto s = make_sensor(SensorId::H2);
  const Vector y = (Vector(6) << 0.001, 0.002, 10, 20, 0.01, 0.5).finished();
  const auto b = initial_belief(y, s);
  EXPECT_EQ(b.mean[idx::x], 10);
  EXPECT_EQ(b.mean[idx::psi], 0.5);
  EXPECT_EQ(b.mean[idx::u], ExcitationConfig{}.cruise_speed);
  EXPECT_DOUBLE_EQ(b.cov(idx::x, idx::x), 10.0 * 1.0);
  EXPECT_DOUBLE_EQ(b.cov(idx::u, idx::u), 1.5 * 1.5);
}
