#include "fmukf/sensors.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fmukf;

namespace {
Vector known_state() {
  Vector s(kStateDim);
  s << 8.0, -0.2, 0.001, 0.003, 120.0, -35.0, 0.02, 0.7, 0.05, 1.3;
  return s;
}
}  // namespace

TEST(Sensors, H1SelectsAllButActuators) {
  const auto cfg = make_sensor(SensorId::H1);
  const auto y = h(known_state(), cfg);
  ASSERT_EQ(y.size(), 8);
  const Vector s = known_state();
  for (int c = 0; c < 8; ++c) EXPECT_EQ(y[c], s[c]);
}

TEST(Sensors, H2DropsSurgeAndSway) {
  const auto cfg = make_sensor(SensorId::H2);
  EXPECT_EQ(h(known_state(), cfg).size(), 6);
  EXPECT_EQ(cfg.observed_indices, (std::vector<int>{idx::p, idx::r, idx::x, idx::y, idx::phi, idx::psi}));
}

TEST(Sensors, HeadingIsWrapped) {
  Vector s = known_state();
  s[idx::psi] = 2.0 * std::numbers::pi + 0.1;
  const auto y = h(s, make_sensor(SensorId::H1));
  EXPECT_NEAR(y[7], 0.1, 1e-12);
}

TEST(Sensors, ZeroNoiseEqualsNoiseFreeMeasurement) {
  auto cfg = make_sensor(SensorId::H1);
  cfg.noise_std.setZero();
  Rng rng(1);
  EXPECT_EQ(measure(known_state(), cfg, rng).values, h(known_state(), cfg));
}

TEST(Sensors, EmpiricalNoiseStdMatchesConfig) {
  const auto cfg = make_sensor(SensorId::H1);
  Rng rng(2);
  const int n = 100000;
  const Vector clean = h(known_state(), cfg);
  Vector sum = Vector::Zero(cfg.size()), sq = Vector::Zero(cfg.size());
  for (int i = 0; i < n; ++i) {
    Vector e = measure(known_state(), cfg, rng).values - clean;
    sum += e;
    sq += e.cwiseProduct(e);
  }
  for (int c = 0; c < cfg.size(); ++c) {
    const double mean = sum[c] / n;
    const double sd = std::sqrt(sq[c] / n - mean * mean);
    EXPECT_NEAR(sd / cfg.noise_std[c], 1.0, 0.02) << c;
  }
}

TEST(Sensors, SeedsChangeNoiseOnly) {
  const auto cfg = make_sensor(SensorId::H2);
  Rng a(10), b(11);
  const auto ya = measure(known_state(), cfg, a);
  const auto yb = measure(known_state(), cfg, b);
  EXPECT_NE(ya.values, yb.values);
  EXPECT_EQ(h(known_state(), cfg), h(known_state(), cfg));
}

TEST(Sensors, JsonOverridesAndValidation) {
  const auto cfg = sensor_from_json({{"id", "H2"}, {"noise_std", {0.1, 0.1, 2.0, 2.0, 0.02, 0.02}}});
  EXPECT_EQ(cfg.id, SensorId::H2);
  EXPECT_EQ(cfg.noise_std[2], 2.0);
  EXPECT_THROW(sensor_from_json({{"id", "H3"}}), Error);
  EXPECT_THROW(sensor_from_json({{"id", "H1"}, {"noise_std", {1.0}}}), Error);
  EXPECT_THROW(sensor_from_json({{"id", "H2"}, {"noise_std", {0.1, 0.0, 2.0, 2.0, 0.02, 0.02}}}), Error);
}
