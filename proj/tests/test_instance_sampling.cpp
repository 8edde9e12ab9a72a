#include "fmukf/instance_sampling.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace fmukf;
using fmukf::testing::base_param_file;
using fmukf::testing::base_params;

namespace {

const std::vector<std::string>& varied() { return base_param_file().variation_params; }

DsimConfig small_dsim(int n = 128, std::uint64_t seed = 1) {
  DsimConfig cfg;
  cfg.n_samples = n;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(SampleCandidate, ScalesOnlyVariationParameters) {
  const auto& base = base_params();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto c = sample_candidate(base, varied(), seed);
    for (const auto& [name, member] : kShipParamFields) {
      const bool is_varied = std::find(varied().begin(), varied().end(), name) != varied().end();
      if (!is_varied) {
        EXPECT_EQ(c.*member, base.*member) << name;
        continue;
      }
      const double ratio = c.*member / base.*member;
      EXPECT_GE(ratio, kVariationLow - 1e-12) << name;
      EXPECT_LE(ratio, kVariationHigh + 1e-12) << name;
    }
  }
  EXPECT_EQ(varied().size(), 11u);
}

TEST(SampleCandidate, DeterministicPerSeed) {
  const auto a = sample_candidate(base_params(), varied(), 17);
  const auto b = sample_candidate(base_params(), varied(), 17);
  EXPECT_EQ(params_to_json(a), params_to_json(b));
}

TEST(SampleCandidate, FactorIsUniform) {
  const auto& base = base_params();
  std::vector<double> factors;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    factors.push_back(sample_candidate(base, {"m"}, seed).m / base.m);
  }
  std::sort(factors.begin(), factors.end());
  double ks = 0.0;
  const auto n = static_cast<double>(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double cdf = (factors[i] - kVariationLow) / (kVariationHigh - kVariationLow);
    ks = std::max({ks, std::abs(cdf - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - cdf)});
  }
  EXPECT_LT(ks, 0.02);
}

TEST(Dsim, ZeroForIdenticalParameters) {
  const auto sampler = DsimSampler::build(base_params(), small_dsim());
  const auto c = sample_candidate(base_params(), varied(), 3);
  EXPECT_EQ(dsim(c, c, sampler), 0.0);
  EXPECT_EQ(dsim(base_params(), base_params(), base_params(), small_dsim()), 0.0);
}

TEST(Dsim, SymmetricUnderSharedDraws) {
  const auto sampler = DsimSampler::build(base_params(), small_dsim());
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = sample_candidate(base_params(), varied(), 10 + s);
    const auto b = sample_candidate(base_params(), varied(), 20 + s);
    const double ab = dsim(a, b, sampler);
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, dsim(b, a, sampler), 1e-12);
  }
}

TEST(Dsim, MonteCarloEstimateConverges) {
  const auto a = sample_candidate(base_params(), varied(), 101);
  const auto b = sample_candidate(base_params(), varied(), 202);
  const int n = 200;
  const auto oracle = dsim_estimate(a, b, DsimSampler::build(base_params(), small_dsim(10 * n, 9)));
  const auto single = dsim_estimate(a, b, DsimSampler::build(base_params(), small_dsim(n, 9)));
  const auto doubled = dsim_estimate(a, b, DsimSampler::build(base_params(), small_dsim(2 * n, 9)));
  EXPECT_LT(std::abs(single.squared - oracle.squared), 2.0 * single.std_error_squared);
  EXPECT_LT(std::abs(doubled.squared - oracle.squared), 2.0 * doubled.std_error_squared);
  EXPECT_LT(std::abs(doubled.squared - single.squared), 2.0 * single.std_error_squared);
}

TEST(Dsim, DegenerateNormalizerDetected) {
  std::vector<ShipState> states(4, ShipState::Zero());
  std::vector<ControlInput> inputs(4, ControlInput::Zero());
  try {
    DsimSampler::from_draws(base_params(), states, inputs, 1.0);
    FAIL() << "expected DegenerateNormalizer";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateNormalizer);
  }
}

TEST(Dsim, RequiresEnoughSamples) {
  EXPECT_THROW(DsimSampler::build(base_params(), small_dsim(50)), Error);
}

TEST(BuildPool, TwoSeparatedCandidatesAreBothKept) {
  auto a = base_params();
  auto b = base_params();
  b.m *= 1.25;
  b.Nr *= 0.75;
  const auto sampler = DsimSampler::build(base_params(), small_dsim());
  const auto f = filter_by_dissimilarity({a, b}, 2, sampler);
  EXPECT_TRUE(f.retained[0]);
  EXPECT_TRUE(f.retained[1]);
}

TEST(BuildPool, RejectsTooSmallTarget) {
  PoolConfig cfg;
  cfg.target_count = 1;
  EXPECT_THROW(build_pool(base_params(), varied(), cfg), Error);
}

TEST(BuildPool, ExhaustedBudgetIsReported) {
  PoolConfig cfg;
  cfg.target_count = 10;
  cfg.candidate_budget_factor = 1;  // 10 draws cannot yield 20 stable candidates
  cfg.dsim = small_dsim();
  try {
    build_pool(base_params(), varied(), cfg);
    FAIL() << "expected PoolExhausted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PoolExhausted);
  }
}

class DeskPool : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    PoolConfig cfg;
    cfg.target_count = 20;
    cfg.seed = 2024;
    cfg.dsim = small_dsim(128, 5);
    result_ = new PoolBuildResult(build_pool(base_params(), varied(), cfg));
    config_ = new PoolConfig(cfg);
  }
  static void TearDownTestSuite() {
    delete result_;
    delete config_;
  }
  static PoolBuildResult* result_;
  static PoolConfig* config_;
};

PoolBuildResult* DeskPool::result_ = nullptr;
PoolConfig* DeskPool::config_ = nullptr;

TEST_F(DeskPool, RetainsTopHalfByNearestNeighbourDissimilarity) {
  const auto& r = *result_;
  ASSERT_EQ(r.stable.size(), 40u);
  ASSERT_EQ(r.pool.instances.size(), 20u);
  // Brute-force recomputation of every pairwise dsim.
  DsimConfig dcfg = config_->dsim;
  dcfg.excitation = config_->excitation;
  const auto sampler = DsimSampler::build(base_params(), dcfg);
  std::vector<double> nn(r.stable.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < r.stable.size(); ++i) {
    for (std::size_t j = 0; j < r.stable.size(); ++j) {
      if (i != j) nn[i] = std::min(nn[i], dsim(r.stable[i], r.stable[j], sampler));
    }
  }
  double min_kept = std::numeric_limits<double>::infinity(), max_dropped = 0.0;
  for (std::size_t i = 0; i < nn.size(); ++i) {
    EXPECT_NEAR(nn[i], r.filter.nn_scores[i], 1e-12);
    if (r.filter.retained[i]) {
      min_kept = std::min(min_kept, nn[i]);
    } else {
      max_dropped = std::max(max_dropped, nn[i]);
    }
  }
  EXPECT_GE(min_kept, max_dropped);
}

TEST_F(DeskPool, AllInstancesStableAndSorted) {
  const auto probes = stability_probes(base_params(), *config_);
  const auto& inst = result_->pool.instances;
  for (std::size_t i = 0; i < inst.size(); ++i) {
    EXPECT_TRUE(is_stable(inst[i], cruise_state(config_->excitation), probes, 1.0, config_->probe_length));
    if (i > 0) EXPECT_LT(inst[i - 1].instance_id, inst[i].instance_id);
  }
}

TEST_F(DeskPool, FilteringDoesNotShrinkMinimumSeparation) {
  const auto& m = result_->filter.dsim_matrix;
  auto min_offdiag = [](const Eigen::MatrixXd& d) {
    double v = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      for (Eigen::Index j = 0; j < d.cols(); ++j)
        if (i != j) v = std::min(v, d(i, j));
    return v;
  };
  EXPECT_GE(min_offdiag(result_->pool.dsim_matrix), min_offdiag(m));
  EXPECT_TRUE(m.isApprox(m.transpose()));
  EXPECT_GE(m.minCoeff(), 0.0);
}

TEST_F(DeskPool, ReproducibleAndSerialisable) {
  const auto again = build_pool(base_params(), varied(), *config_);
  EXPECT_EQ(to_json(again.pool), to_json(result_->pool));
  const auto restored = pool_from_json(to_json(result_->pool));
  EXPECT_EQ(to_json(restored), to_json(result_->pool));
}
