#pragma once

#include "fmukf/error.hpp"
#include "fmukf/excitation.hpp"
#include "fmukf/parallel.hpp"
#include "fmukf/rng.hpp"
#include "fmukf/ship_dynamics.hpp"
#include "fmukf/ship_params.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace fmukf {

inline constexpr double kVariationLow = 0.7;
inline constexpr double kVariationHigh = 1.3;

/// Scales each named parameter of `base` by an independent U[0.7, 1.3] factor.
inline ShipParams sample_candidate(const ShipParams& base,
                                   const std::vector<std::string>& variation_params,
                                   std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> factor(kVariationLow, kVariationHigh);
  ShipParams out = base;
  for (const auto& name : variation_params) {
    double* value = find_param(out, name);
    if (!value) throw Error(ErrorCode::InvalidParams, "unknown variation parameter " + name);
    *value *= factor(rng);
  }
  return out;
}

struct DsimConfig {
  int n_samples = 256;
  int n_rollouts = 8;
  int rollout_length = 384;
  int burn_in = 16;
  double dt = 1.0;
  std::uint64_t seed = 0;
  ExcitationConfig excitation;
};

/// Shared (state, input) draws for the dissimilarity expectation, taken from
/// base-hull rollouts under pink-noise commands, together with the per-dimension
/// normaliser E[|f_base(x,u) - x|_d^2].
struct DsimSampler {
  std::vector<ShipState> states;
  std::vector<ControlInput> inputs;
  ShipState normalizer = ShipState::Zero();
  double dt = 1.0;

  static DsimSampler from_draws(const ShipParams& base, std::vector<ShipState> states,
                                std::vector<ControlInput> inputs, double dt) {
    if (states.size() != inputs.size() || states.empty()) {
      throw Error(ErrorCode::ConfigError, "dsim draws must be non-empty and aligned");
    }
    DsimSampler s;
    s.states = std::move(states);
    s.inputs = std::move(inputs);
    s.dt = dt;
    for (std::size_t i = 0; i < s.states.size(); ++i) {
      const ShipState d = step(s.states[i], s.inputs[i], base, dt) - s.states[i];
      s.normalizer += d.cwiseProduct(d);
    }
    s.normalizer /= static_cast<double>(s.states.size());
    for (int d = 0; d < kStateDim; ++d) {
      if (!(s.normalizer[d] > 1e-24)) {
        throw Error(ErrorCode::DegenerateNormalizer,
                    "base model never moves state dimension " + std::string(kStateNames[d]));
      }
    }
    return s;
  }

  static DsimSampler build(const ShipParams& base, const DsimConfig& cfg) {
    if (cfg.n_samples < 100) throw Error(ErrorCode::ConfigError, "dsim n_samples must be >= 100");
    std::vector<std::vector<ShipState>> rollouts;
    std::vector<std::vector<ControlInput>> commands;
    for (int r = 0; r < cfg.n_rollouts; ++r) {
      const auto seed = derive_seed(cfg.seed, streams::dsim, static_cast<std::uint64_t>(r));
      auto cmd = pink_noise_commands(base, cfg.excitation, cfg.rollout_length, seed);
      std::vector<ShipState> xs{sample_initial_state(cfg.excitation, seed)};
      for (int k = 0; k + 1 < cfg.rollout_length; ++k) xs.push_back(step(xs.back(), cmd[k], base, cfg.dt));
      rollouts.push_back(std::move(xs));
      commands.push_back(std::move(cmd));
    }
    Rng rng(derive_seed(cfg.seed, streams::dsim, 1u << 20));
    std::uniform_int_distribution<int> pick_rollout(0, cfg.n_rollouts - 1);
    std::uniform_int_distribution<int> pick_step(cfg.burn_in, cfg.rollout_length - 1);
    std::vector<ShipState> states;
    std::vector<ControlInput> inputs;
    for (int i = 0; i < cfg.n_samples; ++i) {
      const int r = pick_rollout(rng);
      const int k = pick_step(rng);
      states.push_back(rollouts[r][k]);
      inputs.push_back(commands[r][k]);
    }
    return from_draws(base, std::move(states), std::move(inputs), cfg.dt);
  }
};

/// One-step responses of a parameter set at every shared draw (kStateDim x n).
inline Eigen::MatrixXd dsim_responses(const ShipParams& params, const DsimSampler& sampler) {
  Eigen::MatrixXd out(kStateDim, static_cast<Eigen::Index>(sampler.states.size()));
  for (std::size_t i = 0; i < sampler.states.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = step(sampler.states[i], sampler.inputs[i], params, sampler.dt);
  }
  return out;
}

struct DsimEstimate {
  double value = 0.0;    ///< sqrt of the mean normalised squared difference
  double squared = 0.0;  ///< Monte-Carlo mean of the per-draw terms
  double std_error_squared = 0.0;  ///< standard error of `squared`
};

inline DsimEstimate dsim_from_responses(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                        const ShipState& normalizer) {
  const Eigen::Index n = a.cols();
  const Eigen::ArrayXd terms =
      ((a - b).array().square().colwise() / normalizer.array()).colwise().sum().transpose();
  DsimEstimate e;
  e.squared = terms.mean();
  e.value = std::sqrt(e.squared);
  if (n > 1) {
    const double var = (terms - e.squared).square().sum() / static_cast<double>(n - 1);
    e.std_error_squared = std::sqrt(var / static_cast<double>(n));
  }
  return e;
}

inline DsimEstimate dsim_estimate(const ShipParams& a, const ShipParams& b, const DsimSampler& s) {
  return dsim_from_responses(dsim_responses(a, s), dsim_responses(b, s), s.normalizer);
}

inline double dsim(const ShipParams& a, const ShipParams& b, const DsimSampler& s) {
  return dsim_estimate(a, b, s).value;
}

inline double dsim(const ShipParams& a, const ShipParams& b, const ShipParams& base,
                   const DsimConfig& cfg) {
  return dsim(a, b, DsimSampler::build(base, cfg));
}

struct PoolConfig {
  int target_count = 1000;
  double keep_fraction = 0.5;
  int candidate_budget_factor = 20;
  int probe_count = 8;
  int probe_length = 384;
  double capsize_deg = kCapsizeRollDeg;
  std::uint64_t seed = 0;
  int threads = 1;
  DsimConfig dsim;
  ExcitationConfig excitation;
};

/// Probe command sequences used for the stability screen.
inline std::vector<std::vector<ControlInput>> stability_probes(const ShipParams& base,
                                                               const PoolConfig& cfg) {
  std::vector<std::vector<ControlInput>> probes;
  for (int i = 0; i < cfg.probe_count; ++i) {
    probes.push_back(pink_noise_commands(base, cfg.excitation, cfg.probe_length,
                                         derive_seed(cfg.seed, streams::probe, static_cast<std::uint64_t>(i))));
  }
  return probes;
}

/// Outcome of the nearest-neighbour dissimilarity filter over a candidate set.
struct DissimilarityFilter {
  Eigen::MatrixXd dsim_matrix;     ///< pairwise dsim over all candidates
  std::vector<double> nn_scores;   ///< min_j dsim(i, j), j != i
  std::vector<bool> retained;
};

/// Keeps the `keep` candidates with the largest nearest-neighbour dsim; ties
/// are broken by candidate order. Single batch pass over the full matrix.
inline DissimilarityFilter filter_by_dissimilarity(const std::vector<ShipParams>& candidates,
                                                   std::size_t keep, const DsimSampler& sampler,
                                                   int threads = 1) {
  const std::size_t n = candidates.size();
  std::vector<Eigen::MatrixXd> responses(n);
  parallel_for(n, threads, [&](std::size_t i) { responses[i] = dsim_responses(candidates[i], sampler); });

  DissimilarityFilter out;
  out.dsim_matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = dsim_from_responses(responses[i], responses[j], sampler.normalizer).value;
      out.dsim_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
      out.dsim_matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d;
    }
  }
  out.nn_scores.assign(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) {
        out.nn_scores[i] = std::min(out.nn_scores[i], out.dsim_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.nn_scores[a] > out.nn_scores[b]; });
  out.retained.assign(n, false);
  for (std::size_t k = 0; k < std::min(keep, n); ++k) out.retained[order[k]] = true;
  return out;
}

struct InstancePool {
  std::vector<ShipParams> instances;  ///< sorted by instance_id
  ShipParams base;
  std::vector<std::string> variation_params;
  std::uint64_t seed = 0;
  PoolConfig config;
  Eigen::MatrixXd dsim_matrix;  ///< optional cache over `instances`; may be empty

  const ShipParams& find(std::int64_t instance_id) const {
    for (const auto& p : instances) {
      if (p.instance_id == instance_id) return p;
    }
    throw Error(ErrorCode::ConfigError, "instance " + std::to_string(instance_id) + " not in pool");
  }
};

struct PoolBuildResult {
  InstancePool pool;
  std::vector<ShipParams> stable;  ///< every stable candidate, in draw order
  DissimilarityFilter filter;
  int candidates_drawn = 0;
  int rejected_unstable = 0;
};

/// Samples candidates, rejects unstable ones until enough stable candidates
/// exist, then drops the least dissimilar fraction in one pass.
inline PoolBuildResult build_pool(const ShipParams& base,
                                  const std::vector<std::string>& variation_params,
                                  const PoolConfig& cfg) {
  if (cfg.target_count < 2) throw Error(ErrorCode::ConfigError, "target_count must be >= 2");
  validate(base);
  const int needed = static_cast<int>(std::ceil(cfg.target_count / cfg.keep_fraction - 1e-9));
  const int budget = cfg.candidate_budget_factor * cfg.target_count;
  const auto probes = stability_probes(base, cfg);
  const ShipState init = cruise_state(cfg.excitation);

  PoolBuildResult result;
  const int batch = std::max(cfg.threads, 1) * 4;
  while (static_cast<int>(result.stable.size()) < needed) {
    if (result.candidates_drawn >= budget) {
      throw Error(ErrorCode::PoolExhausted,
                  "only " + std::to_string(result.stable.size()) + " stable candidates after " +
                      std::to_string(result.candidates_drawn) + " draws");
    }
    const int count = std::min(batch, budget - result.candidates_drawn);
    std::vector<ShipParams> drawn(static_cast<std::size_t>(count));
    std::vector<char> ok(static_cast<std::size_t>(count), 0);
    parallel_for(drawn.size(), cfg.threads, [&](std::size_t i) {
      const auto id = static_cast<std::uint64_t>(result.candidates_drawn) + i + 1;
      drawn[i] = sample_candidate(base, variation_params, derive_seed(cfg.seed, streams::candidate, id));
      drawn[i].instance_id = static_cast<std::int64_t>(id);
      ok[i] = is_stable(drawn[i], init, probes, cfg.excitation.dt, cfg.probe_length, cfg.capsize_deg);
    });
    result.candidates_drawn += count;
    for (std::size_t i = 0; i < drawn.size(); ++i) {
      if (!ok[i]) {
        ++result.rejected_unstable;
      } else if (static_cast<int>(result.stable.size()) < needed) {
        result.stable.push_back(drawn[i]);
      }
    }
  }

  DsimConfig dcfg = cfg.dsim;
  dcfg.excitation = cfg.excitation;
  dcfg.dt = cfg.excitation.dt;
  const auto sampler = DsimSampler::build(base, dcfg);
  result.filter = filter_by_dissimilarity(result.stable, static_cast<std::size_t>(cfg.target_count), sampler, cfg.threads);

  auto& pool = result.pool;
  pool.base = base;
  pool.variation_params = variation_params;
  pool.seed = cfg.seed;
  pool.config = cfg;
  std::vector<Eigen::Index> kept;
  for (std::size_t i = 0; i < result.stable.size(); ++i) {
    if (result.filter.retained[i]) {
      pool.instances.push_back(result.stable[i]);
      kept.push_back(static_cast<Eigen::Index>(i));
    }
  }
  pool.dsim_matrix = result.filter.dsim_matrix(kept, kept);
  return result;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json to_json(const DsimConfig& c) {
  return {{"n_samples", c.n_samples}, {"n_rollouts", c.n_rollouts},
          {"rollout_length", c.rollout_length}, {"burn_in", c.burn_in},
          {"dt", c.dt}, {"seed", c.seed}};
}

inline DsimConfig dsim_config_from_json(const nlohmann::json& j) {
  DsimConfig c;
  c.n_samples = j.value("n_samples", c.n_samples);
  c.n_rollouts = j.value("n_rollouts", c.n_rollouts);
  c.rollout_length = j.value("rollout_length", c.rollout_length);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.dt = j.value("dt", c.dt);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::json to_json(const PoolConfig& c) {
  return {{"target_count", c.target_count},
          {"keep_fraction", c.keep_fraction},
          {"candidate_budget_factor", c.candidate_budget_factor},
          {"probe_count", c.probe_count},
          {"probe_length", c.probe_length},
          {"capsize_deg", c.capsize_deg},
          {"seed", c.seed},
          {"dsim", to_json(c.dsim)},
          {"excitation", to_json(c.excitation)}};
}

inline PoolConfig pool_config_from_json(const nlohmann::json& j) {
  PoolConfig c;
  c.target_count = j.value("target_count", c.target_count);
  c.keep_fraction = j.value("keep_fraction", c.keep_fraction);
  c.candidate_budget_factor = j.value("candidate_budget_factor", c.candidate_budget_factor);
  c.probe_count = j.value("probe_count", c.probe_count);
  c.probe_length = j.value("probe_length", c.probe_length);
  c.capsize_deg = j.value("capsize_deg", c.capsize_deg);
  c.seed = j.value("seed", c.seed);
  if (j.contains("dsim")) c.dsim = dsim_config_from_json(j["dsim"]);
  if (j.contains("excitation")) c.excitation = excitation_from_json(j["excitation"]);
  return c;
}

inline nlohmann::json to_json(const InstancePool& pool) {
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& p : pool.instances) instances.push_back(params_to_json(p));
  return {{"seed", pool.seed},
          {"config", to_json(pool.config)},
          {"variation_params", pool.variation_params},
          {"base", params_to_json(pool.base)},
          {"instances", instances}};
}

inline InstancePool pool_from_json(const nlohmann::json& j) {
  InstancePool pool;
  pool.seed = j.at("seed").get<std::uint64_t>();
  pool.config = pool_config_from_json(j.at("config"));
  pool.variation_params = j.at("variation_params").get<std::vector<std::string>>();
  pool.base = params_from_json(j.at("base"));
  for (const auto& p : j.at("instances")) pool.instances.push_back(params_from_json(p));
  std::sort(pool.instances.begin(), pool.instances.end(),
            [](const ShipParams& a, const ShipParams& b) { return a.instance_id < b.instance_id; });
  return pool;
}

inline void save_pool(const InstancePool& pool, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << to_json(pool).dump(1) << '\n';
}

inline InstancePool load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, path + ": " + e.what());
  }
  return pool_from_json(j);
}

}  // namespace fmukf
