#pragma once

#include "fmukf/dataset.hpp"
#include "fmukf/estimators.hpp"
#include "fmukf/instance_sampling.hpp"
#include "fmukf/parallel.hpp"
#include "fmukf/sequence_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <atomic>
#include <fstream>
#include <set>
#include <sstream>

#ifndef FMUKF_GIT_HASH
#define FMUKF_GIT_HASH "unknown"
#endif

namespace fmukf {

/// Mean absolute error of feature j over steps [skip, L); angles use the
/// wrapped difference.
inline double mae(const std::vector<Vector>& est, const std::vector<Vector>& truth, int j, std::size_t skip = 0) {
  if (est.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "estimate and truth lengths differ");
  if (skip >= est.size()) throw Error(ErrorCode::TrajectoryTooShort, "nothing left after warmup");
  const bool angle = is_angle_index(j);
  double sum = 0;
  for (std::size_t k = skip; k < est.size(); ++k) {
    const double d = est[k][j] - truth[k][j];
    sum += std::abs(angle ? wrap_angle(d) : d);
  }
  return sum / static_cast<double>(est.size() - skip);
}

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

/// Per feature, rank estimators 1..n by ascending median (ties share the
/// average rank, missing medians rank last); returns the mean rank.
inline std::map<std::string, double> rank_table(const std::map<std::string, std::vector<double>>& medians) {
  std::map<std::string, double> out;
  if (medians.empty()) return out;
  const std::size_t features = medians.begin()->second.size();
  for (const auto& [name, m] : medians) {
    if (m.size() != features) throw Error(ErrorCode::LengthMismatch, "estimators report different feature sets");
    out[name] = 0.0;
  }
  auto key = [](double v) { return std::isnan(v) ? std::numeric_limits<double>::infinity() : v; };
  for (std::size_t j = 0; j < features; ++j) {
    for (const auto& [name, m] : medians) {
      double below = 0, equal = 0;
      for (const auto& [other, om] : medians) {
        if (key(om[j]) < key(m[j])) ++below;
        else if (key(om[j]) == key(m[j])) ++equal;
      }
      out[name] += below + (equal + 1) / 2.0;
    }
  }
  for (auto& [name, r] : out) r /= static_cast<double>(features);
  return out;
}

/// Features entering the mean rank: velocities and pose, not actuator states.
inline constexpr std::array<int, 8> kRankedFeatures = {idx::u, idx::v, idx::p, idx::r,
                                                       idx::x, idx::y, idx::phi, idx::psi};

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct EstimatorEntry {
  std::string name;
  EstimatorKind kind = EstimatorKind::BaseUkf;
  std::string model;  ///< artifact directory, relative to the config file
};

struct TuningConfig {
  std::vector<double> grid = {0.01, 0.1, 1.0, 10.0, 100.0};
  int trajectories = 20;
  bool grouped = true;  ///< search velocity and pose scales independently
};

/// Multipliers on the process noise variance: one for velocities, rates and
/// actuators, one for the pose (x, y, phi, psi).
struct NoiseScale {
  double velocity = 1.0;
  double pose = 1.0;

  Matrix apply(const Vector& std_dev) const {
    Vector var = std_dev.array().square();
    for (int i : {idx::x, idx::y, idx::phi, idx::psi}) var[i] *= pose;
    for (int i : {idx::u, idx::v, idx::p, idx::r, idx::delta, idx::n}) var[i] *= velocity;
    return var.asDiagonal();
  }
  nlohmann::json json() const { return {{"velocity", velocity}, {"pose", pose}}; }
};

inline std::vector<NoiseScale> tuning_candidates(const TuningConfig& t) {
  std::vector<NoiseScale> out;
  for (double a : t.grid) {
    if (!t.grouped) {
      out.push_back({a, a});
      continue;
    }
    for (double b : t.grid) out.push_back({a, b});
  }
  return out;
}

struct ExperimentConfig {
  std::string manifest;
  std::vector<SensorConfig> sensors = {make_sensor(SensorId::H1), make_sensor(SensorId::H2)};
  std::vector<EstimatorEntry> estimators;
  int trajectories = 5000;
  int length = 192;
  std::uint64_t seed = 0;
  std::optional<NoiseScale> q_scale;  ///< fixed scale; tuned when absent
  Vector q_std = base_process_noise_std();  ///< diagonal process noise std before scaling
  TuningConfig tuning;
  double failure_threshold = 0.05;
  int skip_warmup = 0;
  int threads = 1;
  std::filesystem::path base_dir;  ///< relative paths resolve against this
  std::filesystem::path out = "results";
  InitPolicy init;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  /// Fields that determine results (not threads or output location).
  nlohmann::json canonical() const {
    nlohmann::json est = nlohmann::json::array();
    for (const auto& e : estimators) est.push_back({{"name", e.name}, {"kind", to_string(e.kind)}, {"model", e.model}});
    nlohmann::json sens = nlohmann::json::array();
    for (const auto& s : sensors) sens.push_back(to_json(s));
    nlohmann::json j = {{"manifest", manifest},     {"sensors", sens},
                        {"estimators", est},        {"trajectories", trajectories},
                        {"length", length},         {"seed", seed},
                        {"tuning_grid", tuning.grid}, {"tuning_trajectories", tuning.trajectories},
                        {"skip_warmup", skip_warmup}};
    if (q_scale) j["q_scale"] = q_scale->json();
    j["tuning_grouped"] = tuning.grouped;
    j["q_std"] = std::vector<double>(q_std.data(), q_std.data() + q_std.size());
    return j;
  }
};

inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    c.manifest = j.at("manifest").get<std::string>();
    if (j.contains("sensors")) {
      c.sensors.clear();
      for (const auto& s : j["sensors"]) c.sensors.push_back(s.is_string() ? sensor_from_json({{"id", s}}) : sensor_from_json(s));
    }
    for (const auto& e : j.at("estimators")) {
      EstimatorEntry entry;
      entry.kind = estimator_kind_from_string(e.at("kind").get<std::string>());
      entry.name = e.value("name", to_string(entry.kind));
      entry.model = e.value("model", std::string());
      c.estimators.push_back(entry);
    }
    c.trajectories = j.value("trajectories", c.trajectories);
    c.length = j.value("length", c.length);
    c.seed = j.value("seed", c.seed);
    if (j.contains("q_scale") && !j["q_scale"].is_null()) {
      const auto& q = j["q_scale"];
      c.q_scale = q.is_number() ? NoiseScale{q.get<double>(), q.get<double>()}
                                : NoiseScale{q.at("velocity").get<double>(), q.at("pose").get<double>()};
      if (!(c.q_scale->velocity > 0 && c.q_scale->pose > 0)) throw Error(ErrorCode::ConfigError, "q_scale must be > 0");
    }
    if (j.contains("q_std")) {
      const auto v = j["q_std"].get<std::vector<double>>();
      if (v.size() != static_cast<std::size_t>(kStateDim)) throw Error(ErrorCode::ConfigError, "q_std needs 10 entries");
      c.q_std = Eigen::Map<const Vector>(v.data(), kStateDim);
      if ((c.q_std.array() < 0).any()) throw Error(ErrorCode::ConfigError, "q_std entries must be >= 0");
    }
    if (j.contains("tuning")) {
      c.tuning.grid = j["tuning"].value("grid", c.tuning.grid);
      c.tuning.trajectories = j["tuning"].value("trajectories", c.tuning.trajectories);
      c.tuning.grouped = j["tuning"].value("grouped", c.tuning.grouped);
    }
    c.failure_threshold = j.value("failure_threshold", c.failure_threshold);
    c.skip_warmup = j.value("skip_warmup", c.skip_warmup);
    c.threads = j.value("threads", c.threads);
    if (j.contains("out")) c.out = c.resolve(j["out"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("experiment config: ") + e.what());
  }
  std::set<std::string> names;
  for (const auto& e : c.estimators) {
    if (!names.insert(e.name).second) throw Error(ErrorCode::ConfigError, "duplicate estimator name " + e.name);
    const bool needs_model = e.kind == EstimatorKind::FmUkf || e.kind == EstimatorKind::FmUkfIntegrator ||
                             e.kind == EstimatorKind::End2End;
    if (needs_model && e.model.empty()) throw Error(ErrorCode::ConfigError, e.name + " needs a model artifact");
  }
  if (c.estimators.empty() || c.sensors.empty()) throw Error(ErrorCode::ConfigError, "no estimators or sensors");
  if (c.trajectories < 1 || c.length < 2 || c.skip_warmup < 0 || c.skip_warmup >= c.length) {
    throw Error(ErrorCode::ConfigError, "trajectory count, length or warmup out of range");
  }
  return c;
}

/// One evaluation trajectory cut to the configured length.
struct EvalCase {
  std::int64_t instance_id = 0;
  std::uint64_t seed = 0;
  std::vector<Vector> states, controls;

  std::string key() const { return std::to_string(instance_id) + "_" + std::to_string(seed); }
};

/// Up to `count` trajectories taken round-robin over the given instances.
inline std::vector<EvalCase> select_cases(const DatasetManifest& m, const std::vector<std::int64_t>& instances,
                                          int count, int length) {
  std::map<std::int64_t, std::vector<TrajectoryRecord>> by_instance;
  for (const auto& r : m.records) {
    if (std::find(instances.begin(), instances.end(), r.instance_id) != instances.end() && r.length >= length) {
      by_instance[r.instance_id].push_back(r);
    }
  }
  for (auto& [id, recs] : by_instance) {
    std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  }
  std::vector<TrajectoryRecord> chosen;
  for (std::size_t round = 0; static_cast<int>(chosen.size()) < count; ++round) {
    bool any = false;
    for (auto& [id, recs] : by_instance) {
      if (round < recs.size() && static_cast<int>(chosen.size()) < count) {
        chosen.push_back(recs[round]);
        any = true;
      }
    }
    if (!any) break;
  }
  std::vector<EvalCase> out;
  for (const auto& r : chosen) {
    const auto t = load_record(m, r);
    EvalCase c{t.instance_id, r.seed, {}, {}};
    for (int k = 0; k < length; ++k) {
      c.states.emplace_back(t.states[static_cast<std::size_t>(k)]);
      c.controls.emplace_back(t.controls[static_cast<std::size_t>(k)]);
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::uint64_t measurement_seed(std::uint64_t seed, const EvalCase& c, const SensorConfig& s) {
  return derive_seed(seed, streams::measurement, fnv1a(c.key() + "/" + to_string(s.id)));
}

struct RunOutcome {
  bool ok = false;
  std::string error;
  std::vector<double> mae;  ///< one per state feature
};

inline RunOutcome evaluate_case(EstimatorKind kind, const EstimatorContext& ctx, const InstancePool& pool,
                                const EvalCase& c, const SensorConfig& s, std::uint64_t seed, int skip) {
  const auto ys = synthesize_measurements(c.states, s, measurement_seed(seed, c, s));
  const auto r = run_estimator(kind, ctx, &pool.find(c.instance_id), ys, c.controls, s);
  RunOutcome o{r.ok, r.error, {}};
  if (r.ok) {
    for (int j = 0; j < kStateDim; ++j) o.mae.push_back(mae(r.estimates, c.states, j, static_cast<std::size_t>(skip)));
    if (!std::all_of(o.mae.begin(), o.mae.end(), [](double v) { return std::isfinite(v); })) {
      o = {false, "non-finite error", {}};
    }
  }
  return o;
}

struct TuningResult {
  std::vector<NoiseScale> candidates;
  NoiseScale best;
  std::vector<double> objective;
};

/// Shared Q scales minimizing the scale-free mean MAE of the Oracle,
/// Base and CV filters over tuning trajectories and all sensors. Each
/// feature's MAE is divided by its average over the grid so features with
/// large units do not dominate.
inline TuningResult tune_process_noise(const std::vector<EvalCase>& cases, const InstancePool& pool,
                                       const ExperimentConfig& cfg, EstimatorContext ctx) {
  const std::vector<EstimatorKind> kinds = {EstimatorKind::OracleUkf, EstimatorKind::BaseUkf, EstimatorKind::CvUkf};
  TuningResult t;
  t.candidates = tuning_candidates(cfg.tuning);
  if (t.candidates.empty()) throw Error(ErrorCode::ConfigError, "empty tuning grid");
  const std::size_t G = t.candidates.size();
  const std::size_t per_grid = kinds.size() * cfg.sensors.size() * cases.size();
  std::vector<RunOutcome> runs(G * per_grid);
  parallel_for(runs.size(), cfg.threads, [&](std::size_t job) {
    const std::size_t g = job / per_grid, rest = job % per_grid;
    const std::size_t e = rest / (cfg.sensors.size() * cases.size());
    const std::size_t s = (rest / cases.size()) % cfg.sensors.size();
    const std::size_t c = rest % cases.size();
    EstimatorContext local = ctx;
    local.Q = t.candidates[g].apply(cfg.q_std);
    runs[job] = evaluate_case(kinds[e], local, pool, cases[c], cfg.sensors[s], cfg.seed ^ 0x7u, cfg.skip_warmup);
  });
  // Failed runs count at the worst error seen for that feature.
  std::vector<double> scale(kStateDim, 0.0), worst(kStateDim, 0.0);
  std::size_t ok = 0;
  for (const auto& r : runs) {
    if (!r.ok) continue;
    ++ok;
    for (int j = 0; j < kStateDim; ++j) {
      scale[j] += r.mae[j];
      worst[j] = std::max(worst[j], r.mae[j]);
    }
  }
  if (ok == 0) throw Error(ErrorCode::ModelFailure, "every tuning run failed");
  for (auto& v : scale) v = std::max(v / static_cast<double>(ok), 1e-300);
  for (std::size_t g = 0; g < G; ++g) {
    double sum = 0;
    for (std::size_t i = 0; i < per_grid; ++i) {
      const auto& r = runs[g * per_grid + i];
      for (int j = 0; j < kStateDim; ++j) sum += (r.ok ? r.mae[j] : worst[j]) / scale[j];
    }
    t.objective.push_back(sum / static_cast<double>(per_grid * kStateDim));
  }
  t.best = t.candidates[static_cast<std::size_t>(
      std::min_element(t.objective.begin(), t.objective.end()) - t.objective.begin())];
  return t;
}

inline std::string file_hash_hex(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes);
  return os.str();
}

struct EvalSummary {
  nlohmann::json report;
  std::string csv;
  std::size_t runs = 0;
  std::size_t failures = 0;
  bool over_threshold = false;
};

/// Runs every (trajectory, sensor, estimator) combination under common random
/// numbers, caching per-run results, and writes report.json and report.csv
/// into cfg.out.
inline EvalSummary evaluate(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const auto manifest = load_manifest(cfg.resolve(cfg.manifest));
  check_split_hygiene(manifest);
  if (manifest.test_instances.empty()) throw Error(ErrorCode::ConfigError, "manifest has no test instances");
  const auto pool = load_pool(manifest.resolve(manifest.pool_path).string());

  EstimatorContext ctx;
  ctx.base = pool.base;
  ctx.dt = manifest.dt;
  ctx.init = cfg.init;
  std::map<std::string, std::shared_ptr<const SequenceModel>> models;
  nlohmann::json identity = cfg.canonical();
  for (const auto& e : cfg.estimators) {
    if (e.model.empty()) continue;
    const auto dir = cfg.resolve(e.model);
    if (!models.count(e.model)) models[e.model] = std::make_shared<const SequenceModel>(load_model(dir));
    identity["artifacts"][e.model] = file_hash_hex(dir / "params.bin");
    const bool e2e = e.kind == EstimatorKind::End2End;
    if (models[e.model]->kind != (e2e ? "end2end" : "dynamics")) {
      throw Error(ErrorCode::ConfigError, e.name + ": artifact " + e.model + " has the wrong kind");
    }
  }

  nlohmann::json tuning_json;
  NoiseScale q_scale;
  if (cfg.q_scale) {
    q_scale = *cfg.q_scale;
    tuning_json = {{"selected", q_scale.json()}};
  } else {
    const auto tune_cases = select_cases(manifest, manifest.train_instances, cfg.tuning.trajectories, cfg.length);
    if (tune_cases.empty()) throw Error(ErrorCode::ConfigError, "no tuning trajectories");
    const auto t = tune_process_noise(tune_cases, pool, cfg, ctx);
    q_scale = t.best;
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : t.candidates) cands.push_back(c.json());
    tuning_json = {{"candidates", cands}, {"objective", t.objective}, {"selected", q_scale.json()}};
    if (log) *log << "process-noise scales velocity " << q_scale.velocity << ", pose " << q_scale.pose << " selected\n";
  }
  ctx.Q = q_scale.apply(cfg.q_std);
  identity["q_scale_used"] = q_scale.json();

  std::ostringstream hs;
  hs << std::hex << std::setw(16) << std::setfill('0') << fnv1a(identity.dump());
  const std::string config_hash = hs.str();
  const fs::path cache_dir = cfg.out / "cache" / config_hash;
  fs::create_directories(cache_dir);

  const auto cases = select_cases(manifest, manifest.test_instances, cfg.trajectories, cfg.length);
  if (cases.empty()) throw Error(ErrorCode::ConfigError, "no test trajectories of the requested length");
  const std::size_t E = cfg.estimators.size(), S = cfg.sensors.size(), C = cases.size();
  std::vector<RunOutcome> runs(E * S * C);
  std::atomic<std::size_t> done{0};
  parallel_for(C, cfg.threads, [&](std::size_t c) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t e = 0; e < E; ++e) {
        const auto& est = cfg.estimators[e];
        const fs::path entry = cache_dir / (est.name + "." + to_string(cfg.sensors[s].id) + "." + cases[c].key() + ".json");
        RunOutcome& o = runs[(e * S + s) * C + c];
        if (fs::exists(entry)) {
          const auto j = read_json(entry);
          o.ok = j.at("ok").get<bool>();
          o.error = j.value("error", std::string());
          o.mae = j.at("mae").get<std::vector<double>>();
          continue;
        }
        EstimatorContext local = ctx;
        if (!est.model.empty()) (est.kind == EstimatorKind::End2End ? local.e2e : local.fm) = models.at(est.model);
        o = evaluate_case(est.kind, local, pool, cases[c], cfg.sensors[s], cfg.seed, cfg.skip_warmup);
        write_json(entry, {{"ok", o.ok}, {"error", o.error}, {"mae", o.mae}});
      }
    }
    const auto n = ++done;
    if (log && (n % 10 == 0 || n == C)) *log << "evaluated " << n << "/" << C << " trajectories\n";
  });

  EvalSummary sum;
  nlohmann::json results = nlohmann::json::array();
  nlohmann::json ranks = nlohmann::json::object();
  std::ostringstream csv;
  csv << std::setprecision(10) << "estimator,sensor,feature,median,q1,q3,n_ok,n_failed,mean_rank\n";
  for (std::size_t s = 0; s < S; ++s) {
    const std::string sensor = to_string(cfg.sensors[s].id);
    std::map<std::string, std::vector<double>> medians;
    std::vector<std::vector<std::vector<double>>> samples(E, std::vector<std::vector<double>>(kStateDim));
    std::vector<std::size_t> failed(E, 0);
    for (std::size_t e = 0; e < E; ++e) {
      for (std::size_t c = 0; c < C; ++c) {
        const auto& o = runs[(e * S + s) * C + c];
        ++sum.runs;
        if (!o.ok) {
          ++failed[e];
          ++sum.failures;
          continue;
        }
        for (int j = 0; j < kStateDim; ++j) samples[e][static_cast<std::size_t>(j)].push_back(o.mae[static_cast<std::size_t>(j)]);
      }
      auto& med = medians[cfg.estimators[e].name];
      for (int j : kRankedFeatures) med.push_back(median(samples[e][static_cast<std::size_t>(j)]));
      if (static_cast<double>(failed[e]) > cfg.failure_threshold * static_cast<double>(C)) sum.over_threshold = true;
    }
    const auto mean_ranks = rank_table(medians);
    for (std::size_t e = 0; e < E; ++e) {
      const auto& name = cfg.estimators[e].name;
      ranks[sensor][name] = mean_ranks.at(name);
      for (int j = 0; j < kStateDim; ++j) {
        const auto& v = samples[e][static_cast<std::size_t>(j)];
        const double q1 = quantile(v, 0.25), q3 = quantile(v, 0.75), md = median(v);
        results.push_back({{"estimator", name},
                           {"kind", to_string(cfg.estimators[e].kind)},
                           {"sensor", sensor},
                           {"feature", kStateNames[static_cast<std::size_t>(j)]},
                           {"samples", v},
                           {"median", md},
                           {"q1", q1},
                           {"q3", q3},
                           {"n_ok", v.size()},
                           {"n_failed", failed[e]}});
        csv << name << ',' << sensor << ',' << kStateNames[static_cast<std::size_t>(j)] << ',' << md << ',' << q1 << ','
            << q3 << ',' << v.size() << ',' << failed[e] << ',' << mean_ranks.at(name) << '\n';
      }
    }
  }
  std::vector<std::string> traj_keys;
  for (const auto& c : cases) traj_keys.push_back(c.key());
  sum.report = {{"metadata",
                 {{"git", FMUKF_GIT_HASH},
                  {"config_hash", config_hash},
                  {"seed", cfg.seed},
                  {"angle_units", "rad"},
                  {"trajectories", traj_keys},
                  {"process_noise", tuning_json}}},
                {"results", results},
                {"mean_ranks", ranks},
                {"runs", sum.runs},
                {"failures", sum.failures}};
  sum.csv = csv.str();
  fs::create_directories(cfg.out);
  write_json(cfg.out / "report.json", sum.report);
  write_file_atomic(cfg.out / "report.csv", sum.csv);
  return sum;
}

/// Quantile table (one row per estimator, sensor and feature) from a report.
inline std::string quantile_table(const nlohmann::json& report, const std::vector<double>& levels) {
  std::ostringstream os;
  os << std::setprecision(10) << "estimator,sensor,feature";
  for (double q : levels) os << ",q" << q;
  os << '\n';
  for (const auto& r : report.at("results")) {
    const auto v = r.at("samples").get<std::vector<double>>();
    os << r.at("estimator").get<std::string>() << ',' << r.at("sensor").get<std::string>() << ','
       << r.at("feature").get<std::string>();
    for (double q : levels) os << ',' << quantile(v, q);
    os << '\n';
  }
  return os.str();
}

}  // namespace fmukf
