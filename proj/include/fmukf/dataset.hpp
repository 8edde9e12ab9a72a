#pragma once

#include "fmukf/error.hpp"
#include "fmukf/excitation.hpp"
#include "fmukf/instance_sampling.hpp"
#include "fmukf/parallel.hpp"
#include "fmukf/rng.hpp"
#include "fmukf/ship_dynamics.hpp"
#include "fmukf/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace fmukf {

static_assert(std::endian::native == std::endian::little, "binary trajectory I/O assumes little-endian");

struct Trajectory {
  std::int64_t instance_id = 0;
  std::uint64_t seed = 0;
  double dt = 1.0;
  std::vector<ShipState> states;
  std::vector<ControlInput> controls;

  std::size_t size() const { return states.size(); }
};

/// Forward simulation: states[0] = init, states[k+1] = step(states[k], controls[k]).
/// The final control is stored but not applied. Throws Diverged.
inline Trajectory rollout(const ShipParams& params, const ShipState& init,
                          const std::vector<ControlInput>& controls, double dt) {
  if (controls.empty()) throw Error(ErrorCode::ConfigError, "rollout needs at least one control");
  Trajectory t;
  t.instance_id = params.instance_id;
  t.dt = dt;
  t.controls = controls;
  t.states.reserve(controls.size());
  t.states.push_back(init);
  for (std::size_t k = 0; k + 1 < controls.size(); ++k) {
    t.states.push_back(step(t.states.back(), controls[k], params, dt));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Binary format: packed little-endian header
//   magic "FMUK" | version u16 | L u32 | dt f64 | instance_id u64 | seed u64
// followed by L rows of 12 f32 (10 state + 2 control), row-major.

inline constexpr char kTrajectoryMagic[4] = {'F', 'M', 'U', 'K'};
inline constexpr std::uint16_t kTrajectoryVersion = 1;
inline constexpr std::size_t kTrajectoryHeaderBytes = 4 + 2 + 4 + 8 + 8 + 8;
inline constexpr int kTrajectoryRowWidth = kStateDim + kControlDim;

namespace detail {
template <typename T>
void put(std::vector<char>& buf, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  buf.insert(buf.end(), p, p + sizeof(T));
}
template <typename T>
T get(const char*& p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  p += sizeof(T);
  return value;
}
}  // namespace detail

inline std::vector<char> encode_trajectory(const Trajectory& t) {
  if (t.states.size() != t.controls.size()) {
    throw Error(ErrorCode::LengthMismatch, "states/controls length mismatch");
  }
  std::vector<char> buf;
  buf.reserve(kTrajectoryHeaderBytes + t.size() * kTrajectoryRowWidth * sizeof(float));
  buf.insert(buf.end(), kTrajectoryMagic, kTrajectoryMagic + 4);
  detail::put(buf, kTrajectoryVersion);
  detail::put(buf, static_cast<std::uint32_t>(t.size()));
  detail::put(buf, t.dt);
  detail::put(buf, static_cast<std::uint64_t>(t.instance_id));
  detail::put(buf, t.seed);
  for (std::size_t k = 0; k < t.size(); ++k) {
    for (int i = 0; i < kStateDim; ++i) detail::put(buf, static_cast<float>(t.states[k][i]));
    for (int i = 0; i < kControlDim; ++i) detail::put(buf, static_cast<float>(t.controls[k][i]));
  }
  return buf;
}

inline Trajectory decode_trajectory(const std::vector<char>& buf) {
  if (buf.size() < kTrajectoryHeaderBytes || std::memcmp(buf.data(), kTrajectoryMagic, 4) != 0) {
    throw Error(ErrorCode::IoError, "not a trajectory file");
  }
  const char* p = buf.data() + 4;
  const auto version = detail::get<std::uint16_t>(p);
  if (version != kTrajectoryVersion) {
    throw Error(ErrorCode::IoError, "unsupported trajectory version " + std::to_string(version));
  }
  Trajectory t;
  const auto length = detail::get<std::uint32_t>(p);
  t.dt = detail::get<double>(p);
  t.instance_id = static_cast<std::int64_t>(detail::get<std::uint64_t>(p));
  t.seed = detail::get<std::uint64_t>(p);
  if (buf.size() != kTrajectoryHeaderBytes + std::size_t{length} * kTrajectoryRowWidth * sizeof(float)) {
    throw Error(ErrorCode::IoError, "trajectory payload size does not match header");
  }
  t.states.resize(length);
  t.controls.resize(length);
  for (std::size_t k = 0; k < length; ++k) {
    for (int i = 0; i < kStateDim; ++i) t.states[k][i] = detail::get<float>(p);
    for (int i = 0; i < kControlDim; ++i) t.controls[k][i] = detail::get<float>(p);
  }
  return t;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string_view bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void write_trajectory(const Trajectory& t, const std::filesystem::path& path) {
  const auto buf = encode_trajectory(t);
  write_file_atomic(path, std::string_view(buf.data(), buf.size()));
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_trajectory(buf);
}

/// Checks the Trajectory invariants. When params are given, each transition
/// is re-simulated and compared with a tolerance that absorbs f32 storage.
inline void validate_trajectory(const Trajectory& t, const ShipParams* params = nullptr,
                                double rel_tol = 1e-3) {
  if (t.states.size() != t.controls.size() || t.states.empty()) {
    throw Error(ErrorCode::LengthMismatch, "states/controls must be non-empty and equal length");
  }
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!t.states[k].allFinite() || !t.controls[k].allFinite()) {
      throw Error(ErrorCode::NonFiniteState, "non-finite entry at step " + std::to_string(k));
    }
  }
  if (!params) return;
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    const ShipState expected = step(t.states[k], t.controls[k], *params, t.dt);
    const ShipState change = (t.states[k + 1] - t.states[k]).cwiseAbs();
    for (int i = 0; i < kStateDim; ++i) {
      const double err = std::abs(expected[i] - t.states[k + 1][i]);
      const double scale = change[i] + 1e-6 * std::abs(t.states[k + 1][i]) + 1e-9;
      if (err > rel_tol * std::max(scale, 1.0) && err > 1e-4 * (1.0 + std::abs(t.states[k + 1][i]))) {
        throw Error(ErrorCode::Diverged, "transition " + std::to_string(k) + " inconsistent in " +
                                             std::string(kStateNames[i]));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest

inline constexpr int kManifestSchemaVersion = 1;

struct TrajectoryRecord {
  std::string path;  ///< relative to the manifest directory
  std::int64_t instance_id = 0;
  std::uint64_t seed = 0;
  int length = 0;
  std::uint64_t offset = kTrajectoryHeaderBytes;
  std::uint64_t bytes = 0;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  double dt = 1.0;
  std::vector<std::int64_t> train_instances;
  std::vector<std::int64_t> test_instances;
  std::vector<TrajectoryRecord> records;
  std::string pool_path;        ///< relative path of the instance pool
  std::string norm_stats_path;  ///< relative path of normalisation statistics, may be empty
  std::filesystem::path root;   ///< directory holding the manifest (not serialised)

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }

  bool is_train(std::int64_t id) const {
    return std::find(train_instances.begin(), train_instances.end(), id) != train_instances.end();
  }
  bool is_test(std::int64_t id) const {
    return std::find(test_instances.begin(), test_instances.end(), id) != test_instances.end();
  }

  std::vector<TrajectoryRecord> split_records(bool train) const {
    std::vector<TrajectoryRecord> out;
    for (const auto& r : records) {
      if (train ? is_train(r.instance_id) : is_test(r.instance_id)) out.push_back(r);
    }
    return out;
  }
};

/// Throws ConfigError if any instance appears in both splits.
inline void check_split_hygiene(const DatasetManifest& m) {
  std::set<std::int64_t> train(m.train_instances.begin(), m.train_instances.end());
  for (auto id : m.test_instances) {
    if (train.count(id)) {
      throw Error(ErrorCode::ConfigError,
                  "instance " + std::to_string(id) + " appears in both train and test splits");
    }
  }
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    records.push_back({{"path", r.path}, {"instance_id", r.instance_id}, {"seed", r.seed},
                       {"length", r.length}, {"offset", r.offset}, {"bytes", r.bytes}});
  }
  std::vector<std::string> state_names(kStateNames.begin(), kStateNames.end());
  std::vector<std::string> control_names(kControlNames.begin(), kControlNames.end());
  return {{"schema_version", m.schema_version},
          {"dt", m.dt},
          {"state_features", state_names},
          {"control_features", control_names},
          {"row_layout", "f32 little-endian [L x 12] after a packed 34-byte header"},
          {"train_instances", m.train_instances},
          {"test_instances", m.test_instances},
          {"pool", m.pool_path},
          {"norm_stats", m.norm_stats_path},
          {"records", records}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kManifestSchemaVersion) {
    throw Error(ErrorCode::ConfigError, "unsupported manifest schema " + std::to_string(m.schema_version));
  }
  const auto names = j.at("state_features").get<std::vector<std::string>>();
  if (names.size() != kStateNames.size() || !std::equal(names.begin(), names.end(), kStateNames.begin())) {
    throw Error(ErrorCode::ConfigError, "manifest state feature ordering differs from [u, v, p, r, x, y, phi, psi, delta, n]");
  }
  m.dt = j.at("dt").get<double>();
  m.train_instances = j.at("train_instances").get<std::vector<std::int64_t>>();
  m.test_instances = j.at("test_instances").get<std::vector<std::int64_t>>();
  m.pool_path = j.value("pool", std::string{});
  m.norm_stats_path = j.value("norm_stats", std::string{});
  for (const auto& r : j.at("records")) {
    m.records.push_back({r.at("path").get<std::string>(), r.at("instance_id").get<std::int64_t>(),
                         r.at("seed").get<std::uint64_t>(), r.at("length").get<int>(),
                         r.at("offset").get<std::uint64_t>(), r.at("bytes").get<std::uint64_t>()});
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(m).dump(1) + "\n");
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
  auto m = manifest_from_json(j);
  m.root = path.parent_path();
  return m;
}

inline Trajectory load_record(const DatasetManifest& m, const TrajectoryRecord& r) {
  return read_trajectory(m.resolve(r.path));
}

// ---------------------------------------------------------------------------
// Dataset generation

struct DatasetConfig {
  int trajectories_per_instance = 400;
  int length = 384;
  std::uint64_t seed = 0;
  double test_fraction = 0.1;
  int retry_budget = 8;
  int threads = 1;
  ExcitationConfig excitation;
};

/// Full-scale sizes: 1000 instances x 400 trajectories x 384 steps.
inline constexpr int kFullInstances = 1000;
inline constexpr int kFullTrajectoriesPerInstance = 400;
inline constexpr int kFullTrajectoryLength = 384;

/// Instance-level split: shuffled by seed, round(test_fraction * n) test ships.
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split_instances(
    std::vector<std::int64_t> ids, double test_fraction, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, streams::split));
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(ids.size())));
  if (ids.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
  std::vector<std::int64_t> test(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::int64_t> train(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline std::string trajectory_file_name(std::int64_t instance_id, std::uint64_t seed) {
  return "traj_" + std::to_string(instance_id) + "_" + std::to_string(seed) + ".bin";
}

/// Simulates one trajectory for an instance, retrying with fresh seeds when
/// the rollout diverges or capsizes.
inline Trajectory generate_trajectory(const ShipParams& params, const DatasetConfig& cfg,
                                      std::uint64_t index) {
  const double roll_limit = kCapsizeRollDeg * std::numbers::pi / 180.0;
  for (int attempt = 0; attempt <= cfg.retry_budget; ++attempt) {
    const auto seed = derive_seed(cfg.seed, streams::trajectory,
                                  (static_cast<std::uint64_t>(params.instance_id) << 32) ^ (index << 8) ^
                                      static_cast<std::uint64_t>(attempt));
    try {
      auto controls = pink_noise_commands(params, cfg.excitation, cfg.length, seed);
      auto t = rollout(params, sample_initial_state(cfg.excitation, seed), controls, cfg.excitation.dt);
      const bool capsized = std::any_of(t.states.begin(), t.states.end(), [&](const ShipState& s) {
        return std::abs(s[idx::phi]) > roll_limit;
      });
      if (capsized) continue;
      t.seed = seed;
      return t;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Diverged) throw;
      std::cerr << "instance " << params.instance_id << " trajectory " << index
                << " diverged (attempt " << attempt << ")\n";
    }
  }
  throw Error(ErrorCode::Diverged, "retry budget exhausted for instance " +
                                       std::to_string(params.instance_id));
}

/// Writes `trajectories_per_instance` trajectories per pool instance plus a
/// manifest into `out_dir`. The pool is expected at `out_dir/pool_rel` or is
/// written there.
inline DatasetManifest build_dataset(const InstancePool& pool, const DatasetConfig& cfg,
                                     const std::filesystem::path& out_dir,
                                     const std::string& pool_rel = "pool.json") {
  if (pool.instances.empty()) throw Error(ErrorCode::ConfigError, "pool is empty");
  std::filesystem::create_directories(out_dir);
  if (!std::filesystem::exists(out_dir / pool_rel)) save_pool(pool, (out_dir / pool_rel).string());

  DatasetManifest m;
  m.dt = cfg.excitation.dt;
  m.root = out_dir;
  m.pool_path = pool_rel;
  std::vector<std::int64_t> ids;
  for (const auto& p : pool.instances) ids.push_back(p.instance_id);
  std::tie(m.train_instances, m.test_instances) = split_instances(ids, cfg.test_fraction, cfg.seed);

  const std::size_t per = static_cast<std::size_t>(cfg.trajectories_per_instance);
  std::vector<TrajectoryRecord> records(pool.instances.size() * per);
  parallel_for(records.size(), cfg.threads, [&](std::size_t job) {
    const auto& params = pool.instances[job / per];
    const auto t = generate_trajectory(params, cfg, job % per);
    const auto name = trajectory_file_name(t.instance_id, t.seed);
    write_trajectory(t, out_dir / name);
    records[job] = {name, t.instance_id, t.seed, static_cast<int>(t.size()), kTrajectoryHeaderBytes,
                    static_cast<std::uint64_t>(kTrajectoryHeaderBytes + t.size() * kTrajectoryRowWidth * sizeof(float))};
  });
  m.records = std::move(records);
  check_split_hygiene(m);
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"trajectories_per_instance", c.trajectories_per_instance},
          {"length", c.length},
          {"seed", c.seed},
          {"test_fraction", c.test_fraction},
          {"retry_budget", c.retry_budget},
          {"excitation", to_json(c.excitation)}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.trajectories_per_instance = j.value("trajectories_per_instance", c.trajectories_per_instance);
  c.length = j.value("length", c.length);
  c.seed = j.value("seed", c.seed);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.retry_budget = j.value("retry_budget", c.retry_budget);
  c.threads = j.value("threads", c.threads);
  if (j.contains("excitation")) c.excitation = excitation_from_json(j.at("excitation"));
  if (c.trajectories_per_instance < 1 || c.length < 2 || !(c.test_fraction > 0 && c.test_fraction < 1)) {
    throw Error(ErrorCode::ConfigError, "dataset config out of range");
  }
  return c;
}

}  // namespace fmukf
