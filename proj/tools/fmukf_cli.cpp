#include "fmukf/dataset.hpp"
#include "fmukf/evaluation.hpp"
#include "fmukf/instance_sampling.hpp"
#include "fmukf/training_data.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace fmukf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFailures = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

nlohmann::json config_or_empty(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : read_json(path);
}

int run_sample_instances(const Globals& g, const std::string& base_path, std::optional<int> count) {
  const auto base = load_param_file(base_path);
  auto cfg = pool_config_from_json(config_or_empty(g.config));
  if (g.seed) cfg.seed = *g.seed;
  if (count) cfg.target_count = *count;
  cfg.threads = g.threads;
  const auto result = build_pool(base.params, base.variation_params, cfg);
  const fs::path out = g.out.empty() ? fs::path("pool.json") : fs::path(g.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_pool(result.pool, out.string());
  std::cout << "pool of " << result.pool.instances.size() << " instances from " << result.candidates_drawn
            << " candidates (" << result.rejected_unstable << " unstable) -> " << out.string() << "\n";
  return 0;
}

int run_generate(const Globals& g, const std::string& pool_path, std::optional<int> per_instance,
                 std::optional<int> length) {
  auto cfg = dataset_config_from_json(config_or_empty(g.config));
  if (g.seed) cfg.seed = *g.seed;
  if (per_instance) cfg.trajectories_per_instance = *per_instance;
  if (length) cfg.length = *length;
  cfg.threads = g.threads;
  const fs::path out = g.out.empty() ? fs::path("dataset") : fs::path(g.out);
  fs::create_directories(out);
  const auto pool = load_pool(pool_path);
  save_pool(pool, (out / "pool.json").string());
  const auto m = build_dataset(pool, cfg, out);
  std::cout << m.records.size() << " trajectories, " << m.train_instances.size() << " train / "
            << m.test_instances.size() << " test instances -> " << (out / "manifest.json").string() << "\n";
  return 0;
}

int run_train_fm(const Globals& g, const std::string& manifest, const std::string& model_cfg_path,
                 const std::string& train_cfg_path, std::optional<int> epochs) {
  const auto m = load_manifest(manifest);
  auto model_cfg = config_or_empty(model_cfg_path).get<nn::SeqModelConfig>();
  auto train_cfg = config_or_empty(train_cfg_path).get<TrainConfig>();
  if (g.seed) train_cfg.seed = *g.seed;
  if (epochs) train_cfg.epochs = *epochs;
  train_cfg.verbose = true;
  const fs::path out = g.out.empty() ? fs::path("model") : fs::path(g.out);
  const auto trained = train_fm(m, model_cfg, train_cfg, out);
  std::cout << "parameters " << trained.model.net.parameter_count() << ", validation loss "
            << trained.history.initial_val_loss << " -> " << trained.history.final_val_loss() << " -> "
            << out.string() << "\n";
  return 0;
}

int run_train_e2e(const Globals& g, const std::string& manifest, const std::string& model_cfg_path,
                  const std::string& train_cfg_path, std::optional<int> epochs, const std::vector<std::string>& sensor_ids) {
  const auto m = load_manifest(manifest);
  auto model_cfg = config_or_empty(model_cfg_path).get<nn::SeqModelConfig>();
  auto train_cfg = config_or_empty(train_cfg_path).get<TrainConfig>();
  if (g.seed) train_cfg.seed = *g.seed;
  if (epochs) train_cfg.epochs = *epochs;
  train_cfg.verbose = true;
  std::vector<SensorConfig> sensors;
  for (const auto& id : sensor_ids) sensors.push_back(make_sensor(sensor_id_from_string(id)));
  const fs::path out = g.out.empty() ? fs::path("e2e_model") : fs::path(g.out);
  const auto trained = train_e2e(m, model_cfg, train_cfg, sensors, out);
  std::cout << "parameters " << trained.model.net.parameter_count() << ", validation loss "
            << trained.history.initial_val_loss << " -> " << trained.history.final_val_loss() << " -> "
            << out.string() << "\n";
  return 0;
}

int run_evaluate(const Globals& g, bool threads_given) {
  if (g.config.empty()) throw Error(ErrorCode::ConfigError, "evaluate needs --config");
  const fs::path cfg_path(g.config);
  auto cfg = experiment_from_json(read_json(cfg_path), fs::absolute(cfg_path).parent_path());
  if (g.seed) cfg.seed = *g.seed;
  if (threads_given) cfg.threads = g.threads;
  if (!g.out.empty()) cfg.out = g.out;
  const auto s = evaluate(cfg, &std::cerr);
  std::cout << s.runs << " runs, " << s.failures << " failed -> " << (cfg.out / "report.json").string() << "\n";
  for (const auto& [sensor, ranks] : s.report.at("mean_ranks").items()) {
    for (const auto& [name, r] : ranks.items()) std::cout << sensor << " " << name << " mean rank " << r << "\n";
  }
  if (s.over_threshold) {
    std::cerr << "failure fraction above " << cfg.failure_threshold << "\n";
    return kExitFailures;
  }
  return 0;
}

int run_report(const Globals& g, const std::string& report_path, const std::vector<double>& quantiles) {
  const auto report = read_json(report_path);
  std::string text;
  if (quantiles.empty()) {
    const fs::path csv = fs::path(report_path).parent_path() / "report.csv";
    std::ifstream in(csv);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + csv.string());
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  } else {
    for (double q : quantiles) {
      if (!(q >= 0 && q <= 1)) throw Error(ErrorCode::ConfigError, "quantiles must lie in [0, 1]");
    }
    text = quantile_table(report, quantiles);
  }
  if (g.out.empty()) {
    std::cout << text;
  } else {
    if (fs::path(g.out).has_parent_path()) fs::create_directories(fs::path(g.out).parent_path());
    write_file_atomic(g.out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Container-ship state estimation benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output path");

  auto* sample = app.add_subcommand("sample-instances", "Sample a pool of stable, diverse ship instances");
  std::string base_path = std::string(FMUKF_DATA_DIR) + "/container_ship.json";
  std::optional<int> count;
  sample->add_option("--base", base_path, "Base parameter file");
  sample->add_option("--count", count, "Number of instances to keep");

  auto* gen = app.add_subcommand("generate", "Simulate trajectories for every pool instance");
  std::string pool_path;
  std::optional<int> per_instance, length;
  gen->add_option("--pool", pool_path, "Instance pool")->required();
  gen->add_option("--per-instance", per_instance, "Trajectories per instance");
  gen->add_option("--length", length, "Steps per trajectory");

  auto* train = app.add_subcommand("train-fm", "Train the dynamics sequence model");
  std::string manifest, model_cfg, train_cfg;
  std::optional<int> epochs;
  train->add_option("--manifest", manifest, "Dataset manifest")->required();
  train->add_option("--model-config", model_cfg, "Model configuration");
  train->add_option("--train-config", train_cfg, "Training configuration");
  train->add_option("--epochs", epochs, "Override the epoch count");

  auto* train_e2e_cmd = app.add_subcommand("train-e2e", "Train the End2End estimator model");
  std::string e2e_manifest, e2e_model_cfg, e2e_train_cfg;
  std::optional<int> e2e_epochs;
  std::vector<std::string> e2e_sensors = {"H1", "H2"};
  train_e2e_cmd->add_option("--manifest", e2e_manifest, "Dataset manifest")->required();
  train_e2e_cmd->add_option("--model-config", e2e_model_cfg, "Model configuration");
  train_e2e_cmd->add_option("--train-config", e2e_train_cfg, "Training configuration");
  train_e2e_cmd->add_option("--epochs", e2e_epochs, "Override the epoch count");
  train_e2e_cmd->add_option("--sensors", e2e_sensors, "Sensor configurations to train on")->delimiter(',');

  auto* eval = app.add_subcommand("evaluate", "Run estimators on test trajectories and write reports");

  auto* report = app.add_subcommand("report", "Print the CSV summary or a quantile table of a report");
  std::string report_path = "results/report.json";
  std::vector<double> quantiles;
  report->add_option("--report", report_path, "report.json to read");
  report->add_option("--quantiles", quantiles, "Comma-separated quantile levels")->delimiter(',');

  for (auto* sub : {sample, gen, train, train_e2e_cmd, eval, report}) {
    sub->add_option("--config", g.config, "JSON configuration file");
    sub->add_option("--seed", g.seed, "Override the configured seed");
    sub->add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", g.out, "Output path");
  }

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sample) return run_sample_instances(g, base_path, count);
    if (*gen) return run_generate(g, pool_path, per_instance, length);
    if (*train) return run_train_fm(g, manifest, model_cfg, train_cfg, epochs);
    if (*train_e2e_cmd) return run_train_e2e(g, e2e_manifest, e2e_model_cfg, e2e_train_cfg, e2e_epochs, e2e_sensors);
    if (*eval) return run_evaluate(g, app.count("--threads") + eval->count("--threads") > 0);
    if (*report) return run_report(g, report_path, quantiles);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::IoError ? kExitConfig : 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
