// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. Optional argv[1]: working directory (kept).

#include "fmukf/evaluation.hpp"
#include "fmukf/pink_noise.hpp"
#include "fmukf/training_data.hpp"
#include "fmukf/ukf.hpp"

#include <chrono>
#include <complex>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <unistd.h>

using namespace fmukf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const ParamFile& base_file() {
  static const ParamFile f = load_param_file(std::string(FMUKF_DATA_DIR) + "/container_ship.json");
  return f;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

Vector randn(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = n01(rng);
  return v;
}

Matrix random_spd(int d, std::mt19937_64& rng, double floor) {
  Matrix A(d, d);
  for (int j = 0; j < d; ++j) A.col(j) = randn(d, rng);
  return A * A.transpose() / d + floor * Matrix::Identity(d, d);
}

double rel_err(const Matrix& a, const Matrix& ref) { return (a - ref).norm() / std::max(ref.norm(), 1e-300); }

// 1. UKF against the textbook Kalman recursion on random stable linear systems.
Outcome linear_gaussian_equivalence() {
  Outcome o;
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int sys = 0; sys < 20; ++sys) {
    const int d = 1 + sys % 4;
    const int m = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(d));
    Matrix F(d, d);
    for (int j = 0; j < d; ++j) F.col(j) = randn(d, rng);
    const double rho = F.eigenvalues().cwiseAbs().maxCoeff();
    F *= 0.95 / rho;
    Matrix B(d, 1);
    B.col(0) = randn(d, rng);
    Matrix H(m, d);
    for (int j = 0; j < d; ++j) H.col(j) = randn(m, rng);
    const Matrix Q = random_spd(d, rng, 0.01) * 0.1;
    const Matrix R = random_spd(m, rng, 0.01) * 0.2;

    auto model = std::make_shared<FunctionModel>([F, B](const Vector& x, const Vector& u) { return Vector(F * x + B * u); });
    UnscentedKalmanFilter ukf(model, Q);
    const MeasurementModel mm{[H](const Vector& x) { return Vector(H * x); }, R, {}};
    GaussianBelief ub{randn(d, rng), random_spd(d, rng, 0.1)};
    Vector kx = ub.mean;
    Matrix kP = ub.cov;
    Vector truth = randn(d, rng);
    const Eigen::LLT<Matrix> q_chol(Q), r_chol(R);
    for (int k = 0; k < 100; ++k) {
      const Vector u = Vector::Constant(1, std::sin(0.07 * k + sys));
      truth = F * truth + B * u + Matrix(q_chol.matrixL()) * randn(d, rng);
      const Vector y = H * truth + Matrix(r_chol.matrixL()) * randn(m, rng);
      ub = ukf.update(ukf.predict(ub, u), y, mm);
      kx = F * kx + B * u;
      kP = F * kP * F.transpose() + Q;
      const Matrix S = H * kP * H.transpose() + R;
      const Matrix K = kP * H.transpose() * S.inverse();
      kx += K * (y - H * kx);
      kP = (Matrix::Identity(d, d) - K * H) * kP;
      worst = std::max({worst, rel_err(ub.mean, kx), rel_err(ub.cov, kP)});
    }
  }
  o.check(worst < 1e-6, "worst relative error " + fmt(worst) + " over 20 systems x 100 steps (< 1e-6)");
  return o;
}

// 2. Unscented transform exactness.
Outcome unscented_exactness() {
  Outcome o;
  std::mt19937_64 rng(202);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + trial % 5;
    const GaussianBelief b{randn(d, rng), random_spd(d, rng, 0.1)};
    Matrix A(3, d);
    for (int j = 0; j < d; ++j) A.col(j) = randn(3, rng);
    const Vector c = randn(3, rng);
    const auto out = unscented_transform(sigma_points(b), [&](const Vector& x) { return Vector(A * x + c); });
    worst = std::max({worst, rel_err(out.mean, A * b.mean + c), rel_err(out.cov, A * b.cov * A.transpose())});
  }
  o.check(worst < 1e-12, "affine maps: worst relative moment error " + fmt(worst) + " (< 1e-12)");
  const GaussianBelief std_normal{Vector::Zero(1), Matrix::Identity(1, 1)};
  const double m = unscented_transform(sigma_points(std_normal), [](const Vector& x) {
                     return Vector(x.array().square());
                   }).mean[0];
  o.check(std::abs(m - 1.0) <= 1e-12, "E[x^2] under N(0,1) = " + fmt(m) + " (1 +/- 1e-12)");
  return o;
}

ShipState service_state() {
  ShipState s = ShipState::Zero();
  s[idx::u] = 8.3767;
  s[idx::n] = 80.0 / 60.0;
  return s;
}

// 3. Ship model: convergence order, mirror symmetry, upright pink-noise rollouts.
Outcome ship_model_validity() {
  Outcome o;
  const auto& p = base_file().params;
  const ControlInput c(2.0 * std::numbers::pi / 180.0, 80.0 / 60.0);
  const double horizon = 16.0;
  // Independent RK4 at a fine step as reference; fine-step Euler as a sanity bound.
  ShipState ref = service_state();
  const int fine = 4096;
  for (int k = 0; k < fine; ++k) {
    const double h = horizon / fine;
    const StateDerivative k1 = derivative(ref, c, p);
    const StateDerivative k2 = derivative(ref + h / 2 * k1, c, p);
    const StateDerivative k3 = derivative(ref + h / 2 * k2, c, p);
    const StateDerivative k4 = derivative(ref + h * k3, c, p);
    ref += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6;
  }
  ShipState euler = service_state();
  for (int k = 0; k < (1 << 18); ++k) euler += (horizon / (1 << 18)) * derivative(euler, c, p);
  const ShipState scale = ref.cwiseAbs().cwiseMax(ShipState::Constant(1e-3));
  std::vector<double> ldt, lerr;
  for (double dt : {2.0, 1.0, 0.5, 0.25}) {
    ShipState s = service_state();
    for (int k = 0; k < static_cast<int>(horizon / dt); ++k) s = step(s, c, p, dt);
    ldt.push_back(std::log(dt));
    lerr.push_back(std::log(((s - ref).cwiseAbs().array() / scale.array()).maxCoeff()));
  }
  const double order = slope(ldt, lerr);
  o.check(std::abs(order - 4.0) <= 0.3, "RK4 order " + fmt(order) + " (4 +/- 0.3)");
  const double euler_gap = ((euler - ref).cwiseAbs().array() / scale.array()).maxCoeff();
  o.check(euler_gap < 1e-3, "fine RK4 vs fine Euler relative gap " + fmt(euler_gap));

  const auto cmds = pink_noise_commands(p, ExcitationConfig{}, 200, 3);
  ShipState a = service_state();
  a[idx::v] = 0.1;
  ShipState b = mirror(a);
  double mirror_gap = 0;
  for (const auto& cmd : cmds) {
    a = step(a, cmd, p, 1.0);
    b = step(b, mirror(cmd), p, 1.0);
    mirror_gap = std::max(mirror_gap, (mirror(a) - b).cwiseAbs().maxCoeff());
  }
  o.check(mirror_gap <= 1e-9, "mirror symmetry gap " + fmt(mirror_gap) + " (<= 1e-9)");

  ExcitationConfig ex;
  int upright = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto t = rollout(p, sample_initial_state(ex, seed), pink_noise_commands(p, ex, 384, seed), 1.0);
    bool ok = true;
    for (const auto& s : t.states) ok = ok && s.allFinite() && std::abs(s[idx::phi]) < 60.0 * std::numbers::pi / 180.0;
    upright += ok;
  }
  o.check(upright >= 95, std::to_string(upright) + "/100 pink-noise rollouts finite and |phi| < 60 deg");
  return o;
}

// 4. Dissimilarity metric and batch filtering of a 40-candidate pool.
Outcome sampling_pipeline() {
  Outcome o;
  const auto& base = base_file().params;
  const auto& varied = base_file().variation_params;
  PoolConfig cfg;
  cfg.target_count = 20;
  cfg.seed = 2024;
  cfg.dsim.n_samples = 128;
  cfg.dsim.seed = 5;
  const auto r = build_pool(base, varied, cfg);
  DsimConfig dcfg = cfg.dsim;
  dcfg.excitation = cfg.excitation;
  const auto sampler = DsimSampler::build(base, dcfg);

  double self = 0, asym = 0;
  for (const auto& s : r.stable) self = std::max(self, std::abs(dsim(s, s, sampler)));
  for (std::size_t i = 0; i + 1 < r.stable.size(); i += 3) {
    asym = std::max(asym, std::abs(dsim(r.stable[i], r.stable[i + 1], sampler) - dsim(r.stable[i + 1], r.stable[i], sampler)));
  }
  o.check(self == 0.0, "dsim(theta, theta) max " + fmt(self));
  o.check(asym <= 1e-12, "dsim asymmetry " + fmt(asym) + " (<= 1e-12)");

  const std::size_t n = r.stable.size();
  std::vector<double> nn(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) nn[i] = std::min(nn[i], dsim(r.stable[i], r.stable[j], sampler));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return nn[a] > nn[b]; });
  std::set<std::int64_t> expected, kept;
  for (std::size_t k = 0; k < n / 2; ++k) expected.insert(r.stable[order[k]].instance_id);
  for (const auto& inst : r.pool.instances) kept.insert(inst.instance_id);
  o.check(n == 40, std::to_string(n) + " stable candidates");
  o.check(kept == expected, "retained set equals brute-force top half (" + std::to_string(kept.size()) + " kept)");
  return o;
}

// 5. Pink noise spectrum and correlation (direct DFT periodogram).
Outcome pink_noise_checks() {
  Outcome o;
  PinkNoiseConfig cfg;
  cfg.length = 1 << 14;
  cfg.seed = 42;
  const auto x = pink_noise(cfg);
  const std::size_t n = x.size();
  std::vector<double> lf, lp;
  for (std::size_t k = 1; k < n / 2; ++k) {
    const double w = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, w * static_cast<double>(t));
    lf.push_back(std::log(static_cast<double>(k) / static_cast<double>(n)));
    lp.push_back(std::log(std::norm(acc) / static_cast<double>(n)));
  }
  const double s = slope(lf, lp);
  o.check(std::abs(s + 1.0) <= 0.2, "periodogram slope " + fmt(s) + " (-1 +/- 0.2)");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t t = 0; t < n; ++t) {
    den += (x[t] - mean) * (x[t] - mean);
    if (t + 1 < n) num += (x[t] - mean) * (x[t + 1] - mean);
  }
  o.check(num / den > 0.2, "lag-1 autocorrelation " + fmt(num / den) + " (> 0.2)");
  return o;
}

template <typename S>
nn::Mat<S> random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  nn::Mat<S> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(nd(rng));
  return m;
}

// 6. Sequence model mechanics.
Outcome seqmodel_mechanics() {
  Outcome o;
  const auto cfg = nn::SeqModelConfig::desk(14, 12);
  nn::SeqModel<float> model(cfg, 3);
  const auto x = random_mat<float>(192, 14, 11);
  const auto base = model.forward(x);
  bool causal = true;
  for (int k = 0; k < 192; ++k) {
    auto xp = x;
    xp.row(k).array() += 1.0f;
    const auto out = model.forward(xp);
    const int boundary = (k / cfg.patch_size) * cfg.patch_size;
    causal = causal && out.topRows(boundary) == base.topRows(boundary) && out.row(boundary) != base.row(boundary);
  }
  o.check(causal, "causal perturbation at every step of L=192");

  bool identity = true;
  for (int p : {1, 2, 4}) {
    const auto s = random_mat<float>(16, 5, 10 + static_cast<std::uint64_t>(p));
    identity = identity && nn::depatch(nn::patch(s, p), p) == s;
  }
  o.check(identity, "depatch(patch(x)) == x");

  const Matrix t = random_mat<double>(16, 3, 4);
  const Matrix pred = t + 0.7 * random_mat<double>(16, 3, 5);
  Matrix g;
  nn::normalized_loss(pred, t, 2, 16, &g);
  const Vector norm = nn::step_normalizer(t, 2, 16);
  double worst = 0;
  for (Eigen::Index k = 2; k < pred.rows(); ++k) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      if (std::abs(std::abs((pred(k, j) - t(k, j)) / norm[j]) - 1.0) < 1e-3) continue;  // Huber kink
      Matrix a = pred, b = pred;
      a(k, j) += 1e-5;
      b(k, j) -= 1e-5;
      const double fd = (nn::normalized_loss(a, t, 2, 16) - nn::normalized_loss(b, t, 2, 16)) / 2e-5;
      worst = std::max(worst, std::abs(fd - g(k, j)) / std::max(std::abs(g(k, j)), 1e-3));
    }
  }
  o.check(worst < 1e-5, "loss gradient vs central differences, worst relative " + fmt(worst));

  o.check(nn::huber(0.5) == 0.125 && nn::huber(2.0, 1.0) == 1.5 && nn::huber(1.0) == 0.5,
          "Huber(0.5)=" + fmt(nn::huber(0.5)) + " Huber(2)=" + fmt(nn::huber(2.0)) + " Huber(1)=" + fmt(nn::huber(1.0)));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ang(-std::numbers::pi + 1e-6, std::numbers::pi);
  double rt = 0;
  for (int i = 0; i < 1000; ++i) {
    Vector s = Vector::Zero(kStateDim);
    s[idx::phi] = ang(rng);
    s[idx::psi] = ang(rng);
    const Vector back = collapse_state(expand_state(s, FeatureLayout::ship()), FeatureLayout::ship());
    rt = std::max({rt, std::abs(wrap_angle(back[idx::phi] - s[idx::phi])), std::abs(wrap_angle(back[idx::psi] - s[idx::psi]))});
  }
  o.check(rt < 1e-9, "angle round trip error " + fmt(rt) + " (< 1e-9)");
  return o;
}

struct DeskData {
  fs::path root;
  DatasetManifest manifest;
};

DeskData desk_dataset(const fs::path& work) {
  PoolConfig pc;
  pc.target_count = 60;
  pc.seed = 11;
  const auto pool = build_pool(base_file().params, base_file().variation_params, pc).pool;
  DatasetConfig dc;
  dc.trajectories_per_instance = 20;
  dc.length = 384;
  dc.seed = 2;
  dc.test_fraction = 1.0 / 6.0;
  const auto root = work / "data";
  fs::remove_all(root);
  return {root, build_dataset(pool, dc, root)};
}

TrainConfig desk_train_config(int epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = 3;
  tc.batch_schedule = {{0, 32}};
  tc.checkpoint_every = 0;
  return tc;
}

// 7. Desk-scale training smoke test.
Outcome training_smoke(const DeskData& data, const fs::path& work) {
  Outcome o;
  o.check(data.manifest.train_instances.size() == 50, std::to_string(data.manifest.train_instances.size()) +
                                                          " training instances x 20 trajectories");
  const auto cfg = nn::SeqModelConfig::desk(14, 12);
  o.check(cfg.n_layers == 2 && cfg.embed_dim == 64, "model: 2 layers, embed 64");
  const auto run = train_fm(data.manifest, cfg, desk_train_config(50), work / "model");
  const double ratio = run.history.initial_val_loss / run.history.final_val_loss();
  o.check(ratio >= 5.0, "validation loss " + fmt(run.history.initial_val_loss) + " -> " +
                            fmt(run.history.final_val_loss()) + " after 50 epochs (" + fmt(ratio) + "x, >= 5x)");

  const auto a = train_fm(data.manifest, cfg, desk_train_config(2), work / "det_a");
  const auto b = train_fm(data.manifest, cfg, desk_train_config(2), work / "det_b");
  bool same = a.history.final_val_loss() == b.history.final_val_loss();
  const auto& pa = a.model.net.params().all();
  const auto& pb = b.model.net.params().all();
  for (std::size_t i = 0; i < pa.size(); ++i) same = same && pa[i].value == pb[i].value;
  o.check(same, "two 2-epoch runs with the same seed give identical parameters");
  return o;
}

// 8. Ranks from the reference h2 median columns (rows p, r, u, v, phi, psi, x, y).
Outcome reference_ranks() {
  Outcome o;
  const std::map<std::string, std::vector<double>> h2 = {
      {"End2End", {3.41e-2, 1.12e-2, 8.34e-2, 1.82e-2, 2.21e-1, 2.09e-1, 1.50e-3, 1.45e-3}},
      {"FM-UKF", {6.01e-2, 2.62e-2, 2.42e-1, 4.73e-2, 5.69e-1, 3.81e-1, 1.11e-3, 1.11e-3}},
      {"Base-UKF", {1.29e-1, 2.17e-2, 3.58e-1, 6.58e-2, 8.63e-1, 3.18e-1, 1.15e-3, 1.15e-3}},
      {"CV-UKF", {1.85e-1, 2.78e-2, 6.31e-1, 2.11e-1, 3.73e-1, 3.17e-1, 1.48e-3, 1.49e-3}},
  };
  const std::map<std::string, double> printed = {{"End2End", 1.62}, {"FM-UKF", 2.25}, {"Base-UKF", 2.75}, {"CV-UKF", 3.38}};
  const auto r = rank_table(h2);
  for (const auto& [name, want] : printed) {
    // Printed to two decimals; 1.625 and 3.375 round half away to 1.63/3.38 or
    // half even to 1.62/3.38, so compare at the printed precision.
    o.check(std::abs(r.at(name) - want) <= 0.005 + 1e-12, name + " " + fmt(r.at(name)) + " (printed " + fmt(want) + ")");
  }
  return o;
}

ExperimentConfig baseline_experiment(const DeskData& data, const fs::path& out) {
  ExperimentConfig c;
  c.manifest = (data.root / "manifest.json").string();
  c.sensors = {make_sensor(SensorId::H2)};
  for (auto k : {EstimatorKind::OracleUkf, EstimatorKind::BaseUkf, EstimatorKind::CvUkf}) c.estimators.push_back({to_string(k), k, ""});
  c.trajectories = 100;
  c.length = 192;
  c.seed = 17;
  c.out = out;
  return c;
}

double median_of(const nlohmann::json& report, const std::string& est, const std::string& feature) {
  for (const auto& r : report.at("results")) {
    if (r.at("estimator") == est && r.at("feature") == feature) return r.at("median").get<double>();
  }
  throw Error(ErrorCode::ConfigError, "missing " + est + "/" + feature);
}

// 9. Baseline ordering on surge under h2.
Outcome baseline_ordering(const DeskData& data, const fs::path& work, NoiseScale& tuned) {
  Outcome o;
  const auto s = evaluate(baseline_experiment(data, work / "baselines"));
  const auto& meta = s.report.at("metadata");
  tuned = {meta.at("process_noise").at("selected").at("velocity").get<double>(),
           meta.at("process_noise").at("selected").at("pose").get<double>()};
  std::set<std::int64_t> ships;
  for (const auto& k : meta.at("trajectories")) ships.insert(std::stoll(k.get<std::string>()));
  o.check(s.runs == 300 && s.failures == 0 && ships.size() == 10,
          std::to_string(s.runs / 3) + " trajectories x " + std::to_string(ships.size()) + " test ships, " +
              std::to_string(s.failures) + " failures");
  const double oracle = median_of(s.report, "ORACLE_UKF", "u");
  const double base = median_of(s.report, "BASE_UKF", "u");
  const double cv = median_of(s.report, "CV_UKF", "u");
  o.check(oracle < base, "surge median Oracle " + fmt(oracle) + " < Base " + fmt(base));
  o.check(base < cv, "surge median Base " + fmt(base) + " < CV " + fmt(cv));
  o.check(true, "Q scales velocity " + fmt(tuned.velocity) + ", pose " + fmt(tuned.pose));
  return o;
}

// 10. FM-UKF with the desk model: finite PD beliefs, integrator helps the pose.
Outcome fm_ukf_smoke(const DeskData& data, const fs::path& work, const NoiseScale& tuned) {
  Outcome o;
  const auto model = std::make_shared<const SequenceModel>(load_model(work / "model"));
  const auto pool = load_pool(data.manifest.resolve(data.manifest.pool_path).string());
  const auto cases = select_cases(data.manifest, data.manifest.test_instances, 20, 192);
  const auto sensor = make_sensor(SensorId::H2);
  const Matrix Q = tuned.apply(base_process_noise_std());
  const std::array<int, 4> pose = {idx::x, idx::y, idx::phi, idx::psi};
  std::map<bool, std::vector<std::vector<double>>> pose_mae;
  long beliefs = 0, bad = 0;
  for (bool integrator : {false, true}) {
    pose_mae[integrator].resize(pose.size());
    for (const auto& c : cases) {
      const auto ys = synthesize_measurements(c.states, sensor, measurement_seed(17, c, sensor));
      auto check = [&](const GaussianBelief& b) {
        ++beliefs;
        const bool finite = b.mean.allFinite() && b.cov.allFinite();
        if (!finite || Eigen::LLT<Matrix>(b.cov).info() != Eigen::Success) ++bad;
      };
      try {
        const auto est = run_ukf(fm_process_model(model, integrator, data.manifest.dt), Q, ys, c.controls, sensor,
                                 InitPolicy{}, check);
        for (std::size_t f = 0; f < pose.size(); ++f) pose_mae[integrator][f].push_back(mae(est, c.states, pose[f]));
      } catch (const Error& e) {
        ++bad;
        o.check(false, std::string("run failed: ") + e.what());
      }
    }
  }
  o.check(bad == 0 && beliefs == 2L * static_cast<long>(cases.size()) * 192,
          std::to_string(beliefs) + " beliefs over " + std::to_string(cases.size()) + " trajectories x 192 steps x 2 variants, " +
              std::to_string(bad) + " non-finite or not PD");
  for (std::size_t f = 0; f < pose.size(); ++f) {
    const double with = median(pose_mae[true][f]), without = median(pose_mae[false][f]);
    o.check(with <= without, std::string(kStateNames[static_cast<std::size_t>(pose[f])]) + " median MAE integrator " +
                                 fmt(with) + " <= plain " + fmt(without));
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const bool keep = argc > 1;
  const fs::path work = keep ? fs::path(argv[1]) : fs::temp_directory_path() / ("fmukf_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  int failed = 0;
  auto run = [&](int id, const std::string& name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << ", " << fmt(secs) << " s): " << o.detail
              << std::endl;
  };

  run(1, "linear-Gaussian filter equivalence", linear_gaussian_equivalence);
  run(2, "unscented transform exactness", unscented_exactness);
  run(3, "ship model validity", ship_model_validity);
  run(4, "sampling pipeline", sampling_pipeline);
  run(5, "pink noise", pink_noise_checks);
  run(6, "sequence model mechanics", seqmodel_mechanics);

  std::optional<DeskData> data;
  try {
    data = desk_dataset(work);
  } catch (const std::exception& e) {
    std::cout << "desk dataset generation failed: " << e.what() << std::endl;
  }
  auto needs_data = [&](auto&& fn) {
    return [&, fn]() -> Outcome {
      if (!data) throw Error(ErrorCode::IoError, "no desk dataset");
      return fn();
    };
  };
  NoiseScale tuned;
  bool trained = false;
  run(7, "training smoke", needs_data([&] {
        auto o = training_smoke(*data, work);
        trained = fs::exists(work / "model" / "params.bin");
        return o;
      }));
  run(8, "reference mean ranks", reference_ranks);
  run(9, "baseline ordering", needs_data([&] { return baseline_ordering(*data, work, tuned); }));
  run(10, "FM-UKF integration", needs_data([&] {
        if (!trained) throw Error(ErrorCode::IoError, "no trained desk model");
        return fm_ukf_smoke(*data, work, tuned);
      }));

  if (!keep) fs::remove_all(work);
  std::cout << (10 - failed) << "/10 criteria passed" << std::endl;
  return failed;
}
