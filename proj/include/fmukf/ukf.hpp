#pragma once

#include "fmukf/error.hpp"
#include "fmukf/types.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace fmukf {

struct GaussianBelief {
  Vector mean;
  Matrix cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Base-set sigma points: 2d points at mean +- columns of sqrt(d * cov),
/// uniform weights 1/(2d), no centre point.
struct SigmaEnsemble {
  std::vector<Vector> points;
  Vector w_mu;
  Vector w_sigma;

  int size() const { return static_cast<int>(points.size()); }
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Lower Cholesky factor. On failure the matrix is symmetrised and jittered
/// once by 1e-9 * trace/d; a second failure throws NotPositiveDefinite.
inline Matrix cholesky_lower(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
    return llt.matrixL();
  }
  const auto d = static_cast<double>(cov.rows());
  const double jitter = std::max(1e-9 * cov.trace() / d, 1e-300);
  Matrix repaired = symmetrize(cov);
  repaired.diagonal().array() += jitter;
  Eigen::LLT<Matrix> retry(repaired);
  if (retry.info() != Eigen::Success || !cov.allFinite()) {
    throw Error(ErrorCode::NotPositiveDefinite, "covariance is not positive definite");
  }
  return retry.matrixL();
}

inline SigmaEnsemble sigma_points(const GaussianBelief& belief) {
  const int d = belief.dim();
  const Matrix S = cholesky_lower(static_cast<double>(d) * belief.cov);
  SigmaEnsemble e;
  e.points.reserve(static_cast<std::size_t>(2 * d));
  for (int i = 0; i < d; ++i) e.points.push_back(belief.mean + S.col(i));
  for (int i = 0; i < d; ++i) e.points.push_back(belief.mean - S.col(i));
  e.w_mu = Vector::Constant(2 * d, 1.0 / (2.0 * d));
  e.w_sigma = e.w_mu;
  return e;
}

/// Weighted mean and outer-product covariance of a point set.
inline GaussianBelief moments(const std::vector<Vector>& points, const Vector& w_mu,
                              const Vector& w_sigma) {
  GaussianBelief b;
  b.mean = Vector::Zero(points.front().size());
  for (std::size_t n = 0; n < points.size(); ++n) b.mean += w_mu[static_cast<Eigen::Index>(n)] * points[n];
  b.cov = Matrix::Zero(b.mean.size(), b.mean.size());
  for (std::size_t n = 0; n < points.size(); ++n) {
    const Vector dev = points[n] - b.mean;
    b.cov += w_sigma[static_cast<Eigen::Index>(n)] * dev * dev.transpose();
  }
  return b;
}

template <typename Map>
GaussianBelief unscented_transform(const SigmaEnsemble& e, Map&& map) {
  std::vector<Vector> mapped;
  mapped.reserve(e.points.size());
  for (const auto& p : e.points) mapped.push_back(map(p));
  return moments(mapped, e.w_mu, e.w_sigma);
}

/// Per-index trajectories of posterior sigma points and the shared control
/// history, as a sliding window of at most `capacity` steps.
class SigmaHistory {
 public:
  explicit SigmaHistory(int capacity = 192) : capacity_(capacity) {}

  void append(const SigmaEnsemble& e, const Vector& u) {
    if (points_.empty()) points_.resize(e.points.size());
    if (points_.size() != e.points.size()) {
      throw Error(ErrorCode::ModelFailure, "sigma ensemble size changed between steps");
    }
    for (std::size_t n = 0; n < points_.size(); ++n) {
      points_[n].push_back(e.points[n]);
      if (static_cast<int>(points_[n].size()) > capacity_) points_[n].pop_front();
    }
    controls_.push_back(u);
    if (static_cast<int>(controls_.size()) > capacity_) controls_.pop_front();
  }

  void clear() {
    points_.clear();
    controls_.clear();
  }

  int length() const { return static_cast<int>(controls_.size()); }
  int num_indices() const { return static_cast<int>(points_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<Vector>& trajectory(int n) const { return points_[static_cast<std::size_t>(n)]; }
  const std::deque<Vector>& controls() const { return controls_; }

 private:
  int capacity_;
  std::vector<std::deque<Vector>> points_;
  std::deque<Vector> controls_;
};

/// Prediction model for the sigma points. History-conditioned models see the
/// full per-index trajectories; memoryless ones use only the latest entry.
class ProcessModel {
 public:
  virtual ~ProcessModel() = default;
  virtual bool history_conditioned() const = 0;
  /// Returns one predicted point per sigma index (same count and order).
  virtual std::vector<Vector> predict(const SigmaHistory& history) const = 0;
};

class MemorylessModel : public ProcessModel {
 public:
  bool history_conditioned() const override { return false; }

  virtual Vector propagate(const Vector& x, const Vector& u) const = 0;

  std::vector<Vector> predict(const SigmaHistory& history) const override {
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(history.num_indices()));
    const Vector& u = history.controls().back();
    for (int n = 0; n < history.num_indices(); ++n) out.push_back(propagate(history.trajectory(n).back(), u));
    return out;
  }
};

/// Memoryless model backed by a callable.
class FunctionModel final : public MemorylessModel {
 public:
  using Fn = std::function<Vector(const Vector&, const Vector&)>;
  explicit FunctionModel(Fn fn) : fn_(std::move(fn)) {}
  Vector propagate(const Vector& x, const Vector& u) const override { return fn_(x, u); }

 private:
  Fn fn_;
};

/// Measurement function with its noise covariance; angle channels get
/// residuals on the circle.
struct MeasurementModel {
  std::function<Vector(const Vector&)> h;
  Matrix R;
  std::vector<bool> angle_channels;

  bool is_angle(int c) const {
    return c < static_cast<int>(angle_channels.size()) && angle_channels[static_cast<std::size_t>(c)];
  }
};

struct Prediction {
  GaussianBelief belief;
  SigmaEnsemble ensemble;  ///< propagated sigma points
};

/// Prediction step: draws posterior sigma points, appends them and `u` to the
/// history, queries the model, recovers moments and adds Q.
inline Prediction predict(const GaussianBelief& belief, SigmaHistory& history, const Vector& u,
                          const ProcessModel& model, const Matrix& Q) {
  const SigmaEnsemble posterior = sigma_points(belief);
  history.append(posterior, u);
  Prediction out;
  out.ensemble.points = model.predict(history);
  out.ensemble.w_mu = posterior.w_mu;
  out.ensemble.w_sigma = posterior.w_sigma;
  if (out.ensemble.size() != posterior.size()) {
    throw Error(ErrorCode::ModelFailure, "process model returned wrong number of points");
  }
  for (const auto& p : out.ensemble.points) {
    if (p.size() != belief.mean.size() || !p.allFinite()) {
      throw Error(ErrorCode::ModelFailure, "process model returned non-finite or mis-sized point");
    }
  }
  out.belief = moments(out.ensemble.points, out.ensemble.w_mu, out.ensemble.w_sigma);
  out.belief.cov = symmetrize(out.belief.cov + Q);
  return out;
}

/// Measurement update with sigma points regenerated from the predicted belief.
inline GaussianBelief update(const Prediction& pred, const Vector& y, const MeasurementModel& mm) {
  const GaussianBelief& prior = pred.belief;
  const SigmaEnsemble e = sigma_points(prior);
  std::vector<Vector> z;
  z.reserve(e.points.size());
  for (const auto& p : e.points) z.push_back(mm.h(p));
  const auto dy = static_cast<int>(y.size());
  if (z.front().size() != dy) throw Error(ErrorCode::LengthMismatch, "measurement dimension mismatch");

  // Angle channels are averaged as offsets from h(mean) to stay off the cut.
  const Vector anchor = mm.h(prior.mean);
  Vector y_hat = Vector::Zero(dy);
  for (int n = 0; n < e.size(); ++n) {
    Vector dz = z[static_cast<std::size_t>(n)] - anchor;
    for (int c = 0; c < dy; ++c) {
      if (mm.is_angle(c)) dz[c] = wrap_angle(dz[c]);
    }
    y_hat += e.w_mu[n] * dz;
  }
  y_hat += anchor;
  for (int c = 0; c < dy; ++c) {
    if (mm.is_angle(c)) y_hat[c] = wrap_angle(y_hat[c]);
  }

  auto residual = [&](const Vector& a) {
    Vector r = a - y_hat;
    for (int c = 0; c < dy; ++c) {
      if (mm.is_angle(c)) r[c] = wrap_angle(r[c]);
    }
    return r;
  };

  Matrix S = mm.R;
  Matrix Pxy = Matrix::Zero(prior.dim(), dy);
  for (int n = 0; n < e.size(); ++n) {
    const Vector dz = residual(z[static_cast<std::size_t>(n)]);
    const Vector dx = e.points[static_cast<std::size_t>(n)] - prior.mean;
    S += e.w_sigma[n] * dz * dz.transpose();
    Pxy += e.w_sigma[n] * dx * dz.transpose();
  }
  S = symmetrize(S);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularInnovation, "innovation covariance is not invertible");
  }
  const Matrix K = llt.solve(Pxy.transpose()).transpose();
  if (!K.allFinite()) throw Error(ErrorCode::SingularInnovation, "non-finite Kalman gain");

  GaussianBelief post;
  post.mean = prior.mean + K * residual(y);
  post.cov = symmetrize(prior.cov - K * S * K.transpose());
  return post;
}

/// Stateful filter: owns the sigma history and the process noise.
class UnscentedKalmanFilter {
 public:
  UnscentedKalmanFilter(std::shared_ptr<const ProcessModel> model, Matrix Q, int history_capacity = 192)
      : model_(std::move(model)),
        Q_(std::move(Q)),
        history_(model_->history_conditioned() ? history_capacity : 1) {}

  Prediction predict(const GaussianBelief& belief, const Vector& u) {
    return fmukf::predict(belief, history_, u, *model_, Q_);
  }

  GaussianBelief update(const Prediction& pred, const Vector& y, const MeasurementModel& mm) const {
    return fmukf::update(pred, y, mm);
  }

  const SigmaHistory& history() const { return history_; }
  const Matrix& process_noise() const { return Q_; }
  void reset() { history_.clear(); }

 private:
  std::shared_ptr<const ProcessModel> model_;
  Matrix Q_;
  SigmaHistory history_;
};

}  // namespace fmukf
