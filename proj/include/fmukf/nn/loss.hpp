#pragma once

#include "fmukf/error.hpp"
#include "fmukf/types.hpp"

#include <cmath>

namespace fmukf::nn {

inline double huber(double x, double delta = 1.0) {
  const double a = std::abs(x);
  return a < delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

inline double huber_grad(double x, double delta = 1.0) {
  return std::abs(x) < delta ? x : (x > 0 ? delta : -delta);
}

inline constexpr double kMinStepNormalizer = 1e-12;

/// Mean absolute step-to-step change of each target feature over rows
/// [begin, end). Throws DegenerateFeature for a constant feature.
inline Vector step_normalizer(const Matrix& target, Eigen::Index begin, Eigen::Index end) {
  if (end - begin < 2) throw Error(ErrorCode::TrajectoryTooShort, "loss needs at least two target steps");
  const Matrix diff = target.middleRows(begin + 1, end - begin - 1) - target.middleRows(begin, end - begin - 1);
  Vector n = diff.cwiseAbs().colwise().mean().transpose();
  for (Eigen::Index j = 0; j < n.size(); ++j) {
    if (!(n[j] >= kMinStepNormalizer)) {
      throw Error(ErrorCode::DegenerateFeature, "target feature " + std::to_string(j) + " is constant");
    }
  }
  return n;
}

/// Huber loss of per-feature normalized errors, summed over features and
/// averaged over rows [begin, end). Writes d(loss)/d(pred) into `grad`
/// (zero outside the range) when non-null.
inline double normalized_loss(const Matrix& pred, const Matrix& target, Eigen::Index begin, Eigen::Index end,
                              Matrix* grad = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw Error(ErrorCode::LengthMismatch, "prediction and target shapes differ");
  }
  if (begin < 0 || end > pred.rows() || begin >= end) throw Error(ErrorCode::LengthMismatch, "bad loss range");
  const Vector norm = step_normalizer(target, begin, end);
  const double steps = static_cast<double>(end - begin);
  if (grad != nullptr) grad->setZero(pred.rows(), pred.cols());
  double loss = 0.0;
  for (Eigen::Index k = begin; k < end; ++k) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      const double e = (pred(k, j) - target(k, j)) / norm[j];
      loss += huber(e);
      if (grad != nullptr) (*grad)(k, j) = huber_grad(e) / (norm[j] * steps);
    }
  }
  return loss / steps;
}

inline double normalized_loss(const Matrix& pred, const Matrix& target) {
  return normalized_loss(pred, target, 0, pred.rows());
}

}  // namespace fmukf::nn
