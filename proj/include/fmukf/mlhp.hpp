#pragma once

#include "fmukf/features.hpp"

#include <random>

namespace fmukf {

/// One training sequence: model input, target, and the first row that counts
/// toward the loss (earlier rows are padding or masked).
struct Sample {
  Matrix input;
  Matrix target;
  Eigen::Index valid_begin = 0;
};

/// Number of zero rows needed in front of a length-L sequence to reach a multiple of p.
inline int left_pad_for(Eigen::Index length, int p) {
  return static_cast<int>((p - length % p) % p);
}

struct PaddedSequence {
  Matrix data;
  int padding = 0;
  int masked = 0;

  Eigen::Index valid_begin() const { return padding + masked; }
};

/// Left-pads with zero rows to a multiple of p. With an rng (training), the
/// first r ~ U{0..p-1} original rows are also zeroed.
inline PaddedSequence pad_and_mask(const Matrix& seq, int p, Rng* rng = nullptr) {
  PaddedSequence out;
  out.padding = left_pad_for(seq.rows(), p);
  out.data = Matrix::Zero(seq.rows() + out.padding, seq.cols());
  out.data.bottomRows(seq.rows()) = seq;
  if (rng != nullptr && p > 1) {
    out.masked = std::uniform_int_distribution<int>(0, p - 1)(*rng);
    out.masked = std::min<int>(out.masked, static_cast<int>(seq.rows()));
    out.data.middleRows(out.padding, out.masked).setZero();
  }
  return out;
}

inline Sample pad_sample(Sample s, int p, Rng* rng) {
  auto in = pad_and_mask(s.input, p, rng);
  Matrix target = Matrix::Zero(in.data.rows(), s.target.cols());
  target.bottomRows(s.target.rows()) = s.target;
  return {std::move(in.data), std::move(target), in.valid_begin() + s.valid_begin};
}

struct MlhpNoise {
  double state = 0.0;    ///< std in normalized units
  double control = 0.0;  ///< std in normalized units
};

/// Masked long-horizon window over steps [start, start + length): inputs carry
/// noisy state and control for k < context, only noisy control afterwards;
/// targets are the encoded next states.
inline Sample mlhp_batch(const Series& s, std::size_t start, int length, int context, const NormStats& stats,
                         const MlhpNoise& noise, Rng* rng) {
  if (context < 1) throw Error(ErrorCode::ConfigError, "context length must be positive");
  if (s.size() < static_cast<std::size_t>(context) + 1 || start + static_cast<std::size_t>(length) + 1 > s.size()) {
    throw Error(ErrorCode::TrajectoryTooShort, "trajectory too short for the requested window");
  }
  const FeatureLayout& lay = stats.layout;
  const int ds = lay.encoded_state_dim(), dc = lay.control_dim;
  Sample out;
  out.input.resize(length, lay.encoded_input_dim());
  out.target.resize(length, ds);
  std::normal_distribution<double> nd;
  auto jitter = [&](double sd) { return (rng != nullptr && sd > 0) ? sd * nd(*rng) : 0.0; };
  for (int k = 0; k < length; ++k) {
    const std::size_t t = start + static_cast<std::size_t>(k);
    if (k < context) {
      Vector z = stats.encode_state(s.states[t]);
      for (int j = 0; j < ds; ++j) z[j] += jitter(noise.state);
      out.input.row(k).head(ds) = z.transpose();
    } else {
      out.input.row(k).head(ds).setZero();
    }
    Vector c = stats.encode_control(s.controls[t]);
    for (int j = 0; j < dc; ++j) c[j] += jitter(noise.control);
    out.input.row(k).tail(dc) = c.transpose();
    out.target.row(k) = stats.encode_state(s.states[t + 1]).transpose();
  }
  return out;
}

}  // namespace fmukf
