#pragma once

#include "fmukf/error.hpp"
#include "fmukf/rng.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace fmukf {

struct PinkNoiseConfig {
  int length = 384;
  double dt = 1.0;
  /// Frequencies below this (Hz) get the spectral weight of the cutoff.
  /// Values at or below 1/(length*dt) disable the cutoff.
  double low_cut = 0.0;
  double amplitude = 1.0;  ///< standard deviation after scaling
  double offset = 0.0;
  double clamp_lo = -std::numeric_limits<double>::infinity();
  double clamp_hi = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

inline void validate(const PinkNoiseConfig& cfg) {
  if (cfg.length < 2) throw Error(ErrorCode::ConfigError, "pink noise length must be >= 2");
  if (!(cfg.amplitude >= 0.0)) throw Error(ErrorCode::ConfigError, "amplitude must be >= 0");
  if (!(cfg.dt > 0.0)) throw Error(ErrorCode::ConfigError, "dt must be > 0");
  if (!(cfg.clamp_lo <= cfg.clamp_hi)) throw Error(ErrorCode::ConfigError, "clamp_lo > clamp_hi");
}

/// 1/f noise by spectral synthesis: complex Gaussian bins weighted by
/// f^-1/2, inverse real FFT, standardised, then scaled, offset and clamped.
inline std::vector<double> pink_noise(const PinkNoiseConfig& cfg) {
  validate(cfg);
  const int n = cfg.length;
  const int bins = n / 2 + 1;
  const double f_min = std::max(cfg.low_cut, 1.0 / (n * cfg.dt));

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(bins));
  spectrum[0] = 0.0;
  for (int k = 1; k < bins; ++k) {
    const double f = std::max(k / (n * cfg.dt), f_min);
    const double w = 1.0 / std::sqrt(f);
    const double re = normal(rng);
    const double im = normal(rng);
    spectrum[static_cast<std::size_t>(k)] = {w * re, w * im};
  }
  if (n % 2 == 0) spectrum.back() = {spectrum.back().real() * std::sqrt(2.0), 0.0};

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> signal;
  fft.inv(signal, spectrum, n);

  double mean = 0.0;
  for (double s : signal) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : signal) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / n);
  const double scale = sd > 0.0 ? cfg.amplitude / sd : 0.0;
  for (double& s : signal) {
    s = std::clamp(cfg.offset + (s - mean) * scale, cfg.clamp_lo, cfg.clamp_hi);
  }
  return signal;
}

}  // namespace fmukf
