#pragma once

#include "fmukf/dataset.hpp"
#include "fmukf/error.hpp"
#include "fmukf/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace fmukf {

/// State/control sequence with dynamic widths, so the learning code also
/// serves toy systems. controls[k] is applied between states[k] and states[k+1].
struct Series {
  std::vector<Vector> states;
  std::vector<Vector> controls;
  std::int64_t id = 0;

  std::size_t size() const { return states.size(); }
};

inline Series to_series(const Trajectory& t) {
  Series s;
  s.id = t.instance_id;
  s.states.reserve(t.size());
  s.controls.reserve(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    s.states.emplace_back(t.states[k]);
    s.controls.emplace_back(t.controls[k]);
  }
  return s;
}

/// Which state components are angles; each is encoded as (sin, cos).
struct FeatureLayout {
  int state_dim = kStateDim;
  int control_dim = kControlDim;
  std::vector<int> angle_indices = {idx::phi, idx::psi};

  bool is_angle(int i) const {
    return std::find(angle_indices.begin(), angle_indices.end(), i) != angle_indices.end();
  }
  int encoded_state_dim() const { return state_dim + static_cast<int>(angle_indices.size()); }
  int encoded_input_dim() const { return encoded_state_dim() + control_dim; }

  /// Offset of component i inside the encoded state vector.
  int encoded_offset(int i) const {
    int off = 0;
    for (int j = 0; j < i; ++j) off += is_angle(j) ? 2 : 1;
    return off;
  }

  static FeatureLayout ship() { return {}; }

  bool operator==(const FeatureLayout&) const = default;
};

inline void to_json(nlohmann::json& j, const FeatureLayout& l) {
  j = {{"state_dim", l.state_dim}, {"control_dim", l.control_dim}, {"angle_indices", l.angle_indices}};
}

inline void from_json(const nlohmann::json& j, FeatureLayout& l) {
  l.state_dim = j.at("state_dim").get<int>();
  l.control_dim = j.at("control_dim").get<int>();
  l.angle_indices = j.at("angle_indices").get<std::vector<int>>();
}

/// Angle expansion without scaling.
inline Vector expand_state(const Vector& x, const FeatureLayout& layout) {
  if (x.size() != layout.state_dim) throw Error(ErrorCode::LengthMismatch, "state width mismatch");
  Vector z(layout.encoded_state_dim());
  int o = 0;
  for (int i = 0; i < layout.state_dim; ++i) {
    if (layout.is_angle(i)) {
      z[o++] = std::sin(x[i]);
      z[o++] = std::cos(x[i]);
    } else {
      z[o++] = x[i];
    }
  }
  return z;
}

inline Vector collapse_state(const Vector& z, const FeatureLayout& layout) {
  Vector x(layout.state_dim);
  int o = 0;
  for (int i = 0; i < layout.state_dim; ++i) {
    if (layout.is_angle(i)) {
      x[i] = std::atan2(z[o], z[o + 1]);
      o += 2;
    } else {
      x[i] = z[o++];
    }
  }
  return x;
}

/// Per-feature standard scaling of encoded states and controls, fitted on
/// training data only.
struct NormStats {
  FeatureLayout layout;
  Vector state_mean, state_std;
  Vector control_mean, control_std;

  bool fitted() const { return state_mean.size() == layout.encoded_state_dim(); }

  void require_fitted() const {
    if (!fitted()) throw Error(ErrorCode::StatsNotFitted, "normalization statistics not fitted");
  }

  static NormStats fit(const std::vector<const Series*>& data, const FeatureLayout& layout) {
    const int ds = layout.encoded_state_dim(), dc = layout.control_dim;
    Vector s_sum = Vector::Zero(ds), s_sq = Vector::Zero(ds), c_sum = Vector::Zero(dc), c_sq = Vector::Zero(dc);
    double n = 0;
    for (const Series* s : data) {
      for (std::size_t k = 0; k < s->size(); ++k) {
        const Vector z = expand_state(s->states[k], layout);
        s_sum += z;
        s_sq += z.cwiseProduct(z);
        c_sum += s->controls[k];
        c_sq += s->controls[k].cwiseProduct(s->controls[k]);
        n += 1;
      }
    }
    if (n < 2) throw Error(ErrorCode::ConfigError, "not enough samples to fit normalization");
    NormStats st;
    st.layout = layout;
    auto finish = [n](const Vector& sum, const Vector& sq, Vector& mean, Vector& sd) {
      mean = sum / n;
      sd = (sq / n - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
      // Constant features would divide by zero; leave them unscaled.
      for (Eigen::Index i = 0; i < sd.size(); ++i)
        if (!(sd[i] > 1e-12)) sd[i] = 1.0;
    };
    finish(s_sum, s_sq, st.state_mean, st.state_std);
    finish(c_sum, c_sq, st.control_mean, st.control_std);
    return st;
  }

  Vector encode_state(const Vector& x) const {
    require_fitted();
    return (expand_state(x, layout) - state_mean).cwiseQuotient(state_std);
  }

  Vector encode_control(const Vector& u) const {
    require_fitted();
    if (u.size() != layout.control_dim) throw Error(ErrorCode::LengthMismatch, "control width mismatch");
    return (u - control_mean).cwiseQuotient(control_std);
  }

  /// Unscales, then maps (sin, cos) pairs back to angles.
  Vector decode_state(const Vector& z) const {
    require_fitted();
    return collapse_state(z.cwiseProduct(state_std) + state_mean, layout);
  }
};

inline void to_json(nlohmann::json& j, const NormStats& s) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j = {{"layout", s.layout},
       {"state_mean", vec(s.state_mean)},
       {"state_std", vec(s.state_std)},
       {"control_mean", vec(s.control_mean)},
       {"control_std", vec(s.control_std)}};
}

inline void from_json(const nlohmann::json& j, NormStats& s) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  s.layout = j.at("layout").get<FeatureLayout>();
  s.state_mean = vec(j.at("state_mean"));
  s.state_std = vec(j.at("state_std"));
  s.control_mean = vec(j.at("control_mean"));
  s.control_std = vec(j.at("control_std"));
  if (s.state_mean.size() != s.layout.encoded_state_dim() || s.state_std.size() != s.state_mean.size() ||
      s.control_mean.size() != s.layout.control_dim || s.control_std.size() != s.control_mean.size()) {
    throw Error(ErrorCode::ConfigError, "normalization statistics do not match their layout");
  }
  if ((s.state_std.array() <= 0).any() || (s.control_std.array() <= 0).any()) {
    throw Error(ErrorCode::ConfigError, "normalization std must be positive");
  }
}

/// Rows a_k = concat(encoded x_k, encoded u_k).
inline Matrix encode_features(const std::vector<Vector>& states, const std::vector<Vector>& controls,
                              const NormStats& stats) {
  stats.require_fitted();
  if (states.size() != controls.size()) throw Error(ErrorCode::LengthMismatch, "states/controls length mismatch");
  const int ds = stats.layout.encoded_state_dim();
  Matrix a(static_cast<Eigen::Index>(states.size()), stats.layout.encoded_input_dim());
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    a.row(r).head(ds) = stats.encode_state(states[k]).transpose();
    a.row(r).tail(stats.layout.control_dim) = stats.encode_control(controls[k]).transpose();
  }
  return a;
}

}  // namespace fmukf
