#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <vector>

namespace fmukf::nn {

// Activations are (rows = time steps or tokens) x (cols = features).
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
};

/// Owns every trainable tensor; element addresses are stable.
template <typename S>
class ParamStore {
 public:
  Param<S>* add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    params_.push_back({std::move(name), Mat<S>::Zero(rows, cols), Mat<S>::Zero(rows, cols)});
    return &params_.back();
  }

  std::deque<Param<S>>& all() { return params_; }
  const std::deque<Param<S>>& all() const { return params_; }

  Param<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

 private:
  std::deque<Param<S>> params_;
};

template <typename S>
void init_normal(Param<S>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(nd(rng));
}

template <typename S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
Mat<S> silu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return v * sigmoid(v); });
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy) {
  return dy.binaryExpr(x, [](S g, S v) {
    const S s = sigmoid(v);
    return g * s * (S(1) + v * (S(1) - s));
  });
}

/// y = x W + b
template <typename S>
struct Linear {
  Param<S>* weight = nullptr;
  Param<S>* bias = nullptr;

  Linear() = default;
  Linear(ParamStore<S>& store, const std::string& name, int in, int out)
      : weight(store.add(name + ".weight", in, out)), bias(store.add(name + ".bias", 1, out)) {}

  void init(std::mt19937_64& rng, double gain = 1.0) {
    init_normal(*weight, gain / std::sqrt(static_cast<double>(weight->value.rows())), rng);
    bias->value.setZero();
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * weight->value;
    y.rowwise() += bias->value.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) const {
    weight->grad.noalias() += x.transpose() * dy;
    bias->grad += dy.colwise().sum();
    return dy * weight->value.transpose();
  }
};

template <typename S>
struct LayerNorm {
  Param<S>* gain = nullptr;
  Param<S>* shift = nullptr;
  static constexpr double kEps = 1e-5;

  struct Cache {
    Mat<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParamStore<S>& store, const std::string& name, int dim)
      : gain(store.add(name + ".gain", 1, dim)), shift(store.add(name + ".shift", 1, dim)) {
    gain->value.setOnes();
  }

  Mat<S> forward(const Mat<S>& x, Cache& c) const {
    const auto n = static_cast<S>(x.cols());
    c.xhat.resize(x.rows(), x.cols());
    c.inv_std.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const S mean = x.row(i).sum() / n;
      const auto centred = (x.row(i).array() - mean).eval();
      const S var = centred.square().sum() / n;
      c.inv_std[i] = S(1) / std::sqrt(var + static_cast<S>(kEps));
      c.xhat.row(i) = centred * c.inv_std[i];
    }
    Mat<S> y = c.xhat.array().rowwise() * gain->value.row(0).array();
    y.rowwise() += shift->value.row(0);
    return y;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy) const {
    gain->grad += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    shift->grad += dy.colwise().sum();
    const Mat<S> dxhat = dy.array().rowwise() * gain->value.row(0).array();
    const auto n = static_cast<S>(dy.cols());
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const S m1 = dxhat.row(i).sum() / n;
      const S m2 = dxhat.row(i).dot(c.xhat.row(i)) / n;
      dx.row(i) = c.inv_std[i] * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
  }
};

/// Inverted dropout; the mask is empty in eval mode.
template <typename S>
struct Dropout {
  double rate = 0.0;

  Mat<S> forward(const Mat<S>& x, Mat<S>& mask, std::mt19937_64* rng) const {
    if (rng == nullptr || rate <= 0.0) {
      mask.resize(0, 0);
      return x;
    }
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const S keep = static_cast<S>(1.0 / (1.0 - rate));
    mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uni(*rng) < rate ? S(0) : keep;
    return x.cwiseProduct(mask);
  }

  static Mat<S> backward(const Mat<S>& mask, const Mat<S>& dy) {
    return mask.size() == 0 ? dy : Mat<S>(dy.cwiseProduct(mask));
  }
};

/// Two affine layers with SiLU in between plus an affine skip path.
template <typename S>
struct ResidualBlock {
  Linear<S> hidden, out, skip;

  struct Cache {
    Mat<S> x, pre, act;
  };

  ResidualBlock() = default;
  ResidualBlock(ParamStore<S>& store, const std::string& name, int in, int width, int out_dim)
      : hidden(store, name + ".hidden", in, width),
        out(store, name + ".out", width, out_dim),
        skip(store, name + ".skip", in, out_dim) {}

  void init(std::mt19937_64& rng) {
    hidden.init(rng);
    out.init(rng, std::sqrt(0.5));
    skip.init(rng, std::sqrt(0.5));
  }

  Mat<S> forward(const Mat<S>& x, Cache& c) const {
    c.x = x;
    c.pre = hidden.forward(x);
    c.act = silu(c.pre);
    return out.forward(c.act) + skip.forward(x);
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy) const {
    Mat<S> dx = skip.backward(c.x, dy);
    dx += hidden.backward(c.x, silu_backward(c.pre, out.backward(c.act, dy)));
    return dx;
  }
};

/// Causal multi-head self-attention over token rows.
template <typename S>
struct CausalSelfAttention {
  Linear<S> qkv, proj;
  int heads = 1;

  struct Cache {
    Mat<S> x, qkv, concat;
    std::vector<Mat<S>> attn;
  };

  CausalSelfAttention() = default;
  CausalSelfAttention(ParamStore<S>& store, const std::string& name, int dim, int n_heads)
      : qkv(store, name + ".qkv", dim, 3 * dim), proj(store, name + ".proj", dim, dim), heads(n_heads) {}

  Mat<S> forward(const Mat<S>& x, Cache& c) const {
    const Eigen::Index T = x.rows(), D = x.cols(), dh = D / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    c.x = x;
    c.qkv = qkv.forward(x);
    c.concat.resize(T, D);
    c.attn.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(D + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * D + h * dh, dh);
      Mat<S>& a = c.attn[static_cast<std::size_t>(h)];
      a.noalias() = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const S mx = a.row(i).head(i + 1).maxCoeff();
        S sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(a(i, j) - mx);
          sum += a(i, j);
        }
        a.row(i).head(i + 1) /= sum;
        a.row(i).tail(T - i - 1).setZero();
      }
      c.concat.middleCols(h * dh, dh).noalias() = a * v;
    }
    return proj.forward(c.concat);
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy) const {
    const Eigen::Index T = c.x.rows(), D = c.x.cols(), dh = D / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const Mat<S> dconcat = proj.backward(c.concat, dy);
    Mat<S> dqkv(T, 3 * D);
    for (int h = 0; h < heads; ++h) {
      const auto q = c.qkv.middleCols(h * dh, dh);
      const auto k = c.qkv.middleCols(D + h * dh, dh);
      const auto v = c.qkv.middleCols(2 * D + h * dh, dh);
      const Mat<S>& a = c.attn[static_cast<std::size_t>(h)];
      const auto dout = dconcat.middleCols(h * dh, dh);
      const Mat<S> da = dout * v.transpose();
      dqkv.middleCols(2 * D + h * dh, dh).noalias() = a.transpose() * dout;
      Mat<S> ds = a.cwiseProduct(da);
      const Eigen::Matrix<S, Eigen::Dynamic, 1> rows = ds.rowwise().sum();
      ds -= a.cwiseProduct(rows.replicate(1, T));
      ds *= scale;
      dqkv.middleCols(h * dh, dh).noalias() = ds * k;
      dqkv.middleCols(D + h * dh, dh).noalias() = ds.transpose() * q;
    }
    return qkv.backward(c.x, dqkv);
  }
};

/// Pre-norm decoder block: attention and SiLU MLP, each with a residual path.
template <typename S>
struct DecoderLayer {
  LayerNorm<S> norm1, norm2;
  CausalSelfAttention<S> attn;
  Linear<S> fc1, fc2;
  Dropout<S> drop;

  struct Cache {
    typename LayerNorm<S>::Cache n1, n2;
    typename CausalSelfAttention<S>::Cache attn;
    Mat<S> ln1, ln2, pre, act, mask_attn, mask_mlp;
  };

  DecoderLayer() = default;
  DecoderLayer(ParamStore<S>& store, const std::string& name, int dim, int heads, int mlp, double dropout)
      : norm1(store, name + ".norm1", dim),
        norm2(store, name + ".norm2", dim),
        attn(store, name + ".attn", dim, heads),
        fc1(store, name + ".fc1", dim, mlp),
        fc2(store, name + ".fc2", mlp, dim),
        drop{dropout} {}

  void init(std::mt19937_64& rng, double residual_gain) {
    attn.qkv.init(rng);
    attn.proj.init(rng, residual_gain);
    fc1.init(rng);
    fc2.init(rng, residual_gain);
  }

  Mat<S> forward(const Mat<S>& x, Cache& c, std::mt19937_64* rng) const {
    c.ln1 = norm1.forward(x, c.n1);
    Mat<S> h = x + drop.forward(attn.forward(c.ln1, c.attn), c.mask_attn, rng);
    c.ln2 = norm2.forward(h, c.n2);
    c.pre = fc1.forward(c.ln2);
    c.act = silu(c.pre);
    h += drop.forward(fc2.forward(c.act), c.mask_mlp, rng);
    return h;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy) const {
    Mat<S> dh = dy;
    const Mat<S> dmlp = Dropout<S>::backward(c.mask_mlp, dy);
    dh += norm2.backward(c.n2, fc1.backward(c.ln2, silu_backward(c.pre, fc2.backward(c.act, dmlp))));
    const Mat<S> dattn = Dropout<S>::backward(c.mask_attn, dh);
    return dh + norm1.backward(c.n1, attn.backward(c.attn, dattn));
  }
};

}  // namespace fmukf::nn
