#pragma once

#include "fmukf/error.hpp"
#include "fmukf/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace fmukf::nn {

struct SeqModelConfig {
  int patch_size = 2;
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int mlp_width = 256;
  int residual_block_width = 256;
  double dropout = 0.01;
  int max_sequence_length = 192;
  int input_dim = 14;
  int output_dim = 12;

  int max_tokens() const { return max_sequence_length / patch_size; }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, "model config: " + m); };
    if (patch_size < 1 || embed_dim < 1 || n_layers < 0 || n_heads < 1 || mlp_width < 1 ||
        residual_block_width < 1 || max_sequence_length < 1 || input_dim < 1 || output_dim < 1) {
      fail("sizes must be positive");
    }
    if (max_sequence_length % patch_size != 0) fail("max_sequence_length must be a multiple of patch_size");
    if (embed_dim % n_heads != 0) fail("embed_dim must be divisible by n_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  }

  /// Small model used for tests and desk-scale runs.
  static SeqModelConfig desk(int input_dim, int output_dim) {
    SeqModelConfig c;
    c.input_dim = input_dim;
    c.output_dim = output_dim;
    return c;
  }

  /// Full-size model (128 wide, 8 layers, 32 heads, 1024-wide MLP and residual blocks).
  static SeqModelConfig full(int input_dim, int output_dim) {
    SeqModelConfig c;
    c.embed_dim = 128;
    c.n_layers = 8;
    c.n_heads = 32;
    c.mlp_width = 1024;
    c.residual_block_width = 1024;
    c.input_dim = input_dim;
    c.output_dim = output_dim;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const SeqModelConfig& c) {
  j = {{"patch_size", c.patch_size},
       {"embed_dim", c.embed_dim},
       {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},
       {"mlp_width", c.mlp_width},
       {"residual_block_width", c.residual_block_width},
       {"dropout", c.dropout},
       {"max_sequence_length", c.max_sequence_length},
       {"input_dim", c.input_dim},
       {"output_dim", c.output_dim}};
}

inline void from_json(const nlohmann::json& j, SeqModelConfig& c) {
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.mlp_width = j.value("mlp_width", c.mlp_width);
  c.residual_block_width = j.value("residual_block_width", c.residual_block_width);
  c.dropout = j.value("dropout", c.dropout);
  c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
}

/// Groups p consecutive rows into one token row.
template <typename S>
Mat<S> patch(const Mat<S>& seq, int p) {
  const Eigen::Index L = seq.rows(), F = seq.cols();
  if (L % p != 0) throw Error(ErrorCode::LengthMismatch, "sequence length is not a multiple of the patch size");
  Mat<S> tokens(L / p, F * p);
  for (Eigen::Index t = 0; t < L / p; ++t)
    for (int j = 0; j < p; ++j) tokens.block(t, j * F, 1, F) = seq.row(t * p + j);
  return tokens;
}

template <typename S>
Mat<S> depatch(const Mat<S>& tokens, int p) {
  const Eigen::Index T = tokens.rows(), F = tokens.cols() / p;
  Mat<S> seq(T * p, F);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int j = 0; j < p; ++j) seq.row(t * p + j) = tokens.block(t, j * F, 1, F);
  return seq;
}

/// Decoder-only transformer over patched sequences. Maps an L x input_dim
/// sequence to an L x output_dim sequence; outputs at patch t depend only on
/// input patches <= t.
template <typename S>
class SeqModel {
 public:
  struct Cache {
    typename ResidualBlock<S>::Cache embed;
    std::vector<typename DecoderLayer<S>::Cache> layers;
    typename LayerNorm<S>::Cache final_norm;
    Mat<S> normed;
    typename ResidualBlock<S>::Cache head;
    Eigen::Index tokens = 0;
  };

  explicit SeqModel(const SeqModelConfig& cfg, std::uint64_t seed = 0)
      : cfg_(cfg), store_(std::make_unique<ParamStore<S>>()) {
    cfg_.validate();
    auto& st = *store_;
    const int p = cfg_.patch_size, D = cfg_.embed_dim;
    embed_ = ResidualBlock<S>(st, "embed", p * cfg_.input_dim, cfg_.residual_block_width, D);
    position_ = st.add("position", cfg_.max_tokens(), D);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      layers_.emplace_back(st, "layer" + std::to_string(l), D, cfg_.n_heads, cfg_.mlp_width, cfg_.dropout);
    }
    final_norm_ = LayerNorm<S>(st, "final_norm", D);
    head_ = ResidualBlock<S>(st, "head", D, cfg_.residual_block_width, p * cfg_.output_dim);
    initialize(seed);
  }

  SeqModel(SeqModel&&) noexcept = default;
  SeqModel& operator=(SeqModel&&) noexcept = default;

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    embed_.init(rng);
    init_normal(*position_, 0.02, rng);
    const double gain = 1.0 / std::sqrt(2.0 * std::max(1, cfg_.n_layers));
    for (auto& l : layers_) l.init(rng, gain);
    head_.init(rng);
  }

  const SeqModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return *store_; }
  const ParamStore<S>& params() const { return *store_; }
  std::size_t parameter_count() const { return store_->count(); }

  /// Output projection pieces, exposed for tests.
  ResidualBlock<S>& head() { return head_; }

  void check_length(Eigen::Index L) const {
    if (L > cfg_.max_sequence_length) {
      throw Error(ErrorCode::SequenceTooLong, "sequence of " + std::to_string(L) + " steps exceeds " +
                                                  std::to_string(cfg_.max_sequence_length));
    }
    if (L < 1 || L % cfg_.patch_size != 0) {
      throw Error(ErrorCode::LengthMismatch, "sequence length must be a positive multiple of the patch size");
    }
  }

  /// Training-mode forward when `rng` is non-null (dropout active).
  Mat<S> forward(const Mat<S>& input, Cache& c, std::mt19937_64* rng = nullptr) const {
    check_length(input.rows());
    if (input.cols() != cfg_.input_dim) throw Error(ErrorCode::LengthMismatch, "input feature width mismatch");
    Mat<S> h = embed_.forward(patch(input, cfg_.patch_size), c.embed);
    c.tokens = h.rows();
    h += position_->value.topRows(h.rows());
    c.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) h = layers_[l].forward(h, c.layers[l], rng);
    c.normed = final_norm_.forward(h, c.final_norm);
    return depatch(head_.forward(c.normed, c.head), cfg_.patch_size);
  }

  Mat<S> forward(const Mat<S>& input) const {
    Cache c;
    return forward(input, c, nullptr);
  }

  /// Accumulates parameter gradients for d(loss)/d(output).
  void backward(const Cache& c, const Mat<S>& grad_output) const {
    Mat<S> g = final_norm_.backward(c.final_norm, head_.backward(c.head, patch(grad_output, cfg_.patch_size)));
    for (std::size_t l = layers_.size(); l-- > 0;) g = layers_[l].backward(c.layers[l], g);
    position_->grad.topRows(c.tokens) += g;
    embed_.backward(c.embed, g);
  }

 private:
  SeqModelConfig cfg_;
  std::unique_ptr<ParamStore<S>> store_;
  ResidualBlock<S> embed_;
  Param<S>* position_ = nullptr;
  std::vector<DecoderLayer<S>> layers_;
  LayerNorm<S> final_norm_;
  ResidualBlock<S> head_;
};

}  // namespace fmukf::nn
