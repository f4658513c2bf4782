#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spgt/autograd.hpp"
#include "spgt/rng.hpp"
#include "spgt/tokenizer.hpp"

namespace spgt {

struct ModelConfig {
  std::size_t embed_dim = 16;
  std::size_t encoder_depth = 2;
  std::size_t encoder_heads = 2;
  std::size_t decoder_dim = 16;
  std::size_t decoder_depth = 1;
  std::size_t decoder_heads = 1;
  double mlp_ratio = 4.0;
  std::size_t p = 4;
  std::size_t k = 3;
  /// Grid the positional tables are created for.
  GridDims max_grid{4, 4, 2};
  /// Stochastic depth rate applied to residual branches while training.
  double drop_path = 0.0;
  double ln_eps = 1e-6;

  std::size_t token_length() const { return p * p * k; }
  std::size_t mlp_hidden() const;
  std::size_t decoder_mlp_hidden() const;
  /// Throws ConfigError on non-positive sizes, head/width mismatch, or a
  /// decoder that is neither narrower nor shallower than the encoder.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  /// d=16, 2 encoder + 1 decoder layers (decoder width 16), p=4, k=3.
  static ModelConfig tiny(GridDims grid);
  /// ViT-Base encoder (d=768, 12 layers, 12 heads), 8x8x3 tokens, 96x96x12 grid.
  static ModelConfig base();
  static ModelConfig large();
  static ModelConfig huge();
  /// Builds a config from a preset name ("tiny", "base", "large", "huge").
  static ModelConfig preset(const std::string& name, GridDims grid);
};

/// Closed-form parameter counts (weights + biases + norms + positional tables).
std::size_t encoder_parameter_count(const ModelConfig& cfg);
std::size_t decoder_parameter_count(const ModelConfig& cfg);

struct ForwardContext {
  bool training = false;
  /// Drives drop-path sampling; required when training with drop_path > 0.
  Rng* rng = nullptr;
};

template <typename T>
struct Linear {
  Parameter<T> weight;  // [in x out]
  Parameter<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

template <typename T>
struct LayerNormParams {
  Parameter<T> gain;
  Parameter<T> bias;
  T eps = T(1e-6);

  LayerNormParams() = default;
  LayerNormParams(std::size_t dim, double eps);
  Var<T> operator()(const Var<T>& x) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

/// Multi-head self-attention: softmax(Q K^T / sqrt(d_head)) V per head,
/// heads concatenated and projected by W_O.
template <typename T>
struct Attention {
  std::size_t heads = 1;
  Parameter<T> wq, wk, wv, wo;  // [d x d]
  Parameter<T> bo;              // [d]

  Attention() = default;
  Attention(std::size_t dim, std::size_t heads, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)).
template <typename T>
struct Block {
  LayerNormParams<T> norm1;
  Attention<T> attn;
  LayerNormParams<T> norm2;
  Linear<T> fc1, fc2;
  double drop_path = 0;

  Block() = default;
  Block(std::size_t dim, std::size_t heads, std::size_t hidden, double ln_eps, double drop_path, Rng& rng);
  Var<T> operator()(const Var<T>& x, const ForwardContext& ctx) const;
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

/// Dual learnable positional embedding: token (r, c, s) receives
/// spatial[r * table_gw + c] + spectral[s].
template <typename T>
struct PosTable {
  std::size_t table_gh = 0, table_gw = 0;
  Parameter<T> spatial;   // [table_gh * table_gw x dim]
  Parameter<T> spectral;  // [gs_max x dim]

  PosTable() = default;
  PosTable(GridDims grid, std::size_t dim, Rng& rng);
  /// Rows for the given token indices on `grid`. Throws ConfigError when the
  /// grid does not fit the tables.
  Var<T> rows(std::span<const std::size_t> tokens, const GridDims& grid) const;
  /// Bilinear resampling (half-pixel centres) of the spatial table.
  void resize_spatial(std::size_t gh, std::size_t gw);
  void collect(ParameterSet<T>& set, const std::string& prefix);
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, Rng& rng);

  /// row_i = token_i E_s + b + pos(index_i).
  Var<T> embed(const TensorT<T>& tokens, std::span<const std::size_t> indices, const GridDims& grid) const;
  /// Runs only the given rows (cost scales with their count).
  Var<T> forward_indices(const TensorT<T>& tokens, std::span<const std::size_t> indices, const GridDims& grid,
                         const ForwardContext& ctx = {}) const;
  /// Encodes the visible rows of `plan`; returns [v x d].
  Var<T> encode(const TensorT<T>& visible_tokens, const MaskPlan& plan, const GridDims& grid,
                const ForwardContext& ctx = {}) const;
  /// Encodes every token in grid order; returns [N x d].
  Var<T> forward_full(const TensorT<T>& tokens, const GridDims& grid, const ForwardContext& ctx = {}) const;

  void resize_pos(std::size_t gh, std::size_t gw) {
    pos_.resize_spatial(gh, gw);
    cfg_.max_grid.gh = gh;
    cfg_.max_grid.gw = gw;
  }
  const PosTable<T>& pos() const { return pos_; }
  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T> parameters();

 private:
  ModelConfig cfg_;
  Linear<T> patch_embed_;
  PosTable<T> pos_;
  std::vector<Block<T>> blocks_;
  LayerNormParams<T> norm_;
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& cfg, Rng& rng);

  /// Projects latents to the decoder width, places them at plan.visible and
  /// the mask token at plan.masked (original order), adds decoder positions.
  Var<T> assemble(const Var<T>& latents, const MaskPlan& plan, const GridDims& grid) const;
  /// Full reconstruction [N x p*p*k] for every token of the grid.
  Var<T> decode(const Var<T>& latents, const MaskPlan& plan, const GridDims& grid,
                const ForwardContext& ctx = {}) const;

  Parameter<T>& mask_token() { return mask_token_; }
  void resize_pos(std::size_t gh, std::size_t gw) { pos_.resize_spatial(gh, gw); }
  const PosTable<T>& pos() const { return pos_; }
  ParameterSet<T> parameters();

 private:
  ModelConfig cfg_;
  Linear<T> embed_;
  Parameter<T> mask_token_;
  PosTable<T> pos_;
  std::vector<Block<T>> blocks_;
  LayerNormParams<T> norm_;
  Linear<T> head_;
};

template <typename T>
class MaskedAutoencoder {
 public:
  MaskedAutoencoder() = default;
  MaskedAutoencoder(const ModelConfig& cfg, std::uint64_t seed);

  /// encode(visible) then decode to all N tokens.
  Var<T> reconstruct(const TensorT<T>& tokens, const MaskPlan& plan, const GridDims& grid,
                     const ForwardContext& ctx = {}) const;

  /// Resamples both spatial positional tables to a new token grid.
  void resize_grid(std::size_t gh, std::size_t gw);

  const ModelConfig& config() const { return cfg_; }
  Encoder<T>& encoder() { return encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }
  Decoder<T>& decoder() { return decoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  /// "encoder.*" then "decoder.*".
  ParameterSet<T> parameters();

 private:
  ModelConfig cfg_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

/// Rows of `tokens` at `indices`.
template <typename T>
TensorT<T> select_rows(const TensorT<T>& tokens, std::span<const std::size_t> indices);

}  // namespace spgt
