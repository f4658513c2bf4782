#include "spgt/model.hpp"

#include <algorithm>
#include <cmath>

#include "spgt/ops.hpp"

namespace spgt {

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
Parameter<T> trunc_normal(Shape shape, Rng& rng) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(rng.truncated_normal(kInitStd));
  return Parameter<T>(std::move(t));
}

template <typename T>
Parameter<T> filled(Shape shape, T value) {
  return Parameter<T>(TensorT<T>(std::move(shape), value));
}

std::size_t block_params(std::size_t d, std::size_t hidden) {
  return 2 * d + 4 * d * d + d + 2 * d + d * hidden + hidden + hidden * d + d;
}

}  // namespace

// ---------------------------------------------------------------- config

std::size_t ModelConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(double(embed_dim) * mlp_ratio));
}

std::size_t ModelConfig::decoder_mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(double(decoder_dim) * mlp_ratio));
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || encoder_depth == 0 || encoder_heads == 0 || decoder_dim == 0 || decoder_heads == 0 ||
      p == 0 || k == 0 || max_grid.total() == 0)
    throw ConfigError("model config: sizes must be positive");
  if (embed_dim % encoder_heads)
    throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) + " not divisible by encoder_heads " +
                      std::to_string(encoder_heads));
  if (decoder_dim % decoder_heads)
    throw ConfigError("model config: decoder_dim " + std::to_string(decoder_dim) +
                      " not divisible by decoder_heads " + std::to_string(decoder_heads));
  if (!(decoder_depth < encoder_depth || decoder_dim < embed_dim))
    throw ConfigError("model config: decoder must be narrower or shallower than the encoder");
  if (!(mlp_ratio > 0)) throw ConfigError("model config: mlp_ratio must be positive");
  if (!(drop_path >= 0 && drop_path < 1)) throw ConfigError("model config: drop_path outside [0, 1)");
  if (!(ln_eps > 0)) throw ConfigError("model config: ln_eps must be positive");
}

ModelConfig ModelConfig::tiny(GridDims grid) {
  ModelConfig c;
  c.max_grid = grid;
  return c;
}

namespace {
ModelConfig vit(std::size_t d, std::size_t depth, std::size_t heads) {
  ModelConfig c;
  c.embed_dim = d;
  c.encoder_depth = depth;
  c.encoder_heads = heads;
  c.decoder_dim = d / 2;
  c.decoder_depth = 4;
  c.decoder_heads = (heads + 1) / 2;
  c.p = 8;
  c.k = 3;
  c.max_grid = {12, 12, 4};
  return c;
}
}  // namespace

ModelConfig ModelConfig::base() { return vit(768, 12, 12); }
ModelConfig ModelConfig::large() { return vit(1024, 24, 16); }
ModelConfig ModelConfig::huge() { return vit(1280, 32, 16); }

ModelConfig ModelConfig::preset(const std::string& name, GridDims grid) {
  ModelConfig c;
  if (name == "tiny") c = tiny(grid.total() ? grid : ModelConfig{}.max_grid);
  else if (name == "base") c = base();
  else if (name == "large") c = large();
  else if (name == "huge") c = huge();
  else throw ConfigError("unknown model preset '" + name + "'");
  if (grid.total()) c.max_grid = grid;
  return c;
}

std::size_t encoder_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  return c.token_length() * d + d + c.max_grid.sites() * d + c.max_grid.gs * d +
         c.encoder_depth * block_params(d, c.mlp_hidden()) + 2 * d;
}

std::size_t decoder_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, dd = c.decoder_dim;
  return d * dd + dd + dd + c.max_grid.sites() * dd + c.max_grid.gs * dd +
         c.decoder_depth * block_params(dd, c.decoder_mlp_hidden()) + 2 * dd + dd * c.token_length() +
         c.token_length();
}

// ---------------------------------------------------------------- layers

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(trunc_normal<T>({in, out}, rng)), bias(filled<T>({out}, T(0))) {}

template <typename T>
Var<T> Linear<T>::operator()(const Var<T>& x) const {
  return ops::linear(x, Var<T>::leaf(weight), Var<T>::leaf(bias));
}

template <typename T>
void Linear<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias, false);
}

template <typename T>
LayerNormParams<T>::LayerNormParams(std::size_t dim, double e)
    : gain(filled<T>({dim}, T(1))), bias(filled<T>({dim}, T(0))), eps(static_cast<T>(e)) {}

template <typename T>
Var<T> LayerNormParams<T>::operator()(const Var<T>& x) const {
  return ops::layer_norm(x, Var<T>::leaf(gain), Var<T>::leaf(bias), eps);
}

template <typename T>
void LayerNormParams<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  set.add(prefix + ".gain", gain, false);
  set.add(prefix + ".bias", bias, false);
}

template <typename T>
Attention<T>::Attention(std::size_t dim, std::size_t h, Rng& rng)
    : heads(h),
      wq(trunc_normal<T>({dim, dim}, rng)),
      wk(trunc_normal<T>({dim, dim}, rng)),
      wv(trunc_normal<T>({dim, dim}, rng)),
      wo(trunc_normal<T>({dim, dim}, rng)),
      bo(filled<T>({dim}, T(0))) {}

template <typename T>
Var<T> Attention<T>::operator()(const Var<T>& x) const {
  const std::size_t d = wq.value.dim(0);
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(double(dh)));
  Var<T> q = ops::matmul(x, Var<T>::leaf(wq));
  Var<T> k = ops::matmul(x, Var<T>::leaf(wk));
  Var<T> v = ops::matmul(x, Var<T>::leaf(wv));
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> qh = heads == 1 ? q : ops::slice_cols(q, h * dh, dh);
    Var<T> kh = heads == 1 ? k : ops::slice_cols(k, h * dh, dh);
    Var<T> vh = heads == 1 ? v : ops::slice_cols(v, h * dh, dh);
    Var<T> scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), scale);
    outs.push_back(ops::matmul(ops::softmax_lastaxis(scores), vh));
  }
  Var<T> joined = heads == 1 ? outs[0] : ops::concat_cols(outs);
  return ops::linear(joined, Var<T>::leaf(wo), Var<T>::leaf(bo));
}

template <typename T>
void Attention<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  set.add(prefix + ".wq", wq);
  set.add(prefix + ".wk", wk);
  set.add(prefix + ".wv", wv);
  set.add(prefix + ".wo", wo);
  set.add(prefix + ".bo", bo, false);
}

template <typename T>
Block<T>::Block(std::size_t dim, std::size_t heads, std::size_t hidden, double ln_eps, double dp, Rng& rng)
    : norm1(dim, ln_eps),
      attn(dim, heads, rng),
      norm2(dim, ln_eps),
      fc1(dim, hidden, rng),
      fc2(hidden, dim, rng),
      drop_path(dp) {}

template <typename T>
Var<T> Block<T>::operator()(const Var<T>& x, const ForwardContext& ctx) const {
  // Stochastic depth: drop the residual branch for this sample, otherwise
  // rescale it by 1 / (1 - rate).
  auto residual = [&](const Var<T>& base, const Var<T>& branch) {
    if (!ctx.training || drop_path <= 0) return ops::add(base, branch);
    if (!ctx.rng) throw ConfigError("drop_path > 0 requires a forward rng while training");
    if (ctx.rng->uniform() < drop_path) return base;
    return ops::add(base, ops::scale(branch, static_cast<T>(1.0 / (1.0 - drop_path))));
  };
  Var<T> h = residual(x, attn(norm1(x)));
  return residual(h, fc2(ops::gelu(fc1(norm2(h)))));
}

template <typename T>
void Block<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  norm1.collect(set, prefix + ".norm1");
  attn.collect(set, prefix + ".attn");
  norm2.collect(set, prefix + ".norm2");
  fc1.collect(set, prefix + ".fc1");
  fc2.collect(set, prefix + ".fc2");
}

template <typename T>
PosTable<T>::PosTable(GridDims grid, std::size_t dim, Rng& rng)
    : table_gh(grid.gh),
      table_gw(grid.gw),
      spatial(trunc_normal<T>({grid.gh * grid.gw, dim}, rng)),
      spectral(trunc_normal<T>({grid.gs, dim}, rng)) {}

template <typename T>
Var<T> PosTable<T>::rows(std::span<const std::size_t> tokens, const GridDims& grid) const {
  if (grid.gh > table_gh || grid.gw > table_gw || grid.gs > spectral.value.dim(0))
    throw ConfigError("token grid " + std::to_string(grid.gh) + "x" + std::to_string(grid.gw) + "x" +
                      std::to_string(grid.gs) + " exceeds positional tables " + std::to_string(table_gh) + "x" +
                      std::to_string(table_gw) + "x" + std::to_string(spectral.value.dim(0)) +
                      " (resize the tables first)");
  std::vector<std::size_t> sp(tokens.size()), sc(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= grid.total())
      throw DimensionError("token index " + std::to_string(tokens[i]) + " outside grid of " +
                           std::to_string(grid.total()));
    sp[i] = grid.row_of(tokens[i]) * table_gw + grid.col_of(tokens[i]);
    sc[i] = grid.spectral_of(tokens[i]);
  }
  return ops::add(ops::gather_rows(Var<T>::leaf(spatial), sp), ops::gather_rows(Var<T>::leaf(spectral), sc));
}

template <typename T>
void PosTable<T>::resize_spatial(std::size_t gh, std::size_t gw) {
  if (gh == table_gh && gw == table_gw) return;
  if (gh == 0 || gw == 0) throw ConfigError("cannot resize positional table to an empty grid");
  const std::size_t dim = spatial.value.cols();
  const TensorT<T>& old = spatial.value;
  TensorT<T> out({gh * gw, dim});
  auto coord = [](std::size_t dst, std::size_t in, std::size_t outn) {
    double s = (double(dst) + 0.5) * double(in) / double(outn) - 0.5;
    s = std::clamp(s, 0.0, double(in - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, s - double(i0)};
  };
  for (std::size_t r = 0; r < gh; ++r) {
    auto [r0, r1, fr] = coord(r, table_gh, gh);
    for (std::size_t c = 0; c < gw; ++c) {
      auto [c0, c1, fc] = coord(c, table_gw, gw);
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = (1 - fr) * ((1 - fc) * old[(r0 * table_gw + c0) * dim + j] + fc * old[(r0 * table_gw + c1) * dim + j]) +
                         fr * ((1 - fc) * old[(r1 * table_gw + c0) * dim + j] + fc * old[(r1 * table_gw + c1) * dim + j]);
        out[(r * gw + c) * dim + j] = static_cast<T>(v);
      }
    }
  }
  spatial = Parameter<T>(std::move(out));
  table_gh = gh;
  table_gw = gw;
}

template <typename T>
void PosTable<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  set.add(prefix + ".spatial", spatial, false);
  set.add(prefix + ".spectral", spectral, false);
}

template <typename T>
TensorT<T> select_rows(const TensorT<T>& tokens, std::span<const std::size_t> indices) {
  const std::size_t len = tokens.cols();
  TensorT<T> out({indices.size(), len});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tokens.rows()) throw DimensionError("select_rows: index out of range");
    std::copy_n(&tokens[indices[i] * len], len, &out[i * len]);
  }
  return out;
}

// ---------------------------------------------------------------- encoder

template <typename T>
Encoder<T>::Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  patch_embed_ = Linear<T>(cfg.token_length(), cfg.embed_dim, rng);
  pos_ = PosTable<T>(cfg.max_grid, cfg.embed_dim, rng);
  for (std::size_t i = 0; i < cfg.encoder_depth; ++i)
    blocks_.emplace_back(cfg.embed_dim, cfg.encoder_heads, cfg.mlp_hidden(), cfg.ln_eps, cfg.drop_path, rng);
  norm_ = LayerNormParams<T>(cfg.embed_dim, cfg.ln_eps);
}

template <typename T>
Var<T> Encoder<T>::embed(const TensorT<T>& tokens, std::span<const std::size_t> indices, const GridDims& grid) const {
  if (tokens.rank() != 2 || tokens.dim(1) != cfg_.token_length() || tokens.dim(0) != indices.size())
    throw DimensionError("embed: tokens " + shape_str(tokens.shape()) + " with " + std::to_string(indices.size()) +
                         " indices, token length " + std::to_string(cfg_.token_length()));
  return ops::add(patch_embed_(Var<T>::constant(tokens)), pos_.rows(indices, grid));
}

template <typename T>
Var<T> Encoder<T>::forward_indices(const TensorT<T>& tokens, std::span<const std::size_t> indices,
                                   const GridDims& grid, const ForwardContext& ctx) const {
  Var<T> x = embed(tokens, indices, grid);
  for (const auto& b : blocks_) x = b(x, ctx);
  return norm_(x);
}

template <typename T>
Var<T> Encoder<T>::encode(const TensorT<T>& visible_tokens, const MaskPlan& plan, const GridDims& grid,
                          const ForwardContext& ctx) const {
  if (plan.total != grid.total())
    throw DimensionError("encode: mask plan for " + std::to_string(plan.total) + " tokens, grid has " +
                         std::to_string(grid.total()));
  return forward_indices(visible_tokens, plan.visible, grid, ctx);
}

template <typename T>
Var<T> Encoder<T>::forward_full(const TensorT<T>& tokens, const GridDims& grid, const ForwardContext& ctx) const {
  return encode(tokens, no_mask(grid.total()), grid, ctx);
}

template <typename T>
ParameterSet<T> Encoder<T>::parameters() {
  ParameterSet<T> set;
  patch_embed_.collect(set, "patch_embed");
  pos_.collect(set, "pos");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(set, "blocks." + std::to_string(i));
  norm_.collect(set, "norm");
  return set;
}

// ---------------------------------------------------------------- decoder

template <typename T>
Decoder<T>::Decoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  embed_ = Linear<T>(cfg.embed_dim, cfg.decoder_dim, rng);
  mask_token_ = trunc_normal<T>({cfg.decoder_dim}, rng);
  pos_ = PosTable<T>(cfg.max_grid, cfg.decoder_dim, rng);
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i)
    blocks_.emplace_back(cfg.decoder_dim, cfg.decoder_heads, cfg.decoder_mlp_hidden(), cfg.ln_eps, cfg.drop_path, rng);
  norm_ = LayerNormParams<T>(cfg.decoder_dim, cfg.ln_eps);
  head_ = Linear<T>(cfg.decoder_dim, cfg.token_length(), rng);
}

template <typename T>
Var<T> Decoder<T>::assemble(const Var<T>& latents, const MaskPlan& plan, const GridDims& grid) const {
  const std::size_t v = plan.visible.size(), m = plan.masked.size();
  if (plan.total != grid.total() || v + m != plan.total || latents.value().rows() != v)
    throw DimensionError("decode: latents " + shape_str(latents.shape()) + " misaligned with mask plan (" +
                         std::to_string(v) + " visible of " + std::to_string(plan.total) + ")");
  Var<T> x = embed_(latents);
  if (m > 0) x = ops::concat_rows(x, ops::broadcast_rows(Var<T>::leaf(mask_token_), m));
  // unshuffle: row i of the decoder input comes from position order[i] of [visible; masked]
  std::vector<std::size_t> order(plan.total);
  for (std::size_t j = 0; j < v; ++j) order[plan.visible[j]] = j;
  for (std::size_t j = 0; j < m; ++j) order[plan.masked[j]] = v + j;
  Var<T> full = ops::gather_rows(x, order);
  std::vector<std::size_t> all(plan.total);
  for (std::size_t i = 0; i < plan.total; ++i) all[i] = i;
  return ops::add(full, pos_.rows(all, grid));
}

template <typename T>
Var<T> Decoder<T>::decode(const Var<T>& latents, const MaskPlan& plan, const GridDims& grid,
                          const ForwardContext& ctx) const {
  Var<T> x = assemble(latents, plan, grid);
  for (const auto& b : blocks_) x = b(x, ctx);
  return head_(norm_(x));
}

template <typename T>
ParameterSet<T> Decoder<T>::parameters() {
  ParameterSet<T> set;
  embed_.collect(set, "embed");
  set.add("mask_token", mask_token_, false);
  pos_.collect(set, "pos");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(set, "blocks." + std::to_string(i));
  norm_.collect(set, "norm");
  head_.collect(set, "head");
  return set;
}

// ---------------------------------------------------------------- autoencoder

template <typename T>
MaskedAutoencoder<T>::MaskedAutoencoder(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::derive(seed, {0x696e6974});
  encoder_ = Encoder<T>(cfg_, rng);
  decoder_ = Decoder<T>(cfg_, rng);
}

template <typename T>
Var<T> MaskedAutoencoder<T>::reconstruct(const TensorT<T>& tokens, const MaskPlan& plan, const GridDims& grid,
                                         const ForwardContext& ctx) const {
  if (tokens.rows() != grid.total())
    throw DimensionError("reconstruct: " + std::to_string(tokens.rows()) + " tokens for grid of " +
                         std::to_string(grid.total()));
  TensorT<T> visible = select_rows(tokens, plan.visible);
  Var<T> latents = encoder_.encode(visible, plan, grid, ctx);
  return decoder_.decode(latents, plan, grid, ctx);
}

template <typename T>
void MaskedAutoencoder<T>::resize_grid(std::size_t gh, std::size_t gw) {
  encoder_.resize_pos(gh, gw);
  decoder_.resize_pos(gh, gw);
  cfg_.max_grid.gh = gh;
  cfg_.max_grid.gw = gw;
}

template <typename T>
ParameterSet<T> MaskedAutoencoder<T>::parameters() {
  ParameterSet<T> set;
  set.append(encoder_.parameters(), "encoder.");
  set.append(decoder_.parameters(), "decoder.");
  return set;
}

#define SPGT_INSTANTIATE_MODEL(T)                                                        \
  template struct Linear<T>;                                                             \
  template struct LayerNormParams<T>;                                                    \
  template struct Attention<T>;                                                          \
  template struct Block<T>;                                                              \
  template struct PosTable<T>;                                                           \
  template class Encoder<T>;                                                             \
  template class Decoder<T>;                                                             \
  template class MaskedAutoencoder<T>;                                                   \
  template TensorT<T> select_rows(const TensorT<T>&, std::span<const std::size_t>);

SPGT_INSTANTIATE_MODEL(float)
SPGT_INSTANTIATE_MODEL(double)

}  // namespace spgt
