#include "spgt/checkpoint.hpp"

#include "spgt/binary_io.hpp"
#include "spgt/data.hpp"

namespace spgt {

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

Checkpoint capture_checkpoint(const ModelConfig& model, const ParameterSet<float>& params,
                              const OptimizerState& opt, Rng::State rng, TrainingPosition pos,
                              std::string metadata) {
  Checkpoint c;
  c.model = model;
  c.metadata = std::move(metadata);
  for (const auto& e : params) c.params.emplace_back(e.name, e.param->value);
  c.optimizer = opt;
  c.rng = rng;
  c.position = pos;
  return c;
}

void apply_checkpoint(const Checkpoint& ckpt, ParameterSet<float>& params, const std::string& prefix) {
  for (const auto& e : params) {
    const Tensor* t = ckpt.find(prefix + e.name);
    if (!t) throw DimensionError("checkpoint has no parameter " + prefix + e.name);
    if (t->shape() != e.param->value.shape())
      throw DimensionError("parameter " + e.name + ": checkpoint shape " + shape_str(t->shape()) +
                           " does not match model shape " + shape_str(e.param->value.shape()));
  }
  for (const auto& e : params) {
    e.param->value = *ckpt.find(prefix + e.name);
    e.param->zero_grad();
  }
}

namespace {

void put_tensor(ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u64(d);
  for (float v : t.data()) w.f32(v);
}

Tensor get_tensor(ByteReader& r, const std::string& what) {
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError(what + ": implausible tensor rank " + std::to_string(rank));
  Shape s(rank);
  std::size_t n = 1;
  for (auto& d : s) {
    d = r.u64();
    if (d == 0) throw FormatError(what + ": zero tensor extent");
    n *= d;
  }
  if (r.remaining() / 4 < n) throw IoError(what + ": truncated tensor payload");
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return Tensor(std::move(s), std::move(v));
}

void put_config(ByteWriter& w, const ModelConfig& c) {
  for (std::size_t v : {c.embed_dim, c.encoder_depth, c.encoder_heads, c.decoder_dim, c.decoder_depth,
                        c.decoder_heads, c.p, c.k, c.max_grid.gh, c.max_grid.gw, c.max_grid.gs})
    w.u64(v);
  w.f64(c.mlp_ratio);
  w.f64(c.drop_path);
  w.f64(c.ln_eps);
}

ModelConfig get_config(ByteReader& r) {
  ModelConfig c;
  for (std::size_t* v : {&c.embed_dim, &c.encoder_depth, &c.encoder_heads, &c.decoder_dim, &c.decoder_depth,
                         &c.decoder_heads, &c.p, &c.k, &c.max_grid.gh, &c.max_grid.gw, &c.max_grid.gs})
    *v = r.u64();
  c.mlp_ratio = r.f64();
  c.drop_path = r.f64();
  c.ln_eps = r.f64();
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes("SPCK", 4);
  w.u16(kCheckpointVersion);
  put_config(w, ckpt.model);
  w.str(ckpt.metadata);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    put_tensor(w, t);
  }
  const auto& o = ckpt.optimizer;
  w.f64(o.cfg.beta1);
  w.f64(o.cfg.beta2);
  w.f64(o.cfg.eps);
  w.f64(o.cfg.weight_decay);
  w.f64(o.cfg.clip_norm);
  w.u64(o.step);
  w.u32(static_cast<std::uint32_t>(o.first_moment.size()));
  for (const auto& t : o.first_moment) put_tensor(w, t);
  for (const auto& t : o.second_moment) put_tensor(w, t);
  w.u64(ckpt.rng.seed);
  w.u64(ckpt.rng.counter);
  w.u64(ckpt.position.stage);
  w.u64(ckpt.position.epoch);
  w.u64(ckpt.position.step);
  return w.buffer();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != "SPCK") throw FormatError(what + ": bad magic, not a checkpoint");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw UnsupportedVersionError(what + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.model = get_config(r);
  c.metadata = r.str();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    c.params.emplace_back(std::move(name), get_tensor(r, what));
  }
  auto& o = c.optimizer;
  o.cfg.beta1 = r.f64();
  o.cfg.beta2 = r.f64();
  o.cfg.eps = r.f64();
  o.cfg.weight_decay = r.f64();
  o.cfg.clip_norm = r.f64();
  o.step = r.u64();
  const std::uint32_t m = r.u32();
  for (std::uint32_t i = 0; i < m; ++i) o.first_moment.push_back(get_tensor(r, what));
  for (std::uint32_t i = 0; i < m; ++i) o.second_moment.push_back(get_tensor(r, what));
  c.rng.seed = r.u64();
  c.rng.counter = r.u64();
  c.position.stage = r.u64();
  c.position.epoch = r.u64();
  c.position.step = r.u64();
  if (r.remaining()) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

MaskedAutoencoder<float> model_from_checkpoint(const Checkpoint& ckpt) {
  MaskedAutoencoder<float> model(ckpt.model, 0);
  auto params = model.parameters();
  apply_checkpoint(ckpt, params);
  return model;
}

}  // namespace spgt
