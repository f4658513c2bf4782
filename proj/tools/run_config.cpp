#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "spgt/error.hpp"

namespace spgt::cli {

using nlohmann::json;

namespace {

// Reads fields of one JSON object, remembering which keys were used so the
// rest can be rejected by name.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename V>
  void read(const std::string& key, V& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    out = convert<V>(j_.at(key), key_path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown key '" + key_path(it.key()) + "'");
  }

  template <typename V>
  static V convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError(path + " must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError(path + " must be a non-negative integer");
      return v.get<V>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError(path + " must be a number");
      return v.get<V>();
    } else {
      static_assert(sizeof(V) == 0, "unsupported config type");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename V>
std::vector<V> read_array(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + " must be an array");
  std::vector<V> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(ObjectReader::convert<V>(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

GridDims read_grid(const json& v, const std::string& path) {
  const auto g = read_array<std::size_t>(v, path);
  if (g.size() != 3) throw ConfigError(path + " must be [gh, gw, gs]");
  return {g[0], g[1], g[2]};
}

template <typename F>
auto wrap(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ObjectiveConfig read_objective(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  ObjectiveConfig o;
  r.read("lambda", o.lambda);
  std::string scope = to_string(o.token_scope), mode = to_string(o.target_mode);
  r.read("token_scope", scope);
  r.read("target_mode", mode);
  r.read("target_eps", o.target_eps);
  r.finish();
  o.token_scope = wrap(r.key_path("token_scope"), [&] { return parse_token_scope(scope); });
  o.target_mode = wrap(r.key_path("target_mode"), [&] { return parse_target_mode(mode); });
  if (!(o.lambda >= 0)) throw ConfigError(r.key_path("lambda") + " must be non-negative");
  if (!(o.target_eps > 0)) throw ConfigError(r.key_path("target_eps") + " must be positive");
  return o;
}

OptimizerConfig read_optimizer(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  OptimizerConfig o;
  r.read("beta1", o.beta1);
  r.read("beta2", o.beta2);
  r.read("eps", o.eps);
  r.read("weight_decay", o.weight_decay);
  r.read("clip_norm", o.clip_norm);
  r.finish();
  if (!(o.beta1 >= 0 && o.beta1 < 1)) throw ConfigError(r.key_path("beta1") + " must lie in [0, 1)");
  if (!(o.beta2 >= 0 && o.beta2 < 1)) throw ConfigError(r.key_path("beta2") + " must lie in [0, 1)");
  if (!(o.eps > 0)) throw ConfigError(r.key_path("eps") + " must be positive");
  if (!(o.weight_decay >= 0)) throw ConfigError(r.key_path("weight_decay") + " must be non-negative");
  if (!(o.clip_norm >= 0)) throw ConfigError(r.key_path("clip_norm") + " must be non-negative");
  return o;
}

void check_schedule(double base_lr, double min_lr, double warmup, const std::string& path) {
  if (!(base_lr > 0)) throw ConfigError(path + ".base_lr must be positive");
  if (!(min_lr >= 0 && min_lr <= base_lr)) throw ConfigError(path + ".min_lr must lie in [0, base_lr]");
  if (!(warmup >= 0 && warmup <= 1)) throw ConfigError(path + ".warmup_fraction must lie in [0, 1]");
}

StageSpec read_stage(const json& j, const std::string& path, std::size_t index) {
  ObjectReader r(j, path);
  StageSpec s;
  s.name = "stage" + std::to_string(index);
  r.read("name", s.name);
  r.read("manifest", s.manifest);
  r.read("height", s.height);
  r.read("width", s.width);
  r.read("epochs", s.epochs);
  r.read("batch_size", s.batch_size);
  r.read("base_lr", s.base_lr);
  r.read("min_lr", s.min_lr);
  r.read("warmup_fraction", s.warmup_fraction);
  r.finish();
  if (s.manifest.empty()) throw ConfigError(r.key_path("manifest") + " is required");
  if (!s.height || !s.width) throw ConfigError(path + ": height and width are required and positive");
  if (!s.epochs) throw ConfigError(r.key_path("epochs") + " must be positive");
  if (!s.batch_size) throw ConfigError(r.key_path("batch_size") + " must be positive");
  check_schedule(s.base_lr, s.min_lr, s.warmup_fraction, path);
  return s;
}

FinetuneSection read_finetune(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  FinetuneSection f;
  FinetuneConfig& c = f.cfg;
  r.read("task", f.task);
  r.read("manifest", f.manifest);
  r.read("val_manifest", f.val_manifest);
  r.read("train_split", f.train_split);
  r.read("height", f.height);
  r.read("width", f.width);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("base_lr", c.base_lr);
  r.read("min_lr", c.min_lr);
  r.read("warmup_fraction", c.warmup_fraction);
  r.read("head_hidden", c.head_hidden);
  r.read("decoder_channels", c.decoder_channels);
  r.read("freeze_encoder", c.freeze_encoder);
  r.read("signed_difference", c.signed_difference);
  r.read("train_fraction", c.train_fraction);
  r.read("crop", c.crop);
  if (r.has("optimizer")) c.optimizer = read_optimizer(r.raw("optimizer"), r.key_path("optimizer"));
  r.finish();
  if (!f.task.empty()) wrap(r.key_path("task"), [&] { return parse_task(f.task); });
  if (!(f.train_split > 0 && f.train_split < 1)) throw ConfigError(r.key_path("train_split") + " must lie in (0, 1)");
  if ((f.height == 0) != (f.width == 0)) throw ConfigError(path + ": give both height and width or neither");
  check_schedule(c.base_lr, c.min_lr, c.warmup_fraction, path);
  wrap(path, [&] {
    c.validate();
    return 0;
  });
  return f;
}

GradcheckSection read_gradcheck(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  GradcheckSection g;
  r.read("height", g.height);
  r.read("width", g.width);
  r.read("bands", g.bands);
  r.read("mask_ratio", g.mask_ratio);
  r.read("eps", g.eps);
  r.read("max_elements", g.max_elements);
  r.finish();
  if (!(g.eps >= 1e-4 && g.eps <= 1e-2)) throw ConfigError(r.key_path("eps") + " must lie in [1e-4, 1e-2]");
  return g;
}

}  // namespace

json model_to_json(const ModelConfig& m) {
  return json{{"embed_dim", m.embed_dim},
              {"encoder_depth", m.encoder_depth},
              {"encoder_heads", m.encoder_heads},
              {"decoder_dim", m.decoder_dim},
              {"decoder_depth", m.decoder_depth},
              {"decoder_heads", m.decoder_heads},
              {"mlp_ratio", m.mlp_ratio},
              {"p", m.p},
              {"k", m.k},
              {"max_grid", {m.max_grid.gh, m.max_grid.gw, m.max_grid.gs}},
              {"drop_path", m.drop_path},
              {"ln_eps", m.ln_eps}};
}

ModelConfig model_from_json(const json& j, ModelConfig m, const std::string& path) {
  ObjectReader r(j, path);
  r.read("embed_dim", m.embed_dim);
  r.read("encoder_depth", m.encoder_depth);
  r.read("encoder_heads", m.encoder_heads);
  r.read("decoder_dim", m.decoder_dim);
  r.read("decoder_depth", m.decoder_depth);
  r.read("decoder_heads", m.decoder_heads);
  r.read("mlp_ratio", m.mlp_ratio);
  r.read("p", m.p);
  r.read("k", m.k);
  if (r.has("max_grid")) m.max_grid = read_grid(r.raw("max_grid"), r.key_path("max_grid"));
  r.read("drop_path", m.drop_path);
  r.read("ln_eps", m.ln_eps);
  if (r.has("preset")) r.raw("preset");
  r.finish();
  return m;
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p;
  p.objective = objective;
  p.optimizer = optimizer;
  p.mask_ratio = mask_ratio;
  p.seed = seed;
  return p;
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  ObjectReader r(doc, "");
  r.read("seed", c.seed);
  r.read("out", c.out);
  if (r.has("model")) {
    const json& mj = r.raw("model");
    if (!mj.is_object()) throw ConfigError("model must be an object");
    if (mj.contains("preset")) c.model_preset = ObjectReader::convert<std::string>(mj.at("preset"), "model.preset");
    c.max_grid_set = mj.contains("max_grid");
    const ModelConfig base = wrap("model.preset", [&] { return ModelConfig::preset(c.model_preset, {}); });
    c.model = model_from_json(mj, base);
  } else {
    c.model = ModelConfig::preset(c.model_preset, {});
  }
  if (r.has("objective")) c.objective = read_objective(r.raw("objective"), "objective");
  if (r.has("optimizer")) c.optimizer = read_optimizer(r.raw("optimizer"), "optimizer");
  if (r.has("pretrain")) {
    ObjectReader pr(r.raw("pretrain"), "pretrain");
    pr.read("mask_ratio", c.mask_ratio);
    if (pr.has("stages")) {
      const json& st = pr.raw("stages");
      if (!st.is_array()) throw ConfigError("pretrain.stages must be an array");
      for (std::size_t i = 0; i < st.size(); ++i)
        c.stages.push_back(read_stage(st[i], "pretrain.stages[" + std::to_string(i) + "]", i));
    }
    pr.finish();
    if (!(c.mask_ratio >= 0 && c.mask_ratio < 1)) throw ConfigError("pretrain.mask_ratio must lie in [0, 1)");
  }
  if (r.has("finetune")) c.finetune = read_finetune(r.raw("finetune"), "finetune");
  if (r.has("gradcheck")) c.gradcheck = read_gradcheck(r.raw("gradcheck"), "gradcheck");
  r.finish();
  wrap("model", [&] {
    c.model.validate();
    return 0;
  });
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_json_file(path), path.parent_path());
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out"] = out;
  j["model"] = model_to_json(model);
  j["model"]["preset"] = model_preset;
  j["objective"] = {{"lambda", objective.lambda},
                    {"token_scope", to_string(objective.token_scope)},
                    {"target_mode", to_string(objective.target_mode)},
                    {"target_eps", objective.target_eps}};
  auto opt_json = [](const OptimizerConfig& o) {
    return json{{"beta1", o.beta1},
                {"beta2", o.beta2},
                {"eps", o.eps},
                {"weight_decay", o.weight_decay},
                {"clip_norm", o.clip_norm}};
  };
  j["optimizer"] = opt_json(optimizer);
  json stages_j = json::array();
  for (const auto& s : stages)
    stages_j.push_back({{"name", s.name},
                        {"manifest", resolve(s.manifest).string()},
                        {"height", s.height},
                        {"width", s.width},
                        {"epochs", s.epochs},
                        {"batch_size", s.batch_size},
                        {"base_lr", s.base_lr},
                        {"min_lr", s.min_lr},
                        {"warmup_fraction", s.warmup_fraction}});
  j["pretrain"] = {{"mask_ratio", mask_ratio}, {"stages", stages_j}};
  if (finetune) {
    const auto& f = *finetune;
    const auto& c = f.cfg;
    j["finetune"] = {{"task", f.task},
                     {"manifest", f.manifest.empty() ? "" : resolve(f.manifest).string()},
                     {"val_manifest", f.val_manifest.empty() ? "" : resolve(f.val_manifest).string()},
                     {"train_split", f.train_split},
                     {"height", f.height},
                     {"width", f.width},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"base_lr", c.base_lr},
                     {"min_lr", c.min_lr},
                     {"warmup_fraction", c.warmup_fraction},
                     {"head_hidden", c.head_hidden},
                     {"decoder_channels", c.decoder_channels},
                     {"freeze_encoder", c.freeze_encoder},
                     {"signed_difference", c.signed_difference},
                     {"train_fraction", c.train_fraction},
                     {"crop", c.crop},
                     {"optimizer", opt_json(c.optimizer)}};
  }
  j["gradcheck"] = {{"height", gradcheck.height},   {"width", gradcheck.width},
                    {"bands", gradcheck.bands},     {"mask_ratio", gradcheck.mask_ratio},
                    {"eps", gradcheck.eps},         {"max_elements", gradcheck.max_elements}};
  return j;
}

SynthDocument parse_synth_spec(const json& doc) {
  SynthDocument d;
  SyntheticSpec& s = d.spec;
  ObjectReader r(doc, "");
  std::string task = to_string(d.task);
  r.read("task", task);
  r.read("height", s.height);
  r.read("width", s.width);
  r.read("bands", s.bands);
  r.read("classes", s.classes);
  if (r.has("signatures")) {
    const json& sj = r.raw("signatures");
    if (!sj.is_array()) throw ConfigError("signatures must be an array of arrays");
    for (std::size_t i = 0; i < sj.size(); ++i)
      s.signatures.push_back(read_array<double>(sj[i], "signatures[" + std::to_string(i) + "]"));
  }
  r.read("rho", s.rho);
  r.read("field_std", s.field_std);
  r.read("noise_std", s.noise_std);
  r.read("value_scale", s.value_scale);
  r.read("samples", s.samples);
  r.read("regions", s.regions);
  r.read("rectangles", s.rectangles);
  r.read("seed", s.seed);
  r.finish();
  d.task = wrap("task", [&] { return parse_task(task); });
  s.validate();
  return d;
}

json SynthDocument::to_json() const {
  return json{{"task", to_string(task)},         {"height", spec.height},       {"width", spec.width},
              {"bands", spec.bands},             {"classes", spec.classes},     {"signatures", spec.signatures},
              {"rho", spec.rho},                 {"field_std", spec.field_std}, {"noise_std", spec.noise_std},
              {"value_scale", spec.value_scale}, {"samples", spec.samples},     {"regions", spec.regions},
              {"rectangles", spec.rectangles},   {"seed", spec.seed}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace spgt::cli
