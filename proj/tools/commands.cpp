#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "render.hpp"
#include "spgt/checkpoint.hpp"
#include "spgt/data.hpp"
#include "spgt/error.hpp"

namespace spgt::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig load_config(const CommonOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig c = load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  if (c.out.empty()) throw ConfigError("no output directory: pass --out or set \"out\" in the config");
  return c;
}

fs::path out_dir(const RunConfig& c) {
  const fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << "\n";
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << line << "\n";
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) lines.push_back(l);
  return lines;
}

std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- pretraining

std::vector<DatasetManifest> load_stage_manifests(const RunConfig& c) {
  std::vector<DatasetManifest> ms;
  for (const auto& s : c.stages) ms.push_back(load_manifest(c.resolve(s.manifest)));
  for (std::size_t i = 1; i < ms.size(); ++i)
    if (ms[i].bands != ms[0].bands)
      throw DataError("stage " + c.stages[i].name + " has bands that differ from stage " + c.stages[0].name);
  return ms;
}

// Fills max_grid from the first stage when the config leaves it open.
void settle_grid(RunConfig& c, std::size_t bands) {
  const GridDims g = grid_dims_for(c.stages.front().height, c.stages.front().width, bands, c.model.p, c.model.k);
  if (!c.max_grid_set) c.model.max_grid = g;
  if (c.model.max_grid.gs != g.gs)
    throw ConfigError("model.max_grid has " + std::to_string(c.model.max_grid.gs) + " spectral groups but the data has " +
                      std::to_string(bands) + " bands (" + std::to_string(g.gs) + " groups of k=" +
                      std::to_string(c.model.k) + ")");
}

json pretrain_metadata(const RunConfig& c, const DatasetManifest& m) {
  return json{{"kind", "pretrain"},
              {"mask_ratio", c.mask_ratio},
              {"objective",
               {{"lambda", c.objective.lambda},
                {"token_scope", to_string(c.objective.token_scope)},
                {"target_mode", to_string(c.objective.target_mode)},
                {"target_eps", c.objective.target_eps}}},
              {"bands", m.bands},
              {"band_min", m.band_min},
              {"band_max", m.band_max},
              {"band_mean", m.band_mean},
              {"band_std", m.band_std}};
}

struct PretrainOutcome {
  ProgressiveResult result;
  MaskedAutoencoder<float> model;
};

using EpochHook = std::function<bool(const EpochRecord&, const Checkpoint&)>;

PretrainOutcome run_pretraining(RunConfig& c, const std::optional<Checkpoint>& resume, const EpochHook& hook) {
  if (c.stages.empty()) throw ConfigError("pretrain.stages is empty");
  const auto manifests = load_stage_manifests(c);
  settle_grid(c, manifests.front().bands.size());
  PretrainOutcome out;
  out.model = MaskedAutoencoder<float>(c.model, c.seed);
  ProgressivePlan plan{c.stages};
  const std::string meta = pretrain_metadata(c, manifests.front()).dump();
  auto load = [&](const StageSpec& s, std::size_t i) {
    return StageData{load_images(manifests[i], s.height, s.width), manifests[i].standardization()};
  };
  auto on_epoch = [&](const EpochRecord& rec, const Checkpoint& ck) {
    Checkpoint with_meta = ck;
    with_meta.metadata = meta;
    return hook ? hook(rec, with_meta) : true;
  };
  out.result = progressive_pretrain(plan, out.model, c.pretrain_config(), load, resume, on_epoch);
  out.result.final_checkpoint.metadata = meta;
  return out;
}

// ---------------------------------------------------------------- fine-tuning

struct TaskSplit {
  DatasetManifest train, val;
};

TaskSplit finetune_split(const RunConfig& c, TaskType task) {
  const auto& f = *c.finetune;
  if (f.manifest.empty()) throw ConfigError("finetune.manifest is required");
  DatasetManifest m = load_manifest(c.resolve(f.manifest));
  if (m.task != task)
    throw DataError("manifest " + f.manifest + " is a " + to_string(m.task) + " dataset, not " + to_string(task));
  if (!f.val_manifest.empty()) {
    DatasetManifest v = load_manifest(c.resolve(f.val_manifest));
    if (v.task != task) throw DataError("validation manifest is a " + to_string(v.task) + " dataset");
    if (v.bands != m.bands) throw DataError("validation manifest bands differ from the training manifest");
    return {std::move(m), std::move(v)};
  }
  auto [tr, va] = split(m, {f.train_split, 1.0 - f.train_split}, m.split_seed);
  return {std::move(tr), std::move(va)};
}

TaskType resolve_task(const FinetuneOptions& o, const RunConfig& c) {
  if (!c.finetune) throw ConfigError("config has no \"finetune\" section");
  std::string t = !o.task.empty() ? o.task : c.finetune->task;
  if (t.empty()) throw ConfigError("no task: pass --task or set finetune.task");
  const TaskType task = parse_task(t);
  if (task == TaskType::pretrain) throw ConfigError("pretrain is not a fine-tuning task");
  return task;
}

std::pair<std::size_t, std::size_t> input_size(const RunConfig& c, const DatasetManifest& m) {
  if (c.finetune->height) return {c.finetune->height, c.finetune->width};
  if (m.samples.empty()) throw DataError("dataset has no samples");
  const SpectralImage first = read_raster(m.resolve(m.samples.front().image));
  return {first.height(), first.width()};
}

MetricsReport train_task(TaskModel& tm, const TaskSplit& s, std::size_t h, std::size_t w) {
  switch (tm.task) {
    case TaskType::classify:
      return finetune_classify(tm, load_classify(s.train, h, w), load_classify(s.val, h, w));
    case TaskType::multilabel:
      return finetune_multilabel(tm, load_multilabel(s.train, h, w), load_multilabel(s.val, h, w));
    case TaskType::segment:
      return finetune_segment(tm, load_segment(s.train, h, w), load_segment(s.val, h, w));
    case TaskType::change:
      return finetune_change(tm, load_change(s.train, h, w), load_change(s.val, h, w));
    default:
      throw ConfigError("pretrain is not a fine-tuning task");
  }
}

MetricsReport eval_task(const TaskModel& tm, const DatasetManifest& val, std::size_t h, std::size_t w) {
  switch (tm.task) {
    case TaskType::classify: return evaluate_classify(tm, load_classify(val, h, w));
    case TaskType::multilabel: return evaluate_multilabel(tm, load_multilabel(val, h, w));
    case TaskType::segment: return evaluate_segment(tm, load_segment(val, h, w));
    case TaskType::change: return evaluate_change(tm, load_change(val, h, w));
    default: throw ConfigError("pretrain is not a fine-tuning task");
  }
}

std::size_t class_count(TaskType task, const DatasetManifest& m) {
  if (task == TaskType::change) return 2;
  if (m.classes.empty()) throw DataError("manifest lists no classes");
  return m.classes.size();
}

void check_encoder_bands(const Encoder<float>& enc, std::size_t bands, const std::string& what) {
  const ModelConfig& mc = enc.config();
  if (bands % mc.k || bands / mc.k != mc.max_grid.gs)
    throw DimensionError(what + " expects " + std::to_string(mc.max_grid.gs * mc.k) + " bands (" +
                         std::to_string(mc.max_grid.gs) + " spectral groups of k=" + std::to_string(mc.k) +
                         ") but the dataset has " + std::to_string(bands));
}

struct FinetuneOutcome {
  TaskModel model;
  MetricsReport report;
};

FinetuneOutcome run_finetune(const RunConfig& c, TaskType task, const Encoder<float>& encoder,
                             const std::string& encoder_name) {
  const TaskSplit s = finetune_split(c, task);
  check_encoder_bands(encoder, s.train.bands.size(), encoder_name);
  const auto [h, w] = input_size(c, s.train);
  FinetuneConfig fc = c.finetune->cfg;
  fc.seed = c.seed;
  FinetuneOutcome out;
  out.model = make_task_model(task, encoder, class_count(task, s.train), h, w, fc);
  out.report = train_task(out.model, s, h, w);
  return out;
}

Encoder<float> initial_encoder(RunConfig& c, const std::string& checkpoint, std::size_t bands) {
  if (!checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    MaskedAutoencoder<float> m = model_from_checkpoint(ck);
    return m.encoder();
  }
  if (!c.max_grid_set) {
    const std::size_t h = c.finetune->height, w = c.finetune->width;
    c.model.max_grid = {h ? h / c.model.p : 1, w ? w / c.model.p : 1, bands / c.model.k};
  }
  return MaskedAutoencoder<float>(c.model, c.seed).encoder();
}

// ---------------------------------------------------------------- reconstruction

struct ReconMeta {
  ReconTargetMode mode = ReconTargetMode::per_token_normalized;
  float eps = 1e-6f;
  std::optional<BandRange> range;
  std::optional<BandStandardization> bands;
};

ReconMeta reconstruction_meta(const Checkpoint& ck, std::size_t raster_bands) {
  ReconMeta r;
  if (ck.metadata.empty()) return r;
  json j;
  try {
    j = json::parse(ck.metadata);
  } catch (const json::exception&) {
    return r;
  }
  if (j.contains("objective")) {
    r.mode = parse_target_mode(j["objective"].value("target_mode", to_string(r.mode)));
    r.eps = j["objective"].value("target_eps", r.eps);
  }
  const auto vec = [&](const char* k) { return j.value(k, std::vector<double>{}); };
  if (vec("band_min").size() == raster_bands && vec("band_max").size() == raster_bands)
    r.range = BandRange{vec("band_min"), vec("band_max")};
  if (vec("band_mean").size() == raster_bands && vec("band_std").size() == raster_bands)
    r.bands = BandStandardization{vec("band_mean"), vec("band_std")};
  return r;
}

BandRange own_range(const SpectralImage& img) {
  BandRange r;
  const std::size_t d = img.bands(), n = img.height() * img.width();
  r.min.assign(d, 0);
  r.max.assign(d, 0);
  for (std::size_t b = 0; b < d; ++b) {
    double lo = img.values[b], hi = img.values[b];
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min<double>(lo, img.values[i * d + b]);
      hi = std::max<double>(hi, img.values[i * d + b]);
    }
    r.min[b] = lo;
    r.max[b] = hi;
  }
  return r;
}

// ---------------------------------------------------------------- gradcheck

std::string module_of(const std::string& param) {
  std::vector<std::string> parts;
  std::stringstream ss(param);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  const std::size_t keep = parts.size() > 2 && parts[1] == "blocks" ? 3 : std::min<std::size_t>(2, parts.size());
  std::string m;
  for (std::size_t i = 0; i < keep; ++i) m += (i ? "." : "") + parts[i];
  return m;
}

}  // namespace

// ---------------------------------------------------------------- commands

int cmd_synth(const std::string& spec_path, const std::string& out, std::ostream& log) {
  if (spec_path.empty()) throw ConfigError("--config (synthetic spec) is required");
  if (out.empty()) throw ConfigError("--out is required");
  const SynthDocument doc = parse_synth_spec(read_json_file(spec_path));
  const DatasetManifest m = generate_synthetic(doc.spec, doc.task, out);
  write_json_file(fs::path(out) / "resolved_config.json", doc.to_json());
  log << "wrote " << m.samples.size() << " " << to_string(doc.task) << " samples to " << out << "\n";
  return kExitOk;
}

int cmd_pretrain(const PretrainOptions& o, bool progressive, std::ostream& log) {
  RunConfig c = load_config(o);
  if (!progressive && c.stages.size() != 1)
    throw ConfigError("pretrain expects exactly one entry in pretrain.stages (use progressive for more)");
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume);
  const fs::path dir = out_dir(c);
  const fs::path trace = dir / "epochs.jsonl";

  if (resume) {
    // keep only records from before the resume point
    std::vector<std::string> kept;
    for (const auto& l : read_lines(trace)) {
      const json j = json::parse(l);
      const auto st = j.at("stage").get<std::uint64_t>(), ep = j.at("epoch").get<std::uint64_t>();
      if (st < resume->position.stage || (st == resume->position.stage && ep < resume->position.epoch))
        kept.push_back(l);
    }
    write_lines(trace, kept);
  } else {
    write_lines(trace, {});
  }

  std::size_t ran = 0;
  bool stopped = false;
  auto hook = [&](const EpochRecord& rec, const Checkpoint& ck) {
    append_line(trace, rec.to_json());
    save_checkpoint(ck, dir / "checkpoint_last.spck");
    log << "stage " << rec.stage << " epoch " << rec.epoch << " total " << rec.mean.total << " lr " << rec.lr
        << "\n";
    ++ran;
    if (o.max_epochs && ran >= o.max_epochs) {
      stopped = true;
      return false;
    }
    return true;
  };
  // resolve max_grid before writing the config
  PretrainOutcome res = run_pretraining(c, resume, hook);
  write_json_file(dir / "resolved_config.json", c.to_json());
  if (stopped && !res.result.completed) {
    log << "stopped after " << ran << " epochs; resume with --resume " << (dir / "checkpoint_last.spck").string()
        << "\n";
    return kExitOk;
  }
  save_checkpoint(res.result.final_checkpoint, dir / "final.spck");
  log << "wrote " << (dir / "final.spck").string() << "\n";
  return kExitOk;
}

int cmd_finetune(const FinetuneOptions& o, std::ostream& log) {
  RunConfig c = load_config(o);
  const TaskType task = resolve_task(o, c);
  if (o.train_fraction) {
    if (!(*o.train_fraction > 0 && *o.train_fraction <= 1)) throw ConfigError("--train-fraction must lie in (0, 1]");
    c.finetune->cfg.train_fraction = *o.train_fraction;
  }
  c.finetune->task = to_string(task);
  const fs::path dir = out_dir(c);
  const DatasetManifest probe = load_manifest(c.resolve(c.finetune->manifest));
  const Encoder<float> enc = initial_encoder(c, o.checkpoint, probe.bands.size());
  FinetuneOutcome res = run_finetune(c, task, enc, o.checkpoint.empty() ? "model config" : "checkpoint " + o.checkpoint);
  write_json_file(dir / "resolved_config.json", c.to_json());
  write_lines(dir / "metrics.jsonl", {res.report.to_json()});
  const Checkpoint ck = capture_checkpoint(res.model.encoder.config(), res.model.parameters(), OptimizerState{},
                                           Rng(c.seed).state(), {}, res.model.describe());
  save_checkpoint(ck, dir / "finetuned.spck");
  log << "train samples " << res.report.counts["train_samples"] << " of " << res.report.counts["train_pool"] << "\n";
  log << res.report.to_json() << "\n";
  return kExitOk;
}

int cmd_eval(const FinetuneOptions& o, std::ostream& log) {
  RunConfig c = load_config(o);
  const TaskType task = resolve_task(o, c);
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint (a fine-tuned model) is required");
  const TaskModel tm = task_model_from_checkpoint(load_checkpoint(o.checkpoint));
  if (tm.task != task)
    throw ConfigError("checkpoint holds a " + to_string(tm.task) + " model, not " + to_string(task));
  const TaskSplit s = finetune_split(c, task);
  check_encoder_bands(tm.encoder, s.val.bands.size(), "checkpoint " + o.checkpoint);
  const auto [h, w] = input_size(c, s.val);
  const MetricsReport r = eval_task(tm, s.val, h, w);
  const fs::path dir = out_dir(c);
  write_json_file(dir / "resolved_config.json", c.to_json());
  write_lines(dir / "eval.jsonl", {r.to_json()});
  log << r.to_json() << "\n";
  return kExitOk;
}

int cmd_reconstruct(const ReconstructOptions& o, std::ostream& log) {
  if (o.checkpoint.empty() || o.raster.empty()) throw ConfigError("--checkpoint and --raster are required");
  if (o.out.empty()) throw ConfigError("--out is required");
  if (o.ratios.empty()) throw ConfigError("--ratios is empty");
  for (double r : o.ratios)
    if (!(r >= 0 && r < 1)) throw ConfigError("ratio " + std::to_string(r) + " outside [0, 1)");
  std::vector<const BandComboPreset*> presets;
  if (o.preset == "all") {
    for (const auto& p : band_presets()) presets.push_back(&p);
  } else {
    presets.push_back(&find_preset(o.preset));
  }

  const Checkpoint ck = load_checkpoint(o.checkpoint);
  MaskedAutoencoder<float> model = model_from_checkpoint(ck);
  const ModelConfig& mc = model.config();
  const SpectralImage raw = read_raster(o.raster);
  for (const auto* p : presets)
    for (const auto& b : p->bands) raw.band_index(b);  // missing band -> DataError before any work
  const GridDims dims = grid_dims_for(raw.height(), raw.width(), raw.bands(), mc.p, mc.k);
  if (dims.gs != mc.max_grid.gs)
    throw DimensionError("checkpoint expects " + std::to_string(mc.max_grid.gs * mc.k) + " bands, raster has " +
                         std::to_string(raw.bands()));
  if (dims.gh != mc.max_grid.gh || dims.gw != mc.max_grid.gw) model.resize_grid(dims.gh, dims.gw);

  const ReconMeta meta = reconstruction_meta(ck, raw.bands());
  const SpectralImage img = normalize_bands(raw, meta.range ? *meta.range : own_range(raw)).image;
  const TokenGrid grid = patchify(img, mc.p, mc.k);
  const ReconTargets tg = make_targets(grid, meta.mode, meta.eps, meta.bands ? &*meta.bands : nullptr);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  json resolved{{"checkpoint", o.checkpoint}, {"raster", o.raster}, {"ratios", o.ratios},
                {"preset", o.preset},         {"seed", o.seed},     {"target_mode", to_string(meta.mode)}};
  write_json_file(dir / "resolved_config.json", resolved);
  for (const auto* p : presets) write_ppm(dir / ("original_" + p->name + ".ppm"), render_preset(img, *p));

  std::vector<std::string> records;
  const std::size_t len = grid.token_length();
  for (std::size_t ri = 0; ri < o.ratios.size(); ++ri) {
    const double ratio = o.ratios[ri];
    Rng rng = Rng::derive(o.seed, {ri, 0x7265636f});
    const MaskPlan plan = build_mask(dims, ratio, rng);
    Tensor recon_rows;
    {
      NoGradGuard guard;
      recon_rows = model.reconstruct(grid.tokens, plan, dims).value();
    }
    const Tensor pixels = invert_targets(recon_rows, grid, meta.mode, tg.stats, meta.bands ? &*meta.bands : nullptr,
                                         meta.eps);
    Tensor composite = grid.tokens;
    for (std::size_t t : plan.masked)
      for (std::size_t j = 0; j < len; ++j) composite[t * len + j] = pixels[t * len + j];

    double se_masked = 0, se_all = 0;
    for (std::size_t t : plan.masked)
      for (std::size_t j = 0; j < len; ++j) {
        const double d = double(pixels[t * len + j]) - double(grid.tokens[t * len + j]);
        se_masked += d * d;
      }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const double d = double(pixels[i]) - double(grid.tokens[i]);
      se_all += d * d;
    }
    const double n_masked = double(plan.masked.size() * len), n_all = double(pixels.size());
    json rec{{"ratio", ratio},
             {"masked_tokens", plan.masked.size()},
             {"total_tokens", plan.total},
             {"mse_masked", n_masked ? se_masked / n_masked : 0.0},
             {"mse_composite", se_masked / n_all},
             {"mse_pure", se_all / n_all}};
    records.push_back(rec.dump());

    const SpectralImage pure_img(unpatchify(pixels, dims, mc.p, mc.k), img.band_names);
    const SpectralImage comp_img(unpatchify(composite, dims, mc.p, mc.k), img.band_names);
    const std::string tag = "r" + fixed(ratio);
    for (const auto* p : presets) {
      write_ppm(dir / (tag + "_" + p->name + "_composite.ppm"), render_preset(comp_img, *p));
      write_ppm(dir / (tag + "_" + p->name + "_pure.ppm"), render_preset(pure_img, *p));
    }
    log << "ratio " << fixed(ratio) << " masked " << plan.masked.size() << "/" << plan.total << " mse_masked "
        << rec["mse_masked"].get<double>() << "\n";
  }
  write_lines(dir / "reconstruction.jsonl", records);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& log) {
  ModelGradCheckSpec spec;
  std::uint64_t seed = o.seed.value_or(0);
  if (!o.config.empty()) {
    RunConfig c = load_run_config(o.config);
    if (!o.seed) seed = c.seed;
    const GradcheckSection& g = c.gradcheck;
    spec.model = c.model;
    spec.height = g.height;
    spec.width = g.width;
    spec.bands = g.bands;
    spec.mask_ratio = g.mask_ratio;
    spec.objective = c.objective;
    spec.check.eps = g.eps;
    spec.check.max_elements_per_param = g.max_elements;
    if (!c.max_grid_set) spec.model.max_grid = grid_dims_for(g.height, g.width, g.bands, c.model.p, c.model.k);
  }
  if (o.eps) {
    if (!(*o.eps >= 1e-4 && *o.eps <= 1e-2)) throw ConfigError("--eps must lie in [1e-4, 1e-2]");
    spec.check.eps = *o.eps;
  }
  spec.seed = seed;
  spec.check.seed = seed;
  std::function<Var<double>(const Var<double>&)> tap;
  if (o.inject_fault) tap = [](const Var<double>& v) { return faulty_identity(v); };
  const GradCheckReport r = model_grad_check(spec, tap);

  std::map<std::string, double> per_module;
  std::vector<std::string> order;
  for (const auto& e : r.per_param) {
    const std::string m = module_of(e.param);
    if (!per_module.count(m)) order.push_back(m);
    per_module[m] = std::max(per_module[m], e.max_rel_error);
  }
  char buf[160];
  for (const auto& m : order) {
    std::snprintf(buf, sizeof buf, "%-28s %.3e\n", m.c_str(), per_module[m]);
    log << buf;
  }
  std::snprintf(buf, sizeof buf, "max relative error %.3e (worst parameter: %s)\n", r.max_rel_error,
                r.worst_param.c_str());
  log << buf;
  if (r.max_rel_error <= 1e-3) return kExitOk;
  log << "FAILED: " << r.worst_param << " exceeds 1e-3\n";
  return kExitFailure;
}

int cmd_ablate(const AblateOptions& o, std::ostream& log) {
  static const std::vector<std::string> axes = {"mask_ratio",  "lambda",     "target_mode",
                                                "token_scope", "patch_size", "decoder_depth"};
  if (std::find(axes.begin(), axes.end(), o.axis) == axes.end())
    throw ConfigError("unknown ablation axis '" + o.axis +
                      "' (mask_ratio, lambda, target_mode, token_scope, patch_size, decoder_depth)");
  if (o.values.empty()) throw ConfigError("--values is empty");
  const RunConfig base = load_config(o);
  if (!base.finetune) throw ConfigError("ablation needs a \"finetune\" section");
  if (base.finetune->task.empty()) throw ConfigError("ablation needs finetune.task");
  const TaskType task = parse_task(base.finetune->task);
  const fs::path dir = out_dir(base);
  write_json_file(dir / "resolved_config.json", base.to_json());
  const fs::path out = dir / "ablation.jsonl";
  write_lines(out, {});
  for (const auto& v : o.values) {
    RunConfig c = base;
    auto num = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double d = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return d;
      } catch (const std::exception&) {
        throw ConfigError("ablation value '" + s + "' is not a number");
      }
    };
    if (o.axis == "mask_ratio") c.mask_ratio = num(v);
    else if (o.axis == "lambda") c.objective.lambda = num(v);
    else if (o.axis == "target_mode") c.objective.target_mode = parse_target_mode(v);
    else if (o.axis == "token_scope") c.objective.token_scope = parse_token_scope(v);
    else if (o.axis == "patch_size") c.model.p = std::size_t(num(v)), c.max_grid_set = false;
    else if (o.axis == "decoder_depth") c.model.decoder_depth = std::size_t(num(v));
    c.objective.validate();
    c.model.validate();
    PretrainOutcome pre = run_pretraining(c, std::nullopt, {});
    FinetuneOutcome ft = run_finetune(c, task, pre.model.encoder(), "pretrained encoder");
    const auto& last = pre.result.stages.back().epochs.back();
    json rec{{"axis", o.axis},
             {"value", v},
             {"pretrain_total", last.mean.total},
             {"metrics", json::parse(ft.report.to_json())}};
    append_line(out, rec.dump());
    log << rec.dump() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- argv

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"spectral masked-autoencoder toolkit", "spgt"};
  app.require_subcommand(1);

  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  synth->add_option("--config", synth_spec, "synthetic dataset spec (JSON)")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  auto add_common = [](CLI::App* sc, CommonOptions& c) {
    sc->add_option("--config", c.config, "run config (JSON)")->required();
    sc->add_option("--out", c.out, "output directory (overrides config)");
    sc->add_option("--seed", c.seed, "seed (overrides config)");
  };

  PretrainOptions pre, prog;
  auto* pretrain = app.add_subcommand("pretrain", "single-stage masked pretraining");
  add_common(pretrain, pre);
  pretrain->add_option("--resume", pre.resume, "checkpoint to resume from");
  pretrain->add_option("--max-epochs", pre.max_epochs)->group("");
  auto* progressive = app.add_subcommand("progressive", "multi-stage progressive pretraining");
  add_common(progressive, prog);
  progressive->add_option("--resume", prog.resume, "checkpoint to resume from");
  progressive->add_option("--max-epochs", prog.max_epochs)->group("");

  FinetuneOptions ft, ev;
  auto* finetune = app.add_subcommand("finetune", "fine-tune a task head and report validation metrics");
  add_common(finetune, ft);
  finetune->add_option("--task", ft.task, "classify | multilabel | segment | change");
  finetune->add_option("--checkpoint", ft.checkpoint, "pretrained checkpoint (omit for random init)");
  finetune->add_option("--train-fraction", ft.train_fraction, "seeded fraction of the training split");
  auto* eval = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  add_common(eval, ev);
  eval->add_option("--task", ev.task, "classify | multilabel | segment | change");
  eval->add_option("--checkpoint", ev.checkpoint, "fine-tuned checkpoint")->required();

  ReconstructOptions rc;
  std::string ratios_csv;
  auto* recon = app.add_subcommand("reconstruct", "masked reconstruction sweep with band-combination previews");
  recon->add_option("--checkpoint", rc.checkpoint, "pretrained checkpoint")->required();
  recon->add_option("--raster", rc.raster, "input raster (.spgr)")->required();
  recon->add_option("--ratios", ratios_csv, "comma separated masking ratios");
  recon->add_option("--preset", rc.preset, "band-combination preset or 'all'");
  recon->add_option("--out", rc.out, "output directory")->required();
  recon->add_option("--seed", rc.seed, "mask seed");

  GradcheckOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "end-to-end finite-difference gradient check");
  grad->add_option("--config", gc.config, "run config (JSON); defaults to the tiny model");
  grad->add_option("--seed", gc.seed, "seed");
  grad->add_option("--eps", gc.eps, "central-difference step in [1e-4, 1e-2]");
  grad->add_flag("--inject-fault", gc.inject_fault)->group("");

  AblateOptions ab;
  std::string values_csv;
  auto* ablate = app.add_subcommand("ablate", "pretrain + fine-tune once per value of one ablation axis");
  add_common(ablate, ab);
  ablate->add_option("--axis", ab.axis, "mask_ratio | lambda | target_mode | token_scope | patch_size | decoder_depth")
      ->required();
  ablate->add_option("--values", values_csv, "comma separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  auto split_csv = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string p; std::getline(ss, p, ',');)
      if (!p.empty()) parts.push_back(p);
    return parts;
  };

  try {
    if (*synth) return cmd_synth(synth_spec, synth_out, out);
    if (*pretrain) return cmd_pretrain(pre, false, out);
    if (*progressive) return cmd_pretrain(prog, true, out);
    if (*finetune) return cmd_finetune(ft, out);
    if (*eval) return cmd_eval(ev, out);
    if (*recon) {
      if (!ratios_csv.empty()) {
        rc.ratios.clear();
        for (const auto& p : split_csv(ratios_csv)) {
          std::size_t used = 0;
          double v = 0;
          try {
            v = std::stod(p, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used != p.size()) throw ConfigError("--ratios: '" + p + "' is not a number");
          rc.ratios.push_back(v);
        }
      }
      return cmd_reconstruct(rc, out);
    }
    if (*grad) return cmd_gradcheck(gc, out);
    if (*ablate) {
      ab.values = split_csv(values_csv);
      return cmd_ablate(ab, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace spgt::cli
