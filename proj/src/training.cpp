#include "spgt/training.hpp"

#include <cmath>

#include "json.hpp"
#include "spgt/ops.hpp"

namespace spgt {

namespace {

constexpr std::uint64_t kMaskKey = 0x6d61736b;
constexpr std::uint64_t kEpochKey = 0x65706f63;
constexpr std::uint64_t kDropKey = 0x64726f70;

struct PreparedImage {
  TokenGrid grid;
  Tensor targets;
};

std::vector<PreparedImage> prepare(const std::vector<SpectralImage>& images, const ModelConfig& mc,
                                   const ObjectiveConfig& obj, const std::optional<BandStandardization>& bands) {
  std::vector<PreparedImage> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    TokenGrid g = patchify(img, mc.p, mc.k);
    Tensor t = make_targets(g, obj.target_mode, obj.target_eps, bands ? &*bands : nullptr).values;
    out.push_back({std::move(g), std::move(t)});
  }
  return out;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.token += w * b.token;
  acc.spectral += w * b.spectral;
  acc.total += w * b.total;
  acc.lambda = b.lambda;
}

}  // namespace

std::string EpochRecord::to_json() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["steps"] = steps;
  j["token_loss"] = mean.token;
  j["spectral_loss"] = mean.spectral;
  j["lambda"] = mean.lambda;
  j["total"] = mean.total;
  j["lr"] = lr;
  return j.dump();
}

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t n = samples / batch_size;
  if (n == 0)
    throw ConfigError("stage has " + std::to_string(samples) + " images, fewer than one batch of " +
                      std::to_string(batch_size));
  return n;
}

Schedule stage_schedule(const StageSpec& stage, std::size_t samples) {
  if (stage.epochs == 0) throw ConfigError("stage " + stage.name + ": epochs must be positive");
  if (!(stage.warmup_fraction >= 0 && stage.warmup_fraction <= 1))
    throw ConfigError("stage " + stage.name + ": warmup_fraction must lie in [0, 1]");
  Schedule s;
  s.total_steps = stage.epochs * steps_per_epoch(samples, stage.batch_size);
  s.warmup_steps = static_cast<std::size_t>(std::llround(stage.warmup_fraction * double(s.total_steps)));
  s.base_lr = stage.base_lr;
  s.min_lr = stage.min_lr;
  return s;
}

Pretrainer::Pretrainer(MaskedAutoencoder<float>& model, PretrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.objective.validate();
  masked_count_for(1, cfg_.mask_ratio);  // range check
  opt_.cfg = cfg_.optimizer;
}

Checkpoint Pretrainer::checkpoint(TrainingPosition pos, std::string metadata) const {
  return capture_checkpoint(model_.config(), model_.parameters(), opt_, Rng(cfg_.seed).state(), pos,
                            std::move(metadata));
}

StageReport Pretrainer::run_stage(const StageSpec& stage, const StageData& data, std::size_t stage_index,
                                  TrainingPosition from) {
  const ModelConfig& mc = model_.config();
  if (data.images.empty()) throw DataError("stage " + stage.name + " has no images");
  const auto prepared = prepare(data.images, mc, cfg_.objective, data.bands);
  const GridDims dims = prepared.front().grid.dims;
  for (const auto& p : prepared)
    if (!(p.grid.dims.gh == dims.gh && p.grid.dims.gw == dims.gw && p.grid.dims.gs == dims.gs))
      throw DimensionError("stage " + stage.name + ": images of differing sizes");

  const Schedule sched = stage_schedule(stage, prepared.size());
  const std::size_t per_epoch = steps_per_epoch(prepared.size(), stage.batch_size);
  auto params = model_.parameters();
  params.zero_grad();

  StageReport report;
  std::size_t step = from.step;
  for (std::size_t epoch = from.epoch; epoch < stage.epochs; ++epoch) {
    Rng order_rng = Rng::derive(cfg_.seed, {stage_index, epoch, kEpochKey});
    const auto order = order_rng.permutation(prepared.size());
    EpochRecord rec;
    rec.stage = stage_index;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const double lr = lr_at(sched, step);
      LossBreakdown step_loss;
      const double inv_b = 1.0 / double(stage.batch_size);
      for (std::size_t slot = 0; slot < stage.batch_size; ++slot) {
        const PreparedImage& img = prepared[order[b * stage.batch_size + slot]];
        Rng mask_rng = Rng::derive(cfg_.seed, {stage_index, step, slot, kMaskKey});
        const MaskPlan plan = build_mask(dims, cfg_.mask_ratio, mask_rng);
        Rng drop_rng = Rng::derive(cfg_.seed, {stage_index, step, slot, kDropKey});
        const ForwardContext ctx{true, &drop_rng};
        Var<float> recon = model_.reconstruct(img.grid.tokens, plan, dims, ctx);
        LossTerms<float> terms = total_loss(recon, img.targets, plan, dims, cfg_.objective);
        const LossBreakdown lb = terms.breakdown();
        if (!std::isfinite(lb.total))
          throw EvaluationError("non-finite loss at stage " + std::to_string(stage_index) + " step " +
                                std::to_string(step));
        ops::scale(terms.total, float(inv_b)).backward();
        accumulate(step_loss, lb, inv_b);
      }
      adamw_step(params, opt_, lr);
      StepRecord sr{stage_index, step, lr, step_loss};
      report.steps.push_back(sr);
      if (on_step) on_step(sr);
      accumulate(rec.mean, step_loss, 1.0 / double(per_epoch));
      rec.lr = lr;
      ++rec.steps;
    }
    report.epochs.push_back(rec);
    if (on_epoch_end && !on_epoch_end(rec, TrainingPosition{stage_index, epoch + 1, step})) {
      report.completed = epoch + 1 == stage.epochs;
      return report;
    }
  }
  return report;
}

LossBreakdown evaluate_loss(const MaskedAutoencoder<float>& model, const std::vector<SpectralImage>& images,
                            const ObjectiveConfig& objective, double mask_ratio, std::uint64_t seed,
                            const std::optional<BandStandardization>& bands) {
  if (images.empty()) throw DataError("evaluate_loss: no images");
  NoGradGuard guard;
  const auto prepared = prepare(images, model.config(), objective, bands);
  LossBreakdown mean;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const GridDims dims = prepared[i].grid.dims;
    Rng rng = Rng::derive(seed, {i, kMaskKey});
    const MaskPlan plan = build_mask(dims, mask_ratio, rng);
    Var<float> recon = model.reconstruct(prepared[i].grid.tokens, plan, dims);
    accumulate(mean, total_loss(recon, prepared[i].targets, plan, dims, objective).breakdown(),
               1.0 / double(prepared.size()));
  }
  return mean;
}

ProgressiveResult progressive_pretrain(const ProgressivePlan& plan, MaskedAutoencoder<float>& model,
                                       const PretrainConfig& cfg,
                                       const std::function<StageData(const StageSpec&, std::size_t)>& load,
                                       const std::optional<Checkpoint>& resume,
                                       const std::function<bool(const EpochRecord&, const Checkpoint&)>& on_epoch) {
  if (plan.stages.empty()) throw ConfigError("progressive plan has no stages");
  const ModelConfig& mc = model.config();
  for (const auto& s : plan.stages)
    grid_dims_for(s.height, s.width, mc.max_grid.gs * mc.k, mc.p, mc.k);

  Pretrainer trainer(model, cfg);
  TrainingPosition start;
  if (resume) {
    if (resume->model.p != mc.p || resume->model.k != mc.k || resume->model.embed_dim != mc.embed_dim)
      throw ConfigError("resume checkpoint was written for a different model config");
    model.resize_grid(resume->model.max_grid.gh, resume->model.max_grid.gw);
    auto params = model.parameters();
    apply_checkpoint(*resume, params);
    trainer.optimizer() = resume->optimizer;
    start = resume->position;
    if (start.stage >= plan.stages.size()) throw ConfigError("resume position is past the last stage");
  }

  ProgressiveResult result;
  for (std::size_t s = start.stage; s < plan.stages.size(); ++s) {
    const StageSpec& stage = plan.stages[s];
    const bool mid_stage = resume && s == start.stage && (start.epoch > 0 || start.step > 0);
    if (!mid_stage) {
      const std::size_t gh = stage.height / mc.p, gw = stage.width / mc.p;
      if (gh != model.config().max_grid.gh || gw != model.config().max_grid.gw) model.resize_grid(gh, gw);
      trainer.optimizer().reset();
    }
    if (on_epoch) {
      trainer.on_epoch_end = [&](const EpochRecord& rec, const TrainingPosition& pos) {
        return on_epoch(rec, trainer.checkpoint(pos));
      };
    }
    const StageData data = load(stage, s);
    StageReport rep = trainer.run_stage(stage, data, s, mid_stage ? start : TrainingPosition{s, 0, 0});
    const bool done = rep.completed;
    result.stages.push_back(std::move(rep));
    if (!done) {
      result.completed = false;
      break;
    }
  }
  const auto& last = result.stages.empty() ? StageReport{} : result.stages.back();
  TrainingPosition end{start.stage + result.stages.size() - 1, 0, 0};
  if (!result.stages.empty() && !last.epochs.empty()) end.epoch = last.epochs.back().epoch + 1;
  if (!last.steps.empty()) end.step = last.steps.back().step + 1;
  result.final_checkpoint = trainer.checkpoint(end);
  return result;
}

}  // namespace spgt
