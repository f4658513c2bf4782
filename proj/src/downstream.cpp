#include "spgt/downstream.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "spgt/ops.hpp"
#include "spgt/training.hpp"

namespace spgt {

// ---------------------------------------------------------------- heads

template <typename T>
ClassifierHead<T>::ClassifierHead(std::size_t dim, std::size_t hidden, std::size_t classes, Rng& rng)
    : fc1(dim, hidden, rng), fc2(hidden, classes, rng) {}

template <typename T>
Var<T> ClassifierHead<T>::operator()(const Var<T>& encoded) const {
  return fc2(ops::gelu(fc1(ops::mean_rows(encoded))));
}

template <typename T>
void ClassifierHead<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  fc1.collect(set, prefix + ".fc1");
  fc2.collect(set, prefix + ".fc2");
}

template <typename T>
SiteFuse<T>::SiteFuse(std::size_t dim, std::size_t g, Rng& rng) : fuse(g * dim, dim, rng), gs(g) {}

template <typename T>
Var<T> SiteFuse<T>::operator()(const Var<T>& encoded, const GridDims& grid) const {
  const std::size_t d = encoded.value().cols();
  if (grid.gs != gs || encoded.value().rows() != grid.total())
    throw DimensionError("site fusion expects " + std::to_string(gs) + " spectral groups, got grid " +
                         std::to_string(grid.gh) + "x" + std::to_string(grid.gw) + "x" + std::to_string(grid.gs) +
                         " with features " + shape_str(encoded.shape()));
  return fuse(ops::reshape(encoded, {grid.sites(), gs * d}));
}

template <typename T>
void SiteFuse<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  fuse.collect(set, prefix + ".fuse");
}

template <typename T>
PixelDecoder<T>::PixelDecoder(std::size_t dim, std::size_t channels, std::size_t classes, std::size_t patch,
                              Rng& rng)
    : conv1(9 * dim, channels, rng), conv2(9 * channels, channels, rng), out(channels, classes, rng), p(patch) {
  if (p == 0 || p % 4) throw ConfigError("pixel decoder needs a patch size divisible by 4, got " + std::to_string(p));
}

template <typename T>
Var<T> PixelDecoder<T>::operator()(const Var<T>& sites, std::size_t gh, std::size_t gw) const {
  std::size_t h = gh, w = gw;
  Var<T> x = ops::upsample_nearest(sites, h, w, 2);
  h *= 2, w *= 2;
  x = ops::gelu(conv1(ops::im2col3x3(x, h, w)));
  x = ops::upsample_nearest(x, h, w, 2);
  h *= 2, w *= 2;
  x = ops::gelu(conv2(ops::im2col3x3(x, h, w)));
  if (p > 4) x = ops::upsample_nearest(x, h, w, p / 4);
  return out(x);
}

template <typename T>
void PixelDecoder<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  conv1.collect(set, prefix + ".conv1");
  conv2.collect(set, prefix + ".conv2");
  out.collect(set, prefix + ".out");
}

template <typename T>
SegmentationHead<T>::SegmentationHead(std::size_t dim, std::size_t gs, std::size_t channels, std::size_t classes,
                                      std::size_t p, Rng& rng)
    : fuse(dim, gs, rng), decode(dim, channels, classes, p, rng) {}

template <typename T>
Var<T> SegmentationHead<T>::operator()(const Var<T>& encoded, const GridDims& grid) const {
  return decode(fuse(encoded, grid), grid.gh, grid.gw);
}

template <typename T>
void SegmentationHead<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  fuse.collect(set, prefix + ".site");
  decode.collect(set, prefix + ".decode");
}

template <typename T>
ChangeHead<T>::ChangeHead(std::size_t dim, std::size_t gs, std::size_t channels, std::size_t p, bool signed_diff,
                          Rng& rng)
    : fuse(dim, gs, rng), decode(dim, channels, 2, p, rng), signed_difference(signed_diff) {}

template <typename T>
Var<T> ChangeHead<T>::feature(const Var<T>& a, const Var<T>& b, const GridDims& grid) const {
  Var<T> diff = ops::sub(fuse(a, grid), fuse(b, grid));
  return signed_difference ? diff : ops::abs(diff);
}

template <typename T>
Var<T> ChangeHead<T>::operator()(const Var<T>& a, const Var<T>& b, const GridDims& grid) const {
  return ops::log_softmax_lastaxis(decode(feature(a, b, grid), grid.gh, grid.gw));
}

template <typename T>
void ChangeHead<T>::collect(ParameterSet<T>& set, const std::string& prefix) {
  fuse.collect(set, prefix + ".site");
  decode.collect(set, prefix + ".decode");
}

#define SPGT_INSTANTIATE_HEADS(T) \
  template struct ClassifierHead<T>; \
  template struct SiteFuse<T>;       \
  template struct PixelDecoder<T>;   \
  template struct SegmentationHead<T>; \
  template struct ChangeHead<T>;

SPGT_INSTANTIATE_HEADS(float)
SPGT_INSTANTIATE_HEADS(double)

// ---------------------------------------------------------------- threads

std::size_t worker_threads() {
  if (const char* env = std::getenv("SPGT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return std::size_t(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------- task models

void FinetuneConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw ConfigError("finetune: epochs and batch_size must be positive");
  if (!(base_lr > 0) || min_lr < 0) throw ConfigError("finetune: learning rates must be positive");
  if (!(train_fraction > 0 && train_fraction <= 1)) throw ConfigError("finetune: train_fraction must lie in (0, 1]");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("finetune: warmup_fraction outside [0, 1]");
  if (head_hidden == 0 || decoder_channels == 0) throw ConfigError("finetune: head sizes must be positive");
}

ParameterSet<float> TaskModel::parameters(bool include_encoder) {
  ParameterSet<float> set;
  if (include_encoder) set.append(encoder.parameters(), "encoder.");
  switch (task) {
    case TaskType::classify:
    case TaskType::multilabel: classifier.collect(set, "head"); break;
    case TaskType::segment: segmenter.collect(set, "head"); break;
    case TaskType::change: change.collect(set, "head"); break;
    case TaskType::pretrain: throw ConfigError("pretrain is not a downstream task");
  }
  return set;
}

std::string TaskModel::describe() const {
  nlohmann::json j;
  j["task"] = to_string(task);
  j["classes"] = classes;
  j["head_hidden"] = cfg.head_hidden;
  j["decoder_channels"] = cfg.decoder_channels;
  j["signed_difference"] = cfg.signed_difference;
  j["crop"] = cfg.crop;
  j["grid"] = {encoder.config().max_grid.gh, encoder.config().max_grid.gw};
  return j.dump();
}

namespace {

void build_head(TaskModel& m) {
  const ModelConfig& mc = m.encoder.config();
  Rng rng = Rng::derive(m.cfg.seed, {0x68656164});
  const std::size_t d = mc.embed_dim, gs = mc.max_grid.gs;
  switch (m.task) {
    case TaskType::classify:
    case TaskType::multilabel: m.classifier = ClassifierHead<float>(d, m.cfg.head_hidden, m.classes, rng); break;
    case TaskType::segment:
      m.segmenter = SegmentationHead<float>(d, gs, m.cfg.decoder_channels, m.classes, mc.p, rng);
      break;
    case TaskType::change:
      m.change = ChangeHead<float>(d, gs, m.cfg.decoder_channels, mc.p, m.cfg.signed_difference, rng);
      break;
    case TaskType::pretrain: throw ConfigError("pretrain is not a downstream task");
  }
}

}  // namespace

TaskModel make_task_model(TaskType task, const Encoder<float>& encoder, std::size_t classes, std::size_t input_h,
                          std::size_t input_w, const FinetuneConfig& cfg) {
  cfg.validate();
  if (task == TaskType::change) classes = 2;
  if (classes == 0) throw ConfigError("downstream task needs at least one class");
  TaskModel m;
  m.task = task;
  m.classes = classes;
  m.cfg = cfg;
  m.encoder = encoder;
  const ModelConfig& mc = encoder.config();
  std::size_t h = input_h, w = input_w;
  if (task == TaskType::segment && cfg.crop) h = std::min(h, cfg.crop), w = std::min(w, cfg.crop);
  if (h % mc.p || w % mc.p)
    throw TokenizationError("fine-tuning input " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by p=" + std::to_string(mc.p));
  if (h / mc.p != mc.max_grid.gh || w / mc.p != mc.max_grid.gw) m.encoder.resize_pos(h / mc.p, w / mc.p);
  build_head(m);
  return m;
}

TaskModel task_model_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint metadata does not describe a fine-tuned model");
  }
  if (!j.contains("task") || !j.contains("classes")) throw FormatError("checkpoint has no task head description");
  TaskModel m;
  m.task = parse_task(j["task"].get<std::string>());
  m.classes = j["classes"].get<std::size_t>();
  m.cfg.head_hidden = j.value("head_hidden", m.cfg.head_hidden);
  m.cfg.decoder_channels = j.value("decoder_channels", m.cfg.decoder_channels);
  m.cfg.signed_difference = j.value("signed_difference", false);
  m.cfg.crop = j.value("crop", std::size_t(0));
  Rng rng(0);
  m.encoder = Encoder<float>(ckpt.model, rng);
  build_head(m);
  auto params = m.parameters();
  apply_checkpoint(ckpt, params);
  return m;
}

// ---------------------------------------------------------------- shared training loop

namespace {

constexpr std::uint64_t kOrderKey = 0x6f726472;
constexpr std::uint64_t kDropKey = 0x64726f70;

TokenGrid tokens_of(const TaskModel& m, const SpectralImage& img) {
  const ModelConfig& mc = m.encoder.config();
  return patchify(img, mc.p, mc.k);
}

Var<float> encode(const TaskModel& m, const TokenGrid& g, const ForwardContext& ctx) {
  if (ctx.training && m.cfg.freeze_encoder) {
    NoGradGuard guard;
    return Var<float>::constant(m.encoder.forward_full(g.tokens, g.dims).value());
  }
  return m.encoder.forward_full(g.tokens, g.dims, ctx);
}

// Seeded shuffles, last partial batch dropped, mean loss per batch, AdamW
// on the cosine schedule. loss(i, ctx) builds the graph for sample i.
void train_loop(TaskModel& m, std::size_t n, const std::function<Var<float>(std::size_t, const ForwardContext&)>& loss) {
  const FinetuneConfig& cfg = m.cfg;
  if (n == 0) throw DataError("fine-tuning set is empty");
  const std::size_t batch = std::min(cfg.batch_size, n);
  StageSpec spec;
  spec.name = "finetune";
  spec.epochs = cfg.epochs;
  spec.batch_size = batch;
  spec.base_lr = cfg.base_lr;
  spec.min_lr = cfg.min_lr;
  spec.warmup_fraction = cfg.warmup_fraction;
  const Schedule sched = stage_schedule(spec, n);
  const std::size_t per_epoch = n / batch;
  auto params = m.parameters(!cfg.freeze_encoder);
  params.zero_grad();
  OptimizerState opt;
  opt.cfg = cfg.optimizer;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = Rng::derive(cfg.seed, {epoch, kOrderKey});
    const auto order = order_rng.permutation(n);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      for (std::size_t slot = 0; slot < batch; ++slot) {
        Rng drop = Rng::derive(cfg.seed, {step, slot, kDropKey});
        const ForwardContext ctx{true, &drop};
        Var<float> l = loss(order[b * batch + slot], ctx);
        if (!std::isfinite(l.item()))
          throw EvaluationError("non-finite fine-tuning loss at step " + std::to_string(step));
        ops::scale(l, 1.0f / float(batch)).backward();
      }
      adamw_step(params, opt, lr_at(sched, step));
    }
  }
}

template <typename S>
std::vector<S> fraction_subset(const std::vector<S>& pool, const FinetuneConfig& cfg) {
  if (cfg.train_fraction >= 1.0) return pool;
  std::vector<S> out;
  for (std::size_t i : seeded_subset(pool.size(), cfg.train_fraction, cfg.seed)) out.push_back(pool[i]);
  return out;
}

void check_label(int label, std::size_t classes, std::size_t i) {
  if (label < 0 || std::size_t(label) >= classes)
    throw DataError("sample " + std::to_string(i) + ": label " + std::to_string(label) + " outside [0, " +
                    std::to_string(classes) + ")");
}

std::size_t argmax(std::span<const float> row) {
  return std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

// ---------------------------------------------------------------- classification

std::vector<float> classify_logits(const TaskModel& m, const SpectralImage& img) {
  NoGradGuard guard;
  const TokenGrid g = tokens_of(m, img);
  const Var<float> out = m.classifier(encode(m, g, {}));
  return {out.value().data().begin(), out.value().data().end()};
}

MetricsReport finetune_classify(TaskModel& m, const std::vector<ClassifySample>& pool,
                                const std::vector<ClassifySample>& val) {
  if (m.task != TaskType::classify) throw ConfigError("model head is not a classifier");
  if (pool.empty()) throw DataError("finetune: empty training set");
  const auto train = fraction_subset(pool, m.cfg);
  std::vector<TokenGrid> grids;
  for (std::size_t i = 0; i < train.size(); ++i) {
    check_label(train[i].label, m.classes, i);
    grids.push_back(tokens_of(m, train[i].image));
  }
  train_loop(m, grids.size(), [&](std::size_t i, const ForwardContext& ctx) {
    const int label = train[i].label;
    return ops::cross_entropy(m.classifier(encode(m, grids[i], ctx)), std::span<const int>(&label, 1));
  });
  MetricsReport r = evaluate_classify(m, val);
  r.counts["train_samples"] = grids.size();
  r.counts["train_pool"] = pool.size();
  return r;
}

MetricsReport evaluate_classify(const TaskModel& m, const std::vector<ClassifySample>& data) {
  std::vector<int> pred(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) check_label(data[i].label, m.classes, i);
  parallel_for(data.size(), [&](std::size_t i) {
    const auto logits = classify_logits(m, data[i].image);
    pred[i] = int(argmax(logits));
  });
  ConfusionMatrix cm(m.classes);
  for (std::size_t i = 0; i < data.size(); ++i) cm.add(data[i].label, pred[i]);
  MetricsReport r;
  r.task = "classify";
  r.counts["samples"] = data.size();
  if (auto oa = cm.overall_accuracy()) r.values["accuracy"] = *oa;
  else r.notes.push_back("accuracy undefined: no samples");
  std::vector<std::optional<double>> recall;
  for (std::size_t c = 0; c < m.classes; ++c) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < m.classes; ++j) row += cm.at(c, j);
    recall.push_back(row ? std::optional<double>(double(cm.at(c, c)) / double(row)) : std::nullopt);
  }
  r.per_class["recall"] = recall;
  return r;
}

// ---------------------------------------------------------------- multi-label

MetricsReport finetune_multilabel(TaskModel& m, const std::vector<MultiLabelSample>& pool,
                                  const std::vector<MultiLabelSample>& val) {
  if (m.task != TaskType::multilabel) throw ConfigError("model head is not a multi-label classifier");
  if (pool.empty()) throw DataError("finetune: empty training set");
  const auto train = fraction_subset(pool, m.cfg);
  std::vector<TokenGrid> grids;
  std::vector<Tensor> targets;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].labels.size() != m.classes)
      throw DataError("sample " + std::to_string(i) + " has " + std::to_string(train[i].labels.size()) +
                      " labels for " + std::to_string(m.classes) + " classes");
    Tensor t({1, m.classes});
    for (std::size_t c = 0; c < m.classes; ++c) t[c] = float(train[i].labels[c]);
    grids.push_back(tokens_of(m, train[i].image));
    targets.push_back(std::move(t));
  }
  train_loop(m, grids.size(), [&](std::size_t i, const ForwardContext& ctx) {
    return ops::multilabel_soft_margin(m.classifier(encode(m, grids[i], ctx)), targets[i]);
  });
  MetricsReport r = evaluate_multilabel(m, val);
  r.counts["train_samples"] = grids.size();
  r.counts["train_pool"] = pool.size();
  return r;
}

MetricsReport evaluate_multilabel(const TaskModel& m, const std::vector<MultiLabelSample>& data) {
  std::vector<std::vector<double>> scores(data.size());
  std::vector<std::vector<int>> labels(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto logits = classify_logits(m, data[i].image);
    for (float v : logits) scores[i].push_back(1.0 / (1.0 + std::exp(-double(v))));
  });
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i].labels;
  const MapResult map = mean_average_precision(scores, labels);
  MetricsReport r;
  r.task = "multilabel";
  r.counts["samples"] = data.size();
  if (map.macro) r.values["macro_map"] = *map.macro;
  else r.notes.push_back("macro mAP undefined: no class has a positive sample");
  if (map.micro) r.values["micro_map"] = *map.micro;
  r.per_class["ap"] = map.per_class;
  for (std::size_t c : map.skipped) r.notes.push_back("class " + std::to_string(c) + " skipped: no positive samples");
  r.counts["classes_skipped"] = map.skipped.size();
  return r;
}

// ---------------------------------------------------------------- segmentation

std::vector<std::size_t> crop_origins(std::size_t extent, std::size_t side) {
  if (side == 0 || side >= extent) return {0};
  const std::size_t stride = std::max<std::size_t>(1, side / 2);
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + side < extent; o += stride) out.push_back(o);
  out.push_back(extent - side);
  return out;
}

SpectralImage crop(const SpectralImage& img, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  if (y + h > img.height() || x + w > img.width()) throw DimensionError("crop outside the image");
  const std::size_t d = img.bands(), iw = img.width();
  Tensor t({h, w, d});
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(&img.values[((y + r) * iw + x) * d], w * d, &t[r * w * d]);
  return SpectralImage(std::move(t), img.band_names);
}

namespace {

std::size_t crop_side(const TaskModel& m, std::size_t extent) {
  return m.cfg.crop && m.cfg.crop < extent ? m.cfg.crop : extent;
}

std::vector<int> crop_labels(const std::vector<int>& mask, std::size_t w, std::size_t y, std::size_t x,
                             std::size_t ch, std::size_t cw) {
  std::vector<int> out(ch * cw);
  for (std::size_t r = 0; r < ch; ++r)
    for (std::size_t c = 0; c < cw; ++c) out[r * cw + c] = mask[(y + r) * w + x + c];
  return out;
}

}  // namespace

Tensor segment_logits(const TaskModel& m, const SpectralImage& img) {
  NoGradGuard guard;
  const std::size_t h = img.height(), w = img.width(), k = m.classes;
  const std::size_t ch = crop_side(m, h), cw = crop_side(m, w);
  Tensor sum({h * w, k});
  std::vector<float> count(h * w, 0.0f);
  for (std::size_t y : crop_origins(h, ch))
    for (std::size_t x : crop_origins(w, cw)) {
      const SpectralImage part = (ch == h && cw == w) ? img : crop(img, y, x, ch, cw);
      const TokenGrid g = tokens_of(m, part);
      const Tensor logits = m.segmenter(encode(m, g, {}), g.dims).value();
      for (std::size_t r = 0; r < ch; ++r)
        for (std::size_t c = 0; c < cw; ++c) {
          const std::size_t dst = (y + r) * w + x + c;
          count[dst] += 1.0f;
          for (std::size_t j = 0; j < k; ++j) sum[dst * k + j] += logits[(r * cw + c) * k + j];
        }
    }
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t j = 0; j < k; ++j) sum[i * k + j] /= count[i];
  return sum;
}

MetricsReport finetune_segment(TaskModel& m, const std::vector<SegmentSample>& pool,
                               const std::vector<SegmentSample>& val) {
  if (m.task != TaskType::segment) throw ConfigError("model head is not a segmentation head");
  if (pool.empty()) throw DataError("finetune: empty training set");
  const auto train = fraction_subset(pool, m.cfg);
  std::vector<TokenGrid> grids;
  std::vector<std::vector<int>> masks;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    const std::size_t h = s.image.height(), w = s.image.width();
    if (s.mask.size() != h * w) throw DataError("sample " + std::to_string(i) + ": mask size differs from image");
    for (int l : s.mask) check_label(l, m.classes, i);
    const std::size_t ch = crop_side(m, h), cw = crop_side(m, w);
    for (std::size_t y : crop_origins(h, ch))
      for (std::size_t x : crop_origins(w, cw)) {
        grids.push_back(tokens_of(m, crop(s.image, y, x, ch, cw)));
        masks.push_back(crop_labels(s.mask, w, y, x, ch, cw));
      }
  }
  train_loop(m, grids.size(), [&](std::size_t i, const ForwardContext& ctx) {
    return ops::cross_entropy(m.segmenter(encode(m, grids[i], ctx), grids[i].dims), std::span<const int>(masks[i]));
  });
  MetricsReport r = evaluate_segment(m, val);
  r.counts["train_crops"] = grids.size();
  r.counts["train_samples"] = train.size();
  r.counts["train_pool"] = pool.size();
  return r;
}

MetricsReport evaluate_segment(const TaskModel& m, const std::vector<SegmentSample>& data) {
  std::vector<ConfusionMatrix> parts(data.size(), ConfusionMatrix(m.classes));
  parallel_for(data.size(), [&](std::size_t i) {
    const auto& s = data[i];
    if (s.mask.size() != s.image.height() * s.image.width())
      throw DataError("sample " + std::to_string(i) + ": mask size differs from image");
    const Tensor logits = segment_logits(m, s.image);
    for (std::size_t p = 0; p < s.mask.size(); ++p) parts[i].add(s.mask[p], int(argmax(logits.row(p))));
  });
  ConfusionMatrix cm(m.classes);
  for (const auto& p : parts) cm.merge(p);
  MetricsReport r;
  r.task = "segment";
  r.counts["samples"] = data.size();
  r.counts["pixels"] = cm.total();
  if (auto oa = cm.overall_accuracy()) r.values["oa"] = *oa;
  if (auto mi = cm.mean_iou()) r.values["miou"] = *mi;
  std::vector<std::optional<double>> ious;
  for (std::size_t c = 0; c < m.classes; ++c) {
    ious.push_back(cm.iou(c));
    if (!ious.back()) r.notes.push_back("class " + std::to_string(c) + " absent from truth and prediction, excluded");
  }
  r.per_class["iou"] = ious;
  return r;
}

// ---------------------------------------------------------------- change detection

namespace {

void check_pair(const ChangeSample& s, std::size_t i) {
  const auto& a = s.a.values.shape();
  const auto& b = s.b.values.shape();
  if (a != b)
    throw DataError("pair " + std::to_string(i) + ": image shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
  if (s.mask.size() != s.a.height() * s.a.width())
    throw DataError("pair " + std::to_string(i) + ": mask size differs from image");
  for (int v : s.mask)
    if (v != 0 && v != 1) throw DataError("pair " + std::to_string(i) + ": change mask must be binary");
}

}  // namespace

Tensor change_logprobs(const TaskModel& m, const SpectralImage& a, const SpectralImage& b) {
  if (a.values.shape() != b.values.shape()) throw DataError("change pair images differ in shape");
  NoGradGuard guard;
  const TokenGrid ga = tokens_of(m, a), gb = tokens_of(m, b);
  return m.change(encode(m, ga, {}), encode(m, gb, {}), ga.dims).value();
}

MetricsReport finetune_change(TaskModel& m, const std::vector<ChangeSample>& pool,
                              const std::vector<ChangeSample>& val) {
  if (m.task != TaskType::change) throw ConfigError("model head is not a change head");
  if (pool.empty()) throw DataError("finetune: empty training set");
  const auto train = fraction_subset(pool, m.cfg);
  std::vector<std::pair<TokenGrid, TokenGrid>> grids;
  for (std::size_t i = 0; i < train.size(); ++i) {
    check_pair(train[i], i);
    grids.emplace_back(tokens_of(m, train[i].a), tokens_of(m, train[i].b));
  }
  train_loop(m, grids.size(), [&](std::size_t i, const ForwardContext& ctx) {
    const auto& [ga, gb] = grids[i];
    Var<float> lp = m.change(encode(m, ga, ctx), encode(m, gb, ctx), ga.dims);
    return ops::nll_loss(lp, std::span<const int>(train[i].mask));
  });
  MetricsReport r = evaluate_change(m, val);
  r.counts["train_samples"] = grids.size();
  r.counts["train_pool"] = pool.size();
  return r;
}

MetricsReport evaluate_change(const TaskModel& m, const std::vector<ChangeSample>& data) {
  std::vector<BinaryCounts> parts(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    check_pair(data[i], i);
    const Tensor lp = change_logprobs(m, data[i].a, data[i].b);
    for (std::size_t p = 0; p < data[i].mask.size(); ++p) parts[i].add(data[i].mask[p], int(argmax(lp.row(p))));
  });
  BinaryCounts c;
  for (const auto& p : parts) c.tp += p.tp, c.fp += p.fp, c.fn += p.fn, c.tn += p.tn;
  const PrfResult prf = precision_recall_f1(c);
  MetricsReport r;
  r.task = "change";
  r.counts["samples"] = data.size();
  r.counts["tp"] = c.tp;
  r.counts["fp"] = c.fp;
  r.counts["fn"] = c.fn;
  r.counts["tn"] = c.tn;
  if (prf.precision) r.values["precision"] = *prf.precision;
  if (prf.recall) r.values["recall"] = *prf.recall;
  if (prf.f1) r.values["f1"] = *prf.f1;
  r.notes = prf.notes;
  return r;
}

}  // namespace spgt
