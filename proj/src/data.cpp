#include "spgt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "spgt/binary_io.hpp"
#include "spgt/rng.hpp"

namespace spgt {

using nlohmann::json;

std::vector<std::uint8_t> encode_raster(const SpectralImage& img) {
  ByteWriter w;
  w.bytes("SPGR", 4);
  w.u16(kRasterVersion);
  w.u32(static_cast<std::uint32_t>(img.height()));
  w.u32(static_cast<std::uint32_t>(img.width()));
  w.u32(static_cast<std::uint32_t>(img.bands()));
  for (const auto& n : img.band_names) w.str(n);
  for (float v : img.values.data()) w.f32(v);
  return w.buffer();
}

SpectralImage decode_raster(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != "SPGR") throw FormatError(what + ": bad magic, not a spectral raster");
  const std::uint16_t version = r.u16();
  if (version != kRasterVersion)
    throw UnsupportedVersionError(what + ": unsupported raster version " + std::to_string(version));
  const std::size_t h = r.u32(), w = r.u32(), d = r.u32();
  if (h == 0 || w == 0 || d == 0)
    throw FormatError(what + ": zero extent in header " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                      std::to_string(d));
  std::vector<std::string> names;
  names.reserve(d);
  for (std::size_t i = 0; i < d; ++i) names.push_back(r.str());
  const std::size_t n = h * w * d;
  if (r.remaining() < n * 4)
    throw IoError(what + ": truncated payload, header declares " + std::to_string(n * 4) + " bytes, " +
                  std::to_string(r.remaining()) + " present");
  if (r.remaining() > n * 4)
    throw FormatError(what + ": " + std::to_string(r.remaining() - n * 4) +
                      " bytes beyond the payload declared by the header");
  Tensor t({h, w, d});
  for (std::size_t i = 0; i < n; ++i) t[i] = r.f32();
  return SpectralImage(std::move(t), std::move(names));
}

void write_raster(const SpectralImage& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_raster(img));
}

SpectralImage read_raster(const std::filesystem::path& path) {
  return decode_raster(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------- manifests

std::string to_string(TaskType t) {
  switch (t) {
    case TaskType::pretrain: return "pretrain";
    case TaskType::classify: return "classify";
    case TaskType::multilabel: return "multilabel";
    case TaskType::segment: return "segment";
    case TaskType::change: return "change";
  }
  return "pretrain";
}

TaskType parse_task(const std::string& s) {
  for (TaskType t : {TaskType::pretrain, TaskType::classify, TaskType::multilabel, TaskType::segment, TaskType::change})
    if (to_string(t) == s) return t;
  throw ConfigError("unknown task '" + s + "' (pretrain, classify, multilabel, segment, change)");
}

std::optional<BandStandardization> DatasetManifest::standardization() const {
  if (band_mean.empty() || band_std.empty()) return std::nullopt;
  BandStandardization s;
  s.mean.assign(band_mean.begin(), band_mean.end());
  s.std.assign(band_std.begin(), band_std.end());
  return s;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["schema"] = "spgt.manifest";
  j["version"] = kManifestVersion;
  j["task"] = to_string(m.task);
  j["bands"] = m.bands;
  j["band_min"] = m.band_min;
  j["band_max"] = m.band_max;
  if (!m.band_mean.empty()) j["band_mean"] = m.band_mean;
  if (!m.band_std.empty()) j["band_std"] = m.band_std;
  j["classes"] = m.classes;
  j["split_seed"] = m.split_seed;
  json samples = json::array();
  for (const auto& s : m.samples) {
    json e;
    e["image"] = s.image;
    if (!s.image_b.empty()) e["image_b"] = s.image_b;
    if (s.label >= 0) e["label"] = s.label;
    if (!s.labels.empty()) e["labels"] = s.labels;
    if (!s.mask.empty()) e["mask"] = s.mask;
    samples.push_back(std::move(e));
  }
  j["samples"] = std::move(samples);
  return j.dump(1);
}

namespace {

template <typename V>
V field(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw FormatError(ctx + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw FormatError(ctx + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

template <typename V>
V field_or(const json& j, const char* key, V fallback, const std::string& ctx) {
  return j.contains(key) ? field<V>(j, key, ctx) : fallback;
}

}  // namespace

DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("manifest must be a JSON object");
  const std::string ctx = "manifest";
  if (field<std::string>(j, "schema", ctx) != "spgt.manifest") throw FormatError("manifest: unexpected schema");
  const int version = field<int>(j, "version", ctx);
  if (version != kManifestVersion)
    throw UnsupportedVersionError("manifest: unsupported version " + std::to_string(version));
  DatasetManifest m;
  m.base_dir = base_dir;
  m.task = parse_task(field<std::string>(j, "task", ctx));
  m.bands = field<std::vector<std::string>>(j, "bands", ctx);
  m.band_min = field<std::vector<double>>(j, "band_min", ctx);
  m.band_max = field<std::vector<double>>(j, "band_max", ctx);
  m.band_mean = field_or<std::vector<double>>(j, "band_mean", {}, ctx);
  m.band_std = field_or<std::vector<double>>(j, "band_std", {}, ctx);
  m.classes = field_or<std::vector<std::string>>(j, "classes", {}, ctx);
  m.split_seed = field_or<std::uint64_t>(j, "split_seed", 0, ctx);
  const json& samples = j.contains("samples") ? j["samples"] : json::array();
  if (!samples.is_array()) throw FormatError("manifest: 'samples' must be an array");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const json& e = samples[i];
    const std::string sctx = "manifest sample " + std::to_string(i);
    SampleEntry s;
    s.image = field<std::string>(e, "image", sctx);
    s.image_b = field_or<std::string>(e, "image_b", "", sctx);
    s.label = field_or<int>(e, "label", -1, sctx);
    s.labels = field_or<std::vector<int>>(e, "labels", {}, sctx);
    s.mask = field_or<std::string>(e, "mask", "", sctx);
    m.samples.push_back(std::move(s));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_to_json(m) << "\n";
  if (!out) throw IoError("failed writing manifest " + path.string());
}

namespace {

void validate_manifest(const DatasetManifest& m) {
  const std::size_t d = m.bands.size();
  if (d == 0) throw DataError("manifest lists no bands");
  if (m.band_min.size() != d || m.band_max.size() != d)
    throw DataError("manifest band statistics cover " + std::to_string(std::min(m.band_min.size(), m.band_max.size())) +
                    " of " + std::to_string(d) + " bands");
  if (!m.band_mean.empty() && (m.band_mean.size() != d || m.band_std.size() != d))
    throw DataError("manifest band_mean/band_std do not cover all " + std::to_string(d) + " bands");
  auto need = [&](const std::string& rel, std::size_t i, const char* what) {
    if (rel.empty()) throw DataError("sample " + std::to_string(i) + " has no " + what);
    if (!std::filesystem::exists(m.resolve(rel)))
      throw DataError("sample " + std::to_string(i) + ": " + what + " file not found: " + m.resolve(rel).string());
  };
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& s = m.samples[i];
    need(s.image, i, "image");
    switch (m.task) {
      case TaskType::pretrain: break;
      case TaskType::classify:
        if (s.label < 0 || (!m.classes.empty() && std::size_t(s.label) >= m.classes.size()))
          throw DataError("sample " + std::to_string(i) + ": label " + std::to_string(s.label) + " out of range");
        break;
      case TaskType::multilabel:
        if (s.labels.size() != m.classes.size())
          throw DataError("sample " + std::to_string(i) + ": " + std::to_string(s.labels.size()) +
                          " labels for " + std::to_string(m.classes.size()) + " classes");
        break;
      case TaskType::segment: need(s.mask, i, "mask"); break;
      case TaskType::change:
        need(s.image_b, i, "image_b");
        need(s.mask, i, "mask");
        break;
    }
  }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  DatasetManifest m = manifest_from_json(ss.str(), path.parent_path());
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------- preprocessing

NormalizeResult normalize_bands(const SpectralImage& img, const BandRange& range) {
  const std::size_t d = img.bands();
  if (range.min.size() != d || range.max.size() != d)
    throw DataError("normalize_bands: statistics for " + std::to_string(std::min(range.min.size(), range.max.size())) +
                    " bands, image has " + std::to_string(d));
  NormalizeResult out{img, {}};
  std::vector<double> scale(d, 0.0);
  for (std::size_t b = 0; b < d; ++b) {
    const double span = range.max[b] - range.min[b];
    if (span > 0) {
      scale[b] = 1.0 / span;
    } else {
      out.warnings.push_back("band " + img.band_names[b] + " has min == max (" + std::to_string(range.min[b]) +
                             "), mapped to 0");
    }
  }
  auto v = out.image.values.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t b = i % d;
    const double x = (double(v[i]) - range.min[b]) * scale[b];
    v[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

SpectralImage resize_bilinear(const SpectralImage& img, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw DimensionError("resize_bilinear: zero target size");
  const std::size_t ih = img.height(), iw = img.width(), d = img.bands();
  if (ih == h && iw == w) return img;
  Tensor out({h, w, d});
  const double sy = double(ih) / double(h), sx = double(iw) / double(w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(ih - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, ih - 1);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(iw - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, iw - 1);
      const double tx = fx - double(x0);
      for (std::size_t b = 0; b < d; ++b) {
        const double v00 = img.values[(y0 * iw + x0) * d + b], v01 = img.values[(y0 * iw + x1) * d + b];
        const double v10 = img.values[(y1 * iw + x0) * d + b], v11 = img.values[(y1 * iw + x1) * d + b];
        const double top = v00 + (v01 - v00) * tx, bot = v10 + (v11 - v10) * tx;
        out[(y * w + x) * d + b] = static_cast<float>(top + (bot - top) * ty);
      }
    }
  }
  return SpectralImage(std::move(out), img.band_names);
}

std::vector<int> resize_nearest_labels(const std::vector<int>& labels, std::size_t h, std::size_t w,
                                       std::size_t out_h, std::size_t out_w) {
  if (labels.size() != h * w) throw DimensionError("resize_nearest_labels: label map size mismatch");
  if (out_h == 0 || out_w == 0) throw DimensionError("resize_nearest_labels: zero target size");
  std::vector<int> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(h - 1, std::size_t((double(y) + 0.5) * double(h) / double(out_h)));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(w - 1, std::size_t((double(x) + 0.5) * double(w) / double(out_w)));
      out[y * out_w + x] = labels[sy * w + sx];
    }
  }
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m, std::array<double, 2> fractions,
                                                  std::uint64_t seed) {
  if (fractions[0] < 0 || fractions[1] < 0 || std::abs(fractions[0] + fractions[1] - 1.0) > 1e-6)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  const std::size_t n = m.samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * double(n)));
  if (n_train == 0 || n_train >= n)
    throw DataError("split of " + std::to_string(n) + " samples leaves an empty side (" + std::to_string(n_train) +
                    " train)");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  DatasetManifest train = m, val = m;
  train.samples.clear();
  val.samples.clear();
  train.split_seed = val.split_seed = seed;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? train : val).samples.push_back(m.samples[perm[i]]);
  return {std::move(train), std::move(val)};
}

std::vector<std::size_t> seeded_subset(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("subset fraction must be in (0, 1]");
  if (n == 0) throw DataError("cannot take a subset of an empty dataset");
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * double(n) + 1e-9)));
  Rng rng(seed);
  auto perm = rng.permutation(n);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

// ---------------------------------------------------------------- loaders

BandRange band_range(const DatasetManifest& m) { return {m.band_min, m.band_max}; }

namespace {

SpectralImage load_one(const DatasetManifest& m, const std::string& rel, std::size_t h, std::size_t w) {
  SpectralImage img = read_raster(m.resolve(rel));
  if (img.bands() != m.bands.size())
    throw DataError(rel + ": " + std::to_string(img.bands()) + " bands, manifest lists " +
                    std::to_string(m.bands.size()));
  img = normalize_bands(img, band_range(m)).image;
  if (h && w) img = resize_bilinear(img, h, w);
  return img;
}

std::vector<int> load_mask(const DatasetManifest& m, const std::string& rel, std::size_t h, std::size_t w) {
  SpectralImage img = read_raster(m.resolve(rel));
  if (img.bands() != 1) throw DataError(rel + ": mask raster must have one band");
  std::vector<int> labels(img.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(std::lround(img.values[i]));
  if (h && w) labels = resize_nearest_labels(labels, img.height(), img.width(), h, w);
  return labels;
}

}  // namespace

std::vector<SpectralImage> load_images(const DatasetManifest& m, std::size_t h, std::size_t w) {
  std::vector<SpectralImage> out;
  for (const auto& s : m.samples) out.push_back(load_one(m, s.image, h, w));
  return out;
}

std::vector<ClassifySample> load_classify(const DatasetManifest& m, std::size_t h, std::size_t w) {
  std::vector<ClassifySample> out;
  for (const auto& s : m.samples) out.push_back({load_one(m, s.image, h, w), s.label});
  return out;
}

std::vector<MultiLabelSample> load_multilabel(const DatasetManifest& m, std::size_t h, std::size_t w) {
  std::vector<MultiLabelSample> out;
  for (const auto& s : m.samples) out.push_back({load_one(m, s.image, h, w), s.labels});
  return out;
}

std::vector<SegmentSample> load_segment(const DatasetManifest& m, std::size_t h, std::size_t w) {
  std::vector<SegmentSample> out;
  for (const auto& s : m.samples) out.push_back({load_one(m, s.image, h, w), load_mask(m, s.mask, h, w)});
  return out;
}

std::vector<ChangeSample> load_change(const DatasetManifest& m, std::size_t h, std::size_t w) {
  std::vector<ChangeSample> out;
  for (const auto& s : m.samples)
    out.push_back({load_one(m, s.image, h, w), load_one(m, s.image_b, h, w), load_mask(m, s.mask, h, w)});
  return out;
}

}  // namespace spgt
