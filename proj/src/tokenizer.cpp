#include "spgt/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace spgt {

SpectralImage::SpectralImage(Tensor v, std::vector<std::string> names)
    : values(std::move(v)), band_names(std::move(names)) {
  if (values.rank() != 3) throw DimensionError("spectral image must be H x W x D, got " + shape_str(values.shape()));
  if (band_names.size() != values.dim(2))
    throw DataError(std::to_string(band_names.size()) + " band names for " + std::to_string(values.dim(2)) +
                    " bands");
}

SpectralImage SpectralImage::zeros(std::size_t h, std::size_t w, std::size_t d) {
  return SpectralImage(Tensor({h, w, d}), default_band_names(d));
}

std::size_t SpectralImage::band_index(const std::string& name) const {
  auto it = std::find(band_names.begin(), band_names.end(), name);
  if (it == band_names.end()) throw DataError("band " + name + " not present in image");
  return std::size_t(it - band_names.begin());
}

std::vector<std::string> default_band_names(std::size_t d) {
  static const char* kSentinel[] = {"B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < d; ++i)
    names.push_back(i < 12 ? kSentinel[i] : "B" + std::to_string(i + 1));
  return names;
}

GridDims grid_dims_for(std::size_t h, std::size_t w, std::size_t d, std::size_t p, std::size_t k) {
  if (p == 0 || k == 0 || h % p || w % p || d % k)
    throw TokenizationError("cannot tokenize H=" + std::to_string(h) + " W=" + std::to_string(w) +
                            " D=" + std::to_string(d) + " with p=" + std::to_string(p) +
                            " k=" + std::to_string(k));
  return {h / p, w / p, d / k};
}

TokenGrid patchify(const SpectralImage& img, std::size_t p, std::size_t k) {
  const std::size_t h = img.height(), w = img.width(), d = img.bands();
  TokenGrid g{p, k, grid_dims_for(h, w, d, p, k), {}};
  const std::size_t len = p * p * k;
  g.tokens = Tensor({g.dims.total(), len});
  const float* src = img.values.data().data();
  float* dst = g.tokens.data().data();
  for (std::size_t r = 0; r < g.dims.gh; ++r)
    for (std::size_t c = 0; c < g.dims.gw; ++c)
      for (std::size_t s = 0; s < g.dims.gs; ++s) {
        float* t = dst + ((r * g.dims.gw + c) * g.dims.gs + s) * len;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            std::copy_n(src + ((r * p + y) * w + (c * p + x)) * d + s * k, k, t + (y * p + x) * k);
      }
  return g;
}

Tensor unpatchify(const Tensor& tokens, const GridDims& dims, std::size_t p, std::size_t k) {
  const std::size_t len = p * p * k;
  if (tokens.rank() != 2 || tokens.dim(0) != dims.total() || tokens.dim(1) != len)
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not fit grid " +
                         std::to_string(dims.gh) + "x" + std::to_string(dims.gw) + "x" +
                         std::to_string(dims.gs) + " with p=" + std::to_string(p) + " k=" + std::to_string(k));
  const std::size_t w = dims.gw * p, d = dims.gs * k;
  Tensor out({dims.gh * p, w, d});
  const float* src = tokens.data().data();
  float* dst = out.data().data();
  for (std::size_t r = 0; r < dims.gh; ++r)
    for (std::size_t c = 0; c < dims.gw; ++c)
      for (std::size_t s = 0; s < dims.gs; ++s) {
        const float* t = src + ((r * dims.gw + c) * dims.gs + s) * len;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            std::copy_n(t + (y * p + x) * k, k, dst + ((r * p + y) * w + (c * p + x)) * d + s * k);
      }
  return out;
}

SpectralImage unpatchify(const TokenGrid& grid, std::vector<std::string> band_names) {
  return SpectralImage(unpatchify(grid.tokens, grid.dims, grid.p, grid.k), std::move(band_names));
}

std::size_t masked_count_for(std::size_t total, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw ConfigError("masking ratio " + std::to_string(ratio) + " outside [0, 1)");
  return static_cast<std::size_t>(std::floor(ratio * double(total) + 1e-9));
}

MaskPlan build_mask(std::size_t total, double ratio, Rng& rng) {
  const std::size_t m = masked_count_for(total, ratio);
  std::vector<std::size_t> pool(total);
  for (std::size_t i = 0; i < total; ++i) pool[i] = i;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(total - i);
    std::swap(pool[i], pool[j]);
  }
  MaskPlan plan;
  plan.ratio = ratio;
  plan.total = total;
  std::vector<char> is_masked(total, 0);
  for (std::size_t i = 0; i < m; ++i) is_masked[pool[i]] = 1;
  for (std::size_t i = 0; i < total; ++i) (is_masked[i] ? plan.masked : plan.visible).push_back(i);
  return plan;
}

MaskPlan build_mask(const GridDims& dims, double ratio, Rng& rng) {
  MaskPlan plan = build_mask(dims.total(), ratio, rng);
  plan.sites = dims.sites();
  return plan;
}

MaskPlan no_mask(std::size_t total) {
  MaskPlan plan;
  plan.total = total;
  plan.visible.resize(total);
  for (std::size_t i = 0; i < total; ++i) plan.visible[i] = i;
  return plan;
}

VisibleSplit split_visible(const TokenGrid& grid, const MaskPlan& plan) {
  if (plan.total != grid.dims.total())
    throw DimensionError("mask plan for " + std::to_string(plan.total) + " tokens applied to grid of " +
                         std::to_string(grid.dims.total()));
  if (plan.visible.empty()) throw DimensionError("mask plan leaves no visible token");
  const std::size_t len = grid.token_length();
  VisibleSplit out{Tensor({plan.visible.size(), len}), plan.visible, plan.masked};
  for (std::size_t i = 0; i < plan.visible.size(); ++i)
    std::copy_n(&grid.tokens[plan.visible[i] * len], len, &out.visible_tokens[i * len]);
  return out;
}

Tensor scatter_back(const Tensor& visible_rows, const Tensor& masked_rows, const MaskPlan& plan) {
  const std::size_t len = visible_rows.cols();
  if (visible_rows.rows() != plan.visible.size() ||
      (!plan.masked.empty() && (masked_rows.rows() != plan.masked.size() || masked_rows.cols() != len)))
    throw DimensionError("scatter_back: row counts do not match the mask plan");
  Tensor out({plan.total, len});
  for (std::size_t i = 0; i < plan.visible.size(); ++i)
    std::copy_n(&visible_rows[i * len], len, &out[plan.visible[i] * len]);
  for (std::size_t i = 0; i < plan.masked.size(); ++i)
    std::copy_n(&masked_rows[i * len], len, &out[plan.masked[i] * len]);
  return out;
}

std::string to_string(ReconTargetMode m) {
  switch (m) {
    case ReconTargetMode::raw: return "raw";
    case ReconTargetMode::per_token_normalized: return "per_token_normalized";
    case ReconTargetMode::standardized: return "standardized";
  }
  return "raw";
}

ReconTargetMode parse_target_mode(const std::string& s) {
  if (s == "raw") return ReconTargetMode::raw;
  if (s == "per_token_normalized") return ReconTargetMode::per_token_normalized;
  if (s == "standardized") return ReconTargetMode::standardized;
  throw ConfigError("unknown reconstruction target mode '" + s + "'");
}

namespace {

std::size_t band_of(const TokenGrid& grid, std::size_t token, std::size_t j) {
  return grid.dims.spectral_of(token) * grid.k + j % grid.k;
}

void check_band_stats(const TokenGrid& grid, const BandStandardization* bands) {
  if (!bands) throw ConfigError("standardized targets need dataset band statistics");
  if (bands->mean.size() != grid.bands() || bands->std.size() != grid.bands())
    throw DataError("band statistics cover " + std::to_string(bands->mean.size()) + " bands, image has " +
                    std::to_string(grid.bands()));
}

}  // namespace

ReconTargets make_targets(const TokenGrid& grid, ReconTargetMode mode, float eps, const BandStandardization* bands) {
  ReconTargets out{grid.tokens, {}};
  if (mode == ReconTargetMode::raw) return out;
  if (!(eps > 0)) throw ConfigError("target normalization eps must be positive");
  const std::size_t n = grid.tokens.rows(), len = grid.tokens.cols();
  if (mode == ReconTargetMode::per_token_normalized) {
    out.stats.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = out.values.row(i);
      double mean = 0;
      for (float v : row) mean += v;
      mean /= double(len);
      double var = 0;
      for (float v : row) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / double(len));
      const double div = sd + eps;
      for (float& v : row) v = static_cast<float>((v - mean) / div);
      out.stats[i] = {static_cast<float>(mean), static_cast<float>(sd), eps};
    }
    return out;
  }
  check_band_stats(grid, bands);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t b = band_of(grid, i, j);
      float& v = out.values[i * len + j];
      v = static_cast<float>((v - bands->mean[b]) / (bands->std[b] + eps));
    }
  return out;
}

Tensor invert_targets(const Tensor& rows, const TokenGrid& grid, ReconTargetMode mode,
                      const std::vector<NormalizationStats>& stats, const BandStandardization* bands, float eps) {
  Tensor out = rows;
  if (mode == ReconTargetMode::raw) return out;
  const std::size_t n = rows.rows(), len = rows.cols();
  if (mode == ReconTargetMode::per_token_normalized) {
    if (stats.size() != n) throw DimensionError("invert_targets: stats for " + std::to_string(stats.size()) + " tokens");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < len; ++j)
        out[i * len + j] = static_cast<float>(double(rows[i * len + j]) * (double(stats[i].std) + stats[i].eps) +
                                              stats[i].mean);
    return out;
  }
  check_band_stats(grid, bands);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t b = band_of(grid, i, j);
      out[i * len + j] = static_cast<float>(double(rows[i * len + j]) * (bands->std[b] + eps) + bands->mean[b]);
    }
  return out;
}

Tensor spectral_site_targets(const GridDims& dims, const Tensor& targets) {
  if (targets.rank() != 2 || targets.dim(0) != dims.total())
    throw DimensionError("spectral_site_targets: " + shape_str(targets.shape()) + " for " +
                         std::to_string(dims.total()) + " tokens");
  const std::size_t len = targets.cols();
  Tensor out({dims.sites(), dims.gs * len});
  for (std::size_t r = 0; r < dims.gh; ++r)
    for (std::size_t c = 0; c < dims.gw; ++c) {
      const std::size_t site = r * dims.gw + c;
      for (std::size_t s = 0; s < dims.gs; ++s) {
        const std::size_t token = site * dims.gs + s;
        std::copy_n(&targets[token * len], len, &out[site * dims.gs * len + s * len]);
      }
    }
  return out;
}

}  // namespace spgt
