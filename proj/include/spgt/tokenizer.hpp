#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spgt/rng.hpp"
#include "spgt/tensor.hpp"

namespace spgt {

/// H x W x D multispectral image, values interleaved (row, col, band).
struct SpectralImage {
  Tensor values;
  std::vector<std::string> band_names;

  SpectralImage() = default;
  SpectralImage(Tensor v, std::vector<std::string> names);
  static SpectralImage zeros(std::size_t h, std::size_t w, std::size_t d);

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  std::size_t bands() const { return values.dim(2); }
  float& at(std::size_t r, std::size_t c, std::size_t b) { return values[(r * width() + c) * bands() + b]; }
  float at(std::size_t r, std::size_t c, std::size_t b) const {
    return values[(r * width() + c) * bands() + b];
  }
  /// Index of a band by name; throws DataError when absent.
  std::size_t band_index(const std::string& name) const;
};

/// Sentinel-2 style names for the first D bands: B1..B8, B8A, B9, B11, B12
/// (B10 excluded); bands past twelve are named B13, B14, ...
std::vector<std::string> default_band_names(std::size_t d);

/// Token grid extents. Token order is (r, c, s) row-major with the spectral
/// group fastest: index = (r * gw + c) * gs + s.
struct GridDims {
  std::size_t gh = 0, gw = 0, gs = 0;

  std::size_t total() const { return gh * gw * gs; }
  std::size_t sites() const { return gh * gw; }
  std::size_t site_of(std::size_t token) const { return token / gs; }
  std::size_t spectral_of(std::size_t token) const { return token % gs; }
  std::size_t row_of(std::size_t token) const { return site_of(token) / gw; }
  std::size_t col_of(std::size_t token) const { return site_of(token) % gw; }
  bool operator==(const GridDims&) const = default;
};

struct TokenGrid {
  std::size_t p = 0;  // spatial token size
  std::size_t k = 0;  // spectral token size
  GridDims dims;
  /// [N x (p*p*k)], within-token layout (row, col, band).
  Tensor tokens;

  std::size_t token_length() const { return p * p * k; }
  std::size_t height() const { return dims.gh * p; }
  std::size_t width() const { return dims.gw * p; }
  std::size_t bands() const { return dims.gs * k; }
};

GridDims grid_dims_for(std::size_t h, std::size_t w, std::size_t d, std::size_t p, std::size_t k);
TokenGrid patchify(const SpectralImage& img, std::size_t p, std::size_t k);
/// Inverse of patchify for any [N x p*p*k] token tensor laid out on `dims`.
Tensor unpatchify(const Tensor& tokens, const GridDims& dims, std::size_t p, std::size_t k);
SpectralImage unpatchify(const TokenGrid& grid, std::vector<std::string> band_names);

struct MaskPlan {
  double ratio = 0;
  std::size_t total = 0;
  std::size_t sites = 0;              // spatial sites gh*gw, 0 when built without a grid
  std::vector<std::size_t> masked;    // ascending
  std::vector<std::size_t> visible;   // ascending, complement of masked

  std::size_t masked_count() const { return masked.size(); }
  std::size_t visible_count() const { return visible.size(); }
};

/// floor(ratio * total), with a 1e-9 guard against representation error in
/// the product (0.29 * 100 is 28.999999999999996 in binary64).
std::size_t masked_count_for(std::size_t total, double ratio);

/// Uniform random subset of size masked_count_for(total, ratio), drawn
/// without replacement by a partial Fisher-Yates shuffle over `rng`.
MaskPlan build_mask(std::size_t total, double ratio, Rng& rng);
MaskPlan build_mask(const GridDims& dims, double ratio, Rng& rng);
/// Plan with every token visible.
MaskPlan no_mask(std::size_t total);

struct VisibleSplit {
  Tensor visible_tokens;  // rows in ascending original order
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
};

VisibleSplit split_visible(const TokenGrid& grid, const MaskPlan& plan);
/// Reassembles N rows from visible rows and masked rows placed at
/// plan.visible / plan.masked respectively.
Tensor scatter_back(const Tensor& visible_rows, const Tensor& masked_rows, const MaskPlan& plan);

enum class ReconTargetMode { raw, per_token_normalized, standardized };

std::string to_string(ReconTargetMode m);
ReconTargetMode parse_target_mode(const std::string& s);

struct NormalizationStats {
  float mean = 0;
  float std = 0;
  float eps = 0;
};

/// Dataset-level per-band moments used by the standardized target mode.
struct BandStandardization {
  std::vector<double> mean;
  std::vector<double> std;
};

struct ReconTargets {
  Tensor values;
  std::vector<NormalizationStats> stats;  // per token, per_token_normalized only
};

/// raw: tokens as-is. per_token_normalized: (x - u_i) / (sigma_i + eps) with
/// population std per token. standardized: (x - mean_b) / (std_b + eps) with
/// per-band dataset moments.
ReconTargets make_targets(const TokenGrid& grid, ReconTargetMode mode, float eps = 1e-6f,
                          const BandStandardization* bands = nullptr);

/// Maps targets-space rows back to pixel values (inverse of make_targets).
Tensor invert_targets(const Tensor& rows, const TokenGrid& grid, ReconTargetMode mode,
                      const std::vector<NormalizationStats>& stats,
                      const BandStandardization* bands = nullptr, float eps = 1e-6f);

/// One row per spatial site (r, c): its gs tokens concatenated in ascending
/// spectral order. [sites x gs*L].
Tensor spectral_site_targets(const GridDims& dims, const Tensor& targets);

}  // namespace spgt
