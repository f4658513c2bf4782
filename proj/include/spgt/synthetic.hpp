#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "spgt/data.hpp"
#include "spgt/rng.hpp"

namespace spgt {

/// Parameters of the seeded synthetic scene generator.
///
/// Every pixel belongs to a class c and band b reads
///
///   value_scale * (sig[c][b] + field_std * a_b * (sqrt(rho) S + sqrt(1 - rho) I_b)) + noise
///
/// with S a smooth field shared by all bands, I_b smooth per-band fields and
/// a_b > 0 a per-band gain. S and the I_b are made zero-mean and orthonormal
/// over the image, so the empirical inter-band correlation equals rho when
/// noise_std is 0 and the class is constant over the image.
struct SyntheticSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t bands = 12;
  std::size_t classes = 4;
  /// Per-class spectral signatures [classes][bands]; generated from the seed
  /// when empty.
  std::vector<std::vector<double>> signatures;
  double rho = 0.8;
  double field_std = 0.05;
  double noise_std = 0.0;
  double value_scale = 1000.0;
  std::size_t samples = 32;
  /// Voronoi sites per segmentation image.
  std::size_t regions = 4;
  /// Changed rectangles per change pair.
  std::size_t rectangles = 2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on zero sizes, rho outside [0, 1], negative stds or
  /// signatures of the wrong shape.
  void validate() const;
};

/// The signatures the generator uses for `spec` (explicit or derived from
/// the seed). Values lie in [0.1, 0.9].
std::vector<std::vector<double>> class_signatures(const SyntheticSpec& spec);

/// One image whose pixel classes are given by `class_map` (H*W entries).
SpectralImage synthesize_image(const SyntheticSpec& spec, const std::vector<std::vector<double>>& signatures,
                               const std::vector<int>& class_map, Rng& rng);

/// Seeded Voronoi partition: each of `sites` random points gets a class from
/// `allowed`, pixels take the class of the nearest point.
std::vector<int> voronoi_map(std::size_t h, std::size_t w, std::size_t sites, const std::vector<int>& allowed,
                             Rng& rng);

/// Writes images/*.spgr (and masks/*.spgr) plus manifest.json under `out_dir`
/// and returns the manifest. Band min/max come from the generated data; band
/// mean/std describe the normalized data.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, TaskType task, const std::filesystem::path& out_dir);

}  // namespace spgt
