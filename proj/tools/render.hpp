#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spgt/tokenizer.hpp"

namespace spgt::cli {

/// Three bands mapped to (R, G, B), or with two bands the normalized
/// difference (b0 - b1) / (b0 + b1 + eps) rendered as grayscale.
struct BandComboPreset {
  std::string name;
  std::string title;
  std::vector<std::string> bands;

  bool is_index() const { return bands.size() == 2; }
};

/// The eight geo-characteristic band combinations.
const std::vector<BandComboPreset>& band_presets();
/// Throws ConfigError for an unknown name.
const BandComboPreset& find_preset(const std::string& name);

struct Rgb8 {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

/// Per-channel min-max display scaling over the image; a constant channel
/// renders as 0. Throws DataError when a preset band is missing.
Rgb8 render_preset(const SpectralImage& img, const BandComboPreset& preset, double eps = 1e-6);

/// Binary PPM: "P6\n<w> <h>\n255\n" then the RGB bytes.
std::vector<std::uint8_t> encode_ppm(const Rgb8& img);
void write_ppm(const std::filesystem::path& path, const Rgb8& img);

}  // namespace spgt::cli
