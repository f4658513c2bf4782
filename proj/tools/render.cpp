#include "render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "spgt/error.hpp"

namespace spgt::cli {

const std::vector<BandComboPreset>& band_presets() {
  static const std::vector<BandComboPreset> presets = {
      {"agriculture", "Agriculture Condition", {"B11", "B8", "B2"}},
      {"bathymetric", "Bathymetric Survey", {"B4", "B3", "B1"}},
      {"vegetation_health", "Vegetation Health", {"B8", "B4", "B3"}},
      {"geology", "Geological Structure", {"B12", "B11", "B2"}},
      // normalized difference (B8A - B11) / (B8A + B11)
      {"moisture", "Moisture Content", {"B8A", "B11"}},
      {"vegetation_density", "Vegetation Density", {"B12", "B8A", "B4"}},
      {"ndvi", "Vegetation Index (NDVI)", {"B8", "B4"}},
      {"atmospheric", "Atmospheric Penetration", {"B12", "B11", "B8A"}},
  };
  return presets;
}

const BandComboPreset& find_preset(const std::string& name) {
  for (const auto& p : band_presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : band_presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

namespace {

void scale_channel(const std::vector<double>& v, std::vector<std::uint8_t>& out, std::size_t channel,
                   std::size_t stride) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = span > 0 ? (v[i] - *lo) / span : 0.0;
    out[i * stride + channel] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
}

}  // namespace

Rgb8 render_preset(const SpectralImage& img, const BandComboPreset& preset, double eps) {
  std::vector<std::size_t> idx;
  for (const auto& b : preset.bands) {
    const auto it = std::find(img.band_names.begin(), img.band_names.end(), b);
    if (it == img.band_names.end())
      throw DataError("preset " + preset.name + " needs band " + b + ", which the raster does not have");
    idx.push_back(std::size_t(it - img.band_names.begin()));
  }
  Rgb8 out;
  out.height = img.height();
  out.width = img.width();
  const std::size_t n = out.height * out.width;
  out.pixels.assign(n * 3, 0);
  std::vector<double> v(n);
  if (preset.is_index()) {
    for (std::size_t i = 0; i < n; ++i) {
      const double a = img.values[i * img.bands() + idx[0]], b = img.values[i * img.bands() + idx[1]];
      v[i] = (a - b) / (a + b + eps);
    }
    for (std::size_t c = 0; c < 3; ++c) scale_channel(v, out.pixels, c, 3);
  } else {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < n; ++i) v[i] = img.values[i * img.bands() + idx[c]];
      scale_channel(v, out.pixels, c, 3);
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Rgb8& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
  return bytes;
}

void write_ppm(const std::filesystem::path& path, const Rgb8& img) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace spgt::cli
