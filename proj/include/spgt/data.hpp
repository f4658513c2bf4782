#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spgt/tokenizer.hpp"

namespace spgt {

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// ---------------------------------------------------------------- rasters
//
// Spectral raster file ("SPGR"), all integers little-endian:
//   magic   "SPGR"            4 bytes
//   version u16               currently 1
//   H, W, D u32 each
//   names   D x (u32 byte length + UTF-8 bytes)
//   payload H*W*D IEEE-754 binary32, (row, col, band) order
// The payload length is fully determined by the header: fewer bytes is a
// truncation (IoError), extra bytes a FormatError.

inline constexpr std::uint16_t kRasterVersion = 1;

std::vector<std::uint8_t> encode_raster(const SpectralImage& img);
SpectralImage decode_raster(const std::vector<std::uint8_t>& bytes, const std::string& what = "raster");
void write_raster(const SpectralImage& img, const std::filesystem::path& path);
SpectralImage read_raster(const std::filesystem::path& path);

// ---------------------------------------------------------------- manifests

enum class TaskType { pretrain, classify, multilabel, segment, change };

std::string to_string(TaskType t);
TaskType parse_task(const std::string& s);

struct SampleEntry {
  std::string image;              // raster path, relative to the manifest
  std::string image_b;            // second raster of a change pair
  int label = -1;                 // classify
  std::vector<int> labels;        // multilabel, multi-hot
  std::string mask;               // segment / change: 1-band raster of class ids
};

/// JSON document describing a dataset:
///   { "schema": "spgt.manifest", "version": 1, "task": ..., "bands": [...],
///     "band_min": [...], "band_max": [...], "band_mean": [...],
///     "band_std": [...], "classes": [...], "split_seed": n,
///     "samples": [ {"image": ..., "label": ...}, ... ] }
/// band_mean/band_std are optional (needed by the standardized target mode)
/// and describe the data after min/max normalization.
struct DatasetManifest {
  TaskType task = TaskType::pretrain;
  std::vector<std::string> bands;
  std::vector<double> band_min, band_max;
  std::vector<double> band_mean, band_std;
  std::vector<std::string> classes;
  std::uint64_t split_seed = 0;
  std::vector<SampleEntry> samples;
  /// Directory relative paths resolve against (not serialized).
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
  std::optional<BandStandardization> standardization() const;
};

inline constexpr int kManifestVersion = 1;

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& base_dir);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
/// Parses and validates: every referenced file exists, band statistics cover
/// every band.
DatasetManifest load_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------- preprocessing

struct BandRange {
  std::vector<double> min;
  std::vector<double> max;
};

struct NormalizeResult {
  SpectralImage image;
  std::vector<std::string> warnings;
};

/// Per band: (v - min_b) / (max_b - min_b) clipped to [0, 1]. A band with
/// min_b == max_b maps to 0 and is reported in `warnings`.
NormalizeResult normalize_bands(const SpectralImage& img, const BandRange& range);

/// Bilinear resampling with half-pixel centres.
SpectralImage resize_bilinear(const SpectralImage& img, std::size_t h, std::size_t w);
/// Nearest-neighbour resampling of a label map stored row-major [h x w].
std::vector<int> resize_nearest_labels(const std::vector<int>& labels, std::size_t h, std::size_t w,
                                       std::size_t out_h, std::size_t out_w);

/// Seeded permutation split of the samples into (train, val) by fractions
/// that must sum to 1; train takes round(f0 * N). Throws DataError when a
/// side would be empty.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& m, std::array<double, 2> fractions,
                                                  std::uint64_t seed);

/// Floor-fraction seeded subset of indices [0, n), at least one element.
std::vector<std::size_t> seeded_subset(std::size_t n, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------- in-memory datasets

struct ClassifySample {
  SpectralImage image;
  int label = 0;
};

struct MultiLabelSample {
  SpectralImage image;
  std::vector<int> labels;
};

struct SegmentSample {
  SpectralImage image;
  std::vector<int> mask;  // H*W class ids
};

struct ChangeSample {
  SpectralImage a, b;
  std::vector<int> mask;  // H*W, 1 = changed
};

/// Loaders read rasters, normalize with the manifest's band ranges and
/// resize to (h, w) when given (bilinear for images, nearest for masks).
std::vector<SpectralImage> load_images(const DatasetManifest& m, std::size_t h = 0, std::size_t w = 0);
std::vector<ClassifySample> load_classify(const DatasetManifest& m, std::size_t h = 0, std::size_t w = 0);
std::vector<MultiLabelSample> load_multilabel(const DatasetManifest& m, std::size_t h = 0, std::size_t w = 0);
std::vector<SegmentSample> load_segment(const DatasetManifest& m, std::size_t h = 0, std::size_t w = 0);
std::vector<ChangeSample> load_change(const DatasetManifest& m, std::size_t h = 0, std::size_t w = 0);

BandRange band_range(const DatasetManifest& m);

}  // namespace spgt
