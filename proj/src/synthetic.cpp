#include "spgt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace spgt {

void SyntheticSpec::validate() const {
  if (!height || !width || !bands || !classes || !samples)
    throw ConfigError("synthetic spec: height, width, bands, classes and samples must be positive");
  if (!(rho >= 0 && rho <= 1)) throw ConfigError("synthetic spec: rho must lie in [0, 1]");
  if (!(field_std >= 0) || !(noise_std >= 0)) throw ConfigError("synthetic spec: stds must be non-negative");
  if (!(value_scale > 0)) throw ConfigError("synthetic spec: value_scale must be positive");
  if (!signatures.empty()) {
    if (signatures.size() != classes) throw ConfigError("synthetic spec: one signature per class required");
    for (const auto& s : signatures)
      if (s.size() != bands) throw ConfigError("synthetic spec: signature length must equal the band count");
  }
}

std::vector<std::vector<double>> class_signatures(const SyntheticSpec& spec) {
  if (!spec.signatures.empty()) return spec.signatures;
  Rng rng = Rng::derive(spec.seed, {0x5167});
  std::vector<std::vector<double>> sig(spec.classes, std::vector<double>(spec.bands));
  for (auto& s : sig) {
    double v = 0.2 + 0.6 * rng.uniform();
    for (std::size_t b = 0; b < spec.bands; ++b) {
      s[b] = v;
      v = std::clamp(v + 0.12 * rng.normal(), 0.1, 0.9);
    }
  }
  return sig;
}

namespace {

using Field = std::vector<double>;

// Coarse Gaussian lattice upsampled bilinearly, plus a little white noise so
// fields stay linearly independent on small images.
Field smooth_field(std::size_t h, std::size_t w, Rng& rng) {
  const std::size_t ch = std::max<std::size_t>(2, h / 4 + 1), cw = std::max<std::size_t>(2, w / 4 + 1);
  std::vector<double> coarse(ch * cw);
  for (double& v : coarse) v = rng.normal();
  Field f(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = h > 1 ? double(y) * double(ch - 1) / double(h - 1) : 0.0;
    const std::size_t y0 = std::min(std::size_t(fy), ch - 2);
    const double ty = fy - double(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = w > 1 ? double(x) * double(cw - 1) / double(w - 1) : 0.0;
      const std::size_t x0 = std::min(std::size_t(fx), cw - 2);
      const double tx = fx - double(x0);
      const double top = coarse[y0 * cw + x0] * (1 - tx) + coarse[y0 * cw + x0 + 1] * tx;
      const double bot = coarse[(y0 + 1) * cw + x0] * (1 - tx) + coarse[(y0 + 1) * cw + x0 + 1] * tx;
      f[y * w + x] = top * (1 - ty) + bot * ty + 0.1 * rng.normal();
    }
  }
  return f;
}

double dot(const Field& a, const Field& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Zero-mean, mutually orthogonal fields with unit population variance.
std::vector<Field> orthonormal_fields(std::size_t count, std::size_t h, std::size_t w, Rng& rng) {
  const std::size_t n = h * w;
  std::vector<Field> out;
  for (std::size_t k = 0; k < count; ++k) {
    Field f;
    for (int attempt = 0;; ++attempt) {
      f = smooth_field(h, w, rng);
      double mean = 0;
      for (double v : f) mean += v;
      mean /= double(n);
      for (double& v : f) v -= mean;
      for (int pass = 0; pass < 2; ++pass)
        for (const Field& g : out) {
          const double c = dot(f, g) / double(n);
          for (std::size_t i = 0; i < n; ++i) f[i] -= c * g[i];
        }
      const double norm = std::sqrt(dot(f, f) / double(n));
      if (norm > 1e-6) {
        for (double& v : f) v /= norm;
        break;
      }
      if (attempt > 8) {  // more fields than pixels can hold
        std::fill(f.begin(), f.end(), 0.0);
        break;
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

SpectralImage render(const SyntheticSpec& spec, const std::vector<std::vector<double>>& sig,
                     const std::vector<int>& class_map, Rng& field_rng, Rng& noise_rng) {
  const std::size_t h = spec.height, w = spec.width, d = spec.bands, n = h * w;
  if (class_map.size() != n) throw DimensionError("class map does not match the image size");
  const auto fields = orthonormal_fields(d + 1, h, w, field_rng);
  std::vector<double> gain(d);
  for (double& g : gain) g = 0.5 + field_rng.uniform();
  const double a = std::sqrt(spec.rho), b = std::sqrt(1.0 - spec.rho);
  Tensor t({h, w, d});
  for (std::size_t i = 0; i < n; ++i) {
    const int c = class_map[i];
    if (c < 0 || std::size_t(c) >= sig.size()) throw DataError("class map entry out of range");
    for (std::size_t k = 0; k < d; ++k) {
      double v = sig[c][k] + spec.field_std * gain[k] * (a * fields[0][i] + b * fields[k + 1][i]);
      v *= spec.value_scale;
      if (spec.noise_std > 0) v += spec.noise_std * spec.value_scale * noise_rng.normal();
      t[i * d + k] = static_cast<float>(v);
    }
  }
  return SpectralImage(std::move(t), default_band_names(d));
}

std::string numbered(const char* dir, std::size_t i, const char* suffix = "") {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s/%06zu%s.spgr", dir, i, suffix);
  return buf;
}

SpectralImage mask_image(const std::vector<int>& m, std::size_t h, std::size_t w) {
  Tensor t({h, w, 1});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = float(m[i]);
  return SpectralImage(std::move(t), {"mask"});
}

struct BandAccumulator {
  std::vector<double> mn, mx, sum, sq;
  double count = 0;

  explicit BandAccumulator(std::size_t d)
      : mn(d, INFINITY), mx(d, -INFINITY), sum(d, 0.0), sq(d, 0.0) {}

  void add(const SpectralImage& img) {
    const std::size_t d = mn.size();
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      const double v = img.values[i];
      const std::size_t b = i % d;
      mn[b] = std::min(mn[b], v);
      mx[b] = std::max(mx[b], v);
      sum[b] += v;
      sq[b] += v * v;
    }
    count += double(img.height() * img.width());
  }
};

}  // namespace

SpectralImage synthesize_image(const SyntheticSpec& spec, const std::vector<std::vector<double>>& signatures,
                               const std::vector<int>& class_map, Rng& rng) {
  return render(spec, signatures, class_map, rng, rng);
}

std::vector<int> voronoi_map(std::size_t h, std::size_t w, std::size_t sites, const std::vector<int>& allowed,
                             Rng& rng) {
  if (allowed.empty() || sites == 0) throw ConfigError("voronoi_map needs at least one site and class");
  sites = std::min(sites, h * w);
  // distinct pixel locations; the first allowed.size() sites take every class
  // once (in shuffled order) so sites >= allowed.size() covers them all
  auto perm = rng.permutation(h * w);
  std::vector<std::size_t> loc(perm.begin(), perm.begin() + std::ptrdiff_t(sites));
  const auto order = rng.permutation(allowed.size());
  std::vector<int> cls(sites);
  for (std::size_t s = 0; s < sites; ++s)
    cls[s] = s < allowed.size() ? allowed[order[s]] : allowed[rng.below(allowed.size())];
  std::vector<int> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      double bd = INFINITY;
      for (std::size_t s = 0; s < sites; ++s) {
        const double dy = double(y) - double(loc[s] / w), dx = double(x) - double(loc[s] % w);
        const double dd = dy * dy + dx * dx;
        if (dd < bd) bd = dd, best = s;
      }
      out[y * w + x] = cls[best];
    }
  return out;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, TaskType task, const std::filesystem::path& out_dir) {
  spec.validate();
  const auto sig = class_signatures(spec);
  const std::size_t h = spec.height, w = spec.width, K = spec.classes;
  std::vector<int> all_classes(K);
  for (std::size_t c = 0; c < K; ++c) all_classes[c] = int(c);

  DatasetManifest m;
  m.task = task;
  m.bands = default_band_names(spec.bands);
  m.split_seed = spec.seed;
  m.base_dir = out_dir;
  if (task != TaskType::pretrain) {
    if (task == TaskType::change) {
      m.classes = {"unchanged", "changed"};
    } else {
      for (std::size_t c = 0; c < K; ++c) m.classes.push_back("class_" + std::to_string(c));
    }
  }

  BandAccumulator acc(spec.bands);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    Rng layout = Rng::derive(spec.seed, {i, 1});
    Rng fields = Rng::derive(spec.seed, {i, 2});
    Rng noise = Rng::derive(spec.seed, {i, 3});
    SampleEntry e;
    e.image = numbered("images", i);
    switch (task) {
      case TaskType::pretrain:
      case TaskType::classify: {
        const int c = int(layout.below(K));
        const SpectralImage img = render(spec, sig, std::vector<int>(h * w, c), fields, noise);
        write_raster(img, out_dir / e.image);
        acc.add(img);
        if (task == TaskType::classify) e.label = c;
        break;
      }
      case TaskType::multilabel: {
        std::vector<int> present;
        e.labels.assign(K, 0);
        for (std::size_t c = 0; c < K; ++c)
          if (layout.uniform() < 0.4) present.push_back(int(c));
        if (present.empty()) present.push_back(int(layout.below(K)));
        for (int c : present) e.labels[c] = 1;
        const auto map = voronoi_map(h, w, std::max(present.size(), spec.regions), present, layout);
        const SpectralImage img = render(spec, sig, map, fields, noise);
        write_raster(img, out_dir / e.image);
        acc.add(img);
        break;
      }
      case TaskType::segment: {
        const auto map = voronoi_map(h, w, spec.regions, all_classes, layout);
        const SpectralImage img = render(spec, sig, map, fields, noise);
        e.mask = numbered("masks", i);
        write_raster(img, out_dir / e.image);
        write_raster(mask_image(map, h, w), out_dir / e.mask);
        acc.add(img);
        break;
      }
      case TaskType::change: {
        const auto map_a = voronoi_map(h, w, spec.regions, all_classes, layout);
        auto map_b = map_a;
        std::vector<int> changed(h * w, 0);
        if (K > 1) {
          for (std::size_t r = 0; r < spec.rectangles; ++r) {
            const std::size_t rh = 1 + layout.below(std::max<std::size_t>(1, h / 2));
            const std::size_t rw = 1 + layout.below(std::max<std::size_t>(1, w / 2));
            const std::size_t y0 = layout.below(h - rh + 1), x0 = layout.below(w - rw + 1);
            const int shift = 1 + int(layout.below(K - 1));
            for (std::size_t y = y0; y < y0 + rh; ++y)
              for (std::size_t x = x0; x < x0 + rw; ++x) {
                if (changed[y * w + x]) continue;
                changed[y * w + x] = 1;
                map_b[y * w + x] = (map_a[y * w + x] + shift) % int(K);
              }
          }
        }
        // the pair shares its spatial fields; only class content and noise differ
        Rng fields_b = fields;
        Rng noise_b = Rng::derive(spec.seed, {i, 4});
        const SpectralImage a = render(spec, sig, map_a, fields, noise);
        const SpectralImage b = render(spec, sig, map_b, fields_b, noise_b);
        e.image_b = numbered("images", i, "_b");
        e.mask = numbered("masks", i);
        write_raster(a, out_dir / e.image);
        write_raster(b, out_dir / e.image_b);
        write_raster(mask_image(changed, h, w), out_dir / e.mask);
        acc.add(a);
        acc.add(b);
        break;
      }
    }
    m.samples.push_back(std::move(e));
  }

  for (std::size_t b = 0; b < spec.bands; ++b) {
    m.band_min.push_back(acc.mn[b]);
    m.band_max.push_back(acc.mx[b]);
    const double span = acc.mx[b] - acc.mn[b];
    const double mean = acc.sum[b] / acc.count;
    const double var = std::max(0.0, acc.sq[b] / acc.count - mean * mean);
    m.band_mean.push_back(span > 0 ? (mean - acc.mn[b]) / span : 0.0);
    m.band_std.push_back(span > 0 ? std::sqrt(var) / span : 0.0);
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace spgt
