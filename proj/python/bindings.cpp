#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "commands.hpp"
#include "spgt/checkpoint.hpp"
#include "spgt/data.hpp"
#include "spgt/error.hpp"
#include "spgt/gradsuite.hpp"
#include "spgt/metrics.hpp"
#include "spgt/objective.hpp"
#include "spgt/synthetic.hpp"

namespace py = pybind11;
using namespace spgt;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
TensorT<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  TensorT<T> t(shape);
  std::copy_n(a.data(), a.size(), t.data().data());
  return t;
}

template <typename T>
Array<T> to_array(const TensorT<T>& t) {
  Array<T> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy_n(t.data().data(), t.size(), a.mutable_data());
  return a;
}

SpectralImage to_image(const Array<float>& a, std::optional<std::vector<std::string>> names) {
  if (a.ndim() != 3) throw DimensionError("image must be a 3-d array (height, width, bands)");
  Tensor t = to_tensor(a);
  const std::size_t d = t.dim(2);
  return SpectralImage(std::move(t), names ? *names : default_band_names(d));
}

GridDims to_grid(const std::tuple<std::size_t, std::size_t, std::size_t>& g) {
  return {std::get<0>(g), std::get<1>(g), std::get<2>(g)};
}

py::tuple from_grid(const GridDims& g) { return py::make_tuple(g.gh, g.gw, g.gs); }

MaskPlan plan_from(std::size_t total, const std::vector<std::size_t>& masked) {
  MaskPlan p;
  p.total = total;
  std::vector<char> is_masked(total, 0);
  for (auto i : masked) {
    if (i >= total) throw DimensionError("masked index " + std::to_string(i) + " outside [0, " + std::to_string(total) + ")");
    is_masked[i] = 1;
  }
  for (std::size_t i = 0; i < total; ++i) (is_masked[i] ? p.masked : p.visible).push_back(i);
  p.ratio = total ? double(p.masked.size()) / double(total) : 0;
  return p;
}

py::dict breakdown_dict(const LossBreakdown& b) {
  py::dict d;
  d["token"] = b.token;
  d["spectral"] = b.spectral;
  d["lambda"] = b.lambda;
  d["total"] = b.total;
  return d;
}

// Float MAE wrapper: reconstruct an image at a masking ratio.
class PyModel {
 public:
  PyModel(const std::string& preset, std::tuple<std::size_t, std::size_t, std::size_t> grid, std::uint64_t seed)
      : model_(ModelConfig::preset(preset, to_grid(grid)), seed) {}
  explicit PyModel(MaskedAutoencoder<float> m) : model_(std::move(m)) {}

  py::dict reconstruct(const Array<float>& image, double ratio, std::uint64_t seed, const std::string& target_mode,
                       double lambda) {
    const ModelConfig& mc = model_.config();
    const SpectralImage img = to_image(image, std::nullopt);
    const TokenGrid grid = patchify(img, mc.p, mc.k);
    if (grid.dims.gh != mc.max_grid.gh || grid.dims.gw != mc.max_grid.gw) model_.resize_grid(grid.dims.gh, grid.dims.gw);
    Rng rng(seed);
    const MaskPlan plan = build_mask(grid.dims, ratio, rng);
    ObjectiveConfig oc;
    oc.target_mode = parse_target_mode(target_mode);
    oc.lambda = lambda;
    oc.validate();
    const ReconTargets tg = make_targets(grid, oc.target_mode, float(oc.target_eps));
    NoGradGuard guard;
    const Var<float> recon = model_.reconstruct(grid.tokens, plan, grid.dims);
    const LossBreakdown loss = total_loss(recon, tg.values, plan, grid.dims, oc).breakdown();
    py::dict out;
    out["reconstruction"] = to_array(recon.value());
    out["targets"] = to_array(tg.values);
    out["masked"] = plan.masked;
    out["visible"] = plan.visible;
    out["grid"] = from_grid(grid.dims);
    out["loss"] = breakdown_dict(loss);
    return out;
  }

  py::dict config() const {
    const ModelConfig& c = model_.config();
    py::dict d;
    d["embed_dim"] = c.embed_dim;
    d["encoder_depth"] = c.encoder_depth;
    d["encoder_heads"] = c.encoder_heads;
    d["decoder_dim"] = c.decoder_dim;
    d["decoder_depth"] = c.decoder_depth;
    d["decoder_heads"] = c.decoder_heads;
    d["p"] = c.p;
    d["k"] = c.k;
    d["max_grid"] = from_grid(c.max_grid);
    return d;
  }

  std::size_t parameter_count() { return model_.parameters().element_count(); }

 private:
  MaskedAutoencoder<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "spectral masked-autoencoder core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<TokenizationError>(m, "TokenizationError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());

  m.def(
      "patchify",
      [](const Array<float>& image, std::size_t p, std::size_t k) {
        const TokenGrid g = patchify(to_image(image, std::nullopt), p, k);
        return py::make_tuple(to_array(g.tokens), from_grid(g.dims));
      },
      py::arg("image"), py::arg("p"), py::arg("k"),
      "Split an (H, W, D) image into p x p x k tokens; returns (tokens [N, p*p*k], (gh, gw, gs)).");
  m.def(
      "unpatchify",
      [](const Array<float>& tokens, std::tuple<std::size_t, std::size_t, std::size_t> grid, std::size_t p,
         std::size_t k) { return to_array(unpatchify(to_tensor(tokens), to_grid(grid), p, k)); },
      py::arg("tokens"), py::arg("grid"), py::arg("p"), py::arg("k"));

  m.def(
      "build_mask",
      [](std::size_t total, double ratio, std::uint64_t seed) {
        Rng rng(seed);
        const MaskPlan p = build_mask(total, ratio, rng);
        return py::make_tuple(p.masked, p.visible);
      },
      py::arg("total"), py::arg("ratio"), py::arg("seed"), "Returns (masked, visible) ascending index lists.");

  m.def(
      "total_loss",
      [](const Array<double>& recon, const Array<double>& targets, const std::vector<std::size_t>& masked,
         std::tuple<std::size_t, std::size_t, std::size_t> grid, double lambda, const std::string& scope) {
        const GridDims g = to_grid(grid);
        ObjectiveConfig oc;
        oc.lambda = lambda;
        oc.token_scope = parse_token_scope(scope);
        oc.validate();
        const TensorT<double> r = to_tensor(recon);
        return breakdown_dict(
            total_loss(Var<double>::constant(r), to_tensor(targets), plan_from(g.total(), masked), g, oc).breakdown());
      },
      py::arg("recon"), py::arg("targets"), py::arg("masked"), py::arg("grid"), py::arg("lam") = 1.0,
      py::arg("scope") = "all_tokens", "Token + lambda * spectral reconstruction loss; returns a dict of terms.");

  m.def("average_precision", &average_precision, py::arg("scores"), py::arg("labels"));
  m.def(
      "mean_average_precision",
      [](const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& labels) {
        const MapResult r = mean_average_precision(scores, labels);
        py::dict d;
        d["macro"] = r.macro;
        d["micro"] = r.micro;
        d["per_class"] = r.per_class;
        d["skipped"] = r.skipped;
        return d;
      },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "segmentation_metrics",
      [](const std::vector<int>& truth, const std::vector<int>& pred, std::size_t classes) {
        if (truth.size() != pred.size()) throw DimensionError("truth and prediction lengths differ");
        ConfusionMatrix cm(classes);
        for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
        std::vector<std::optional<double>> iou;
        for (std::size_t c = 0; c < classes; ++c) iou.push_back(cm.iou(c));
        py::dict d;
        d["oa"] = cm.overall_accuracy();
        d["miou"] = cm.mean_iou();
        d["iou"] = iou;
        return d;
      },
      py::arg("truth"), py::arg("pred"), py::arg("classes"));
  m.def(
      "precision_recall_f1",
      [](const std::vector<int>& truth, const std::vector<int>& pred) {
        if (truth.size() != pred.size()) throw DimensionError("truth and prediction lengths differ");
        BinaryCounts c;
        for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], pred[i]);
        const PrfResult r = precision_recall_f1(c);
        py::dict d;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        d["f1"] = r.f1;
        d["notes"] = r.notes;
        return d;
      },
      py::arg("truth"), py::arg("pred"));

  m.def(
      "read_raster",
      [](const std::filesystem::path& path) {
        const SpectralImage img = read_raster(path);
        return py::make_tuple(to_array(img.values), img.band_names);
      },
      py::arg("path"), "Returns (array [H, W, D] float32, band names).");
  m.def(
      "write_raster",
      [](const std::filesystem::path& path, const Array<float>& image,
         std::optional<std::vector<std::string>> band_names) { write_raster(to_image(image, band_names), path); },
      py::arg("path"), py::arg("image"), py::arg("band_names") = py::none());

  m.def(
      "parameter_counts",
      [](const std::string& preset) {
        const ModelConfig c = ModelConfig::preset(preset, {});
        return py::make_tuple(encoder_parameter_count(c), decoder_parameter_count(c));
      },
      py::arg("preset"), "Closed-form (encoder, decoder) parameter counts of a preset.");

  py::class_<PyModel>(m, "MaskedAutoencoder")
      .def(py::init<const std::string&, std::tuple<std::size_t, std::size_t, std::size_t>, std::uint64_t>(),
           py::arg("preset") = "tiny", py::arg("grid") = std::make_tuple(4, 4, 2), py::arg("seed") = 0)
      .def_static(
          "from_checkpoint",
          [](const std::filesystem::path& path) { return PyModel(model_from_checkpoint(load_checkpoint(path))); },
          py::arg("path"))
      .def("reconstruct", &PyModel::reconstruct, py::arg("image"), py::arg("ratio") = 0.75, py::arg("seed") = 0,
           py::arg("target_mode") = "per_token_normalized", py::arg("lam") = 1.0)
      .def_property_readonly("config", &PyModel::config)
      .def("parameter_count", &PyModel::parameter_count);

  m.def(
      "gradient_check",
      [](std::uint64_t seed, bool inject_fault) {
        ModelGradCheckSpec spec;
        spec.seed = spec.check.seed = seed;
        std::function<Var<double>(const Var<double>&)> tap;
        if (inject_fault) tap = [](const Var<double>& v) { return faulty_identity(v); };
        GradCheckReport r;
        {
          py::gil_scoped_release release;
          r = model_grad_check(spec, tap);
        }
        return py::make_tuple(r.max_rel_error, r.worst_param);
      },
      py::arg("seed") = 0, py::arg("inject_fault") = false,
      "End-to-end gradient check of the tiny model; returns (max relative error, worst parameter).");

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out_dir, const std::string& task, std::size_t height, std::size_t width,
         std::size_t bands, std::size_t classes, std::size_t samples, double rho, std::uint64_t seed) {
        SyntheticSpec s;
        s.height = height;
        s.width = width;
        s.bands = bands;
        s.classes = classes;
        s.samples = samples;
        s.rho = rho;
        s.seed = seed;
        return generate_synthetic(s, parse_task(task), out_dir).samples.size();
      },
      py::arg("out_dir"), py::arg("task") = "pretrain", py::arg("height") = 16, py::arg("width") = 16,
      py::arg("bands") = 12, py::arg("classes") = 4, py::arg("samples") = 32, py::arg("rho") = 0.8,
      py::arg("seed") = 0, "Writes a seeded synthetic dataset with manifest.json; returns the sample count.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "spgt");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::run_cli(int(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
