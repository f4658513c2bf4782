#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "render.hpp"
#include "run_config.hpp"
#include "spgt/error.hpp"
#include "test_util.hpp"

using namespace spgt;
using namespace spgt::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "spgt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const json& doc) {
  try {
    parse_run_config(doc, "/tmp");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// A tiny classification dataset plus pretrain/fine-tune configs in one directory.
struct Workspace {
  fs::path dir, data, config;

  explicit Workspace(const std::string& name) : dir(spgt::test::temp_dir(name)) {
    write_json_file(dir / "synth.json", json{{"task", "classify"},
                                             {"height", 8},
                                             {"width", 8},
                                             {"bands", 12},
                                             {"classes", 3},
                                             {"samples", 10},
                                             {"seed", 4}});
    data = dir / "data";
    const CliRun s = run({"synth", "--config", (dir / "synth.json").string(), "--out", data.string()});
    EXPECT_EQ(s.code, 0) << s.err;
    config = dir / "run.json";
    write_json_file(config, base_config());
  }

  json base_config() const {
    return json{{"seed", 1},
                {"out", (dir / "out").string()},
                {"model", {{"preset", "tiny"}}},
                {"pretrain",
                 {{"mask_ratio", 0.75},
                  {"stages",
                   {{{"manifest", "data/manifest.json"}, {"height", 8}, {"width", 8}, {"epochs", 3}, {"batch_size", 2}}}}}},
                {"finetune",
                 {{"task", "classify"},
                  {"manifest", "data/manifest.json"},
                  {"epochs", 1},
                  {"batch_size", 2},
                  {"head_hidden", 8},
                  {"decoder_channels", 4}}}};
  }
};

}  // namespace

TEST(RunConfig, UnknownKeysNameTheirPath) {
  EXPECT_NE(config_error(json{{"model", {{"embed_dimm", 4}}}}).find("model.embed_dimm"), std::string::npos);
  EXPECT_NE(config_error(json{{"seeed", 1}}).find("seeed"), std::string::npos);
  const json stage = {{"manifest", "m.json"}, {"height", 8}, {"width", 8}, {"epochs", 1}, {"batch_size", 1}, {"epoch", 2}};
  EXPECT_NE(config_error(json{{"pretrain", {{"stages", {stage}}}}}).find("pretrain.stages[0].epoch"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"objective", {{"lambda", -1}}}}).find("lambda"), std::string::npos);
  EXPECT_NE(config_error(json{{"objective", {{"token_scope", "visible"}}}}).find("token_scope"), std::string::npos);
  EXPECT_NE(config_error(json{{"pretrain", {{"mask_ratio", 1.0}}}}).find("mask_ratio"), std::string::npos);
  EXPECT_NE(config_error(json{{"gradcheck", {{"eps", 0.5}}}}).find("eps"), std::string::npos);
  EXPECT_NE(config_error(json{{"model", {{"preset", "giant"}}}}).find("preset"), std::string::npos);
}

TEST(RunConfig, ResolvedConfigReparsesToTheSameDocument) {
  Workspace ws("cfg");
  const RunConfig c = load_run_config(ws.config);
  const json once = c.to_json();
  const json twice = parse_run_config(once, ws.dir).to_json();
  EXPECT_EQ(once, twice);
  EXPECT_EQ(c.stages.front().manifest, "data/manifest.json");
  EXPECT_EQ(c.resolve("data/manifest.json"), ws.dir / "data/manifest.json");
}

TEST(Cli, UsageErrorsAndHelp) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"synth", "--out", "/tmp/x"}).code, kExitUsage);
  const CliRun help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("pretrain"), std::string::npos);
  const CliRun missing = run({"synth", "--config", "/nonexistent/spec.json", "--out", "/tmp/spgt_never"});
  EXPECT_EQ(missing.code, kExitFailure);
  EXPECT_NE(missing.err.find("/nonexistent/spec.json"), std::string::npos);
}

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
  const fs::path dir = spgt::test::temp_dir("synth");
  write_json_file(dir / "spec.json", json{{"task", "segment"}, {"height", 8}, {"width", 8}, {"bands", 6},
                                          {"classes", 3}, {"samples", 4}, {"seed", 9}});
  ASSERT_EQ(run({"synth", "--config", (dir / "spec.json").string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(run({"synth", "--config", (dir / "spec.json").string(), "--out", (dir / "b").string()}).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir / "a");
    if (rel == "manifest.json") continue;  // embeds its own directory
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 9u);

  write_json_file(dir / "bad.json", json{{"task", "segment"}, {"rho", 2.0}});
  EXPECT_EQ(run({"synth", "--config", (dir / "bad.json").string(), "--out", (dir / "c").string()}).code, kExitUsage);
}

TEST(Cli, PretrainResumeMatchesUninterruptedRun) {
  Workspace ws("resume");
  const std::string full = (ws.dir / "full").string(), part = (ws.dir / "part").string();
  ASSERT_EQ(run({"pretrain", "--config", ws.config.string(), "--out", full}).code, 0);
  const CliRun first = run({"pretrain", "--config", ws.config.string(), "--out", part, "--max-epochs", "1"});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_FALSE(fs::exists(fs::path(part) / "final.spck"));
  const CliRun rest = run({"pretrain", "--config", ws.config.string(), "--out", part, "--resume",
                        (fs::path(part) / "checkpoint_last.spck").string()});
  ASSERT_EQ(rest.code, 0) << rest.err;
  EXPECT_EQ(slurp(fs::path(full) / "final.spck"), slurp(fs::path(part) / "final.spck"));
  EXPECT_EQ(slurp(fs::path(full) / "epochs.jsonl"), slurp(fs::path(part) / "epochs.jsonl"));
  EXPECT_TRUE(fs::exists(fs::path(full) / "resolved_config.json"));

  // two stages are rejected by the single-stage command
  json two = ws.base_config();
  two["pretrain"]["stages"].push_back(two["pretrain"]["stages"][0]);
  write_json_file(ws.dir / "two.json", two);
  EXPECT_EQ(run({"pretrain", "--config", (ws.dir / "two.json").string()}).code, kExitUsage);
  EXPECT_EQ(run({"progressive", "--config", (ws.dir / "two.json").string(), "--out", (ws.dir / "prog").string()}).code,
            0);
}

TEST(Cli, FinetuneThenEvalIsRepeatable) {
  Workspace ws("ft");
  const fs::path pre = ws.dir / "pre", ft = ws.dir / "ft";
  ASSERT_EQ(run({"pretrain", "--config", ws.config.string(), "--out", pre.string()}).code, 0);
  const CliRun tune = run({"finetune", "--config", ws.config.string(), "--out", ft.string(), "--checkpoint",
                        (pre / "final.spck").string(), "--train-fraction", "0.5"});
  ASSERT_EQ(tune.code, 0) << tune.err;
  EXPECT_NE(tune.out.find("train samples 4 of 8"), std::string::npos) << tune.out;
  const json metrics = json::parse(slurp(ft / "metrics.jsonl"));
  EXPECT_TRUE(metrics["values"].contains("accuracy"));

  const auto eval_args = [&](const std::string& out) {
    return std::vector<std::string>{"eval", "--config", ws.config.string(), "--out", out, "--checkpoint",
                                    (ft / "finetuned.spck").string()};
  };
  ASSERT_EQ(run(eval_args((ws.dir / "e1").string())).code, 0);
  ASSERT_EQ(run(eval_args((ws.dir / "e2").string())).code, 0);
  EXPECT_EQ(slurp(ws.dir / "e1" / "eval.jsonl"), slurp(ws.dir / "e2" / "eval.jsonl"));
  EXPECT_EQ(json::parse(slurp(ws.dir / "e1" / "eval.jsonl"))["values"], metrics["values"]);

  EXPECT_EQ(run({"finetune", "--config", ws.config.string(), "--train-fraction", "0"}).code, kExitUsage);
  EXPECT_EQ(run({"eval", "--config", ws.config.string(), "--task", "segment", "--checkpoint",
                 (ft / "finetuned.spck").string()})
                .code,
            kExitUsage);
}

TEST(Cli, ReconstructWritesPreviewsAndMetrics) {
  Workspace ws("recon");
  const fs::path pre = ws.dir / "pre", rec = ws.dir / "rec";
  ASSERT_EQ(run({"pretrain", "--config", ws.config.string(), "--out", pre.string()}).code, 0);
  const fs::path raster = ws.data / "images" / "000000.spgr";
  ASSERT_TRUE(fs::exists(raster)) << "synthetic raster naming changed";
  const CliRun r = run({"reconstruct", "--checkpoint", (pre / "final.spck").string(), "--raster", raster.string(),
                     "--ratios", "0,0.5,0.75", "--out", rec.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& p : band_presets()) {
    for (const char* kind : {"composite", "pure"}) {
      const std::string bytes = slurp(rec / ("r0.75_" + p.name + "_" + kind + ".ppm"));
      ASSERT_EQ(bytes.substr(0, 11), "P6\n8 8\n255\n") << p.name;
      EXPECT_EQ(bytes.size(), 11u + 8 * 8 * 3);
    }
    EXPECT_TRUE(fs::exists(rec / ("original_" + p.name + ".ppm")));
  }
  std::vector<json> lines;
  std::ifstream in(rec / "reconstruction.jsonl");
  for (std::string l; std::getline(in, l);) lines.push_back(json::parse(l));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["masked_tokens"], 0);
  EXPECT_EQ(lines[0]["mse_composite"].get<double>(), 0.0);
  EXPECT_GT(lines[2]["masked_tokens"].get<int>(), lines[1]["masked_tokens"].get<int>());

  EXPECT_EQ(run({"reconstruct", "--checkpoint", (pre / "final.spck").string(), "--raster", raster.string(),
                 "--ratios", "1.0", "--out", rec.string()})
                .code,
            kExitUsage);
  EXPECT_EQ(run({"reconstruct", "--checkpoint", (pre / "final.spck").string(), "--raster", raster.string(),
                 "--preset", "sunset", "--out", rec.string()})
                .code,
            kExitUsage);
}

TEST(Cli, AblationWritesOneRecordPerValue) {
  Workspace ws("ablate");
  const CliRun r = run({"ablate", "--config", ws.config.string(), "--out", (ws.dir / "ab").string(), "--axis", "lambda",
                     "--values", "0,1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(ws.dir / "ab" / "ablation.jsonl");
  std::vector<json> recs;
  for (std::string l; std::getline(in, l);) recs.push_back(json::parse(l));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0]["value"], "0");
  EXPECT_TRUE(recs[1]["metrics"]["values"].contains("accuracy"));
  EXPECT_EQ(run({"ablate", "--config", ws.config.string(), "--axis", "colour", "--values", "1"}).code, kExitUsage);
}

TEST(Cli, GradcheckExitCodes) {
  const CliRun ok = run({"gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("max relative error"), std::string::npos);
  EXPECT_NE(ok.out.find("encoder.blocks.0"), std::string::npos);
  const CliRun bad = run({"gradcheck", "--inject-fault"});
  EXPECT_EQ(bad.code, kExitFailure);
  EXPECT_NE(bad.out.find("FAILED"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--eps", "0.5"}).code, kExitUsage);
}

TEST(Render, PpmAndPresets) {
  EXPECT_EQ(band_presets().size(), 8u);
  EXPECT_THROW(find_preset("sunset"), ConfigError);
  SpectralImage img = SpectralImage::zeros(2, 3, 12);
  for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = float(i % 7);
  const Rgb8 rgb = render_preset(img, find_preset("ndvi"));
  EXPECT_EQ(rgb.pixels.size(), 2u * 3u * 3u);
  for (std::size_t i = 0; i < rgb.pixels.size(); i += 3) {
    EXPECT_EQ(rgb.pixels[i], rgb.pixels[i + 1]);  // index presets are grayscale
    EXPECT_EQ(rgb.pixels[i], rgb.pixels[i + 2]);
  }
  const auto flat = render_preset(SpectralImage::zeros(2, 2, 12), find_preset("agriculture"));
  for (auto v : flat.pixels) EXPECT_EQ(v, 0);
  const auto bytes = encode_ppm(rgb);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P6\n3 2\n255\n");
  EXPECT_THROW(render_preset(SpectralImage::zeros(2, 2, 4), find_preset("geology")), DataError);
}
