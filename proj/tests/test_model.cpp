#include <chrono>
#include <cmath>
#include <numeric>

#include "spgt/gradcheck.hpp"
#include "spgt/gradsuite.hpp"
#include "spgt/model.hpp"
#include "spgt/ops.hpp"
#include "test_util.hpp"

using namespace spgt;
using spgt::test::random_image;
using spgt::test::random_tensor;

namespace {

// Tiny widths with the 8x8x3 token geometry used by the large presets.
ModelConfig narrow_8x8x3(GridDims grid) {
  ModelConfig c = ModelConfig::tiny(grid);
  c.p = 8;
  c.k = 3;
  return c;
}

TensorT<double> tokens_for(const ModelConfig& cfg, const GridDims& g, Rng& rng) {
  return random_tensor<double>({g.total(), cfg.token_length()}, rng);
}

void zero(Parameter<double>* p) {
  ASSERT_NE(p, nullptr);
  for (auto& v : p->value.data()) v = 0;
}

}  // namespace

TEST(ModelConfig, ValidationRules) {
  ModelConfig c = ModelConfig::tiny({4, 4, 2});
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.encoder_heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.decoder_depth = c.encoder_depth;
  bad.decoder_dim = c.embed_dim;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.p = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(ModelConfig::preset("giant", {}), ConfigError);
}

TEST(ModelConfig, PresetDefaults) {
  const auto b = ModelConfig::base();
  EXPECT_EQ(b.embed_dim, 768u);
  EXPECT_EQ(b.encoder_depth, 12u);
  EXPECT_EQ(b.decoder_depth, 4u);
  EXPECT_EQ(b.decoder_dim, 384u);
  EXPECT_EQ(b.decoder_heads, 6u);
  EXPECT_EQ(b.token_length(), 192u);
  EXPECT_EQ(b.max_grid, (GridDims{12, 12, 4}));
  EXPECT_EQ(ModelConfig::large().encoder_depth, 24u);
  EXPECT_EQ(ModelConfig::huge().encoder_depth, 32u);
}

TEST(ParameterCount, BaseIsAbout86M) {
  const double n = double(encoder_parameter_count(ModelConfig::base()));
  EXPECT_NEAR(n, 86e6, 0.05 * 86e6);
  EXPECT_NEAR(double(encoder_parameter_count(ModelConfig::large())), 307e6, 0.05 * 307e6);
  EXPECT_NEAR(double(encoder_parameter_count(ModelConfig::huge())), 632e6, 0.05 * 632e6);
}

TEST(ParameterCount, FormulaMatchesInstantiatedModels) {
  Rng rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig c;
    c.encoder_heads = 1 + rng.below(3);
    c.embed_dim = c.encoder_heads * (2 + rng.below(4));
    c.encoder_depth = 1 + rng.below(3);
    c.decoder_heads = 1 + rng.below(2);
    c.decoder_dim = c.decoder_heads * (2 + rng.below(3));
    c.decoder_depth = c.encoder_depth > 1 ? rng.below(c.encoder_depth) + 1 : 1;
    if (c.decoder_depth >= c.encoder_depth && c.decoder_dim >= c.embed_dim) c.decoder_dim = 1, c.decoder_heads = 1;
    c.p = 1 + rng.below(3);
    c.k = 1 + rng.below(3);
    c.max_grid = {1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    MaskedAutoencoder<float> m(c, trial);
    EXPECT_EQ(m.encoder().parameters().element_count(), encoder_parameter_count(c)) << trial;
    EXPECT_EQ(m.decoder().parameters().element_count(), decoder_parameter_count(c)) << trial;
  }
}

TEST(Embed, ZeroTokenAndZeroPositionsGiveBias) {
  ModelConfig c = ModelConfig::tiny({2, 2, 2});
  Rng rng(1);
  Encoder<double> enc(c, rng);
  auto ps = enc.parameters();
  zero(ps.find("pos.spatial"));
  zero(ps.find("pos.spectral"));
  auto* b = ps.find("patch_embed.bias");
  for (std::size_t i = 0; i < b->value.size(); ++i) b->value[i] = 0.1 * double(i);
  const GridDims g{2, 2, 2};
  const TensorT<double> tokens({2, c.token_length()});
  const std::vector<std::size_t> idx{0, 5};
  const auto out = enc.embed(tokens, idx, g).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < c.embed_dim; ++j) EXPECT_EQ(out.at(r, j), b->value[j]);
}

TEST(Embed, HandSetProjectionAndPositions) {
  ModelConfig c;
  c.p = 1, c.k = 2, c.embed_dim = 2, c.encoder_heads = 1, c.decoder_dim = 2, c.decoder_heads = 1;
  c.encoder_depth = 2, c.decoder_depth = 1, c.max_grid = {1, 2, 1};
  Rng rng(2);
  Encoder<double> enc(c, rng);
  auto ps = enc.parameters();
  ps.find("patch_embed.weight")->value = TensorT<double>::matrix(2, 2, {1, 2, 3, 4});
  ps.find("patch_embed.bias")->value = TensorT<double>({2}, std::vector<double>{0.5, -0.5});
  ps.find("pos.spatial")->value = TensorT<double>::matrix(2, 2, {10, 20, 30, 40});
  ps.find("pos.spectral")->value = TensorT<double>::matrix(1, 2, {100, 200});
  const auto tok = TensorT<double>::matrix(1, 2, {5, 6});
  const std::vector<std::size_t> idx{1};  // site (0, 1)
  const auto out = enc.embed(tok, idx, GridDims{1, 2, 1}).value();
  // [5 6] x [[1 2] [3 4]] = [23 34]
  EXPECT_DOUBLE_EQ(out.at(0, 0), 23 + 0.5 + 30 + 100);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 34 - 0.5 + 40 + 200);
}

TEST(Embed, RowPermutationCommutes) {
  ModelConfig c = ModelConfig::tiny({2, 2, 2});
  Rng rng(3);
  Encoder<double> enc(c, rng);
  const GridDims g{2, 2, 2};
  const auto tokens = tokens_for(c, g, rng);
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  const auto base = enc.embed(tokens, idx, g).value();
  const auto perm = rng.permutation(8);
  std::vector<std::size_t> pidx(8);
  TensorT<double> ptok({8, c.token_length()});
  for (std::size_t i = 0; i < 8; ++i) {
    pidx[i] = perm[i];
    std::copy_n(tokens.row(perm[i]).begin(), c.token_length(), ptok.row(i).begin());
  }
  const auto out = enc.embed(ptok, pidx, g).value();
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < c.embed_dim; ++j) EXPECT_EQ(out.at(i, j), base.at(perm[i], j));
}

TEST(Embed, GridBeyondTablesIsConfigError) {
  ModelConfig c = ModelConfig::tiny({2, 2, 2});
  Rng rng(4);
  Encoder<double> enc(c, rng);
  const GridDims g{3, 2, 2};
  const auto tokens = tokens_for(c, g, rng);
  const std::vector<std::size_t> idx{0};
  EXPECT_THROW(enc.embed(select_rows(tokens, idx), idx, g), ConfigError);
}

TEST(Attention, SingleTokenReturnsValueProjection) {
  Rng rng(5);
  Attention<double> att(4, 2, rng);
  const auto x = random_tensor<double>({1, 4}, rng);
  const auto y = att(Var<double>::constant(x)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    double acc = att.bo.value[j];
    for (std::size_t m = 0; m < 4; ++m) {
      double v = 0;
      for (std::size_t i = 0; i < 4; ++i) v += x[i] * att.wv.value.at(i, m);
      acc += v * att.wo.value.at(m, j);
    }
    EXPECT_NEAR(y[j], acc, 1e-12);
  }
}

TEST(Attention, MultiHeadMatchesNaiveOracle) {
  Rng rng(6);
  const std::size_t t = 5, d = 6, h = 3, dh = 2;
  Attention<double> att(d, h, rng);
  const auto x = random_tensor<double>({t, d}, rng);
  const auto y = att(Var<double>::constant(x)).value();
  auto proj = [&](const TensorT<double>& w) {
    TensorT<double> o({t, d});
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) o.at(r, j) += x.at(r, i) * w.at(i, j);
    return o;
  };
  const auto q = proj(att.wq.value), k = proj(att.wk.value), v = proj(att.wv.value);
  TensorT<double> z({t, d});
  for (std::size_t hh = 0; hh < h; ++hh)
    for (std::size_t r = 0; r < t; ++r) {
      std::vector<double> s(t);
      double mx = -1e300, sum = 0;
      for (std::size_t c = 0; c < t; ++c) {
        for (std::size_t e = 0; e < dh; ++e) s[c] += q.at(r, hh * dh + e) * k.at(c, hh * dh + e);
        s[c] /= std::sqrt(double(dh));
        mx = std::max(mx, s[c]);
      }
      for (auto& e : s) sum += (e = std::exp(e - mx));
      for (std::size_t c = 0; c < t; ++c)
        for (std::size_t e = 0; e < dh; ++e) z.at(r, hh * dh + e) += s[c] / sum * v.at(c, hh * dh + e);
    }
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = att.bo.value[j];
      for (std::size_t m = 0; m < d; ++m) acc += z.at(r, m) * att.wo.value.at(m, j);
      EXPECT_NEAR(y.at(r, j), acc, 1e-12);
    }
}

TEST(Block, PermutationEquivariant) {
  Rng rng(7);
  Block<double> blk(8, 2, 32, 1e-6, 0.0, rng);
  const auto x = random_tensor<double>({6, 8}, rng);
  const auto y = blk(Var<double>::constant(x), {}).value();
  const auto perm = rng.permutation(6);
  const auto px = select_rows(x, perm);
  const auto py = blk(Var<double>::constant(px), {}).value();
  // key order changes the summation order in S V, so equality is to rounding
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(py.at(i, j), y.at(perm[i], j), 1e-13);
}

TEST(Block, GradientCheck) {
  Rng rng(8);
  Block<double> blk(8, 2, 16, 1e-6, 0.0, rng);
  Parameter<double> x(random_tensor<double>({4, 8}, rng));
  const auto w = random_tensor<double>({4, 8}, rng);
  ParameterSet<double> set;
  blk.collect(set, "block");
  set.add("x", x);
  auto loss = [&]() { return ops::sum_all(ops::mul(blk(Var<double>::leaf(x), {}), Var<double>::constant(w))); };
  EXPECT_LE(grad_check<double>(loss, set).max_rel_error, 1e-3);
}

TEST(Encode, VisibleShapeAndFullEquivalence) {
  const GridDims g{12, 12, 4};
  const auto c = narrow_8x8x3(g);
  MaskedAutoencoder<double> m(c, 9);
  Rng rng(9);
  const auto tokens = tokens_for(c, g, rng);
  const auto plan = build_mask(g, 0.9, rng);
  ASSERT_EQ(plan.visible_count(), 58u);
  const auto vis = select_rows(tokens, plan.visible);
  const auto z = m.encoder().encode(vis, plan, g).value();
  EXPECT_EQ(z.shape(), (Shape{58, c.embed_dim}));
  EXPECT_TRUE(bitwise_equal(z, m.encoder().encode(vis, plan, g).value()));

  const auto all = no_mask(g.total());
  EXPECT_TRUE(bitwise_equal(m.encoder().encode(tokens, all, g).value(), m.encoder().forward_full(tokens, g).value()));
}

TEST(Encode, FullForwardRowCount) {
  const GridDims g{16, 16, 4};
  const auto c = narrow_8x8x3(g);
  MaskedAutoencoder<float> m(c, 10);
  Rng rng(10);
  const auto img = random_image(128, 128, 12, rng);
  const auto grid = patchify(img, 8, 3);
  NoGradGuard ng;
  EXPECT_EQ(m.encoder().forward_full(grid.tokens, grid.dims).shape(), (Shape{1024, c.embed_dim}));
}

TEST(Encode, FewerVisibleTokensRunFaster) {
  const GridDims g{12, 12, 4};
  const auto c = narrow_8x8x3(g);
  MaskedAutoencoder<float> m(c, 11);
  Rng rng(11);
  const auto grid = patchify(random_image(96, 96, 12, rng), 8, 3);
  NoGradGuard ng;
  auto time_at = [&](double ratio) {
    auto best = std::chrono::duration<double>::max();
    for (int rep = 0; rep < 3; ++rep) {
      Rng r(100 + rep);
      const auto plan = build_mask(g, ratio, r);
      const auto vis = select_rows(grid.tokens, plan.visible);
      const auto t0 = std::chrono::steady_clock::now();
      m.encoder().encode(vis, plan, g);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0));
    }
    return best.count();
  };
  EXPECT_LT(time_at(0.9), time_at(0.0));
}

TEST(Decode, CoversEveryTokenAtBaseGeometry) {
  const GridDims g{12, 12, 4};
  const auto c = narrow_8x8x3(g);
  MaskedAutoencoder<float> m(c, 12);
  Rng rng(12);
  const auto grid = patchify(random_image(96, 96, 12, rng), 8, 3);
  const auto plan = build_mask(g, 0.75, rng);
  NoGradGuard ng;
  const auto out = m.reconstruct(grid.tokens, plan, g).value();
  EXPECT_EQ(out.shape(), (Shape{576, 192}));
}

TEST(Decode, MaskTokenReachesOnlyMaskedRows) {
  const GridDims g{2, 2, 2};
  const auto c = ModelConfig::tiny(g);
  MaskedAutoencoder<double> m(c, 13);
  Rng rng(13);
  const auto plan = build_mask(g, 0.5, rng);
  const auto lat = Var<double>::constant(random_tensor<double>({plan.visible_count(), c.embed_dim}, rng));
  const auto before = m.decoder().assemble(lat, plan, g).value();
  for (auto& v : m.decoder().mask_token().value.data()) v += 1.0;
  const auto after = m.decoder().assemble(lat, plan, g).value();
  std::vector<bool> is_masked(g.total(), false);
  for (auto i : plan.masked) is_masked[i] = true;
  for (std::size_t r = 0; r < g.total(); ++r)
    for (std::size_t j = 0; j < c.decoder_dim; ++j) {
      if (is_masked[r]) EXPECT_NE(after.at(r, j), before.at(r, j));
      else EXPECT_EQ(after.at(r, j), before.at(r, j));
    }
}

TEST(Decode, VisibleLatentsLandAtTheirIndices) {
  const GridDims g{2, 2, 2};
  const auto c = ModelConfig::tiny(g);
  MaskedAutoencoder<double> m(c, 14);
  auto ps = m.decoder().parameters();
  zero(ps.find("pos.spatial"));
  zero(ps.find("pos.spectral"));
  const auto& w = ps.find("embed.weight")->value;
  const auto& b = ps.find("embed.bias")->value;
  Rng rng(14);
  const auto plan = build_mask(g, 0.5, rng);
  const auto lat = random_tensor<double>({plan.visible_count(), c.embed_dim}, rng);
  const auto out = m.decoder().assemble(Var<double>::constant(lat), plan, g).value();
  for (std::size_t i = 0; i < plan.visible_count(); ++i)
    for (std::size_t j = 0; j < c.decoder_dim; ++j) {
      double acc = b[j];
      for (std::size_t e = 0; e < c.embed_dim; ++e) acc += lat.at(i, e) * w.at(e, j);
      EXPECT_NEAR(out.at(plan.visible[i], j), acc, 1e-12);
    }
  for (auto r : plan.masked)
    for (std::size_t j = 0; j < c.decoder_dim; ++j)
      EXPECT_EQ(out.at(r, j), m.decoder().mask_token().value[j]);
}

TEST(Decode, MisalignedLatentsRejected) {
  const GridDims g{2, 2, 2};
  const auto c = ModelConfig::tiny(g);
  MaskedAutoencoder<double> m(c, 15);
  Rng rng(15);
  const auto plan = build_mask(g, 0.5, rng);
  const auto lat = Var<double>::constant(TensorT<double>({plan.visible_count() + 1, c.embed_dim}));
  EXPECT_THROW(m.decoder().decode(lat, plan, g), DimensionError);
}

TEST(PosTable, ResizeKeepsSameSizeAndConstants) {
  Rng rng(16);
  PosTable<double> t(GridDims{3, 3, 2}, 4, rng);
  const auto orig = t.spatial.value;
  t.resize_spatial(3, 3);
  for (std::size_t i = 0; i < orig.size(); ++i) EXPECT_NEAR(t.spatial.value[i], orig[i], 1e-12);
  for (auto& v : t.spatial.value.data()) v = 0.25;
  t.resize_spatial(5, 4);
  EXPECT_EQ(t.spatial.value.shape(), (Shape{20, 4}));
  for (double v : t.spatial.value.data()) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(DropPath, InactiveAtEvaluationAndNeedsRngInTraining) {
  auto c = ModelConfig::tiny({2, 2, 2});
  c.drop_path = 0.5;
  MaskedAutoencoder<double> m(c, 17);
  Rng rng(17);
  const GridDims g{2, 2, 2};
  const auto tokens = tokens_for(c, g, rng);
  const auto a = m.encoder().forward_full(tokens, g).value();
  EXPECT_TRUE(bitwise_equal(a, m.encoder().forward_full(tokens, g).value()));
  ForwardContext train{true, nullptr};
  EXPECT_THROW(m.encoder().forward_full(tokens, g, train), ConfigError);
}

TEST(EndToEnd, GradientCheckThroughEncoderAndDecoder) {
  const auto r = model_grad_check(ModelGradCheckSpec{});
  EXPECT_LE(r.max_rel_error, 1e-3) << "worst " << r.worst_param;
}

TEST(EndToEnd, FaultyBackwardIsDetected) {
  const auto r = model_grad_check(ModelGradCheckSpec{}, [](const Var<double>& x) { return faulty_identity(x); });
  EXPECT_GT(r.max_rel_error, 1e-3);
}
