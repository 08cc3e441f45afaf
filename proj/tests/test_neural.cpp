#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "airslab/neural.hpp"
#include "airslab/rng.hpp"

using namespace airslab;
using namespace airslab::neural;
using oracle::Category;
using oracle::QuantileCdf;

namespace {

const Dims kSmall{32, 4, 2, 64, 16};

WeightStore small_lps(std::uint64_t seed = 1, double scale = 0.3) {
  return WeightStore::random(ModelKind::lps, kSmall, default_lps_edges(kSmall.d_model), seed, scale);
}

WeightStore small_se(std::uint64_t seed = 2, double scale = 0.3) {
  return WeightStore::random(ModelKind::se, kSmall, default_se_edges(kSmall.d_model / 16), seed, scale);
}

MatrixRf random_tokens(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  MatrixRf t(n, d);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c) t(r, c) = static_cast<float>(rng.normal());
  return t;
}

QuantileCdf ramp_cdf(double base, double step) {
  std::array<double, 16> q{};
  for (int k = 0; k < 16; ++k) q[static_cast<std::size_t>(k)] = base + step * k;
  return QuantileCdf::from_values(q);
}

std::array<double, 15> some_features() {
  return {120.0, -40.0, 10.0, 80.0, 120.0, 15.0, 6.0, 0.0, 0.0, -1.57, 8.0, 8.0, 10.0, -87.0, 1.0};
}

std::string fixture(const std::string& name) { return std::string(AIRSLAB_FIXTURE_DIR) + "/" + name; }

}  // namespace

TEST(Ple, Examples) {
  const std::vector<double> e{0.0, 1.0, 2.0};
  EXPECT_EQ(ple_encode(1.5, e), (std::vector<float>{1.0f, 0.5f}));
  EXPECT_EQ(ple_encode(-1.0, e), (std::vector<float>{0.0f, 0.0f}));
  EXPECT_EQ(ple_encode(9.0, e), (std::vector<float>{1.0f, 1.0f}));
}

TEST(Ple, NonIncreasingEdgesRejected) {
  EXPECT_THROW(ple_encode(0.5, std::vector<double>{0.0, 1.0, 1.0}), ValidationError);
  EXPECT_THROW(ple_encode(0.5, std::vector<double>{0.0}), ValidationError);
}

TEST(Encoder, ZeroWeightsReduceToLayerNorm) {
  const auto ws = WeightStore::zeros(ModelKind::lps, kSmall, default_lps_edges(32));
  const MatrixRf x = random_tokens(5, 32, 3);
  const MatrixRf y = encoder_forward(x, ws);
  for (int r = 0; r < 5; ++r) {
    const Eigen::RowVectorXf row = x.row(r);
    const float mean = row.mean();
    const float var = (row.array() - mean).square().mean();
    const Eigen::RowVectorXf ln = (row.array() - mean) / std::sqrt(var + 1e-5f);
    EXPECT_LE((y.row(r) - ln).cwiseAbs().maxCoeff(), 1e-5f);
  }
}

TEST(Encoder, SingleTokenIndependentOfHeadCount) {
  // One token: attention output is the value projection whatever the split.
  auto a = small_lps(5);
  auto b = a;
  b.dims.heads = 2;
  const MatrixRf x = random_tokens(1, 32, 4);
  EXPECT_LE((encoder_forward(x, a) - encoder_forward(x, b)).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(Encoder, DuplicatedRowsGiveIdenticalOutputs) {
  const auto ws = small_lps(6);
  MatrixRf x = random_tokens(6, 32, 8);
  x.row(4) = x.row(1);
  const MatrixRf y = encoder_forward(x, ws);
  EXPECT_EQ(y.row(4), y.row(1));
}

TEST(Encoder, ShapeMismatchNamesTensor) {
  auto ws = small_lps();
  ws.tensors["encoder.layers.1.mlp.fc1.weight"].shape = {63, 32};
  try {
    encoder_forward(random_tokens(2, 32, 1), ws);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.layers.1.mlp.fc1.weight"), std::string::npos);
  }
}

TEST(LpsForward, ZeroWeightsGiveHalfMask) {
  const auto ws = WeightStore::zeros(ModelKind::lps, kSmall, default_lps_edges(32));
  const auto f = some_features();
  const auto out = lps_forward(f, ws);
  for (double p : out.mask_prob) EXPECT_EQ(p, 0.5);
  for (double q : out.quantiles) EXPECT_EQ(q, 0.0);
}

TEST(LpsForward, FeatureSwapWithPositionsIsInvariant) {
  auto ws = small_lps(9);
  auto f = some_features();
  const auto ref = lps_forward(f, ws);
  auto swapped = ws;
  const int a = 0, b = 4;
  std::swap(f[a], f[b]);
  std::swap(swapped.ple_edges[a], swapped.ple_edges[b]);
  auto& pos = swapped.tensors["lps.pos_embed"].data;
  for (int c = 0; c < 32; ++c) std::swap(pos[static_cast<std::size_t>((48 + a) * 32 + c)],
                                         pos[static_cast<std::size_t>((48 + b) * 32 + c)]);
  const auto out = lps_forward(f, swapped);
  for (std::size_t t = 0; t < 48; ++t) {
    EXPECT_EQ(out.quantiles[t], ref.quantiles[t]);
    EXPECT_EQ(out.mask_prob[t], ref.mask_prob[t]);
  }
}

TEST(LpsForward, FiniteForExtremeInputs) {
  const auto ws = small_lps(10, 1.0);
  std::array<double, 15> f{};
  f.fill(1e9);
  const auto out = lps_forward(f, ws);
  for (std::size_t t = 0; t < 48; ++t) {
    EXPECT_TRUE(std::isfinite(out.quantiles[t]));
    EXPECT_GE(out.mask_prob[t], 0.0);
    EXPECT_LE(out.mask_prob[t], 1.0);
  }
}

TEST(LpsForward, FeatureCountChecked) {
  const std::vector<double> f(14, 0.0);
  EXPECT_THROW(lps_forward(f, small_lps()), ValidationError);
  EXPECT_THROW(lps_forward(some_features(), small_se()), ValidationError);
}

TEST(SeForward, SameCategoryPermutationIsExact) {
  const auto ws = small_se(11);
  std::vector<QuantileCdf> cdfs{ramp_cdf(-120, 1.0), ramp_cdf(-130, 0.5), ramp_cdf(-140, 2.0),
                                ramp_cdf(-150, 1.5), ramp_cdf(-135, 0.7), ramp_cdf(-160, 0.3),
                                ramp_cdf(-145, 1.1)};
  std::vector<Category> cats{Category::direct, Category::cascaded, Category::scattered,
                             Category::scattered, Category::noise, Category::noise, Category::noise};
  const double ref = se_forward(cdfs, cats, ws);
  auto p = cdfs;
  std::swap(p[4], p[6]);
  EXPECT_EQ(se_forward(p, cats, ws), ref);
  std::swap(p[2], p[3]);
  EXPECT_EQ(se_forward(p, cats, ws), ref);
}

TEST(SeForward, ZeroWeightsReturnHeadBias) {
  auto ws = WeightStore::zeros(ModelKind::se, kSmall, default_se_edges(2));
  ws.tensors["se.head.fc2.bias"].data[0] = 2.75f;
  EXPECT_EQ(se_forward({ramp_cdf(-100, 1)}, {Category::direct}, ws), 2.75);
  EXPECT_EQ(se_forward({ramp_cdf(-80, 2), ramp_cdf(-90, 1), ramp_cdf(-150, 1)},
                       {Category::direct, Category::cascaded, Category::noise}, ws),
            2.75);
}

TEST(SeForward, MissingDirectRejected) {
  EXPECT_THROW(se_forward({ramp_cdf(-100, 1)}, {Category::scattered}, small_se()), ValidationError);
}

TEST(Loss, SmoothL1Branches) {
  EXPECT_EQ(se_loss(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(se_loss(1.5, 1.0, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(se_loss(3.0, 1.0, 1.0), 1.5);
  // Continuity at the kink |e| = delta.
  EXPECT_DOUBLE_EQ(smooth_l1(0.5, 0.5), 0.25);
  EXPECT_NEAR(smooth_l1(0.5 - 1e-12, 0.5), 0.25, 1e-11);
  EXPECT_THROW(se_loss(0, 0, 0.0), ValidationError);
  EXPECT_NO_THROW(se_loss(0, 0, 1.0));
}

TEST(Loss, PerfectPredictionIsNearZero) {
  oracle::LpsRecord rec;
  rec.cdf_direct = ramp_cdf(-100, 1);
  rec.cdf_link = ramp_cdf(-120, 2);
  std::array<double, 16> noise{};
  noise.fill(-400);
  rec.cdf_noise = QuantileCdf::from_values(noise);
  LpsOutput pred;
  const auto m = rec.mask48();
  for (std::size_t k = 0; k < 16; ++k) {
    pred.quantiles[k] = rec.cdf_direct.q_db[k];
    pred.quantiles[k + 16] = rec.cdf_link.q_db[k];
    pred.quantiles[k + 32] = rec.cdf_noise.q_db[k];
  }
  for (std::size_t t = 0; t < 48; ++t) pred.mask_prob[t] = m[t] ? 1.0 : 0.0;
  EXPECT_LE(lps_loss(pred, rec).total, 1e-5);
}

TEST(Loss, SingleValidQuantileHandValue) {
  oracle::LpsRecord rec;
  std::array<double, 16> inv{};
  inv.fill(-400);
  rec.cdf_direct = rec.cdf_link = rec.cdf_noise = QuantileCdf::from_values(inv);
  auto one = inv;
  one[3] = -50.0;
  rec.cdf_link = QuantileCdf::from_values(one);
  LpsOutput pred;
  pred.quantiles[16 + 3] = -49.0;  // e = 2 delta with delta = 0.5
  const auto l = lps_loss(pred, rec, {0.5, 0.2, 20.0});
  EXPECT_DOUBLE_EQ(l.smooth, 0.75);
  EXPECT_EQ(l.slope, 0.0);
}

TEST(Loss, AllInvalidLeavesOnlyBce) {
  oracle::LpsRecord rec;
  std::array<double, 16> inv{};
  inv.fill(-400);
  rec.cdf_direct = rec.cdf_link = rec.cdf_noise = QuantileCdf::from_values(inv);
  LpsOutput pred;
  pred.quantiles.fill(17.0);
  pred.mask_prob.fill(0.25);
  const auto l = lps_loss(pred, rec, {0.5, 0.2, 20.0});
  EXPECT_EQ(l.smooth, 0.0);
  EXPECT_EQ(l.slope, 0.0);
  EXPECT_NEAR(l.bce, -std::log(0.75), 1e-12);
  EXPECT_DOUBLE_EQ(l.total, 20.0 * l.bce);
}

TEST(Loss, SlopeMaeOverAdjacentValidPairs) {
  oracle::LpsRecord rec;
  rec.cdf_direct = rec.cdf_link = rec.cdf_noise = ramp_cdf(-100, 1);
  LpsOutput pred;
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t k = 0; k < 16; ++k) pred.quantiles[16 * g + k] = -100 + 2.0 * k;
  pred.mask_prob.fill(1.0);
  const auto l = lps_loss(pred, rec);
  EXPECT_DOUBLE_EQ(l.slope, 1.0);
  EXPECT_THROW(lps_loss(pred, rec, {1.0, 0.2, 20.0}), ValidationError);
}

TEST(WeightsIo, RoundTripIsBitExact) {
  const auto ws = small_lps(12);
  const std::string a = serialize(ws);
  const auto back = deserialize(a);
  EXPECT_EQ(serialize(back), a);
  EXPECT_EQ(back.tensors.at("lps.pos_embed").data, ws.tensors.at("lps.pos_embed").data);
  EXPECT_EQ(back.ple_edges, ws.ple_edges);

  const auto path = std::filesystem::temp_directory_path() / "airslab_roundtrip.nckm";
  save_weights(small_se(13), path);
  const auto loaded = load_weights(path);
  EXPECT_EQ(serialize(loaded), serialize(small_se(13)));
  std::filesystem::remove(path);
}

TEST(WeightsIo, BadMagic) {
  std::string b = serialize(small_se());
  b[0] = 'X';
  try {
    deserialize(b);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "bad magic");
  }
}

TEST(WeightsIo, TruncatedTensor) {
  // Manifest declares a 10-float tensor, blob carries 9.
  nlohmann::ordered_json m;
  m["kind"] = "se";
  m["dims"] = {{"d_model", 16}, {"heads", 1}, {"layers", 0}, {"mlp_hidden", 1}, {"head_hidden", 1}};
  m["ple_edges"] = {{0.0, 1.0}};
  m["tensors"] = {{{"name", "se.head.fc1.weight"}, {"shape", {10}}, {"offset", 0}}};
  const std::string h = m.dump();
  std::string b = "NCKM";
  b += std::string("\x01\x00\x00\x00", 4);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xff));
  b += h + std::string(36, '\0');
  try {
    deserialize(b);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated tensor"), std::string::npos);
  }
}

TEST(WeightsIo, ManifestMismatchRejected) {
  auto ws = small_se();
  ws.tensors.erase("se.target_pos");
  EXPECT_THROW(serialize(ws), ValidationError);
  ws = small_se();
  ws.tensors["extra"] = Tensor{{1}, {0.0f}};
  EXPECT_THROW(ws.validate(), ValidationError);
  ws = small_se();
  ws.ple_edges[0] = {0.0, 0.0, 1.0};
  EXPECT_THROW(ws.validate(), ValidationError);
  EXPECT_THROW(load_weights("/nonexistent/w.nckm"), IoError);
}

TEST(Parity, MatchesReferenceImplementation) {
  std::ifstream in(fixture("neural_parity.json"));
  ASSERT_TRUE(in) << "missing parity fixture";
  const auto ref = nlohmann::json::parse(in);
  const auto lps = load_weights(fixture("lps_parity.nckm"));
  const auto se = load_weights(fixture("se_parity.nckm"));
  for (const auto& p : ref["lps"]) {
    const auto f = p["features"].get<std::vector<double>>();
    const auto out = lps_forward(f, lps);
    const auto q = p["quantiles"].get<std::vector<double>>();
    const auto m = p["mask_prob"].get<std::vector<double>>();
    for (std::size_t t = 0; t < 48; ++t) {
      EXPECT_NEAR(out.quantiles[t], q[t], 1e-4);
      EXPECT_NEAR(out.mask_prob[t], m[t], 1e-4);
    }
  }
  for (const auto& p : ref["se"]) {
    std::vector<QuantileCdf> cdfs;
    for (const auto& c : p["cdfs"]) cdfs.push_back(QuantileCdf::from_values(c.get<std::vector<double>>()));
    std::vector<Category> cats;
    for (int c : p["cats"]) cats.push_back(static_cast<Category>(c));
    EXPECT_NEAR(se_forward(cdfs, cats, se), p["se"].get<double>(), 1e-4);
  }
}

TEST(LpsForward, FullSizeModelRuns) {
  const Dims full;
  const auto ws = WeightStore::random(ModelKind::lps, full, default_lps_edges(full.d_model), 3);
  const auto out = lps_forward(some_features(), ws);
  for (double q : out.quantiles) EXPECT_TRUE(std::isfinite(q));
}
