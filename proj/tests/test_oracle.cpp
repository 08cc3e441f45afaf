#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "airslab/oracle.hpp"
#include "airslab/rng.hpp"
#include "test_util.hpp"

using namespace airslab;
using namespace airslab::oracle;
using airslab::testing::small_scene;
using airslab::testing::small_spec;

namespace {

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Snr, DirectOnlyReduction) {
  const cplx h(0.3, -0.4);
  EXPECT_DOUBLE_EQ(snr_sample(h, 0.0, {}, {}, 2.0, 0.7, 0.5), 2.0 * 0.25 / 0.5);
}

TEST(Snr, DestructiveCancellation) {
  EXPECT_EQ(snr_sample(1.0, -1.0, {}, {}, 1.0, 1.0, 1.0), 0.0);
}

TEST(Snr, HandArithmetic) {
  const std::vector<double> noise{2.0};
  EXPECT_DOUBLE_EQ(snr_sample(cplx(1, 0), cplx(0, 1), {}, noise, 1.0, 0.5, 1.0), 1.0);
  const std::vector<cplx> scat{cplx(1, 0)};
  EXPECT_DOUBLE_EQ(snr_sample(cplx(1, 0), 0.0, scat, noise, 1.0, 0.5, 1.0), 2.0);
}

TEST(Quantiles, MidpointLevels) {
  EXPECT_DOUBLE_EQ(quantile_level(0), 1.0 / 32);
  EXPECT_DOUBLE_EQ(quantile_level(15), 31.0 / 32);
}

TEST(Quantiles, SixteenSamplesSelectEachOnce) {
  std::vector<double> s;
  for (int k = 16; k >= 1; --k) s.push_back(k);
  const auto c = quantile_cdf(s);
  for (int k = 0; k < 16; ++k) {
    EXPECT_EQ(c.q_db[static_cast<std::size_t>(k)], k + 1.0);
    EXPECT_TRUE(c.mask[static_cast<std::size_t>(k)]);
  }
}

TEST(Quantiles, ConstantSamples) {
  const auto c = quantile_cdf(std::vector<double>(100, -42.5));
  for (int k = 0; k < 16; ++k) EXPECT_EQ(c.q_db[static_cast<std::size_t>(k)], -42.5);
}

TEST(Quantiles, ZeroPowerIsInvalid) {
  const auto c = quantile_cdf(std::vector<double>(40, -INFINITY));
  for (int k = 0; k < 16; ++k) {
    EXPECT_FALSE(c.mask[static_cast<std::size_t>(k)]);
    EXPECT_EQ(c.q_db[static_cast<std::size_t>(k)], kSentinelDb);
  }
}

TEST(Quantiles, PartiallyInvalidKeepsMonotoneValidPart) {
  std::vector<double> s(64);
  for (int i = 0; i < 64; ++i) s[static_cast<std::size_t>(i)] = i < 20 ? -400.0 : -100.0 + i;
  const auto c = quantile_cdf(s);
  double prev = -1e300;
  for (int k = 0; k < 16; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    // Oracle: rank ceil(64 (2k+1) / 32) = 4k + 2, 1-based.
    const int rank = 4 * k + 2;
    EXPECT_EQ(c.mask[kk], rank > 20);
    if (c.mask[kk]) {
      EXPECT_EQ(c.q_db[kk], -100.0 + (rank - 1));
      EXPECT_GE(c.q_db[kk], prev);
      prev = c.q_db[kk];
    }
  }
}

TEST(Quantiles, TooFewSamplesRejected) {
  EXPECT_THROW(quantile_cdf(std::vector<double>(15, 1.0)), ValidationError);
}

TEST(ErgodicSe, DeterministicChannelIsExact) {
  scene::SceneConfig sc;
  sc.n_rb = 3;
  auto f = small_spec(2, 5);
  f.deterministic = true;
  const scene::UePos ue{{50, 60, 1.5}};
  const double d = (ue.pos - sc.bs_position()).norm();
  const double g = db_to_lin(-channel::pathloss_nlos_db(d, sc.carrier_freq));
  const double gamma = sc.p_rb_mw() * g / sc.sigma0_sq_mw();
  const auto est = ergodic_se_estimate(sc, ue, std::nullopt, airs::PhaseScheme::mccm, f);
  EXPECT_NEAR(est.mean, std::log2(1.0 + gamma), 1e-12);
  EXPECT_EQ(est.std_err, 0.0);
}

TEST(ErgodicSe, DarkServingAirsEqualsNone) {
  auto sc = small_scene(1);
  const scene::UePos ue{{80, 200, 1.5}};  // behind the panel
  const auto f = small_spec(4, 50);
  const auto none = ergodic_se_estimate(sc, ue, std::nullopt, airs::PhaseScheme::mccm, f);
  const auto dark = ergodic_se_estimate(sc, ue, 0, airs::PhaseScheme::mccm, f);
  EXPECT_LE(std::abs(none.mean - dark.mean),
            3.0 * std::hypot(none.std_err, dark.std_err) + 1e-12);
}

TEST(ErgodicSe, MccmRefitPerLargeScaleState) {
  const auto sc = small_scene(1, 3, 3, 4);
  const scene::UePos ue{{60, 70, 1.5}};
  const auto lr = channel::sample_links(sc, ue, small_spec(3, 8, 11));
  const auto ev = evaluate_links(sc, ue, lr, 0, airs::PhaseScheme::mccm);
  const Eigen::Index block = 8 * 4;
  for (int l = 0; l < 3; ++l) {
    const auto rows = lr.cascade[0].middleRows(l * block, block);
    const Eigen::VectorXcd expect = ev.amp[0] * (rows * airs::mccm_phases(rows));
    EXPECT_LE((ev.airs_signal[0].segment(l * block, block) - expect).norm(), 1e-12 * expect.norm());
  }
}

TEST(ErgodicSe, SchemeOrderingOnLargePanel) {
  for (int t = 0; t < 3; ++t) {
    Rng rng(300 + t);
    auto sc = small_scene(1, 8, 8, 8);
    const auto& p = sc.airs[0].pos;
    const scene::UePos ue{{p.x() - 60 + 120 * rng.uniform(), p.y() - 20 - 80 * rng.uniform(), 1.5}};
    const auto f = small_spec(2, 20, 40 + t);
    const double m = ergodic_se(sc, ue, 0, airs::PhaseScheme::mccm, f);
    const double l = ergodic_se(sc, ue, 0, airs::PhaseScheme::los, f);
    const double r = ergodic_se(sc, ue, 0, airs::PhaseScheme::random, f);
    EXPECT_GE(m, l);
    EXPECT_GE(l, r);
  }
}

TEST(ErgodicSe, MonteCarloSelfConsistency) {
  const auto sc = small_scene(2, 4, 4, 4);
  const scene::UePos ue{{60, 70, 1.5}};
  const auto a = ergodic_se_estimate(sc, ue, 0, airs::PhaseScheme::mccm, small_spec(10, 50, 3));
  const auto b = ergodic_se_estimate(sc, ue, 0, airs::PhaseScheme::mccm, small_spec(10, 500, 4));
  EXPECT_EQ(a.n_real, 500);
  EXPECT_EQ(b.n_real, 5000);
  EXPECT_LE(std::abs(a.mean - b.mean), 3.0 * std::hypot(a.std_err, b.std_err));
}

TEST(ErgodicSe, InvariantToRbPermutation) {
  const auto sc = small_scene(2, 3, 3, 6);
  const scene::UePos ue{{40, 50, 1.5}};
  const auto lr = channel::sample_links(sc, ue, small_spec(2, 10));
  auto perm = lr;
  const std::vector<int> order{3, 0, 5, 1, 4, 2};
  for (int r = 0; r < lr.n_real; ++r)
    for (int s = 0; s < 6; ++s) {
      const Eigen::Index dst = r * 6 + s, src = r * 6 + order[static_cast<std::size_t>(s)];
      perm.direct(dst) = lr.direct(src);
      for (std::size_t i = 0; i < 2; ++i) {
        perm.cascade[i].row(dst) = lr.cascade[i].row(src);
        perm.airs_ue_norm_sq[i](dst) = lr.airs_ue_norm_sq[i](src);
      }
    }
  for (auto scheme : {airs::PhaseScheme::mccm, airs::PhaseScheme::los, airs::PhaseScheme::random}) {
    const double x = evaluate_links(sc, ue, lr, 1, scheme).se.mean;
    const double y = evaluate_links(sc, ue, perm, 1, scheme).se.mean;
    EXPECT_NEAR(x, y, 1e-10 * std::max(1.0, x));
  }
}

TEST(ErgodicSe, ThroughputLinearInShare) {
  const double se = ergodic_se(small_scene(1), {{20, 40, 1.5}}, 0, airs::PhaseScheme::mccm,
                               small_spec());
  const int S = 4;
  for (double rho : {0.0, 0.25, 0.5, 1.0}) EXPECT_DOUBLE_EQ(rho * S * se, rho * (S * se));
}

TEST(ErgodicSe, ServingIndexChecked) {
  EXPECT_THROW(ergodic_se(small_scene(1), {{20, 40, 1.5}}, 3, airs::PhaseScheme::mccm, small_spec()),
               ValidationError);
}

TEST(UeSampler, StaysInAnnulus) {
  UeSampler s;
  for (std::uint64_t k = 0; k < 500; ++k) {
    const auto u = s.draw(k);
    const double r = std::hypot(u.pos.x(), u.pos.y());
    EXPECT_GE(r, s.r_min - 1e-9);
    EXPECT_LE(r, s.r_max + 1e-9);
    EXPECT_EQ(u.pos.z(), 1.5);
  }
  EXPECT_EQ(s.draw(9).pos, s.draw(9).pos);
}

TEST(LpsDataset, SingleRecordStructure) {
  std::ostringstream out;
  EXPECT_EQ(gen_lps_dataset(small_scene(2), UeSampler{}, 1, small_spec(1, 20), out), 1u);
  const auto lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 1u);
  const auto rec = lps_from_jsonl(lines[0]);
  EXPECT_EQ(rec.features.size(), 15u);
  EXPECT_EQ(rec.features[14], 1.0);  // first record is the serving role
  EXPECT_NE(lines[0].find("\"mask\""), std::string::npos);
}

TEST(LpsDataset, ByteDeterministic) {
  std::ostringstream a, b, c;
  const auto sc = small_scene(2);
  gen_lps_dataset(sc, UeSampler{}, 7, small_spec(1, 20, 5), a);
  gen_lps_dataset(sc, UeSampler{}, 7, small_spec(1, 20, 5), b);
  gen_lps_dataset(sc, UeSampler{}, 7, small_spec(1, 20, 6), c);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
  EXPECT_EQ(lines_of(a.str()).size(), 7u);
}

TEST(LpsDataset, RoundTrip) {
  const auto recs = lps_records_for(small_scene(1), {{30, 40, 1.5}}, small_spec(1, 20));
  ASSERT_EQ(recs.size(), 2u);
  for (const auto& r : recs) {
    const auto back = lps_from_jsonl(to_jsonl(r));
    EXPECT_EQ(back.features, r.features);
    EXPECT_EQ(back.cdf_direct, r.cdf_direct);
    EXPECT_EQ(back.cdf_link, r.cdf_link);
    EXPECT_EQ(back.cdf_noise, r.cdf_noise);
  }
}

TEST(LpsDataset, ServingCdfDominatesScattered) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ue = UeSampler{}.draw(seed);
    auto sc = small_scene(1, 6, 6);
    sc.airs[0].pos = {ue.pos.x() + 20.0, ue.pos.y() + 30.0, 15.0};
    const auto recs = lps_records_for(sc, ue, small_spec(2, 40, seed));
    const auto& served = recs[0].cdf_link;
    const auto& scattered = recs[1].cdf_link;
    for (std::size_t k = 0; k < 16; ++k)
      if (served.mask[k] && scattered.mask[k])
        EXPECT_GE(served.q_db[k], scattered.q_db[k]) << "seed " << seed << " k " << k;
    EXPECT_EQ(recs[0].cdf_direct, recs[1].cdf_direct);
    EXPECT_EQ(recs[0].cdf_noise, recs[1].cdf_noise);
  }
}

TEST(LpsDataset, EmptyRequestWritesNothing) {
  std::ostringstream out;
  EXPECT_EQ(gen_lps_dataset(small_scene(1), UeSampler{}, 0, small_spec(), out), 0u);
  EXPECT_TRUE(out.str().empty());
}

TEST(SeDataset, RecordStructureAndBound) {
  const auto sc = small_scene(2);
  std::ostringstream out;
  EXPECT_EQ(gen_se_dataset(sc, UeSampler{}, 10, small_spec(1, 20), out), 10u);
  const auto lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 10u);
  for (const auto& l : lines) {
    const auto r = se_from_jsonl(l);
    EXPECT_EQ(r.cdfs.size(), 5u);
    EXPECT_NO_THROW(validate_se_inputs(r.cats));
    EXPECT_GE(r.se, 0.0);
  }
}

TEST(SeDataset, NoServingHasNoCascadedEntry) {
  const auto sc = small_scene(2);
  const scene::UePos ue{{30, 40, 1.5}};
  const auto r = se_record_for(sc, ue, std::nullopt, small_spec());
  for (auto c : r.cats) EXPECT_NE(c, Category::cascaded);
  const auto s = se_record_for(sc, ue, 1, small_spec());
  EXPECT_EQ(s.cats[2], Category::cascaded);
  EXPECT_EQ(s.cats[1], Category::scattered);
}

TEST(SeDataset, LabelBoundedByMaxObservedSnr) {
  const auto sc = small_scene(2);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto ue = UeSampler{}.draw(k);
    const auto lr = channel::sample_links(sc, ue, small_spec(1, 20, k));
    const auto ev = evaluate_links(sc, ue, lr, 0, airs::PhaseScheme::mccm);
    EXPECT_GE(ev.se.mean, 0.0);
    EXPECT_LE(ev.se.mean, std::log2(1.0 + ev.se.max_snr) + 1e-12);
  }
}

TEST(SeInputs, CategoryInvariants) {
  using C = Category;
  EXPECT_NO_THROW(validate_se_inputs({C::direct}));
  EXPECT_NO_THROW(validate_se_inputs({C::direct, C::cascaded, C::scattered, C::noise, C::noise}));
  EXPECT_THROW(validate_se_inputs({C::cascaded, C::noise}), ValidationError);
  EXPECT_THROW(validate_se_inputs({C::direct, C::cascaded, C::cascaded, C::noise, C::noise}),
               ValidationError);
  EXPECT_THROW(validate_se_inputs({C::direct, C::scattered}), ValidationError);
}

TEST(Jsonl, MalformedRecordsRejected) {
  EXPECT_THROW(lps_from_jsonl("{\"features\":[1,2]}"), ValidationError);
  EXPECT_THROW(se_from_jsonl("not json"), ValidationError);
  EXPECT_THROW(se_from_jsonl("{\"cdfs\":[],\"cats\":[7],\"se\":1}"), ValidationError);
}
