#include <gtest/gtest.h>

#include <random>

#include "airslab/airs.hpp"
#include "airslab/rng.hpp"
#include "test_util.hpp"

using namespace airslab;
using namespace airslab::airs;
using airslab::channel::CMatrixRM;
using airslab::testing::small_scene;
using airslab::testing::small_spec;

namespace {

CMatrixRM random_samples(int n, int w, std::uint64_t seed) {
  Rng rng(seed);
  CMatrixRM a(n, w);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < w; ++c) a(r, c) = rng.cnormal();
  return a;
}

void expect_unit_modulus(const Eigen::VectorXcd& phi) {
  for (Eigen::Index i = 0; i < phi.size(); ++i) EXPECT_NEAR(std::abs(phi(i)), 1.0, 1e-9);
}

}  // namespace

TEST(Amplification, FormulaValues) {
  EXPECT_DOUBLE_EQ(amplification_factor(10.0, 0.05, 100, 0.05), 1.0);
  EXPECT_NEAR(amplification_factor(10.0, 0.5e-4, 100, 0.5e-4), 31.6227766016838, 1e-9);
  EXPECT_DOUBLE_EQ(amplification_factor(2.0, 1.5, 1, 0.5), 1.0);
}

TEST(Amplification, ZeroDenominatorRejected) {
  try {
    amplification_factor(10.0, 0.0, 4, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no incident power");
  }
}

TEST(Mccm, SingleElementIsUnity) {
  const auto phi = mccm_phases(random_samples(5, 1, 1));
  ASSERT_EQ(phi.size(), 1);
  EXPECT_EQ(phi(0), cplx(1.0));
}

TEST(Mccm, RankOneAlignsCoherently) {
  const auto a = random_samples(1, 9, 4);
  const auto phi = mccm_phases(a);
  expect_unit_modulus(phi);
  const double coherent = a.row(0).cwiseAbs().sum();
  EXPECT_NEAR(std::abs((a * phi)(0)), coherent, 1e-9 * coherent);
}

TEST(Mccm, DarkPanelRejected) {
  EXPECT_THROW(mccm_phases(CMatrixRM::Zero(4, 3)), Error);
}

TEST(Mccm, BeatsPhaseGridSearch) {
  // Oracle: exhaustive search over phase grids for W = 3 with the first
  // element fixed (common phase is immaterial to |phi^T a|).
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto a = random_samples(4, 3, 100 + seed);
    const double mccm = mean_cascade_power(a, mccm_phases(a));
    auto grid_best = [&](int steps) {
      double best = 0.0;
      Eigen::VectorXcd phi(3);
      phi(0) = 1.0;
      for (int p1 = 0; p1 < steps; ++p1)
        for (int p2 = 0; p2 < steps; ++p2) {
          phi(1) = std::polar(1.0, 2 * kPi * p1 / steps);
          phi(2) = std::polar(1.0, 2 * kPi * p2 / steps);
          best = std::max(best, mean_cascade_power(a, phi));
        }
      return best;
    };
    const double coarse = grid_best(16);
    const double fine = grid_best(256);
    EXPECT_TRUE(mccm >= coarse - 1e-9 || mccm >= 0.98 * fine)
        << "seed " << seed << " mccm " << mccm << " grid16 " << coarse << " grid256 " << fine;
  }
}

TEST(PowerIteration, MatchesDominantEigenvector) {
  const auto a = random_samples(50, 6, 9);
  const Eigen::MatrixXcd r = a.transpose() * a.conjugate() / 50.0;
  const auto v = principal_eigenvector(r);
  const Eigen::VectorXcd rv = r * v;
  const double lambda = v.dot(rv).real();
  EXPECT_LE((rv - lambda * v).norm(), 1e-6 * lambda);
  // Rayleigh quotient dominates random probes.
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXcd x(6);
    for (int i = 0; i < 6; ++i) x(i) = rng.cnormal();
    x.normalize();
    EXPECT_LE(x.dot(r * x).real(), lambda + 1e-9);
  }
}

TEST(LosPhases, MatchesMccmUnderPureLos) {
  auto sc = small_scene(1, 4, 4, 1);
  auto f = small_spec(1, 4);
  f.deterministic = true;
  const scene::UePos ue{{30, 40, 1.5}};
  const auto lr = channel::sample_links(sc, ue, f);
  const double p_los = mean_cascade_power(lr.cascade[0], los_phases(sc, 0, ue));
  const double p_mccm = mean_cascade_power(lr.cascade[0], mccm_phases(lr, 0));
  EXPECT_NEAR(p_los / p_mccm, 1.0, 1e-6);
  // Pure-LoS limit: the coherent sum.
  const double coherent = lr.cascade[0].row(0).cwiseAbs().sum();
  EXPECT_NEAR(p_mccm / (coherent * coherent), 1.0, 1e-6);
}

TEST(LosPhases, SingleElementCanonical) {
  const auto sc = small_scene(1, 1, 1);
  const auto phi = los_phases(sc, 0, {{30, 40, 1.5}});
  ASSERT_EQ(phi.size(), 1);
  EXPECT_NEAR(std::abs(phi(0) - cplx(1.0)), 0.0, 1e-12);
}

TEST(LosPhases, SymmetricPairGetsEqualPhases) {
  scene::SceneConfig sc;
  scene::AirsConfig a;
  a.pos = {60.0, 0.0, sc.bs_height};
  a.rot = {0.0, 0.0, kPi};  // faces the BS along -X
  a.grid_y = 2;
  a.grid_z = 1;
  sc.airs.push_back(a);
  const auto phi = los_phases(sc, 0, {{20.0, 0.0, sc.bs_height}});
  EXPECT_NEAR(std::abs(phi(0) - phi(1)), 0.0, 1e-9);
}

TEST(RandomPhases, DeterministicAndUniform) {
  EXPECT_EQ(random_phases(16, 5), random_phases(16, 5));
  EXPECT_NE(random_phases(16, 5), random_phases(16, 6));
  const auto big = random_phases(10000, 17);
  expect_unit_modulus(big);
  EXPECT_LT(std::abs(big.mean()), 0.05);
  const auto one = random_phases(1, 3);
  EXPECT_NEAR(std::abs(one(0)), 1.0, 1e-12);
}

TEST(Schemes, AllUnitModulus) {
  const auto sc = small_scene(1, 3, 3);
  const scene::UePos ue{{20, 30, 1.5}};
  const auto lr = channel::sample_links(sc, ue, small_spec());
  expect_unit_modulus(mccm_phases(lr, 0));
  expect_unit_modulus(los_phases(sc, 0, ue));
  expect_unit_modulus(random_phases(9, 1));
}

TEST(Schemes, OrderingOfMeanCascadePower) {
  // MCCM >= LoS >= random on random scenes, each averaged over 200 draws.
  int mccm_ge_los = 0, los_ge_random = 0;
  const int scenes = 20;
  for (int t = 0; t < scenes; ++t) {
    Rng rng(1000 + t);
    auto sc = small_scene(1, 4, 4, 2);
    sc.airs[0].pos = {-100 + 200 * rng.uniform(), 100 + 60 * rng.uniform(), 10 + 10 * rng.uniform()};
    const scene::UePos ue{{-100 + 200 * rng.uniform(), -50 + 120 * rng.uniform(), 1.5}};
    const auto lr = channel::sample_links(sc, ue, small_spec(4, 50, 50 + t));
    const auto& a = lr.cascade[0];
    const double pm = mean_cascade_power(a, mccm_phases(lr, 0));
    const double pl = mean_cascade_power(a, los_phases(sc, 0, ue));
    const double pr = mean_cascade_power(a, random_phases(16, 900 + t));
    mccm_ge_los += pm >= pl;
    los_ge_random += pl >= pr;
  }
  EXPECT_EQ(mccm_ge_los, scenes);
  EXPECT_EQ(los_ge_random, scenes);
}

TEST(Schemes, CoherentGainScalesWithElementCountSquared) {
  auto power_for = [](int side) {
    auto sc = small_scene(1, side, side, 1);
    auto f = small_spec(1, 2);
    f.deterministic = true;
    const auto lr = channel::sample_links(sc, {{40, 20, 1.5}}, f);
    return mean_cascade_power(lr.cascade[0], mccm_phases(lr, 0));
  };
  const double ratio = power_for(8) / power_for(4);
  EXPECT_NEAR(ratio / 16.0, 1.0, 0.05);
}
