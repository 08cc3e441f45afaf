#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "airslab/scenario.hpp"

using namespace airslab;

namespace {

const std::string kScenarioDir = AIRSLAB_SCENARIO_DIR;

std::string path_of(const std::string& text) {
  try {
    scenario::parse(text);
  } catch (const ValidationError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(Scenario, ShippedFilesParse) {
  const auto d = scenario::load(kScenarioDir + "/default.json");
  EXPECT_EQ(d.scene.airs.size(), 2u);
  EXPECT_EQ(d.sampler.count, 12);
  const auto six = scenario::load(kScenarioDir + "/six_airs.json");
  EXPECT_EQ(six.scene.airs.size(), 6u);
}

TEST(Scenario, EmptyDocumentGivesDefaults) {
  const auto s = scenario::parse("{}");
  EXPECT_DOUBLE_EQ(s.scene.carrier_freq, 3.5e9);
  EXPECT_DOUBLE_EQ(s.scene.bandwidth, 20e6);
  EXPECT_DOUBLE_EQ(s.scene.bs_power_dbm, 10.0);
  EXPECT_DOUBLE_EQ(s.scene.noise_psd_dbm_hz, -174.0);
  scene::AirsConfig a;
  EXPECT_DOUBLE_EQ(a.amp_power_dbm, 10.0);
  EXPECT_DOUBLE_EQ(a.elem_gain_dbi, 6.0);
  EXPECT_DOUBLE_EQ(a.dyn_noise_psd_dbm_hz, -160.0);
  EXPECT_TRUE(s.scene.airs.empty());
}

TEST(Scenario, AnglesAreDegrees) {
  const auto s = scenario::parse(R"({"airs":[{"rot_deg":[90, 0, 180]}]})");
  EXPECT_NEAR(s.scene.airs[0].rot.x(), kPi / 2, 1e-15);
  EXPECT_NEAR(s.scene.airs[0].rot.z(), kPi, 1e-15);
}

TEST(Scenario, ErrorsNameJsonPath) {
  EXPECT_EQ(path_of(R"({"airs":[{"grid":[0, 4]}]})"), "airs[0].grid");
  EXPECT_EQ(path_of(R"({"airs":[{}, {"grid":[4, 0]}]})"), "airs[1].grid");
  EXPECT_EQ(path_of(R"({"radio":{"n_rb":"many"}})"), "radio.n_rb");
  EXPECT_EQ(path_of(R"({"radio":{"n_rb":4.5}})"), "radio.n_rb");
  EXPECT_EQ(path_of(R"({"radio":{"n_rbs":4}})"), "radio.n_rbs");
  EXPECT_EQ(path_of(R"({"airs":[{"pos_m":[1, 2]}]})"), "airs[0].pos_m");
  EXPECT_EQ(path_of(R"({"ues":[[0, 0, -1]]})"), "ues[0]");
  EXPECT_EQ(path_of(R"({"fading":{"n_small":0}})"), "fading.n_small");
  EXPECT_EQ(path_of(R"({"ue_sampler":{"count":-1}})"), "ue_sampler.count");
  EXPECT_EQ(path_of(R"({"extra":1})"), "extra");
  EXPECT_EQ(path_of(R"({"radio": )"), "$");
  EXPECT_EQ(path_of("[]"), "$");
}

TEST(Scenario, MissingFileIsIoError) {
  EXPECT_THROW(scenario::load(kScenarioDir + "/does_not_exist.json"), IoError);
}

TEST(Scenario, FadingSection) {
  const auto s = scenario::parse(
      R"({"fading":{"n_large":3,"n_small":7,"n_taps":1,"rician_k_db":"inf","deterministic":true,"seed":99}})");
  EXPECT_EQ(s.fading.n_realizations(), 21);
  EXPECT_TRUE(std::isinf(s.fading.rician_k_los_db));
  EXPECT_TRUE(s.fading.deterministic);
  EXPECT_EQ(s.fading.seed, 99u);
}

TEST(Scenario, UeListAcceptsArraysAndObjects) {
  const auto s = scenario::parse(R"({"ues":[[10, 20, 1.5], {"pos_m":[30, 40, 2]}]})");
  ASSERT_EQ(s.scene.ues.size(), 2u);
  EXPECT_EQ(s.scene.ues[1].pos, scene::Vec3(30, 40, 2));
  const auto ues = scenario::ues_for(s, 7);
  ASSERT_EQ(ues.size(), 2u);
  EXPECT_EQ(ues[0].pos, scene::Vec3(10, 20, 1.5));
}

TEST(Scenario, SampledUesAreSeededAndInRange) {
  const auto s = scenario::parse(R"({"ue_sampler":{"r_min_m":50,"r_max_m":60,"count":25}})");
  const auto a = scenario::ues_for(s, 3);
  const auto b = scenario::ues_for(s, 3);
  const auto c = scenario::ues_for(s, 4);
  ASSERT_EQ(a.size(), 25u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].pos, b[k].pos);
    const double r = a[k].pos.head<2>().norm();
    EXPECT_GE(r, 50.0 - 1e-9);
    EXPECT_LE(r, 60.0 + 1e-9);
  }
  EXPECT_NE(a[0].pos, c[0].pos);
}
