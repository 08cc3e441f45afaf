#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <limits>
#include <vector>

#include "airslab/scene.hpp"

namespace airslab::channel {

/// Monte Carlo structure and fading parameters of the simplified stochastic
/// channel model.
struct FadingSpec {
  int n_large = 10;              // large-scale (shadowing / geometry) realizations
  int n_small = 50;              // small-scale draws per large-scale realization
  int n_taps = 8;
  double rms_delay_spread = 100e-9;  // seconds
  double rician_k_los_db = 10.0;     // BS->AIRS; +inf gives a pure LoS link
  double shadow_sigma_los_db = 4.0;
  double shadow_sigma_nlos_db = 6.0;
  double angular_spread_deg = 10.0;  // per-tap direction spread around the geometric ray
  bool deterministic = false;        // zero-variance mode: no shadowing, unit first tap
  std::uint64_t seed = 1;

  int n_realizations() const { return n_large * n_small; }
};

void validate(const FadingSpec& spec);

struct LargeScale {
  double direct_gain = 0.0;           // linear, pathloss + shadowing
  std::vector<double> bs_airs_gain;   // per AIRS
  std::vector<double> airs_ue_gain;   // per AIRS
};

using CMatrixRM = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// All link draws of one UE. Sample row index is `r * n_rb + s` for
/// realization r = large * n_small + small and RB s.
struct LinkRealizations {
  int n_real = 0;
  int n_rb = 0;
  int n_small = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXcd direct;                // h_{b,u,s}
  std::vector<CMatrixRM> cascade;         // per AIRS: rows = samples, cols = elements
  std::vector<Eigen::VectorXd> incident;  // per AIRS: sum_w |h_{b,i,s}[w]|^2
  std::vector<Eigen::VectorXd> airs_ue_norm_sq;  // per AIRS: ||h_{i,u,s}||^2
  std::vector<LargeScale> large;

  int n_samples() const { return n_real * n_rb; }
  int n_airs() const { return static_cast<int>(cascade.size()); }
  int elements(int i) const { return static_cast<int>(cascade[static_cast<std::size_t>(i)].cols()); }
};

/// LoS (28 + 22 log d) and NLoS (32.4 + 30 log d) urban-macro pathloss in dB,
/// both with a 20 log10(f_GHz) frequency term. Distances clamp at 1 m.
double pathloss_los_db(double d, double f_hz);
double pathloss_nlos_db(double d, double f_hz);

/// Tap powers of the exponential power-delay profile (sum to 1) and delays.
struct DelayProfile {
  std::vector<double> power;
  std::vector<double> delay;
};
DelayProfile delay_profile(const FadingSpec& spec);

/// RB center frequencies relative to the carrier, Hz.
std::vector<double> rb_offsets(const scene::SceneConfig& scene);

LinkRealizations sample_links(const scene::SceneConfig& scene, const scene::UePos& ue,
                              const FadingSpec& spec);

struct MeanLinkPowers {
  double direct = 0.0;
  std::vector<double> incident_per_elem;
  std::vector<double> airs_ue_norm_sq;
};

MeanLinkPowers mean_link_powers(const LinkRealizations& lr);

}  // namespace airslab::channel
