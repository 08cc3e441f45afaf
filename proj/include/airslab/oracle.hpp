#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "airslab/airs.hpp"
#include "airslab/channel.hpp"
#include "airslab/scene.hpp"

namespace airslab::oracle {

inline constexpr int kQuantiles = 16;
inline constexpr double kValidFloorDb = -250.0;
inline constexpr double kSentinelDb = -300.0;

/// 16-point quantile summary of a link-power distribution in dB. Invalid
/// entries (zero power) hold kSentinelDb with mask false.
struct QuantileCdf {
  std::array<double, kQuantiles> q_db{};
  std::array<bool, kQuantiles> mask{};

  /// Builds a CDF from raw values, treating anything below the floor as invalid.
  static QuantileCdf from_values(std::span<const double> q_db);
  bool operator==(const QuantileCdf&) const = default;
};

/// Quantile level of entry k (0-based): (2k + 1) / 32.
double quantile_level(int k);

/// Nearest-rank quantiles at the bin midpoints. Requires >= 16 samples.
QuantileCdf quantile_cdf(std::vector<double> samples_db);

enum class Category : int { direct = 1, cascaded = 2, scattered = 3, noise = 4 };

inline constexpr int kLpsFeatures = 15;

struct LpsRecord {
  std::array<double, kLpsFeatures> features{};
  QuantileCdf cdf_direct;
  QuantileCdf cdf_link;
  QuantileCdf cdf_noise;

  std::array<bool, 48> mask48() const;
};

struct SeRecord {
  std::vector<QuantileCdf> cdfs;
  std::vector<Category> cats;
  double se = 0.0;
};

/// Checks the SeRecord category invariants; throws ValidationError.
void validate_se_inputs(const std::vector<Category>& cats);

/// LPS feature vector (UE position, BS power, AIRS parameters, role flag).
std::array<double, kLpsFeatures> lps_features(const scene::SceneConfig& sc, const scene::UePos& ue,
                                              std::size_t airs_index, int role_flag);

/// Received SNR of one sample.
double snr_sample(cplx direct, cplx cascade_serving, std::span<const cplx> scattered,
                  std::span<const double> noise_norms, double p_rb, double sigma_v2,
                  double sigma_02);

struct SeEstimate {
  double mean = 0.0;
  double std_err = 0.0;  // over large-scale group means (realizations if one group)
  int n_real = 0;
  double max_snr = 0.0;
};

/// Per-sample signal terms of one UE under a serving choice: amplified
/// cascade F phi^T a per AIRS and dynamic-noise gain F^2 ||h_iu||^2.
struct LinkEvaluation {
  Eigen::VectorXcd direct;
  std::vector<Eigen::VectorXcd> airs_signal;
  std::vector<Eigen::VectorXd> airs_noise;
  std::vector<double> amp;
  SeEstimate se;
};

/// Serving AIRS uses `scheme` phases; MCCM phases are refitted for every
/// large-scale state. Every other AIRS redraws random phases per realization.
/// `ue` is only used by the LoS scheme.
LinkEvaluation evaluate_links(const scene::SceneConfig& sc, const scene::UePos& ue,
                              const channel::LinkRealizations& lr, std::optional<int> serving,
                              airs::PhaseScheme scheme);

SeEstimate ergodic_se_estimate(const scene::SceneConfig& sc, const scene::UePos& ue,
                               std::optional<int> serving, airs::PhaseScheme scheme,
                               const channel::FadingSpec& spec);

/// Monte Carlo ergodic SE in bps/Hz.
double ergodic_se(const scene::SceneConfig& sc, const scene::UePos& ue, std::optional<int> serving,
                  airs::PhaseScheme scheme, const channel::FadingSpec& spec);

/// Uniform UE drops over an annulus around the BS.
struct UeSampler {
  double r_min = 20.0;
  double r_max = 300.0;
  double height = 1.5;
  int count = 0;  // used when a scenario lists no UEs

  scene::UePos draw(std::uint64_t seed) const;
};

/// Writes LpsRecord JSONL lines; one line per (UE drop, AIRS, role flag)
/// until `n_records` lines are written. Returns the count written.
std::size_t gen_lps_dataset(const scene::SceneConfig& sc, const UeSampler& sampler,
                            std::size_t n_records, const channel::FadingSpec& spec,
                            std::ostream& out);

/// Writes SeRecord JSONL lines under a random serving AIRS (or none).
std::size_t gen_se_dataset(const scene::SceneConfig& sc, const UeSampler& sampler,
                           std::size_t n_records, const channel::FadingSpec& spec,
                           std::ostream& out);

/// Builds the LPS records of one UE for every AIRS and both role flags,
/// ordered (airs 0, b=1), (airs 0, b=0), (airs 1, b=1), ...
std::vector<LpsRecord> lps_records_for(const scene::SceneConfig& sc, const scene::UePos& ue,
                                       const channel::FadingSpec& spec);

/// Builds the SE record of one UE under `serving`.
SeRecord se_record_for(const scene::SceneConfig& sc, const scene::UePos& ue,
                       std::optional<int> serving, const channel::FadingSpec& spec);

// JSONL (de)serialization of single records.
std::string to_jsonl(const LpsRecord& r);
std::string to_jsonl(const SeRecord& r);
LpsRecord lps_from_jsonl(const std::string& line);
SeRecord se_from_jsonl(const std::string& line);

}  // namespace airslab::oracle
