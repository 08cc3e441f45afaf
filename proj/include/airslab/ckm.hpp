#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "airslab/neural.hpp"
#include "airslab/oracle.hpp"

namespace airslab::ckm {

/// FNV-1a hash of the radio and AIRS sections of a scene. UE positions and
/// role flags (serving is a run-time choice) do not enter the fingerprint.
std::uint64_t fingerprint(const scene::SceneConfig& sc);

struct CkmEntry {
  Eigen::Vector2d pos;
  /// LPS records as produced by oracle::lps_records_for: (airs 0, b=1),
  /// (airs 0, b=0), (airs 1, b=1), ...
  std::vector<oracle::LpsRecord> records;
};

struct QueryResult {
  std::size_t index = 0;
  double distance = 0.0;
  const CkmEntry* entry = nullptr;
};

/// Table CKM with a uniform grid index. Concurrent const access is safe;
/// put() needs exclusive access.
class CkmStore {
 public:
  explicit CkmStore(std::uint64_t fingerprint, double cell_m = 50.0);

  std::uint64_t fingerprint() const { return fingerprint_; }
  double cell_size() const { return cell_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<CkmEntry>& entries() const { return entries_; }

  void put(const Eigen::Vector2d& pos, std::vector<oracle::LpsRecord> records, std::uint64_t fp);
  /// Euclidean-nearest entry; exact ties go to the earlier insertion.
  QueryResult query(const Eigen::Vector2d& pos) const;

  void save(const std::filesystem::path& path) const;
  static CkmStore load(const std::filesystem::path& path);

 private:
  using Cell = std::pair<std::int64_t, std::int64_t>;
  struct CellHash {
    std::size_t operator()(const Cell& c) const;
  };
  Cell cell_of(const Eigen::Vector2d& p) const;

  std::uint64_t fingerprint_;
  double cell_;
  std::vector<CkmEntry> entries_;
  std::unordered_map<Cell, std::vector<std::size_t>, CellHash> grid_;
  std::int64_t min_cx_ = 0, max_cx_ = -1, min_cy_ = 0, max_cy_ = -1;
};

/// Builds a store with one entry per position using the Monte Carlo oracle.
CkmStore build_store(const scene::SceneConfig& sc, const std::vector<scene::UePos>& positions,
                     const channel::FadingSpec& spec);

struct ComposeParams {
  double p_rb = 0.0;                // mW
  double sigma0_sq = 0.0;           // mW
  std::vector<double> sigma_v_sq;   // mW, one per noise CDF in input order
};

ComposeParams compose_params(const scene::SceneConfig& sc);

/// Inverse-CDF sample of a quantile CDF at level u in (0, 1): linear in dB
/// between quantiles, flat beyond the ends. Returns linear power; 0 when a
/// bracketing quantile is invalid.
double sample_power(const oracle::QuantileCdf& cdf, double u);

struct ComposeEstimate {
  double mean = 0.0;
  double std_err = 0.0;
};

/// Monte Carlo SE from independent link-power CDFs with independent uniform
/// phases on every signal term.
ComposeEstimate compose_se_mc(const std::vector<oracle::QuantileCdf>& cdfs,
                              const std::vector<oracle::Category>& cats, int n_samples,
                              std::uint64_t seed, const ComposeParams& params);

/// Assembles the SE-Net style input (direct, one link CDF per AIRS, one noise
/// CDF per AIRS) from an entry's LPS records under a serving choice.
void assemble_inputs(const std::vector<oracle::LpsRecord>& records, std::optional<int> serving,
                     std::vector<oracle::QuantileCdf>& cdfs, std::vector<oracle::Category>& cats);

class SePredictor {
 public:
  virtual ~SePredictor() = default;
  virtual std::string kind() const = 0;
  virtual double predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                         std::optional<int> serving) const = 0;
  /// Entry 0 is BS-only, entry i is served by AIRS i-1.
  virtual std::vector<double> predict_row(const scene::SceneConfig& sc, const scene::UePos& ue) const;
};

/// Ground-truth Monte Carlo predictor. Fading seeds mix the configured seed
/// with the UE position so different UEs see independent fading.
class OraclePredictor : public SePredictor {
 public:
  explicit OraclePredictor(channel::FadingSpec spec,
                           airs::PhaseScheme scheme = airs::PhaseScheme::mccm)
      : spec_(spec), scheme_(scheme) {}
  std::string kind() const override { return "oracle"; }
  double predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                 std::optional<int> serving) const override;
  std::vector<double> predict_row(const scene::SceneConfig& sc, const scene::UePos& ue) const override;

 private:
  channel::FadingSpec spec_for(const scene::UePos& ue) const;
  channel::FadingSpec spec_;
  airs::PhaseScheme scheme_;
};

class TablePredictor : public SePredictor {
 public:
  TablePredictor(std::shared_ptr<const CkmStore> store, int n_samples = 2000, std::uint64_t seed = 1)
      : store_(std::move(store)), n_samples_(n_samples), seed_(seed) {}
  std::string kind() const override { return "table"; }
  double predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                 std::optional<int> serving) const override;

 private:
  std::shared_ptr<const CkmStore> store_;
  int n_samples_;
  std::uint64_t seed_;
};

class NeuralPredictor : public SePredictor {
 public:
  NeuralPredictor(neural::WeightStore lps, neural::WeightStore se);
  std::string kind() const override { return "neural"; }
  double predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                 std::optional<int> serving) const override;
  std::vector<double> predict_row(const scene::SceneConfig& sc, const scene::UePos& ue) const override;

 private:
  oracle::QuantileCdf to_cdf(const neural::LpsOutput& out, int group) const;
  neural::WeightStore lps_;
  neural::WeightStore se_;
};

}  // namespace airslab::ckm
