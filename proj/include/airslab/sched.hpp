#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "airslab/ckm.hpp"

namespace airslab::sched {

/// eta(u, 0) is the BS-only SE of UE u, eta(u, i + 1) its SE when served by AIRS i.
struct SeMatrix {
  Eigen::MatrixXd eta;
  int clamped = 0;  // negative predictions clamped to zero

  int n_ues() const { return static_cast<int>(eta.rows()); }
  int n_airs() const { return static_cast<int>(eta.cols()) - 1; }
};

/// One prediction row per scenario UE. Non-finite predictions are errors.
SeMatrix build_se_matrix(const ckm::SePredictor& predictor, const scene::SceneConfig& sc);
SeMatrix make_se_matrix(Eigen::MatrixXd eta);

struct StageRecord {
  std::string stage;
  double min_throughput = 0.0;
  double ms = 0.0;
};

struct Schedule {
  int n_ues = 0;
  int n_airs = 0;
  int n_slots = 0;
  double n_rb = 0.0;
  Eigen::MatrixXd rho;                     // U x Q
  std::vector<std::vector<int>> airs_ue;   // [slot][airs] -> UE or -1
  std::vector<int> slot_of_ue;             // empty on the LP path
  Eigen::VectorXd throughput;              // R_u = sum_q rho S eta
  std::vector<int> zero_se_ues;
  std::vector<StageRecord> trace;

  Schedule() = default;
  Schedule(int n_ues, int n_airs, int n_slots, double n_rb);

  double min_throughput() const;
  /// Serving AIRS of `u` in slot `q`, or -1.
  int serving(int u, int q) const;
  double eta_eff(const SeMatrix& m, int u, int q) const;
  void update_throughput(const SeMatrix& m);
};

/// Throws ValidationError naming the first violated constraint: ratios in
/// [0, 1], per-slot sums <= 1, injective association, one slot per UE on
/// the heuristic path, throughput consistent with the ratios.
void validate(const Schedule& s, const SeMatrix& m);

std::string to_json(const Schedule& s, bool include_timing = true);

// ---- building blocks -------------------------------------------------------

/// Constrained k-means: every cluster gets at least `min_size` members. Each
/// assignment step is an exact min-cost flow.
std::vector<int> ckmeans(const Eigen::MatrixXd& points, int k, int min_size, std::uint64_t seed,
                         int max_iter = 100);

struct Matching {
  std::vector<int> proposer;  // matched acceptor or -1
  std::vector<int> acceptor;  // matched proposer or -1
};

/// Proposer-optimal deferred acceptance. Preference lists hold only
/// acceptable partners, best first.
Matching gale_shapley(const std::vector<std::vector<int>>& proposer_prefs,
                      const std::vector<std::vector<int>>& acceptor_prefs);

struct IbResult {
  std::vector<double> rho;
  std::vector<bool> zero_se;
  double min_throughput = 0.0;
  int iterations = 0;
};

/// Iterative balancing of one slot: pairwise exact equalization of the best
/// and worst throughput until the gap is <= eps.
IbResult ib_balance(const std::vector<double>& etas, double n_rb, double eps);

struct SlotState {
  std::vector<int> ues;
  std::vector<int> airs_of;  // per member: serving AIRS or -1
  std::vector<double> rho;
  std::vector<bool> zero_se;
  double min_throughput = 0.0;
};

struct SmibParams {
  double eps = 1e-3;
  double xi = 1e-2;
  int n_max = 10;
  std::uint64_t seed = 1;
  bool slot_polish = true;          // exact assignment check after the GS/IB loop
  bool all_swap_candidates = true;  // stage 3 tries every UE of the worst slot
};

/// Stage 1: cKMeans on the AIRS columns, cluster-AIRS stable matching, the Q
/// bottleneck UEs of each cluster spread over the slots with AIRS service and
/// the rest BS-only.
std::vector<SlotState> stage1_grouping(const SeMatrix& m, int n_slots, std::uint64_t seed);

/// Stage 2 on one slot; the result's min throughput is never below that of
/// the balanced input association.
SlotState per_slot_maxmin(const SlotState& init, const SeMatrix& m, double n_rb, const SmibParams& p);

/// Stage 3: 1-for-1 UE swaps between the worst and best slots.
std::vector<SlotState> cross_slot_swap(std::vector<SlotState> slots, const SeMatrix& m, double n_rb,
                                       const SmibParams& p);

Schedule to_schedule(const std::vector<SlotState>& slots, const SeMatrix& m, double n_rb);

Schedule sm_ib(const SeMatrix& m, int n_slots, double n_rb, const SmibParams& p = {});
Schedule sm_ib(const ckm::SePredictor& predictor, const scene::SceneConfig& sc, const SmibParams& p = {});

struct LpResult {
  double value = 0.0;
  Eigen::MatrixXd rho;  // U x Q
  int pivots = 0;
};

/// max t s.t. sum_q rho(u,q) S eta(u,q) >= t, sum_u rho(u,q) <= 1, rho >= 0,
/// by dense simplex with Bland's rule.
LpResult exact_maxmin_lp(const Eigen::MatrixXd& eta_uq, double n_rb);

/// Number of LP solves exact_enum would need.
double enum_count(int n_ues, int n_airs, int n_slots);

Schedule exact_enum(const SeMatrix& m, int n_slots, double n_rb, double guard = 1e7);

/// Random even slot partition, random AIRS-UE map, equal ratios per slot.
Schedule random_schedule(const SeMatrix& m, int n_slots, double n_rb, std::uint64_t seed);

}  // namespace airslab::sched
