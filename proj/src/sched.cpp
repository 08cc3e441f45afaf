#include "airslab/sched.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <queue>

#include "airslab/parallel.hpp"
#include "airslab/rng.hpp"

namespace airslab::sched {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Load (1/eta) used for a zero-SE UE; large enough to dominate any real load.
constexpr double kZeroSeLoad = 1e9;

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

/// Successive shortest paths with Dijkstra and Johnson potentials. All edge
/// costs must be non-negative.
class MinCostFlow {
 public:
  explicit MinCostFlow(int n) : g_(static_cast<std::size_t>(n)) {}

  int add_edge(int u, int v, int cap, double cost) {
    auto& gu = g_[static_cast<std::size_t>(u)];
    auto& gv = g_[static_cast<std::size_t>(v)];
    ids_.push_back({u, static_cast<int>(gu.size()), cap});
    gu.push_back({v, static_cast<int>(gv.size()), cap, cost});
    gv.push_back({u, static_cast<int>(gu.size()) - 1, 0, -cost});
    return static_cast<int>(ids_.size()) - 1;
  }

  int flow_of(int id) const {
    const auto& r = ids_[static_cast<std::size_t>(id)];
    return r.cap - g_[static_cast<std::size_t>(r.node)][static_cast<std::size_t>(r.index)].cap;
  }

  int solve(int s, int t, int max_flow) {
    const auto n = g_.size();
    std::vector<double> h(n, 0.0), dist(n);
    std::vector<int> prev_node(n), prev_edge(n);
    int flow = 0;
    while (flow < max_flow) {
      std::fill(dist.begin(), dist.end(), kInf);
      dist[static_cast<std::size_t>(s)] = 0.0;
      using Item = std::pair<double, int>;
      std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
      pq.push({0.0, s});
      while (!pq.empty()) {
        const auto [d, u] = pq.top();
        pq.pop();
        const auto uu = static_cast<std::size_t>(u);
        if (d > dist[uu]) continue;
        for (std::size_t k = 0; k < g_[uu].size(); ++k) {
          const auto& e = g_[uu][k];
          if (e.cap <= 0) continue;
          const auto vv = static_cast<std::size_t>(e.to);
          const double nd = d + std::max(0.0, e.cost + h[uu] - h[vv]);
          if (nd < dist[vv]) {
            dist[vv] = nd;
            prev_node[vv] = u;
            prev_edge[vv] = static_cast<int>(k);
            pq.push({nd, e.to});
          }
        }
      }
      if (!std::isfinite(dist[static_cast<std::size_t>(t)])) break;
      for (std::size_t v = 0; v < n; ++v)
        if (std::isfinite(dist[v])) h[v] += dist[v];
      int push = max_flow - flow;
      for (int v = t; v != s; v = prev_node[static_cast<std::size_t>(v)]) {
        const auto& e = g_[static_cast<std::size_t>(prev_node[static_cast<std::size_t>(v)])]
                          [static_cast<std::size_t>(prev_edge[static_cast<std::size_t>(v)])];
        push = std::min(push, e.cap);
      }
      for (int v = t; v != s; v = prev_node[static_cast<std::size_t>(v)]) {
        auto& e = g_[static_cast<std::size_t>(prev_node[static_cast<std::size_t>(v)])]
                    [static_cast<std::size_t>(prev_edge[static_cast<std::size_t>(v)])];
        e.cap -= push;
        g_[static_cast<std::size_t>(v)][static_cast<std::size_t>(e.rev)].cap += push;
      }
      flow += push;
    }
    return flow;
  }

 private:
  struct Edge {
    int to, rev, cap;
    double cost;
  };
  struct Id {
    int node, index, cap;
  };
  std::vector<std::vector<Edge>> g_;
  std::vector<Id> ids_;
};

double eta_of(const SeMatrix& m, int u, int airs) {
  return m.eta(u, airs < 0 ? 0 : airs + 1);
}

double load(double eta) { return eta > 0.0 ? 1.0 / eta : kZeroSeLoad; }

/// Reduction of a UE's balanced RB demand when AIRS `i` serves it.
double load_gain(const SeMatrix& m, int u, int i) { return load(m.eta(u, 0)) - load(m.eta(u, i + 1)); }

bool helps(const SeMatrix& m, int u, int i) { return m.eta(u, i + 1) > m.eta(u, 0); }

void balance(SlotState& s, const SeMatrix& m, double n_rb, double eps) {
  if (s.ues.empty()) {
    s.rho.clear();
    s.zero_se.clear();
    s.min_throughput = kInf;
    return;
  }
  std::vector<double> etas;
  for (std::size_t k = 0; k < s.ues.size(); ++k) etas.push_back(eta_of(m, s.ues[k], s.airs_of[k]));
  auto ib = ib_balance(etas, n_rb, eps);
  s.rho = std::move(ib.rho);
  s.zero_se = std::move(ib.zero_se);
  s.min_throughput = ib.min_throughput;
}

std::vector<int> gs_association(const SlotState& s, const SeMatrix& m) {
  const int n = static_cast<int>(s.ues.size());
  const int n_airs = m.n_airs();
  std::vector<std::vector<int>> airs_prefs(static_cast<std::size_t>(n_airs)), ue_prefs(static_cast<std::size_t>(n));
  for (int i = 0; i < n_airs; ++i) {
    auto& pref = airs_prefs[static_cast<std::size_t>(i)];
    for (int k = 0; k < n; ++k)
      if (helps(m, s.ues[static_cast<std::size_t>(k)], i)) pref.push_back(k);
    std::stable_sort(pref.begin(), pref.end(), [&](int a, int b) {
      return load_gain(m, s.ues[static_cast<std::size_t>(a)], i) > load_gain(m, s.ues[static_cast<std::size_t>(b)], i);
    });
  }
  for (int k = 0; k < n; ++k) {
    const int u = s.ues[static_cast<std::size_t>(k)];
    auto& pref = ue_prefs[static_cast<std::size_t>(k)];
    for (int i = 0; i < n_airs; ++i)
      if (helps(m, u, i)) pref.push_back(i);
    std::stable_sort(pref.begin(), pref.end(), [&](int a, int b) { return m.eta(u, a + 1) > m.eta(u, b + 1); });
  }
  const auto match = gale_shapley(airs_prefs, ue_prefs);
  return match.acceptor;
}

/// Association minimizing the summed load of the slot, which maximizes the
/// balanced common throughput S / sum(1/eta).
std::vector<int> best_association(const SlotState& s, const SeMatrix& m) {
  const int n = static_cast<int>(s.ues.size());
  const int n_airs = m.n_airs();
  double w_max = 0.0;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n_airs; ++i) w_max = std::max(w_max, load_gain(m, s.ues[static_cast<std::size_t>(k)], i));
  const int src = 0, sink = 1 + n_airs + n;
  MinCostFlow f(sink + 1);
  std::vector<std::vector<int>> edge(static_cast<std::size_t>(n_airs), std::vector<int>(static_cast<std::size_t>(n), -1));
  for (int i = 0; i < n_airs; ++i) {
    f.add_edge(src, 1 + i, 1, 0.0);
    f.add_edge(1 + i, sink, 1, w_max);
    for (int k = 0; k < n; ++k) {
      const double w = load_gain(m, s.ues[static_cast<std::size_t>(k)], i);
      if (w > 0.0) edge[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = f.add_edge(1 + i, 1 + n_airs + k, 1, w_max - w);
    }
  }
  for (int k = 0; k < n; ++k) f.add_edge(1 + n_airs + k, sink, 1, 0.0);
  f.solve(src, sink, n_airs);
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n_airs; ++i)
    for (int k = 0; k < n; ++k) {
      const int id = edge[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      if (id >= 0 && f.flow_of(id) > 0) out[static_cast<std::size_t>(k)] = i;
    }
  return out;
}

double slot_min(const std::vector<SlotState>& slots) {
  double v = kInf;
  for (const auto& s : slots) v = std::min(v, s.min_throughput);
  return std::isfinite(v) ? v : 0.0;
}

void check_dims(const SeMatrix& m, int n_slots, double n_rb) {
  if (n_slots < 1) throw ValidationError("at least one slot is required", "n_slots");
  if (!(n_rb > 0.0)) throw ValidationError("RB count must be positive", "n_rb");
  if (m.eta.cols() < 1) throw ValidationError("SE matrix needs a BS-only column");
}

}  // namespace

// ---- SE matrix -------------------------------------------------------------

SeMatrix make_se_matrix(Eigen::MatrixXd eta) {
  SeMatrix m;
  if (eta.cols() < 1) throw ValidationError("SE matrix needs a BS-only column");
  for (Eigen::Index u = 0; u < eta.rows(); ++u)
    for (Eigen::Index c = 0; c < eta.cols(); ++c) {
      double& v = eta(u, c);
      if (!std::isfinite(v))
        throw ValidationError("non-finite SE prediction for UE " + std::to_string(u) + ", column " + std::to_string(c));
      if (v < 0.0) {
        v = 0.0;
        ++m.clamped;
      }
    }
  m.eta = std::move(eta);
  return m;
}

SeMatrix build_se_matrix(const ckm::SePredictor& predictor, const scene::SceneConfig& sc) {
  const auto n_ues = sc.ues.size();
  const auto cols = static_cast<Eigen::Index>(sc.airs.size() + 1);
  const auto rows = parallel_map(n_ues, [&](std::size_t u) { return predictor.predict_row(sc, sc.ues[u]); });
  Eigen::MatrixXd eta(static_cast<Eigen::Index>(n_ues), cols);
  for (std::size_t u = 0; u < n_ues; ++u) {
    if (static_cast<Eigen::Index>(rows[u].size()) != cols) throw Error("predictor returned a row of the wrong length");
    for (Eigen::Index c = 0; c < cols; ++c) eta(static_cast<Eigen::Index>(u), c) = rows[u][static_cast<std::size_t>(c)];
  }
  return make_se_matrix(std::move(eta));
}

// ---- Schedule --------------------------------------------------------------

Schedule::Schedule(int u, int i, int q, double s)
    : n_ues(u), n_airs(i), n_slots(q), n_rb(s), rho(Eigen::MatrixXd::Zero(u, q)),
      airs_ue(static_cast<std::size_t>(q), std::vector<int>(static_cast<std::size_t>(i), -1)),
      throughput(Eigen::VectorXd::Zero(u)) {}

double Schedule::min_throughput() const { return throughput.size() == 0 ? 0.0 : throughput.minCoeff(); }

int Schedule::serving(int u, int q) const {
  const auto& row = airs_ue[static_cast<std::size_t>(q)];
  for (std::size_t i = 0; i < row.size(); ++i)
    if (row[i] == u) return static_cast<int>(i);
  return -1;
}

double Schedule::eta_eff(const SeMatrix& m, int u, int q) const { return eta_of(m, u, serving(u, q)); }

void Schedule::update_throughput(const SeMatrix& m) {
  throughput = Eigen::VectorXd::Zero(n_ues);
  for (int u = 0; u < n_ues; ++u)
    for (int q = 0; q < n_slots; ++q) throughput(u) += rho(u, q) * n_rb * eta_eff(m, u, q);
}

void validate(const Schedule& s, const SeMatrix& m) {
  constexpr double tol = 1e-9;
  if (s.rho.rows() != s.n_ues || s.rho.cols() != s.n_slots || s.throughput.size() != s.n_ues ||
      static_cast<int>(s.airs_ue.size()) != s.n_slots)
    throw ValidationError("schedule dimensions are inconsistent");
  if (m.n_ues() != s.n_ues || m.n_airs() != s.n_airs)
    throw ValidationError("schedule does not match the SE matrix");
  for (int q = 0; q < s.n_slots; ++q) {
    double sum = 0.0;
    for (int u = 0; u < s.n_ues; ++u) {
      const double r = s.rho(u, q);
      if (!std::isfinite(r) || r < -tol || r > 1.0 + tol)
        throw ValidationError("RB ratio of UE " + std::to_string(u) + " in slot " + std::to_string(q) +
                              " is outside [0, 1]");
      sum += r;
    }
    if (sum > 1.0 + tol)
      throw ValidationError("RB ratios of slot " + std::to_string(q) + " sum to " + std::to_string(sum) + " > 1");
    const auto& row = s.airs_ue[static_cast<std::size_t>(q)];
    if (static_cast<int>(row.size()) != s.n_airs) throw ValidationError("association table has the wrong width");
    std::vector<int> seen(static_cast<std::size_t>(s.n_ues), 0);
    for (int u : row) {
      if (u < -1 || u >= s.n_ues) throw ValidationError("association names an unknown UE");
      if (u >= 0 && ++seen[static_cast<std::size_t>(u)] > 1)
        throw ValidationError("UE " + std::to_string(u) + " is served by two AIRSs in slot " + std::to_string(q));
    }
  }
  if (!s.slot_of_ue.empty()) {
    if (static_cast<int>(s.slot_of_ue.size()) != s.n_ues) throw ValidationError("slot_of_ue has the wrong length");
    for (int u = 0; u < s.n_ues; ++u) {
      const int home = s.slot_of_ue[static_cast<std::size_t>(u)];
      if (home < 0 || home >= s.n_slots) throw ValidationError("UE " + std::to_string(u) + " has no slot");
      for (int q = 0; q < s.n_slots; ++q)
        if (q != home && (s.rho(u, q) != 0.0 || s.serving(u, q) >= 0))
          throw ValidationError("UE " + std::to_string(u) + " is scheduled outside its slot");
    }
  }
  for (int u = 0; u < s.n_ues; ++u) {
    double r = 0.0;
    for (int q = 0; q < s.n_slots; ++q) r += s.rho(u, q) * s.n_rb * s.eta_eff(m, u, q);
    if (std::abs(r - s.throughput(u)) > tol * std::max(1.0, std::abs(r)))
      throw ValidationError("throughput of UE " + std::to_string(u) + " does not match its RB ratios");
  }
}

std::string to_json(const Schedule& s, bool include_timing) {
  nlohmann::ordered_json j;
  j["n_ues"] = s.n_ues;
  j["n_airs"] = s.n_airs;
  j["n_slots"] = s.n_slots;
  j["n_rb"] = s.n_rb;
  j["min_throughput"] = s.min_throughput();
  j["throughput"] = std::vector<double>(s.throughput.data(), s.throughput.data() + s.throughput.size());
  auto rho = nlohmann::ordered_json::array();
  for (int u = 0; u < s.n_ues; ++u) {
    std::vector<double> row;
    for (int q = 0; q < s.n_slots; ++q) row.push_back(s.rho(u, q));
    rho.push_back(row);
  }
  j["rho"] = std::move(rho);
  auto assoc = nlohmann::ordered_json::array();
  for (int q = 0; q < s.n_slots; ++q) {
    auto slot = nlohmann::ordered_json::array();
    for (int i = 0; i < s.n_airs; ++i) {
      const int u = s.airs_ue[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)];
      if (u >= 0) slot.push_back({{"airs", i}, {"ue", u}});
    }
    assoc.push_back(std::move(slot));
  }
  j["assoc"] = std::move(assoc);
  if (!s.slot_of_ue.empty()) j["slot_of_ue"] = s.slot_of_ue;
  j["zero_se_ues"] = s.zero_se_ues;
  auto trace = nlohmann::ordered_json::array();
  for (const auto& t : s.trace) {
    nlohmann::ordered_json e;
    e["stage"] = t.stage;
    e["min_throughput"] = t.min_throughput;
    if (include_timing) e["ms"] = t.ms;
    trace.push_back(std::move(e));
  }
  j["trace"] = std::move(trace);
  return j.dump(2);
}

// ---- cKMeans ---------------------------------------------------------------

std::vector<int> ckmeans(const Eigen::MatrixXd& points, int k, int min_size, std::uint64_t seed, int max_iter) {
  const int n = static_cast<int>(points.rows());
  if (k < 1) throw ValidationError("cluster count must be >= 1", "k");
  if (min_size < 0) throw ValidationError("minimum cluster size must be >= 0", "min_size");
  if (static_cast<long>(k) * min_size > n)
    throw ValidationError("infeasible minimum cluster size: " + std::to_string(k) + " x " +
                          std::to_string(min_size) + " > " + std::to_string(n) + " points");
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  if (n == 0 || k == 1) return labels;

  // k-means++ seeding.
  Rng rng(mix_seed(seed, 30));
  Eigen::MatrixXd centers(k, points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int p = 0; p < n; ++p) {
      double best = kInf;
      for (int j = 0; j < c; ++j) best = std::min(best, (points.row(p) - centers.row(j)).squaredNorm());
      d2[static_cast<std::size_t>(p)] = best;
      total += best;
    }
    int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[static_cast<std::size_t>(pick)];
        if (r < 0.0) break;
      }
    }
    centers.row(c) = points.row(pick);
  }

  const int src = 0, overflow = 1 + n + k, sink = overflow + 1;
  for (int it = 0; it < max_iter; ++it) {
    MinCostFlow f(sink + 1);
    std::vector<int> ids(static_cast<std::size_t>(n * k));
    for (int p = 0; p < n; ++p) {
      f.add_edge(src, 1 + p, 1, 0.0);
      for (int c = 0; c < k; ++c)
        ids[static_cast<std::size_t>(p * k + c)] =
            f.add_edge(1 + p, 1 + n + c, 1, (points.row(p) - centers.row(c)).squaredNorm());
    }
    // Saturating every cluster->sink edge of capacity min_size is forced by a
    // full flow of n units, since the overflow path carries only n - k*min_size.
    for (int c = 0; c < k; ++c) {
      f.add_edge(1 + n + c, sink, min_size, 0.0);
      f.add_edge(1 + n + c, overflow, n, 0.0);
    }
    f.add_edge(overflow, sink, n - k * min_size, 0.0);
    if (f.solve(src, sink, n) != n) throw Error("cKMeans assignment flow is incomplete");
    std::vector<int> next(static_cast<std::size_t>(n), -1);
    for (int p = 0; p < n; ++p)
      for (int c = 0; c < k; ++c)
        if (f.flow_of(ids[static_cast<std::size_t>(p * k + c)]) > 0) next[static_cast<std::size_t>(p)] = c;
    const bool fixpoint = it > 0 && next == labels;
    labels = std::move(next);
    if (fixpoint) break;
    for (int c = 0; c < k; ++c) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
      int count = 0;
      for (int p = 0; p < n; ++p)
        if (labels[static_cast<std::size_t>(p)] == c) {
          sum += points.row(p);
          ++count;
        }
      if (count > 0) centers.row(c) = sum / count;
    }
  }
  return labels;
}

// ---- Gale-Shapley ----------------------------------------------------------

Matching gale_shapley(const std::vector<std::vector<int>>& proposer_prefs,
                      const std::vector<std::vector<int>>& acceptor_prefs) {
  const auto n_p = proposer_prefs.size(), n_a = acceptor_prefs.size();
  std::vector<std::vector<int>> rank(n_a, std::vector<int>(n_p, -1));
  for (std::size_t a = 0; a < n_a; ++a)
    for (std::size_t r = 0; r < acceptor_prefs[a].size(); ++r) {
      const int p = acceptor_prefs[a][r];
      if (p < 0 || static_cast<std::size_t>(p) >= n_p) throw ValidationError("acceptor preference out of range");
      rank[a][static_cast<std::size_t>(p)] = static_cast<int>(r);
    }
  Matching m{std::vector<int>(n_p, -1), std::vector<int>(n_a, -1)};
  std::vector<std::size_t> next(n_p, 0);
  std::deque<int> free;
  for (std::size_t p = 0; p < n_p; ++p) free.push_back(static_cast<int>(p));
  while (!free.empty()) {
    const int p = free.front();
    const auto pp = static_cast<std::size_t>(p);
    if (next[pp] >= proposer_prefs[pp].size()) {
      free.pop_front();
      continue;
    }
    const int a = proposer_prefs[pp][next[pp]++];
    if (a < 0 || static_cast<std::size_t>(a) >= n_a) throw ValidationError("proposer preference out of range");
    const auto aa = static_cast<std::size_t>(a);
    if (rank[aa][pp] < 0) continue;
    const int cur = m.acceptor[aa];
    if (cur >= 0 && rank[aa][static_cast<std::size_t>(cur)] < rank[aa][pp]) continue;
    free.pop_front();
    if (cur >= 0) {
      m.proposer[static_cast<std::size_t>(cur)] = -1;
      free.push_front(cur);
    }
    m.acceptor[aa] = p;
    m.proposer[pp] = a;
  }
  return m;
}

// ---- Stage 2 / 3 -----------------------------------------------------------

IbResult ib_balance(const std::vector<double>& etas, double n_rb, double eps) {
  if (!(eps > 0.0)) throw ValidationError("eps must be positive", "eps");
  if (!(n_rb > 0.0)) throw ValidationError("RB count must be positive", "n_rb");
  IbResult r;
  const std::size_t n = etas.size();
  r.rho.assign(n, 0.0);
  r.zero_se.assign(n, false);
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(etas[k] > 0.0) || !std::isfinite(etas[k]))
      r.zero_se[k] = true;
    else
      active.push_back(k);
  }
  if (active.empty()) return r;
  for (auto k : active) r.rho[k] = 1.0 / static_cast<double>(active.size());
  constexpr int kMaxIter = 1000000;
  for (;; ++r.iterations) {
    std::size_t hi = active[0], lo = active[0];
    for (auto k : active) {
      const double t = r.rho[k] * etas[k];
      if (t > r.rho[hi] * etas[hi]) hi = k;
      if (t < r.rho[lo] * etas[lo]) lo = k;
    }
    const double gap = n_rb * (r.rho[hi] * etas[hi] - r.rho[lo] * etas[lo]);
    if (gap <= eps || r.iterations >= kMaxIter) break;
    const double delta = (r.rho[hi] * etas[hi] - r.rho[lo] * etas[lo]) / (etas[hi] + etas[lo]);
    r.rho[hi] -= delta;
    r.rho[lo] += delta;
  }
  if (active.size() == n) {
    r.min_throughput = kInf;
    for (auto k : active) r.min_throughput = std::min(r.min_throughput, r.rho[k] * n_rb * etas[k]);
  }
  return r;
}

SlotState per_slot_maxmin(const SlotState& init, const SeMatrix& m, double n_rb, const SmibParams& p) {
  SlotState cur = init;
  cur.airs_of.resize(cur.ues.size(), -1);
  balance(cur, m, n_rb, p.eps);
  if (cur.ues.empty() || m.n_airs() == 0) return cur;
  for (int it = 0; it < p.n_max; ++it) {
    SlotState cand = cur;
    cand.airs_of = gs_association(cur, m);
    if (cand.airs_of == cur.airs_of) break;
    balance(cand, m, n_rb, p.eps);
    if (cand.min_throughput < cur.min_throughput) break;
    cur = std::move(cand);
  }
  if (p.slot_polish) {
    SlotState cand = cur;
    cand.airs_of = best_association(cur, m);
    if (cand.airs_of != cur.airs_of) {
      balance(cand, m, n_rb, p.eps);
      if (cand.min_throughput > cur.min_throughput) cur = std::move(cand);
    }
  }
  return cur;
}

std::vector<SlotState> cross_slot_swap(std::vector<SlotState> slots, const SeMatrix& m, double n_rb,
                                       const SmibParams& p) {
  if (slots.size() < 2) return slots;
  const int max_rounds = 100 * std::max(1, m.n_ues());
  for (int round = 0; round < max_rounds; ++round) {
    int q_min = -1, q_max = -1;
    for (int q = 0; q < static_cast<int>(slots.size()); ++q) {
      const auto& s = slots[static_cast<std::size_t>(q)];
      if (s.ues.empty()) continue;
      if (q_min < 0 || s.min_throughput < slots[static_cast<std::size_t>(q_min)].min_throughput) q_min = q;
      if (q_max < 0 || s.min_throughput > slots[static_cast<std::size_t>(q_max)].min_throughput) q_max = q;
    }
    if (q_min < 0 || q_min == q_max) break;
    const auto& lo = slots[static_cast<std::size_t>(q_min)];
    const auto& hi = slots[static_cast<std::size_t>(q_max)];
    if (hi.min_throughput - lo.min_throughput <= p.xi) break;

    // The largest-ratio UE of the worst slot goes first; the others follow in
    // descending ratio order if it has no improving partner.
    std::vector<std::size_t> outs(lo.ues.size()), ins(hi.ues.size());
    std::iota(outs.begin(), outs.end(), 0);
    std::iota(ins.begin(), ins.end(), 0);
    std::stable_sort(outs.begin(), outs.end(), [&](std::size_t a, std::size_t b) { return lo.rho[a] > lo.rho[b]; });
    std::stable_sort(ins.begin(), ins.end(), [&](std::size_t a, std::size_t b) { return hi.rho[a] < hi.rho[b]; });
    if (!p.all_swap_candidates) outs.resize(std::min<std::size_t>(outs.size(), 1));

    bool improved = false;
    for (std::size_t out : outs) {
      for (std::size_t in : ins) {
        SlotState a = lo, b = hi;
        a.ues[out] = hi.ues[in];
        a.airs_of[out] = -1;
        b.ues[in] = lo.ues[out];
        b.airs_of[in] = -1;
        a = per_slot_maxmin(a, m, n_rb, p);
        b = per_slot_maxmin(b, m, n_rb, p);
        if (std::min(a.min_throughput, b.min_throughput) > lo.min_throughput) {
          slots[static_cast<std::size_t>(q_min)] = std::move(a);
          slots[static_cast<std::size_t>(q_max)] = std::move(b);
          improved = true;
          break;
        }
      }
      if (improved) break;
    }
    if (!improved) break;
  }
  return slots;
}

// ---- Stage 1 ---------------------------------------------------------------

std::vector<SlotState> stage1_grouping(const SeMatrix& m, int n_slots, std::uint64_t seed) {
  if (n_slots < 1) throw ValidationError("at least one slot is required", "n_slots");
  const int n_ues = m.n_ues(), n_airs = m.n_airs();
  std::vector<SlotState> slots(static_cast<std::size_t>(n_slots));
  auto place = [&](int q, int u, int airs) {
    slots[static_cast<std::size_t>(q)].ues.push_back(u);
    slots[static_cast<std::size_t>(q)].airs_of.push_back(airs);
  };
  auto spread_bs_only = [&](std::vector<int> ues) {
    std::stable_sort(ues.begin(), ues.end(), [&](int a, int b) { return m.eta(a, 0) > m.eta(b, 0); });
    for (int u : ues) {
      int q = 0;
      for (int c = 1; c < n_slots; ++c)
        if (slots[static_cast<std::size_t>(c)].ues.size() < slots[static_cast<std::size_t>(q)].ues.size()) q = c;
      place(q, u, -1);
    }
  };
  if (n_ues == 0) return slots;
  if (n_airs == 0) {
    std::vector<int> all(static_cast<std::size_t>(n_ues));
    std::iota(all.begin(), all.end(), 0);
    spread_bs_only(std::move(all));
    return slots;
  }
  if (n_ues <= n_airs) {
    // One UE per slot round-robin; stage 2 picks the serving AIRS.
    for (int u = 0; u < n_ues; ++u) place(u % n_slots, u, -1);
    return slots;
  }

  const int u0 = std::min(n_ues / n_airs, n_slots);
  const auto labels = ckmeans(m.eta.rightCols(n_airs), n_airs, u0, seed);
  std::vector<std::vector<int>> members(static_cast<std::size_t>(n_airs));
  for (int u = 0; u < n_ues; ++u) members[static_cast<std::size_t>(labels[static_cast<std::size_t>(u)])].push_back(u);

  // Cluster-AIRS stable matching with the AIRSs proposing.
  auto mean_over = [&](int c, auto&& fn) {
    const auto& mem = members[static_cast<std::size_t>(c)];
    double s = 0.0;
    for (int u : mem) s += fn(u);
    return mem.empty() ? 0.0 : s / static_cast<double>(mem.size());
  };
  std::vector<std::vector<int>> airs_prefs(static_cast<std::size_t>(n_airs)), cluster_prefs(static_cast<std::size_t>(n_airs));
  for (int i = 0; i < n_airs; ++i) {
    auto& pref = airs_prefs[static_cast<std::size_t>(i)];
    pref.resize(static_cast<std::size_t>(n_airs));
    std::iota(pref.begin(), pref.end(), 0);
    std::vector<double> gain;
    for (int c = 0; c < n_airs; ++c) gain.push_back(mean_over(c, [&](int u) { return m.eta(u, i + 1) - m.eta(u, 0); }));
    std::stable_sort(pref.begin(), pref.end(), [&](int a, int b) {
      return gain[static_cast<std::size_t>(a)] > gain[static_cast<std::size_t>(b)];
    });
  }
  for (int c = 0; c < n_airs; ++c) {
    auto& pref = cluster_prefs[static_cast<std::size_t>(c)];
    pref.resize(static_cast<std::size_t>(n_airs));
    std::iota(pref.begin(), pref.end(), 0);
    std::vector<double> se;
    for (int i = 0; i < n_airs; ++i) se.push_back(mean_over(c, [&](int u) { return m.eta(u, i + 1); }));
    std::stable_sort(pref.begin(), pref.end(), [&](int a, int b) {
      return se[static_cast<std::size_t>(a)] > se[static_cast<std::size_t>(b)];
    });
  }
  const auto match = gale_shapley(airs_prefs, cluster_prefs);

  std::vector<int> leftovers;
  for (int c = 0; c < n_airs; ++c) {
    auto mem = members[static_cast<std::size_t>(c)];
    std::stable_sort(mem.begin(), mem.end(), [&](int a, int b) { return m.eta(a, 0) < m.eta(b, 0); });
    const int airs = match.acceptor[static_cast<std::size_t>(c)];
    for (std::size_t k = 0; k < mem.size(); ++k) {
      if (static_cast<int>(k) < n_slots)
        place(static_cast<int>(k), mem[k], airs);
      else
        leftovers.push_back(mem[k]);
    }
  }
  spread_bs_only(std::move(leftovers));
  return slots;
}

Schedule to_schedule(const std::vector<SlotState>& slots, const SeMatrix& m, double n_rb) {
  Schedule s(m.n_ues(), m.n_airs(), static_cast<int>(slots.size()), n_rb);
  s.slot_of_ue.assign(static_cast<std::size_t>(m.n_ues()), -1);
  for (std::size_t q = 0; q < slots.size(); ++q) {
    const auto& st = slots[q];
    for (std::size_t k = 0; k < st.ues.size(); ++k) {
      const int u = st.ues[k];
      if (s.slot_of_ue[static_cast<std::size_t>(u)] >= 0) throw Error("UE placed in two slots");
      s.slot_of_ue[static_cast<std::size_t>(u)] = static_cast<int>(q);
      s.rho(u, static_cast<Eigen::Index>(q)) = k < st.rho.size() ? st.rho[k] : 0.0;
      if (st.airs_of[k] >= 0) s.airs_ue[q][static_cast<std::size_t>(st.airs_of[k])] = u;
      if (k < st.zero_se.size() && st.zero_se[k]) s.zero_se_ues.push_back(u);
    }
  }
  for (int u = 0; u < m.n_ues(); ++u)
    if (s.slot_of_ue[static_cast<std::size_t>(u)] < 0) throw Error("UE " + std::to_string(u) + " was not placed");
  std::sort(s.zero_se_ues.begin(), s.zero_se_ues.end());
  s.update_throughput(m);
  return s;
}

Schedule sm_ib(const SeMatrix& m, int n_slots, double n_rb, const SmibParams& p) {
  check_dims(m, n_slots, n_rb);
  if (p.n_max < 0) throw ValidationError("N_max must be >= 0", "nmax");
  if (!(p.xi >= 0.0)) throw ValidationError("xi must be >= 0", "xi");
  std::vector<StageRecord> trace;
  double t0 = now_ms();
  auto slots = stage1_grouping(m, n_slots, p.seed);
  for (auto& s : slots) balance(s, m, n_rb, p.eps);
  double t1 = now_ms();
  trace.push_back({"stage1", slot_min(slots), t1 - t0});
  for (auto& s : slots) s = per_slot_maxmin(s, m, n_rb, p);
  double t2 = now_ms();
  trace.push_back({"stage2", slot_min(slots), t2 - t1});
  slots = cross_slot_swap(std::move(slots), m, n_rb, p);
  double t3 = now_ms();
  trace.push_back({"stage3", slot_min(slots), t3 - t2});
  auto s = to_schedule(slots, m, n_rb);
  s.trace = std::move(trace);
  validate(s, m);
  return s;
}

Schedule sm_ib(const ckm::SePredictor& predictor, const scene::SceneConfig& sc, const SmibParams& p) {
  const double t0 = now_ms();
  const auto m = build_se_matrix(predictor, sc);
  const double t1 = now_ms();
  auto s = sm_ib(m, sc.n_slots, sc.n_rb, p);
  s.trace.insert(s.trace.begin(), {"se_matrix", 0.0, t1 - t0});
  return s;
}

// ---- exact bound -----------------------------------------------------------

LpResult exact_maxmin_lp(const Eigen::MatrixXd& eta_uq, double n_rb) {
  if (!(n_rb > 0.0)) throw ValidationError("RB count must be positive", "n_rb");
  if (!eta_uq.allFinite() || (eta_uq.size() > 0 && eta_uq.minCoeff() < 0.0))
    throw ValidationError("eta must be finite and non-negative");
  const int U = static_cast<int>(eta_uq.rows()), Q = static_cast<int>(eta_uq.cols());
  LpResult res;
  res.rho = Eigen::MatrixXd::Zero(U, Q);
  if (U == 0 || Q == 0) return res;

  // Variables: x0 = t, x(1 + u*Q + q) = rho(u, q), then one slack per row.
  const int n_var = 1 + U * Q, n_row = U + Q, width = n_var + n_row + 1;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n_row + 1, width);
  for (int u = 0; u < U; ++u) {
    T(u, 0) = 1.0;
    for (int q = 0; q < Q; ++q) T(u, 1 + u * Q + q) = -n_rb * eta_uq(u, q);
    T(u, n_var + u) = 1.0;
  }
  for (int q = 0; q < Q; ++q) {
    for (int u = 0; u < U; ++u) T(U + q, 1 + u * Q + q) = 1.0;
    T(U + q, n_var + U + q) = 1.0;
    T(U + q, width - 1) = 1.0;
  }
  T(n_row, 0) = -1.0;  // objective row holds -c
  std::vector<int> basis(static_cast<std::size_t>(n_row));
  std::iota(basis.begin(), basis.end(), n_var);

  constexpr double tol = 1e-9;
  constexpr int kMaxPivots = 100000;
  for (;;) {
    int enter = -1;
    for (int j = 0; j < n_var + n_row; ++j)
      if (T(n_row, j) < -tol) {
        enter = j;
        break;
      }
    if (enter < 0) break;
    double best = kInf;
    for (int r = 0; r < n_row; ++r)
      if (T(r, enter) > tol) best = std::min(best, T(r, width - 1) / T(r, enter));
    // Bland: among minimum-ratio rows, the lowest basic variable leaves.
    int leave = -1;
    for (int r = 0; r < n_row; ++r)
      if (T(r, enter) > tol && T(r, width - 1) / T(r, enter) <= best + tol &&
          (leave < 0 || basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)]))
        leave = r;
    if (leave < 0) throw Error("max-min LP is unbounded");
    if (++res.pivots > kMaxPivots) throw Error("simplex pivot guard exceeded (possible cycling)");
    T.row(leave) /= T(leave, enter);
    for (int r = 0; r <= n_row; ++r)
      if (r != leave && T(r, enter) != 0.0) T.row(r) -= T(r, enter) * T.row(leave);
    basis[static_cast<std::size_t>(leave)] = enter;
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n_var + n_row);
  for (int r = 0; r < n_row; ++r) x(basis[static_cast<std::size_t>(r)]) = T(r, width - 1);
  res.value = std::max(0.0, x(0));
  for (int u = 0; u < U; ++u)
    for (int q = 0; q < Q; ++q) res.rho(u, q) = std::clamp(x(1 + u * Q + q), 0.0, 1.0);
  return res;
}

double enum_count(int n_ues, int n_airs, int n_slots) {
  // Partial injective AIRS->UE maps of one slot: sum_k C(I, k) * U! / (U - k)!.
  double per_slot = 0.0;
  for (int k = 0; k <= std::min(n_ues, n_airs); ++k) {
    double c = 1.0, perm = 1.0;
    for (int j = 0; j < k; ++j) {
      c = c * (n_airs - j) / (j + 1);
      perm *= n_ues - j;
    }
    per_slot += c * perm;
  }
  return std::pow(per_slot, n_slots);
}

Schedule exact_enum(const SeMatrix& m, int n_slots, double n_rb, double guard) {
  check_dims(m, n_slots, n_rb);
  const int U = m.n_ues(), I = m.n_airs();
  const double count = enum_count(U, I, n_slots);
  if (count > guard)
  {
    char msg[160];
    std::snprintf(msg, sizeof msg, "exact enumeration needs %.4g LP solves, above the guard of %.4g", count, guard);
    throw ValidationError(msg);
  }
  const double t0 = now_ms();
  std::vector<std::vector<int>> maps;
  std::vector<int> cur(static_cast<std::size_t>(I), -1);
  std::vector<bool> used(static_cast<std::size_t>(U), false);
  auto rec = [&](auto&& self, int i) -> void {
    if (i == I) {
      maps.push_back(cur);
      return;
    }
    cur[static_cast<std::size_t>(i)] = -1;
    self(self, i + 1);
    for (int u = 0; u < U; ++u) {
      if (used[static_cast<std::size_t>(u)]) continue;
      used[static_cast<std::size_t>(u)] = true;
      cur[static_cast<std::size_t>(i)] = u;
      self(self, i + 1);
      used[static_cast<std::size_t>(u)] = false;
    }
    cur[static_cast<std::size_t>(i)] = -1;
  };
  rec(rec, 0);

  std::vector<std::size_t> pick(static_cast<std::size_t>(n_slots), 0);
  double best = -1.0;
  LpResult best_lp;
  std::vector<std::size_t> best_pick;
  Eigen::MatrixXd eta_uq(U, n_slots);
  for (;;) {
    for (int q = 0; q < n_slots; ++q) {
      for (int u = 0; u < U; ++u) eta_uq(u, q) = m.eta(u, 0);
      const auto& map = maps[pick[static_cast<std::size_t>(q)]];
      for (int i = 0; i < I; ++i)
        if (map[static_cast<std::size_t>(i)] >= 0) eta_uq(map[static_cast<std::size_t>(i)], q) = m.eta(map[static_cast<std::size_t>(i)], i + 1);
    }
    auto lp = exact_maxmin_lp(eta_uq, n_rb);
    if (lp.value > best) {
      best = lp.value;
      best_lp = std::move(lp);
      best_pick = pick;
    }
    int q = 0;
    while (q < n_slots && ++pick[static_cast<std::size_t>(q)] == maps.size()) pick[static_cast<std::size_t>(q++)] = 0;
    if (q == n_slots) break;
  }
  Schedule s(U, I, n_slots, n_rb);
  s.rho = best_lp.rho;
  // Clip rounding so every slot stays within its RB budget.
  for (int q = 0; q < n_slots; ++q) {
    const double sum = s.rho.col(q).sum();
    if (sum > 1.0) s.rho.col(q) /= sum;
  }
  for (int q = 0; q < n_slots; ++q) s.airs_ue[static_cast<std::size_t>(q)] = maps[best_pick[static_cast<std::size_t>(q)]];
  s.update_throughput(m);
  s.trace.push_back({"exact", s.min_throughput(), now_ms() - t0});
  validate(s, m);
  return s;
}

Schedule random_schedule(const SeMatrix& m, int n_slots, double n_rb, std::uint64_t seed) {
  check_dims(m, n_slots, n_rb);
  const double t0 = now_ms();
  const int U = m.n_ues(), I = m.n_airs();
  Rng rng(mix_seed(seed, 40));
  std::vector<int> perm(static_cast<std::size_t>(U));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  std::vector<SlotState> slots(static_cast<std::size_t>(n_slots));
  for (int k = 0; k < U; ++k) {
    auto& s = slots[static_cast<std::size_t>(k % n_slots)];
    s.ues.push_back(perm[static_cast<std::size_t>(k)]);
    s.airs_of.push_back(-1);
  }
  for (auto& s : slots) {
    std::vector<std::size_t> order(s.ues.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    for (int i = 0; i < I && static_cast<std::size_t>(i) < order.size(); ++i) s.airs_of[order[static_cast<std::size_t>(i)]] = i;
    s.rho.assign(s.ues.size(), s.ues.empty() ? 0.0 : 1.0 / static_cast<double>(s.ues.size()));
  }
  auto s = to_schedule(slots, m, n_rb);
  s.trace.push_back({"random", s.min_throughput(), now_ms() - t0});
  validate(s, m);
  return s;
}

}  // namespace airslab::sched
