#include "airslab/ckm.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "airslab/parallel.hpp"
#include "airslab/rng.hpp"

namespace airslab::ckm {

using json = nlohmann::ordered_json;

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void num(double v) {
    const auto u = std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v);  // fold -0
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    bytes(b, 8);
  }
};

std::uint64_t position_key(const Eigen::Vector3d& p) {
  return mix_seed(std::bit_cast<std::uint64_t>(p.x()), std::bit_cast<std::uint64_t>(p.y()),
                  std::bit_cast<std::uint64_t>(p.z()));
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::uint64_t fingerprint(const scene::SceneConfig& sc) {
  Fnv f;
  for (double v : {sc.bs_height, sc.carrier_freq, sc.bandwidth, static_cast<double>(sc.n_rb),
                   static_cast<double>(sc.n_slots), sc.frame_time, sc.bs_power_dbm, sc.noise_psd_dbm_hz})
    f.num(v);
  f.num(static_cast<double>(sc.airs.size()));
  for (const auto& a : sc.airs) {
    for (int k = 0; k < 3; ++k) f.num(a.pos(k));
    for (int k = 0; k < 3; ++k) f.num(a.rot(k));
    for (double v : {static_cast<double>(a.grid_y), static_cast<double>(a.grid_z), a.elem_gain_dbi,
                     a.erp_exponent, a.amp_power_dbm, a.dyn_noise_psd_dbm_hz})
      f.num(v);
  }
  return f.h;
}

CkmStore::CkmStore(std::uint64_t fp, double cell_m) : fingerprint_(fp), cell_(cell_m) {
  if (!(cell_m > 0.0)) throw ValidationError("cell size must be positive", "cell_m");
}

std::size_t CkmStore::CellHash::operator()(const Cell& c) const {
  return static_cast<std::size_t>(
      mix_seed(static_cast<std::uint64_t>(c.first), static_cast<std::uint64_t>(c.second)));
}

CkmStore::Cell CkmStore::cell_of(const Eigen::Vector2d& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
          static_cast<std::int64_t>(std::floor(p.y() / cell_))};
}

void CkmStore::put(const Eigen::Vector2d& pos, std::vector<oracle::LpsRecord> records, std::uint64_t fp) {
  if (fp != fingerprint_) throw ValidationError("CKM fingerprint mismatch", "fingerprint");
  if (!pos.allFinite()) throw ValidationError("CKM position must be finite", "pos");
  if (!entries_.empty() && records.size() != entries_.front().records.size())
    throw ValidationError("CKM entries must carry the same number of records", "records");
  const Cell c = cell_of(pos);
  if (entries_.empty()) {
    min_cx_ = max_cx_ = c.first;
    min_cy_ = max_cy_ = c.second;
  } else {
    min_cx_ = std::min(min_cx_, c.first);
    max_cx_ = std::max(max_cx_, c.first);
    min_cy_ = std::min(min_cy_, c.second);
    max_cy_ = std::max(max_cy_, c.second);
  }
  grid_[c].push_back(entries_.size());
  entries_.push_back({pos, std::move(records)});
}

QueryResult CkmStore::query(const Eigen::Vector2d& pos) const {
  if (entries_.empty()) throw ValidationError("CKM store is empty");
  const Cell c = cell_of(pos);
  // Rings of cells at Chebyshev distance r; any point in ring r lies at least
  // (r - 1) * cell away, which bounds the search.
  const std::int64_t r_max =
      std::max({std::abs(c.first - min_cx_), std::abs(c.first - max_cx_), std::abs(c.second - min_cy_),
                std::abs(c.second - max_cy_)});
  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  auto visit = [&](std::int64_t cx, std::int64_t cy) {
    const auto it = grid_.find({cx, cy});
    if (it == grid_.end()) return;
    for (std::size_t idx : it->second) {
      const double d2 = (entries_[idx].pos - pos).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
  };
  for (std::int64_t r = 0; r <= r_max; ++r) {
    if (std::isfinite(best_d2)) {
      const double lower = static_cast<double>(r - 1) * cell_;
      if (lower > 0.0 && lower * lower > best_d2) break;
    }
    if (r == 0) {
      visit(c.first, c.second);
      continue;
    }
    for (std::int64_t dx = -r; dx <= r; ++dx) {
      visit(c.first + dx, c.second - r);
      visit(c.first + dx, c.second + r);
    }
    for (std::int64_t dy = -r + 1; dy <= r - 1; ++dy) {
      visit(c.first - r, c.second + dy);
      visit(c.first + r, c.second + dy);
    }
  }
  return {best, std::sqrt(best_d2), &entries_[best]};
}

void CkmStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  json h;
  h["format"] = "airslab-ckm";
  h["version"] = 1;
  h["fingerprint"] = hex(fingerprint_);
  h["cell_m"] = cell_;
  h["entries"] = entries_.size();
  out << h.dump() << '\n';
  for (const auto& e : entries_) {
    json j;
    j["pos"] = {e.pos.x(), e.pos.y()};
    json recs = json::array();
    for (const auto& r : e.records) recs.push_back(json::parse(oracle::to_jsonl(r)));
    j["records"] = std::move(recs);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

CkmStore CkmStore::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CKM file");
  try {
    const json h = json::parse(line);
    if (h.at("format") != "airslab-ckm") throw ValidationError("not a CKM file", "format");
    const auto fp = std::stoull(h.at("fingerprint").get<std::string>(), nullptr, 16);
    CkmStore store(fp, h.at("cell_m").get<double>());
    const auto expected = h.at("entries").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      std::vector<oracle::LpsRecord> recs;
      for (const auto& r : j.at("records")) recs.push_back(oracle::lps_from_jsonl(r.dump()));
      store.put({j.at("pos")[0].get<double>(), j.at("pos")[1].get<double>()}, std::move(recs), fp);
    }
    if (store.size() != expected) throw ValidationError("CKM file is truncated", "entries");
    return store;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed CKM file: ") + e.what());
  }
}

CkmStore build_store(const scene::SceneConfig& sc, const std::vector<scene::UePos>& positions,
                     const channel::FadingSpec& spec) {
  const auto fp = fingerprint(sc);
  CkmStore store(fp);
  auto records = parallel_map(positions.size(), [&](std::size_t k) {
    auto s = spec;
    s.seed = mix_seed(spec.seed, position_key(positions[k].pos));
    return oracle::lps_records_for(sc, positions[k], s);
  });
  for (std::size_t k = 0; k < positions.size(); ++k)
    store.put(positions[k].pos.head<2>(), std::move(records[k]), fp);
  return store;
}

ComposeParams compose_params(const scene::SceneConfig& sc) {
  ComposeParams p;
  p.p_rb = sc.p_rb_mw();
  p.sigma0_sq = sc.sigma0_sq_mw();
  for (std::size_t i = 0; i < sc.airs.size(); ++i) p.sigma_v_sq.push_back(sc.sigma_v_sq_mw(i));
  return p;
}

double sample_power(const oracle::QuantileCdf& cdf, double u) {
  constexpr int K = oracle::kQuantiles;
  auto power = [&](int k) { return std::pow(10.0, cdf.q_db[static_cast<std::size_t>(k)] / 10.0); };
  if (u <= oracle::quantile_level(0)) return cdf.mask[0] ? power(0) : 0.0;
  if (u >= oracle::quantile_level(K - 1)) return cdf.mask[K - 1] ? power(K - 1) : 0.0;
  // Levels are (2k+1)/32, so the lower bracket index follows directly.
  int k = static_cast<int>(std::floor((32.0 * u - 1.0) / 2.0));
  k = std::clamp(k, 0, K - 2);
  const auto kk = static_cast<std::size_t>(k);
  if (!cdf.mask[kk] || !cdf.mask[kk + 1]) return 0.0;
  const double lo = oracle::quantile_level(k), hi = oracle::quantile_level(k + 1);
  const double db = cdf.q_db[kk] + (u - lo) / (hi - lo) * (cdf.q_db[kk + 1] - cdf.q_db[kk]);
  return std::pow(10.0, db / 10.0);
}

ComposeEstimate compose_se_mc(const std::vector<oracle::QuantileCdf>& cdfs,
                              const std::vector<oracle::Category>& cats, int n_samples,
                              std::uint64_t seed, const ComposeParams& params) {
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (cdfs.size() != cats.size()) throw ValidationError("cdfs/cats length mismatch");
  int n_direct = 0;
  std::size_t n_noise = 0;
  for (auto c : cats) {
    n_direct += c == oracle::Category::direct;
    n_noise += c == oracle::Category::noise;
  }
  if (n_direct != 1) throw ValidationError("exactly one direct-link CDF is required");
  if (params.sigma_v_sq.size() < n_noise)
    throw ValidationError("one sigma_v^2 per dynamic-noise CDF is required");
  if (!(params.sigma0_sq > 0.0)) throw ValidationError("sigma_0^2 must be positive");

  // One stream per term: adding a term leaves the draws of the others intact.
  std::vector<Rng> rngs;
  for (std::size_t t = 0; t < cdfs.size(); ++t) rngs.emplace_back(mix_seed(seed, 20, t));
  double sum = 0.0, sum_sq = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    cplx total = 0.0;
    double den = params.sigma0_sq;
    std::size_t noise_idx = 0;
    for (std::size_t t = 0; t < cdfs.size(); ++t) {
      const double p = sample_power(cdfs[t], rngs[t].uniform_open());
      if (cats[t] == oracle::Category::noise) {
        den += p * params.sigma_v_sq[noise_idx++];
      } else {
        total += std::sqrt(p) * rngs[t].unit_phase();
      }
    }
    const double se = std::log2(1.0 + params.p_rb * std::norm(total) / den);
    sum += se;
    sum_sq += se * se;
  }
  ComposeEstimate e;
  const double N = n_samples;
  e.mean = sum / N;
  if (n_samples > 1) e.std_err = std::sqrt(std::max(0.0, (sum_sq - N * e.mean * e.mean) / (N - 1.0)) / N);
  return e;
}

void assemble_inputs(const std::vector<oracle::LpsRecord>& records, std::optional<int> serving,
                     std::vector<oracle::QuantileCdf>& cdfs, std::vector<oracle::Category>& cats) {
  if (records.empty() || records.size() % 2 != 0)
    throw ValidationError("expected two LPS records per AIRS");
  const int n_airs = static_cast<int>(records.size() / 2);
  if (serving && (*serving < 0 || *serving >= n_airs)) throw ValidationError("serving AIRS index out of range");
  cdfs.clear();
  cats.clear();
  cdfs.push_back(records[0].cdf_direct);
  cats.push_back(oracle::Category::direct);
  for (int i = 0; i < n_airs; ++i) {
    const bool served = serving && *serving == i;
    cdfs.push_back(records[static_cast<std::size_t>(2 * i + (served ? 0 : 1))].cdf_link);
    cats.push_back(served ? oracle::Category::cascaded : oracle::Category::scattered);
  }
  for (int i = 0; i < n_airs; ++i) {
    cdfs.push_back(records[static_cast<std::size_t>(2 * i)].cdf_noise);
    cats.push_back(oracle::Category::noise);
  }
}

std::vector<double> SePredictor::predict_row(const scene::SceneConfig& sc, const scene::UePos& ue) const {
  std::vector<double> row{predict(sc, ue, std::nullopt)};
  for (int i = 0; i < static_cast<int>(sc.airs.size()); ++i) row.push_back(predict(sc, ue, i));
  return row;
}

channel::FadingSpec OraclePredictor::spec_for(const scene::UePos& ue) const {
  auto s = spec_;
  s.seed = mix_seed(spec_.seed, position_key(ue.pos));
  return s;
}

double OraclePredictor::predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                                std::optional<int> serving) const {
  return oracle::ergodic_se(sc, ue, serving, scheme_, spec_for(ue));
}

std::vector<double> OraclePredictor::predict_row(const scene::SceneConfig& sc, const scene::UePos& ue) const {
  const auto lr = channel::sample_links(sc, ue, spec_for(ue));
  std::vector<double> row{oracle::evaluate_links(sc, ue, lr, std::nullopt, scheme_).se.mean};
  for (int i = 0; i < lr.n_airs(); ++i) row.push_back(oracle::evaluate_links(sc, ue, lr, i, scheme_).se.mean);
  return row;
}

double TablePredictor::predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                               std::optional<int> serving) const {
  if (!store_) throw ValidationError("table predictor needs a CKM store");
  if (store_->fingerprint() != fingerprint(sc))
    throw ValidationError("CKM store was built for a different scene", "fingerprint");
  const auto q = store_->query(ue.pos.head<2>());
  std::vector<oracle::QuantileCdf> cdfs;
  std::vector<oracle::Category> cats;
  assemble_inputs(q.entry->records, serving, cdfs, cats);
  // Same stream for every serving option of one entry (common random numbers).
  return compose_se_mc(cdfs, cats, n_samples_, mix_seed(seed_, q.index), compose_params(sc)).mean;
}

NeuralPredictor::NeuralPredictor(neural::WeightStore lps, neural::WeightStore se)
    : lps_(std::move(lps)), se_(std::move(se)) {
  if (lps_.kind != neural::ModelKind::lps) throw ValidationError("LPS weights expected", "weights-lps");
  if (se_.kind != neural::ModelKind::se) throw ValidationError("SE weights expected", "weights-se");
  lps_.validate();
  se_.validate();
}

oracle::QuantileCdf NeuralPredictor::to_cdf(const neural::LpsOutput& out, int group) const {
  oracle::QuantileCdf c;
  for (std::size_t k = 0; k < 16; ++k) {
    const std::size_t t = static_cast<std::size_t>(16 * group) + k;
    const bool valid = out.mask_prob[t] >= 0.5;
    c.mask[k] = valid;
    c.q_db[k] = valid ? out.quantiles[t] : oracle::kSentinelDb;
  }
  return c;
}

std::vector<double> NeuralPredictor::predict_row(const scene::SceneConfig& sc, const scene::UePos& ue) const {
  const int n_airs = static_cast<int>(sc.airs.size());
  if (n_airs == 0) throw ValidationError("the neural predictor needs at least one AIRS");
  std::vector<neural::LpsOutput> served, idle;
  for (int i = 0; i < n_airs; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    served.push_back(neural::lps_forward(oracle::lps_features(sc, ue, ii, 1), lps_));
    idle.push_back(neural::lps_forward(oracle::lps_features(sc, ue, ii, 0), lps_));
  }
  std::vector<double> row;
  for (int s = -1; s < n_airs; ++s) {
    std::vector<oracle::QuantileCdf> cdfs;
    std::vector<oracle::Category> cats;
    // The direct-link CDF does not depend on the AIRS; AIRS 0's idle output is used.
    cdfs.push_back(to_cdf(idle[0], 0));
    cats.push_back(oracle::Category::direct);
    for (int i = 0; i < n_airs; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      cdfs.push_back(to_cdf(i == s ? served[ii] : idle[ii], 1));
      cats.push_back(i == s ? oracle::Category::cascaded : oracle::Category::scattered);
    }
    for (int i = 0; i < n_airs; ++i) {
      cdfs.push_back(to_cdf(idle[static_cast<std::size_t>(i)], 2));
      cats.push_back(oracle::Category::noise);
    }
    row.push_back(neural::se_forward(cdfs, cats, se_));
  }
  return row;
}

double NeuralPredictor::predict(const scene::SceneConfig& sc, const scene::UePos& ue,
                                std::optional<int> serving) const {
  const int n_airs = static_cast<int>(sc.airs.size());
  if (serving && (*serving < 0 || *serving >= n_airs)) throw ValidationError("serving AIRS index out of range");
  return predict_row(sc, ue)[static_cast<std::size_t>(serving ? *serving + 1 : 0)];
}

}  // namespace airslab::ckm
