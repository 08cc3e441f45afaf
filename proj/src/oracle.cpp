#include "airslab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <ostream>

#include "airslab/parallel.hpp"
#include "airslab/rng.hpp"

namespace airslab::oracle {

using json = nlohmann::ordered_json;

double quantile_level(int k) { return (2.0 * k + 1.0) / 32.0; }

QuantileCdf QuantileCdf::from_values(std::span<const double> q_db) {
  if (q_db.size() != kQuantiles) throw ValidationError("a CDF needs 16 quantiles");
  QuantileCdf c;
  for (int k = 0; k < kQuantiles; ++k) {
    const double v = q_db[static_cast<std::size_t>(k)];
    const bool ok = std::isfinite(v) && v >= kValidFloorDb;
    c.q_db[static_cast<std::size_t>(k)] = ok ? v : kSentinelDb;
    c.mask[static_cast<std::size_t>(k)] = ok;
  }
  return c;
}

QuantileCdf quantile_cdf(std::vector<double> samples) {
  const std::size_t n = samples.size();
  if (n < kQuantiles) throw ValidationError("quantile_cdf needs at least 16 samples");
  for (double& v : samples)
    if (std::isnan(v)) v = -std::numeric_limits<double>::infinity();
  std::sort(samples.begin(), samples.end());
  QuantileCdf c;
  for (std::size_t k = 0; k < kQuantiles; ++k) {
    // rank = ceil(n (2k+1) / 32), 1-based
    const std::size_t rank = ((2 * k + 1) * n + 31) / 32;
    const double v = samples[rank - 1];
    const bool ok = v >= kValidFloorDb;
    c.q_db[k] = ok ? v : kSentinelDb;
    c.mask[k] = ok;
  }
  return c;
}

std::array<bool, 48> LpsRecord::mask48() const {
  std::array<bool, 48> m{};
  for (int k = 0; k < kQuantiles; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    m[kk] = cdf_direct.mask[kk];
    m[kk + 16] = cdf_link.mask[kk];
    m[kk + 32] = cdf_noise.mask[kk];
  }
  return m;
}

void validate_se_inputs(const std::vector<Category>& cats) {
  int direct = 0, cascaded = 0, scattered = 0, noise = 0;
  for (Category c : cats) {
    switch (c) {
      case Category::direct: ++direct; break;
      case Category::cascaded: ++cascaded; break;
      case Category::scattered: ++scattered; break;
      case Category::noise: ++noise; break;
      default: throw ValidationError("unknown CDF category");
    }
  }
  if (direct != 1) throw ValidationError("exactly one direct-link CDF is required");
  if (cascaded > 1) throw ValidationError("at most one cascaded CDF is allowed");
  if (noise != cascaded + scattered)
    throw ValidationError("one dynamic-noise CDF per AIRS is required");
}

std::array<double, kLpsFeatures> lps_features(const scene::SceneConfig& sc, const scene::UePos& ue,
                                              std::size_t i, int role_flag) {
  const auto& a = sc.airs.at(i);
  return {ue.pos.x(),
          ue.pos.y(),
          sc.bs_power_dbm,
          a.pos.x(),
          a.pos.y(),
          a.pos.z(),
          a.elem_gain_dbi,
          a.rot.x(),
          a.rot.y(),
          a.rot.z(),
          static_cast<double>(a.grid_y),
          static_cast<double>(a.grid_z),
          a.amp_power_dbm,
          lin_to_db(sc.sigma_v_sq_mw(i)),
          static_cast<double>(role_flag)};
}

double snr_sample(cplx direct, cplx cascade_serving, std::span<const cplx> scattered,
                  std::span<const double> noise_norms, double p_rb, double sigma_v2,
                  double sigma_02) {
  cplx total = direct + cascade_serving;
  for (cplx s : scattered) total += s;
  double den = sigma_02;
  for (double n : noise_norms) den += n * sigma_v2;
  return p_rb * std::norm(total) / den;
}

LinkEvaluation evaluate_links(const scene::SceneConfig& sc, const scene::UePos& ue,
                              const channel::LinkRealizations& lr, std::optional<int> serving,
                              airs::PhaseScheme scheme) {
  const int n_airs = lr.n_airs();
  if (serving && (*serving < 0 || *serving >= n_airs))
    throw ValidationError("serving AIRS index out of range");
  const int S = lr.n_rb;
  const Eigen::Index N = lr.n_samples();

  LinkEvaluation ev;
  ev.direct = lr.direct;
  for (int i = 0; i < n_airs; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const double F = airs::amplification_for(sc, ii, lr);
    ev.amp.push_back(F);
    const auto& a = lr.cascade[ii];
    Eigen::VectorXcd sig(N);
    if (serving && *serving == i && scheme == airs::PhaseScheme::mccm) {
      // Statistical CSI: one configuration per large-scale state, fitted to
      // that state's small-scale samples.
      const Eigen::Index block = lr.n_small > 0 ? static_cast<Eigen::Index>(lr.n_small) * S : N;
      for (Eigen::Index r0 = 0; r0 < N; r0 += block) {
        const Eigen::Index len = std::min(block, N - r0);
        const auto rows = a.middleRows(r0, len);
        const Eigen::VectorXcd phi = rows.cwiseAbs2().maxCoeff() == 0.0
                                         ? Eigen::VectorXcd::Ones(a.cols())  // dark panel
                                         : airs::mccm_phases(rows);
        sig.segment(r0, len) = F * (rows * phi);
      }
    } else if (serving && *serving == i) {
      const Eigen::VectorXcd phi =
          scheme == airs::PhaseScheme::los
              ? airs::los_phases(sc, i, ue)
              : airs::random_phases(static_cast<int>(a.cols()), mix_seed(lr.seed, 4, ii));
      sig = F * (a * phi);
    } else {
      for (int r = 0; r < lr.n_real; ++r) {
        const Eigen::VectorXcd phi = airs::random_phases(
            static_cast<int>(a.cols()), mix_seed(lr.seed, 3, ii, static_cast<std::uint64_t>(r)));
        sig.segment(static_cast<Eigen::Index>(r) * S, S) =
            F * (a.middleRows(static_cast<Eigen::Index>(r) * S, S) * phi);
      }
    }
    ev.airs_signal.push_back(std::move(sig));
    ev.airs_noise.emplace_back(F * F * lr.airs_ue_norm_sq[ii]);
  }

  const double p = sc.p_rb_mw();
  const double s0 = sc.sigma0_sq_mw();
  std::vector<double> sv(static_cast<std::size_t>(n_airs));
  for (int i = 0; i < n_airs; ++i) sv[static_cast<std::size_t>(i)] = sc.sigma_v_sq_mw(static_cast<std::size_t>(i));

  double max_snr = 0.0;
  std::vector<double> per_real(static_cast<std::size_t>(lr.n_real));
  for (int r = 0; r < lr.n_real; ++r) {
    double acc = 0.0;
    for (int s = 0; s < S; ++s) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * S + s;
      cplx total = ev.direct(row);
      double den = s0;
      for (int i = 0; i < n_airs; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        total += ev.airs_signal[ii](row);
        den += ev.airs_noise[ii](row) * sv[ii];
      }
      const double g = p * std::norm(total) / den;
      max_snr = std::max(max_snr, g);
      acc += std::log2(1.0 + g);
    }
    per_real[static_cast<std::size_t>(r)] = acc / S;
  }
  ev.se.n_real = lr.n_real;
  ev.se.max_snr = max_snr;
  // Realizations sharing a large-scale draw are correlated, so the standard
  // error is taken over large-scale group means when there are several groups.
  const int group = lr.n_small > 0 && lr.n_real % lr.n_small == 0 && lr.n_real / lr.n_small >= 2
                        ? lr.n_small
                        : 1;
  const int n_groups = lr.n_real / group;
  double sum = 0.0, sum_sq = 0.0;
  for (int gi = 0; gi < n_groups; ++gi) {
    double m = 0.0;
    for (int j = 0; j < group; ++j) m += per_real[static_cast<std::size_t>(gi * group + j)];
    m /= group;
    sum += m;
    sum_sq += m * m;
  }
  const double n = n_groups;
  ev.se.mean = sum / n;
  if (n_groups > 1) {
    const double var = std::max(0.0, (sum_sq - n * ev.se.mean * ev.se.mean) / (n - 1.0));
    ev.se.std_err = std::sqrt(var / n);
  }
  return ev;
}

SeEstimate ergodic_se_estimate(const scene::SceneConfig& sc, const scene::UePos& ue,
                               std::optional<int> serving, airs::PhaseScheme scheme,
                               const channel::FadingSpec& spec) {
  const auto lr = channel::sample_links(sc, ue, spec);
  return evaluate_links(sc, ue, lr, serving, scheme).se;
}

double ergodic_se(const scene::SceneConfig& sc, const scene::UePos& ue, std::optional<int> serving,
                  airs::PhaseScheme scheme, const channel::FadingSpec& spec) {
  return ergodic_se_estimate(sc, ue, serving, scheme, spec).mean;
}

scene::UePos UeSampler::draw(std::uint64_t seed) const {
  Rng rng(seed);
  const double r = std::sqrt(r_min * r_min + rng.uniform() * (r_max * r_max - r_min * r_min));
  const double a = 2.0 * kPi * rng.uniform();
  return {{r * std::cos(a), r * std::sin(a), height}};
}

namespace {

template <class Vec>
std::vector<double> power_db(const Vec& v) {
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double p = std::norm(v(i));
    out[static_cast<std::size_t>(i)] = p > 0.0 ? 10.0 * std::log10(p) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

std::vector<double> real_db(const Eigen::VectorXd& v) {
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out[static_cast<std::size_t>(i)] = v(i) > 0.0 ? 10.0 * std::log10(v(i)) : -std::numeric_limits<double>::infinity();
  return out;
}

channel::FadingSpec record_spec(const channel::FadingSpec& spec, std::size_t k) {
  channel::FadingSpec s = spec;
  s.seed = mix_seed(spec.seed, 11, k);
  return s;
}

json cdf_json(const QuantileCdf& c) {
  json a = json::array();
  for (double v : c.q_db) a.push_back(v);
  return a;
}

QuantileCdf cdf_from_json(const json& a) {
  if (!a.is_array() || a.size() != kQuantiles) throw ValidationError("a CDF needs 16 quantiles");
  std::array<double, kQuantiles> v{};
  for (std::size_t k = 0; k < kQuantiles; ++k) v[k] = a[k].get<double>();
  return QuantileCdf::from_values(v);
}

}  // namespace

std::vector<LpsRecord> lps_records_for(const scene::SceneConfig& sc, const scene::UePos& ue,
                                       const channel::FadingSpec& spec) {
  const auto lr = channel::sample_links(sc, ue, spec);
  const auto none = evaluate_links(sc, ue, lr, std::nullopt, airs::PhaseScheme::mccm);
  const QuantileCdf direct = quantile_cdf(power_db(none.direct));
  std::vector<LpsRecord> out;
  for (int i = 0; i < lr.n_airs(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const auto served = evaluate_links(sc, ue, lr, i, airs::PhaseScheme::mccm);
    const QuantileCdf noise = quantile_cdf(real_db(none.airs_noise[ii]));
    for (int b : {1, 0}) {
      LpsRecord rec;
      rec.features = lps_features(sc, ue, ii, b);
      rec.cdf_direct = direct;
      rec.cdf_link = quantile_cdf(power_db(b == 1 ? served.airs_signal[ii] : none.airs_signal[ii]));
      rec.cdf_noise = noise;
      out.push_back(rec);
    }
  }
  return out;
}

SeRecord se_record_for(const scene::SceneConfig& sc, const scene::UePos& ue,
                       std::optional<int> serving, const channel::FadingSpec& spec) {
  const auto lr = channel::sample_links(sc, ue, spec);
  const auto ev = evaluate_links(sc, ue, lr, serving, airs::PhaseScheme::mccm);
  SeRecord rec;
  rec.cdfs.push_back(quantile_cdf(power_db(ev.direct)));
  rec.cats.push_back(Category::direct);
  for (int i = 0; i < lr.n_airs(); ++i) {
    rec.cdfs.push_back(quantile_cdf(power_db(ev.airs_signal[static_cast<std::size_t>(i)])));
    rec.cats.push_back(serving && *serving == i ? Category::cascaded : Category::scattered);
  }
  for (int i = 0; i < lr.n_airs(); ++i) {
    rec.cdfs.push_back(quantile_cdf(real_db(ev.airs_noise[static_cast<std::size_t>(i)])));
    rec.cats.push_back(Category::noise);
  }
  rec.se = ev.se.mean;
  return rec;
}

std::size_t gen_lps_dataset(const scene::SceneConfig& sc, const UeSampler& sampler,
                            std::size_t n_records, const channel::FadingSpec& spec,
                            std::ostream& out) {
  if (n_records == 0) return 0;
  if (sc.airs.empty()) throw ValidationError("LPS datasets need at least one AIRS");
  const std::size_t per_ue = 2 * sc.airs.size();
  const std::size_t n_ues = (n_records + per_ue - 1) / per_ue;
  const auto lines = parallel_map(n_ues, [&](std::size_t k) {
    const auto ue = sampler.draw(mix_seed(spec.seed, 10, k));
    std::vector<std::string> ls;
    for (const auto& r : lps_records_for(sc, ue, record_spec(spec, k))) ls.push_back(to_jsonl(r));
    return ls;
  });
  std::size_t written = 0;
  for (const auto& ls : lines) {
    for (const auto& l : ls) {
      if (written == n_records) break;
      out << l << '\n';
      ++written;
    }
  }
  if (!out) throw IoError("dataset sink write failed");
  return written;
}

std::size_t gen_se_dataset(const scene::SceneConfig& sc, const UeSampler& sampler,
                           std::size_t n_records, const channel::FadingSpec& spec,
                           std::ostream& out) {
  const auto n_airs = sc.airs.size();
  const auto lines = parallel_map(n_records, [&](std::size_t k) {
    const auto ue = sampler.draw(mix_seed(spec.seed, 10, k));
    Rng pick(mix_seed(spec.seed, 12, k));
    const auto choice = pick.below(n_airs + 1);
    const std::optional<int> serving =
        choice == 0 ? std::nullopt : std::optional<int>(static_cast<int>(choice - 1));
    return to_jsonl(se_record_for(sc, ue, serving, record_spec(spec, k)));
  });
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("dataset sink write failed");
  return lines.size();
}

std::string to_jsonl(const LpsRecord& r) {
  json j;
  j["features"] = r.features;
  j["cdf_direct"] = cdf_json(r.cdf_direct);
  j["cdf_link"] = cdf_json(r.cdf_link);
  j["cdf_noise"] = cdf_json(r.cdf_noise);
  j["mask"] = r.mask48();
  return j.dump();
}

std::string to_jsonl(const SeRecord& r) {
  json j;
  json cdfs = json::array();
  for (const auto& c : r.cdfs) cdfs.push_back(cdf_json(c));
  json cats = json::array();
  for (Category c : r.cats) cats.push_back(static_cast<int>(c));
  j["cdfs"] = std::move(cdfs);
  j["cats"] = std::move(cats);
  j["se"] = r.se;
  return j.dump();
}

LpsRecord lps_from_jsonl(const std::string& line) {
  try {
    const json j = json::parse(line);
    LpsRecord r;
    const auto& f = j.at("features");
    if (f.size() != kLpsFeatures) throw ValidationError("features must have 15 entries", "features");
    for (std::size_t i = 0; i < kLpsFeatures; ++i) r.features[i] = f[i].get<double>();
    r.cdf_direct = cdf_from_json(j.at("cdf_direct"));
    r.cdf_link = cdf_from_json(j.at("cdf_link"));
    r.cdf_noise = cdf_from_json(j.at("cdf_noise"));
    if (j.contains("mask") && j["mask"].get<std::array<bool, 48>>() != r.mask48())
      throw ValidationError("mask disagrees with the quantile sentinels", "mask");
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed LPS record: ") + e.what());
  }
}

SeRecord se_from_jsonl(const std::string& line) {
  try {
    const json j = json::parse(line);
    SeRecord r;
    for (const auto& c : j.at("cdfs")) r.cdfs.push_back(cdf_from_json(c));
    for (const auto& c : j.at("cats")) {
      const int v = c.get<int>();
      if (v < 1 || v > 4) throw ValidationError("category must be in 1..4", "cats");
      r.cats.push_back(static_cast<Category>(v));
    }
    if (r.cats.size() != r.cdfs.size()) throw ValidationError("cdfs/cats length mismatch");
    r.se = j.at("se").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed SE record: ") + e.what());
  }
}

}  // namespace airslab::oracle
