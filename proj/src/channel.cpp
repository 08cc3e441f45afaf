#include "airslab/channel.hpp"

#include <cmath>

#include "airslab/rng.hpp"

namespace airslab::channel {

using scene::Vec3;

void validate(const FadingSpec& s) {
  if (s.n_large < 1) throw ValidationError("n_large must be >= 1", "fading.n_large");
  if (s.n_small < 1) throw ValidationError("n_small must be >= 1", "fading.n_small");
  if (s.n_taps < 1) throw ValidationError("n_taps must be >= 1", "fading.n_taps");
  if (!(s.rms_delay_spread >= 0.0))
    throw ValidationError("must be >= 0", "fading.rms_delay_spread_s");
  if (std::isnan(s.rician_k_los_db)) throw ValidationError("must be a number", "fading.rician_k_db");
  if (!(s.shadow_sigma_los_db >= 0.0) || !(s.shadow_sigma_nlos_db >= 0.0))
    throw ValidationError("shadowing sigma must be >= 0", "fading.shadow_sigma_db");
  if (!(s.angular_spread_deg >= 0.0))
    throw ValidationError("must be >= 0", "fading.angular_spread_deg");
}

double pathloss_los_db(double d, double f_hz) {
  return 28.0 + 22.0 * std::log10(std::max(d, 1.0)) + 20.0 * std::log10(f_hz / 1e9);
}

double pathloss_nlos_db(double d, double f_hz) {
  return 32.4 + 30.0 * std::log10(std::max(d, 1.0)) + 20.0 * std::log10(f_hz / 1e9);
}

DelayProfile delay_profile(const FadingSpec& spec) {
  DelayProfile p;
  const double step = spec.rms_delay_spread / 2.0;
  double total = 0.0;
  for (int n = 0; n < spec.n_taps; ++n) {
    const double w = std::exp(-0.5 * n);
    p.power.push_back(w);
    p.delay.push_back(n * step);
    total += w;
  }
  for (double& w : p.power) w /= total;
  return p;
}

std::vector<double> rb_offsets(const scene::SceneConfig& scene) {
  std::vector<double> f(static_cast<std::size_t>(scene.n_rb));
  const double df = scene.bandwidth / scene.n_rb;
  for (int s = 0; s < scene.n_rb; ++s) f[static_cast<std::size_t>(s)] = (s + 0.5) * df - scene.bandwidth / 2.0;
  return f;
}

namespace {

constexpr double kDeg = kPi / 180.0;

/// Unit vector with azimuth/elevation perturbed by N(0, sigma) each.
Vec3 perturb(const Vec3& dir, double sigma, Rng& rng) {
  if (sigma == 0.0) return dir;
  const double az = std::atan2(dir.y(), dir.x()) + sigma * rng.normal();
  const double el = std::asin(std::clamp(dir.z(), -1.0, 1.0)) + sigma * rng.normal();
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

/// Per-element steering towards a virtual scatterer at `center + dist * dir`,
/// including the absolute path phase.
void steering(const std::vector<Vec3>& elems, const Vec3& center, const Vec3& dir, double dist,
              double k, Eigen::MatrixXcd& out, int row) {
  const Vec3 p = center + dist * dir;
  for (std::size_t w = 0; w < elems.size(); ++w) {
    const double d = (elems[w] - p).norm();
    out(row, static_cast<Eigen::Index>(w)) = std::polar(1.0, -k * d);
  }
}

struct PanelGeometry {
  std::vector<Vec3> elems;
  Eigen::VectorXd sqrt_gain_in;   // ERP towards the BS, per element
  Eigen::VectorXd sqrt_gain_out;  // ERP towards the UE, per element
  Eigen::RowVectorXcd los_phase;  // exp(-j k d_{BS,w})
  double d_bs = 0.0;
  double d_ue = 0.0;
  Vec3 dir_bs;
  Vec3 dir_ue;
};

PanelGeometry panel_geometry(const scene::SceneConfig& sc, const scene::AirsConfig& panel,
                             const Vec3& ue) {
  PanelGeometry g;
  const double lambda = sc.wavelength();
  const double k = 2.0 * kPi / lambda;
  const double g_max = db_to_lin(panel.elem_gain_dbi);
  const Vec3 bs = sc.bs_position();
  g.elems = scene::element_positions(panel, lambda);
  const auto w = static_cast<Eigen::Index>(g.elems.size());
  g.sqrt_gain_in.resize(w);
  g.sqrt_gain_out.resize(w);
  g.los_phase.resize(w);
  for (Eigen::Index i = 0; i < w; ++i) {
    scene::AirsConfig at = panel;
    at.pos = g.elems[static_cast<std::size_t>(i)];
    g.sqrt_gain_in(i) = std::sqrt(scene::erp_gain(g_max, panel.erp_exponent, scene::to_panel_frame(at, bs)));
    g.sqrt_gain_out(i) = std::sqrt(scene::erp_gain(g_max, panel.erp_exponent, scene::to_panel_frame(at, ue)));
    g.los_phase(i) = std::polar(1.0, -k * (bs - at.pos).norm());
  }
  g.d_bs = (bs - panel.pos).norm();
  g.d_ue = (ue - panel.pos).norm();
  g.dir_bs = (bs - panel.pos) / g.d_bs;
  g.dir_ue = (ue - panel.pos) / g.d_ue;
  return g;
}

}  // namespace

LinkRealizations sample_links(const scene::SceneConfig& sc, const scene::UePos& ue,
                              const FadingSpec& spec) {
  scene::validate(sc);
  validate(spec);
  const Vec3 bs = sc.bs_position();
  if ((ue.pos - bs).norm() == 0.0) throw ValidationError("UE coincides with the BS");
  for (std::size_t i = 0; i < sc.airs.size(); ++i) {
    if ((ue.pos - sc.airs[i].pos).norm() == 0.0)
      throw ValidationError("UE coincides with AIRS " + std::to_string(i));
    if ((bs - sc.airs[i].pos).norm() == 0.0)
      throw ValidationError("AIRS " + std::to_string(i) + " coincides with the BS");
  }

  const int n_airs = static_cast<int>(sc.airs.size());
  const int S = sc.n_rb;
  const int taps = spec.deterministic ? 1 : spec.n_taps;
  const double k = 2.0 * kPi / sc.wavelength();
  const double fghz = sc.carrier_freq;
  const double sigma_ang = spec.deterministic ? 0.0 : spec.angular_spread_deg * kDeg;

  LinkRealizations lr;
  lr.n_real = spec.n_realizations();
  lr.n_rb = S;
  lr.n_small = spec.n_small;
  lr.seed = spec.seed;
  const Eigen::Index N = static_cast<Eigen::Index>(lr.n_real) * S;
  lr.direct.resize(N);

  std::vector<PanelGeometry> geo;
  for (const auto& a : sc.airs) {
    geo.push_back(panel_geometry(sc, a, ue.pos));
    lr.cascade.emplace_back(N, a.elements());
    lr.incident.emplace_back(N);
    lr.airs_ue_norm_sq.emplace_back(N);
  }

  // Tap-to-RB rotation matrix: rot(s, n) = sqrt(p_n) exp(-j 2 pi f_s tau_n).
  FadingSpec tap_spec = spec;
  tap_spec.n_taps = taps;
  const DelayProfile pdp = delay_profile(tap_spec);
  const std::vector<double> fs = rb_offsets(sc);
  Eigen::MatrixXcd rot(S, taps);
  for (int s = 0; s < S; ++s)
    for (int n = 0; n < taps; ++n)
      rot(s, n) = std::sqrt(pdp.power[static_cast<std::size_t>(n)]) *
                  std::polar(1.0, -2.0 * kPi * fs[static_cast<std::size_t>(s)] * pdp.delay[static_cast<std::size_t>(n)]);

  double k_lin = db_to_lin(spec.rician_k_los_db);
  if (spec.deterministic) k_lin = std::numeric_limits<double>::infinity();
  const double w_los = std::isinf(k_lin) ? 1.0 : std::sqrt(k_lin / (k_lin + 1.0));
  const double w_nlos = std::isinf(k_lin) ? 0.0 : std::sqrt(1.0 / (k_lin + 1.0));

  const double d_bu = (ue.pos - bs).norm();

  for (int l = 0; l < spec.n_large; ++l) {
    Rng lrng(mix_seed(spec.seed, 1, static_cast<std::uint64_t>(l)));
    auto shadow = [&](double sigma) {
      return spec.deterministic ? 1.0 : db_to_lin(sigma * lrng.normal());
    };
    LargeScale ls;
    ls.direct_gain = db_to_lin(-pathloss_nlos_db(d_bu, fghz)) * shadow(spec.shadow_sigma_nlos_db);

    // Per AIRS: tap steering matrices (taps x W) on both hops.
    std::vector<Eigen::MatrixXcd> steer_bs(static_cast<std::size_t>(n_airs));
    std::vector<Eigen::MatrixXcd> steer_ue(static_cast<std::size_t>(n_airs));
    for (int i = 0; i < n_airs; ++i) {
      const auto& g = geo[static_cast<std::size_t>(i)];
      ls.bs_airs_gain.push_back(db_to_lin(-pathloss_los_db(g.d_bs, fghz)) *
                                shadow(spec.shadow_sigma_los_db));
      ls.airs_ue_gain.push_back(db_to_lin(-pathloss_nlos_db(g.d_ue, fghz)) *
                                shadow(spec.shadow_sigma_nlos_db));
      const auto W = static_cast<Eigen::Index>(g.elems.size());
      auto& sb = steer_bs[static_cast<std::size_t>(i)];
      auto& su = steer_ue[static_cast<std::size_t>(i)];
      sb.resize(taps, W);
      su.resize(taps, W);
      for (int n = 0; n < taps; ++n) {
        steering(g.elems, sc.airs[static_cast<std::size_t>(i)].pos, perturb(g.dir_bs, sigma_ang, lrng),
                 g.d_bs, k, sb, n);
        steering(g.elems, sc.airs[static_cast<std::size_t>(i)].pos, perturb(g.dir_ue, sigma_ang, lrng),
                 g.d_ue, k, su, n);
      }
      // Fold element gains into the steering rows.
      sb = sb * g.sqrt_gain_in.asDiagonal();
      su = su * g.sqrt_gain_out.asDiagonal();
    }

    for (int m = 0; m < spec.n_small; ++m) {
      Rng rng(mix_seed(spec.seed, 2, static_cast<std::uint64_t>(l), static_cast<std::uint64_t>(m)));
      const int r = l * spec.n_small + m;
      const Eigen::Index row0 = static_cast<Eigen::Index>(r) * S;
      auto draw_taps = [&]() {
        Eigen::VectorXcd g(taps);
        if (spec.deterministic) {
          g.setZero();
          g(0) = 1.0;
        } else {
          for (int n = 0; n < taps; ++n) g(n) = rng.cnormal();
        }
        return g;
      };
      const Eigen::VectorXcd gd = draw_taps();
      lr.direct.segment(row0, S) = std::sqrt(ls.direct_gain) * (rot * gd);

      for (int i = 0; i < n_airs; ++i) {
        const auto& g = geo[static_cast<std::size_t>(i)];
        const auto ii = static_cast<std::size_t>(i);
        const Eigen::VectorXcd gb = draw_taps();
        const Eigen::VectorXcd gu = draw_taps();
        // BS->AIRS: S x W
        Eigen::MatrixXcd h_bi(S, g.elems.size());
        {
          const Eigen::VectorXcd los_delay = (Eigen::VectorXd::Map(fs.data(), S) *
                                              (-2.0 * kPi * g.d_bs / kSpeedOfLight))
                                                 .unaryExpr([](double a) { return std::polar(1.0, a); });
          const Eigen::RowVectorXcd los_row = g.los_phase.cwiseProduct(g.sqrt_gain_in.transpose().cast<cplx>());
          h_bi = w_los * (los_delay * los_row);
          if (w_nlos > 0.0) h_bi += w_nlos * (rot * gb.asDiagonal() * steer_bs[ii]);
          h_bi *= std::sqrt(ls.bs_airs_gain[ii]);
        }
        const Eigen::MatrixXcd h_iu = std::sqrt(ls.airs_ue_gain[ii]) * (rot * gu.asDiagonal() * steer_ue[ii]);
        lr.cascade[ii].middleRows(row0, S) = h_iu.cwiseProduct(h_bi);
        lr.incident[ii].segment(row0, S) = h_bi.rowwise().squaredNorm();
        lr.airs_ue_norm_sq[ii].segment(row0, S) = h_iu.rowwise().squaredNorm();
      }
    }
    lr.large.push_back(std::move(ls));
  }
  return lr;
}

MeanLinkPowers mean_link_powers(const LinkRealizations& lr) {
  MeanLinkPowers m;
  const auto n = static_cast<double>(lr.direct.size());
  if (n == 0) return m;
  m.direct = lr.direct.squaredNorm() / n;
  for (int i = 0; i < lr.n_airs(); ++i) {
    const auto ii = static_cast<std::size_t>(i);
    m.incident_per_elem.push_back(lr.incident[ii].sum() / n / lr.elements(i));
    m.airs_ue_norm_sq.push_back(lr.airs_ue_norm_sq[ii].sum() / n);
  }
  return m;
}

}  // namespace airslab::channel
