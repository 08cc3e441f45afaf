#include "airslab/airs.hpp"

#include <cmath>

#include "airslab/rng.hpp"

namespace airslab::airs {

const char* to_string(PhaseScheme s) {
  switch (s) {
    case PhaseScheme::mccm: return "mccm";
    case PhaseScheme::los: return "los";
    case PhaseScheme::random: return "random";
  }
  return "?";
}

PhaseScheme parse_phase_scheme(const std::string& name) {
  if (name == "mccm") return PhaseScheme::mccm;
  if (name == "los") return PhaseScheme::los;
  if (name == "random") return PhaseScheme::random;
  throw ValidationError("unknown phase scheme '" + name + "'");
}

double amplification_factor(double amp_power_mw, double incident_per_elem_mw, int w,
                            double dyn_noise_band_mw) {
  if (amp_power_mw < 0.0 || incident_per_elem_mw < 0.0 || dyn_noise_band_mw < 0.0 || w < 1)
    throw ValidationError("amplification inputs must be non-negative with w >= 1");
  const double denom = w * (incident_per_elem_mw + dyn_noise_band_mw);
  if (!(denom > 0.0)) throw Error("no incident power");
  return std::sqrt(amp_power_mw / denom);
}

double amplification_for(const scene::SceneConfig& sc, std::size_t i,
                         const channel::LinkRealizations& lr) {
  const auto& a = sc.airs.at(i);
  const double n = static_cast<double>(lr.n_samples());
  const double incident = lr.incident.at(i).sum() / n / a.elements();
  return amplification_factor(dbm_to_mw(a.amp_power_dbm), dbm_to_mw(sc.bs_power_dbm) * incident,
                              a.elements(), dbm_to_mw(a.dyn_noise_psd_dbm_hz) * sc.bandwidth);
}

Eigen::VectorXcd principal_eigenvector(const Eigen::MatrixXcd& r, double tol, int max_iter) {
  const Eigen::Index w = r.rows();
  Eigen::VectorXcd v = Eigen::VectorXcd::Ones(w) / std::sqrt(static_cast<double>(w));
  Eigen::VectorXcd next = r * v;
  if (next.norm() == 0.0) {
    // Start vector orthogonal to the range; restart on the strongest axis.
    Eigen::Index j = 0;
    r.diagonal().real().maxCoeff(&j);
    v.setZero();
    v(j) = 1.0;
    next = r * v;
  }
  for (int it = 0; it < max_iter; ++it) {
    const double nn = next.norm();
    if (nn == 0.0) break;
    next /= nn;
    const cplx overlap = v.dot(next);  // v^H next
    const cplx align = std::abs(overlap) > 0.0 ? overlap / std::abs(overlap) : cplx(1.0);
    const double diff = (next - v * align).norm();
    v = next;
    if (diff < tol) break;
    next = r * v;
  }
  return v;
}

Eigen::VectorXcd mccm_phases(const Eigen::Ref<const channel::CMatrixRM>& a) {
  const Eigen::Index w = a.cols();
  if (w == 1) return Eigen::VectorXcd::Ones(1);
  // R = (1/N) sum_n a_n a_n^H with a_n = row n transposed.
  const Eigen::MatrixXcd r = (a.transpose() * a.conjugate()) / static_cast<double>(a.rows());
  if (r.cwiseAbs().maxCoeff() == 0.0) throw Error("dark panel");
  const Eigen::VectorXcd u = principal_eigenvector(r);
  Eigen::VectorXcd phi(w);
  for (Eigen::Index i = 0; i < w; ++i) {
    const double m = std::abs(u(i));
    phi(i) = m < 1e-12 ? cplx(1.0) : std::conj(u(i)) / m;
  }
  return phi;
}

Eigen::VectorXcd mccm_phases(const channel::LinkRealizations& lr, int airs_index) {
  if (lr.n_samples() < 1) throw ValidationError("no realizations");
  return mccm_phases(lr.cascade.at(static_cast<std::size_t>(airs_index)));
}

Eigen::VectorXcd los_phases(const scene::SceneConfig& sc, int airs_index, const scene::UePos& ue) {
  const auto& panel = sc.airs.at(static_cast<std::size_t>(airs_index));
  const double k = 2.0 * kPi / sc.wavelength();
  const auto elems = scene::element_positions(panel, sc.wavelength());
  const scene::Vec3 bs = sc.bs_position();
  Eigen::VectorXcd phi(static_cast<Eigen::Index>(elems.size()));
  for (std::size_t w = 0; w < elems.size(); ++w) {
    const double path = (bs - elems[w]).norm() + (ue.pos - elems[w]).norm();
    phi(static_cast<Eigen::Index>(w)) = std::polar(1.0, k * path);
  }
  const cplx ref = std::conj(phi(0));
  for (Eigen::Index w = 0; w < phi.size(); ++w) {
    phi(w) *= ref;
    phi(w) /= std::abs(phi(w));
  }
  return phi;
}

Eigen::VectorXcd random_phases(int w, std::uint64_t seed) {
  if (w < 1) throw ValidationError("w must be >= 1");
  Rng rng(seed);
  Eigen::VectorXcd phi(w);
  for (int i = 0; i < w; ++i) phi(i) = rng.unit_phase();
  return phi;
}

double mean_cascade_power(const Eigen::Ref<const channel::CMatrixRM>& a,
                          const Eigen::VectorXcd& phases) {
  return (a * phases).squaredNorm() / static_cast<double>(a.rows());
}

}  // namespace airslab::airs
