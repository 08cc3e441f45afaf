#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "airslab/channel.hpp"
#include "airslab/scene.hpp"

namespace airslab::airs {

enum class PhaseScheme { mccm, los, random };

const char* to_string(PhaseScheme s);
PhaseScheme parse_phase_scheme(const std::string& name);

/// Unit-modulus phase vector plus the common amplitude of one AIRS.
struct PhaseConfig {
  Eigen::VectorXcd phases;
  double amp = 1.0;
};

/// Largest common amplitude meeting the output-power budget:
/// F = sqrt(P_A / (w (incident + noise))). Powers in mW.
double amplification_factor(double amp_power_mw, double incident_per_elem_mw, int w,
                            double dyn_noise_band_mw);

/// Amplitude of AIRS `i` from the mean full-band incident power of `lr`.
double amplification_for(const scene::SceneConfig& sc, std::size_t i,
                         const channel::LinkRealizations& lr);

/// Phases from the principal eigenvector of the mean cascade covariance
/// E[a a^H] (averaged over realizations and RBs), projected onto the unit
/// circle. Throws Error("dark panel") when the covariance is zero.
Eigen::VectorXcd mccm_phases(const channel::LinkRealizations& lr, int airs_index);

/// Same, from an explicit sample matrix (rows are cascade vectors a^T).
Eigen::VectorXcd mccm_phases(const Eigen::Ref<const channel::CMatrixRM>& samples);

/// Conjugate of the geometric BS->element->UE path phase, rotated so the
/// first element is 1.
Eigen::VectorXcd los_phases(const scene::SceneConfig& sc, int airs_index, const scene::UePos& ue);

/// i.i.d. uniform phases; deterministic per seed.
Eigen::VectorXcd random_phases(int w, std::uint64_t seed);

/// Mean of |phases^T a|^2 over the sample rows.
double mean_cascade_power(const Eigen::Ref<const channel::CMatrixRM>& samples,
                          const Eigen::VectorXcd& phases);

/// Power-iteration principal eigenvector of a Hermitian PSD matrix.
/// Starts from all-ones; tolerance and cap as given.
Eigen::VectorXcd principal_eigenvector(const Eigen::MatrixXcd& r, double tol = 1e-9,
                                       int max_iter = 500);

}  // namespace airslab::airs
