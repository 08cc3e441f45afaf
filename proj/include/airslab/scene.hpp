#pragma once

#include <Eigen/Core>
#include <vector>

#include "airslab/common.hpp"

namespace airslab::scene {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// One active reflecting surface. Angles are radians, powers dBm.
struct AirsConfig {
  Vec3 pos{0.0, 0.0, 10.0};
  /// Counterclockwise rotations about X, Y, Z applied to the default Y-O-Z panel.
  Vec3 rot{0.0, 0.0, 0.0};
  int grid_y = 4;
  int grid_z = 4;
  double elem_gain_dbi = 6.0;
  double erp_exponent = 1.0;
  double amp_power_dbm = 10.0;
  double dyn_noise_psd_dbm_hz = -160.0;
  int role_flag = 0;  // 1 = cascaded (serving), 0 = scattered

  int elements() const { return grid_y * grid_z; }
};

struct UePos {
  Vec3 pos{0.0, 0.0, 1.5};
};

struct SceneConfig {
  double bs_height = 25.0;
  double carrier_freq = 3.5e9;
  double bandwidth = 20e6;
  int n_rb = 48;
  int n_slots = 4;
  double frame_time = 0.01;
  double bs_power_dbm = 10.0;
  double noise_psd_dbm_hz = -174.0;
  std::vector<AirsConfig> airs;
  std::vector<UePos> ues;

  Vec3 bs_position() const { return {0.0, 0.0, bs_height}; }
  double wavelength() const { return kSpeedOfLight / carrier_freq; }
  /// Equal per-RB transmit power, mW.
  double p_rb_mw() const { return dbm_to_mw(bs_power_dbm) / n_rb; }
  /// Thermal noise power per RB, mW.
  double sigma0_sq_mw() const { return dbm_to_mw(noise_psd_dbm_hz) * bandwidth / n_rb; }
  /// Dynamic (amplifier) noise power per RB for AIRS `i`, mW.
  double sigma_v_sq_mw(std::size_t i) const {
    return dbm_to_mw(airs.at(i).dyn_noise_psd_dbm_hz) * bandwidth / n_rb;
  }
};

struct PanelAngles {
  double theta;  // from the local +Z axis, [0, pi]
  double phi;    // azimuth from the broadside +X axis, (-pi, pi]
};

/// R = Rz(wz) Ry(wy) Rx(wx); maps panel-local vectors to the global frame.
Mat3 panel_rotation(const AirsConfig& panel);

Vec3 to_local(const AirsConfig& panel, const Vec3& global_dir);
Vec3 to_global(const AirsConfig& panel, const Vec3& local_dir);

/// Direction from the panel center to `point`, in the panel's local frame.
/// Throws ValidationError("degenerate direction") when point == center.
PanelAngles to_panel_frame(const AirsConfig& panel, const Vec3& point);

/// Element radiation pattern g_max (sin(theta) cos(phi))^q, zero behind the panel.
double erp_gain(double g_max, double q, PanelAngles angles);

/// Global positions of the panel elements on a half-wavelength grid centered
/// at the panel position, row-major over (y, z).
std::vector<Vec3> element_positions(const AirsConfig& panel, double wavelength);

/// Throws ValidationError naming the first violated invariant.
void validate(const SceneConfig& scene);
void validate(const AirsConfig& airs, const std::string& path);

}  // namespace airslab::scene
