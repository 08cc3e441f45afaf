#include "airslab/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <string>

namespace airslab::scene {

Mat3 panel_rotation(const AirsConfig& panel) {
  using Eigen::AngleAxisd;
  const Mat3 rz = AngleAxisd(panel.rot.z(), Vec3::UnitZ()).toRotationMatrix();
  const Mat3 ry = AngleAxisd(panel.rot.y(), Vec3::UnitY()).toRotationMatrix();
  const Mat3 rx = AngleAxisd(panel.rot.x(), Vec3::UnitX()).toRotationMatrix();
  return rz * ry * rx;
}

Vec3 to_local(const AirsConfig& panel, const Vec3& global_dir) {
  return panel_rotation(panel).transpose() * global_dir;
}

Vec3 to_global(const AirsConfig& panel, const Vec3& local_dir) {
  return panel_rotation(panel) * local_dir;
}

PanelAngles to_panel_frame(const AirsConfig& panel, const Vec3& point) {
  const Vec3 d = point - panel.pos;
  const double n = d.norm();
  if (!(n > 0.0)) throw ValidationError("degenerate direction");
  const Vec3 l = to_local(panel, d / n);
  const double theta = std::acos(std::clamp(l.z(), -1.0, 1.0));
  const double phi = std::atan2(l.y(), l.x());
  return {theta, phi};
}

double erp_gain(double g_max, double q, PanelAngles a) {
  constexpr double kTol = 1e-12;
  if (a.theta < -kTol || a.theta > kPi + kTol) return 0.0;
  if (a.phi < -kPi / 2 - kTol || a.phi > kPi / 2 + kTol) return 0.0;
  const double base = std::sin(a.theta) * std::cos(a.phi);
  if (base <= 0.0) return q == 0.0 ? g_max : 0.0;
  return g_max * std::pow(base, q);
}

std::vector<Vec3> element_positions(const AirsConfig& panel, double wavelength) {
  const Mat3 r = panel_rotation(panel);
  const double pitch = wavelength / 2.0;
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(panel.elements()));
  for (int iy = 0; iy < panel.grid_y; ++iy) {
    for (int iz = 0; iz < panel.grid_z; ++iz) {
      const Vec3 local(0.0, (iy - (panel.grid_y - 1) / 2.0) * pitch,
                       (iz - (panel.grid_z - 1) / 2.0) * pitch);
      out.push_back(panel.pos + r * local);
    }
  }
  return out;
}

namespace {

bool finite3(const Vec3& v) { return v.allFinite(); }

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ValidationError(msg, path);
}

}  // namespace

void validate(const AirsConfig& a, const std::string& path) {
  require(finite3(a.pos), path + ".pos", "position must be finite");
  require(finite3(a.rot), path + ".rot", "rotation must be finite");
  require(a.grid_y >= 1 && a.grid_z >= 1, path + ".grid", "W_Y and W_Z must be >= 1");
  require(std::isfinite(a.erp_exponent) && a.erp_exponent >= 0.0, path + ".erp_exponent",
          "erp_exponent must be >= 0");
  require(std::isfinite(a.elem_gain_dbi), path + ".elem_gain_dbi", "must be finite");
  require(std::isfinite(a.amp_power_dbm), path + ".amp_power_dbm", "must be finite");
  require(std::isfinite(a.dyn_noise_psd_dbm_hz), path + ".dyn_noise_psd_dbm_hz",
          "must be finite");
  require(a.role_flag == 0 || a.role_flag == 1, path + ".role_flag", "must be 0 or 1");
}

void validate(const SceneConfig& s) {
  require(std::isfinite(s.bs_height), "radio.bs_height_m", "must be finite");
  require(std::isfinite(s.carrier_freq) && s.carrier_freq > 0.0, "radio.carrier_freq_hz",
          "carrier_freq must be > 0");
  require(std::isfinite(s.bandwidth) && s.bandwidth > 0.0, "radio.bandwidth_hz",
          "bandwidth must be > 0");
  require(s.n_rb >= 1, "radio.n_rb", "n_rb must be >= 1");
  require(s.n_slots >= 1, "radio.n_slots", "n_slots must be >= 1");
  require(std::isfinite(s.frame_time) && s.frame_time > 0.0, "radio.frame_time_s",
          "frame_time must be > 0");
  require(std::isfinite(s.bs_power_dbm), "radio.bs_power_dbm", "must be finite");
  require(std::isfinite(s.noise_psd_dbm_hz), "radio.noise_psd_dbm_hz", "must be finite");
  for (std::size_t i = 0; i < s.airs.size(); ++i) {
    validate(s.airs[i], "airs[" + std::to_string(i) + "]");
  }
  for (std::size_t u = 0; u < s.ues.size(); ++u) {
    const std::string p = "ues[" + std::to_string(u) + "]";
    require(finite3(s.ues[u].pos), p, "position must be finite");
    require(s.ues[u].pos.z() >= 0.0, p, "UE height must be >= 0");
  }
}

}  // namespace airslab::scene
