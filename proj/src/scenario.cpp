#include "airslab/scenario.hpp"

#include <fstream>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

namespace airslab::scenario {

namespace {

using json = nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError("expected a number", path);
  return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ValidationError("expected an integer", path);
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ValidationError("integer out of range", path);
  return static_cast<int>(v);
}

scene::Vec3 as_vec3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("expected [x, y, z]", path);
  return {as_number(j[0], index(path, 0)), as_number(j[1], index(path, 1)),
          as_number(j[2], index(path, 2))};
}

/// Typed access to one JSON object; unknown keys are rejected so typos do not
/// silently fall back to defaults.
class Object {
 public:
  Object(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("expected an object", path_.empty() ? "$" : path_);
  }

  const json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string at(const std::string& key) const { return join(path_, key); }

  void number(const std::string& key, double& out) {
    if (const auto* v = find(key)) out = as_number(*v, at(key));
  }
  void integer(const std::string& key, int& out) {
    if (const auto* v = find(key)) out = as_int(*v, at(key));
  }
  void boolean(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) throw ValidationError("expected true or false", at(key));
      out = v->get<bool>();
    }
  }
  void vec3(const std::string& key, scene::Vec3& out) {
    if (const auto* v = find(key)) out = as_vec3(*v, at(key));
  }
  void degrees3(const std::string& key, scene::Vec3& out) {
    if (const auto* v = find(key)) out = as_vec3(*v, at(key)) * (kPi / 180.0);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ValidationError("unknown key", at(k));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void parse_radio(const json& j, scene::SceneConfig& sc) {
  Object o(j, "radio");
  o.number("bs_height_m", sc.bs_height);
  o.number("carrier_freq_hz", sc.carrier_freq);
  o.number("bandwidth_hz", sc.bandwidth);
  o.integer("n_rb", sc.n_rb);
  o.integer("n_slots", sc.n_slots);
  o.number("frame_time_s", sc.frame_time);
  o.number("bs_power_dbm", sc.bs_power_dbm);
  o.number("noise_psd_dbm_hz", sc.noise_psd_dbm_hz);
  o.finish();
}

scene::AirsConfig parse_airs(const json& j, const std::string& path) {
  scene::AirsConfig a;
  Object o(j, path);
  o.vec3("pos_m", a.pos);
  o.degrees3("rot_deg", a.rot);
  if (const auto* g = o.find("grid")) {
    if (!g->is_array() || g->size() != 2) throw ValidationError("expected [W_Y, W_Z]", o.at("grid"));
    a.grid_y = as_int((*g)[0], index(o.at("grid"), 0));
    a.grid_z = as_int((*g)[1], index(o.at("grid"), 1));
  }
  o.number("elem_gain_dbi", a.elem_gain_dbi);
  o.number("erp_exponent", a.erp_exponent);
  o.number("amp_power_dbm", a.amp_power_dbm);
  o.number("dyn_noise_psd_dbm_hz", a.dyn_noise_psd_dbm_hz);
  o.integer("role_flag", a.role_flag);
  o.finish();
  return a;
}

scene::UePos parse_ue(const json& j, const std::string& path) {
  if (j.is_array()) return {as_vec3(j, path)};
  scene::UePos u;
  Object o(j, path);
  if (!o.find("pos_m")) throw ValidationError("missing key", o.at("pos_m"));
  o.vec3("pos_m", u.pos);
  o.finish();
  return u;
}

void parse_sampler(const json& j, oracle::UeSampler& s) {
  Object o(j, "ue_sampler");
  o.number("r_min_m", s.r_min);
  o.number("r_max_m", s.r_max);
  o.number("height_m", s.height);
  o.integer("count", s.count);
  o.finish();
  if (!(s.r_min >= 0.0)) throw ValidationError("must be >= 0", "ue_sampler.r_min_m");
  if (!(s.r_max >= s.r_min) || !std::isfinite(s.r_max))
    throw ValidationError("must be finite and >= r_min_m", "ue_sampler.r_max_m");
  if (!(s.height >= 0.0)) throw ValidationError("must be >= 0", "ue_sampler.height_m");
  if (s.count < 0) throw ValidationError("must be >= 0", "ue_sampler.count");
}

void parse_fading(const json& j, channel::FadingSpec& f) {
  Object o(j, "fading");
  o.integer("n_large", f.n_large);
  o.integer("n_small", f.n_small);
  o.integer("n_taps", f.n_taps);
  o.number("rms_delay_spread_s", f.rms_delay_spread);
  if (const auto* k = o.find("rician_k_db")) {
    if (k->is_string() && k->get<std::string>() == "inf") {
      f.rician_k_los_db = std::numeric_limits<double>::infinity();
    } else {
      f.rician_k_los_db = as_number(*k, o.at("rician_k_db"));
    }
  }
  o.number("shadow_sigma_los_db", f.shadow_sigma_los_db);
  o.number("shadow_sigma_nlos_db", f.shadow_sigma_nlos_db);
  o.number("angular_spread_deg", f.angular_spread_deg);
  o.boolean("deterministic", f.deterministic);
  if (const auto* s = o.find("seed")) {
    if (!s->is_number_unsigned()) throw ValidationError("expected a non-negative integer", o.at("seed"));
    f.seed = s->get<std::uint64_t>();
  }
  o.finish();
  channel::validate(f);
}

}  // namespace

Scenario parse(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what(), "$");
  }
  Scenario s;
  Object root(doc, "");
  if (const auto* r = root.find("radio")) parse_radio(*r, s.scene);
  if (const auto* a = root.find("airs")) {
    if (!a->is_array()) throw ValidationError("expected an array", "airs");
    for (std::size_t i = 0; i < a->size(); ++i) s.scene.airs.push_back(parse_airs((*a)[i], index("airs", i)));
  }
  if (const auto* u = root.find("ues")) {
    if (!u->is_array()) throw ValidationError("expected an array", "ues");
    for (std::size_t i = 0; i < u->size(); ++i) s.scene.ues.push_back(parse_ue((*u)[i], index("ues", i)));
  }
  if (const auto* f = root.find("fading")) parse_fading(*f, s.fading);
  if (const auto* u = root.find("ue_sampler")) parse_sampler(*u, s.sampler);
  root.finish();
  scene::validate(s.scene);
  return s;
}

Scenario load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scenario " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read scenario " + path.string());
  return parse(ss.str());
}

std::vector<scene::UePos> ues_for(const Scenario& s, std::uint64_t seed) {
  if (!s.scene.ues.empty()) return s.scene.ues;
  std::vector<scene::UePos> out;
  for (int k = 0; k < s.sampler.count; ++k) out.push_back(s.sampler.draw(mix_seed(seed, 13, k)));
  return out;
}

}  // namespace airslab::scenario
