#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "airslab/ckm.hpp"
#include "airslab/neural.hpp"
#include "airslab/parallel.hpp"
#include "airslab/scenario.hpp"
#include "airslab/sched.hpp"

using namespace airslab;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

#ifndef AIRSLAB_GIT_DESCRIBE
#define AIRSLAB_GIT_DESCRIBE "unknown"
#endif

namespace {

struct Options {
  std::string scenario;
  std::vector<std::uint64_t> seeds{1};
  std::string out;
  std::vector<std::string> algos{"smib"};
  std::string predictor = "oracle";
  std::string kind;
  long long n = 100;
  double eps = 1e-3;
  double xi = 1e-2;
  int nmax = 10;
  std::string weights_lps;
  std::string weights_se;
  std::string ckm_path;
  std::vector<int> elements{16, 64, 144};
  bool no_timing = false;
};

std::string fmt(double v, const char* f = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << bytes;
  if (!f) throw IoError("write failed: " + path.string());
}

/// Records what produced a set of outputs. Output names are stored without
/// their directory so reruns into different places yield identical manifests.
void write_manifest(const fs::path& path, const CLI::App& cmd, const Options& o,
                    const std::vector<fs::path>& outputs) {
  ojson j;
  j["command"] = cmd.get_name();
  if (!o.kind.empty()) j["kind"] = o.kind;
  j["scenario"] = o.scenario;
  j["seeds"] = o.seeds;
  ojson overrides = ojson::object();
  for (const auto* opt : cmd.get_options()) {
    if (opt->count() == 0 || opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "scenario" || name == "out") continue;
    const auto& res = opt->results();
    overrides[name] = res.size() == 1 ? ojson(res.front()) : ojson(res);
  }
  j["overrides"] = std::move(overrides);
  j["version"] = AIRSLAB_GIT_DESCRIBE;
  ojson outs = ojson::array();
  for (const auto& p : outputs) outs.push_back(p.filename().string());
  j["outputs"] = std::move(outs);
  write_file(path, j.dump(2) + "\n");
}

fs::path manifest_for(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

scenario::Scenario load_scenario(const Options& o, std::uint64_t seed) {
  auto s = scenario::load(o.scenario);
  s.fading.seed = seed;
  return s;
}

std::uint64_t single_seed(const Options& o) {
  if (o.seeds.size() != 1) throw ValidationError("exactly one seed expected", "--seed");
  return o.seeds.front();
}

int cmd_validate(const Options& o) {
  const auto s = scenario::load(o.scenario);
  std::cout << "ok: " << s.scene.airs.size() << " AIRS, " << s.scene.ues.size() << " UEs\n";
  return 0;
}

int cmd_dataset(const CLI::App& cmd, const Options& o) {
  const auto seed = single_seed(o);
  if (o.n < 0) throw ValidationError("must be >= 0", "--n");
  const auto s = load_scenario(o, seed);
  std::ostringstream buf;
  const auto n = static_cast<std::size_t>(o.n);
  const auto written = o.kind == "lps" ? oracle::gen_lps_dataset(s.scene, s.sampler, n, s.fading, buf)
                                       : oracle::gen_se_dataset(s.scene, s.sampler, n, s.fading, buf);
  write_file(o.out, buf.str());
  write_manifest(manifest_for(o.out), cmd, o, {o.out});
  std::cout << written << " records -> " << o.out << "\n";
  return 0;
}

std::unique_ptr<ckm::SePredictor> make_predictor(const Options& o, const channel::FadingSpec& spec) {
  if (o.predictor == "oracle") return std::make_unique<ckm::OraclePredictor>(spec);
  if (o.predictor == "table") {
    if (o.ckm_path.empty()) throw ValidationError("the table predictor needs a CKM file", "--ckm");
    auto store = std::make_shared<const ckm::CkmStore>(ckm::CkmStore::load(o.ckm_path));
    return std::make_unique<ckm::TablePredictor>(store, 2000, spec.seed);
  }
  if (o.weights_lps.empty() || o.weights_se.empty())
    throw ValidationError("the neural predictor needs --weights-lps and --weights-se", "--predictor");
  return std::make_unique<ckm::NeuralPredictor>(neural::load_weights(o.weights_lps),
                                                neural::load_weights(o.weights_se));
}

double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

constexpr double kExactGuard = 1e7;

struct SeedResult {
  std::vector<std::string> rows;
  std::vector<fs::path> files;
};

int cmd_schedule(const CLI::App& cmd, const Options& o) {
  const fs::path dir = o.out;
  sched::SmibParams p;
  p.eps = o.eps;
  p.xi = o.xi;
  p.n_max = o.nmax;
  if (!(p.eps > 0.0)) throw ValidationError("must be > 0", "--eps");
  if (!(p.xi > 0.0)) throw ValidationError("must be > 0", "--xi");
  if (p.n_max < 1) throw ValidationError("must be >= 1", "--nmax");

  // Seeds run concurrently; each writes its own files and rows are merged in seed order.
  const auto results = parallel_map(o.seeds.size(), [&](std::size_t k) {
    const auto seed = o.seeds[k];
    auto s = load_scenario(o, seed);
    s.scene.ues = scenario::ues_for(s, seed);
    const bool wants_exact = std::find(o.algos.begin(), o.algos.end(), "exact") != o.algos.end();
    if (wants_exact) {
      const double count = sched::enum_count(static_cast<int>(s.scene.ues.size()),
                                             static_cast<int>(s.scene.airs.size()), s.scene.n_slots);
      if (count > kExactGuard) throw ValidationError("instance too large for exact enumeration", "--algo");
    }
    const auto predictor = make_predictor(o, s.fading);
    const auto m = sched::build_se_matrix(*predictor, s.scene);
    const int q = s.scene.n_slots;
    const double n_rb = s.scene.n_rb;
    SeedResult r;
    for (const auto& algo : o.algos) {
      const double t0 = now_ms();
      sched::Schedule sch;
      if (algo == "smib") {
        auto ps = p;
        ps.seed = seed;
        sch = sched::sm_ib(m, q, n_rb, ps);
      } else if (algo == "random") {
        sch = sched::random_schedule(m, q, n_rb, seed);
      } else {
        sch = sched::exact_enum(m, q, n_rb, kExactGuard);
      }
      const double wall = now_ms() - t0;
      sched::validate(sch, m);
      const fs::path file = dir / (algo + "_seed" + std::to_string(seed) + ".json");
      write_file(file, sched::to_json(sch, !o.no_timing) + "\n");
      r.files.push_back(file);
      r.rows.push_back(std::to_string(m.n_ues()) + "," + std::to_string(m.n_airs()) + "," +
                       std::to_string(q) + "," + algo + "," + fmt(sch.min_throughput()) + "," +
                       (o.no_timing ? std::string() : fmt(wall, "%.3f")));
    }
    return r;
  });

  std::string csv = "U,I,Q,algo,min_throughput,wall_ms\n";
  std::vector<fs::path> outputs{dir / "schedule.csv"};
  for (const auto& r : results) {
    for (const auto& row : r.rows) csv += row + "\n";
    outputs.insert(outputs.end(), r.files.begin(), r.files.end());
  }
  write_file(dir / "schedule.csv", csv);
  write_manifest(dir / "manifest.json", cmd, o, outputs);
  std::cout << csv;
  return 0;
}

/// Nearest AIRS to the UE in the horizontal plane.
int nearest_airs(const scene::SceneConfig& sc, const scene::UePos& ue) {
  int best = 0;
  for (std::size_t i = 1; i < sc.airs.size(); ++i) {
    if ((sc.airs[i].pos - ue.pos).head<2>().norm() < (sc.airs[static_cast<std::size_t>(best)].pos - ue.pos).head<2>().norm())
      best = static_cast<int>(i);
  }
  return best;
}

int cmd_bench_phases(const CLI::App& cmd, const Options& o) {
  const auto seed = single_seed(o);
  const auto base = load_scenario(o, seed);
  if (base.scene.airs.empty()) throw ValidationError("needs at least one AIRS", "airs");
  const auto ues = scenario::ues_for(base, seed);
  if (ues.empty()) throw ValidationError("needs UEs or a sampler count", "ues");
  const airs::PhaseScheme schemes[] = {airs::PhaseScheme::mccm, airs::PhaseScheme::los,
                                       airs::PhaseScheme::random};
  std::string csv = "elements,mccm,los,random\n";
  for (const int w : o.elements) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(w))));
    if (w < 1 || side * side != w) throw ValidationError("element counts must be perfect squares", "--elements");
    auto sc = base.scene;
    for (auto& a : sc.airs) a.grid_y = a.grid_z = side;
    const auto se = parallel_map(ues.size(), [&](std::size_t k) {
      auto spec = base.fading;
      spec.seed = mix_seed(seed, k);
      std::vector<double> v;
      for (const auto scheme : schemes)
        v.push_back(oracle::ergodic_se(sc, ues[k], nearest_airs(sc, ues[k]), scheme, spec));
      return v;
    });
    csv += std::to_string(w);
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (const auto& v : se) sum += v[c];
      csv += "," + fmt(sum / static_cast<double>(se.size()));
    }
    csv += "\n";
  }
  write_file(o.out, csv);
  write_manifest(manifest_for(o.out), cmd, o, {o.out});
  std::cout << csv;
  return 0;
}

int cmd_ckm_build(const CLI::App& cmd, const Options& o) {
  const auto seed = single_seed(o);
  if (o.n < 1) throw ValidationError("must be >= 1", "--n");
  const auto s = load_scenario(o, seed);
  std::vector<scene::UePos> pos;
  for (long long k = 0; k < o.n; ++k) pos.push_back(s.sampler.draw(mix_seed(seed, 10, static_cast<std::uint64_t>(k))));
  const auto store = ckm::build_store(s.scene, pos, s.fading);
  store.save(o.out);
  write_manifest(manifest_for(o.out), cmd, o, {o.out});
  std::cout << store.size() << " entries -> " << o.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AIRS-assisted OFDMA scheduling lab"};
  app.require_subcommand(1);
  Options o;

  auto scenario_opt = [&](CLI::App* c) { c->add_option("--scenario", o.scenario, "Scenario JSON file")->required(); };
  auto seed_opt = [&](CLI::App* c, const char* help) {
    c->add_option("--seed", o.seeds, help)->delimiter(',')->capture_default_str();
  };

  auto* validate = app.add_subcommand("validate", "Parse and validate a scenario");
  scenario_opt(validate);

  auto* dataset = app.add_subcommand("dataset", "Generate an LPS or SE JSONL dataset");
  dataset->add_option("kind", o.kind, "lps or se")->required()->check(CLI::IsMember({"lps", "se"}));
  scenario_opt(dataset);
  seed_opt(dataset, "Seed");
  dataset->add_option("--n", o.n, "Number of records")->capture_default_str();
  dataset->add_option("--out", o.out, "Output JSONL file")->required();

  auto* schedule = app.add_subcommand("schedule", "Run schedulers and write schedules plus a CSV summary");
  scenario_opt(schedule);
  seed_opt(schedule, "Comma-separated seeds");
  schedule->add_option("--algo", o.algos, "smib, random, exact (comma-separated)")
      ->delimiter(',')
      ->check(CLI::IsMember({"smib", "random", "exact"}));
  schedule->add_option("--predictor", o.predictor, "SE predictor")
      ->check(CLI::IsMember({"oracle", "table", "neural"}))
      ->capture_default_str();
  schedule->add_option("--ckm", o.ckm_path, "CKM file for the table predictor");
  schedule->add_option("--weights-lps", o.weights_lps, "LPS-Net weights (NCKM)");
  schedule->add_option("--weights-se", o.weights_se, "SE-Net weights (NCKM)");
  schedule->add_option("--eps", o.eps, "Slot balancing tolerance")->capture_default_str();
  schedule->add_option("--xi", o.xi, "Cross-slot gap tolerance")->capture_default_str();
  schedule->add_option("--nmax", o.nmax, "Cross-slot iteration cap")->capture_default_str();
  schedule->add_flag("--no-timing", o.no_timing, "Leave wall-clock fields out of the outputs");
  schedule->add_option("--out", o.out, "Output directory")->required();

  auto* bench = app.add_subcommand("bench-phases", "Mean ergodic SE per phase scheme and panel size");
  scenario_opt(bench);
  seed_opt(bench, "Seed");
  bench->add_option("--elements", o.elements, "Element counts (perfect squares)")->delimiter(',');
  bench->add_option("--out", o.out, "Output CSV")->required();

  auto* ckm_cmd = app.add_subcommand("ckm", "Channel knowledge map tools");
  ckm_cmd->require_subcommand(1);
  auto* ckm_build = ckm_cmd->add_subcommand("build", "Build a table CKM at sampled positions");
  scenario_opt(ckm_build);
  seed_opt(ckm_build, "Seed");
  ckm_build->add_option("--n", o.n, "Number of positions")->capture_default_str();
  ckm_build->add_option("--out", o.out, "Output CKM file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*dataset) return cmd_dataset(*dataset, o);
    if (*schedule) return cmd_schedule(*schedule, o);
    if (*bench) return cmd_bench_phases(*bench, o);
    return cmd_ckm_build(*ckm_build, o);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
