#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "handfit/posegen.hpp"
#include "handfit/workbench/json_io.hpp"

namespace handfit::workbench {

struct GridSpec {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t points = 101;

  std::vector<double> values() const { return linear_grid(lo, hi, points); }
};

struct MetricGridConfig {
  GridSpec pck_2d_px{0.0, 100.0, 101};
  GridSpec pck_3d_canonical{0.0, 1.0, 101};
  GridSpec angle_deg{0.0, 30.0, 61};
  GridSpec radius_cm{0.0, 20.0, 41};
};

struct SynthBankSpec {
  std::uint64_t seed = 1;
  std::size_t articulations = 4096;
  std::size_t globals = 4096;
};

/// Everything the CLI and the service read from the config file. Relative
/// paths are resolved against the directory of the config file.
struct WorkbenchConfig {
  std::optional<std::string> template_path;  // default skeleton when absent
  Camera camera;
  FitConfig fit = default_fit();
  std::optional<std::string> bank_path;  // synthesized from synth_bank when absent
  SynthBankSpec synth_bank;
  double consistency_px = kConsistency;
  MetricGridConfig metrics;
  // Starting pose of a fresh annotation session: palm toward the camera,
  // fingers up, half a meter away.
  Eigen::Vector3d session_gamma1{0.0, 0.0, M_PI};
  Eigen::Vector3d session_gamma2{0.0, 0.0, 0.5};
  std::string provider = "ground-truth";  // ground-truth | none | file:PATH | command:CMD
  std::string dataset_file = "dataset.jsonl";
  unsigned threads = 0;  // 0: hardware concurrency

  static constexpr double kConsistency = 2.0;

  static FitConfig default_fit() {
    FitConfig c;
    c.beta_mean_source = BetaMeanSource::Distribution;
    return c;
  }
};

namespace detail {

inline json grid_json(const GridSpec& g) { return {{"lo", g.lo}, {"hi", g.hi}, {"points", g.points}}; }

inline GridSpec grid_from_json(const json& j, const Where& w) {
  check_keys(j, {"lo", "hi", "points"}, w);
  GridSpec g;
  g.lo = read_number(require(j, "lo", w), w / "lo");
  g.hi = read_number(require(j, "hi", w), w / "hi");
  const int n = read_int(require(j, "points", w), w / "points");
  if (n < 2) (w / "points").fail("need at least two points");
  if (!(g.hi > g.lo)) (w / "hi").fail("must exceed lo");
  g.points = static_cast<std::size_t>(n);
  return g;
}

inline std::string resolve(const std::string& p, const std::filesystem::path& base) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? p : (base / path).string();
}

}  // namespace detail

inline json to_json(const WorkbenchConfig& c) {
  return {{"template", c.template_path ? json(*c.template_path) : json(nullptr)},
          {"camera", to_json(c.camera)},
          {"fit", to_json(c.fit)},
          {"bank", c.bank_path ? json(*c.bank_path) : json(nullptr)},
          {"synth_bank",
           {{"seed", c.synth_bank.seed}, {"articulations", c.synth_bank.articulations}, {"globals", c.synth_bank.globals}}},
          {"consistency_px", c.consistency_px},
          {"metrics",
           {{"pck_2d_px", detail::grid_json(c.metrics.pck_2d_px)},
            {"pck_3d_canonical", detail::grid_json(c.metrics.pck_3d_canonical)},
            {"angle_deg", detail::grid_json(c.metrics.angle_deg)},
            {"radius_cm", detail::grid_json(c.metrics.radius_cm)}}},
          {"session", {{"gamma1", vec_json(c.session_gamma1)}, {"gamma2", vec_json(c.session_gamma2)}}},
          {"provider", c.provider},
          {"dataset_file", c.dataset_file},
          {"threads", c.threads}};
}

inline WorkbenchConfig config_from_json(const json& j, const std::filesystem::path& base = {}) {
  const Where w;
  check_keys(j, {"template", "camera", "fit", "bank", "synth_bank", "consistency_px", "metrics", "session", "provider",
                 "dataset_file", "threads"},
             w);
  WorkbenchConfig c;
  if (j.contains("template") && !j["template"].is_null())
    c.template_path = detail::resolve(read_string(j["template"], w / "template"), base);
  if (j.contains("camera")) c.camera = camera_from_json(j["camera"], w / "camera");
  if (j.contains("fit")) c.fit = fit_config_from_json(j["fit"], w / "fit", c.fit);
  if (j.contains("bank") && !j["bank"].is_null()) c.bank_path = detail::resolve(read_string(j["bank"], w / "bank"), base);
  if (j.contains("synth_bank")) {
    const auto& s = j["synth_bank"];
    const Where ws = w / "synth_bank";
    check_keys(s, {"seed", "articulations", "globals"}, ws);
    if (s.contains("seed")) {
      if (!s["seed"].is_number_unsigned()) (ws / "seed").fail("expected a non-negative integer");
      c.synth_bank.seed = s["seed"].get<std::uint64_t>();
    }
    for (const char* key : {"articulations", "globals"}) {
      if (!s.contains(key)) continue;
      const int n = read_int(s[key], ws / key);
      if (n <= 0) (ws / key).fail("must be positive");
      (std::string(key) == "articulations" ? c.synth_bank.articulations : c.synth_bank.globals) =
          static_cast<std::size_t>(n);
    }
  }
  if (j.contains("consistency_px")) {
    c.consistency_px = read_number(j["consistency_px"], w / "consistency_px");
    if (!(c.consistency_px > 0.0)) (w / "consistency_px").fail("must be positive");
  }
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    const Where wm = w / "metrics";
    check_keys(m, {"pck_2d_px", "pck_3d_canonical", "angle_deg", "radius_cm"}, wm);
    if (m.contains("pck_2d_px")) c.metrics.pck_2d_px = detail::grid_from_json(m["pck_2d_px"], wm / "pck_2d_px");
    if (m.contains("pck_3d_canonical"))
      c.metrics.pck_3d_canonical = detail::grid_from_json(m["pck_3d_canonical"], wm / "pck_3d_canonical");
    if (m.contains("angle_deg")) c.metrics.angle_deg = detail::grid_from_json(m["angle_deg"], wm / "angle_deg");
    if (m.contains("radius_cm")) c.metrics.radius_cm = detail::grid_from_json(m["radius_cm"], wm / "radius_cm");
  }
  if (j.contains("session")) {
    const auto& s = j["session"];
    check_keys(s, {"gamma1", "gamma2"}, w / "session");
    if (s.contains("gamma1")) c.session_gamma1 = read_vec3(s["gamma1"], w / "session" / "gamma1");
    if (s.contains("gamma2")) c.session_gamma2 = read_vec3(s["gamma2"], w / "session" / "gamma2");
  }
  if (j.contains("provider")) c.provider = read_string(j["provider"], w / "provider");
  if (j.contains("dataset_file")) c.dataset_file = read_string(j["dataset_file"], w / "dataset_file");
  if (j.contains("threads")) {
    const int n = read_int(j["threads"], w / "threads");
    if (n < 0) (w / "threads").fail("must be >= 0");
    c.threads = static_cast<unsigned>(n);
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(0, "", "'" + path + "' is not valid JSON: " + e.what());
  }
}

inline WorkbenchConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path), std::filesystem::path(path).parent_path());
}

inline KinematicTemplate load_template(const std::string& path) { return template_from_json(read_json_file(path)); }

inline KinematicTemplate config_template(const WorkbenchConfig& c) {
  return c.template_path ? load_template(*c.template_path) : KinematicTemplate::default_right_hand();
}

/// The bundled default distribution: synthesized from `synth_bank`.
inline PoseDistribution config_distribution(const WorkbenchConfig& c, const KinematicTemplate& tpl) {
  if (c.bank_path) return load_distribution(*c.bank_path, tpl);
  return synth_distribution(c.synth_bank.seed, c.synth_bank.articulations, c.synth_bank.globals, tpl);
}

/// Fit settings with the articulation mean attached when the config asks
/// for the distribution mean.
inline FitConfig resolved_fit_config(const WorkbenchConfig& c, const PoseDistribution& bank) {
  FitConfig f = c.fit;
  if (f.beta_mean_source == BetaMeanSource::Distribution) f.distribution_mean = bank.articulation_mean();
  return f;
}

inline HandParams session_defaults(const WorkbenchConfig& c) {
  HandParams p;
  p.gamma1 = c.session_gamma1;
  p.gamma2 = c.session_gamma2;
  return p;
}

}  // namespace handfit::workbench
