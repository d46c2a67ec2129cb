#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "handfit/camera.hpp"
#include "handfit/evalkit.hpp"
#include "handfit/fitter.hpp"
#include "handfit/kinematics.hpp"

namespace handfit::workbench {

using nlohmann::json;

/// Location used in parse diagnostics: 1-based line (0 for whole-file
/// documents) plus a dotted field path.
struct Where {
  std::size_t line = 0;
  std::string path;

  Where operator/(const std::string& key) const { return {line, path.empty() ? key : path + "." + key}; }
  Where operator[](std::size_t i) const { return {line, path + "[" + std::to_string(i) + "]"}; }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line, path, what); }
};

inline const json& require(const json& j, const char* key, const Where& w) {
  if (!j.is_object()) w.fail("expected an object");
  const auto it = j.find(key);
  if (it == j.end()) (w / key).fail("missing field");
  return *it;
}

inline double read_number(const json& j, const Where& w) {
  if (!j.is_number()) w.fail("expected a number");
  return j.get<double>();
}

inline std::string read_string(const json& j, const Where& w) {
  if (!j.is_string()) w.fail("expected a string");
  return j.get<std::string>();
}

inline int read_int(const json& j, const Where& w) {
  if (!j.is_number_integer()) w.fail("expected an integer");
  return j.get<int>();
}

template <std::size_t N>
std::array<double, N> read_numbers(const json& j, const Where& w) {
  if (!j.is_array() || j.size() != N) w.fail("expected an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = read_number(j[i], w[i]);
  return out;
}

inline Eigen::Vector3d read_vec3(const json& j, const Where& w) {
  const auto a = read_numbers<3>(j, w);
  return {a[0], a[1], a[2]};
}

inline json vec_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json vec_json(const Eigen::Vector2d& v) { return json::array({v.x(), v.y()}); }

/// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const Where& w) {
  if (!j.is_object()) w.fail("expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) (w / key).fail("unknown field");
  }
}

// Hand parameters: beta (45), gamma1 (3, axis-angle radians), gamma2 (3,
// meters), alpha (10, optional).
inline json to_json(const HandParams& p) {
  return {{"alpha", p.alpha}, {"beta", p.beta}, {"gamma1", vec_json(p.gamma1)}, {"gamma2", vec_json(p.gamma2)}};
}

inline HandParams params_from_json(const json& j, const Where& w) {
  check_keys(j, {"alpha", "beta", "gamma1", "gamma2"}, w);
  HandParams p;
  if (j.contains("alpha")) p.alpha = read_numbers<kNumShape>(j["alpha"], w / "alpha");
  p.beta = read_numbers<kNumBeta>(require(j, "beta", w), w / "beta");
  p.gamma1 = read_vec3(require(j, "gamma1", w), w / "gamma1");
  p.gamma2 = read_vec3(require(j, "gamma2", w), w / "gamma2");
  return p;
}

inline json to_json(const Camera& c) {
  return {{"fx", c.fx},       {"fy", c.fy},         {"cx", c.cx},      {"cy", c.cy},
          {"width", c.width}, {"height", c.height}, {"z_min", c.z_min}};
}

inline Camera camera_from_json(const json& j, const Where& w, Camera c = {}) {
  check_keys(j, {"fx", "fy", "cx", "cy", "width", "height", "z_min"}, w);
  if (j.contains("fx")) c.fx = read_number(j["fx"], w / "fx");
  if (j.contains("fy")) c.fy = read_number(j["fy"], w / "fy");
  if (j.contains("cx")) c.cx = read_number(j["cx"], w / "cx");
  if (j.contains("cy")) c.cy = read_number(j["cy"], w / "cy");
  if (j.contains("width")) c.width = read_int(j["width"], w / "width");
  if (j.contains("height")) c.height = read_int(j["height"], w / "height");
  if (j.contains("z_min")) c.z_min = read_number(j["z_min"], w / "z_min");
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    w.fail(e.what());
  }
  return c;
}

/// 21 entries, each [u, v] or null for an unannotated joint.
inline json to_json(const Keypoints2D& q) {
  json a = json::array();
  for (int j = 0; j < kNumJoints; ++j) a.push_back(q.has(j) ? vec_json(q[j]) : json(nullptr));
  return a;
}

inline Keypoints2D keypoints2d_from_json(const json& j, const Where& w) {
  if (!j.is_array() || j.size() != kNumJoints) w.fail("expected 21 entries of [u, v] or null");
  Keypoints2D q;
  for (int k = 0; k < kNumJoints; ++k) {
    const auto& e = j[static_cast<std::size_t>(k)];
    if (e.is_null()) continue;
    const auto uv = read_numbers<2>(e, w[static_cast<std::size_t>(k)]);
    q.set(k, Eigen::Vector2d(uv[0], uv[1]));
  }
  return q;
}

inline json joints_json(const JointArray<double>& p) {
  json a = json::array();
  for (const auto& v : p) a.push_back(vec_json(v));
  return a;
}

inline JointArray<double> joints_from_json(const json& j, const Where& w) {
  if (!j.is_array() || j.size() != kNumJoints) w.fail("expected 21 entries of [x, y, z]");
  JointArray<double> p = zero_joints<Eigen::Vector3d>();
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = read_vec3(j[k], w[k]);
  return p;
}

inline json to_json(const LossReport& r) { return {{"total", r.total}, {"components", r.components}}; }

// Skeleton description. Bones are parent-relative rest vectors in meters.
inline json to_json(const TemplateData& d) {
  json shape = json::array();
  for (int b = 0; b < kNumBones; ++b) {
    json row = json::array();
    for (int s = 0; s < kNumShape; ++s) row.push_back(d.shape_basis(b, s));
    shape.push_back(row);
  }
  return {{"names", d.names},
          {"parents", d.parents},
          {"rest_bones", joints_json(d.rest_bones)},
          {"palm_normal", vec_json(d.palm_normal)},
          {"beta_min", d.beta_min},
          {"beta_max", d.beta_max},
          {"omega", d.omega},
          {"reference_bone", {d.reference_bone.first, d.reference_bone.second}},
          {"shape_basis", shape}};
}

inline KinematicTemplate template_from_json(const json& j, const Where& w = {}) {
  check_keys(j, {"names", "parents", "rest_bones", "palm_normal", "beta_min", "beta_max", "omega", "reference_bone",
                 "shape_basis"},
             w);
  TemplateData d;
  const auto& names = require(j, "names", w);
  if (!names.is_array() || names.size() != kNumJoints) (w / "names").fail("expected 21 joint names");
  for (std::size_t k = 0; k < d.names.size(); ++k) d.names[k] = read_string(names[k], (w / "names")[k]);
  const auto& parents = require(j, "parents", w);
  if (!parents.is_array() || parents.size() != kNumJoints) (w / "parents").fail("expected 21 parent indices");
  for (std::size_t k = 0; k < d.parents.size(); ++k) d.parents[k] = read_int(parents[k], (w / "parents")[k]);
  d.rest_bones = joints_from_json(require(j, "rest_bones", w), w / "rest_bones");
  if (j.contains("palm_normal")) d.palm_normal = read_vec3(j["palm_normal"], w / "palm_normal");
  d.beta_min = read_numbers<kNumBeta>(require(j, "beta_min", w), w / "beta_min");
  d.beta_max = read_numbers<kNumBeta>(require(j, "beta_max", w), w / "beta_max");
  d.omega = read_numbers<kNumBeta>(require(j, "omega", w), w / "omega");
  if (j.contains("reference_bone")) {
    const auto& r = j["reference_bone"];
    if (!r.is_array() || r.size() != 2) (w / "reference_bone").fail("expected [from, to]");
    d.reference_bone = {read_int(r[0], (w / "reference_bone")[0]), read_int(r[1], (w / "reference_bone")[1])};
  }
  if (j.contains("shape_basis")) {
    const auto& s = j["shape_basis"];
    if (!s.is_array() || s.size() != kNumBones) (w / "shape_basis").fail("expected 20 rows of 10");
    for (std::size_t b = 0; b < kNumBones; ++b) {
      const auto row = read_numbers<kNumShape>(s[b], (w / "shape_basis")[b]);
      for (int c = 0; c < kNumShape; ++c) d.shape_basis(static_cast<int>(b), c) = row[static_cast<std::size_t>(c)];
    }
  }
  try {
    return KinematicTemplate(std::move(d));
  } catch (const InvalidArgument& e) {
    w.fail(e.what());
  }
}

// Parameter groups a stage updates: any of "beta", "gamma1", "gamma2", "all".
inline json mask_json(const ParamMask& m) {
  json a = json::array();
  if (m == ParamMask::all()) return json::array({"all"});
  if ((m.bits & ParamMask::beta().bits) == ParamMask::beta().bits) a.push_back("beta");
  if ((m.bits & ParamMask::gamma1().bits) == ParamMask::gamma1().bits) a.push_back("gamma1");
  if ((m.bits & ParamMask::gamma2().bits) == ParamMask::gamma2().bits) a.push_back("gamma2");
  return a;
}

inline ParamMask mask_from_json(const json& j, const Where& w) {
  if (!j.is_array() || j.empty()) w.fail("expected a nonempty list of parameter groups");
  ParamMask m;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto g = read_string(j[i], w[i]);
    if (g == "beta") m = m | ParamMask::beta();
    else if (g == "gamma1") m = m | ParamMask::gamma1();
    else if (g == "gamma2") m = m | ParamMask::gamma2();
    else if (g == "all") m = ParamMask::all();
    else w[i].fail("unknown parameter group '" + g + "'");
  }
  return m;
}

inline json to_json(const FitConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages)
    stages.push_back({{"loss", to_string(s.loss)},
                      {"mask", mask_json(s.mask)},
                      {"lr", s.lr},
                      {"iterations", stage_iterations(s.rule)}});
  const auto& sp = std::get<Patience>(c.supervised.rule);
  return {{"stages", stages},
          {"supervised", {{"lr", c.supervised.lr}, {"patience", sp.window}, {"max_iterations", sp.max_iterations}}},
          {"tracking_thresholds", c.tracking_thresholds},
          {"lambda_gamma1", c.lambda_gamma1},
          {"translation_unit", c.translation_unit},
          {"beta_mean", c.beta_mean_source == BetaMeanSource::Distribution ? "distribution" : "limits"},
          {"adam", {{"beta1", c.adam.b1}, {"beta2", c.adam.b2}, {"eps", c.adam.eps}}}};
}

/// Reads a fit section on top of `c`; absent keys keep their values. The
/// distribution mean itself is not stored, callers attach it.
inline FitConfig fit_config_from_json(const json& j, const Where& w, FitConfig c = {}) {
  check_keys(j, {"stages", "supervised", "tracking_thresholds", "lambda_gamma1", "translation_unit", "beta_mean", "adam"},
             w);
  if (j.contains("stages")) {
    const auto& st = j["stages"];
    const Where ws = w / "stages";
    if (!st.is_array() || st.size() != 4) ws.fail("expected four stages");
    for (std::size_t i = 0; i < 4; ++i) {
      const Where wi = ws[i];
      check_keys(st[i], {"loss", "mask", "lr", "iterations"}, wi);
      auto& s = c.stages[i];
      if (st[i].contains("loss")) {
        try {
          s.loss = parse_loss_kind(read_string(st[i]["loss"], wi / "loss"));
        } catch (const InvalidArgument& e) {
          (wi / "loss").fail(e.what());
        }
      }
      if (st[i].contains("mask")) s.mask = mask_from_json(st[i]["mask"], wi / "mask");
      if (st[i].contains("lr")) s.lr = read_number(st[i]["lr"], wi / "lr");
      if (st[i].contains("iterations")) {
        const int n = read_int(st[i]["iterations"], wi / "iterations");
        if (n < 0) (wi / "iterations").fail("must be >= 0");
        s.rule = FixedIterations{n};
      }
      if (!(s.lr > 0.0)) (wi / "lr").fail("must be positive");
    }
  }
  if (j.contains("supervised")) {
    const auto& s = j["supervised"];
    const Where ws = w / "supervised";
    check_keys(s, {"lr", "patience", "max_iterations"}, ws);
    auto p = std::get<Patience>(c.supervised.rule);
    if (s.contains("lr")) c.supervised.lr = read_number(s["lr"], ws / "lr");
    if (s.contains("patience")) p.window = read_int(s["patience"], ws / "patience");
    if (s.contains("max_iterations")) p.max_iterations = read_int(s["max_iterations"], ws / "max_iterations");
    if (p.window <= 0) (ws / "patience").fail("must be positive");
    if (p.max_iterations < 0) (ws / "max_iterations").fail("must be >= 0");
    if (!(c.supervised.lr > 0.0)) (ws / "lr").fail("must be positive");
    c.supervised.rule = p;
  }
  if (j.contains("tracking_thresholds"))
    c.tracking_thresholds = read_numbers<4>(j["tracking_thresholds"], w / "tracking_thresholds");
  if (j.contains("lambda_gamma1")) c.lambda_gamma1 = read_number(j["lambda_gamma1"], w / "lambda_gamma1");
  if (j.contains("translation_unit")) {
    c.translation_unit = read_number(j["translation_unit"], w / "translation_unit");
    if (!(c.translation_unit > 0.0)) (w / "translation_unit").fail("must be positive");
  }
  if (j.contains("beta_mean")) {
    const auto s = read_string(j["beta_mean"], w / "beta_mean");
    if (s == "distribution") c.beta_mean_source = BetaMeanSource::Distribution;
    else if (s == "limits") c.beta_mean_source = BetaMeanSource::LimitMidpoint;
    else (w / "beta_mean").fail("expected 'distribution' or 'limits'");
  }
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    const Where wa = w / "adam";
    check_keys(a, {"beta1", "beta2", "eps"}, wa);
    if (a.contains("beta1")) c.adam.b1 = read_number(a["beta1"], wa / "beta1");
    if (a.contains("beta2")) c.adam.b2 = read_number(a["beta2"], wa / "beta2");
    if (a.contains("eps")) c.adam.eps = read_number(a["eps"], wa / "eps");
  }
  return c;
}

}  // namespace handfit::workbench
