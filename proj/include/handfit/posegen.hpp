#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handfit/camera.hpp"
#include "handfit/kinematics.hpp"

namespace handfit {

enum class Viewpoint { Ego, Third };

inline const char* to_string(Viewpoint v) { return v == Viewpoint::Ego ? "ego" : "third"; }
inline Viewpoint parse_viewpoint(const std::string& s) {
  if (s == "ego") return Viewpoint::Ego;
  if (s == "third") return Viewpoint::Third;
  throw InvalidArgument("unknown viewpoint '" + s + "'");
}

/// Axis-aligned box of root translations (meters, camera frame).
struct FrustumBox {
  Eigen::Vector3d lo{-0.25, -0.25, 0.3};
  Eigen::Vector3d hi{0.25, 0.25, 0.8};

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

using GlobalSample = std::array<double, 6>;  // gamma1 (3), gamma2 (3)

/// Sample banks: B holds articulations, G global orientation + translation.
struct PoseDistribution {
  std::vector<Beta> articulations;
  std::vector<GlobalSample> globals;
  std::string viewpoint = "ego";
  std::string source = "synthetic";
  FrustumBox frustum;

  Beta articulation_mean() const {
    Beta mean{};
    if (articulations.empty()) throw PreconditionError("distribution: empty articulation bank");
    for (const auto& b : articulations)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += b[i];
    for (auto& m : mean) m /= static_cast<double>(articulations.size());
    return mean;
  }
};

inline constexpr int kBankSchemaVersion = 1;

namespace detail {

inline double truncated_normal(std::mt19937_64& rng, double mean, double sigma, double lo, double hi) {
  if (!(sigma > 0.0) || lo == hi) return std::min(std::max(mean, lo), hi);
  std::normal_distribution<double> n(mean, sigma);
  for (;;) {
    const double x = n(rng);
    if (x >= lo && x <= hi) return x;
  }
}

inline Eigen::Vector3d to_axis_angle(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

}  // namespace detail

struct SynthOptions {
  // Largest tilt of the palm normal away from the camera direction.
  double cone_half_angle = 60.0 * M_PI / 180.0;
  // Roll of the hand about the palm normal.
  double max_roll = M_PI / 2.0;
  FrustumBox frustum;
};

/// Synthetic stand-in for captured banks: beta from truncated Gaussians at
/// the limit midpoints (sigma = range / 6), egocentric orientations with the
/// palm within a cone toward the camera, translations uniform in the box.
inline PoseDistribution synth_distribution(std::uint64_t seed, std::size_t n_articulations, std::size_t n_globals,
                                           const KinematicTemplate& tpl, const SynthOptions& opts = {}) {
  if (n_articulations == 0 || n_globals == 0) throw InvalidArgument("synth_distribution: sizes must be positive");
  std::mt19937_64 rng(seed);
  PoseDistribution d;
  d.source = "synthetic seed=" + std::to_string(seed);
  d.frustum = opts.frustum;
  const Beta mean = mean_beta(tpl);
  d.articulations.reserve(n_articulations);
  for (std::size_t n = 0; n < n_articulations; ++n) {
    Beta b{};
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double lo = tpl.beta_min()[i];
      const double hi = tpl.beta_max()[i];
      b[i] = detail::truncated_normal(rng, mean[i], (hi - lo) / 6.0, lo, hi);
    }
    d.articulations.push_back(clip_beta(b, tpl));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  d.globals.reserve(n_globals);
  const double cos_max = std::cos(opts.cone_half_angle);
  for (std::size_t n = 0; n < n_globals; ++n) {
    // Uniform direction inside the cone around -z (toward the camera).
    const double cos_t = 1.0 - unit(rng) * (1.0 - cos_max);
    const double tilt = std::acos(cos_t);
    const double azimuth = 2.0 * M_PI * unit(rng);
    const double roll = (2.0 * unit(rng) - 1.0) * opts.max_roll;
    const Eigen::Vector3d tilt_axis(std::cos(azimuth), std::sin(azimuth), 0.0);
    const Eigen::Matrix3d r = (Eigen::AngleAxisd(tilt, tilt_axis) * Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()))
                                  .toRotationMatrix();
    const Eigen::Vector3d g1 = detail::to_axis_angle(r);
    GlobalSample g{};
    for (int a = 0; a < 3; ++a) {
      g[static_cast<std::size_t>(a)] = g1[a];
      g[static_cast<std::size_t>(3 + a)] = opts.frustum.lo[a] + unit(rng) * (opts.frustum.hi[a] - opts.frustum.lo[a]);
    }
    d.globals.push_back(g);
  }
  return d;
}

/// Validates banks against the template limits and frustum. Throws with the
/// offending row indices.
inline void validate(const PoseDistribution& d, const KinematicTemplate& tpl) {
  if (d.articulations.empty()) throw ParseError(0, "B", "articulation bank is empty");
  if (d.globals.empty()) throw ParseError(0, "G", "global bank is empty");
  std::string bad_b;
  for (std::size_t i = 0; i < d.articulations.size(); ++i)
    if (!within_limits(d.articulations[i], tpl)) bad_b += (bad_b.empty() ? "" : ",") + std::to_string(i);
  std::string bad_g;
  for (std::size_t i = 0; i < d.globals.size(); ++i) {
    const auto& g = d.globals[i];
    const Eigen::Vector3d t(g[3], g[4], g[5]);
    bool finite = true;
    for (double v : g) finite = finite && std::isfinite(v);
    if (!finite || !d.frustum.contains(t)) bad_g += (bad_g.empty() ? "" : ",") + std::to_string(i);
  }
  if (!bad_b.empty()) throw ParseError(0, "B", "rows outside articulation limits: " + bad_b);
  if (!bad_g.empty()) throw ParseError(0, "G", "rows outside the declared frustum: " + bad_g);
}

inline nlohmann::json to_json(const PoseDistribution& d) {
  nlohmann::json j;
  j["schema_version"] = kBankSchemaVersion;
  j["viewpoint"] = d.viewpoint;
  j["source"] = d.source;
  j["frustum"] = {{"lo", {d.frustum.lo.x(), d.frustum.lo.y(), d.frustum.lo.z()}},
                  {"hi", {d.frustum.hi.x(), d.frustum.hi.y(), d.frustum.hi.z()}}};
  j["B"] = d.articulations;
  j["G"] = d.globals;
  return j;
}

inline PoseDistribution distribution_from_json(const nlohmann::json& j, const KinematicTemplate& tpl) {
  PoseDistribution d;
  try {
    if (j.at("schema_version").get<int>() != kBankSchemaVersion)
      throw ParseError(0, "schema_version", "unsupported bank schema version");
    d.viewpoint = j.at("viewpoint").get<std::string>();
    d.source = j.value("source", std::string{});
    if (j.contains("frustum")) {
      const auto lo = j["frustum"].at("lo").get<std::array<double, 3>>();
      const auto hi = j["frustum"].at("hi").get<std::array<double, 3>>();
      d.frustum.lo = Eigen::Vector3d(lo[0], lo[1], lo[2]);
      d.frustum.hi = Eigen::Vector3d(hi[0], hi[1], hi[2]);
    }
    d.articulations = j.at("B").get<std::vector<Beta>>();
    d.globals = j.at("G").get<std::vector<GlobalSample>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "", std::string("malformed bank file: ") + e.what());
  }
  validate(d, tpl);
  return d;
}

inline PoseDistribution load_distribution(const std::string& path, const KinematicTemplate& tpl) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open bank file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "", std::string("bank file is not valid JSON: ") + e.what());
  }
  return distribution_from_json(j, tpl);
}

inline void save_distribution(const PoseDistribution& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write bank file '" + path + "'");
  out << to_json(d).dump() << '\n';
}

struct SampleIndex {
  std::size_t articulation = 0;
  std::size_t global = 0;  // unused for third-person samples
};

/// Draws one pose. Ego: independent uniform rows of B and G. Third person:
/// a row of B, orientation componentwise uniform in [-pi, pi], translation
/// uniform in the frustum box.
template <class Rng>
HandParams sample_pose(const PoseDistribution& d, Viewpoint vp, Rng& rng, SampleIndex* picked = nullptr) {
  if (d.articulations.empty() || (vp == Viewpoint::Ego && d.globals.empty()))
    throw PreconditionError("sample_pose: empty bank");
  std::uniform_int_distribution<std::size_t> pick_b(0, d.articulations.size() - 1);
  HandParams p;
  const std::size_t bi = pick_b(rng);
  p.beta = d.articulations[bi];
  std::size_t gi = 0;
  if (vp == Viewpoint::Ego) {
    std::uniform_int_distribution<std::size_t> pick_g(0, d.globals.size() - 1);
    gi = pick_g(rng);
    const auto& g = d.globals[gi];
    p.gamma1 = Eigen::Vector3d(g[0], g[1], g[2]);
    p.gamma2 = Eigen::Vector3d(g[3], g[4], g[5]);
  } else {
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int a = 0; a < 3; ++a) p.gamma1[a] = angle(rng);
    for (int a = 0; a < 3; ++a) p.gamma2[a] = d.frustum.lo[a] + unit(rng) * (d.frustum.hi[a] - d.frustum.lo[a]);
  }
  if (picked) *picked = {bi, gi};
  return p;
}

struct TestSample {
  HandParams params;
  Keypoints3D keypoints_3d;
  CanonicalPose canonical;
  Keypoints2D keypoints_2d;
};

struct TestSet {
  std::vector<TestSample> samples;
  std::size_t resampled = 0;
};

/// Generator for instance `index` of a run seeded with `seed`.
inline std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

/// Samples n poses whose 21 projections all fall inside the image.
/// Out-of-frame draws are resampled, up to 100 draws per requested pose.
inline TestSet generate_testset(const PoseDistribution& d, Viewpoint vp, std::size_t n, std::uint64_t seed,
                                const Camera& cam, const KinematicTemplate& tpl) {
  if (n == 0) throw InvalidArgument("generate_testset: n must be positive");
  cam.validate();
  const std::size_t budget = 100 * n;
  TestSet out;
  out.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = instance_rng(seed, i);
    for (;;) {
      HandParams p = sample_pose(d, vp, rng);
      const Keypoints3D kp = forward_kinematics(p, tpl);
      bool visible = true;
      Keypoints2D uv;
      for (int j = 0; j < kNumJoints && visible; ++j) {
        if (kp[j].z() < cam.z_min) {
          visible = false;
          break;
        }
        uv.set(j, project_point<double>(kp[j], cam, j));
        visible = cam.inside(uv[j]);
      }
      if (visible) {
        out.samples.push_back({p, kp, canonicalize(kp, tpl), uv});
        break;
      }
      if (++out.resampled > budget)
        throw Error("generate_testset: resample budget exhausted (" + std::to_string(budget) +
                    " draws); check the frustum and camera");
    }
  }
  return out;
}

struct ObservationNoise {
  double pixel_sigma = 0.0;      // per 2D coordinate, pixels
  double canonical_sigma = 0.0;  // per canonical coordinate; root stays at zero
};

struct SequenceFrame {
  HandParams params;
  Keypoints3D keypoints_3d;
  CanonicalPose canonical;
  Keypoints2D keypoints_2d;
};

/// Frames interpolating the parameters linearly between two sampled poses,
/// observed with independent Gaussian noise.
inline std::vector<SequenceFrame> interpolated_sequence(const PoseDistribution& d, Viewpoint vp, std::size_t frames,
                                                        std::uint64_t seed, const Camera& cam,
                                                        const KinematicTemplate& tpl, const ObservationNoise& noise) {
  if (frames < 2) throw InvalidArgument("interpolated_sequence: need at least two frames");
  const auto ends = generate_testset(d, vp, 2, seed, cam, tpl);
  const HandParams& a = ends.samples[0].params;
  const HandParams& b = ends.samples[1].params;
  std::vector<SequenceFrame> out;
  out.reserve(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / static_cast<double>(frames - 1);
    HandParams p;
    for (std::size_t i = 0; i < p.beta.size(); ++i) p.beta[i] = (1.0 - t) * a.beta[i] + t * b.beta[i];
    p.gamma1 = (1.0 - t) * a.gamma1 + t * b.gamma1;
    p.gamma2 = (1.0 - t) * a.gamma2 + t * b.gamma2;
    SequenceFrame fr{p, forward_kinematics(p, tpl), {}, {}};
    fr.canonical = canonicalize(fr.keypoints_3d, tpl);
    fr.keypoints_2d = project(fr.keypoints_3d, cam);
    auto rng = instance_rng(seed + 1, f);
    std::normal_distribution<double> px(0.0, 1.0);
    for (int j = 0; j < kNumJoints; ++j) {
      if (noise.pixel_sigma > 0.0) fr.keypoints_2d[j] += noise.pixel_sigma * Eigen::Vector2d(px(rng), px(rng));
      if (noise.canonical_sigma > 0.0 && j != 0)
        fr.canonical[j] += noise.canonical_sigma * Eigen::Vector3d(px(rng), px(rng), px(rng));
    }
    out.push_back(std::move(fr));
  }
  return out;
}

}  // namespace handfit
