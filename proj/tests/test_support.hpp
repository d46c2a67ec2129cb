#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "handfit/camera.hpp"
#include "handfit/kinematics.hpp"
#include "handfit/objective.hpp"

namespace handfit::testkit {

inline const KinematicTemplate& default_template() {
  static const KinematicTemplate tpl = KinematicTemplate::default_right_hand();
  return tpl;
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Random parameters with beta inside the limits and the hand well in
/// front of the default camera.
inline HandParams random_params(std::mt19937_64& rng, const KinematicTemplate& tpl = default_template()) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  HandParams p;
  for (std::size_t i = 0; i < p.beta.size(); ++i)
    p.beta[i] = tpl.beta_min()[i] + u(rng) * (tpl.beta_max()[i] - tpl.beta_min()[i]);
  p.gamma1 = random_unit(rng) * (0.05 + 0.9 * u(rng));
  p.gamma2 = Eigen::Vector3d(0.2 * u(rng) - 0.1, 0.2 * u(rng) - 0.1, 0.45 + 0.25 * u(rng));
  return p;
}

/// Central finite differences of f over the 51 optimizable entries.
inline OptVector finite_difference(const std::function<double(const HandParams&)>& f, const HandParams& at,
                                   double step) {
  OptVector g;
  const OptVector x = pack(at);
  for (int i = 0; i < kNumOpt; ++i) {
    OptVector xp = x;
    OptVector xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(unpack(xp, at.alpha)) - f(unpack(xm, at.alpha))) / (2.0 * step);
  }
  return g;
}

/// Point strictly inside the limits (away from the clip kinks by more than
/// any finite-difference step).
inline HandParams interior_params(std::mt19937_64& rng, const KinematicTemplate& tpl = default_template()) {
  HandParams p = random_params(rng, tpl);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  for (std::size_t i = 0; i < p.beta.size(); ++i)
    p.beta[i] = tpl.beta_min()[i] + u(rng) * (tpl.beta_max()[i] - tpl.beta_min()[i]);
  return p;
}

inline HandParams perturbed(const HandParams& p, std::mt19937_64& rng, double beta_amp, double rot, double trans,
                            const KinematicTemplate& tpl = default_template()) {
  std::uniform_real_distribution<double> u(-beta_amp, beta_amp);
  HandParams q = p;
  for (auto& b : q.beta) b += u(rng);
  q.beta = clip_beta(q.beta, tpl);
  q.gamma1 += random_unit(rng) * rot;
  q.gamma2 += random_unit(rng) * trans;
  return q;
}

/// Context with a nonzero residual for every loss: observations and the
/// canonical target come from nearby poses, omega and beta_mean are random.
inline LossContext random_context(std::mt19937_64& rng, const HandParams& at,
                                  const KinematicTemplate& tpl = default_template()) {
  LossContext ctx = LossContext::for_template(tpl);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < kNumBeta; ++i) {
    ctx.omega[i] = 2.0 * u(rng);
    ctx.beta_mean[i] = tpl.beta_min()[i] + u(rng) * (tpl.beta_max()[i] - tpl.beta_min()[i]);
  }
  const Camera cam;
  ctx.camera = cam;
  Keypoints2D q = project(forward_kinematics(perturbed(at, rng, 0.1, 0.05, 0.01, tpl), tpl), cam);
  for (int j = 1; j < kNumJoints; ++j)
    if (u(rng) < 0.3) q.unset(j);
  ctx.observed = q;
  ctx.canonical = canonicalize(forward_kinematics(perturbed(at, rng, 0.1, 0.05, 0.0, tpl), tpl), tpl);
  return ctx;
}

/// Starting point for a supervised fit: each beta component shifted by
/// uniform(-0.15, 0.15) rad, orientation by 0.1 rad and translation by 2 cm
/// in random directions.
inline HandParams supervised_start(const HandParams& truth, std::mt19937_64& rng,
                                   const KinematicTemplate& tpl = default_template()) {
  return perturbed(truth, rng, 0.15, 0.1, 0.02, tpl);
}

inline constexpr std::array<int, 6> kWristAndTips{0, 4, 8, 12, 16, 20};

inline double max_reprojection_error(const HandParams& p, const Keypoints2D& q, const Camera& cam,
                                     const KinematicTemplate& tpl = default_template()) {
  const auto uv = project(forward_kinematics(p, tpl), cam);
  double worst = 0.0;
  for (int j = 0; j < kNumJoints; ++j)
    if (q.has(j)) worst = std::max(worst, (uv[j] - q[j]).norm());
  return worst;
}

inline const std::vector<LossKind>& all_losses() {
  static const std::vector<LossKind> v{LossKind::Reg, LossKind::TwoD, LossKind::Fit, LossKind::Gamma1,
                                       LossKind::Gamma1Beta};
  return v;
}

/// The masks used by the fitting stages: orientation, orientation +
/// articulation, translation, everything.
inline const std::vector<std::pair<std::string, ParamMask>>& stage_masks() {
  static const std::vector<std::pair<std::string, ParamMask>> v{
      {"gamma1", ParamMask::gamma1()},
      {"gamma1+beta", ParamMask::gamma1() | ParamMask::beta()},
      {"gamma2", ParamMask::gamma2()},
      {"all", ParamMask::all()},
  };
  return v;
}

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRel = 1e-3;
inline constexpr double kFdAbs = 1e-6;

struct GradientCheck {
  bool ok = true;
  int worst_entry = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the analytic gradient with central differences on the active
/// entries; inactive entries must be exactly zero.
inline GradientCheck check_gradient(LossKind kind, const HandParams& at, const ParamMask& mask,
                                    const LossContext& ctx) {
  const OptVector g = gradient(kind, at, mask, ctx).gradient;
  const OptVector fd = finite_difference([&](const HandParams& p) { return evaluate(kind, p, ctx).total; }, at, kFdStep);
  GradientCheck out;
  double worst = 0.0;
  for (int i = 0; i < kNumOpt; ++i) {
    const double expect = mask.test(i) ? fd[i] : 0.0;
    const double err = std::abs(g[i] - expect);
    const double ratio = err / std::max(kFdAbs, kFdRel * std::abs(expect));
    if (ratio > worst) {
      worst = ratio;
      out.worst_entry = i;
      out.analytic = g[i];
      out.numeric = expect;
    }
    if (!mask.test(i) && g[i] != 0.0) out.ok = false;
  }
  if (worst > 1.0) out.ok = false;
  return out;
}

}  // namespace handfit::testkit
