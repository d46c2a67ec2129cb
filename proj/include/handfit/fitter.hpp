#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "handfit/optim.hpp"

namespace handfit {

struct StageConfig {
  LossKind loss = LossKind::Fit;
  ParamMask mask;
  double lr = 0.01;
  StoppingRule rule = FixedIterations{100};
};

enum class BetaMeanSource { LimitMidpoint, Distribution };

struct FitConfig {
  // Orientation, articulation, translation, full pose.
  std::array<StageConfig, 4> stages{{
      {LossKind::Gamma1, ParamMask::gamma1(), 1.0, FixedIterations{100}},
      {LossKind::Gamma1Beta, ParamMask::gamma1() | ParamMask::beta(), 0.01, FixedIterations{100}},
      {LossKind::TwoD, ParamMask::gamma2(), 1.0, FixedIterations{100}},
      {LossKind::Fit, ParamMask::all(), 0.01, FixedIterations{300}},
  }};
  // Tracking replaces the stage rules with these loss thresholds; the stage
  // iteration counts above become the caps. Stages 1-2 sit just above the
  // gamma1 loss of a canonical pose with 0.02 noise, stages 3-4 above the 2D
  // SSE of 1 px noise on 21 joints (42 px^2).
  std::array<double, 4> tracking_thresholds{2.0, 3.0, 50.0, 50.0};
  StageConfig supervised{LossKind::Fit, ParamMask::all(), 0.1, Patience{10, 2000}};
  double lambda_gamma1 = 1e5;
  // Meters per optimizer unit of gamma2.
  double translation_unit = 0.01;
  BetaMeanSource beta_mean_source = BetaMeanSource::LimitMidpoint;
  // Used when beta_mean_source is Distribution.
  std::optional<Beta> distribution_mean;
  AdamHyper adam;

  static FitConfig unsupervised_defaults(const Beta& distribution_mean) {
    FitConfig c;
    c.beta_mean_source = BetaMeanSource::Distribution;
    c.distribution_mean = distribution_mean;
    return c;
  }

  Beta beta_mean(const KinematicTemplate& tpl) const {
    if (beta_mean_source == BetaMeanSource::Distribution) {
      if (!distribution_mean) throw InvalidArgument("fit config: distribution beta mean not set");
      return *distribution_mean;
    }
    return mean_beta(tpl);
  }
};

inline int stage_iterations(const StoppingRule& rule) {
  if (const auto* f = std::get_if<FixedIterations>(&rule)) return f->n;
  if (const auto* p = std::get_if<Patience>(&rule)) return p->max_iterations;
  return std::get<LossThreshold>(rule).max_iterations;
}

struct FitResult {
  HandParams params;
  LossReport report;
  int iterations = 0;
};

struct UnsupervisedResult {
  HandParams params;
  std::array<LossReport, 4> stage_reports{};
  std::array<int, 4> stage_iterations{};
};

namespace detail {

inline LossContext make_context(const KinematicTemplate& tpl, const FitConfig& config) {
  LossContext ctx = LossContext::for_template(tpl);
  ctx.lambda_gamma1 = config.lambda_gamma1;
  ctx.beta_mean = config.beta_mean(tpl);
  return ctx;
}

}  // namespace detail

/// Annotation-mode fit of beta and gamma to a sparse set of 2D keypoints,
/// starting from user-adjusted parameters.
inline FitResult fit_supervised(const HandParams& initial, const Keypoints2D& q, const Camera& cam,
                                const KinematicTemplate& tpl, const FitConfig& config = {}) {
  if (q.annotated.none()) throw PreconditionError("supervised fit needs at least one annotated joint");
  cam.validate();
  LossContext ctx = detail::make_context(tpl, config);
  ctx.camera = cam;
  ctx.observed = q;
  OptimizerState state;
  state.hyper = config.adam;
  HandParams start = initial;
  start.beta = clip_beta(start.beta, tpl);
  const auto& s = config.supervised;
  auto r = run_stage(s.loss, start, s.mask, s.lr, s.rule, ctx, state, coordinate_scale(config.translation_unit));
  return {r.params, r.report, r.iterations};
}

/// Places the root on the camera ray through the observed wrist pixel at the
/// depth where the projected span of `relative` (root-relative joints, meters)
/// matches the observed 2D span. Span is the largest pairwise pixel distance.
inline Eigen::Vector3d init_reappearance(const Keypoints2D& q, const JointArray<double>& relative, const Camera& cam) {
  cam.validate();
  if (!q.has(0)) throw PreconditionError("reappearance: wrist keypoint not annotated");
  double observed = 0.0;
  for (int a = 0; a < kNumJoints; ++a)
    for (int b = a + 1; b < kNumJoints; ++b)
      if (q.has(a) && q.has(b)) observed = std::max(observed, (q[a] - q[b]).norm());
  constexpr double kMinSpan = 4.0;
  if (observed < kMinSpan)
    throw DegeneratePoseError("reappearance: observed span " + std::to_string(observed) + " px is too small");

  const Eigen::Vector3d ray((q[0].x() - cam.cx) / cam.fx, (q[0].y() - cam.cy) / cam.fy, 1.0);
  double min_rel_z = 0.0;
  for (const auto& r : relative) min_rel_z = std::min(min_rel_z, r.z());
  auto span_at = [&](double depth) {
    std::array<Eigen::Vector2d, kNumJoints> uv;
    for (int j = 0; j < kNumJoints; ++j) {
      const Eigen::Vector3d p = depth * ray + relative[static_cast<std::size_t>(j)];
      uv[static_cast<std::size_t>(j)] = Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    }
    double s = 0.0;
    for (int a = 0; a < kNumJoints; ++a)
      for (int b = a + 1; b < kNumJoints; ++b)
        if (q.has(a) && q.has(b)) s = std::max(s, (uv[static_cast<std::size_t>(a)] - uv[static_cast<std::size_t>(b)]).norm());
    return s;
  };
  // Bisection in log depth; the span shrinks with distance.
  double lo = std::max(cam.z_min - min_rel_z, cam.z_min) * (1.0 + 1e-9);
  double hi = 1e3;
  if (span_at(lo) <= observed) return lo * ray;
  if (span_at(hi) >= observed) return hi * ray;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    (span_at(mid) > observed ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi) * ray;
}

/// Reappearance from a canonical pose scaled by the reference length.
inline Eigen::Vector3d init_reappearance(const Keypoints2D& q, const CanonicalPose& p_star, double reference_length,
                                         const Camera& cam) {
  JointArray<double> rel;
  for (int j = 0; j < kNumJoints; ++j) rel[static_cast<std::size_t>(j)] = reference_length * p_star[j];
  return init_reappearance(q, rel, cam);
}

/// Reappearance from the model at the given articulation and orientation.
inline Eigen::Vector3d init_reappearance(const Keypoints2D& q, const HandParams& current, const KinematicTemplate& tpl,
                                         const Camera& cam) {
  HandParams p = current;
  p.gamma2.setZero();
  const auto kp = forward_kinematics(p, tpl);
  return init_reappearance(q, kp.p, cam);
}

namespace detail {

inline void require_complete(const Keypoints2D& q) {
  if (!q.complete())
    throw PreconditionError("all 21 joints must be annotated (got " + std::to_string(q.annotated.count()) + ")");
}

inline void require_valid_canonical(const CanonicalPose& p) {
  for (const auto& v : p.p)
    if (!v.allFinite()) throw PreconditionError("canonical pose has non-finite entries");
}

// Runs the four stages from `start`, sharing one optimizer state.
inline UnsupervisedResult run_schedule(const HandParams& start, const LossContext& ctx, const FitConfig& config,
                                       OptimizerState& state, bool thresholds) {
  UnsupervisedResult out;
  HandParams p = start;
  const OptVector scale = coordinate_scale(config.translation_unit);
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = config.stages[s];
    StoppingRule rule = st.rule;
    if (thresholds) rule = LossThreshold{config.tracking_thresholds[s], stage_iterations(st.rule)};
    if (stage_iterations(rule) == 0) {
      out.stage_reports[s] = evaluate(st.loss, p, ctx);
      continue;
    }
    auto r = run_stage(st.loss, p, st.mask, st.lr, rule, ctx, state, scale);
    p = r.params;
    out.stage_reports[s] = r.report;
    out.stage_iterations[s] = r.iterations;
  }
  out.params = p;
  return out;
}

}  // namespace detail

/// Four-stage fit from complete 2D keypoints and a canonical pose estimate,
/// starting at zero articulation and orientation.
inline UnsupervisedResult fit_unsupervised(const Keypoints2D& q, const CanonicalPose& p_star, const Camera& cam,
                                           const KinematicTemplate& tpl, const FitConfig& config) {
  detail::require_complete(q);
  detail::require_valid_canonical(p_star);
  cam.validate();
  LossContext ctx = detail::make_context(tpl, config);
  ctx.camera = cam;
  ctx.observed = q;
  ctx.canonical = p_star;

  HandParams start;
  start.gamma2 = init_reappearance(q, p_star, tpl.reference_length(), cam);
  OptimizerState state;
  state.hyper = config.adam;
  return detail::run_schedule(start, ctx, config, state, false);
}

struct OrientationSearch {
  int orientations = 256;  // scored candidates, uniform on SO(3)
  int refine = 6;          // best candidates refined by a full supervised fit
  std::uint64_t seed = 1;
};

/// Supervised fit that does not rely on the user's orientation being close:
/// scores a fixed set of orientations (root placed by reappearance, current
/// articulation kept), refines the best few together with `initial`, and
/// keeps the lowest final loss. Falls back to a plain fit when the wrist is
/// not annotated.
inline FitResult fit_supervised_search(const HandParams& initial, const Keypoints2D& q, const Camera& cam,
                                       const KinematicTemplate& tpl, const FitConfig& config = {},
                                       const OrientationSearch& search = {}) {
  FitResult best = fit_supervised(initial, q, cam, tpl, config);
  if (!q.has(0) || search.orientations <= 0 || search.refine <= 0) return best;
  LossContext ctx = detail::make_context(tpl, config);
  ctx.camera = cam;
  ctx.observed = q;

  std::mt19937_64 rng(search.seed);
  std::normal_distribution<double> n01;
  std::vector<std::pair<double, HandParams>> scored;
  for (int k = 0; k < search.orientations; ++k) {
    Eigen::Quaterniond rot(n01(rng), n01(rng), n01(rng), n01(rng));
    rot.normalize();
    const Eigen::AngleAxisd aa(rot);
    HandParams p = initial;
    p.beta = clip_beta(p.beta, tpl);
    p.gamma1 = aa.angle() * aa.axis();
    try {
      p.gamma2 = init_reappearance(q, p, tpl, cam);
      scored.emplace_back(evaluate(config.supervised.loss, p, ctx).total, p);
    } catch (const DegeneratePoseError&) {
      return best;
    } catch (const BehindCameraError&) {
    }
  }
  const auto keep = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(search.refine));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 0; k < keep; ++k) {
    try {
      auto r = fit_supervised(scored[k].second, q, cam, tpl, config);
      if (r.report.total < best.report.total) best = std::move(r);
    } catch (const DivergenceError&) {
    }
  }
  return best;
}

/// Side-aware wrapper: left hands are mirrored into right-hand space.
inline UnsupervisedResult fit_unsupervised(const Keypoints2D& q, const CanonicalPose& p_star, const Camera& cam,
                                           const KinematicTemplate& tpl, const FitConfig& config, HandSide side) {
  auto r = fit_unsupervised(mirror(q, side, cam.width), mirror(p_star, side), mirror(cam, side), tpl, config);
  r.params = mirror(r.params, side);
  return r;
}

inline FitResult fit_supervised(const HandParams& initial, const Keypoints2D& q, const Camera& cam,
                                const KinematicTemplate& tpl, const FitConfig& config, HandSide side) {
  auto r = fit_supervised(mirror(initial, side), mirror(q, side, cam.width), mirror(cam, side), tpl, config);
  r.params = mirror(r.params, side);
  return r;
}

inline FitResult fit_supervised_search(const HandParams& initial, const Keypoints2D& q, const Camera& cam,
                                       const KinematicTemplate& tpl, const FitConfig& config, HandSide side,
                                       const OrientationSearch& search = {}) {
  auto r = fit_supervised_search(mirror(initial, side), mirror(q, side, cam.width), mirror(cam, side), tpl, config,
                                 search);
  r.params = mirror(r.params, side);
  return r;
}

/// Per-hand tracking state. Parameters and optimizer moments persist between
/// visible frames; they are kept in right-hand space.
struct TrackingSession {
  const KinematicTemplate* tpl = nullptr;
  Camera camera;
  HandSide side = HandSide::Right;
  FitConfig config;
  HandParams params;  // right-hand space
  OptimizerState optimizer;
  LossReport last_report;
  bool visible = false;
  std::int64_t frames = 0;

  TrackingSession(const KinematicTemplate& t, const Camera& cam, HandSide s, FitConfig cfg)
      : tpl(&t), camera(cam), side(s), config(std::move(cfg)) {
    camera.validate();
  }

  /// Parameters of the tracked hand in its own side convention.
  HandParams hand_params() const { return mirror(params, side); }

  bool operator==(const TrackingSession& o) const {
    return params == o.params && optimizer == o.optimizer && visible == o.visible && frames == o.frames &&
           last_report.total == o.last_report.total;
  }
};

struct TrackResult {
  HandParams params;  // in the hand's side convention
  LossReport report;
  std::array<int, 4> stage_iterations{};
  bool reinitialized = false;
};

/// Fits one frame, warm-starting from the previous frame. A precondition
/// failure leaves the session untouched; divergence marks it invisible.
inline TrackResult track_frame(TrackingSession& session, const Keypoints2D& q_in, const CanonicalPose& p_star_in) {
  detail::require_complete(q_in);
  detail::require_valid_canonical(p_star_in);
  const auto& tpl = *session.tpl;
  const Camera cam = mirror(session.camera, session.side);
  const Keypoints2D q = mirror(q_in, session.side, session.camera.width);
  const CanonicalPose p_star = mirror(p_star_in, session.side);

  LossContext ctx = detail::make_context(tpl, session.config);
  ctx.camera = cam;
  ctx.observed = q;
  ctx.canonical = p_star;

  TrackResult out;
  HandParams start = session.params;
  OptimizerState state = session.optimizer;
  if (!session.visible) {
    start = HandParams{};
    start.gamma2 = init_reappearance(q, p_star, tpl.reference_length(), cam);
    state = OptimizerState{};
    state.hyper = session.config.adam;
    out.reinitialized = true;
  }
  UnsupervisedResult r;
  try {
    r = detail::run_schedule(start, ctx, session.config, state, true);
  } catch (const DivergenceError&) {
    session.visible = false;
    throw;
  }
  session.params = r.params;
  session.optimizer = state;
  session.last_report = r.stage_reports[3];
  session.visible = true;
  ++session.frames;

  out.params = session.hand_params();
  out.report = r.stage_reports[3];
  out.stage_iterations = r.stage_iterations;
  return out;
}

}  // namespace handfit
