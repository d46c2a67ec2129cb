#pragma once

#include <bitset>
#include <cmath>
#include <map>
#include <optional>
#include <string>

#include "handfit/camera.hpp"
#include "handfit/kinematics.hpp"

namespace handfit {

enum class LossKind {
  Reg,        // omega-weighted squared distance of clipped beta to beta_mean
  TwoD,       // SSE between observed and projected annotated joints
  Fit,        // TwoD + Reg
  Gamma1,     // scaled MSE against the canonical pose, root relative
  Gamma1Beta  // Gamma1 + Reg
};

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::Reg: return "reg";
    case LossKind::TwoD: return "2d";
    case LossKind::Fit: return "fit";
    case LossKind::Gamma1: return "gamma1";
    case LossKind::Gamma1Beta: return "gamma1_beta";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "reg") return LossKind::Reg;
  if (s == "2d") return LossKind::TwoD;
  if (s == "fit") return LossKind::Fit;
  if (s == "gamma1") return LossKind::Gamma1;
  if (s == "gamma1_beta") return LossKind::Gamma1Beta;
  throw InvalidArgument("unknown loss '" + s + "'");
}

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;
};

/// Selects which of the 51 optimizable entries a stage updates.
struct ParamMask {
  std::bitset<kNumOpt> bits{};

  static ParamMask beta() {
    ParamMask m;
    for (int i = 0; i < kNumBeta; ++i) m.bits.set(static_cast<std::size_t>(i));
    return m;
  }
  static ParamMask gamma1() {
    ParamMask m;
    for (int i = 0; i < 3; ++i) m.bits.set(static_cast<std::size_t>(kGamma1Offset + i));
    return m;
  }
  static ParamMask gamma2() {
    ParamMask m;
    for (int i = 0; i < 3; ++i) m.bits.set(static_cast<std::size_t>(kGamma2Offset + i));
    return m;
  }
  static ParamMask all() {
    ParamMask m;
    m.bits.set();
    return m;
  }

  ParamMask operator|(const ParamMask& o) const { return ParamMask{bits | o.bits}; }
  bool test(int i) const { return bits.test(static_cast<std::size_t>(i)); }
  bool empty() const { return bits.none(); }
  bool operator==(const ParamMask&) const = default;
};

inline OptVector pack(const HandParams& p) {
  OptVector x;
  for (int i = 0; i < kNumBeta; ++i) x[i] = p.beta[static_cast<std::size_t>(i)];
  x.segment<3>(kGamma1Offset) = p.gamma1;
  x.segment<3>(kGamma2Offset) = p.gamma2;
  return x;
}

inline HandParams unpack(const OptVector& x, const std::array<double, kNumShape>& alpha = {}) {
  HandParams p;
  p.alpha = alpha;
  for (int i = 0; i < kNumBeta; ++i) p.beta[static_cast<std::size_t>(i)] = x[i];
  p.gamma1 = x.segment<3>(kGamma1Offset);
  p.gamma2 = x.segment<3>(kGamma2Offset);
  return p;
}

/// Everything a loss needs besides the parameters. Terms whose inputs are
/// missing cannot be evaluated.
struct LossContext {
  const KinematicTemplate* tpl = nullptr;
  std::optional<Camera> camera;
  std::optional<Keypoints2D> observed;
  std::optional<CanonicalPose> canonical;
  double reference_length = 0.0;
  double lambda_gamma1 = 1e5;
  Beta beta_mean{};
  Beta omega{};

  static LossContext for_template(const KinematicTemplate& tpl) {
    LossContext c;
    c.tpl = &tpl;
    c.reference_length = tpl.reference_length();
    c.beta_mean = mean_beta(tpl);
    c.omega = tpl.omega();
    return c;
  }
};

template <class T>
struct LossTerms {
  T two_d = T(0.0);
  T reg = T(0.0);
  T gamma1 = T(0.0);
};

template <class T>
T loss_reg_t(std::span<const T, kNumBeta> beta, const Beta& beta_mean, const Beta& omega, const KinematicTemplate* tpl) {
  T sum(0.0);
  for (std::size_t k = 0; k < kNumBeta; ++k) {
    T b = beta[k];
    if (tpl) b = clip_component(b, tpl->beta_min()[k], tpl->beta_max()[k]);
    const T d = b - T(beta_mean[k]);
    sum += omega[k] * d * d;
  }
  return sum;
}

template <class T>
T loss_2d_t(const JointArray<T>& joints, const Camera& cam, const Keypoints2D& q) {
  if (q.annotated.none()) throw PreconditionError("2D loss needs at least one annotated joint");
  T sum(0.0);
  for (int k = 0; k < kNumJoints; ++k) {
    if (!q.has(k)) continue;
    const Vec2<T> uv = project_point<T>(joints[static_cast<std::size_t>(k)], cam, k);
    const T du = T(q[k].x()) - uv[0];
    const T dv = T(q[k].y()) - uv[1];
    sum += du * du + dv * dv;
  }
  return sum;
}

template <class T>
T loss_gamma1_t(const JointArray<T>& joints, const CanonicalPose& p_star, double ref_length, double lambda) {
  T sum(0.0);
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    const Vec3<T> rel = joints[j] - joints[0];
    for (int a = 0; a < 3; ++a) {
      const T d = T(ref_length * p_star.p[j][a]) - rel[a];
      sum += d * d;
    }
  }
  return sum * (lambda / kNumJoints);
}

/// Evaluates the terms of `kind` at x = (beta, gamma1, gamma2). beta is
/// clipped to the template limits before forward kinematics.
template <class T>
LossTerms<T> evaluate_terms(LossKind kind, const std::array<T, kNumOpt>& x, const LossContext& ctx,
                            const std::array<double, kNumShape>& alpha = {}) {
  if (!ctx.tpl) throw PreconditionError("loss context has no template");
  const auto& tpl = *ctx.tpl;
  std::array<T, kNumBeta> beta_c;
  for (std::size_t k = 0; k < kNumBeta; ++k) beta_c[k] = clip_component(x[k], tpl.beta_min()[k], tpl.beta_max()[k]);
  const bool need_reg = kind == LossKind::Reg || kind == LossKind::Fit || kind == LossKind::Gamma1Beta;
  const bool need_2d = kind == LossKind::TwoD || kind == LossKind::Fit;
  const bool need_g1 = kind == LossKind::Gamma1 || kind == LossKind::Gamma1Beta;

  LossTerms<T> terms;
  if (need_reg)
    terms.reg = loss_reg_t<T>(std::span<const T, kNumBeta>(beta_c), ctx.beta_mean, ctx.omega, nullptr);
  if (need_2d || need_g1) {
    const Vec3<T> g1(x[kGamma1Offset], x[kGamma1Offset + 1], x[kGamma1Offset + 2]);
    const Vec3<T> g2(x[kGamma2Offset], x[kGamma2Offset + 1], x[kGamma2Offset + 2]);
    const auto joints = forward_kinematics<T>(std::span<const T, kNumBeta>(beta_c), g1, g2, tpl,
                                              std::span<const double, kNumShape>(alpha));
    if (need_2d) {
      if (!ctx.camera || !ctx.observed) throw PreconditionError("2D loss needs a camera and observed keypoints");
      terms.two_d = loss_2d_t<T>(joints, *ctx.camera, *ctx.observed);
    }
    if (need_g1) {
      if (!ctx.canonical) throw PreconditionError("gamma1 loss needs a canonical pose");
      terms.gamma1 = loss_gamma1_t<T>(joints, *ctx.canonical, ctx.reference_length, ctx.lambda_gamma1);
    }
  }
  return terms;
}

namespace detail {

inline LossReport make_report(LossKind kind, const LossTerms<double>& t) {
  LossReport r;
  switch (kind) {
    case LossKind::Reg: r.components["reg"] = t.reg; break;
    case LossKind::TwoD: r.components["2d"] = t.two_d; break;
    case LossKind::Fit:
      r.components["2d"] = t.two_d;
      r.components["reg"] = t.reg;
      break;
    case LossKind::Gamma1: r.components["gamma1"] = t.gamma1; break;
    case LossKind::Gamma1Beta:
      r.components["gamma1"] = t.gamma1;
      r.components["reg"] = t.reg;
      break;
  }
  for (const auto& [name, v] : r.components) r.total += v;
  return r;
}

}  // namespace detail

inline LossReport evaluate(LossKind kind, const HandParams& params, const LossContext& ctx) {
  const OptVector v = pack(params);
  std::array<double, kNumOpt> x{};
  for (int i = 0; i < kNumOpt; ++i) x[static_cast<std::size_t>(i)] = v[i];
  return detail::make_report(kind, evaluate_terms<double>(kind, x, ctx, params.alpha));
}

struct LossGradient {
  LossReport report;
  OptVector gradient = OptVector::Zero();  // zero on inactive entries
};

/// Loss and its exact gradient with respect to the active entries, by
/// forward-mode dual numbers.
inline LossGradient gradient(LossKind kind, const HandParams& params, const ParamMask& mask, const LossContext& ctx) {
  if (mask.empty()) throw PreconditionError("gradient: empty parameter mask");
  const OptVector v = pack(params);
  std::array<GradJet, kNumOpt> x;
  for (int i = 0; i < kNumOpt; ++i) {
    x[static_cast<std::size_t>(i)] = mask.test(i) ? GradJet(v[i], i) : GradJet(v[i]);
  }
  const auto t = evaluate_terms<GradJet>(kind, x, ctx, params.alpha);
  LossGradient out;
  out.report = detail::make_report(kind, LossTerms<double>{t.two_d.a, t.reg.a, t.gamma1.a});
  const GradJet total = t.two_d + t.reg + t.gamma1;
  out.gradient = total.v;
  return out;
}

// Direct entry points for the individual losses.

inline double loss_reg(const Beta& beta, const Beta& beta_mean, const Beta& omega, const KinematicTemplate& tpl) {
  return loss_reg_t<double>(std::span<const double, kNumBeta>(beta), beta_mean, omega, &tpl);
}

inline double loss_2d(const HandParams& params, const KinematicTemplate& tpl, const Camera& cam, const Keypoints2D& q) {
  LossContext ctx = LossContext::for_template(tpl);
  ctx.camera = cam;
  ctx.observed = q;
  return evaluate(LossKind::TwoD, params, ctx).total;
}

inline LossReport loss_fit(const HandParams& params, const KinematicTemplate& tpl, const Camera& cam,
                           const Keypoints2D& q, const Beta& beta_mean, const Beta& omega) {
  LossContext ctx = LossContext::for_template(tpl);
  ctx.camera = cam;
  ctx.observed = q;
  ctx.beta_mean = beta_mean;
  ctx.omega = omega;
  return evaluate(LossKind::Fit, params, ctx);
}

inline double loss_gamma1(const HandParams& params, const KinematicTemplate& tpl, const CanonicalPose& p_star,
                          double ref_length, double lambda) {
  LossContext ctx = LossContext::for_template(tpl);
  ctx.canonical = p_star;
  ctx.reference_length = ref_length;
  ctx.lambda_gamma1 = lambda;
  return evaluate(LossKind::Gamma1, params, ctx).total;
}

inline LossReport loss_gamma1_beta(const HandParams& params, const KinematicTemplate& tpl,
                                   const CanonicalPose& p_star, double ref_length, double lambda,
                                   const Beta& beta_mean, const Beta& omega) {
  LossContext ctx = LossContext::for_template(tpl);
  ctx.canonical = p_star;
  ctx.reference_length = ref_length;
  ctx.lambda_gamma1 = lambda;
  ctx.beta_mean = beta_mean;
  ctx.omega = omega;
  return evaluate(LossKind::Gamma1Beta, params, ctx);
}

}  // namespace handfit
