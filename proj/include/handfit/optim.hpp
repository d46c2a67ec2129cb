#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <variant>

#include "handfit/objective.hpp"

namespace handfit {

struct AdamHyper {
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments per optimizable entry. Bias correction uses the number of
/// updates each entry has received, so an entry first activated in a later
/// stage starts with a full-size step.
struct OptimizerState {
  OptVector m = OptVector::Zero();
  OptVector v = OptVector::Zero();
  std::array<std::int64_t, kNumOpt> entry_steps{};
  std::int64_t steps = 0;
  AdamHyper hyper;

  bool operator==(const OptimizerState& o) const {
    return m == o.m && v == o.v && entry_steps == o.entry_steps && steps == o.steps;
  }
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, HandParams last_finite)
      : Error(what), last_finite_(std::move(last_finite)) {}
  const HandParams& last_finite() const noexcept { return last_finite_; }

 private:
  HandParams last_finite_;
};

/// One Adam update of the masked entries of x (descending).
inline void adam_step(OptimizerState& state, OptVector& x, const OptVector& grad, double lr, const ParamMask& mask) {
  for (int i = 0; i < kNumOpt; ++i)
    if (mask.test(i) && !std::isfinite(grad[i]))
      throw DivergenceError("non-finite gradient at entry " + std::to_string(i), unpack(x));
  const auto& h = state.hyper;
  for (int i = 0; i < kNumOpt; ++i) {
    if (!mask.test(i)) continue;
    const auto t = ++state.entry_steps[static_cast<std::size_t>(i)];
    state.m[i] = h.b1 * state.m[i] + (1.0 - h.b1) * grad[i];
    state.v[i] = h.b2 * state.v[i] + (1.0 - h.b2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / (1.0 - std::pow(h.b1, static_cast<double>(t)));
    const double v_hat = state.v[i] / (1.0 - std::pow(h.b2, static_cast<double>(t)));
    x[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
  ++state.steps;
}

struct FixedIterations {
  int n = 100;
};
/// Stops once `window` consecutive iterations fail to strictly lower the
/// best loss seen so far, or at `max_iterations`.
struct Patience {
  int window = 10;
  int max_iterations = 2000;
};
/// Stops as soon as the loss is at or below `tau`, or at `max_iterations`.
struct LossThreshold {
  double tau = 0.0;
  int max_iterations = 100;
};
using StoppingRule = std::variant<FixedIterations, Patience, LossThreshold>;

inline void validate(const StoppingRule& rule) {
  if (const auto* f = std::get_if<FixedIterations>(&rule); f && f->n < 0)
    throw InvalidArgument("fixed-iterations rule needs n >= 0");
  if (const auto* p = std::get_if<Patience>(&rule); p && (p->window <= 0 || p->max_iterations < 0))
    throw InvalidArgument("patience rule needs a positive window");
  if (const auto* t = std::get_if<LossThreshold>(&rule); t && (!(t->tau >= 0.0) || t->max_iterations < 0))
    throw InvalidArgument("threshold rule needs tau >= 0");
}

struct StageResult {
  HandParams params;
  LossReport report;
  int iterations = 0;
  int best_iteration = 0;
};

/// Per-entry optimizer coordinate units: the optimizer sees x / scale.
/// Translation is optimized in centimeters by default.
inline OptVector coordinate_scale(double translation_unit) {
  OptVector s = OptVector::Ones();
  s.segment<3>(kGamma2Offset).setConstant(translation_unit);
  return s;
}

/// Runs Adam on the masked entries until `rule` fires and returns the
/// best-seen parameters. `state` carries over between calls (warm start).
/// Active beta entries are projected back into the template limits after
/// every step.
inline StageResult run_stage(LossKind kind, const HandParams& initial, const ParamMask& mask, double lr,
                             const StoppingRule& rule, const LossContext& ctx, OptimizerState& state,
                             const OptVector& scale = OptVector::Ones()) {
  validate(rule);
  if (mask.empty()) throw PreconditionError("run_stage: empty parameter mask");
  const auto& tpl = *ctx.tpl;

  HandParams current = initial;
  LossGradient eval;
  try {
    eval = gradient(kind, current, mask, ctx);
  } catch (const BehindCameraError& e) {
    throw DivergenceError(std::string("stage starts outside the camera frustum: ") + e.what(), initial);
  }
  if (!std::isfinite(eval.report.total)) throw DivergenceError("initial loss is not finite", initial);

  StageResult best{current, eval.report, 0, 0};
  int iter = 0;
  int stale = 0;
  for (;;) {
    bool stop = false;
    if (const auto* f = std::get_if<FixedIterations>(&rule)) {
      stop = iter >= f->n;
    } else if (const auto* p = std::get_if<Patience>(&rule)) {
      stop = stale >= p->window || iter >= p->max_iterations;
    } else if (const auto* t = std::get_if<LossThreshold>(&rule)) {
      stop = eval.report.total <= t->tau || iter >= t->max_iterations;
    }
    if (stop) break;

    OptVector u = pack(current).cwiseQuotient(scale);
    const OptVector g = eval.gradient.cwiseProduct(scale);
    try {
      adam_step(state, u, g, lr, mask);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), best.params);
    }
    OptVector x = u.cwiseProduct(scale);
    for (int i = 0; i < kNumBeta; ++i)
      if (mask.test(i))
        x[i] = std::min(std::max(x[i], tpl.beta_min()[static_cast<std::size_t>(i)]), tpl.beta_max()[static_cast<std::size_t>(i)]);
    // Entries outside the mask keep their exact bits.
    HandParams next = unpack(x, current.alpha);
    for (int i = 0; i < kNumBeta; ++i)
      if (!mask.test(i)) next.beta[static_cast<std::size_t>(i)] = current.beta[static_cast<std::size_t>(i)];
    for (int i = 0; i < 3; ++i) {
      if (!mask.test(kGamma1Offset + i)) next.gamma1[i] = current.gamma1[i];
      if (!mask.test(kGamma2Offset + i)) next.gamma2[i] = current.gamma2[i];
    }
    current = next;
    ++iter;

    try {
      eval = gradient(kind, current, mask, ctx);
    } catch (const BehindCameraError& e) {
      throw DivergenceError(std::string("stage left the camera frustum: ") + e.what(), best.params);
    }
    if (!std::isfinite(eval.report.total)) throw DivergenceError("loss became non-finite", best.params);
    if (eval.report.total < best.report.total) {
      best = StageResult{current, eval.report, 0, iter};
      stale = 0;
    } else {
      ++stale;
    }
  }
  best.iterations = iter;
  return best;
}

}  // namespace handfit
