#include <gtest/gtest.h>

#include <random>

#include "handfit/objective.hpp"
#include "test_support.hpp"

using namespace handfit;
using namespace handfit::testkit;

namespace {

const Camera kCam;

HandParams sample(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return interior_params(rng);
}

// Brute-force oracles written directly from the loss definitions.
double reg_oracle(const Beta& beta, const Beta& mean, const Beta& omega, const KinematicTemplate& tpl) {
  double s = 0.0;
  for (int k = 0; k < kNumBeta; ++k) {
    const double b = std::clamp(beta[k], tpl.beta_min()[k], tpl.beta_max()[k]);
    s += omega[k] * (b - mean[k]) * (b - mean[k]);
  }
  return s;
}

double two_d_oracle(const HandParams& p, const Keypoints2D& q) {
  const auto kp = forward_kinematics(HandParams{p.alpha, clip_beta(p.beta, default_template()), p.gamma1, p.gamma2},
                                     default_template());
  double s = 0.0;
  for (int k = 0; k < kNumJoints; ++k) {
    if (!q.has(k)) continue;
    const double u = kCam.fx * kp[k].x() / kp[k].z() + kCam.cx;
    const double v = kCam.fy * kp[k].y() / kp[k].z() + kCam.cy;
    s += (q[k].x() - u) * (q[k].x() - u) + (q[k].y() - v) * (q[k].y() - v);
  }
  return s;
}

double gamma1_oracle(const HandParams& p, const CanonicalPose& c, double L, double lambda) {
  const auto kp = forward_kinematics(HandParams{p.alpha, clip_beta(p.beta, default_template()), p.gamma1, p.gamma2},
                                     default_template());
  double s = 0.0;
  for (int j = 0; j < kNumJoints; ++j) s += (L * c[j] - (kp[j] - kp[0])).squaredNorm();
  return lambda * s / 21.0;
}

}  // namespace

TEST(LossReg, ZeroCases) {
  const auto& tpl = default_template();
  const Beta mean = mean_beta(tpl);
  EXPECT_EQ(loss_reg(mean, mean, tpl.omega(), tpl), 0.0);
  const HandParams p = sample(1);
  EXPECT_EQ(loss_reg(p.beta, mean, Beta{}, tpl), 0.0);
}

TEST(LossReg, MatchesOracle) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Beta beta{}, mean{}, omega{};
    for (int k = 0; k < kNumBeta; ++k) {
      beta[k] = u(rng);
      mean[k] = u(rng) * 0.2;
      omega[k] = std::abs(u(rng));
    }
    EXPECT_NEAR(loss_reg(beta, mean, omega, tpl), reg_oracle(beta, mean, omega, tpl), 1e-12);
  }
}

TEST(Loss2d, ZeroAtExactProjection) {
  const auto& tpl = default_template();
  const HandParams p = sample(3);
  EXPECT_NEAR(loss_2d(p, tpl, kCam, project(forward_kinematics(p, tpl), kCam)), 0.0, 1e-18);
}

TEST(Loss2d, SingleDisplacedJoint) {
  const auto& tpl = default_template();
  const HandParams p = sample(4);
  const Keypoints2D exact = project(forward_kinematics(p, tpl), kCam);
  Keypoints2D q;
  q.set(8, exact[8] + Eigen::Vector2d(1.0, 0.0));
  EXPECT_NEAR(loss_2d(p, tpl, kCam, q), 1.0, 1e-9);
}

TEST(Loss2d, MatchesBruteForce) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const HandParams p = interior_params(rng);
    const LossContext ctx = random_context(rng, p);
    EXPECT_NEAR(loss_2d(p, tpl, kCam, *ctx.observed), two_d_oracle(p, *ctx.observed), 1e-8);
  }
}

TEST(Loss2d, EmptyAnnotationThrows) {
  EXPECT_THROW(loss_2d(sample(6), default_template(), kCam, Keypoints2D{}), PreconditionError);
}

TEST(Loss2d, BehindCameraPropagates) {
  HandParams p = sample(7);
  p.gamma2.z() = -0.5;
  EXPECT_THROW(loss_2d(p, default_template(), kCam, project(forward_kinematics(sample(7), default_template()), kCam)),
               BehindCameraError);
}

TEST(Loss2d, DependsOnDepth) {
  const auto& tpl = default_template();
  const HandParams p = sample(8);
  const Keypoints2D q = project(forward_kinematics(p, tpl), kCam);
  HandParams deeper = p;
  deeper.gamma2.z() += 0.1;
  EXPECT_GT(loss_2d(deeper, tpl, kCam, q), 1.0);
}

TEST(LossFit, ComponentsAndZeroCases) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(9);
  const Beta mean = mean_beta(tpl);
  HandParams p = sample(9);
  p.beta = mean;
  const auto perfect = loss_fit(p, tpl, kCam, project(forward_kinematics(p, tpl), kCam), mean, tpl.omega());
  EXPECT_NEAR(perfect.total, 0.0, 1e-18);

  for (int trial = 0; trial < 20; ++trial) {
    const HandParams x = interior_params(rng);
    const LossContext ctx = random_context(rng, x);
    const auto r = loss_fit(x, tpl, kCam, *ctx.observed, ctx.beta_mean, ctx.omega);
    EXPECT_NEAR(r.components.at("2d"), two_d_oracle(x, *ctx.observed), 1e-8);
    EXPECT_NEAR(r.components.at("reg"), reg_oracle(x.beta, ctx.beta_mean, ctx.omega, tpl), 1e-12);
    EXPECT_NEAR(r.total, r.components.at("2d") + r.components.at("reg"), 1e-9);
    const auto no_reg = loss_fit(x, tpl, kCam, *ctx.observed, ctx.beta_mean, Beta{});
    EXPECT_EQ(no_reg.total, loss_2d(x, tpl, kCam, *ctx.observed));
  }
}

TEST(LossGamma1, ZeroAtOwnCanonicalPose) {
  const auto& tpl = default_template();
  const HandParams p = sample(10);
  const auto c = canonicalize(forward_kinematics(p, tpl), tpl);
  EXPECT_NEAR(loss_gamma1(p, tpl, c, tpl.reference_length(), 1e5), 0.0, 1e-15);
}

TEST(LossGamma1, SingleJointDisplacement) {
  const auto& tpl = default_template();
  const HandParams p = sample(11);
  auto c = canonicalize(forward_kinematics(p, tpl), tpl);
  const double L = tpl.reference_length();
  const double delta = 0.003;
  c[13].x() += delta / L;
  EXPECT_NEAR(loss_gamma1(p, tpl, c, L, 1e5), 1e5 * delta * delta / 21.0, 1e-9);
}

TEST(LossGamma1, DefaultLambda) { EXPECT_EQ(LossContext{}.lambda_gamma1, 1e5); }

TEST(LossGamma1, MatchesOracleAndIgnoresTranslation) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    HandParams p = interior_params(rng);
    const LossContext ctx = random_context(rng, p);
    const double L = tpl.reference_length();
    const double a = loss_gamma1(p, tpl, *ctx.canonical, L, 1e5);
    EXPECT_NEAR(a, gamma1_oracle(p, *ctx.canonical, L, 1e5), 1e-9 * std::max(1.0, a));
    p.gamma2 += random_unit(rng) * 0.2;
    EXPECT_NEAR(loss_gamma1(p, tpl, *ctx.canonical, L, 1e5), a, 1e-9 * std::max(1.0, a));
  }
}

TEST(LossGamma1Beta, Composition) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(13);
  const double L = tpl.reference_length();
  HandParams p = sample(13);
  p.beta = mean_beta(tpl);
  const auto c = canonicalize(forward_kinematics(p, tpl), tpl);
  EXPECT_NEAR(loss_gamma1_beta(p, tpl, c, L, 1e5, p.beta, tpl.omega()).total, 0.0, 1e-15);
  for (int trial = 0; trial < 20; ++trial) {
    const HandParams x = interior_params(rng);
    const LossContext ctx = random_context(rng, x);
    const auto r = loss_gamma1_beta(x, tpl, *ctx.canonical, L, 1e5, ctx.beta_mean, ctx.omega);
    EXPECT_NEAR(r.total, gamma1_oracle(x, *ctx.canonical, L, 1e5) + reg_oracle(x.beta, ctx.beta_mean, ctx.omega, tpl),
                1e-9 * std::max(1.0, r.total));
    EXPECT_EQ(loss_gamma1_beta(x, tpl, *ctx.canonical, L, 1e5, ctx.beta_mean, Beta{}).total,
              loss_gamma1(x, tpl, *ctx.canonical, L, 1e5));
  }
}

TEST(LossReport, TotalIsSumOfNonnegativeComponents) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const HandParams p = interior_params(rng);
    const LossContext ctx = random_context(rng, p);
    for (LossKind k : all_losses()) {
      const auto r = evaluate(k, p, ctx);
      double sum = 0.0;
      for (const auto& [name, v] : r.components) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(r.total, sum, 1e-9);
    }
  }
}

TEST(LossKindNames, RoundTrip) {
  for (LossKind k : all_losses()) EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_loss_kind("nope"), InvalidArgument);
}

TEST(Gradient, MatchesFiniteDifferencesEveryLossAndMask) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 25; ++trial) {
    const HandParams p = interior_params(rng);
    const LossContext ctx = random_context(rng, p);
    for (LossKind k : all_losses())
      for (const auto& [name, mask] : stage_masks()) {
        const auto c = check_gradient(k, p, mask, ctx);
        EXPECT_TRUE(c.ok) << to_string(k) << " / " << name << " entry " << c.worst_entry << ": analytic " << c.analytic
                          << " numeric " << c.numeric;
      }
  }
}

TEST(Gradient, ZeroAtPerfectFit) {
  const auto& tpl = default_template();
  HandParams p = sample(16);
  p.beta = mean_beta(tpl);
  LossContext ctx = LossContext::for_template(tpl);
  ctx.camera = kCam;
  ctx.observed = project(forward_kinematics(p, tpl), kCam);
  ctx.canonical = canonicalize(forward_kinematics(p, tpl), tpl);
  for (LossKind k : all_losses()) {
    const auto g = gradient(k, p, ParamMask::all(), ctx).gradient;
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-6) << to_string(k);
  }
}

TEST(Gradient, Gamma1LossHasNoTranslationGradient) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const HandParams p = interior_params(rng);
    const LossContext ctx = random_context(rng, p);
    const auto g = gradient(LossKind::Gamma1, p, ParamMask::gamma2(), ctx).gradient;
    EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Gradient, ClampedComponentsHaveZeroRegGradient) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(18);
  HandParams p = interior_params(rng);
  const int above = beta_index(1, 0, kPsi);
  const int below = beta_index(2, 0, kTheta);
  p.beta[above] = tpl.beta_max()[above] + 0.3;
  p.beta[below] = tpl.beta_min()[below] - 0.3;
  const LossContext ctx = random_context(rng, p);
  for (LossKind k : all_losses()) {
    const auto g = gradient(k, p, ParamMask::all(), ctx).gradient;
    EXPECT_EQ(g[above], 0.0) << to_string(k);
    EXPECT_EQ(g[below], 0.0) << to_string(k);
  }
  // Locked components never receive gradient.
  const auto g = gradient(LossKind::Fit, p, ParamMask::all(), ctx).gradient;
  EXPECT_EQ(g[beta_index(0, 1, kTheta)], 0.0);
  EXPECT_EQ(g[beta_index(3, 2, kPhi)], 0.0);
}

TEST(Gradient, EmptyMaskThrows) {
  const HandParams p = sample(19);
  EXPECT_THROW(gradient(LossKind::Reg, p, ParamMask{}, LossContext::for_template(default_template())),
               PreconditionError);
}

TEST(Gradient, MissingInputsThrow) {
  const HandParams p = sample(20);
  const auto ctx = LossContext::for_template(default_template());
  EXPECT_THROW(evaluate(LossKind::TwoD, p, ctx), PreconditionError);
  EXPECT_THROW(evaluate(LossKind::Gamma1, p, ctx), PreconditionError);
  EXPECT_THROW(evaluate(LossKind::Reg, p, LossContext{}), PreconditionError);
}

TEST(Pack, RoundTrip) {
  const HandParams p = sample(21);
  EXPECT_EQ(unpack(pack(p), p.alpha), p);
}
