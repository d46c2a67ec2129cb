#include <gtest/gtest.h>

#include <random>

#include "handfit/camera.hpp"
#include "handfit/kinematics.hpp"
#include "test_support.hpp"

using namespace handfit;
using handfit::testkit::default_template;
using handfit::testkit::random_params;

namespace {

double bone_length(const Keypoints3D& kp, const KinematicTemplate& tpl, int joint) {
  return (kp[joint] - kp[tpl.parent(joint)]).norm();
}

Eigen::Matrix3d rotation(const Eigen::Vector3d& w) {
  const double n = w.norm();
  return n > 0 ? Eigen::AngleAxisd(n, w / n).toRotationMatrix() : Eigen::Matrix3d::Identity();
}

}  // namespace

TEST(Template, DefaultStructure) {
  const auto& tpl = default_template();
  EXPECT_EQ(tpl.articulated_joints().size(), 15u);
  EXPECT_EQ(tpl.tips(), (std::array<int, 5>{4, 8, 12, 16, 20}));
  EXPECT_EQ(tpl.slot(0), -1);
  EXPECT_EQ(tpl.slot(1), 0);
  EXPECT_EQ(tpl.slot(4), -1);
  EXPECT_EQ(tpl.slot(5), 3);
  EXPECT_GT(tpl.reference_length(), 0.0);
  for (int i = 0; i < kNumBeta; ++i) {
    EXPECT_LE(tpl.beta_min()[i], tpl.beta_max()[i]);
    EXPECT_GE(tpl.omega()[i], 0.0);
  }
  // Second and third finger joints only flex.
  for (int f = 0; f < 5; ++f)
    for (int j = 1; j < 3; ++j) {
      EXPECT_EQ(tpl.beta_min()[beta_index(f, j, kTheta)], 0.0);
      EXPECT_EQ(tpl.beta_max()[beta_index(f, j, kPhi)], 0.0);
    }
}

TEST(Template, RejectsInvalid) {
  auto data = default_template().data();
  auto bad_limits = data;
  bad_limits.beta_min[3] = 1.0;
  bad_limits.beta_max[3] = 0.0;
  EXPECT_THROW(KinematicTemplate{bad_limits}, InvalidArgument);

  auto bad_omega = data;
  bad_omega.omega[0] = -1.0;
  EXPECT_THROW(KinematicTemplate{bad_omega}, InvalidArgument);

  auto bad_tree = data;
  bad_tree.parents[2] = 5;  // parent after child
  EXPECT_THROW(KinematicTemplate{bad_tree}, InvalidArgument);

  auto branching = data;
  branching.parents[9] = 6;  // joint 6 would get two children
  EXPECT_THROW(KinematicTemplate{branching}, InvalidArgument);

  auto zero_bone = data;
  zero_bone.rest_bones[9].setZero();
  EXPECT_THROW(KinematicTemplate{zero_bone}, InvalidArgument);
}

TEST(ForwardKinematics, ZeroParamsGiveRestPose) {
  const auto& tpl = default_template();
  const auto kp = forward_kinematics(HandParams{}, tpl);
  EXPECT_EQ(kp[0], Eigen::Vector3d::Zero());
  for (int k = 1; k < kNumJoints; ++k) {
    EXPECT_NEAR(bone_length(kp, tpl, k), tpl.rest_bone(k).norm(), 1e-12);
    EXPECT_TRUE((kp[k] - kp[tpl.parent(k)]).isApprox(tpl.rest_bone(k), 1e-12));
  }
}

TEST(ForwardKinematics, TranslationShiftsEveryJoint) {
  const auto& tpl = default_template();
  HandParams p;
  p.gamma2 = Eigen::Vector3d(0.1, 0.0, 0.0);
  const auto moved = forward_kinematics(p, tpl);
  const auto rest = forward_kinematics(HandParams{}, tpl);
  for (int k = 0; k < kNumJoints; ++k) EXPECT_TRUE((moved[k] - rest[k] - Eigen::Vector3d(0.1, 0, 0)).norm() < 1e-15);
}

TEST(ForwardKinematics, RigidityOverRandomPoses) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const HandParams p = random_params(rng);
    const auto kp = forward_kinematics(p, tpl);
    for (int k = 1; k < kNumJoints; ++k) ASSERT_NEAR(bone_length(kp, tpl, k), tpl.rest_bone(k).norm(), 1e-9);
    EXPECT_TRUE((kp[0] - p.gamma2).norm() < 1e-15);
  }
}

TEST(ForwardKinematics, RotationCovariance) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    HandParams p = random_params(rng);
    p.gamma2.setZero();
    HandParams unrotated = p;
    unrotated.gamma1.setZero();
    const auto a = forward_kinematics(p, tpl);
    const auto b = forward_kinematics(unrotated, tpl);
    const Eigen::Matrix3d r = rotation(p.gamma1);
    for (int k = 0; k < kNumJoints; ++k) ASSERT_LT((a[k] - r * b[k]).norm(), 1e-9);
  }
}

TEST(ForwardKinematics, FlexionBendsTowardPalm) {
  const auto& tpl = default_template();
  HandParams p;
  p.beta[beta_index(2, 0, kPsi)] = -1.0;  // middle finger knuckle
  const auto kp = forward_kinematics(p, tpl);
  // Palm faces -z: the middle fingertip moves to negative z, other tips stay.
  EXPECT_LT(kp[12].z(), -0.05);
  EXPECT_NEAR(kp[8].z(), 0.0, 1e-12);
  // Abduction keeps the finger in the palm plane.
  HandParams q;
  q.beta[beta_index(1, 0, kTheta)] = 0.3;
  const auto kq = forward_kinematics(q, tpl);
  EXPECT_NEAR(kq[8].z(), 0.0, 1e-12);
  EXPECT_GT((kq[8] - forward_kinematics(HandParams{}, tpl)[8]).norm(), 0.01);
}

TEST(ClipBeta, InsideUnchangedOutsideClamped) {
  const auto& tpl = default_template();
  const Beta mid = mean_beta(tpl);
  EXPECT_EQ(clip_beta(mid, tpl), mid);
  Beta above{};
  for (int i = 0; i < kNumBeta; ++i) above[i] = tpl.beta_max()[i] + 1.0;
  EXPECT_EQ(clip_beta(above, tpl), tpl.beta_max());
}

TEST(ClipBeta, IdempotentAndWithinLimits) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    Beta x{};
    for (auto& v : x) v = u(rng);
    const Beta once = clip_beta(x, tpl);
    EXPECT_EQ(clip_beta(once, tpl), once);
    EXPECT_TRUE(within_limits(once, tpl));
  }
}

TEST(MeanBeta, MidpointCases) {
  auto data = default_template().data();
  for (int i = 0; i < kNumBeta; ++i) {
    data.beta_max[i] = 0.1 * (i + 1);
    data.beta_min[i] = -data.beta_max[i];
  }
  for (double v : mean_beta(KinematicTemplate{data})) EXPECT_EQ(v, 0.0);

  for (int i = 0; i < kNumBeta; ++i) data.beta_min[i] = data.beta_max[i] = 0.3;
  for (double v : mean_beta(KinematicTemplate{data})) EXPECT_EQ(v, 0.3);

  const auto& tpl = default_template();
  const Beta m = mean_beta(tpl);
  for (int i = 0; i < kNumBeta; ++i) EXPECT_DOUBLE_EQ(m[i], tpl.beta_min()[i] / 2 + tpl.beta_max()[i] / 2);
}

TEST(Canonicalize, DefaultPoseHasUnitReferenceBone) {
  const auto& tpl = default_template();
  const auto c = canonicalize(forward_kinematics(HandParams{}, tpl), tpl);
  EXPECT_EQ(c[0], Eigen::Vector3d::Zero());
  EXPECT_NEAR((c[9] - c[0]).norm(), 1.0, 1e-12);
}

TEST(Canonicalize, TranslationAndScaleInvariant) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    HandParams p = random_params(rng);
    const auto kp = forward_kinematics(p, tpl);
    const auto c = canonicalize(kp, tpl);
    EXPECT_NEAR((c[9] - c[0]).norm(), 1.0, 1e-9);

    Keypoints3D shifted = kp;
    Keypoints3D scaled = kp;
    const Eigen::Vector3d t = testkit::random_unit(rng) * 0.3;
    for (int j = 0; j < kNumJoints; ++j) {
      shifted[j] += t;
      scaled[j] *= 2.0;
    }
    const auto cs = canonicalize(shifted, tpl);
    const auto cc = canonicalize(scaled, tpl);
    for (int j = 0; j < kNumJoints; ++j) {
      EXPECT_LT((cs[j] - c[j]).norm(), 1e-12);
      EXPECT_LT((cc[j] - c[j]).norm(), 1e-12);
    }

    // Equivariant to orientation: canonical output rotates with gamma1.
    HandParams flat = p;
    flat.gamma1.setZero();
    const auto c0 = canonicalize(forward_kinematics(flat, tpl), tpl);
    const Eigen::Matrix3d r = rotation(p.gamma1);
    for (int j = 0; j < kNumJoints; ++j) EXPECT_LT((c[j] - r * c0[j]).norm(), 1e-9);
  }
}

TEST(Canonicalize, DegenerateReferenceBoneThrows) {
  Keypoints3D kp;
  for (auto& p : kp.p) p = Eigen::Vector3d(0.1, 0.2, 0.5);
  EXPECT_THROW(canonicalize(kp, default_template()), DegeneratePoseError);
}

TEST(Mirror, Involution) {
  std::mt19937_64 rng(5);
  const HandParams p = random_params(rng);
  EXPECT_EQ(mirror(mirror(p)), p);
  const auto kp = forward_kinematics(p, default_template());
  EXPECT_EQ(mirror(mirror(kp)), kp);

  Keypoints2D q = project(kp, Camera{});
  q.unset(3);
  EXPECT_EQ(mirror(mirror(q, 800), 800), q);
  EXPECT_EQ(mirror(q, HandSide::Right, 800), q);
}

TEST(Mirror, PixelFlip) {
  Keypoints2D q;
  q.set(0, Eigen::Vector2d(0.0, 10.0));
  const auto m = mirror(q, 640);
  EXPECT_EQ(m[0], Eigen::Vector2d(639.0, 10.0));
  EXPECT_FALSE(m.has(1));
}

TEST(Mirror, LeftHandIsReflectionOfMirroredRightHand) {
  const auto& tpl = default_template();
  std::mt19937_64 rng(6);
  const HandParams left = random_params(rng);
  const Camera cam;
  // Observing the left hand in the flipped image is the same as observing the
  // right-hand model at the mirrored parameters through the mirrored camera.
  const auto left_2d = project(hand_keypoints(left, HandSide::Left, tpl), cam);
  const auto right_2d = project(forward_kinematics(mirror(left), tpl), mirror(cam));
  const auto flipped = mirror(left_2d, cam.width);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_LT((flipped[j] - right_2d[j]).norm(), 1e-9);
}
