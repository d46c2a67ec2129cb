#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <ceres/rotation.h>

#include "handfit/common.hpp"

namespace handfit {

enum class HandSide { Left, Right };

inline const char* to_string(HandSide side) { return side == HandSide::Left ? "left" : "right"; }

inline HandSide parse_side(const std::string& s) {
  if (s == "left") return HandSide::Left;
  if (s == "right") return HandSide::Right;
  throw InvalidArgument("unknown hand side '" + s + "'");
}

/// The 61 model parameters. beta holds (theta, phi, psi) per articulated
/// joint, finger-major: index 3 * (3 * finger + joint) + axis.
struct HandParams {
  std::array<double, kNumShape> alpha{};
  Beta beta{};
  Eigen::Vector3d gamma1 = Eigen::Vector3d::Zero();  // axis-angle, radians
  Eigen::Vector3d gamma2 = Eigen::Vector3d::Zero();  // translation, meters

  bool operator==(const HandParams&) const = default;
};

inline constexpr int kTheta = 0;
inline constexpr int kPhi = 1;
inline constexpr int kPsi = 2;

constexpr int beta_index(int finger, int joint, int axis) { return 3 * (3 * finger + joint) + axis; }

struct Keypoints3D {
  JointArray<double> p = zero_joints<Eigen::Vector3d>();

  Eigen::Vector3d& operator[](int i) { return p[static_cast<std::size_t>(i)]; }
  const Eigen::Vector3d& operator[](int i) const { return p[static_cast<std::size_t>(i)]; }
  bool operator==(const Keypoints3D&) const = default;
};

/// Root-relative joints divided by the reference bone length.
struct CanonicalPose {
  JointArray<double> p = zero_joints<Eigen::Vector3d>();

  Eigen::Vector3d& operator[](int i) { return p[static_cast<std::size_t>(i)]; }
  const Eigen::Vector3d& operator[](int i) const { return p[static_cast<std::size_t>(i)]; }
  bool operator==(const CanonicalPose&) const = default;
};

/// Raw description of a skeleton, as stored on disk.
struct TemplateData {
  std::array<std::string, kNumJoints> names{};
  std::array<int, kNumJoints> parents{};
  // Vector from the parent joint in the rest pose (meters); entry 0 unused.
  JointArray<double> rest_bones = zero_joints<Eigen::Vector3d>();
  // Direction the palm faces in the rest pose; orients the local joint frames.
  Eigen::Vector3d palm_normal{0.0, 0.0, -1.0};
  Beta beta_min{};
  Beta beta_max{};
  Beta omega{};
  std::pair<int, int> reference_bone{0, 9};
  // Per-bone length scale is 1 + shape_basis * alpha.
  Eigen::Matrix<double, kNumBones, kNumShape> shape_basis =
      Eigen::Matrix<double, kNumBones, kNumShape>::Zero();
};

/// Validated, immutable skeleton with derived per-joint frames.
///
/// A joint with a child is articulated; each articulated joint has exactly
/// one child and its local frame is fixed at rest: y along the outgoing bone,
/// x toward the palm normal, z = x cross y. Articulation is
/// Rz(psi) * Ry(phi) * Rx(theta) in that frame, so psi is flexion and theta
/// abduction. Parents must precede children.
class KinematicTemplate {
 public:
  explicit KinematicTemplate(TemplateData data) : data_(std::move(data)) { build(); }

  static KinematicTemplate default_right_hand();

  const TemplateData& data() const { return data_; }
  int parent(int joint) const { return data_.parents[static_cast<std::size_t>(joint)]; }
  const Eigen::Vector3d& rest_bone(int joint) const { return data_.rest_bones[static_cast<std::size_t>(joint)]; }
  const Beta& beta_min() const { return data_.beta_min; }
  const Beta& beta_max() const { return data_.beta_max; }
  const Beta& omega() const { return data_.omega; }
  std::pair<int, int> reference_bone() const { return data_.reference_bone; }
  double reference_length() const { return reference_length_; }

  /// Articulation slot of a joint (0..14), or -1 for the root and tips.
  int slot(int joint) const { return slot_[static_cast<std::size_t>(joint)]; }
  const std::array<int, kNumArticulated>& articulated_joints() const { return articulated_; }
  const std::array<int, kNumFingers>& tips() const { return tips_; }
  const Eigen::Matrix3d& local_axis_rotation(int slot, int axis) const {
    return axis_basis_[static_cast<std::size_t>(slot)][static_cast<std::size_t>(axis)];
  }
  const Eigen::Matrix3d& rest_frame(int slot) const { return frames_[static_cast<std::size_t>(slot)]; }

  /// Per-bone scale factors for a shape vector. Bone k-1 ends at joint k.
  std::array<double, kNumBones> bone_scales(std::span<const double, kNumShape> alpha) const {
    Eigen::Map<const Eigen::Matrix<double, kNumShape, 1>> a(alpha.data());
    Eigen::Matrix<double, kNumBones, 1> s = data_.shape_basis * a;
    std::array<double, kNumBones> out{};
    for (int b = 0; b < kNumBones; ++b) out[static_cast<std::size_t>(b)] = 1.0 + s(b);
    return out;
  }

 private:
  void build();

  TemplateData data_;
  double reference_length_ = 0.0;
  std::array<int, kNumJoints> slot_{};
  std::array<int, kNumArticulated> articulated_{};
  std::array<int, kNumFingers> tips_{};
  std::array<Eigen::Matrix3d, kNumArticulated> frames_{};
  // frame * E_axis * frame^T for the three local axes, precomputed as outer
  // products so per-joint rotations can be assembled in rest coordinates.
  std::array<std::array<Eigen::Matrix3d, 3>, kNumArticulated> axis_basis_{};
};

inline void KinematicTemplate::build() {
  const auto& d = data_;
  if (d.parents[0] != -1) throw InvalidArgument("template: joint 0 must be the root (parent -1)");
  std::array<int, kNumJoints> child_count{};
  std::array<int, kNumJoints> only_child{};
  only_child.fill(-1);
  for (int k = 1; k < kNumJoints; ++k) {
    const int p = d.parents[static_cast<std::size_t>(k)];
    if (p < 0 || p >= k)
      throw InvalidArgument("template: joint " + std::to_string(k) +
                            " must have a parent with a smaller index");
    ++child_count[static_cast<std::size_t>(p)];
    only_child[static_cast<std::size_t>(p)] = k;
    if (!d.rest_bones[static_cast<std::size_t>(k)].allFinite() ||
        d.rest_bones[static_cast<std::size_t>(k)].norm() <= 0.0)
      throw InvalidArgument("template: rest bone " + std::to_string(k) + " must be finite and nonzero");
  }
  int n_art = 0;
  int n_tip = 0;
  slot_.fill(-1);
  for (int k = 1; k < kNumJoints; ++k) {
    const int c = child_count[static_cast<std::size_t>(k)];
    if (c == 0) {
      if (n_tip == kNumFingers) throw InvalidArgument("template: more than 5 tips");
      tips_[static_cast<std::size_t>(n_tip++)] = k;
    } else if (c == 1) {
      if (n_art == kNumArticulated) throw InvalidArgument("template: more than 15 articulated joints");
      slot_[static_cast<std::size_t>(k)] = n_art;
      articulated_[static_cast<std::size_t>(n_art++)] = k;
    } else {
      throw InvalidArgument("template: joint " + std::to_string(k) + " has more than one child");
    }
  }
  if (n_art != kNumArticulated || n_tip != kNumFingers)
    throw InvalidArgument("template: need exactly 15 articulated joints and 5 tips");

  for (int i = 0; i < kNumBeta; ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (!(d.beta_min[u] <= d.beta_max[u]))
      throw InvalidArgument("template: beta_min > beta_max at index " + std::to_string(i));
    if (!(d.omega[u] >= 0.0)) throw InvalidArgument("template: negative omega at index " + std::to_string(i));
  }
  const auto [ra, rb] = d.reference_bone;
  if (ra < 0 || ra >= kNumJoints || rb < 0 || rb >= kNumJoints || ra == rb)
    throw InvalidArgument("template: invalid reference bone");

  // Reference length measured on the rest pose.
  JointArray<double> rest{};
  rest[0].setZero();
  for (int k = 1; k < kNumJoints; ++k)
    rest[static_cast<std::size_t>(k)] =
        rest[static_cast<std::size_t>(d.parents[static_cast<std::size_t>(k)])] +
        d.rest_bones[static_cast<std::size_t>(k)];
  reference_length_ = (rest[static_cast<std::size_t>(rb)] - rest[static_cast<std::size_t>(ra)]).norm();
  if (!(reference_length_ > 0.0)) throw InvalidArgument("template: reference bone has zero length");

  if (!(d.palm_normal.norm() > 0.0)) throw InvalidArgument("template: palm normal must be nonzero");
  const Eigen::Vector3d palm = d.palm_normal.normalized();
  for (int s = 0; s < kNumArticulated; ++s) {
    const int k = articulated_[static_cast<std::size_t>(s)];
    const Eigen::Vector3d y = d.rest_bones[static_cast<std::size_t>(only_child[static_cast<std::size_t>(k)])].normalized();
    Eigen::Vector3d x = palm - palm.dot(y) * y;
    if (x.norm() < 1e-9) throw InvalidArgument("template: bone parallel to palm normal at joint " + std::to_string(k));
    x.normalize();
    const Eigen::Vector3d z = x.cross(y);
    Eigen::Matrix3d f;
    f.col(0) = x;
    f.col(1) = y;
    f.col(2) = z;
    frames_[static_cast<std::size_t>(s)] = f;
    for (int a = 0; a < 3; ++a)
      axis_basis_[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = f.col(a) * f.col(a).transpose();
  }
}

inline KinematicTemplate KinematicTemplate::default_right_hand() {
  TemplateData d;
  d.names = {"wrist",      "thumb_cmc",  "thumb_mcp",  "thumb_ip",   "thumb_tip",  "index_mcp",  "index_pip",
             "index_dip",  "index_tip",  "middle_mcp", "middle_pip", "middle_dip", "middle_tip", "ring_mcp",
             "ring_pip",   "ring_dip",   "ring_tip",   "pinky_mcp",  "pinky_pip",  "pinky_dip",  "pinky_tip"};
  d.parents = {-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19};

  // Flat right hand, palm facing -z, fingers along +y, thumb on the +x side.
  // Lengths follow average adult hand anthropometry (meters).
  struct Finger {
    Eigen::Vector3d base;
    Eigen::Vector3d dir;
    std::array<double, 3> phalanges;
  };
  const std::array<Finger, kNumFingers> fingers = {{
      {{0.022, 0.028, 0.0}, Eigen::Vector3d(0.6, 0.8, 0.0), {0.040, 0.032, 0.027}},
      {{0.024, 0.088, 0.0}, Eigen::Vector3d::UnitY(), {0.039, 0.023, 0.021}},
      {{0.002, 0.090, 0.0}, Eigen::Vector3d::UnitY(), {0.044, 0.027, 0.022}},
      {{-0.018, 0.084, 0.0}, Eigen::Vector3d::UnitY(), {0.041, 0.026, 0.022}},
      {{-0.034, 0.076, 0.0}, Eigen::Vector3d::UnitY(), {0.032, 0.019, 0.019}},
  }};
  d.rest_bones[0].setZero();
  for (int f = 0; f < kNumFingers; ++f) {
    const auto& fg = fingers[static_cast<std::size_t>(f)];
    const int base = 1 + 4 * f;
    d.rest_bones[static_cast<std::size_t>(base)] = fg.base;
    for (int j = 0; j < 3; ++j)
      d.rest_bones[static_cast<std::size_t>(base + 1 + j)] = fg.dir.normalized() * fg.phalanges[static_cast<std::size_t>(j)];
  }

  constexpr double kHalfPi = 1.5707963267948966;
  for (int f = 0; f < kNumFingers; ++f) {
    for (int j = 0; j < 3; ++j) {
      const auto th = static_cast<std::size_t>(beta_index(f, j, kTheta));
      const auto ph = static_cast<std::size_t>(beta_index(f, j, kPhi));
      const auto ps = static_cast<std::size_t>(beta_index(f, j, kPsi));
      d.beta_min[ps] = -kHalfPi;
      d.beta_max[ps] = 0.25;
      if (j == 0) {
        const bool thumb = f == 0;
        d.beta_min[th] = thumb ? -1.0 : -0.45;
        d.beta_max[th] = thumb ? 1.0 : 0.45;
        d.beta_min[ph] = thumb ? -0.6 : -0.2;
        d.beta_max[ph] = thumb ? 0.6 : 0.2;
      }
      d.omega[th] = 1.0;
      d.omega[ph] = 1.0;
      d.omega[ps] = 0.05;
    }
  }
  d.reference_bone = {0, 9};
  return KinematicTemplate(std::move(d));
}

namespace detail {

template <class T>
Mat3<T> axis_angle_matrix(const Vec3<T>& w) {
  T aa[3] = {w[0], w[1], w[2]};
  Mat3<T> r;
  ceres::AngleAxisToRotationMatrix(aa, r.data());  // column major
  return r;
}

// R = c I + s [a]x + (1 - c) a a^T, assembled from the precomputed outer
// product a a^T and a fixed unit axis a.
template <class T>
Mat3<T> rotation_about(const Eigen::Vector3d& axis, const Eigen::Matrix3d& outer, const T& angle) {
  using std::cos;
  using std::sin;
  const T c = cos(angle);
  const T s = sin(angle);
  const T one_minus_c = T(1.0) - c;
  Mat3<T> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = one_minus_c * outer(i, j);
  for (int i = 0; i < 3; ++i) r(i, i) += c;
  r(0, 1) -= s * axis[2];
  r(0, 2) += s * axis[1];
  r(1, 0) += s * axis[2];
  r(1, 2) -= s * axis[0];
  r(2, 0) -= s * axis[1];
  r(2, 1) += s * axis[0];
  return r;
}

template <class T>
Vec3<T> times(const Mat3<T>& m, const Eigen::Vector3d& v) {
  Vec3<T> r;
  for (int i = 0; i < 3; ++i) r[i] = m(i, 0) * v[0] + m(i, 1) * v[1] + m(i, 2) * v[2];
  return r;
}

}  // namespace detail

/// Joint positions in the camera frame. beta is used as given (no clipping).
template <class T>
JointArray<T> forward_kinematics(std::span<const T, kNumBeta> beta, const Vec3<T>& gamma1, const Vec3<T>& gamma2,
                                 const KinematicTemplate& tpl,
                                 std::span<const double, kNumShape> alpha = std::array<double, kNumShape>{}) {
  const auto scales = tpl.bone_scales(alpha);
  std::array<Mat3<T>, kNumJoints> frame;
  JointArray<T> pos;
  frame[0] = detail::axis_angle_matrix(gamma1);
  pos[0] = gamma2;
  for (int k = 1; k < kNumJoints; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const auto up = static_cast<std::size_t>(tpl.parent(k));
    const Eigen::Vector3d bone = tpl.rest_bone(k) * scales[uk - 1];
    pos[uk] = pos[up] + detail::times(frame[up], bone);
    const int s = tpl.slot(k);
    if (s < 0) continue;
    // Rotation about local axes, expressed in rest coordinates.
    const auto& f = tpl.rest_frame(s);
    const std::size_t b = static_cast<std::size_t>(3 * s);
    const Mat3<T> rz = detail::rotation_about(Eigen::Vector3d(f.col(2)), tpl.local_axis_rotation(s, 2), beta[b + kPsi]);
    const Mat3<T> ry = detail::rotation_about(Eigen::Vector3d(f.col(1)), tpl.local_axis_rotation(s, 1), beta[b + kPhi]);
    const Mat3<T> rx = detail::rotation_about(Eigen::Vector3d(f.col(0)), tpl.local_axis_rotation(s, 0), beta[b + kTheta]);
    frame[uk] = frame[up] * (rz * ry * rx);
  }
  return pos;
}

inline Keypoints3D forward_kinematics(const HandParams& params, const KinematicTemplate& tpl) {
  Keypoints3D out;
  out.p = forward_kinematics<double>(std::span<const double, kNumBeta>(params.beta), params.gamma1, params.gamma2, tpl,
                                     std::span<const double, kNumShape>(params.alpha));
  return out;
}

inline Beta clip_beta(const Beta& beta, const KinematicTemplate& tpl) {
  Beta out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(beta[i], tpl.beta_min()[i]), tpl.beta_max()[i]);
  return out;
}

/// Clip with a zero derivative outside the limits; passes through on them.
/// A locked component (lo == hi) is constant.
template <class T>
T clip_component(const T& value, double lo, double hi) {
  const double v = scalar_value(value);
  if (v < lo || lo == hi) return T(lo);
  if (v > hi) return T(hi);
  return value;
}

inline Beta mean_beta(const KinematicTemplate& tpl) {
  Beta out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (tpl.beta_min()[i] + tpl.beta_max()[i]);
  return out;
}

inline bool within_limits(const Beta& beta, const KinematicTemplate& tpl) {
  for (std::size_t i = 0; i < beta.size(); ++i)
    if (!(beta[i] >= tpl.beta_min()[i] && beta[i] <= tpl.beta_max()[i])) return false;
  return true;
}

inline constexpr double kMinReferenceLength = 1e-9;

inline CanonicalPose canonicalize(const Keypoints3D& kp, const KinematicTemplate& tpl) {
  const auto [a, b] = tpl.reference_bone();
  const double len = (kp[b] - kp[a]).norm();
  if (!(len >= kMinReferenceLength))
    throw DegeneratePoseError("canonicalize: reference bone length " + std::to_string(len) + " is degenerate");
  CanonicalPose out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = (kp[j] - kp[0]) / len;
  return out;
}

inline Keypoints3D mirror(const Keypoints3D& kp) {
  Keypoints3D out = kp;
  for (auto& p : out.p) p.x() = -p.x();
  return out;
}

inline CanonicalPose mirror(const CanonicalPose& cp) {
  CanonicalPose out = cp;
  for (auto& p : out.p) p.x() = -p.x();
  return out;
}

/// Reflection x -> -x. Conjugating a rotation by the reflection keeps the
/// x component of its axis-angle and negates y and z; beta is intrinsic.
inline HandParams mirror(const HandParams& params) {
  HandParams out = params;
  out.gamma1.y() = -out.gamma1.y();
  out.gamma1.z() = -out.gamma1.z();
  out.gamma2.x() = -out.gamma2.x();
  return out;
}

}  // namespace handfit
