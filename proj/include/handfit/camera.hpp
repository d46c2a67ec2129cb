#pragma once

#include <bitset>
#include <cmath>
#include <string>

#include "handfit/kinematics.hpp"

namespace handfit {

/// Pinhole intrinsics, no distortion.
struct Camera {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 400.0;
  double cy = 224.0;
  int width = 800;
  int height = 448;
  double z_min = 0.01;

  bool operator==(const Camera&) const = default;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw InvalidArgument("camera: focal lengths must be positive");
    if (!(z_min > 0.0)) throw InvalidArgument("camera: z_min must be positive");
    if (width <= 0 || height <= 0) throw InvalidArgument("camera: image size must be positive");
  }

  bool inside(const Eigen::Vector2d& uv) const {
    return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() <= width - 1 && uv.y() <= height - 1;
  }
};

/// Pixel observations with the set of annotated joints.
struct Keypoints2D {
  std::array<Eigen::Vector2d, kNumJoints> uv = zero_joints<Eigen::Vector2d>();
  std::bitset<kNumJoints> annotated{};

  Eigen::Vector2d& operator[](int i) { return uv[static_cast<std::size_t>(i)]; }
  const Eigen::Vector2d& operator[](int i) const { return uv[static_cast<std::size_t>(i)]; }
  bool has(int i) const { return annotated.test(static_cast<std::size_t>(i)); }
  void set(int i, const Eigen::Vector2d& p) {
    uv[static_cast<std::size_t>(i)] = p;
    annotated.set(static_cast<std::size_t>(i));
  }
  void unset(int i) {
    uv[static_cast<std::size_t>(i)].setZero();
    annotated.reset(static_cast<std::size_t>(i));
  }
  bool complete() const { return annotated.all(); }
  bool operator==(const Keypoints2D&) const = default;
};

template <class T>
Vec2<T> project_point(const Vec3<T>& p, const Camera& cam, int joint = -1) {
  const double z = scalar_value(p[2]);
  if (!(z >= cam.z_min)) throw BehindCameraError(joint, z);
  const T inv_z = T(1.0) / p[2];
  return Vec2<T>(p[0] * inv_z * cam.fx + T(cam.cx), p[1] * inv_z * cam.fy + T(cam.cy));
}

inline Keypoints2D project(const Keypoints3D& kp, const Camera& cam) {
  Keypoints2D out;
  for (int j = 0; j < kNumJoints; ++j) out.set(j, project_point<double>(kp[j], cam, j));
  return out;
}

/// Horizontal image flip: u -> width - 1 - u on annotated joints.
inline Keypoints2D mirror(const Keypoints2D& kp, int image_width) {
  if (image_width <= 0) throw InvalidArgument("mirror: image width must be positive");
  Keypoints2D out = kp;
  for (int j = 0; j < kNumJoints; ++j)
    if (out.has(j)) out[j].x() = (image_width - 1) - out[j].x();
  return out;
}

/// Intrinsics of the horizontally flipped image.
inline Camera mirror(const Camera& cam) {
  Camera out = cam;
  out.cx = (cam.width - 1) - cam.cx;
  return out;
}

// Side-aware wrappers: the fitting core works on right hands only.
inline Keypoints2D mirror(const Keypoints2D& kp, HandSide side, int image_width) {
  return side == HandSide::Left ? mirror(kp, image_width) : kp;
}
inline Camera mirror(const Camera& cam, HandSide side) { return side == HandSide::Left ? mirror(cam) : cam; }
inline HandParams mirror(const HandParams& p, HandSide side) { return side == HandSide::Left ? mirror(p) : p; }
inline Keypoints3D mirror(const Keypoints3D& kp, HandSide side) { return side == HandSide::Left ? mirror(kp) : kp; }
inline CanonicalPose mirror(const CanonicalPose& cp, HandSide side) {
  return side == HandSide::Left ? mirror(cp) : cp;
}

/// 3D keypoints of a hand of the given side. Left hands are the reflection
/// of the right-hand model evaluated at the mirrored parameters.
inline Keypoints3D hand_keypoints(const HandParams& params, HandSide side, const KinematicTemplate& tpl) {
  if (side == HandSide::Right) return forward_kinematics(params, tpl);
  return mirror(forward_kinematics(mirror(params), tpl));
}

}  // namespace handfit
