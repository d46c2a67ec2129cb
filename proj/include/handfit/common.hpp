#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <ceres/jet.h>

namespace handfit {

inline constexpr int kNumJoints = 21;
inline constexpr int kNumFingers = 5;
inline constexpr int kNumArticulated = 15;
inline constexpr int kNumBeta = 45;
inline constexpr int kNumShape = 10;
inline constexpr int kNumBones = 20;
// beta (45) + gamma1 (3) + gamma2 (3); alpha is never optimized.
inline constexpr int kNumOpt = 51;
inline constexpr int kGamma1Offset = 45;
inline constexpr int kGamma2Offset = 48;

template <class T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using Mat3 = Eigen::Matrix<T, 3, 3>;
template <class T>
using JointArray = std::array<Vec3<T>, kNumJoints>;

/// Per-joint array with every entry zeroed (Eigen leaves defaults uninitialized).
template <class V>
std::array<V, kNumJoints> zero_joints() {
  std::array<V, kNumJoints> a;
  for (auto& v : a) v.setZero();
  return a;
}

using Beta = std::array<double, kNumBeta>;
using OptVector = Eigen::Matrix<double, kNumOpt, 1>;
using GradJet = ceres::Jet<double, kNumOpt>;

inline double scalar_value(double x) { return x; }
template <class T, int N>
double scalar_value(const ceres::Jet<T, N>& x) {
  return x.a;
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class DegeneratePoseError : public Error {
 public:
  using Error::Error;
};

class BehindCameraError : public Error {
 public:
  BehindCameraError(int joint, double depth)
      : Error("joint " + std::to_string(joint) + " is behind the camera (z = " +
              std::to_string(depth) + ")"),
        joint_(joint),
        depth_(depth) {}

  int joint() const noexcept { return joint_; }
  double depth() const noexcept { return depth_; }

 private:
  int joint_;
  double depth_;
};

/// Malformed input file. `line` is 1-based, 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : Error(format(line, field, what)), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(std::size_t line, const std::string& field,
                            const std::string& what) {
    std::string msg;
    if (line > 0) msg += "line " + std::to_string(line) + ": ";
    if (!field.empty()) msg += "field '" + field + "': ";
    return msg + what;
  }

  std::size_t line_;
  std::string field_;
};

}  // namespace handfit
