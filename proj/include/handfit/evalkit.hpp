#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "handfit/kinematics.hpp"

namespace handfit {

enum class Alignment { None, Root, RootScale };

inline Alignment parse_alignment(const std::string& s) {
  if (s == "none") return Alignment::None;
  if (s == "root") return Alignment::Root;
  if (s == "root+scale") return Alignment::RootScale;
  throw InvalidArgument("unknown alignment '" + s + "'");
}

/// Mean per-joint end point error in centimeters.
///
/// Root alignment translates the prediction so its root coincides with the
/// ground-truth root. Root+scale first rescales the root-relative prediction
/// so its reference bone has the ground-truth length.
inline double epe(std::span<const Eigen::Vector3d> pred, std::span<const Eigen::Vector3d> gt, Alignment alignment,
                  std::pair<int, int> reference_bone = {0, 9}) {
  if (pred.size() != gt.size() || pred.empty()) throw InvalidArgument("epe: joint counts differ or are zero");
  double scale = 1.0;
  if (alignment == Alignment::RootScale) {
    const auto [a, b] = reference_bone;
    const double lp = (pred[static_cast<std::size_t>(b)] - pred[static_cast<std::size_t>(a)]).norm();
    const double lg = (gt[static_cast<std::size_t>(b)] - gt[static_cast<std::size_t>(a)]).norm();
    if (!(lp > 0.0)) throw DegeneratePoseError("epe: predicted reference bone has zero length");
    scale = lg / lp;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (alignment == Alignment::None)
      sum += (pred[j] - gt[j]).norm();
    else
      sum += ((pred[j] - pred[0]) * scale - (gt[j] - gt[0])).norm();
  }
  return 100.0 * sum / static_cast<double>(pred.size());
}

inline double epe(const Keypoints3D& pred, const Keypoints3D& gt, Alignment alignment,
                  std::pair<int, int> reference_bone = {0, 9}) {
  return epe(std::span<const Eigen::Vector3d>(pred.p), std::span<const Eigen::Vector3d>(gt.p), alignment,
             reference_bone);
}

struct PckCurve {
  std::string units;
  std::vector<double> thresholds;
  std::vector<double> fractions;
};

inline std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points < 2) throw InvalidArgument("grid needs at least two points");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

/// Fraction of errors <= t for each threshold t.
inline PckCurve pck_curve(std::span<const double> errors, std::span<const double> thresholds, std::string units = "") {
  if (errors.empty()) throw InvalidArgument("pck_curve: no errors");
  if (thresholds.empty()) throw InvalidArgument("pck_curve: no thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw InvalidArgument("pck_curve: thresholds must increase");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  PckCurve c;
  c.units = std::move(units);
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  c.fractions.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    c.fractions.push_back(static_cast<double>(n) / static_cast<double>(sorted.size()));
  }
  return c;
}

/// Trapezoidal area under the curve divided by the threshold span.
inline double auc(const PckCurve& c) {
  if (c.thresholds.size() < 2 || c.thresholds.size() != c.fractions.size())
    throw InvalidArgument("auc: curve needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < c.thresholds.size(); ++i)
    area += 0.5 * (c.fractions[i] + c.fractions[i - 1]) * (c.thresholds[i] - c.thresholds[i - 1]);
  return area / (c.thresholds.back() - c.thresholds.front());
}

struct SphericalError {
  double angle_deg = 0.0;
  double radius_cm = 0.0;
};

/// Direction and distance error of a root position seen from the camera.
inline SphericalError spherical_errors(const Eigen::Vector3d& pred_root, const Eigen::Vector3d& gt_root) {
  const double np = pred_root.norm();
  const double ng = gt_root.norm();
  if (!(np > 0.0) || !(ng > 0.0)) throw DegeneratePoseError("spherical_errors: zero-norm root");
  // Same angle as acos of the normalized dot product; atan2 stays accurate
  // near zero where acos is ill-conditioned.
  const double angle = std::atan2(pred_root.cross(gt_root).norm(), pred_root.dot(gt_root));
  return {angle * 180.0 / M_PI, 100.0 * std::abs(np - ng)};
}

/// Distance between two parameter vectors: Euclidean over beta and gamma2
/// (meters) combined with the geodesic angle between the two orientations,
/// so equivalent axis-angle representations count as identical.
inline double parameter_distance(const HandParams& a, const HandParams& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.beta.size(); ++i) sq += (a.beta[i] - b.beta[i]) * (a.beta[i] - b.beta[i]);
  auto rot = [](const Eigen::Vector3d& w) {
    const double n = w.norm();
    return n > 0.0 ? Eigen::AngleAxisd(n, w / n).toRotationMatrix() : Eigen::Matrix3d::Identity();
  };
  const double angle = Eigen::AngleAxisd(rot(a.gamma1).transpose() * rot(b.gamma1)).angle();
  sq += angle * angle + (a.gamma2 - b.gamma2).squaredNorm();
  return std::sqrt(sq);
}

/// Mean parameter_distance between consecutive entries.
inline double mean_parameter_change(std::span<const HandParams> sequence) {
  if (sequence.size() < 2) throw InvalidArgument("mean_parameter_change: need at least two entries");
  double sum = 0.0;
  for (std::size_t i = 1; i < sequence.size(); ++i) sum += parameter_distance(sequence[i], sequence[i - 1]);
  return sum / static_cast<double>(sequence.size() - 1);
}

/// Default threshold grids.
struct MetricGrids {
  std::vector<double> pck_2d_px = linear_grid(0.0, 100.0, 101);
  std::vector<double> pck_3d_canonical = linear_grid(0.0, 1.0, 101);
  std::vector<double> angle_deg = linear_grid(0.0, 30.0, 61);
  std::vector<double> radius_cm = linear_grid(0.0, 20.0, 41);
};

}  // namespace handfit
