#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "handfit/workbench/json_io.hpp"

namespace handfit::workbench {

enum class ReviewStatus { Unreviewed, Accepted, Rejected };

inline const char* to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Unreviewed: return "unreviewed";
    case ReviewStatus::Accepted: return "accepted";
    case ReviewStatus::Rejected: return "rejected";
  }
  return "?";
}

inline std::optional<ReviewStatus> parse_review_status(const std::string& s) {
  if (s == "unreviewed") return ReviewStatus::Unreviewed;
  if (s == "accepted") return ReviewStatus::Accepted;
  if (s == "rejected") return ReviewStatus::Rejected;
  return std::nullopt;
}

/// One hand in one image. Units: pixels for 2D, meters for 3D and gamma2,
/// radians for beta and gamma1. Joint order follows the template (wrist,
/// then thumb, index, middle, ring, pinky from base to tip).
struct DatasetInstance {
  std::optional<std::string> image;  // null for synthetic instances
  HandSide side = HandSide::Right;
  Keypoints2D keypoints_2d;
  std::optional<Camera> camera;
  std::optional<Keypoints3D> keypoints_3d;
  std::optional<CanonicalPose> canonical;
  std::optional<HandParams> params;
  ReviewStatus status = ReviewStatus::Unreviewed;
  // Every review decision in order; the last entry equals `status`.
  std::vector<ReviewStatus> status_history;
  std::optional<std::string> failure;  // why conversion failed

  bool complete() const { return keypoints_2d.complete(); }

  void review(ReviewStatus s) {
    status = s;
    status_history.push_back(s);
  }

  bool operator==(const DatasetInstance&) const = default;
};

inline json to_json(const DatasetInstance& d) {
  json j;
  j["image"] = d.image ? json(*d.image) : json(nullptr);
  j["side"] = to_string(d.side);
  j["keypoints_2d"] = to_json(d.keypoints_2d);
  if (d.camera) j["camera"] = to_json(*d.camera);
  if (d.keypoints_3d) j["keypoints_3d"] = joints_json(d.keypoints_3d->p);
  if (d.canonical) j["canonical"] = joints_json(d.canonical->p);
  if (d.params) j["params"] = to_json(*d.params);
  j["status"] = to_string(d.status);
  json history = json::array();
  for (auto s : d.status_history) history.push_back(to_string(s));
  j["status_history"] = history;
  if (d.failure) j["failure"] = *d.failure;
  return j;
}

inline DatasetInstance instance_from_json(const json& j, const Where& w) {
  check_keys(j, {"image", "side", "keypoints_2d", "camera", "keypoints_3d", "canonical", "params", "status",
                 "status_history", "failure"},
             w);
  DatasetInstance d;
  if (j.contains("image") && !j["image"].is_null()) d.image = read_string(j["image"], w / "image");
  if (j.contains("side")) {
    const auto s = read_string(j["side"], w / "side");
    if (s != "left" && s != "right") (w / "side").fail("expected 'left' or 'right'");
    d.side = parse_side(s);
  }
  d.keypoints_2d = keypoints2d_from_json(require(j, "keypoints_2d", w), w / "keypoints_2d");
  if (j.contains("camera")) d.camera = camera_from_json(j["camera"], w / "camera");
  if (j.contains("keypoints_3d")) d.keypoints_3d = Keypoints3D{joints_from_json(j["keypoints_3d"], w / "keypoints_3d")};
  if (j.contains("canonical")) d.canonical = CanonicalPose{joints_from_json(j["canonical"], w / "canonical")};
  if (j.contains("params")) d.params = params_from_json(j["params"], w / "params");
  if (j.contains("status")) {
    const auto s = parse_review_status(read_string(j["status"], w / "status"));
    if (!s) (w / "status").fail("expected unreviewed, accepted or rejected");
    d.status = *s;
  }
  if (j.contains("status_history")) {
    const auto& h = j["status_history"];
    if (!h.is_array()) (w / "status_history").fail("expected an array");
    for (std::size_t i = 0; i < h.size(); ++i) {
      const auto s = parse_review_status(read_string(h[i], (w / "status_history")[i]));
      if (!s) (w / "status_history")[i].fail("expected unreviewed, accepted or rejected");
      d.status_history.push_back(*s);
    }
    if (!d.status_history.empty() && d.status_history.back() != d.status)
      (w / "status").fail("does not match the last status_history entry");
  }
  if (j.contains("failure")) d.failure = read_string(j["failure"], w / "failure");
  return d;
}

enum class DatasetFormat { Canonical, Simple2D };

inline DatasetFormat parse_dataset_format(const std::string& s) {
  if (s == "canonical") return DatasetFormat::Canonical;
  if (s == "simple-2d") return DatasetFormat::Simple2D;
  throw InvalidArgument("unknown dataset format '" + s + "'");
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

inline double parse_double(const std::string& s, const Where& w) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    w.fail("expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) w.fail("expected a finite number, got '" + s + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// simple-2d: comma separated `image,side,u0,v0,...,u20,v20`; an empty
/// (u, v) pair marks an unannotated joint, an empty image field a synthetic
/// instance. Blank lines and lines starting with '#' are ignored.
inline DatasetInstance simple2d_from_line(const std::string& line, std::size_t line_no) {
  const auto f = detail::split_csv(line);
  const Where w{line_no, ""};
  if (f.size() != 2 + 2 * kNumJoints)
    w.fail("expected " + std::to_string(2 + 2 * kNumJoints) + " comma separated fields, got " +
           std::to_string(f.size()));
  DatasetInstance d;
  const auto image = detail::trim(f[0]);
  if (!image.empty()) d.image = image;
  const auto side = detail::trim(f[1]);
  if (side != "left" && side != "right") (w / "side").fail("expected 'left' or 'right', got '" + side + "'");
  d.side = parse_side(side);
  for (int j = 0; j < kNumJoints; ++j) {
    const auto u = detail::trim(f[static_cast<std::size_t>(2 + 2 * j)]);
    const auto v = detail::trim(f[static_cast<std::size_t>(3 + 2 * j)]);
    const Where wj = w / ("joint" + std::to_string(j));
    if (u.empty() && v.empty()) continue;
    if (u.empty() || v.empty()) wj.fail("only one of u, v given");
    d.keypoints_2d.set(j, Eigen::Vector2d(detail::parse_double(u, wj / "u"), detail::parse_double(v, wj / "v")));
  }
  return d;
}

inline std::string simple2d_line(const DatasetInstance& d) {
  std::string s = d.image.value_or("");
  s += ",";
  s += to_string(d.side);
  for (int j = 0; j < kNumJoints; ++j) {
    s += ",";
    if (d.keypoints_2d.has(j)) s += detail::format_double(d.keypoints_2d[j].x());
    s += ",";
    if (d.keypoints_2d.has(j)) s += detail::format_double(d.keypoints_2d[j].y());
  }
  return s;
}

inline std::vector<DatasetInstance> parse_dataset(std::istream& in, DatasetFormat format) {
  std::vector<DatasetInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || (format == DatasetFormat::Simple2D && t[0] == '#')) continue;
    if (format == DatasetFormat::Simple2D) {
      out.push_back(simple2d_from_line(line, line_no));
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, "", std::string("invalid JSON: ") + e.what());
    }
    out.push_back(instance_from_json(j, Where{line_no, ""}));
  }
  return out;
}

inline std::vector<DatasetInstance> import_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset '" + path + "'");
  return parse_dataset(in, format);
}

/// Indices of instances lacking a full 21-joint annotation.
inline std::vector<std::size_t> incomplete_instances(const std::vector<DatasetInstance>& v) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!v[i].complete()) out.push_back(i);
  return out;
}

inline void write_dataset(std::ostream& out, const std::vector<DatasetInstance>& v, DatasetFormat format) {
  for (const auto& d : v) out << (format == DatasetFormat::Canonical ? to_json(d).dump() : simple2d_line(d)) << '\n';
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a half-written dataset.
inline void export_dataset(const std::string& path, const std::vector<DatasetInstance>& v,
                           DatasetFormat format = DatasetFormat::Canonical) {
  const std::filesystem::path target(path);
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write dataset '" + path + "'");
    write_dataset(out, v, format);
    if (!out) throw Error("failed writing dataset '" + path + "'");
  }
  std::filesystem::rename(tmp, target);
}

/// Largest pixel distance between stored 2D keypoints and the projection of
/// the stored parameters, over annotated joints. Empty when parameters or
/// camera are missing.
inline std::optional<double> reprojection_inconsistency(const DatasetInstance& d, const KinematicTemplate& tpl) {
  if (!d.params || !d.camera || d.keypoints_2d.annotated.none()) return std::nullopt;
  const Keypoints2D uv = project(hand_keypoints(*d.params, d.side, tpl), *d.camera);
  double worst = 0.0;
  for (int j = 0; j < kNumJoints; ++j)
    if (d.keypoints_2d.has(j)) worst = std::max(worst, (uv[j] - d.keypoints_2d[j]).norm());
  return worst;
}

inline constexpr double kConsistencyPx = 2.0;

/// Indices whose stored parameters disagree with their 2D keypoints by more
/// than `tolerance` pixels (or put joints behind the camera).
inline std::vector<std::size_t> inconsistent_instances(const std::vector<DatasetInstance>& v,
                                                       const KinematicTemplate& tpl,
                                                       double tolerance = kConsistencyPx) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    try {
      const auto e = reprojection_inconsistency(v[i], tpl);
      if (e && !(*e <= tolerance)) out.push_back(i);
    } catch (const BehindCameraError&) {
      out.push_back(i);
    }
  }
  return out;
}

/// Instance built from a generated sample: every field filled.
inline DatasetInstance instance_from_sample(const HandParams& p, const Keypoints3D& kp, const CanonicalPose& c,
                                            const Keypoints2D& q, const Camera& cam) {
  DatasetInstance d;
  d.keypoints_2d = q;
  d.camera = cam;
  d.keypoints_3d = kp;
  d.canonical = c;
  d.params = p;
  return d;
}

}  // namespace handfit::workbench
