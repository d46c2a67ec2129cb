#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "handfit/workbench/provider.hpp"

namespace handfit::workbench {

struct ConversionReport {
  std::vector<DatasetInstance> instances;
  std::vector<std::size_t> fitted;
  std::vector<std::size_t> failed;   // provider or fit errors, reason in `failure`
  std::vector<std::size_t> skipped;  // incomplete 2D annotation, left untouched
};

/// Fits one instance in place. Throws on provider or fit failure.
inline void convert_instance(DatasetInstance& d, std::size_t index, const CanonicalProvider& provider,
                             const KinematicTemplate& tpl, const Camera& default_camera, const FitConfig& config) {
  const CanonicalPose p_star = provider.estimate(d, index);
  const Camera cam = d.camera.value_or(default_camera);
  const auto r = fit_unsupervised(d.keypoints_2d, p_star, cam, tpl, config, d.side);
  d.camera = cam;
  d.params = r.params;
  d.keypoints_3d = hand_keypoints(r.params, d.side, tpl);
  if (!d.canonical) d.canonical = p_star;
  d.failure.reset();
}

/// Lifts 2D instances to 3D with the unsupervised schedule, in parallel.
/// Review status is left as is: results await manual validation.
inline ConversionReport convert_dataset(std::vector<DatasetInstance> instances, const CanonicalProvider& provider,
                                        const KinematicTemplate& tpl, const Camera& default_camera,
                                        const FitConfig& config, unsigned threads = 0) {
  ConversionReport report;
  const std::size_t n = instances.size();
  enum class Outcome { Fitted, Failed, Skipped };
  std::vector<Outcome> outcome(n, Outcome::Skipped);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      auto& d = instances[i];
      if (!d.complete()) continue;
      try {
        convert_instance(d, i, provider, tpl, default_camera, config);
        outcome[i] = Outcome::Fitted;
      } catch (const std::exception& e) {
        d.failure = e.what();
        outcome[i] = Outcome::Failed;
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  pool.clear();

  for (std::size_t i = 0; i < n; ++i) {
    switch (outcome[i]) {
      case Outcome::Fitted: report.fitted.push_back(i); break;
      case Outcome::Failed: report.failed.push_back(i); break;
      case Outcome::Skipped: report.skipped.push_back(i); break;
    }
  }
  report.instances = std::move(instances);
  return report;
}

struct ReviewSummary {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t unreviewed = 0;

  /// Accepted over reviewed; 0 when nothing was reviewed.
  double acceptance_rate() const {
    const auto reviewed = accepted + rejected;
    return reviewed ? static_cast<double>(accepted) / static_cast<double>(reviewed) : 0.0;
  }
};

inline ReviewSummary review_summary(const std::vector<DatasetInstance>& v) {
  ReviewSummary s;
  for (const auto& d : v) {
    switch (d.status) {
      case ReviewStatus::Accepted: ++s.accepted; break;
      case ReviewStatus::Rejected: ++s.rejected; break;
      case ReviewStatus::Unreviewed: ++s.unreviewed; break;
    }
  }
  return s;
}

}  // namespace handfit::workbench
