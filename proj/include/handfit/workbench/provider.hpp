#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>

#include "handfit/workbench/dataset.hpp"

namespace handfit::workbench {

/// A canonical-pose source failed for one instance.
class ProviderError : public Error {
 public:
  using Error::Error;
};

/// No estimator is configured for this operation.
class NotImplementedError : public Error {
 public:
  using Error::Error;
};

/// Source of canonical poses (root-relative, reference-bone normalized) in
/// the instance's own hand-side convention.
class CanonicalProvider {
 public:
  virtual ~CanonicalProvider() = default;
  virtual std::string name() const = 0;
  virtual CanonicalPose estimate(const DatasetInstance& instance, std::size_t index) const = 0;
};

/// Uses the instance's stored canonical pose, else canonicalizes its stored
/// 3D keypoints.
class GroundTruthProvider final : public CanonicalProvider {
 public:
  explicit GroundTruthProvider(const KinematicTemplate& tpl) : tpl_(&tpl) {}
  std::string name() const override { return "ground-truth"; }
  CanonicalPose estimate(const DatasetInstance& d, std::size_t) const override {
    if (d.canonical) return *d.canonical;
    if (d.keypoints_3d) return canonicalize(*d.keypoints_3d, *tpl_);
    throw ProviderError("instance has no ground-truth 3D pose");
  }

 private:
  const KinematicTemplate* tpl_;
};

/// Precomputed poses: JSON Lines of {"index": i, "canonical": [[x, y, z] x 21]}.
class FileProvider final : public CanonicalProvider {
 public:
  explicit FileProvider(const std::string& path) : path_(path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open canonical pose file '" + path + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(n, "", std::string("invalid JSON: ") + e.what());
      }
      const Where w{n, ""};
      check_keys(j, {"index", "canonical"}, w);
      const int idx = read_int(require(j, "index", w), w / "index");
      if (idx < 0) (w / "index").fail("must be >= 0");
      poses_[static_cast<std::size_t>(idx)] = CanonicalPose{joints_from_json(require(j, "canonical", w), w / "canonical")};
    }
  }
  std::string name() const override { return "file:" + path_; }
  CanonicalPose estimate(const DatasetInstance&, std::size_t index) const override {
    const auto it = poses_.find(index);
    if (it == poses_.end()) throw ProviderError("no canonical pose for instance " + std::to_string(index));
    return it->second;
  }

 private:
  std::string path_;
  std::map<std::size_t, CanonicalPose> poses_;
};

/// Runs an external estimator per instance. The instance JSON is fed on
/// stdin; stdout must hold {"canonical": [[x, y, z] x 21]}.
class CommandProvider final : public CanonicalProvider {
 public:
  explicit CommandProvider(std::string command) : command_(std::move(command)) {}
  std::string name() const override { return "command:" + command_; }
  CanonicalPose estimate(const DatasetInstance& d, std::size_t index) const override {
    std::random_device rd;
    const auto input = std::filesystem::temp_directory_path() /
                       ("handfit_provider_" + std::to_string(index) + "_" + std::to_string(rd()) + ".json");
    {
      std::ofstream out(input);
      if (!out) throw ProviderError("cannot write provider input file");
      out << to_json(d).dump() << '\n';
    }
    const std::string cmd = command_ + " < '" + input.string() + "'";
    std::string output;
    int status = -1;
    if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
      char buf[4096];
      std::size_t n;
      while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
      status = ::pclose(pipe);
    }
    std::filesystem::remove(input);
    if (status != 0) throw ProviderError("provider command failed with status " + std::to_string(status));
    try {
      const json j = json::parse(output);
      return CanonicalPose{joints_from_json(require(j, "canonical", Where{}), Where{0, "canonical"})};
    } catch (const json::parse_error& e) {
      throw ProviderError(std::string("provider output is not JSON: ") + e.what());
    } catch (const ParseError& e) {
      throw ProviderError(std::string("provider output: ") + e.what());
    }
  }

 private:
  std::string command_;
};

class UnconfiguredProvider final : public CanonicalProvider {
 public:
  std::string name() const override { return "none"; }
  CanonicalPose estimate(const DatasetInstance&, std::size_t) const override {
    throw NotImplementedError("no canonical pose estimator configured");
  }
};

/// Builds a provider from "ground-truth", "none", "file:PATH" or "command:CMD".
inline std::unique_ptr<CanonicalProvider> make_provider(const std::string& spec, const KinematicTemplate& tpl) {
  if (spec == "ground-truth") return std::make_unique<GroundTruthProvider>(tpl);
  if (spec == "none") return std::make_unique<UnconfiguredProvider>();
  if (spec.rfind("file:", 0) == 0) return std::make_unique<FileProvider>(spec.substr(5));
  if (spec.rfind("command:", 0) == 0) return std::make_unique<CommandProvider>(spec.substr(8));
  throw InvalidArgument("unknown provider '" + spec + "'");
}

}  // namespace handfit::workbench
