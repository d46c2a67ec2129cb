#pragma once

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "handfit/workbench/service.hpp"

namespace handfit::workbench {

/// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 some batch
/// items failed (the rest were still processed).
enum ExitCode { kExitOk = 0, kExitError = 1, kExitUsage = 2, kExitPartial = 3 };

namespace cli {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
};

inline void write_text(const std::string& path, const std::string& text) {
  const auto tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw InvalidArgument("cannot write '" + path + "'");
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

inline void require_out(const Globals& g) {
  if (g.out.empty()) throw InvalidArgument("--out is required for this command");
}

inline json curve_json(const PckCurve& c) {
  return {{"units", c.units}, {"thresholds", c.thresholds}, {"fractions", c.fractions}, {"auc", auc(c)}};
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Metric report comparing predicted instances against ground truth, index
/// by index.
inline json evaluate_instances(const std::vector<DatasetInstance>& pred, const std::vector<DatasetInstance>& gt,
                               const KinematicTemplate& tpl, const WorkbenchConfig& cfg, std::string* csv) {
  if (pred.size() != gt.size())
    throw InvalidArgument("prediction and ground truth have different instance counts (" + std::to_string(pred.size()) +
                          " vs " + std::to_string(gt.size()) + ")");
  std::vector<double> epes, err2d, err3d, angles, radii;
  std::vector<std::size_t> skipped;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto& p = pred[i];
    const auto& g = gt[i];
    if (!p.keypoints_3d || !g.keypoints_3d) {
      skipped.push_back(i);
      continue;
    }
    epes.push_back(epe(*p.keypoints_3d, *g.keypoints_3d, Alignment::RootScale, tpl.reference_bone()));
    const CanonicalPose cp = canonicalize(*p.keypoints_3d, tpl);
    const CanonicalPose cg = g.canonical ? *g.canonical : canonicalize(*g.keypoints_3d, tpl);
    for (int j = 0; j < kNumJoints; ++j) err3d.push_back((cp[j] - cg[j]).norm());
    if (const auto cam = g.camera ? g.camera : p.camera) {
      const Keypoints2D uv = project(*p.keypoints_3d, *cam);
      for (int j = 0; j < kNumJoints; ++j)
        if (g.keypoints_2d.has(j)) err2d.push_back((uv[j] - g.keypoints_2d[j]).norm());
    }
    const auto sph = spherical_errors((*p.keypoints_3d)[0], (*g.keypoints_3d)[0]);
    angles.push_back(sph.angle_deg);
    radii.push_back(sph.radius_cm);
  }
  json report;
  report["count"] = pred.size();
  report["evaluated"] = epes.size();
  report["skipped"] = skipped;
  if (epes.empty()) return report;
  report["epe_cm"] = {{"alignment", "root+scale"},
                      {"mean", mean_of(epes)},
                      {"median", percentile(epes, 0.5)},
                      {"p95", percentile(epes, 0.95)}};
  json curves;
  const auto add = [&](const char* name, const std::vector<double>& errors, const GridSpec& grid, const char* units) {
    if (errors.empty()) return;
    const auto t = grid.values();
    curves[name] = curve_json(pck_curve(errors, t, units));
  };
  add("2d", err2d, cfg.metrics.pck_2d_px, "px");
  add("3d_canonical", err3d, cfg.metrics.pck_3d_canonical, "canonical-units");
  add("root_angle", angles, cfg.metrics.angle_deg, "degrees");
  add("root_radius", radii, cfg.metrics.radius_cm, "cm");
  report["pck"] = curves;
  if (csv) {
    *csv = "metric,units,threshold,fraction\n";
    for (const auto& [name, c] : curves.items())
      for (std::size_t k = 0; k < c["thresholds"].size(); ++k)
        *csv += name + "," + c["units"].get<std::string>() + "," +
                detail::format_double(c["thresholds"][k].get<double>()) + "," +
                detail::format_double(c["fractions"][k].get<double>()) + "\n";
  }
  return report;
}

}  // namespace cli

/// Command-line entry point. Output files are written atomically; a summary
/// goes to `out`, diagnostics to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hand model fitting workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  cli::Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output file");

  // bank
  std::size_t bank_b = 4096, bank_g = 4096;
  auto* bank = app.add_subcommand("bank", "Synthesize articulation and global pose banks");
  bank->add_option("--articulations", bank_b, "Rows of B")->check(CLI::PositiveNumber);
  bank->add_option("--globals", bank_g, "Rows of G")->check(CLI::PositiveNumber);

  // sample
  std::string viewpoint = "ego";
  std::size_t n = 100;
  auto* sample = app.add_subcommand("sample", "Generate a synthetic test set");
  sample->add_option("--viewpoint", viewpoint, "ego or third")->check(CLI::IsMember({"ego", "third"}));
  sample->add_option("--n", n, "Number of poses")->check(CLI::PositiveNumber);

  // sequence
  std::size_t frames = 60;
  double noise_px = 1.0, noise_canonical = 0.02;
  auto* sequence = app.add_subcommand("sequence", "Generate an interpolated sequence with observation noise");
  sequence->add_option("--frames", frames, "Frame count")->check(CLI::Range(2, 1000000));
  sequence->add_option("--viewpoint", viewpoint, "ego or third")->check(CLI::IsMember({"ego", "third"}));
  sequence->add_option("--noise-px", noise_px, "2D noise sigma (px)")->check(CLI::NonNegativeNumber);
  sequence->add_option("--noise-canonical", noise_canonical, "Canonical noise sigma")->check(CLI::NonNegativeNumber);

  // convert
  std::string in_path, format = "canonical", provider_spec;
  auto* convert = app.add_subcommand("convert", "Lift 2D instances to 3D with the unsupervised fit");
  convert->add_option("--in", in_path, "Input dataset")->required()->check(CLI::ExistingFile);
  convert->add_option("--format", format, "canonical or simple-2d")->check(CLI::IsMember({"canonical", "simple-2d"}));
  convert->add_option("--provider", provider_spec, "ground-truth | none | file:PATH | command:CMD");

  // fit
  std::size_t index = 0;
  std::string mode = "unsupervised";
  auto* fit = app.add_subcommand("fit", "Fit a single instance");
  fit->add_option("--in", in_path, "Input dataset")->required()->check(CLI::ExistingFile);
  fit->add_option("--index", index, "Instance index");
  fit->add_option("--mode", mode, "supervised or unsupervised")->check(CLI::IsMember({"supervised", "unsupervised"}));
  fit->add_option("--provider", provider_spec, "Canonical pose provider");
  fit->add_option("--format", format, "canonical or simple-2d")->check(CLI::IsMember({"canonical", "simple-2d"}));

  // track
  bool compare_cold = false;
  auto* track = app.add_subcommand("track", "Track a sequence frame by frame with warm starts");
  track->add_option("--in", in_path, "Sequence dataset")->required()->check(CLI::ExistingFile);
  track->add_option("--provider", provider_spec, "Canonical pose provider");
  track->add_flag("--compare-cold", compare_cold, "Also fit every frame independently and compare smoothness");

  // eval
  std::string pred_path, gt_path, csv_path;
  auto* eval = app.add_subcommand("eval", "Metric report of predictions against ground truth");
  eval->add_option("--pred", pred_path, "Predicted dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt_path, "Ground-truth dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--csv", csv_path, "Write PCK curves as CSV");

  // serve
  std::string data_root, host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  serve_cmd->add_option("--data-root", data_root, "Directory holding the dataset file and images")->required();
  serve_cmd->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    WorkbenchConfig cfg = g.config_path.empty() ? WorkbenchConfig{} : load_config(g.config_path);
    const KinematicTemplate tpl = config_template(cfg);
    const std::string provider_name = provider_spec.empty() ? cfg.provider : provider_spec;

    if (bank->parsed()) {
      cli::require_out(g);
      const auto d = synth_distribution(g.seed, bank_b, bank_g, tpl);
      save_distribution(d, g.out);
      out << json{{"articulations", d.articulations.size()}, {"globals", d.globals.size()}, {"out", g.out}}.dump()
          << "\n";
      return kExitOk;
    }

    if (sample->parsed()) {
      cli::require_out(g);
      const auto dist = config_distribution(cfg, tpl);
      const auto set = generate_testset(dist, parse_viewpoint(viewpoint), n, g.seed, cfg.camera, tpl);
      std::vector<DatasetInstance> v;
      v.reserve(set.samples.size());
      for (const auto& s : set.samples)
        v.push_back(instance_from_sample(s.params, s.keypoints_3d, s.canonical, s.keypoints_2d, cfg.camera));
      export_dataset(g.out, v);
      const json meta{{"viewpoint", viewpoint}, {"n", n},         {"seed", g.seed},
                      {"resampled", set.resampled}, {"bank", dist.source}};
      cli::write_text(g.out + ".meta.json", meta.dump(2) + "\n");
      out << meta.dump() << "\n";
      return kExitOk;
    }

    if (sequence->parsed()) {
      cli::require_out(g);
      const auto dist = config_distribution(cfg, tpl);
      const auto seq = interpolated_sequence(dist, parse_viewpoint(viewpoint), frames, g.seed, cfg.camera, tpl,
                                             {noise_px, noise_canonical});
      std::vector<DatasetInstance> v;
      for (const auto& f : seq)
        v.push_back(instance_from_sample(f.params, f.keypoints_3d, f.canonical, f.keypoints_2d, cfg.camera));
      export_dataset(g.out, v);
      out << json{{"frames", v.size()}, {"out", g.out}}.dump() << "\n";
      return kExitOk;
    }

    if (convert->parsed()) {
      cli::require_out(g);
      const auto instances = import_dataset(in_path, parse_dataset_format(format));
      const auto provider = make_provider(provider_name, tpl);
      const auto fitcfg = resolved_fit_config(cfg, config_distribution(cfg, tpl));
      auto report = convert_dataset(instances, *provider, tpl, cfg.camera, fitcfg, cfg.threads);
      export_dataset(g.out, report.instances);
      for (auto i : report.failed) err << "instance " << i << ": " << report.instances[i].failure.value_or("") << "\n";
      out << json{{"total", report.instances.size()},
                  {"fitted", report.fitted.size()},
                  {"failed", report.failed},
                  {"skipped_incomplete", report.skipped}}
                 .dump()
          << "\n";
      return report.failed.empty() ? kExitOk : kExitPartial;
    }

    if (fit->parsed()) {
      auto instances = import_dataset(in_path, parse_dataset_format(format));
      if (index >= instances.size())
        throw InvalidArgument("--index " + std::to_string(index) + " out of range (" +
                              std::to_string(instances.size()) + " instances)");
      auto& d = instances[index];
      const auto fitcfg = resolved_fit_config(cfg, config_distribution(cfg, tpl));
      json summary{{"index", index}, {"mode", mode}};
      if (mode == "unsupervised") {
        const auto provider = make_provider(provider_name, tpl);
        convert_instance(d, index, *provider, tpl, cfg.camera, fitcfg);
      } else {
        const Camera cam = d.camera.value_or(cfg.camera);
        const HandParams start = d.params.value_or(session_defaults(cfg));
        const auto r = fit_supervised_search(start, d.keypoints_2d, cam, tpl, fitcfg, d.side);
        d.camera = cam;
        d.params = r.params;
        d.keypoints_3d = hand_keypoints(r.params, d.side, tpl);
        summary["iterations"] = r.iterations;
        summary["loss"] = to_json(r.report);
      }
      const std::string line = to_json(d).dump() + "\n";
      if (g.out.empty()) {
        out << line;
      } else {
        cli::write_text(g.out, line);
        out << summary.dump() << "\n";
      }
      return kExitOk;
    }

    if (track->parsed()) {
      cli::require_out(g);
      const auto instances = import_dataset(in_path, DatasetFormat::Canonical);
      if (instances.empty()) throw InvalidArgument("sequence is empty");
      const auto provider = make_provider(provider_name, tpl);
      const auto fitcfg = resolved_fit_config(cfg, config_distribution(cfg, tpl));
      const Camera cam = instances.front().camera.value_or(cfg.camera);
      TrackingSession session(tpl, cam, instances.front().side, fitcfg);
      json frames_json = json::array();
      std::vector<HandParams> tracked, cold;
      std::vector<double> epes;
      std::vector<std::size_t> failed;
      for (std::size_t f = 0; f < instances.size(); ++f) {
        const auto& d = instances[f];
        json fr{{"frame", f}};
        try {
          if (d.side != session.side) throw InvalidArgument("frame hand side differs from the first frame");
          const CanonicalPose p_star = provider->estimate(d, f);
          const auto r = track_frame(session, d.keypoints_2d, p_star);
          tracked.push_back(r.params);
          fr["params"] = to_json(r.params);
          fr["reinitialized"] = r.reinitialized;
          fr["stage_iterations"] = r.stage_iterations;
          fr["loss"] = to_json(r.report);
          if (d.keypoints_3d) {
            const double e = epe(hand_keypoints(r.params, d.side, tpl), *d.keypoints_3d, Alignment::RootScale,
                                 tpl.reference_bone());
            epes.push_back(e);
            fr["epe_cm"] = e;
          }
          if (compare_cold)
            cold.push_back(fit_unsupervised(d.keypoints_2d, p_star, cam, tpl, fitcfg, d.side).params);
        } catch (const std::exception& e) {
          failed.push_back(f);
          fr["error"] = e.what();
          err << "frame " << f << ": " << e.what() << "\n";
        }
        frames_json.push_back(fr);
      }
      json report{{"frames", frames_json}, {"failed", failed}};
      if (!epes.empty())
        report["epe_cm"] = {{"mean", cli::mean_of(epes)}, {"max", *std::max_element(epes.begin(), epes.end())}};
      if (tracked.size() >= 2) report["mean_parameter_change"] = mean_parameter_change(tracked);
      if (compare_cold && cold.size() >= 2 && tracked.size() >= 2) {
        const double c = mean_parameter_change(cold);
        report["cold_mean_parameter_change"] = c;
        report["smoothness_ratio"] = c > 0.0 ? mean_parameter_change(tracked) / c : 0.0;
      }
      cli::write_text(g.out, report.dump(2) + "\n");
      json summary{{"frames", instances.size()}, {"failed", failed.size()}};
      if (report.contains("epe_cm")) summary["epe_cm"] = report["epe_cm"];
      out << summary.dump() << "\n";
      return failed.empty() ? kExitOk : kExitPartial;
    }

    if (eval->parsed()) {
      cli::require_out(g);
      const auto pred = import_dataset(pred_path, DatasetFormat::Canonical);
      const auto gt = import_dataset(gt_path, DatasetFormat::Canonical);
      std::string csv;
      const json report = cli::evaluate_instances(pred, gt, tpl, cfg, csv_path.empty() ? nullptr : &csv);
      cli::write_text(g.out, report.dump(2) + "\n");
      if (!csv_path.empty()) cli::write_text(csv_path, csv);
      json summary{{"evaluated", report["evaluated"]}};
      if (report.contains("epe_cm")) summary["epe_mean_cm"] = report["epe_cm"]["mean"];
      out << summary.dump() << "\n";
      return report["skipped"].empty() ? kExitOk : kExitPartial;
    }

    if (serve_cmd->parsed()) {
      AnnotationService svc(data_root, cfg);
      err << "serving " << svc.instance_count() << " instances on http://" << host << ":" << port << "\n";
      serve(svc, host, port);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace handfit::workbench
