#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "handfit/workbench/config.hpp"
#include "handfit/workbench/convert.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace handfit::workbench {

struct ApiResponse {
  int status = 200;
  json body;
};

/// Error with an HTTP status and a machine-readable code.
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& what)
      : Error(what), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

inline ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

/// Annotation sessions over a dataset stored under a data root. Each
/// session edits one instance; live parameters are kept in the instance's
/// own hand-side convention.
///
/// Error codes: bad_request (400), not_found (404), busy (409),
/// unprocessable (422: behind_camera, precondition_failed, degenerate_pose,
/// diverged, inconsistent, provider_failed), not_implemented (501).
class AnnotationService {
 public:
  AnnotationService(std::filesystem::path data_root, WorkbenchConfig config)
      : root_(std::move(data_root)), config_(std::move(config)), tpl_(config_template(config_)) {
    if (!std::filesystem::is_directory(root_)) throw InvalidArgument("data root '" + root_.string() + "' does not exist");
    dataset_path_ = root_ / config_.dataset_file;
    if (!std::filesystem::exists(dataset_path_))
      throw InvalidArgument("data root has no dataset file '" + config_.dataset_file + "'");
    dataset_ = import_dataset(dataset_path_.string(), DatasetFormat::Canonical);
    fit_ = resolved_fit_config(config_, config_distribution(config_, tpl_));
    provider_ = make_provider(config_.provider, tpl_);
  }

  /// Called once a fit has claimed its session, before any work. Lets tests
  /// hold a fit open deterministically.
  std::function<void(const std::string& session_id)> before_fit;

  const KinematicTemplate& kinematic_template() const { return tpl_; }
  const WorkbenchConfig& config() const { return config_; }
  std::size_t instance_count() const {
    std::lock_guard lock(dataset_mu_);
    return dataset_.size();
  }
  std::vector<DatasetInstance> dataset() const {
    std::lock_guard lock(dataset_mu_);
    return dataset_;
  }

  ApiResponse create_session(const json& body) {
    return guarded([&] {
      check_keys(body, {"instance_index"}, Where{});
      const json& idx = require(body, "instance_index", Where{});
      if (!idx.is_number_integer() || idx.get<std::int64_t>() < 0)
        throw ApiError(400, "bad_request", "instance_index must be a non-negative integer");
      const auto index = idx.get<std::size_t>();
      auto s = std::make_shared<Session>();
      {
        std::lock_guard lock(dataset_mu_);
        if (index >= dataset_.size())
          throw ApiError(404, "not_found", "no instance " + std::to_string(index));
        s->instance = dataset_[index];
      }
      s->index = index;
      s->initial = s->instance.params.value_or(session_defaults(config_));
      s->initial.beta = clip_beta(s->initial.beta, tpl_);
      s->params = s->initial;
      refresh(*s);
      {
        std::lock_guard lock(sessions_mu_);
        s->id = "s" + std::to_string(++next_id_);
        sessions_[s->id] = s;
      }
      return ApiResponse{201, {{"id", s->id}, {"state", state_json(*s)}}};
    });
  }

  ApiResponse close_session(const std::string& id) {
    return guarded([&] {
      std::lock_guard lock(sessions_mu_);
      if (sessions_.erase(id) == 0) throw ApiError(404, "not_found", "no session '" + id + "'");
      return ApiResponse{200, {{"id", id}, {"closed", true}}};
    });
  }

  ApiResponse get_state(const std::string& id) {
    return guarded([&] {
      auto s = find(id);
      std::lock_guard lock(s->mu);
      return ApiResponse{200, state_json(*s)};
    });
  }

  /// Body: {gamma1?: [3], gamma2?: [3], beta?: {"index": value} or [45]}.
  /// Beta is clipped into the limits; a pose putting a joint behind the
  /// camera is rejected and nothing changes.
  ApiResponse put_params(const std::string& id, const json& body) {
    return mutate(id, [&](Session& s) {
      const Where w;
      check_keys(body, {"gamma1", "gamma2", "beta"}, w);
      HandParams p = s.params;
      if (body.contains("gamma1")) p.gamma1 = read_vec3(body["gamma1"], w / "gamma1");
      if (body.contains("gamma2")) p.gamma2 = read_vec3(body["gamma2"], w / "gamma2");
      if (body.contains("beta")) {
        const auto& b = body["beta"];
        if (b.is_array()) {
          p.beta = read_numbers<kNumBeta>(b, w / "beta");
        } else if (b.is_object()) {
          for (const auto& [key, value] : b.items()) {
            int i = -1;
            try {
              std::size_t used = 0;
              i = std::stoi(key, &used);
              if (used != key.size()) i = -1;
            } catch (const std::exception&) {
            }
            if (i < 0 || i >= kNumBeta) (w / "beta" / key).fail("beta index must be 0-44");
            p.beta[static_cast<std::size_t>(i)] = read_number(value, w / "beta" / key);
          }
        } else {
          (w / "beta").fail("expected an object of index: value or an array of 45");
        }
      }
      for (double v : p.beta)
        if (!std::isfinite(v)) (w / "beta").fail("values must be finite");
      if (!p.gamma1.allFinite() || !p.gamma2.allFinite()) w.fail("values must be finite");
      p.beta = clip_beta(p.beta, tpl_);
      const HandParams before = s.params;
      s.params = p;
      try {
        refresh(s);
      } catch (...) {
        s.params = before;
        refresh(s);
        throw;
      }
    });
  }

  /// Body: {joint: 0-20, u, v} in native image pixels.
  ApiResponse put_keypoint(const std::string& id, const json& body) {
    return mutate(id, [&](Session& s) {
      const Where w;
      check_keys(body, {"joint", "u", "v"}, w);
      const int joint = joint_index(require(body, "joint", w));
      const double u = read_number(require(body, "u", w), w / "u");
      const double v = read_number(require(body, "v", w), w / "v");
      if (!std::isfinite(u) || !std::isfinite(v)) w.fail("u and v must be finite");
      s.instance.keypoints_2d.set(joint, Eigen::Vector2d(u, v));
      refresh(s);
    });
  }

  ApiResponse delete_keypoint(const std::string& id, const json& joint) {
    return mutate(id, [&](Session& s) {
      s.instance.keypoints_2d.unset(joint_index(joint));
      refresh(s);
    });
  }

  /// Body: {mode: "supervised" | "unsupervised"}; supervised by default.
  /// Responds with the final state, the loss before the fit and per-stage
  /// reports. A second fit on a session that is still fitting gets 409.
  ApiResponse fit(const std::string& id, const json& body) {
    return guarded([&] {
      const Where w;
      check_keys(body, {"mode"}, w);
      const std::string mode = body.contains("mode") ? read_string(body["mode"], w / "mode") : "supervised";
      if (mode != "supervised" && mode != "unsupervised") (w / "mode").fail("expected supervised or unsupervised");
      auto s = find(id);
      bool expected = false;
      if (!s->fitting.compare_exchange_strong(expected, true))
        throw ApiError(409, "busy", "a fit is already running on session '" + id + "'");
      struct Release {
        std::atomic<bool>& flag;
        ~Release() { flag = false; }
      } release{s->fitting};
      if (before_fit) before_fit(id);

      HandParams start;
      DatasetInstance inst;
      Camera cam;
      LossReport before;
      {
        std::lock_guard lock(s->mu);
        start = s->params;
        inst = s->instance;
        cam = camera_for(*s);
        before = s->loss;
      }
      json stages = json::array();
      HandParams result;
      if (mode == "supervised") {
        const auto r = fit_supervised_search(start, inst.keypoints_2d, cam, tpl_, fit_, inst.side);
        result = r.params;
        stages.push_back({{"stage", "supervised"}, {"iterations", r.iterations}, {"loss", to_json(r.report)}});
      } else {
        const CanonicalPose p_star = provider_->estimate(inst, s->index);
        const auto r = fit_unsupervised(inst.keypoints_2d, p_star, cam, tpl_, fit_, inst.side);
        result = r.params;
        for (std::size_t k = 0; k < r.stage_reports.size(); ++k)
          stages.push_back({{"stage", k + 1},
                            {"loss_kind", to_string(fit_.stages[k].loss)},
                            {"iterations", r.stage_iterations[k]},
                            {"loss", to_json(r.stage_reports[k])}});
      }
      result.beta = clip_beta(result.beta, tpl_);
      std::lock_guard lock(s->mu);
      s->params = result;
      ++s->history_depth;
      refresh(*s);
      return ApiResponse{200, {{"state", state_json(*s)}, {"pre_fit_loss", to_json(before)}, {"stages", stages}}};
    });
  }

  /// Returns the live parameters to the ones the session opened with.
  ApiResponse reset(const std::string& id) {
    return guarded([&] {
      auto s = find(id);
      std::lock_guard lock(s->mu);
      if (s->fitting) throw ApiError(409, "busy", "session '" + id + "' is fitting");
      s->params = s->initial;
      s->history_depth = 0;
      refresh(*s);
      return ApiResponse{200, state_json(*s)};
    });
  }

  /// Body: {status: "accepted" | "rejected"}. Writes the instance, its live
  /// parameters and review decision back to the dataset file. Accepting
  /// requires the stored 2D keypoints to agree with the parameters.
  ApiResponse save(const std::string& id, const json& body) {
    return guarded([&] {
      const Where w;
      check_keys(body, {"status"}, w);
      const auto status = parse_review_status(read_string(require(body, "status", w), w / "status"));
      if (!status || *status == ReviewStatus::Unreviewed) (w / "status").fail("expected accepted or rejected");
      auto s = find(id);
      std::lock_guard lock(s->mu);
      if (s->fitting) throw ApiError(409, "busy", "session '" + id + "' is fitting");
      DatasetInstance out = s->instance;
      out.params = s->params;
      out.camera = camera_for(*s);
      out.keypoints_3d = hand_keypoints(s->params, out.side, tpl_);
      out.review(*status);
      if (*status == ReviewStatus::Accepted) {
        const auto err = reprojection_inconsistency(out, tpl_);
        if (err && !(*err <= config_.consistency_px))
          throw ApiError(422, "inconsistent",
                         "annotated keypoints are " + std::to_string(*err) + " px from the fitted skeleton");
      }
      {
        std::lock_guard dlock(dataset_mu_);
        auto updated = dataset_;
        updated[s->index] = out;
        export_dataset(dataset_path_.string(), updated);
        dataset_ = std::move(updated);
      }
      s->instance = out;
      return ApiResponse{200, {{"state", state_json(*s)}, {"saved", true}}};
    });
  }

  /// Canonical pose from the configured provider; 501 when none is set up.
  ApiResponse estimate(const std::string& id) {
    return guarded([&] {
      auto s = find(id);
      DatasetInstance inst;
      {
        std::lock_guard lock(s->mu);
        inst = s->instance;
      }
      const auto c = provider_->estimate(inst, s->index);
      return ApiResponse{200, {{"provider", provider_->name()}, {"canonical", joints_json(c.p)}}};
    });
  }

  ApiResponse list_instances(std::size_t cursor, std::size_t limit) {
    return guarded([&] {
      if (limit == 0 || limit > 500) throw ApiError(400, "bad_request", "limit must be 1-500");
      std::lock_guard lock(dataset_mu_);
      json items = json::array();
      const std::size_t end = std::min(dataset_.size(), cursor + limit);
      for (std::size_t i = cursor; i < end; ++i) {
        const auto& d = dataset_[i];
        items.push_back({{"index", i},
                         {"image", d.image ? json(*d.image) : json(nullptr)},
                         {"side", to_string(d.side)},
                         {"status", to_string(d.status)},
                         {"annotated", d.keypoints_2d.annotated.count()},
                         {"complete", d.complete()},
                         {"has_params", d.params.has_value()}});
      }
      return ApiResponse{200,
                         {{"items", items},
                          {"total", dataset_.size()},
                          {"next_cursor", end < dataset_.size() ? json(end) : json(nullptr)}}};
    });
  }

  /// Skeleton, limits and the degrees of freedom that are locked (equal
  /// limits), so clients can build controls.
  ApiResponse template_info() const {
    const auto& d = tpl_.data();
    json locked = json::array();
    for (int i = 0; i < kNumBeta; ++i) locked.push_back(tpl_.beta_min()[i] == tpl_.beta_max()[i]);
    return {200,
            {{"names", d.names},
             {"parents", d.parents},
             {"beta_min", d.beta_min},
             {"beta_max", d.beta_max},
             {"locked", locked},
             {"camera", to_json(config_.camera)},
             {"session_defaults", to_json(session_defaults(config_))}}};
  }

  /// Image bytes for an instance, confined to the data root.
  std::optional<std::pair<std::string, std::string>> image(std::size_t index) const {
    std::optional<std::string> rel;
    {
      std::lock_guard lock(dataset_mu_);
      if (index >= dataset_.size()) return std::nullopt;
      rel = dataset_[index].image;
    }
    if (!rel) return std::nullopt;
    std::error_code ec;
    const auto root = std::filesystem::weakly_canonical(root_, ec);
    const auto path = std::filesystem::weakly_canonical(root_ / *rel, ec);
    if (ec) return std::nullopt;
    const auto [r, p] = std::mismatch(root.begin(), root.end(), path.begin(), path.end());
    if (r != root.end() || !std::filesystem::is_regular_file(path)) return std::nullopt;
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto ext = path.extension().string();
    std::string mime = "application/octet-stream";
    if (ext == ".png") mime = "image/png";
    else if (ext == ".jpg" || ext == ".jpeg") mime = "image/jpeg";
    return std::make_pair(std::move(bytes), mime);
  }

 private:
  struct Session {
    std::string id;
    std::size_t index = 0;
    std::mutex mu;
    std::atomic<bool> fitting{false};
    DatasetInstance instance;
    HandParams initial;
    HandParams params;
    Keypoints2D projected;
    LossReport loss;
    int history_depth = 0;
  };

  template <class F>
  static ApiResponse guarded(F&& f) {
    try {
      return f();
    } catch (const ApiError& e) {
      return error_response(e.status(), e.code(), e.what());
    } catch (const ParseError& e) {
      return error_response(400, "bad_request", e.what());
    } catch (const InvalidArgument& e) {
      return error_response(400, "bad_request", e.what());
    } catch (const BehindCameraError& e) {
      return error_response(422, "behind_camera", e.what());
    } catch (const DivergenceError& e) {
      return error_response(422, "diverged", e.what());
    } catch (const DegeneratePoseError& e) {
      return error_response(422, "degenerate_pose", e.what());
    } catch (const PreconditionError& e) {
      return error_response(422, "precondition_failed", e.what());
    } catch (const NotImplementedError& e) {
      return error_response(501, "not_implemented", e.what());
    } catch (const ProviderError& e) {
      return error_response(422, "provider_failed", e.what());
    } catch (const std::exception& e) {
      return error_response(500, "internal", e.what());
    }
  }

  template <class F>
  ApiResponse mutate(const std::string& id, F&& f) {
    return guarded([&] {
      auto s = find(id);
      std::lock_guard lock(s->mu);
      if (s->fitting) throw ApiError(409, "busy", "session '" + id + "' is fitting");
      f(*s);
      ++s->history_depth;
      return ApiResponse{200, state_json(*s)};
    });
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(sessions_mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "not_found", "no session '" + id + "'");
    return it->second;
  }

  static int joint_index(const json& j) {
    if (!j.is_number_integer() || j.get<int>() < 0 || j.get<int>() >= kNumJoints)
      throw ApiError(400, "bad_request", "joint must be an integer 0-20");
    return j.get<int>();
  }

  Camera camera_for(const Session& s) const { return s.instance.camera.value_or(config_.camera); }

  /// Re-derives the projected skeleton and annotation loss from live params.
  void refresh(Session& s) {
    const Camera cam = camera_for(s);
    s.projected = project(hand_keypoints(s.params, s.instance.side, tpl_), cam);
    LossContext ctx = LossContext::for_template(tpl_);
    ctx.lambda_gamma1 = fit_.lambda_gamma1;
    ctx.beta_mean = fit_.beta_mean(tpl_);
    ctx.camera = mirror(cam, s.instance.side);
    ctx.observed = mirror(s.instance.keypoints_2d, s.instance.side, cam.width);
    if (s.instance.keypoints_2d.annotated.none()) {
      // Nothing annotated yet: the reprojection term is an empty sum.
      s.loss = evaluate(LossKind::Reg, mirror(s.params, s.instance.side), ctx);
      s.loss.components["2d"] = 0.0;
      return;
    }
    s.loss = evaluate(fit_.supervised.loss, mirror(s.params, s.instance.side), ctx);
  }

  json state_json(const Session& s) const {
    json projected = json::array();
    for (int j = 0; j < kNumJoints; ++j) projected.push_back(vec_json(s.projected[j]));
    return {{"id", s.id},
            {"instance_index", s.index},
            {"image", s.instance.image ? json(*s.instance.image) : json(nullptr)},
            {"side", to_string(s.instance.side)},
            {"camera", to_json(camera_for(s))},
            {"params", to_json(s.params)},
            {"keypoints_2d", to_json(s.instance.keypoints_2d)},
            {"annotated", s.instance.keypoints_2d.annotated.count()},
            {"projected", projected},
            {"loss", to_json(s.loss)},
            {"status", to_string(s.instance.status)},
            {"history_depth", s.history_depth}};
  }

  std::filesystem::path root_;
  WorkbenchConfig config_;
  KinematicTemplate tpl_;
  FitConfig fit_;
  std::unique_ptr<CanonicalProvider> provider_;
  std::filesystem::path dataset_path_;

  mutable std::mutex dataset_mu_;
  std::vector<DatasetInstance> dataset_;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 0;
};

namespace detail {

inline void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ApiError(400, "bad_request", std::string("body is not valid JSON: ") + e.what());
  }
}

template <class F>
void with_body(const httplib::Request& req, httplib::Response& res, F&& f) {
  try {
    reply(res, f(parse_body(req)));
  } catch (const ApiError& e) {
    reply(res, error_response(e.status(), e.code(), e.what()));
  }
}

inline std::optional<std::size_t> parse_index(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 18) return std::nullopt;
  return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace detail

/// Registers the HTTP API on `server`.
inline void mount(httplib::Server& server, AnnotationService& svc) {
  using detail::reply;
  using detail::with_body;
  using Req = httplib::Request;
  using Res = httplib::Response;

  server.Post("/sessions", [&](const Req& req, Res& res) {
    with_body(req, res, [&](const json& b) { return svc.create_session(b); });
  });
  server.Delete(R"(/sessions/([^/]+))", [&](const Req& req, Res& res) { reply(res, svc.close_session(req.matches[1])); });
  server.Get(R"(/sessions/([^/]+)/state)", [&](const Req& req, Res& res) { reply(res, svc.get_state(req.matches[1])); });
  server.Put(R"(/sessions/([^/]+)/params)", [&](const Req& req, Res& res) {
    with_body(req, res, [&](const json& b) { return svc.put_params(req.matches[1], b); });
  });
  server.Put(R"(/sessions/([^/]+)/keypoints)", [&](const Req& req, Res& res) {
    with_body(req, res, [&](const json& b) { return svc.put_keypoint(req.matches[1], b); });
  });
  server.Delete(R"(/sessions/([^/]+)/keypoints)", [&](const Req& req, Res& res) {
    with_body(req, res, [&](const json& b) {
      if (req.has_param("joint")) {
        const auto j = detail::parse_index(req.get_param_value("joint"));
        return svc.delete_keypoint(req.matches[1], j ? json(*j) : json(nullptr));
      }
      return svc.delete_keypoint(req.matches[1], b.contains("joint") ? b["joint"] : json(nullptr));
    });
  });
  server.Post(R"(/sessions/([^/]+)/fit)", [&](const Req& req, Res& res) {
    with_body(req, res, [&](const json& b) { return svc.fit(req.matches[1], b); });
  });
  server.Post(R"(/sessions/([^/]+)/reset)", [&](const Req& req, Res& res) { reply(res, svc.reset(req.matches[1])); });
  server.Post(R"(/sessions/([^/]+)/save)", [&](const Req& req, Res& res) {
    with_body(req, res, [&](const json& b) { return svc.save(req.matches[1], b); });
  });
  server.Post(R"(/sessions/([^/]+)/estimate)",
              [&](const Req& req, Res& res) { reply(res, svc.estimate(req.matches[1])); });
  server.Get("/instances", [&](const Req& req, Res& res) {
    std::size_t cursor = 0, limit = 50;
    for (auto [key, target] : {std::pair{"cursor", &cursor}, std::pair{"limit", &limit}}) {
      if (!req.has_param(key)) continue;
      const auto v = detail::parse_index(req.get_param_value(key));
      if (!v) return reply(res, error_response(400, "bad_request", std::string(key) + " must be a non-negative integer"));
      *target = *v;
    }
    reply(res, svc.list_instances(cursor, limit));
  });
  server.Get(R"(/instances/(\d+)/image)", [&](const Req& req, Res& res) {
    const auto idx = detail::parse_index(req.matches[1]);
    const auto img = idx ? svc.image(*idx) : std::nullopt;
    if (!img) return reply(res, error_response(404, "not_found", "no image for this instance"));
    res.set_content(img->first, img->second);
  });
  server.Get("/template", [&](const Req&, Res& res) { reply(res, svc.template_info()); });
  server.set_exception_handler([](const Req&, Res& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, error_response(500, "internal", what));
  });
}

/// Blocks serving the API on `host:port` until the server is stopped.
inline void serve(AnnotationService& svc, const std::string& host, int port) {
  httplib::Server server;
  mount(server, svc);
  if (!server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  server.listen_after_bind();
}

}  // namespace handfit::workbench
