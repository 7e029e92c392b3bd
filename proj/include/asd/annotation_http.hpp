// SPDX-License-Identifier: Apache-2.0
//
// HTTP front end for AnnotationStore.
//
//   GET  /tasks[?status=UNRATED|PARTIAL|COMPLETE]
//   GET  /tasks/{id}
//   PUT  /tasks/{id}/raters/{rater}/segments   {"version": n, "segments": [...]}
//   GET  /export[?ids=a,b]                     text/csv
//   GET  /agreement[?ids=a,b]
//
// Errors are JSON: {"error": {"code": "NOT_FOUND|VALIDATION|CONFLICT", ...}}.
#pragma once

#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "asd/annotation.hpp"

namespace asd {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                       nlohmann::json extra = nlohmann::json::object()) {
  extra["code"] = code;
  extra["message"] = message;
  send_json(res, status, {{"error", extra}});
}

inline std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  for (auto f : split_fields(s))
    if (!trim(f).empty()) out.emplace_back(trim(f));
  return out;
}

inline nlohmann::json summary_json(const TaskSummary& s) {
  return {{"task_id", s.task_id}, {"track_id", s.track_id}, {"video_id", s.video_id},
          {"status", to_string(s.status)}, {"rater_count", s.rater_versions.size()},
          {"raters", s.rater_versions}, {"start", s.start}, {"end", s.end}};
}

/// Runs a handler and maps store errors onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFoundError& e) {
    send_error(res, 404, "NOT_FOUND", e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, "CONFLICT", e.what(), {{"current_version", e.current_version()}});
  } catch (const ValidationError& e) {
    send_error(res, 422, "VALIDATION", e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "VALIDATION", std::string("malformed body: ") + e.what());
  } catch (const ParseError& e) {
    send_error(res, 400, "VALIDATION", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "INTERNAL", e.what());
  }
}

}  // namespace detail

/// Full task payload as served by GET /tasks/{id}.
inline nlohmann::json task_payload(const AnnotationStore& store, const std::string& id) {
  const auto& t = store.task(id);
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : t.track.frames)
    frames.push_back({{"timestamp", f.timestamp},
                      {"x1", f.box.x1},
                      {"y1", f.box.y1},
                      {"x2", f.box.x2},
                      {"y2", f.box.y2},
                      {"detected", f.detected}});
  nlohmann::json raters = nlohmann::json::object();
  for (const auto& [r, s] : store.latest(id))
    raters[r] = {{"version", s.version}, {"segments", detail::segments_to_json(s.segments)}};
  auto j = detail::summary_json(store.summary(id));
  j["frame_rate"] = t.track.frame_rate;
  j["frames"] = frames;
  j["media"] = {{"frames", t.media.frames}, {"audio", t.media.audio}};
  j["envelope"] = {{"rate", kEnvelopeRate}, {"start", t.start()}, {"samples", t.envelope}};
  j["ratings"] = raters;
  return j;
}

inline void register_annotation_routes(httplib::Server& srv, AnnotationStore& store) {
  srv.Get("/tasks", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      std::optional<TaskStatus> filter;
      if (req.has_param("status")) {
        filter = parse_task_status(req.get_param_value("status"));
        if (!filter) throw ValidationError("unknown status '" + req.get_param_value("status") + "'");
      }
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& s : store.list_tasks(filter)) arr.push_back(detail::summary_json(s));
      detail::send_json(res, 200, {{"tasks", arr}});
    });
  });

  srv.Get(R"(/tasks/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] { detail::send_json(res, 200, task_payload(store, req.matches[1])); });
  });

  srv.Put(R"(/tasks/([^/]+)/raters/([^/]+)/segments)", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      if (!body.is_object() || !body.contains("version") || !body["version"].is_number_integer())
        throw ValidationError("body needs an integer version");
      Submission s{req.matches[1], req.matches[2], body["version"].get<int>(),
                   detail::segments_from_json(body.value("segments", nlohmann::json::array()))};
      const int v = store.put_segments(std::move(s));
      detail::send_json(res, 200, {{"version", v}});
    });
  });

  srv.Get("/export", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const auto ids = detail::split_ids(req.has_param("ids") ? req.get_param_value("ids") : "");
      res.status = 200;
      res.set_content(store.export_csv(ids), "text/csv");
    });
  });

  srv.Get("/agreement", [&](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const auto ids = detail::split_ids(req.has_param("ids") ? req.get_param_value("ids") : "");
      const auto a = store.agreement(ids);
      detail::send_json(res, 200, {{"kappa", a.kappa}, {"items", a.items}, {"raters", a.raters}});
    });
  });
}

}  // namespace asd
