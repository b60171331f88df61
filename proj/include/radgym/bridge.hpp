#pragma once

// HTTP bridge: episodes keyed by id, tool dispatch and schema publication.
// Route handlers are plain methods so they can be exercised without a socket.

#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "radgym/error.hpp"
#include "radgym/tasks.hpp"
#include "radgym/tools.hpp"

namespace radgym::bridge {

using nlohmann::json;

struct Response {
  int status = 200;
  json body;
};

class Bridge {
 public:
  Bridge(tools::Environment env, std::vector<tasks::TaskSpec> suite) : env_(std::move(env)) {
    for (auto& t : suite) tasks_.emplace(t.task_id, std::move(t));
  }

  /// POST /episodes {"task_id": ...}
  Response create_episode(const json& body) {
    if (!body.is_object() || !body.contains("task_id") || !body["task_id"].is_string())
      return error(400, ErrorCode::SchemaValidationError, "body needs a string task_id");
    auto it = tasks_.find(body["task_id"].get<std::string>());
    if (it == tasks_.end()) return error(404, ErrorCode::UnknownUID, "task: " + body["task_id"].get<std::string>());
    std::shared_ptr<tools::Episode> ep;
    try {
      ep = std::make_shared<tools::Episode>(it->second, env_);
    } catch (const Error& e) {
      return error(422, e.code(), e.detail());
    }
    std::lock_guard lock(mu_);
    auto id = "ep-" + std::to_string(++counter_);
    episodes_[id] = ep;
    json schemas = json::array();
    for (const auto& s : tools::visible_schemas(it->second.tool_set)) schemas.push_back(s.to_json());
    return {201,
            {{"episode_id", id},
             {"task_id", it->first},
             {"prompt", tasks::assemble_prompt(it->second, ep->state())},
             {"tools", schemas}}};
  }

  /// GET /episodes/{id}/state
  Response state(const std::string& id) {
    auto ep = find(id);
    if (!ep) return error(404, ErrorCode::UnknownUID, "episode: " + id);
    json segs = json::array();
    for (const auto& s : ep->segmentations()) segs.push_back(viewer::to_json(s));
    json findings = json::array();
    for (const auto& f : ep->findings()) findings.push_back(tools::to_json(f));
    auto answer = ep->answer();
    auto report = ep->birads_report();
    return {200,
            {{"episode_id", id},
             {"task_id", ep->task().task_id},
             {"viewport", viewer::to_json(ep->state())},
             {"segmentations", segs},
             {"findings", findings},
             {"answer", answer ? json(*answer) : json(nullptr)},
             {"birads_report", report ? *report : json(nullptr)},
             {"finished", ep->finished()}}};
  }

  /// POST /episodes/{id}/tools/{name}; the body is the argument object.
  /// Tool failures are 200 responses with success=false.
  Response call(const std::string& id, const std::string& name, const std::string& body) {
    auto ep = find(id);
    if (!ep) return error(404, ErrorCode::UnknownUID, "episode: " + id);
    json args = body.empty() ? json::object() : json::parse(body, nullptr, false);
    if (args.is_discarded()) args = body;  // dispatch reports it as a schema failure
    return {200, ep->call(name, args).to_json()};
  }

  /// GET /schemas/{task_type}
  Response schemas(const std::string& task_type) {
    try {
      json out = json::array();
      for (const auto& s : tools::visible_schemas(task_type)) out.push_back(s.to_json());
      return {200, out};
    } catch (const Error& e) {
      return error(404, e.code(), e.detail());
    }
  }

  void mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Post("/episodes", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, create_episode(json::parse(req.body, nullptr, false)));
    });
    server.Get(R"(/episodes/([^/]+)/state)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, state(req.matches[1]));
    });
    server.Post(R"(/episodes/([^/]+)/tools/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, call(req.matches[1], req.matches[2], req.body));
    });
    server.Get(R"(/schemas/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, schemas(req.matches[1]));
    });
  }

 private:
  static Response error(int status, ErrorCode code, const std::string& msg) {
    return {status, {{"success", false}, {"error", {{"code", radgym::to_string(code)}, {"message", msg}}}}};
  }

  std::shared_ptr<tools::Episode> find(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = episodes_.find(id);
    return it == episodes_.end() ? nullptr : it->second;
  }

  tools::Environment env_;
  std::map<std::string, tasks::TaskSpec> tasks_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<tools::Episode>> episodes_;
  int counter_ = 0;
};

}  // namespace radgym::bridge
