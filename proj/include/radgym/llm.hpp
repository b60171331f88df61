#pragma once

// Agent backed by a chat-completions-with-tools endpoint.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "radgym/error.hpp"
#include "radgym/runner.hpp"

namespace radgym::llm {

using nlohmann::json;

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";  // scheme://host[:port][/prefix]
  std::string model = "default";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int max_output_tokens = 20048;
  int timeout_seconds = 120;
  int retries = 3;
  int backoff_ms = 500;  // doubled after every failed attempt
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::ParseError, "endpoint URL needs a scheme: " + url);
  auto path = url.find('/', scheme + 3);
  SplitUrl out{url.substr(0, path), path == std::string::npos ? "" : url.substr(path)};
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

/// Request body for one agent step. Images are attached only when they
/// arrived after the agent's last turn, so each image is sent once.
inline json build_request(const runner::Conversation& conv, const std::vector<tools::ToolSchema>& schemas,
                          const EndpointConfig& cfg) {
  std::size_t last_assistant = 0;
  for (std::size_t i = 0; i < conv.size(); ++i)
    if (conv[i].role == "assistant") last_assistant = i;
  json messages = json::array();
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& m = conv[i];
    if (m.role == "assistant") {
      json msg{{"role", "assistant"}, {"content", m.content.empty() ? json(nullptr) : json(m.content)}};
      if (!m.tool_calls.empty()) {
        json calls = json::array();
        for (const auto& c : m.tool_calls)
          calls.push_back({{"id", c.id},
                           {"type", "function"},
                           {"function", {{"name", c.name}, {"arguments", c.args.is_string() ? c.args.get<std::string>() : c.args.dump()}}}});
        msg["tool_calls"] = calls;
      }
      messages.push_back(msg);
    } else if (m.role == "tool") {
      messages.push_back({{"role", "tool"}, {"tool_call_id", m.tool_call_id}, {"content", m.content}});
    } else if (!m.images.empty() && i > last_assistant) {
      json parts = json::array({{{"type", "text"}, {"text", m.content}}});
      for (const auto& img : m.images)
        parts.push_back({{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + img}}}});
      messages.push_back({{"role", m.role}, {"content", parts}});
    } else {
      std::string text = m.content;
      if (!m.images.empty()) text += " [" + std::to_string(m.images.size()) + " image(s) shown earlier]";
      messages.push_back({{"role", m.role}, {"content", text}});
    }
  }
  json fns = json::array();
  for (const auto& s : schemas) fns.push_back(s.to_json());
  json body{{"model", cfg.model},
            {"messages", messages},
            {"temperature", cfg.temperature},
            {"max_tokens", cfg.max_output_tokens}};
  if (!fns.empty()) body["tools"] = fns;
  return body;
}

/// Tool calls keep their order; arguments that do not parse as JSON are
/// passed on as a raw string so dispatch rejects them as a failed call.
inline runner::AgentOutput parse_response(const json& body) {
  runner::AgentOutput out;
  try {
    const auto& msg = body.at("choices").at(0).at("message");
    if (msg.contains("content") && msg["content"].is_string()) out.text = msg["content"].get<std::string>();
    if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
      for (const auto& c : msg["tool_calls"]) {
        runner::AgentCall call;
        call.id = c.value("id", "");
        call.name = c.at("function").at("name").get<std::string>();
        const auto& raw = c.at("function").at("arguments");
        if (raw.is_string()) {
          auto parsed = json::parse(raw.get<std::string>(), nullptr, false);
          call.args = parsed.is_discarded() ? raw : parsed;
        } else {
          call.args = raw;
        }
        out.calls.push_back(std::move(call));
      }
    }
    if (body.contains("usage") && body["usage"].is_object())
      out.usage = traj::Usage{body["usage"].value("prompt_tokens", 0LL), body["usage"].value("completion_tokens", 0LL)};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::AgentTransportError, std::string("malformed completion: ") + e.what());
  }
  return out;
}

class ChatAgent : public runner::Agent {
 public:
  explicit ChatAgent(EndpointConfig cfg) : cfg_(std::move(cfg)), url_(split_url(cfg_.base_url)) {}

  runner::AgentOutput step(const runner::Conversation& conv, const std::vector<tools::ToolSchema>& schemas) override {
    const auto body = build_request(conv, schemas, cfg_).dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    std::string last_error;
    int delay = cfg_.backoff_ms;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        delay *= 2;
      }
      httplib::Client client(url_.origin);
      client.set_connection_timeout(cfg_.timeout_seconds);
      client.set_read_timeout(cfg_.timeout_seconds);
      client.set_write_timeout(cfg_.timeout_seconds);
      auto res = client.Post(url_.prefix + "/chat/completions", headers, body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw Error(ErrorCode::AgentTransportError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
      auto parsed = json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) {
        last_error = "response is not JSON";
        continue;
      }
      return parse_response(parsed);
    }
    throw Error(ErrorCode::AgentTransportError,
                "endpoint failed after " + std::to_string(cfg_.retries) + " retries: " + last_error);
  }

 private:
  EndpointConfig cfg_;
  SplitUrl url_;
};

inline runner::AgentFactory chat_policy(const EndpointConfig& cfg) {
  return [cfg](const tasks::TaskSpec&) { return std::make_unique<ChatAgent>(cfg); };
}

}  // namespace radgym::llm
