#pragma once

// Episode trajectory records and their JSON-lines form: one line per turn
// plus a footer with the termination reason and the deliverable.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/error.hpp"

namespace radgym::traj {

using nlohmann::json;

struct ToolCallRecord {
  std::string name;
  json args = json::object();
  bool success = false;
  std::optional<std::string> error_code;
  double duration_ms = 0.0;
  std::optional<double> param_score;
};

struct Usage {
  long long input = 0;
  long long output = 0;
};

struct TurnRecord {
  int turn_index = 0;
  std::optional<std::string> text;
  std::vector<ToolCallRecord> tool_calls;
  std::optional<Usage> usage;
};

enum class Termination { TerminalTool, EmptyBatchWithText, TurnCap };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::TerminalTool: return "terminal_tool";
    case Termination::EmptyBatchWithText: return "empty_batch_with_text";
    case Termination::TurnCap: return "turn_cap";
  }
  return "turn_cap";
}

inline Termination parse_termination(std::string_view s) {
  if (s == "terminal_tool") return Termination::TerminalTool;
  if (s == "empty_batch_with_text") return Termination::EmptyBatchWithText;
  if (s == "turn_cap") return Termination::TurnCap;
  throw Error(ErrorCode::ParseError, "unknown termination '" + std::string(s) + "'");
}

/// What the outcome scorer looks at. Fields not relevant to the task type
/// stay empty.
struct Deliverable {
  std::optional<std::string> answer;
  std::optional<json> birads_report;
  json findings = json::array();      // submit_longitudinal_finding arguments, normalized
  json segmentations = json::array();  // viewer segmentations at freeze time
  json viewport = json::object();      // viewport snapshot at freeze time
};

struct Trajectory {
  std::string task_id;
  std::string task_type;
  std::vector<TurnRecord> turns;
  Termination termination = Termination::TurnCap;
  bool aborted = false;
  std::string abort_reason;
  std::optional<Deliverable> deliverable;
  json final_viewport = json::object();
  double duration_ms = 0.0;

  std::vector<const ToolCallRecord*> calls() const {
    std::vector<const ToolCallRecord*> out;
    for (const auto& t : turns)
      for (const auto& c : t.tool_calls) out.push_back(&c);
    return out;
  }
  std::vector<std::string> tool_names() const {
    std::vector<std::string> out;
    for (const auto* c : calls()) out.push_back(c->name);
    return out;
  }
};

inline json to_json(const ToolCallRecord& c, bool timing = true) {
  json j{{"name", c.name}, {"args", c.args}, {"success", c.success}};
  j["error_code"] = c.error_code ? json(*c.error_code) : json(nullptr);
  if (timing) j["duration_ms"] = c.duration_ms;
  j["param_score"] = c.param_score ? json(*c.param_score) : json(nullptr);
  return j;
}

inline json to_json(const TurnRecord& t, bool timing = true) {
  json calls = json::array();
  for (const auto& c : t.tool_calls) calls.push_back(to_json(c, timing));
  json j{{"record", "turn"}, {"turn_index", t.turn_index}, {"text", t.text ? json(*t.text) : json(nullptr)}, {"tool_calls", calls}};
  j["usage"] = t.usage ? json{{"input", t.usage->input}, {"output", t.usage->output}} : json(nullptr);
  return j;
}

inline json to_json(const Deliverable& d) {
  return {{"answer", d.answer ? json(*d.answer) : json(nullptr)},
          {"birads_report", d.birads_report ? *d.birads_report : json(nullptr)},
          {"findings", d.findings},
          {"segmentations", d.segmentations},
          {"viewport", d.viewport}};
}

inline json footer_json(const Trajectory& t, bool timing = true) {
  json j{{"record", "footer"},
         {"task_id", t.task_id},
         {"task_type", t.task_type},
         {"termination", to_string(t.termination)},
         {"aborted", t.aborted},
         {"abort_reason", t.abort_reason},
         {"deliverable", t.deliverable ? to_json(*t.deliverable) : json(nullptr)},
         {"final_viewport", t.final_viewport},
         {"turn_count", t.turns.size()}};
  if (timing) j["duration_ms"] = t.duration_ms;
  return j;
}

/// JSON lines. With timing=false the output is a pure function of the
/// episode, which is what determinism checks compare.
inline std::string to_jsonl(const Trajectory& t, bool timing = true) {
  std::string out;
  for (const auto& turn : t.turns) out += to_json(turn, timing).dump() + "\n";
  out += footer_json(t, timing).dump() + "\n";
  return out;
}

inline Deliverable deliverable_from_json(const json& j) {
  Deliverable d;
  if (!j.at("answer").is_null()) d.answer = j["answer"].get<std::string>();
  if (!j.at("birads_report").is_null()) d.birads_report = j["birads_report"];
  d.findings = j.value("findings", json::array());
  d.segmentations = j.value("segmentations", json::array());
  d.viewport = j.value("viewport", json::object());
  return d;
}

inline Trajectory from_jsonl(const std::string& text) {
  Trajectory t;
  bool footer = false;
  std::istringstream in(text);
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      if (j.at("record") == "turn") {
        TurnRecord turn;
        turn.turn_index = j.at("turn_index").get<int>();
        if (!j["text"].is_null()) turn.text = j["text"].get<std::string>();
        if (!j["usage"].is_null()) turn.usage = Usage{j["usage"]["input"].get<long long>(), j["usage"]["output"].get<long long>()};
        for (const auto& c : j.at("tool_calls")) {
          ToolCallRecord r;
          r.name = c.at("name").get<std::string>();
          r.args = c.at("args");
          r.success = c.at("success").get<bool>();
          if (!c["error_code"].is_null()) r.error_code = c["error_code"].get<std::string>();
          r.duration_ms = c.value("duration_ms", 0.0);
          if (!c["param_score"].is_null()) r.param_score = c["param_score"].get<double>();
          turn.tool_calls.push_back(std::move(r));
        }
        t.turns.push_back(std::move(turn));
      } else {
        footer = true;
        t.task_id = j.at("task_id").get<std::string>();
        t.task_type = j.at("task_type").get<std::string>();
        t.termination = parse_termination(j.at("termination").get<std::string>());
        t.aborted = j.at("aborted").get<bool>();
        t.abort_reason = j.value("abort_reason", "");
        if (!j.at("deliverable").is_null()) t.deliverable = deliverable_from_json(j["deliverable"]);
        t.final_viewport = j.at("final_viewport");
        t.duration_ms = j.value("duration_ms", 0.0);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("trajectory: ") + e.what());
  }
  if (!footer) throw Error(ErrorCode::ParseError, "trajectory has no footer record");
  return t;
}

}  // namespace radgym::traj
