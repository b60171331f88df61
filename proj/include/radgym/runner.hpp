#pragma once

// Episode loop, suite runner, scripted baseline agents and the
// chat-completions client.

#include <atomic>
#include <chrono>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/error.hpp"
#include "radgym/geometry.hpp"
#include "radgym/imaging.hpp"
#include "radgym/tasks.hpp"
#include "radgym/tools.hpp"
#include "radgym/trajectory.hpp"
#include "radgym/util.hpp"

namespace radgym::runner {

using nlohmann::json;
using tasks::TaskSpec;
using tasks::TaskType;

// ---------------------------------------------------------------------------
// Conversation and agent interface

struct AgentCall {
  std::string id;
  std::string name;
  json args = json::object();  // a JSON string here means the model sent unparseable arguments
};

struct Message {
  std::string role;  // system | user | assistant | tool
  std::string content;
  std::vector<AgentCall> tool_calls;  // assistant only
  std::string tool_call_id;           // tool only
  std::vector<std::string> images;    // base64 PNG attachments (user only)
};

using Conversation = std::vector<Message>;

struct AgentOutput {
  std::optional<std::string> text;
  std::vector<AgentCall> calls;
  std::optional<traj::Usage> usage;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual AgentOutput step(const Conversation& conversation, const std::vector<tools::ToolSchema>& schemas) = 0;
};

using AgentFactory = std::function<std::unique_ptr<Agent>(const TaskSpec&)>;

/// Payload of the most recent tool results, in call order (null for failures).
inline std::vector<json> tool_payloads(const Conversation& c) {
  std::vector<json> out;
  for (const auto& m : c) {
    if (m.role != "tool") continue;
    auto j = json::parse(m.content);
    out.push_back(j.value("success", false) ? j["payload"] : json(nullptr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episode loop

struct EpisodeOptions {
  bool record_timing = true;
};

inline constexpr std::string_view kImagePlaceholder = "<image attached in the next message>";

namespace detail {

/// Tool-result message text with any image replaced by a placeholder; the
/// image itself is returned for attachment.
inline std::pair<std::string, std::optional<std::string>> split_image(const tools::ToolResult& r) {
  auto j = r.to_json();
  std::optional<std::string> image;
  if (r.success && r.payload.is_object() && r.payload.contains("image")) {
    image = r.payload["image"].get<std::string>();
    j["payload"]["image"] = kImagePlaceholder;
  }
  return {j.dump(), image};
}

inline bool frozen_state_is_deliverable(TaskType t) {
  return t == TaskType::ViewerControl || t == TaskType::Annotation || t == TaskType::OracleAnnotation;
}

inline traj::Deliverable snapshot(const tools::Episode& ep) {
  traj::Deliverable d;
  d.answer = ep.answer();
  d.birads_report = ep.birads_report();
  for (const auto& f : ep.findings()) d.findings.push_back(tools::to_json(f));
  for (const auto& s : ep.segmentations()) d.segmentations.push_back(viewer::to_json(s));
  d.viewport = viewer::to_json(ep.state());
  return d;
}

}  // namespace detail

/// First user message. Vision-probe tasks carry their image here because no
/// image tool is visible to them.
inline Message first_user_message(const TaskSpec& task, const pacs::Store& store) {
  Message m{"user", "Begin the task.", {}, {}, {}};
  if (task.task_type == TaskType::VisionProbe) {
    const auto& probe = task.expected_outcome.at("probe");
    auto img = imaging::preprocess_frame(store, probe.at("series_uid").get<std::string>(), probe.at("slice_index").get<int>(),
                                         imaging::parse_pipeline(probe.at("pipeline").get<std::string>()));
    m.content = "Begin the task. The image to assess is attached.";
    m.images.push_back(base64_encode(img.png));
  }
  return m;
}

inline traj::Trajectory run_episode(const TaskSpec& task, Agent& agent, const tools::Environment& env,
                                    const EpisodeOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto ms_since = [&](clock::time_point t0) {
    return opt.record_timing ? std::chrono::duration<double, std::milli>(clock::now() - t0).count() : 0.0;
  };

  tools::Episode ep(task, env);
  const auto schemas = tools::visible_schemas(task.tool_set);
  Conversation conv;
  conv.push_back({"system", tasks::assemble_prompt(task, ep.state()), {}, {}, {}});
  conv.push_back(first_user_message(task, *env.store));

  traj::Trajectory t;
  t.task_id = task.task_id;
  t.task_type = std::string(tasks::to_string(task.task_type));
  bool ended = false, terminal = false;

  for (int turn = 0; turn < task.max_turns && !ended; ++turn) {
    AgentOutput out;
    try {
      out = agent.step(conv, schemas);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AgentTransportError) throw;
      t.aborted = true;
      t.abort_reason = e.what();
      break;
    }
    traj::TurnRecord rec;
    rec.turn_index = turn;
    rec.text = out.text;
    rec.usage = out.usage;
    conv.push_back({"assistant", out.text.value_or(""), out.calls, {}, {}});

    if (out.calls.empty()) {
      t.turns.push_back(std::move(rec));
      if (out.text && !out.text->empty()) {
        t.termination = traj::Termination::EmptyBatchWithText;
        ended = true;
      }
      continue;
    }
    std::vector<std::string> images;
    for (const auto& call : out.calls) {
      const auto t0 = clock::now();
      auto r = ep.call(call.name, call.args);
      traj::ToolCallRecord c;
      c.name = call.name;
      c.args = call.args;
      c.success = r.success;
      if (r.error) c.error_code = std::string(radgym::to_string(r.error->code));
      c.duration_ms = ms_since(t0);
      c.param_score = r.param_score;
      rec.tool_calls.push_back(std::move(c));
      auto [text, image] = detail::split_image(r);
      conv.push_back({"tool", std::move(text), {}, call.id, {}});
      if (image) images.push_back(std::move(*image));
      if (r.terminal) {
        terminal = true;
        break;  // later calls in the batch are dropped
      }
    }
    if (!images.empty()) conv.push_back({"user", "Images returned by the tool calls above.", {}, {}, std::move(images)});
    t.turns.push_back(std::move(rec));
    if (terminal) {
      t.termination = traj::Termination::TerminalTool;
      ended = true;
    }
  }
  if (!ended) t.termination = traj::Termination::TurnCap;

  auto snap = detail::snapshot(ep);
  t.final_viewport = snap.viewport;
  if (!t.aborted && (terminal || (t.termination == traj::Termination::EmptyBatchWithText &&
                                  detail::frozen_state_is_deliverable(task.task_type))))
    t.deliverable = std::move(snap);
  t.duration_ms = ms_since(start);
  return t;
}

/// Failure record for an episode that could not run at all.
inline traj::Trajectory aborted_trajectory(const TaskSpec& task, const std::string& reason) {
  traj::Trajectory t;
  t.task_id = task.task_id;
  t.task_type = std::string(tasks::to_string(task.task_type));
  t.termination = traj::Termination::TurnCap;
  t.aborted = true;
  t.abort_reason = reason;
  return t;
}

/// Runs every task; results come back in task order regardless of scheduling.
/// A failing episode becomes an aborted record and never stops the suite.
inline std::vector<traj::Trajectory> run_suite(const std::vector<TaskSpec>& suite, const AgentFactory& factory,
                                               const tools::Environment& env, int parallelism,
                                               const EpisodeOptions& opt = {}) {
  if (parallelism < 1) throw Error(ErrorCode::InvalidSpec, "parallelism must be >= 1");
  std::vector<traj::Trajectory> out(suite.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < suite.size(); i = next++) {
      try {
        auto agent = factory(suite[i]);
        out[i] = run_episode(suite[i], *agent, env, opt);
      } catch (const std::exception& e) {
        out[i] = aborted_trajectory(suite[i], e.what());
      }
    }
  };
  const auto n = static_cast<std::size_t>(parallelism);
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < std::min(n, suite.size()); ++k) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  return out;
}

inline void write_trajectories(const std::filesystem::path& dir, const std::vector<traj::Trajectory>& ts, bool timing = true) {
  std::filesystem::create_directories(dir);
  for (const auto& t : ts) phantom::write_text(dir / (t.task_id + ".jsonl"), traj::to_jsonl(t, timing));
}

inline traj::Trajectory read_trajectory(const std::filesystem::path& file) {
  return traj::from_jsonl(phantom::read_text(file));
}

// ---------------------------------------------------------------------------
// Oracle policy: walks the reference trajectory with ground-truth arguments,
// one call per turn, and closes with a text-only turn when the task has no
// terminal tool.

class OracleAgent : public Agent {
 public:
  using ArgFn = std::function<json(const std::vector<json>& payloads)>;
  struct Step {
    std::string name;
    ArgFn args;
  };

  OracleAgent(TaskSpec task, tools::Environment env) : task_(std::move(task)), env_(std::move(env)) { plan(); }

  const std::vector<Step>& steps() const { return steps_; }

  AgentOutput step(const Conversation& conv, const std::vector<tools::ToolSchema>&) override {
    AgentOutput out;
    if (next_ >= steps_.size()) {
      out.text = "Task complete.";
      return out;
    }
    const auto& s = steps_[next_];
    out.calls.push_back({"call_" + std::to_string(next_), s.name, s.args(tool_payloads(conv))});
    ++next_;
    return out;
  }

 private:
  const pacs::Store& store() const { return *env_.store; }

  void add(std::string name, ArgFn fn) { steps_.push_back({std::move(name), std::move(fn)}); }
  void add(std::string name, json args) {
    steps_.push_back({std::move(name), [a = std::move(args)](const std::vector<json>&) { return a; }});
  }

  static const json& ct_series_entry(const json& study_series) {
    for (const auto& s : study_series.at("Series"))
      if (s.at("Modality") == "CT") return s;
    throw Error(ErrorCode::InvariantViolation, "no CT series in payload");
  }

  const phantom::LesionTruth& lesion(int id) const {
    const auto* l = env_.truth->find_lesion(task_.family_id(), id);
    if (!l) throw Error(ErrorCode::InvariantViolation, "lesion " + std::to_string(id) + " missing from ground truth");
    return *l;
  }

  /// Circle with the mask's area centred on its centroid: the best-fit circle.
  static json best_circle(const phantom::LesionTruth& l, int z) {
    auto m = l.mask_on(z);
    auto c = geom::centroid(m);
    double r = std::sqrt(static_cast<double>(m.count()) / std::numbers::pi);
    return {{"label", l.label}, {"slice_index", z}, {"center", {c.x, c.y}}, {"radius", r}};
  }

  static json contour_of(const json& payload, int lesion_id) {
    for (const auto& c : payload.at("contours"))
      if (c.at("lesion_id") == lesion_id) return c;
    throw Error(ErrorCode::InvariantViolation, "oracle contour missing");
  }

  void plan() {
    const auto sub = task_.subtype();
    const auto& exp = task_.expected_outcome;
    const auto study = task_.study_uid;
    const auto series = task_.initial_series_uid;
    const json lung{{"window_width", imaging::kLungWindow.width}, {"window_center", imaging::kLungWindow.center}};

    if (sub == "t1_slice") {
      add("set_viewport_slice", {{"slice_index", exp["fields"]["slice_index"]}});
    } else if (sub.starts_with("t1_wl_")) {
      add("set_window_level", exp["fields"]);
    } else if (sub == "t1_slice_wl") {
      add("set_viewport_slice", {{"slice_index", exp["fields"]["slice_index"]}});
      add("set_window_level", {{"window_width", exp["fields"]["window_width"]}, {"window_center", exp["fields"]["window_center"]}});
    } else if (sub == "t1_series") {
      add("get_study_series", {{"study_uid", study}});
      add("select_series", {{"series_uid", exp["fields"]["series_uid"]}});
    } else if (sub == "t2_slices" || sub == "t2_modalities" || sub == "t2_ct_uid") {
      add("get_study_series", {{"study_uid", study}});
      add("submit_answer", [sub](const std::vector<json>& p) {
        const auto& payload = p.at(0);
        if (sub == "t2_slices") return json{{"answer", std::to_string(ct_series_entry(payload).at("NumberOfInstances").get<int>())}};
        if (sub == "t2_ct_uid") return json{{"answer", ct_series_entry(payload).at("SeriesInstanceUID")}};
        std::set<std::string> mods;
        for (const auto& s : payload.at("Series")) mods.insert(s.at("Modality").get<std::string>());
        std::string joined;
        for (const auto& m : mods) joined += (joined.empty() ? "" : ", ") + m;
        return json{{"answer", joined}};
      });
    } else if (sub == "t2_nseries" || sub == "t2_date") {
      add("get_study_metadata", {{"study_uid", study}});
      add("submit_answer", [sub](const std::vector<json>& p) {
        const auto& m = p.at(0);
        return json{{"answer", sub == "t2_date" ? m.at("StudyDate").get<std::string>()
                                                : std::to_string(m.at("NumberOfSeries").get<int>())}};
      });
    } else if (sub == "t4_interval" || sub == "t4_slice_diff") {
      const auto baseline = task_.auxiliary_study_uids.at(0);
      const bool interval = sub == "t4_interval";
      const char* tool = interval ? "get_study_metadata" : "get_study_series";
      add(tool, {{"study_uid", baseline}});
      add(tool, {{"study_uid", study}});
      add("submit_answer", [interval](const std::vector<json>& p) {
        if (interval)
          return json{{"answer", std::to_string(tasks::detail::days_between(p.at(0).at("StudyDate").get<std::string>(),
                                                                            p.at(1).at("StudyDate").get<std::string>()))}};
        int diff = ct_series_entry(p.at(1)).at("NumberOfInstances").get<int>() -
                   ct_series_entry(p.at(0)).at("NumberOfInstances").get<int>();
        return json{{"answer", std::to_string(diff)}};
      });
    } else if (sub == "vp_mod" || sub == "vp_pre") {
      add("submit_answer", {{"answer", exp["answer"]}});
    } else if (sub == "t3_nodule" || sub == "t3_find") {
      const auto& target = exp["targets"][0];
      const auto& l = lesion(target["lesion_id"].get<int>());
      const auto slices = target["slices"].get<std::vector<int>>();
      add("get_study_series", {{"study_uid", study}});
      for (std::size_t i = 0; i < slices.size(); ++i) {
        const int z = slices[i];
        add("set_viewport_slice", {{"slice_index", z}});
        if (i == 0) add("set_window_level", lung);
        add("get_dicom_image", {{"study_uid", study}, {"series_uid", series}, {"slice_index", z}, {"preprocessor", "lung_window"}});
        add("add_circle_segmentation", best_circle(l, z));
      }
    } else if (sub.starts_with("t3_oracle_") && sub != "t3_oracle_birads") {
      add("get_study_series", {{"study_uid", study}});
      add("query_pathology_model", {{"series_uid", series}});
      // (lesion id, slice) pairs in the order the reference visits them
      std::vector<std::pair<int, int>> visits;
      for (const auto& target : exp["targets"])
        for (int z : target["slices"].get<std::vector<int>>()) visits.emplace_back(target["lesion_id"].get<int>(), z);
      const bool single = sub == "t3_oracle_single";
      for (std::size_t i = 0; i < visits.size(); ++i) {
        const auto [id, z] = visits[i];
        // the slice to contour comes from the overview payload where it names one
        auto slice_of = [id, z, vol = sub == "t3_oracle_vol"](const std::vector<json>& p) {
          if (vol) return z;
          for (const auto& f : p.at(1).at("findings"))
            if (f.at("lesion_id") == id) return f.at("representative_slice").get<int>();
          return z;
        };
        add("query_pathology_model", [series, slice_of](const std::vector<json>& p) {
          return json{{"series_uid", series}, {"slice_index", slice_of(p)}};
        });
        const std::size_t contour_at = 2 + 3 * i;  // payload index of that query
        add("set_viewport_slice", [slice_of](const std::vector<json>& p) { return json{{"slice_index", slice_of(p)}}; });
        add("add_polygon_segmentation", [id, contour_at, slice_of](const std::vector<json>& p) {
          auto c = contour_of(p.at(contour_at), id);
          return json{{"label", c.at("label")}, {"slice_index", slice_of(p)}, {"points", c.at("points")}};
        });
        if (single) break;
      }
    } else if (sub == "t3_oracle_birads") {
      add("get_study_series", {{"study_uid", study}});
      add("query_birads_model", {{"series_uid", series}});
      add("submit_birads_report", [](const std::vector<json>& p) { return p.at(1); });
    } else if (sub == "t4_lesion_single" || sub == "t4_lesion_multi") {
      const auto& lt = *env_.truth->find_family(task_.family_id())->truth.longitudinal;
      // five distinct slices: the required ones first, then evenly spaced
      auto spread = [](int n, std::vector<int> must) {
        std::vector<int> out = std::move(must);
        std::vector<int> candidates;
        for (int k = 0; k < 5; ++k) candidates.push_back((2 * k + 1) * n / 10);
        for (int z = 0; z < n; ++z) candidates.push_back(z);
        for (int z : candidates)
          if (out.size() < 5 && std::find(out.begin(), out.end(), z) == out.end()) out.push_back(z);
        return out;
      };
      std::vector<int> finding_slices;
      for (const auto& f : lt.findings) finding_slices.push_back(f.slice_index);
      std::sort(finding_slices.begin(), finding_slices.end());
      finding_slices.erase(std::unique(finding_slices.begin(), finding_slices.end()), finding_slices.end());
      if (finding_slices.size() > 5) finding_slices.resize(5);
      auto view = [&](const std::string& study_uid, const std::string& series_uid, const std::vector<int>& zs) {
        for (int z : zs) {
          add("set_viewport_slice", {{"slice_index", z}});
          add("get_dicom_image",
              {{"study_uid", study_uid}, {"series_uid", series_uid}, {"slice_index", z}, {"preprocessor", "lung_window"}});
        }
      };
      add("get_study_series", {{"study_uid", lt.baseline_study_uid}});
      add("select_series", {{"series_uid", lt.baseline_series_uid}});
      add("set_window_level", lung);
      view(lt.baseline_study_uid, lt.baseline_series_uid, spread(lt.baseline_slices, {}));
      add("select_series", {{"series_uid", lt.followup_series_uid}});
      add("set_viewport_slice", {{"slice_index", 0}});
      add("set_window_level", lung);
      view(lt.followup_study_uid, lt.followup_series_uid, spread(lt.followup_slices, finding_slices));
      const std::size_t n = sub == "t4_lesion_single" ? 1 : lt.findings.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& f = lt.findings[i];
        add("submit_longitudinal_finding",
            {{"finding_type", "new_lesion"}, {"slice_index", f.slice_index}, {"location", {f.x, f.y}}});
      }
      add("submit_longitudinal_complete", json::object());
    } else if (sub == "t4_birads") {
      add("get_study_series", {{"study_uid", study}});
      const int v = tasks::params_from(exp).V;
      int used = 0;
      for (const auto& uid : store().study(study).series_uids) {
        const auto& s = store().series(uid);
        if (s.modality != "MR" || used == v) continue;
        ++used;
        add("select_series", {{"series_uid", uid}});
        const int n = static_cast<int>(s.instances.size());
        for (int z : {n / 4, n / 2, (3 * n) / 4}) {
          add("set_viewport_slice", {{"slice_index", z}});
          add("get_dicom_image", {{"study_uid", study}, {"series_uid", uid}, {"slice_index", z}, {"preprocessor", "breast_mri"}});
        }
      }
      add("submit_birads_report", tools::birads_payload(phantom::birads_from_json(exp.at("birads"))));
    } else {
      throw Error(ErrorCode::UnknownSubtype, sub);
    }
  }

  TaskSpec task_;
  tools::Environment env_;
  std::vector<Step> steps_;
  std::size_t next_ = 0;
};

inline AgentFactory oracle_policy(const tools::Environment& env) {
  return [env](const TaskSpec& t) { return std::make_unique<OracleAgent>(t, env); };
}

// ---------------------------------------------------------------------------
// Random policy: uniformly sampled visible non-terminal tools with
// schema-valid random arguments, and a random submission on the last turn.

class RandomAgent : public Agent {
 public:
  RandomAgent(const TaskSpec& task, const tools::Environment& env, std::uint64_t seed)
      : task_(task), rng_(mix_seed(seed, task.task_id)) {
    studies_.push_back(task.study_uid);
    for (const auto& a : task.auxiliary_study_uids) studies_.push_back(a);
    for (const auto& st : studies_)
      for (const auto& s : env.store->study(st).series_uids) {
        series_.push_back(s);
        for (const auto& inst : env.store->series(s).instances)
          sops_.push_back(inst.at(dicom::tags::SOPInstanceUID).as_string());
      }
    const auto& g = env.store->series(task.initial_series_uid).geometry;
    width_ = g.columns;
    height_ = g.rows;
    slices_ = static_cast<int>(env.store->series(task.initial_series_uid).instances.size());
  }

  AgentOutput step(const Conversation&, const std::vector<tools::ToolSchema>& schemas) override {
    AgentOutput out;
    const bool last = turn_++ >= task_.max_turns - 1;
    std::vector<const tools::ToolSchema*> normal, terminal;
    for (const auto& s : schemas) (s.terminal ? terminal : normal).push_back(&s);
    if (last || normal.empty()) {
      if (terminal.empty()) {
        out.text = "Done.";
      } else {
        const auto* s = terminal[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(terminal.size()) - 1))];
        out.calls.push_back({"call_" + std::to_string(turn_), s->name, sample_object(s->name, s->parameters)});
      }
      return out;
    }
    const auto* s = normal[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(normal.size()) - 1))];
    out.calls.push_back({"call_" + std::to_string(turn_), s->name, sample_object(s->name, s->parameters)});
    return out;
  }

 private:
  std::string pick(const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
  }

  json sample_object(const std::string& tool, const json& sch) {
    json out = json::object();
    std::set<std::string> required;
    for (const auto& r : sch.value("required", json::array())) required.insert(r.get<std::string>());
    for (auto it = sch["properties"].begin(); it != sch["properties"].end(); ++it) {
      if (!required.count(it.key()) && !rng_.bernoulli(0.5)) continue;
      out[it.key()] = sample(tool, it.key(), it.value());
    }
    return out;
  }

  json sample(const std::string& tool, const std::string& key, const json& sch) {
    const auto type = sch.value("type", "");
    if (sch.contains("enum")) return sch["enum"][static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(sch["enum"].size()) - 1))];
    if (type == "object") return sample_object(tool, sch);
    if (type == "boolean") return rng_.bernoulli(0.5);
    if (type == "integer") {
      if (key == "slice_index") return rng_.uniform_int(0, slices_ - 1);
      if (key == "birads_category") return rng_.uniform_int(0, 6);
      return rng_.uniform_int(0, 5);
    }
    if (type == "number") {
      if (key == "radius") return rng_.uniform(1.0, 20.0);
      if (key == "window_width") return std::round(rng_.uniform(1.0, 3000.0));
      if (key == "window_center") return std::round(rng_.uniform(-1000.0, 1000.0));
      if (key == "scale") return rng_.uniform(0.5, 4.0);
      return rng_.uniform(0.0, 50.0);
    }
    if (type == "array") {
      const auto& items = sch["items"];
      if (items.value("type", "") == "number") return json{rng_.uniform(0.0, width_), rng_.uniform(0.0, height_)};
      if (key == "points") {
        json pts = json::array();
        auto n = rng_.uniform_int(3, 6);
        for (int i = 0; i < n; ++i) pts.push_back({rng_.uniform(0.0, width_), rng_.uniform(0.0, height_)});
        return pts;
      }
      json arr = json::array();
      auto n = rng_.uniform_int(0, 2);
      for (int i = 0; i < n; ++i) arr.push_back(sample(tool, key, items));
      return arr;
    }
    // strings
    if (key == "study_uid") return pick(studies_);
    if (key == "series_uid") return pick(series_);
    if (key == "sop_uid") return pick(sops_);
    if (key == "answer") {
      static const std::vector<std::string> kAnswers{"A", "B", "C", "D", "E", "0", "1", "40", "CT", "20000101"};
      return pick(kAnswers);
    }
    return "r" + std::to_string(rng_.uniform_int(0, 999));
  }

  TaskSpec task_;
  Rng rng_;
  int turn_ = 0;
  std::vector<std::string> studies_, series_, sops_;
  double width_ = 1, height_ = 1;
  int slices_ = 1;
};

inline AgentFactory random_policy(const tools::Environment& env, std::uint64_t seed) {
  return [env, seed](const TaskSpec& t) { return std::make_unique<RandomAgent>(t, env, seed); };
}

// ---------------------------------------------------------------------------
// Human REPL agent: one line per turn.
//   <tool_name> <json args>   dispatch a single call
//   say <text>                end with a text-only turn
//   tools                     list visible tools (does not use a turn)

class ReplAgent : public Agent {
 public:
  ReplAgent(std::istream& in, std::ostream& out) : in_(in), out_(out) {}

  AgentOutput step(const Conversation& conv, const std::vector<tools::ToolSchema>& schemas) override {
    for (std::size_t i = shown_; i < conv.size(); ++i) {
      const auto& m = conv[i];
      if (m.role == "assistant") continue;
      out_ << "[" << m.role << "] " << m.content << (m.images.empty() ? "" : " (+" + std::to_string(m.images.size()) + " image)") << "\n";
    }
    shown_ = conv.size();
    AgentOutput res;
    std::string line;
    while (true) {
      out_ << "> " << std::flush;
      if (!std::getline(in_, line)) {
        res.text = "(end of input)";
        return res;
      }
      if (line.empty()) continue;
      if (line == "tools") {
        for (const auto& s : schemas) out_ << "  " << s.name << (s.terminal ? " (terminal)" : "") << "\n";
        continue;
      }
      if (line.starts_with("say ")) {
        res.text = line.substr(4);
        return res;
      }
      auto space = line.find(' ');
      std::string name = line.substr(0, space);
      json args = json::object();
      if (space != std::string::npos) {
        auto rest = line.substr(space + 1);
        args = json::parse(rest, nullptr, false);
        if (args.is_discarded()) args = rest;
      }
      res.calls.push_back({"call_" + std::to_string(++count_), name, args});
      return res;
    }
  }

 private:
  std::istream& in_;
  std::ostream& out_;
  std::size_t shown_ = 0;
  int count_ = 0;
};

}  // namespace radgym::runner
