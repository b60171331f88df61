#pragma once

// The 21-tool function-calling surface: schemas, visibility per task type,
// argument validation, dispatch and terminal semantics.

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/error.hpp"
#include "radgym/imaging.hpp"
#include "radgym/pacs.hpp"
#include "radgym/phantom.hpp"
#include "radgym/tasks.hpp"
#include "radgym/util.hpp"
#include "radgym/viewer.hpp"

namespace radgym::tools {

using nlohmann::json;
using tasks::TaskType;

inline constexpr std::array<std::string_view, 21> kToolNames{
    "get_study_metadata",        "get_study_series",           "get_series_metadata",
    "get_instance_metadata",     "get_viewport_state",         "list_segmentations",
    "get_viewer_screenshot",     "get_dicom_image",            "query_pathology_model",
    "query_birads_model",        "set_viewport_slice",         "set_window_level",
    "set_zoom",                  "select_series",              "add_circle_segmentation",
    "add_rectangle_segmentation", "add_polygon_segmentation",  "submit_answer",
    "submit_birads_report",      "submit_longitudinal_finding", "submit_longitudinal_complete"};

inline bool is_tool(std::string_view name) {
  return std::find(kToolNames.begin(), kToolNames.end(), name) != kToolNames.end();
}

inline bool is_terminal(std::string_view name) {
  return name == "submit_answer" || name == "submit_birads_report" || name == "submit_longitudinal_complete";
}

struct ToolSchema {
  std::string name;
  std::string description;
  json parameters;  // JSON-schema object
  bool terminal = false;

  /// Function-calling wire form.
  json to_json() const {
    return {{"type", "function"}, {"function", {{"name", name}, {"description", description}, {"parameters", parameters}}}};
  }
};

namespace detail {

inline json object(json properties, std::vector<std::string> required = {}) {
  return {{"type", "object"}, {"properties", std::move(properties)}, {"required", std::move(required)}};
}
inline json str(std::string desc) { return {{"type", "string"}, {"description", std::move(desc)}}; }
inline json integer(std::string desc) { return {{"type", "integer"}, {"description", std::move(desc)}}; }
inline json number(std::string desc) { return {{"type", "number"}, {"description", std::move(desc)}}; }
inline json point(std::string desc) {
  return {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 2}, {"maxItems", 2}, {"description", std::move(desc)}};
}
inline json enumeration(std::vector<std::string> values, std::string desc) {
  return {{"type", "string"}, {"enum", std::move(values)}, {"description", std::move(desc)}};
}

inline std::vector<ToolSchema> build_schemas() {
  std::vector<std::string> pipelines(imaging::kPipelineNames.begin(), imaging::kPipelineNames.end());
  std::vector<ToolSchema> s;
  auto add = [&](std::string name, std::string desc, json params) {
    bool terminal = is_terminal(name);
    s.push_back({std::move(name), std::move(desc), std::move(params), terminal});
  };
  add("get_study_metadata", "Study-level DICOM metadata: date, patient, modalities and a summary of every series.",
      object({{"study_uid", str("StudyInstanceUID")}}, {"study_uid"}));
  add("get_study_series", "List the series of a study with instance counts and sample SOPInstanceUIDs.",
      object({{"study_uid", str("StudyInstanceUID")}}, {"study_uid"}));
  add("get_series_metadata", "Series-level metadata: modality, description, instance count, slice geometry.",
      object({{"series_uid", str("SeriesInstanceUID")}}, {"series_uid"}));
  add("get_instance_metadata", "All DICOM tags of one instance plus its slice index within the series.",
      object({{"study_uid", str("StudyInstanceUID")},
              {"series_uid", str("SeriesInstanceUID")},
              {"sop_uid", str("SOPInstanceUID")}},
             {"study_uid", "series_uid", "sop_uid"}));
  add("get_viewport_state", "Current slice, window/level, zoom, active series and loaded display sets.", object(json::object()));
  add("list_segmentations", "All segmentations placed in the viewer so far.", object(json::object()));
  add("get_viewer_screenshot", "PNG screenshot of the viewport including overlays and a status banner.",
      object(json::object()));
  add("get_dicom_image", "Fetch one slice as a PNG rendered through a preprocessing pipeline.",
      object({{"study_uid", str("StudyInstanceUID")},
              {"series_uid", str("SeriesInstanceUID")},
              {"slice_index", integer("0-based slice index within the series")},
              {"preprocessor", enumeration(pipelines, "Rendering pipeline; default picks one by modality")}},
             {"study_uid", "series_uid", "slice_index"}));
  add("query_pathology_model",
      "Nodule detector. Without slice_index: overview of findings (labels, slice ranges, confidence, representative "
      "slices). With slice_index: polygon contours on that slice in pixel coordinates.",
      object({{"series_uid", str("SeriesInstanceUID of a CT series")}, {"slice_index", integer("Slice to contour")}},
             {"series_uid"}));
  add("query_birads_model",
      "Breast MRI CAD. Returns laterality, lesion count, BI-RADS category and enhancement status.",
      object({{"series_uid", str("SeriesInstanceUID of an MR series")}}, {"series_uid"}));
  add("set_viewport_slice", "Move the viewport to a slice of the active series.",
      object({{"slice_index", integer("0-based slice index")}}, {"slice_index"}));
  add("set_window_level", "Set the display window.",
      object({{"window_width", number("Window width, > 0")}, {"window_center", number("Window center")}},
             {"window_width", "window_center"}));
  add("set_zoom", "Set the viewport zoom factor.", object({{"scale", number("Zoom factor, > 0")}}, {"scale"}));
  add("select_series", "Make a loaded series the active one (slice resets to 0).",
      object({{"series_uid", str("SeriesInstanceUID")}}, {"series_uid"}));
  add("add_circle_segmentation", "Place a circle in pixel coordinates on a slice of the active series.",
      object({{"label", str("Segment label")},
              {"slice_index", integer("0-based slice index")},
              {"center", point("[x, y]")},
              {"radius", number("Radius in pixels")}},
             {"label", "slice_index", "center", "radius"}));
  add("add_rectangle_segmentation", "Place an axis-aligned box in pixel coordinates on a slice of the active series.",
      object({{"label", str("Segment label")},
              {"slice_index", integer("0-based slice index")},
              {"top_left", point("[x, y]")},
              {"bottom_right", point("[x, y]")}},
             {"label", "slice_index", "top_left", "bottom_right"}));
  add("add_polygon_segmentation", "Place a polygon in pixel coordinates on a slice of the active series.",
      object({{"label", str("Segment label")},
              {"slice_index", integer("0-based slice index")},
              {"points", {{"type", "array"}, {"items", point("[x, y]")}, {"description", "[[x, y], ...]"}}}},
             {"label", "slice_index", "points"}));
  add("submit_answer", "Submit the final answer. Ends the episode.", object({{"answer", str("Answer text")}}, {"answer"}));
  json finding = object({{"location_quadrant", str("e.g. upper_outer")},
                         {"type", enumeration({"mass", "non_mass", "focus"}, "Lesion type")},
                         {"size_mm", number("Longest diameter in mm")},
                         {"shape", str("BI-RADS shape")},
                         {"margin", str("BI-RADS margin")},
                         {"enhancement", str("Enhancement pattern")}});
  add("submit_birads_report", "Submit a structured breast MRI BI-RADS report. Ends the episode.",
      object({{"laterality", enumeration({"left", "right", "bilateral", "none"}, "Side(s) with findings")},
              {"lesion_count", integer("Number of lesions")},
              {"birads_category", integer("BI-RADS assessment category 0-6")},
              {"enhancement_present", {{"type", "boolean"}, {"description", "Any enhancing lesion"}}},
              {"findings", {{"type", "array"}, {"items", finding}}},
              {"recommendation", str("Free-text recommendation")}},
             {"laterality", "lesion_count", "birads_category", "enhancement_present"}));
  add("submit_longitudinal_finding",
      "Log one longitudinal finding on the follow-up series. Not terminal; call once per finding.",
      object({{"finding_type", enumeration({"new_lesion", "size_change", "no_change"}, "Kind of change")},
              {"slice_index", integer("Follow-up slice index")},
              {"location", point("[x, y] in follow-up pixel coordinates")},
              {"description", str("Optional note")}},
             {"finding_type", "slice_index", "location"}));
  add("submit_longitudinal_complete", "Finish the longitudinal comparison. Ends the episode.",
      object({{"summary", str("Optional summary")}}));
  return s;
}

}  // namespace detail

inline const std::vector<ToolSchema>& all_schemas() {
  static const std::vector<ToolSchema> kSchemas = detail::build_schemas();
  return kSchemas;
}

inline const ToolSchema& schema(std::string_view name) {
  for (const auto& s : all_schemas())
    if (s.name == name) return s;
  throw Error(ErrorCode::UnknownTool, std::string(name));
}

/// Availability matrix: which task types see which tool.
inline bool visible(std::string_view tool, TaskType t) {
  using enum TaskType;
  auto any_of = [t](std::initializer_list<TaskType> types) { return std::find(types.begin(), types.end(), t) != types.end(); };
  if (tool == "get_viewport_state" || tool == "set_viewport_slice" || tool == "set_window_level" || tool == "set_zoom" ||
      tool == "select_series")
    return t != VisionProbe;
  if (tool == "get_study_metadata" || tool == "get_study_series" || tool == "get_series_metadata" ||
      tool == "get_instance_metadata")
    return t != ViewerControl && t != VisionProbe;
  if (tool == "get_dicom_image" || tool == "get_viewer_screenshot" || tool == "add_circle_segmentation" ||
      tool == "add_rectangle_segmentation")
    return any_of({Annotation, Longitudinal, BiradsReport});
  if (tool == "add_polygon_segmentation" || tool == "list_segmentations")
    return any_of({Annotation, OracleAnnotation, Longitudinal, BiradsReport});
  if (tool == "query_pathology_model") return t == OracleAnnotation;
  if (tool == "query_birads_model") return t == OracleBiradsReport;
  if (tool == "submit_answer") return t != ViewerControl;
  if (tool == "submit_birads_report") return any_of({OracleBiradsReport, BiradsReport});
  if (tool == "submit_longitudinal_finding" || tool == "submit_longitudinal_complete") return t == Longitudinal;
  throw Error(ErrorCode::UnknownTool, std::string(tool));
}

inline std::vector<ToolSchema> visible_schemas(TaskType t) {
  std::vector<ToolSchema> out;
  for (const auto& s : all_schemas())
    if (visible(s.name, t)) out.push_back(s);
  return out;
}

inline std::vector<ToolSchema> visible_schemas(std::string_view task_type) {
  return visible_schemas(tasks::parse_task_type(task_type));
}

// ---------------------------------------------------------------------------
// Argument validation against the schema subset used above

namespace detail {

inline bool integral(const json& v) {
  if (v.is_number_integer()) return true;
  if (!v.is_number_float()) return false;
  double d = v.get<double>();
  return std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15;
}

inline void validate(const json& value, const json& sch, const std::string& path) {
  auto fail = [&](const std::string& why) { throw Error(ErrorCode::SchemaValidationError, path + ": " + why); };
  const std::string type = sch.value("type", "");
  if (type == "object") {
    if (!value.is_object()) fail("expected object");
    for (const auto& req : sch.value("required", json::array()))
      if (!value.contains(req.get<std::string>())) fail("missing required '" + req.get<std::string>() + "'");
    const auto& props = sch.at("properties");
    for (auto it = value.begin(); it != value.end(); ++it)
      if (props.contains(it.key())) validate(it.value(), props.at(it.key()), path + "." + it.key());
  } else if (type == "array") {
    if (!value.is_array()) fail("expected array");
    if (sch.contains("minItems") && value.size() < sch["minItems"].get<std::size_t>())
      fail("needs at least " + std::to_string(sch["minItems"].get<int>()) + " items");
    if (sch.contains("maxItems") && value.size() > sch["maxItems"].get<std::size_t>())
      fail("allows at most " + std::to_string(sch["maxItems"].get<int>()) + " items");
    for (std::size_t i = 0; i < value.size(); ++i) validate(value[i], sch.at("items"), path + "[" + std::to_string(i) + "]");
  } else if (type == "string") {
    if (!value.is_string()) fail("expected string");
    if (sch.contains("enum")) {
      const auto& e = sch["enum"];
      if (std::find(e.begin(), e.end(), value) == e.end()) fail("'" + value.get<std::string>() + "' is not an allowed value");
    }
  } else if (type == "integer") {
    if (!integral(value)) fail("expected integer");
  } else if (type == "number") {
    if (!value.is_number() || !std::isfinite(value.get<double>())) fail("expected finite number");
  } else if (type == "boolean") {
    if (!value.is_boolean()) fail("expected boolean");
  }
}

}  // namespace detail

/// Throws SchemaValidationError on missing or ill-typed arguments. Unknown
/// extra properties are ignored.
inline void validate_args(std::string_view tool, const json& args) {
  detail::validate(args, schema(tool).parameters, std::string(tool));
}

// ---------------------------------------------------------------------------
// Episode and dispatch

struct Environment {
  std::shared_ptr<const pacs::Store> store;
  std::shared_ptr<const phantom::TruthCatalog> truth;
};

struct ToolError {
  ErrorCode code;
  std::string message;
};

struct ToolResult {
  bool success = false;
  json payload;  // success only
  std::optional<ToolError> error;
  bool terminal = false;
  /// Per-call parameter rubric (1 or 0); empty for calls without arguments.
  std::optional<double> param_score;

  json to_json() const {
    json j{{"success", success}};
    if (success)
      j["payload"] = payload;
    else
      j["error"] = {{"code", radgym::to_string(error->code)}, {"message", error->message}};
    return j;
  }
};

struct LongitudinalFinding {
  std::string finding_type;
  int slice_index = 0;
  double x = 0;
  double y = 0;
  std::string description;
};

inline json to_json(const LongitudinalFinding& f) {
  return {{"finding_type", f.finding_type}, {"slice_index", f.slice_index}, {"location", {f.x, f.y}}, {"description", f.description}};
}

/// Confidence reported by the pathology oracle for one lesion.
inline double finding_confidence(std::string_view family_id, int lesion_id) {
  Rng rng(mix_seed(fnv1a(family_id), "confidence/" + std::to_string(lesion_id)));
  return std::round((0.7 + 0.29 * rng.uniform01()) * 100.0) / 100.0;
}

/// Same argument shape submit_birads_report accepts.
inline json birads_payload(const phantom::BiradsRecord& r) {
  json j{{"laterality", r.laterality},
         {"lesion_count", r.lesion_count},
         {"birads_category", r.birads_category},
         {"enhancement_present", r.enhancement_present}};
  if (r.quadrant) j["findings"] = json::array({{{"location_quadrant", *r.quadrant}}});
  return j;
}

class Episode {
 public:
  Episode(tasks::TaskSpec task, Environment env)
      : task_(std::move(task)), env_(std::move(env)), viewer_(viewer::Viewer::reset(task_.reset_params(), *env_.store)) {}

  const tasks::TaskSpec& task() const { return task_; }
  const Environment& env() const { return env_; }

  viewer::ViewportState state() const {
    std::lock_guard lock(mu_);
    return viewer_.state();
  }
  std::vector<viewer::Segmentation> segmentations() const {
    std::lock_guard lock(mu_);
    return viewer_.segmentations();
  }
  bool finished() const {
    std::lock_guard lock(mu_);
    return finished_;
  }
  std::optional<std::string> answer() const {
    std::lock_guard lock(mu_);
    return answer_;
  }
  std::optional<json> birads_report() const {
    std::lock_guard lock(mu_);
    return birads_report_;
  }
  std::vector<LongitudinalFinding> findings() const {
    std::lock_guard lock(mu_);
    return findings_;
  }
  bool longitudinal_complete() const {
    std::lock_guard lock(mu_);
    return longitudinal_complete_;
  }

  /// Dispatches one call. Failures come back as results, never as exceptions,
  /// and leave the episode unchanged.
  ToolResult call(const std::string& name, const json& args) {
    std::lock_guard lock(mu_);
    ToolResult r;
    auto fail = [&](ErrorCode code, std::string msg) {
      r.success = false;
      r.payload = nullptr;
      r.error = ToolError{code, std::move(msg)};
      return r;
    };
    if (finished_) return fail(ErrorCode::EpisodeFinished, "episode already ended");
    if (!is_tool(name)) return fail(ErrorCode::UnknownTool, name);
    if (!visible(name, task_.tool_set))
      return fail(ErrorCode::ToolNotVisible, name + " is not available for " + std::string(tasks::to_string(task_.tool_set)));
    const json a = args.is_null() ? json::object() : args;
    try {
      validate_args(name, a);
    } catch (const Error& e) {
      r.param_score = 0.0;
      return fail(e.code(), e.detail());
    }
    if (!a.empty()) r.param_score = param_ok(name, a) ? 1.0 : 0.0;
    try {
      r.payload = dispatch(name, a);
      r.success = true;
      r.terminal = is_terminal(name);
      if (r.terminal) finished_ = true;
    } catch (const Error& e) {
      return fail(e.code(), e.detail());
    } catch (const std::exception& e) {
      return fail(ErrorCode::InvariantViolation, e.what());
    }
    return r;
  }

 private:
  const pacs::Store& store() const { return *env_.store; }

  static long long as_ll(const json& v) { return static_cast<long long>(std::llround(v.get<double>())); }
  static geom::Point as_point(const json& v) { return {v.at(0).get<double>(), v.at(1).get<double>()}; }

  int series_length(const std::string& uid) const {
    return store().has_series(uid) ? static_cast<int>(store().series(uid).instances.size()) : 0;
  }

  /// Per-call parameter rubric, evaluated against the state before dispatch.
  bool param_ok(const std::string& name, const json& a) const {
    const auto& st = viewer_.state();
    auto slice_in = [](long long s, int n) { return s >= 0 && s < n; };
    if (a.contains("study_uid") && !store().has_study(a["study_uid"].get<std::string>())) return false;
    if (a.contains("series_uid") && !store().has_series(a["series_uid"].get<std::string>())) return false;
    if (name == "get_instance_metadata") {
      try {
        store().locate(a["sop_uid"].get<std::string>());
      } catch (const Error&) {
        return false;
      }
    }
    if (name == "get_dicom_image" || name == "query_pathology_model") {
      const auto uid = a["series_uid"].get<std::string>();
      if (a.contains("slice_index") && !slice_in(as_ll(a["slice_index"]), series_length(uid))) return false;
      if (a.contains("preprocessor")) {
        auto p = imaging::parse_pipeline(a["preprocessor"].get<std::string>());
        if (!imaging::compatible(p, store().series(uid).modality)) return false;
      }
    }
    if (name == "set_viewport_slice" || name.starts_with("add_"))
      if (!slice_in(as_ll(a["slice_index"]), st.total_images)) return false;
    if (name == "set_window_level" && !(a["window_width"].get<double>() > 0)) return false;
    if (name == "set_zoom" && !(a["scale"].get<double>() > 0)) return false;
    if (name == "select_series") {
      const auto uid = a["series_uid"].get<std::string>();
      if (std::find(st.display_set_uids.begin(), st.display_set_uids.end(), uid) == st.display_set_uids.end()) return false;
    }
    if (name.starts_with("add_")) {
      const auto& g = store().series(st.series_uid).geometry;
      auto shape = shape_from(name, a);
      try {
        viewer::validate_shape(shape);
      } catch (const Error&) {
        return false;
      }
      if (const auto* poly = std::get_if<geom::Polygon>(&shape)) {
        for (auto p : poly->points)
          if (p.x < 0 || p.y < 0 || p.x > g.columns || p.y > g.rows) return false;
      } else if (!geom::intersects_frame(shape, g.columns, g.rows)) {
        return false;
      }
    }
    if (name == "submit_birads_report") {
      auto c = as_ll(a["birads_category"]);
      if (c < 0 || c > 6 || as_ll(a["lesion_count"]) < 0) return false;
    }
    if (name == "submit_longitudinal_finding" &&
        !slice_in(as_ll(a["slice_index"]), series_length(task_.initial_series_uid)))
      return false;
    if (name == "submit_answer" && a["answer"].get<std::string>().find_first_not_of(" \t\n") == std::string::npos)
      return false;
    return true;
  }

  static geom::Shape shape_from(const std::string& name, const json& a) {
    if (name == "add_circle_segmentation") return geom::Circle{as_point(a["center"]), a["radius"].get<double>()};
    if (name == "add_rectangle_segmentation") return geom::Rectangle{as_point(a["top_left"]), as_point(a["bottom_right"])};
    geom::Polygon poly;
    for (const auto& p : a["points"]) poly.points.push_back(as_point(p));
    return poly;
  }

  const phantom::FamilyRecord* family_of_series(const std::string& series_uid) const {
    if (!env_.truth) return nullptr;
    return env_.truth->family_of_study(store().series(series_uid).study_uid);
  }

  json dispatch(const std::string& name, const json& a) {
    auto s = [&](const char* key) { return a.at(key).get<std::string>(); };
    if (name == "get_study_metadata") return store().study_metadata(s("study_uid"));
    if (name == "get_study_series") return store().study_series(s("study_uid"));
    if (name == "get_series_metadata") return store().series_metadata(s("series_uid"));
    if (name == "get_instance_metadata") return store().instance_metadata(s("study_uid"), s("series_uid"), s("sop_uid"));
    if (name == "get_viewport_state") return viewer::to_json(viewer_.state());
    if (name == "list_segmentations") return {{"segmentations", viewer_.list_segmentations()}};
    if (name == "get_viewer_screenshot") {
      auto png = imaging::render_screenshot(viewer_.state(), viewer_.segmentations(), store());
      auto be32 = [&](std::size_t off) {
        return (static_cast<unsigned char>(png[off]) << 24) | (static_cast<unsigned char>(png[off + 1]) << 16) |
               (static_cast<unsigned char>(png[off + 2]) << 8) | static_cast<unsigned char>(png[off + 3]);
      };
      return {{"image", base64_encode(png)},
              {"mime_type", "image/png"},
              {"width", be32(16)},
              {"height", be32(20)},
              {"viewport", viewer::to_json(viewer_.state())}};
    }
    if (name == "get_dicom_image") {
      const auto series_uid = s("series_uid");
      const auto& series = store().series(series_uid);
      if (series.study_uid != s("study_uid"))
        throw Error(ErrorCode::UnknownUID, "series: " + series_uid + " is not in study " + s("study_uid"));
      auto p = imaging::parse_pipeline(a.value("preprocessor", "default"));
      auto img = imaging::preprocess_frame(store(), series_uid, as_ll(a["slice_index"]), p);
      return {{"image", base64_encode(img.png)},
              {"mime_type", "image/png"},
              {"width", img.width},
              {"height", img.height},
              {"bit_depth", img.bit_depth},
              {"series_uid", series_uid},
              {"slice_index", as_ll(a["slice_index"])},
              {"preprocessor", imaging::to_string(p)}};
    }
    if (name == "query_pathology_model") return query_pathology(s("series_uid"), a);
    if (name == "query_birads_model") {
      const auto uid = s("series_uid");
      if (!store().has_series(uid)) throw Error(ErrorCode::UnknownSeries, uid);
      const auto* fam = family_of_series(uid);
      if (store().series(uid).modality != "MR" || !fam || !fam->truth.birads)
        throw Error(ErrorCode::UnknownSeries, uid + " is not a breast MRI series");
      return birads_payload(*fam->truth.birads);
    }
    if (name == "set_viewport_slice") {
      viewer_.navigate(viewer::SetSlice{as_ll(a["slice_index"])}, store());
      return {{"viewport", viewer::to_json(viewer_.state())}};
    }
    if (name == "set_window_level") {
      viewer_.navigate(viewer::SetWindowLevel{a["window_width"].get<double>(), a["window_center"].get<double>()}, store());
      return {{"viewport", viewer::to_json(viewer_.state())}};
    }
    if (name == "set_zoom") {
      viewer_.navigate(viewer::SetZoom{a["scale"].get<double>()}, store());
      return {{"viewport", viewer::to_json(viewer_.state())}};
    }
    if (name == "select_series") {
      viewer_.navigate(viewer::SelectSeries{s("series_uid")}, store());
      return {{"viewport", viewer::to_json(viewer_.state())}};
    }
    if (name.starts_with("add_")) {
      int id = viewer_.add_segmentation(s("label"), as_ll(a["slice_index"]), shape_from(name, a), store());
      return {{"segmentation_id", id}, {"segmentation", viewer::to_json(viewer_.segmentations().back())}};
    }
    if (name == "submit_answer") {
      answer_ = s("answer");
      return {{"accepted", true}};
    }
    if (name == "submit_birads_report") {
      birads_report_ = a;
      return {{"accepted", true}};
    }
    if (name == "submit_longitudinal_finding") {
      auto slice = as_ll(a["slice_index"]);
      const int n = series_length(task_.initial_series_uid);
      if (slice < 0 || slice >= n)
        throw Error(ErrorCode::SliceOutOfRange, "slice " + std::to_string(slice) + " not in [0, " + std::to_string(n) + ")");
      auto p = as_point(a["location"]);
      findings_.push_back({s("finding_type"), static_cast<int>(slice), p.x, p.y, a.value("description", "")});
      return {{"finding_index", findings_.size() - 1}};
    }
    if (name == "submit_longitudinal_complete") {
      longitudinal_complete_ = true;
      return {{"accepted", true}, {"findings", findings_.size()}};
    }
    throw Error(ErrorCode::UnknownTool, name);
  }

  json query_pathology(const std::string& series_uid, const json& a) const {
    if (!store().has_series(series_uid)) throw Error(ErrorCode::UnknownSeries, series_uid);
    const auto* fam = family_of_series(series_uid);
    std::vector<const phantom::LesionTruth*> lesions;
    if (fam)
      for (const auto& l : fam->truth.lesions)
        if (l.series_uid == series_uid) lesions.push_back(&l);
    if (!a.contains("slice_index")) {
      json findings = json::array();
      for (const auto* l : lesions) {
        auto sl = l->slices();
        findings.push_back({{"lesion_id", l->id},
                            {"label", l->label},
                            {"first_slice", sl.front()},
                            {"last_slice", sl.back()},
                            {"slice_range", {sl.front(), sl.back()}},
                            {"confidence", finding_confidence(fam->family_id, l->id)},
                            {"representative_slice", l->representative_slice}});
      }
      return {{"series_uid", series_uid}, {"findings", findings}};
    }
    const auto slice = as_ll(a["slice_index"]);
    const int n = series_length(series_uid);
    if (slice < 0 || slice >= n)
      throw Error(ErrorCode::SliceOutOfRange, "slice " + std::to_string(slice) + " not in [0, " + std::to_string(n) + ")");
    json contours = json::array();
    for (const auto* l : lesions) {
      auto mask = l->mask_on(static_cast<int>(slice));
      if (mask.empty()) continue;
      auto poly = geom::trace_contour(mask);
      json pts = json::array();
      for (auto p : poly.points) pts.push_back({p.x, p.y});
      contours.push_back({{"lesion_id", l->id}, {"label", l->label}, {"points", pts}});
    }
    if (contours.empty())
      throw Error(ErrorCode::NoFindingOnSlice, "no finding on slice " + std::to_string(slice) + " of " + series_uid);
    return {{"series_uid", series_uid}, {"slice_index", slice}, {"contours", contours}};
  }

  tasks::TaskSpec task_;
  Environment env_;
  mutable std::mutex mu_;
  viewer::Viewer viewer_;
  bool finished_ = false;
  std::optional<std::string> answer_;
  std::optional<json> birads_report_;
  std::vector<LongitudinalFinding> findings_;
  bool longitudinal_complete_ = false;
};

}  // namespace radgym::tools
