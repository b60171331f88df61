#pragma once

// Task suite generation: the eight task types, description templates,
// reference trajectories, turn caps, YAML task files and the agent prompt.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "radgym/error.hpp"
#include "radgym/pacs.hpp"
#include "radgym/phantom.hpp"
#include "radgym/util.hpp"
#include "radgym/viewer.hpp"

namespace radgym::tasks {

using nlohmann::json;

enum class TaskType {
  ViewerControl,
  MetadataQa,
  VisionProbe,
  Annotation,
  OracleAnnotation,
  OracleBiradsReport,
  Longitudinal,
  BiradsReport,
};

inline constexpr std::array<TaskType, 8> kAllTaskTypes{
    TaskType::ViewerControl,      TaskType::MetadataQa,   TaskType::VisionProbe,  TaskType::Annotation,
    TaskType::OracleAnnotation,   TaskType::OracleBiradsReport, TaskType::Longitudinal, TaskType::BiradsReport};

inline constexpr std::array<std::string_view, 8> kTaskTypeNames{
    "viewer_control", "metadata_qa",          "vision_probe", "annotation",
    "oracle_annotation", "oracle_birads_report", "longitudinal", "birads_report"};

inline std::string_view to_string(TaskType t) { return kTaskTypeNames[static_cast<std::size_t>(t)]; }

inline TaskType parse_task_type(std::string_view s) {
  for (std::size_t i = 0; i < kTaskTypeNames.size(); ++i)
    if (kTaskTypeNames[i] == s) return static_cast<TaskType>(i);
  throw Error(ErrorCode::UnknownTaskType, std::string(s));
}

enum class Tier { Easy, Medium, Hard };

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::Easy: return "easy";
    case Tier::Medium: return "medium";
    case Tier::Hard: return "hard";
  }
  return "easy";
}

inline Tier parse_tier(std::string_view s) {
  if (s == "easy") return Tier::Easy;
  if (s == "medium") return Tier::Medium;
  if (s == "hard") return Tier::Hard;
  throw Error(ErrorCode::ParseError, "unknown tier '" + std::string(s) + "'");
}

inline Tier tier_of(TaskType t) {
  switch (t) {
    case TaskType::ViewerControl:
    case TaskType::MetadataQa:
    case TaskType::VisionProbe: return Tier::Easy;
    case TaskType::Annotation:
    case TaskType::OracleAnnotation:
    case TaskType::OracleBiradsReport: return Tier::Medium;
    case TaskType::Longitudinal:
    case TaskType::BiradsReport: return Tier::Hard;
  }
  return Tier::Easy;
}

/// Perception tasks cannot be solved from tags or oracle payloads alone.
inline bool is_perception(TaskType t) {
  return t == TaskType::VisionProbe || t == TaskType::Annotation || t == TaskType::Longitudinal ||
         t == TaskType::BiradsReport;
}

struct TaskSpec {
  std::string task_id;
  TaskType task_type = TaskType::ViewerControl;
  Tier tier = Tier::Easy;
  std::string study_uid;
  std::vector<std::string> auxiliary_study_uids;
  std::string initial_series_uid;
  int initial_slice_index = 0;
  std::string task_description;
  json expected_outcome = json::object();
  std::vector<std::string> reference_trajectory;
  int max_turns = 10;
  TaskType tool_set = TaskType::ViewerControl;

  std::string subtype() const { return expected_outcome.value("subtype", ""); }
  std::string family_id() const { return expected_outcome.value("family_id", ""); }
  viewer::ResetParams reset_params() const {
    return {study_uid, auxiliary_study_uids, initial_series_uid, initial_slice_index};
  }
};

// ---------------------------------------------------------------------------
// Reference trajectories

struct TrajectoryParams {
  int N = 1;  // slices a nodule spans
  int K = 1;  // oracle findings
  int L = 1;  // ground-truth lesions in a longitudinal pair
  int V = 1;  // MR series shown, capped at 4
};

inline TaskType type_of_subtype(std::string_view subtype) {
  if (subtype.starts_with("t1_")) return TaskType::ViewerControl;
  if (subtype.starts_with("t2_") || subtype == "t4_interval" || subtype == "t4_slice_diff") return TaskType::MetadataQa;
  if (subtype.starts_with("vp_")) return TaskType::VisionProbe;
  if (subtype == "t3_nodule" || subtype == "t3_find") return TaskType::Annotation;
  if (subtype == "t3_oracle_birads") return TaskType::OracleBiradsReport;
  if (subtype.starts_with("t3_oracle_")) return TaskType::OracleAnnotation;
  if (subtype.starts_with("t4_lesion_")) return TaskType::Longitudinal;
  if (subtype == "t4_birads") return TaskType::BiradsReport;
  throw Error(ErrorCode::UnknownSubtype, std::string(subtype));
}

inline std::vector<std::string> reference_trajectory(std::string_view subtype, const TrajectoryParams& p = {}) {
  using V = std::vector<std::string>;
  auto repeat = [](V& out, const V& block, int times) {
    for (int i = 0; i < times; ++i) out.insert(out.end(), block.begin(), block.end());
  };
  const std::string svs = "set_viewport_slice", swl = "set_window_level", gss = "get_study_series",
                    gsm = "get_study_metadata", gdi = "get_dicom_image", qpm = "query_pathology_model",
                    submit = "submit_answer", sel = "select_series";
  if (subtype == "t1_slice") return {svs};
  if (subtype.starts_with("t1_wl_")) return {swl};
  if (subtype == "t1_slice_wl") return {svs, swl};
  if (subtype == "t1_series") return {gss, sel};
  if (subtype == "t2_slices" || subtype == "t2_modalities" || subtype == "t2_ct_uid") return {gss, submit};
  if (subtype == "t2_nseries" || subtype == "t2_date") return {gsm, submit};
  if (subtype == "t4_interval") return {gsm, gsm, submit};
  if (subtype == "t4_slice_diff") return {gss, gss, submit};
  if (subtype == "vp_mod" || subtype == "vp_pre") return {submit};
  if (subtype == "t3_nodule") return {gss, svs, swl, gdi, "add_circle_segmentation"};
  if (subtype == "t3_find") {
    V out{gss, svs, swl, gdi, "add_circle_segmentation"};
    repeat(out, {svs, gdi, "add_circle_segmentation"}, p.N - 1);
    return out;
  }
  if (subtype == "t3_oracle_single") return {gss, qpm, qpm, svs, "add_polygon_segmentation"};
  if (subtype == "t3_oracle_multi" || subtype == "t3_oracle_vol") {
    V out{gss, qpm};
    repeat(out, {qpm, svs, "add_polygon_segmentation"}, subtype == "t3_oracle_multi" ? p.K : p.N);
    return out;
  }
  if (subtype == "t3_oracle_birads") return {gss, "query_birads_model", "submit_birads_report"};
  if (subtype == "t4_lesion_single" || subtype == "t4_lesion_multi") {
    V out{gss, sel, swl};
    repeat(out, {svs, gdi}, 5);
    out.insert(out.end(), {sel, svs, swl});
    repeat(out, {svs, gdi}, 5);
    repeat(out, {"submit_longitudinal_finding"}, subtype == "t4_lesion_single" ? 1 : p.L);
    out.push_back("submit_longitudinal_complete");
    return out;
  }
  if (subtype == "t4_birads") {
    V out{gss};
    V block{sel};
    repeat(block, {svs, gdi}, 3);
    repeat(out, block, p.V);
    out.push_back("submit_birads_report");
    return out;
  }
  throw Error(ErrorCode::UnknownSubtype, std::string(subtype));
}

inline TrajectoryParams params_from(const json& expected) {
  TrajectoryParams p;
  if (auto it = expected.find("trajectory_params"); it != expected.end()) {
    p.N = it->value("N", 1);
    p.K = it->value("K", 1);
    p.L = it->value("L", 1);
    p.V = it->value("V", 1);
  }
  return p;
}

inline std::vector<std::string> reference_trajectory(const TaskSpec& task) {
  return reference_trajectory(task.subtype(), params_from(task.expected_outcome));
}

inline int turn_cap(std::size_t reference_length) {
  return std::max(2 * static_cast<int>(reference_length), 10);
}

// ---------------------------------------------------------------------------
// Description templates. A literal \n renders as a newline.

inline const std::map<std::string, std::string, std::less<>>& templates() {
  static const std::map<std::string, std::string, std::less<>> kTemplates{
      {"t1_slice", "Navigate to slice {target} of the current CT series."},
      {"t1_wl",
       "Set the window width to {preset.ww} and window center to {preset.wc} for a standard {preset.label} on this "
       "{patient_id} chest CT."},
      {"t1_slice_wl",
       "Navigate to slice {target} and apply a bone window (window width 2500, window center 480) on this "
       "{patient_id} CT."},
      {"t1_series",
       "The current viewport shows a CT series from {patient_id}. First query the study metadata to discover "
       "available series, then select the {target.modality} series (\"{target.description}\")."},
      {"t2_slices",
       "How many CT image slices are in the {patient_id} study? Query the series metadata and count the instances in "
       "the CT series. Answer with only the integer count."},
      {"t2_nseries",
       "How many series are in the {patient_id} study (StudyInstanceUID: {study_uid})? Count all series regardless "
       "of modality. Answer with only the integer count."},
      {"t2_modalities",
       "What distinct imaging modalities are present in the {patient_id} study? Query the series metadata and list "
       "all unique modality values, sorted alphabetically and separated by commas. Answer with only the "
       "comma-separated list (e.g., `CT, SEG, SR'), no other text."},
      {"t2_date",
       "What is the study date (StudyDate DICOM tag) for the {patient_id} study? Answer with only the 8-digit date in "
       "YYYYMMDD format (e.g., `20000101'), no other text."},
      {"t2_ct_uid",
       "What is the SeriesInstanceUID of the CT series in the {patient_id} study? Query the series metadata and find "
       "the series with modality CT. Answer with only the SeriesInstanceUID string, no label or other text."},
      {"t4_interval",
       "What is the time interval (in days) between the baseline study (StudyInstanceUID: {baseline.study_uid}) and "
       "the follow-up study (StudyInstanceUID: {followup.study_uid}) for participant {participant_id}? Query the "
       "study metadata for both studies and compute the difference in StudyDate values. Answer with only the integer "
       "number of days, no other text."},
      {"t4_slice_diff",
       "How many more (or fewer) CT slices does the follow-up study have compared to the baseline for participant "
       "{participant_id}? Baseline StudyInstanceUID: {baseline.study_uid}. Follow-up StudyInstanceUID: "
       "{followup.study_uid}. Query series metadata for both studies, find the CT series in each, and report the "
       "difference (follow-up minus baseline). Use a positive number if follow-up has more slices, negative if "
       "fewer. Answer with only the signed integer (e.g., `-17' or `24'), no other text."},
      {"vp_mod",
       "What modality is this image?\\nA) CT\\nB) MRI\\nC) DX\\nD) N/A\\n\\nRespond by calling submit_answer with "
       "only the letter."},
      {"vp_pre",
       "What windowing preset was applied to this image?\\nA) Lung window\\nB) Soft tissue window\\nC) Default\\nD) "
       "Breast MRI\\nE) N/A\\n\\nRespond by calling submit_answer with only the letter."},
      {"t3_nodule",
       "Navigate to slice {slice_index} of the CT series and place a segmentation annotation on the pulmonary nodule "
       "(\"{segment_label}\") in this {patient_id} chest CT. Apply a lung window (WW: 1500, WC: -600) for optimal "
       "visualization. Use a circle or polygon region to outline the nodule."},
      {"t3_find",
       "Find and segment the nodule labeled \"{label}\" in this {patient_id} chest CT. The nodule is visible on "
       "slices {first_slice} through {last_slice} ({num_slices} slices). Navigate to each slice, apply a lung window, "
       "inspect the image, and place a segmentation annotation on every slice where this specific nodule is "
       "present."},
      {"t3_oracle_single",
       "Use the external pathology detection model to identify and segment the pulmonary nodule in this "
       "{patient_id} chest CT. First query the model for an overview of findings in the CT series, then request the "
       "precise segmentation contour for the recommended slice. Navigate to that slice and place the annotation "
       "using the model's output."},
      {"t3_oracle_multi",
       "Use the external pathology detection model to identify and segment all pulmonary nodules in this "
       "{patient_id} chest CT. Query the model for an overview of all findings, then for each finding request the "
       "precise contour, navigate to the slice, and place an annotation. Annotate all findings."},
      {"t3_oracle_vol",
       "Use the external pathology detection model to segment the nodule \"{segment_label}\" across all its slices "
       "in this {patient_id} chest CT. Query the model for an overview, then for each slice in the nodule's range, "
       "request the precise contour, navigate to the slice, and place the annotation."},
      {"t3_oracle_birads",
       "You are viewing a breast MRI study for patient {patient_id}. An external breast MRI CAD model is available "
       "via the query_birads_model tool. Query the model for the loaded series to obtain BI-RADS findings, then "
       "submit a structured BI-RADS report using submit_birads_report with the model's findings including "
       "laterality, lesion count, BI-RADS category, and whether enhancement is present."},
      {"t4_lesion_single",
       "Compare baseline and follow-up chest CTs for participant {participant_id}. A new lesion has appeared on the "
       "follow-up scan that was not present on the baseline. Baseline StudyInstanceUID: {baseline.study_uid} "
       "(series: {baseline.series_uid}). Follow-up StudyInstanceUID: {followup.study_uid} (series: "
       "{followup.series_uid}). First examine the baseline CT to understand the normal anatomy, then switch to the "
       "follow-up CT and navigate through slices to find the new lesion. Use get_dicom_image with lung_window "
       "preprocessor to view the images. Once you locate the new lesion, submit its location using "
       "submit_longitudinal_finding."},
      {"t4_lesion_multi",
       "Compare baseline and follow-up chest CTs for participant {participant_id}. Multiple new lesions may have "
       "appeared on the follow-up scan. Baseline StudyInstanceUID: {baseline.study_uid} (series: "
       "{baseline.series_uid}). Follow-up StudyInstanceUID: {followup.study_uid} (series: {followup.series_uid}). "
       "Examine both studies using lung window settings, identify all new findings, and submit each one using "
       "submit_longitudinal_finding. When done, call submit_longitudinal_complete."},
      {"t4_birads",
       "You are viewing a breast MRI study (StudyInstanceUID: {study_uid}). This study contains {n_series} MR series "
       "including dynamic contrast-enhanced (DCE) sequences.\\n\\nAvailable MR series:\\n{series_list}\\n\\n"
       "Navigate through the available series to identify any enhancing lesions. Compare pre-contrast and "
       "post-contrast sequences to assess enhancement. Produce a structured BI-RADS report by calling "
       "submit_birads_report with your findings including laterality, lesion count, BI-RADS category, and whether "
       "enhancement is present."},
  };
  return kTemplates;
}

using Fields = std::map<std::string, std::string, std::less<>>;

inline std::string render_description(TaskType type, std::string_view subtype, const Fields& fields) {
  if (type_of_subtype(subtype) != type)
    throw Error(ErrorCode::UnknownSubtype, std::string(subtype) + " is not a " + std::string(to_string(type)) + " subtype");
  std::string_view key = subtype.starts_with("t1_wl_") ? std::string_view("t1_wl") : subtype;
  auto it = templates().find(key);
  if (it == templates().end()) throw Error(ErrorCode::UnknownSubtype, std::string(subtype));
  const std::string& tpl = it->second;

  std::string out;
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    if (tpl[i] == '\\' && i + 1 < tpl.size() && tpl[i + 1] == 'n') {
      out += '\n';
      ++i;
    } else if (tpl[i] == '{') {
      auto close = tpl.find('}', i);
      auto name = std::string_view(tpl).substr(i + 1, close - i - 1);
      auto f = fields.find(name);
      if (f == fields.end()) throw Error(ErrorCode::UnboundPlaceholder, "{" + std::string(name) + "} in " + std::string(subtype));
      out += f->second;
      i = close;
    } else {
      out += tpl[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt

inline constexpr std::string_view kPreamble =
    "You are a radiology AI agent operating inside a medical imaging viewer.\n"
    "Use the available tools to complete the task described below. Be precise\n"
    "and efficient -- use only the tools necessary to complete the task. All\n"
    "coordinates are in pixel space.";

inline std::string assemble_prompt(const TaskSpec& task, const viewer::ViewportState& snapshot) {
  std::string out(kPreamble);
  if (!task.study_uid.empty()) {
    out += "\n\nStudy context:\n- StudyInstanceUID: " + task.study_uid +
           "\n- SeriesInstanceUID (loaded): " + task.initial_series_uid;
  }
  out += "\n\nCurrent viewer state:\n" + viewer::to_json(snapshot).dump(2);
  out += "\n\nTask: " + task.task_description;
  return out;
}

// ---------------------------------------------------------------------------
// Generation

struct SuiteConfig {
  std::uint64_t seed = 7;
  int per_type = 10;
};

namespace detail {

inline std::string number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  return format_fixed(v, 2);
}

inline int days_between(const std::string& a, const std::string& b) {
  using namespace std::chrono;
  auto parse = [](const std::string& s) {
    if (s.size() != 8) throw Error(ErrorCode::ParseError, "bad StudyDate '" + s + "'");
    return sys_days{year_month_day{year{std::stoi(s.substr(0, 4))}, month{static_cast<unsigned>(std::stoi(s.substr(4, 2)))},
                                   day{static_cast<unsigned>(std::stoi(s.substr(6, 2)))}}};
  };
  return static_cast<int>((parse(b) - parse(a)).count());
}

/// First series of the study with the given modality.
inline const dicom::SeriesRecord& series_with_modality(const pacs::Store& store, const std::string& study_uid,
                                                       std::string_view modality) {
  for (const auto& uid : store.study(study_uid).series_uids) {
    const auto& s = store.series(uid);
    if (s.modality == modality) return s;
  }
  throw Error(ErrorCode::InsufficientArchive, "study " + study_uid + " has no " + std::string(modality) + " series");
}

struct Builder {
  const pacs::Store& store;
  const phantom::TruthCatalog& truth;
  std::vector<TaskSpec> out;

  TaskSpec& add(TaskType type, const std::string& subtype, int index, const phantom::FamilyRecord& family,
                const Fields& fields, json expected, const TrajectoryParams& params = {}) {
    TaskSpec t;
    char id[64];
    std::snprintf(id, sizeof id, "%s-%03d", subtype.c_str(), index);
    t.task_id = id;
    t.task_type = type;
    t.tier = tier_of(type);
    t.tool_set = type;
    expected["subtype"] = subtype;
    expected["family_id"] = family.family_id;
    t.expected_outcome = std::move(expected);
    t.reference_trajectory = reference_trajectory(subtype, params);
    t.max_turns = turn_cap(t.reference_trajectory.size());
    t.task_description = render_description(type, subtype, fields);
    out.push_back(std::move(t));
    return out.back();
  }
};

}  // namespace detail

/// Deterministic suite over an archive. Annotation task i and oracle
/// annotation task i target the same lesion and name each other as siblings.
inline std::vector<TaskSpec> generate_suite(const pacs::Store& store, const phantom::TruthCatalog& truth,
                                            const SuiteConfig& cfg = {}) {
  using phantom::Profile;
  std::vector<const phantom::FamilyRecord*> ct, mr, lon;
  for (const auto& f : truth.families()) {
    if (f.profile == Profile::CT && !f.truth.lesions.empty()) ct.push_back(&f);
    if (f.profile == Profile::BreastMR && f.truth.birads) mr.push_back(&f);
    if (f.profile == Profile::LongitudinalCT && f.truth.longitudinal) lon.push_back(&f);
  }
  if (ct.empty()) throw Error(ErrorCode::InsufficientArchive, "CT");
  if (mr.empty()) throw Error(ErrorCode::InsufficientArchive, "BreastMR");
  if (lon.empty()) throw Error(ErrorCode::InsufficientArchive, "LongitudinalCT");
  if (cfg.per_type < 1) throw Error(ErrorCode::InvalidSpec, "per_type must be >= 1");

  detail::Builder b{store, truth, {}};
  const int n = cfg.per_type;
  auto rng_for = [&](std::string_view what) { return Rng(mix_seed(cfg.seed, std::string("suite/") + std::string(what))); };
  auto ct_series = [&](const phantom::FamilyRecord& f) -> const dicom::SeriesRecord& {
    return detail::series_with_modality(store, f.study_uids.front(), "CT");
  };

  // viewer_control
  {
    auto rng = rng_for("viewer_control");
    const std::array<std::string, 5> cycle{"t1_slice", "t1_wl_lung", "t1_slice_wl", "t1_series", "t1_wl_mediastinal"};
    for (int i = 0; i < n; ++i) {
      const auto& fam = *ct[static_cast<std::size_t>(i) % ct.size()];
      const auto& series = ct_series(fam);
      const auto count = static_cast<int>(series.instances.size());
      const auto& sub = cycle[static_cast<std::size_t>(i) % cycle.size()];
      int initial = static_cast<int>(rng.uniform_int(0, count - 1));
      int target = static_cast<int>(rng.uniform_int(0, count - 2));
      if (target >= initial) ++target;
      Fields f{{"patient_id", fam.patient_id}, {"target", std::to_string(target)}};
      json fields;
      if (sub == "t1_slice") {
        fields = {{"slice_index", target}};
      } else if (sub == "t1_slice_wl") {
        fields = {{"slice_index", target}, {"window_width", 2500}, {"window_center", 480}};
      } else if (sub == "t1_series") {
        const dicom::SeriesRecord* other = nullptr;
        for (const auto& uid : store.study(fam.study_uids.front()).series_uids)
          if (uid != series.uid) other = &store.series(uid);
        if (!other) throw Error(ErrorCode::InsufficientArchive, "t1_series needs a second series in " + fam.family_id);
        f["target.modality"] = other->modality;
        f["target.description"] = other->description;
        fields = {{"series_uid", other->uid}};
      } else {
        bool lung = sub == "t1_wl_lung";
        double ww = lung ? 1500 : 350, wc = lung ? -600 : 50;
        f["preset.ww"] = detail::number(ww);
        f["preset.wc"] = detail::number(wc);
        f["preset.label"] = lung ? "lung window" : "mediastinal window";
        fields = {{"window_width", ww}, {"window_center", wc}};
      }
      auto& t = b.add(TaskType::ViewerControl, sub, i, fam, f, {{"fields", fields}});
      t.study_uid = fam.study_uids.front();
      t.initial_series_uid = series.uid;
      t.initial_slice_index = initial;
    }
  }

  // metadata_qa
  {
    const std::array<std::string, 7> cycle{"t2_slices", "t2_nseries", "t2_modalities", "t2_date",
                                           "t2_ct_uid", "t4_interval", "t4_slice_diff"};
    for (int i = 0; i < n; ++i) {
      const auto& sub = cycle[static_cast<std::size_t>(i) % cycle.size()];
      const int round = i / static_cast<int>(cycle.size());
      std::string answer;
      if (sub.starts_with("t2_")) {
        const auto& fam = *ct[static_cast<std::size_t>(i + round) % ct.size()];
        const auto& study = store.study(fam.study_uids.front());
        const auto& series = ct_series(fam);
        if (sub == "t2_slices") answer = std::to_string(series.instances.size());
        if (sub == "t2_nseries") answer = std::to_string(study.series_uids.size());
        if (sub == "t2_date") answer = study.date;
        if (sub == "t2_ct_uid") answer = series.uid;
        if (sub == "t2_modalities") {
          for (const auto& m : study.modalities) answer += (answer.empty() ? "" : ", ") + m;
        }
        Fields f{{"patient_id", fam.patient_id}, {"study_uid", study.uid}};
        auto& t = b.add(TaskType::MetadataQa, sub, i, fam, f, {{"answer", answer}});
        t.study_uid = study.uid;
        t.initial_series_uid = series.uid;
      } else {
        const auto& fam = *lon[static_cast<std::size_t>(i + round) % lon.size()];
        const auto& lt = *fam.truth.longitudinal;
        const auto& base = store.study(lt.baseline_study_uid);
        const auto& follow = store.study(lt.followup_study_uid);
        if (sub == "t4_interval") {
          answer = std::to_string(detail::days_between(base.date, follow.date));
        } else {
          auto diff = static_cast<long long>(store.series(lt.followup_series_uid).instances.size()) -
                      static_cast<long long>(store.series(lt.baseline_series_uid).instances.size());
          answer = std::to_string(diff);
        }
        Fields f{{"participant_id", fam.patient_id},
                         {"baseline.study_uid", base.uid},
                         {"followup.study_uid", follow.uid}};
        auto& t = b.add(TaskType::MetadataQa, sub, i, fam, f, {{"answer", answer}});
        t.study_uid = follow.uid;
        t.auxiliary_study_uids = {base.uid};
        t.initial_series_uid = lt.followup_series_uid;
      }
    }
  }

  // vision_probe
  {
    struct Probe {
      const char* pipeline;
      const char* answer;
      bool mr;
    };
    const std::array<Probe, 4> presets{{{"lung_window", "A", false},
                                        {"soft_tissue_window", "B", false},
                                        {"default", "C", true},
                                        {"breast_mri", "D", true}}};
    for (int i = 0; i < n; ++i) {
      bool mod = i % 2 == 0;
      const int k = i / 2;
      std::string pipeline, answer;
      bool use_mr;
      if (mod) {
        use_mr = k % 2 == 1;
        pipeline = "default";
      } else {
        const auto& p = presets[static_cast<std::size_t>(k) % presets.size()];
        use_mr = p.mr;
        pipeline = p.pipeline;
        answer = p.answer;
      }
      const auto& fam = use_mr ? *mr[static_cast<std::size_t>(k) % mr.size()] : *ct[static_cast<std::size_t>(k) % ct.size()];
      const auto& study = store.study(fam.study_uids.front());
      const auto& series = use_mr ? store.series(study.series_uids.at(std::min<std::size_t>(1, study.series_uids.size() - 1)))
                                  : ct_series(fam);
      if (mod) answer = fam.truth.modality_letter;
      int slice = static_cast<int>(series.instances.size() / 2);
      if (!fam.truth.lesions.empty()) slice = fam.truth.lesions.front().representative_slice;
      json probe{{"series_uid", series.uid}, {"slice_index", slice}, {"pipeline", pipeline}};
      auto& t = b.add(TaskType::VisionProbe, mod ? "vp_mod" : "vp_pre", i, fam, {}, {{"answer", answer}, {"probe", probe}});
      t.study_uid = study.uid;
      t.initial_series_uid = series.uid;
      t.initial_slice_index = slice;
    }
  }

  // annotation and oracle_annotation, built in sibling pairs
  {
    std::vector<std::pair<const phantom::FamilyRecord*, const phantom::LesionTruth*>> lesions;
    for (const auto* fam : ct)
      for (const auto& l : fam->truth.lesions) lesions.emplace_back(fam, &l);
    auto rng = rng_for("annotation");
    std::vector<TaskSpec> real, oracle;
    for (int i = 0; i < n; ++i) {
      const auto& [fam, lesion] = lesions[static_cast<std::size_t>(i) % lesions.size()];
      const auto& series = ct_series(*fam);
      const bool find = i % 2 == 1;
      const auto slices = lesion->slices();
      const int initial = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(series.instances.size()) - 1));
      auto target = [&](const phantom::LesionTruth& l, const std::vector<int>& s) {
        return json{{"lesion_id", l.id}, {"label", l.label}, {"slices", s}};
      };

      std::string real_sub = find ? "t3_find" : "t3_nodule";
      std::string oracle_sub = find ? "t3_oracle_vol" : (fam->truth.lesions.size() > 1 ? "t3_oracle_multi" : "t3_oracle_single");
      Fields rf{{"patient_id", fam->patient_id}};
      json rtargets = json::array();
      TrajectoryParams rp;
      if (find) {
        rf["label"] = lesion->label;
        rf["first_slice"] = std::to_string(slices.front());
        rf["last_slice"] = std::to_string(slices.back());
        rf["num_slices"] = std::to_string(slices.size());
        rtargets.push_back(target(*lesion, slices));
        rp.N = static_cast<int>(slices.size());
      } else {
        rf["slice_index"] = std::to_string(lesion->representative_slice);
        rf["segment_label"] = lesion->label;
        rtargets.push_back(target(*lesion, {lesion->representative_slice}));
      }
      Fields of{{"patient_id", fam->patient_id}, {"segment_label", lesion->label}};
      json otargets = json::array();
      TrajectoryParams op;
      if (oracle_sub == "t3_oracle_vol") {
        otargets.push_back(target(*lesion, slices));
        op.N = static_cast<int>(slices.size());
      } else if (oracle_sub == "t3_oracle_multi") {
        for (const auto& l : fam->truth.lesions) otargets.push_back(target(l, {l.representative_slice}));
        op.K = static_cast<int>(fam->truth.lesions.size());
      } else {
        otargets.push_back(target(*lesion, {lesion->representative_slice}));
      }

      char real_id[64], oracle_id[64];
      std::snprintf(real_id, sizeof real_id, "%s-%03d", real_sub.c_str(), i);
      std::snprintf(oracle_id, sizeof oracle_id, "%s-%03d", oracle_sub.c_str(), i);
      json rp_json{{"N", rp.N}}, op_json{{"N", op.N}, {"K", op.K}};
      auto& rt = b.add(TaskType::Annotation, real_sub, i, *fam, rf,
                       {{"series_uid", series.uid}, {"targets", rtargets}, {"sibling", oracle_id}, {"trajectory_params", rp_json}},
                       rp);
      rt.study_uid = fam->study_uids.front();
      rt.initial_series_uid = series.uid;
      rt.initial_slice_index = initial;
      real.push_back(rt);
      b.out.pop_back();
      auto& ot = b.add(TaskType::OracleAnnotation, oracle_sub, i, *fam, of,
                       {{"series_uid", series.uid}, {"targets", otargets}, {"sibling", real_id}, {"trajectory_params", op_json}},
                       op);
      ot.study_uid = fam->study_uids.front();
      ot.initial_series_uid = series.uid;
      ot.initial_slice_index = initial;
      oracle.push_back(ot);
      b.out.pop_back();
    }
    b.out.insert(b.out.end(), real.begin(), real.end());
    b.out.insert(b.out.end(), oracle.begin(), oracle.end());
  }

  // oracle_birads_report
  for (int i = 0; i < n; ++i) {
    const auto& fam = *mr[static_cast<std::size_t>(i) % mr.size()];
    const auto& study = store.study(fam.study_uids.front());
    auto& t = b.add(TaskType::OracleBiradsReport, "t3_oracle_birads", i, fam, {{"patient_id", fam.patient_id}},
                    {{"birads", phantom::to_json(*fam.truth.birads)}});
    t.study_uid = study.uid;
    t.initial_series_uid = study.series_uids.front();
  }

  // longitudinal
  for (int i = 0; i < n; ++i) {
    const auto& fam = *lon[static_cast<std::size_t>(i) % lon.size()];
    const auto& lt = *fam.truth.longitudinal;
    const bool single = lt.findings.size() == 1;
    json findings = json::array();
    for (const auto& p : lt.findings) findings.push_back({{"slice_index", p.slice_index}, {"x", p.x}, {"y", p.y}});
    TrajectoryParams p;
    p.L = static_cast<int>(lt.findings.size());
    Fields f{{"participant_id", fam.patient_id},
                     {"baseline.study_uid", lt.baseline_study_uid},
                     {"baseline.series_uid", lt.baseline_series_uid},
                     {"followup.study_uid", lt.followup_study_uid},
                     {"followup.series_uid", lt.followup_series_uid}};
    auto& t = b.add(TaskType::Longitudinal, single ? "t4_lesion_single" : "t4_lesion_multi", i, fam, f,
                    {{"findings", findings},
                     {"followup_series_uid", lt.followup_series_uid},
                     {"trajectory_params", {{"L", p.L}}}},
                    p);
    t.study_uid = lt.followup_study_uid;
    t.auxiliary_study_uids = {lt.baseline_study_uid};
    t.initial_series_uid = lt.followup_series_uid;
  }

  // birads_report
  for (int i = 0; i < n; ++i) {
    const auto& fam = *mr[static_cast<std::size_t>(i) % mr.size()];
    const auto& study = store.study(fam.study_uids.front());
    std::string list;
    int mr_count = 0;
    for (const auto& uid : study.series_uids) {
      const auto& s = store.series(uid);
      if (s.modality != "MR") continue;
      ++mr_count;
      list += (list.empty() ? "" : "\n") + std::string("- ") + s.description + " (SeriesInstanceUID: " + s.uid + ")";
    }
    TrajectoryParams p;
    p.V = std::clamp(mr_count, 1, 4);
    auto& t = b.add(TaskType::BiradsReport, "t4_birads", i, fam,
                    {{"study_uid", study.uid}, {"n_series", std::to_string(mr_count)}, {"series_list", list}},
                    {{"birads", phantom::to_json(*fam.truth.birads)}, {"trajectory_params", {{"V", p.V}}}}, p);
    t.study_uid = study.uid;
    t.initial_series_uid = study.series_uids.front();
  }
  return std::move(b.out);
}

// ---------------------------------------------------------------------------
// YAML task files

namespace detail {

inline json from_yaml(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Map: {
      json out = json::object();
      for (const auto& kv : n) out[kv.first.as<std::string>()] = from_yaml(kv.second);
      return out;
    }
    case YAML::NodeType::Sequence: {
      json out = json::array();
      for (const auto& v : n) out.push_back(from_yaml(v));
      return out;
    }
    case YAML::NodeType::Scalar: {
      const auto& s = n.Scalar();
      if (n.Tag() == "!") return s;  // quoted
      if (s == "true") return true;
      if (s == "false") return false;
      long long i = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
      if (ec == std::errc() && p == s.data() + s.size()) return i;
      double d = 0;
      auto [p2, ec2] = std::from_chars(s.data(), s.data() + s.size(), d);
      if (ec2 == std::errc() && p2 == s.data() + s.size()) return d;
      return s;
    }
    default: return nullptr;
  }
}

/// Shortest text that reads back as the same double and never as an integer.
inline std::string float_text(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  std::string out(buf);
  if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
  return out;
}

/// Emits with every string double-quoted so that values like "20000101"
/// survive a round trip as strings.
inline void emit(YAML::Emitter& e, const json& j) {
  switch (j.type()) {
    case json::value_t::object:
      e << YAML::BeginMap;
      for (auto it = j.begin(); it != j.end(); ++it) {
        e << YAML::Key << it.key() << YAML::Value;
        emit(e, it.value());
      }
      e << YAML::EndMap;
      break;
    case json::value_t::array:
      e << YAML::BeginSeq;
      for (const auto& v : j) emit(e, v);
      e << YAML::EndSeq;
      break;
    case json::value_t::string: e << YAML::DoubleQuoted << j.get<std::string>(); break;
    case json::value_t::boolean: e << (j.get<bool>() ? "true" : "false"); break;
    case json::value_t::number_integer: e << j.get<long long>(); break;
    case json::value_t::number_unsigned: e << j.get<unsigned long long>(); break;
    case json::value_t::number_float: e << float_text(j.get<double>()); break;
    default: e << YAML::Null; break;
  }
}

}  // namespace detail

inline std::string to_yaml(const TaskSpec& t) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  auto str = [&](const char* k, const std::string& v) { e << YAML::Key << k << YAML::Value << YAML::DoubleQuoted << v; };
  str("task_id", t.task_id);
  str("task_type", std::string(to_string(t.task_type)));
  str("tier", std::string(to_string(t.tier)));
  str("study_uid", t.study_uid);
  e << YAML::Key << "auxiliary_study_uids" << YAML::Value;
  detail::emit(e, t.auxiliary_study_uids);
  str("initial_series_uid", t.initial_series_uid);
  e << YAML::Key << "initial_slice_index" << YAML::Value << t.initial_slice_index;
  str("task_description", t.task_description);
  e << YAML::Key << "expected_outcome" << YAML::Value;
  detail::emit(e, t.expected_outcome);
  e << YAML::Key << "reference_trajectory" << YAML::Value;
  detail::emit(e, t.reference_trajectory);
  e << YAML::Key << "max_turns" << YAML::Value << t.max_turns;
  str("tool_set", std::string(to_string(t.tool_set)));
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

inline TaskSpec task_from_yaml(const std::string& text) {
  try {
    auto n = YAML::Load(text);
    TaskSpec t;
    t.task_id = n["task_id"].as<std::string>();
    t.task_type = parse_task_type(n["task_type"].as<std::string>());
    t.tier = parse_tier(n["tier"].as<std::string>());
    t.study_uid = n["study_uid"].as<std::string>();
    t.auxiliary_study_uids = n["auxiliary_study_uids"].as<std::vector<std::string>>();
    t.initial_series_uid = n["initial_series_uid"].as<std::string>();
    t.initial_slice_index = n["initial_slice_index"].as<int>();
    t.task_description = n["task_description"].as<std::string>();
    t.expected_outcome = detail::from_yaml(n["expected_outcome"]);
    t.reference_trajectory = n["reference_trajectory"].as<std::vector<std::string>>();
    t.max_turns = n["max_turns"].as<int>();
    t.tool_set = parse_task_type(n["tool_set"].as<std::string>());
    return t;
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, std::string("task yaml: ") + e.what());
  }
}

/// Writes <dir>/tasks/<task_id>.yaml plus <dir>/suite.yaml.
inline void write_suite(const std::filesystem::path& dir, const std::vector<TaskSpec>& tasks, const SuiteConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tasks");
  YAML::Emitter e;
  e << YAML::BeginMap << YAML::Key << "seed" << YAML::Value << cfg.seed << YAML::Key << "per_type" << YAML::Value
    << cfg.per_type << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : tasks) {
    auto rel = "tasks/" + t.task_id + ".yaml";
    phantom::write_text(dir / rel, to_yaml(t));
    e << YAML::BeginMap << YAML::Key << "file" << YAML::Value << YAML::DoubleQuoted << rel << YAML::Key << "task_id"
      << YAML::Value << YAML::DoubleQuoted << t.task_id << YAML::Key << "task_type" << YAML::Value
      << std::string(to_string(t.task_type)) << YAML::Key << "tier" << YAML::Value << std::string(to_string(t.tier))
      << YAML::EndMap;
  }
  e << YAML::EndSeq << YAML::EndMap;
  phantom::write_text(dir / "suite.yaml", std::string(e.c_str()) + "\n");
}

inline std::vector<TaskSpec> load_suite(const std::filesystem::path& dir) {
  std::vector<TaskSpec> out;
  try {
    auto manifest = YAML::LoadFile((dir / "suite.yaml").string());
    for (const auto& entry : manifest["tasks"])
      out.push_back(task_from_yaml(phantom::read_text(dir / entry["file"].as<std::string>())));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, std::string("suite.yaml: ") + e.what());
  }
  return out;
}

}  // namespace radgym::tasks
