#pragma once

// Planning, execution and outcome scorers, the composite, and suite reports.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/error.hpp"
#include "radgym/geometry.hpp"
#include "radgym/phantom.hpp"
#include "radgym/tasks.hpp"
#include "radgym/trajectory.hpp"
#include "radgym/util.hpp"

namespace radgym::scoring {

using nlohmann::json;

inline constexpr double kWeightP = 0.20, kWeightE = 0.30, kWeightO = 0.50;

inline double composite(double p, double e, double o) { return kWeightP * p + kWeightE * e + kWeightO * o; }

// ---------------------------------------------------------------------------
// Planning

struct Planning {
  double P = 0, f1 = 0, precision = 0, recall = 0, penalty = 0;
  int true_positives = 0;
};

/// Multiset F1 between tool-name lists, ordering ignored, minus 0.05 per call
/// beyond the reference length (capped at 0.30).
inline Planning planning_score(const std::vector<std::string>& ref, const std::vector<std::string>& agent) {
  if (ref.empty()) throw Error(ErrorCode::EmptyReference, "reference trajectory is empty");
  Planning out;
  if (agent.empty()) return out;
  std::map<std::string, int> r, a;
  for (const auto& n : ref) ++r[n];
  for (const auto& n : agent) ++a[n];
  for (const auto& [name, count] : r)
    if (auto it = a.find(name); it != a.end()) out.true_positives += std::min(count, it->second);
  out.precision = static_cast<double>(out.true_positives) / static_cast<double>(agent.size());
  out.recall = static_cast<double>(out.true_positives) / static_cast<double>(ref.size());
  out.f1 = out.true_positives == 0 ? 0.0 : 2 * out.precision * out.recall / (out.precision + out.recall);
  auto extra = static_cast<double>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(agent.size() - ref.size())));
  out.penalty = std::min(0.30, 0.05 * extra);
  out.P = std::max(0.0, out.f1 - out.penalty);
  return out;
}

// ---------------------------------------------------------------------------
// Execution

struct Execution {
  double E = 0, A_tool = 0, Q_param = 0, E_turn = 0, R_err = 1;
  int calls = 0, failed = 0, recovered = 0;
};

inline Execution execution_score(const traj::Trajectory& t, std::size_t ref_length) {
  Execution out;
  auto calls = t.calls();
  out.calls = static_cast<int>(calls.size());
  out.E_turn = std::min(1.0, static_cast<double>(ref_length) / std::max<double>(1.0, static_cast<double>(t.turns.size())));
  if (!calls.empty()) {
    int ok = 0, graded = 0;
    double q = 0;
    for (std::size_t i = 0; i < calls.size(); ++i) {
      const auto& c = *calls[i];
      if (c.success) {
        ++ok;
      } else {
        ++out.failed;
        if (i + 1 < calls.size()) {
          const auto& next = *calls[i + 1];
          if (next.success || next.name != c.name || next.args != c.args) ++out.recovered;
        }
      }
      if (c.param_score) {
        ++graded;
        q += *c.param_score;
      }
    }
    out.A_tool = static_cast<double>(ok) / static_cast<double>(calls.size());
    out.Q_param = graded ? q / graded : 1.0;
    out.R_err = out.failed ? static_cast<double>(out.recovered) / out.failed : 1.0;
  }
  out.E = 0.40 * out.A_tool + 0.20 * out.Q_param + 0.25 * out.E_turn + 0.15 * out.R_err;
  return out;
}

// ---------------------------------------------------------------------------
// Outcome scorers

/// Fraction of expected viewport fields matched. Keys: slice_index,
/// window_width, window_center, zoom, series_uid.
inline double state_diff_score(const json& viewport, const json& expected) {
  if (!expected.is_object() || expected.empty()) throw Error(ErrorCode::MalformedReport, "no expected fields");
  static const std::map<std::string, std::string> kKeys{{"slice_index", "sliceIndex"},
                                                        {"window_width", "windowWidth"},
                                                        {"window_center", "windowCenter"},
                                                        {"zoom", "zoom"},
                                                        {"series_uid", "seriesInstanceUID"}};
  int matched = 0;
  for (auto it = expected.begin(); it != expected.end(); ++it) {
    auto key = kKeys.find(it.key());
    if (key == kKeys.end()) throw Error(ErrorCode::MalformedReport, "unknown viewport field " + it.key());
    auto v = viewport.find(key->second);
    if (v == viewport.end()) continue;
    if (it.key() == "series_uid") {
      matched += *v == *it;
    } else if (it.key() == "zoom") {
      double a = v->get<double>(), b = it->get<double>();
      matched += std::abs(a - b) <= 1e-6 * std::max(std::abs(a), std::abs(b));
    } else {
      matched += v->get<double>() == it->get<double>();
    }
  }
  return static_cast<double>(matched) / static_cast<double>(expected.size());
}

inline std::string normalize_answer(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

inline double exact_match_score(std::string_view submitted, std::string_view expected) {
  return normalize_answer(submitted) == normalize_answer(expected) ? 1.0 : 0.0;
}

/// Best IoU the submitted primitive's shape class can reach on this mask.
inline double best_fit_iou(const geom::Shape& shape, const geom::Mask2D& mask) {
  if (std::holds_alternative<geom::Polygon>(shape)) return 1.0;
  if (std::holds_alternative<geom::Circle>(shape)) {
    auto c = geom::centroid(mask);
    double r = std::sqrt(static_cast<double>(mask.count()) / std::numbers::pi);
    return geom::iou(geom::rasterize(geom::Circle{c, r}, mask.width, mask.height), mask);
  }
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  geom::Rectangle aabb{{static_cast<double>(x0), static_cast<double>(y0)}, {x1 + 1.0, y1 + 1.0}};
  double best = geom::iou(geom::rasterize(aabb, mask.width, mask.height), mask);
  for (const auto& box : geom::min_area_boxes(geom::convex_hull(geom::pixel_corners(mask))))
    best = std::max(best, geom::iou(geom::rasterize_shape(box, mask.width, mask.height), mask));
  return best;
}

struct SliceIoU {
  double raw = 0;
  double normalized = 0;
  bool hit = false;
};

inline SliceIoU normalized_iou(const geom::Shape& shape, const geom::Mask2D& mask) {
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "consensus mask is empty");
  SliceIoU out;
  out.raw = geom::iou(geom::rasterize(shape, mask.width, mask.height), mask);
  double norm = best_fit_iou(shape, mask);
  out.normalized = norm > 0 ? std::clamp(out.raw / norm, 0.0, 1.0) : 0.0;
  out.hit = out.normalized >= 0.5;
  return out;
}

struct AnnotatedSlice {
  geom::Mask2D mask;
  std::vector<geom::Shape> shapes;  // segmentations the agent placed on this slice
};

/// Mean over ground-truth slices of the best normalized IoU; slices without
/// an annotation contribute 0.
inline json normalized_iou_score(const std::vector<AnnotatedSlice>& slices) {
  if (slices.empty()) throw Error(ErrorCode::EmptyMask, "no ground-truth slices");
  double sum = 0, raw_sum = 0;
  int hits = 0;
  json per = json::array();
  for (const auto& s : slices) {
    SliceIoU best;
    if (s.mask.empty()) throw Error(ErrorCode::EmptyMask, "consensus mask is empty");
    for (const auto& shape : s.shapes) {
      auto v = normalized_iou(shape, s.mask);
      if (v.normalized > best.normalized || (v.normalized == best.normalized && v.raw > best.raw)) best = v;
    }
    sum += best.normalized;
    raw_sum += best.raw;
    hits += best.hit;
    per.push_back({{"raw_iou", best.raw}, {"normalized_iou", best.normalized}, {"hit", best.hit}});
  }
  const double n = static_cast<double>(slices.size());
  return {{"O", sum / n}, {"raw_iou", raw_sum / n}, {"hit_rate", hits / n}, {"slices", per}};
}

struct PointFinding {
  int slice_index = 0;
  double x = 0, y = 0;
};

inline double point_distance_score(const PointFinding& submitted, const PointFinding& truth) {
  if (submitted.slice_index != truth.slice_index) return 0.0;
  double d = std::hypot(submitted.x - truth.x, submitted.y - truth.y);
  if (d <= 20) return 1.0;
  if (d >= 40) return 0.0;
  return (40 - d) / 20;
}

/// Greedy nearest-first one-to-one matching on the same slice within 40 px.
inline json multi_finding_score(const std::vector<PointFinding>& submitted, const std::vector<PointFinding>& truth) {
  if (truth.empty()) throw Error(ErrorCode::EmptyTruth, "no ground-truth findings");
  struct Pair {
    double d;
    std::size_t s, t;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < submitted.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (submitted[i].slice_index != truth[j].slice_index) continue;
      double d = std::hypot(submitted[i].x - truth[j].x, submitted[i].y - truth[j].y);
      if (d <= 40) pairs.push_back({d, i, j});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d < b.d; });
  std::vector<bool> used_s(submitted.size()), used_t(truth.size());
  int matched = 0;
  for (const auto& p : pairs) {
    if (used_s[p.s] || used_t[p.t]) continue;
    used_s[p.s] = used_t[p.t] = true;
    ++matched;
  }
  const int fp = static_cast<int>(submitted.size()) - matched;
  const double rate = static_cast<double>(matched) / static_cast<double>(truth.size());
  return {{"O", std::clamp(rate - 0.1 * fp, 0.0, 1.0)}, {"matched", matched}, {"false_positives", fp}, {"detection_rate", rate}};
}

/// Weighted per-field BI-RADS agreement. Quadrant leaves the denominator when
/// the reference has none.
inline json birads_report_score(const json& report, const phantom::BiradsRecord& truth) {
  auto need = [&](const char* key, auto check) {
    if (!report.is_object() || !report.contains(key) || !check(report[key]))
      throw Error(ErrorCode::MalformedReport, std::string("report field '") + key + "' missing or ill-typed");
  };
  auto integral = [](const json& v) { return v.is_number() && v.get<double>() == std::floor(v.get<double>()); };
  need("laterality", [](const json& v) { return v.is_string(); });
  need("lesion_count", integral);
  need("birads_category", integral);
  need("enhancement_present", [](const json& v) { return v.is_boolean(); });

  auto ordinal = [](long long a, long long b) { return a == b ? 1.0 : (std::llabs(a - b) == 1 ? 0.5 : 0.0); };
  json fields;
  fields["laterality"] = report["laterality"].get<std::string>() == truth.laterality ? 1.0 : 0.0;
  fields["birads_category"] = ordinal(std::llround(report["birads_category"].get<double>()), truth.birads_category);
  fields["lesion_count"] = ordinal(std::llround(report["lesion_count"].get<double>()), truth.lesion_count);
  fields["enhancement_present"] = report["enhancement_present"].get<bool>() == truth.enhancement_present ? 1.0 : 0.0;
  std::map<std::string, double> weights{
      {"laterality", 0.25}, {"birads_category", 0.30}, {"lesion_count", 0.20}, {"enhancement_present", 0.15}};
  if (truth.quadrant) {
    std::optional<std::string> q;
    if (report.contains("findings") && report["findings"].is_array())
      for (const auto& f : report["findings"])
        if (f.is_object() && f.contains("location_quadrant") && f["location_quadrant"].is_string()) {
          q = f["location_quadrant"].get<std::string>();
          break;
        }
    fields["lesion_quadrant"] = q == truth.quadrant ? 1.0 : 0.0;
    weights["lesion_quadrant"] = 0.10;
  }
  double num = 0, den = 0;
  for (const auto& [k, w] : weights) {
    num += w * fields[k].get<double>();
    den += w;
  }
  return {{"O", num / den}, {"fields", fields}};
}

// ---------------------------------------------------------------------------
// Per-task scoring

struct ScoreCard {
  std::string task_id;
  std::string task_type;
  std::string tier;
  double P = 0, E = 0, O = 0, S = 0;
  Execution execution;
  Planning planning;
  json outcome_detail = json::object();
  std::string termination;
};

namespace detail {

inline geom::Shape shape_from_json(const json& j) {
  auto pt = [](const json& p) { return geom::Point{p.at(0).get<double>(), p.at(1).get<double>()}; };
  const auto type = j.at("type").get<std::string>();
  if (type == "circle") return geom::Circle{pt(j.at("center")), j.at("radius").get<double>()};
  if (type == "rectangle") return geom::Rectangle{pt(j.at("top_left")), pt(j.at("bottom_right"))};
  geom::Polygon poly;
  for (const auto& p : j.at("points")) poly.points.push_back(pt(p));
  return poly;
}

inline std::vector<PointFinding> findings_of(const json& list) {
  std::vector<PointFinding> out;
  for (const auto& f : list)
    out.push_back({f.at("slice_index").get<int>(), f.at("location").at(0).get<double>(), f.at("location").at(1).get<double>()});
  return out;
}

}  // namespace detail

/// Outcome in [0,1] with scorer details; no deliverable scores 0.
inline json outcome_score(const tasks::TaskSpec& task, const traj::Trajectory& t, const phantom::TruthCatalog& truth) {
  using tasks::TaskType;
  if (!t.deliverable) return {{"O", 0.0}, {"reason", "no deliverable"}};
  const auto& d = *t.deliverable;
  const auto& exp = task.expected_outcome;
  switch (task.task_type) {
    case TaskType::ViewerControl:
      return {{"O", state_diff_score(d.viewport, exp.at("fields"))}};
    case TaskType::MetadataQa:
    case TaskType::VisionProbe: {
      if (!d.answer) return {{"O", 0.0}, {"reason", "no answer"}};
      return {{"O", exact_match_score(*d.answer, exp.at("answer").get<std::string>())}, {"submitted", *d.answer}};
    }
    case TaskType::Annotation:
    case TaskType::OracleAnnotation: {
      const auto series = exp.at("series_uid").get<std::string>();
      const auto family = exp.at("family_id").get<std::string>();
      std::vector<AnnotatedSlice> slices;
      for (const auto& target : exp.at("targets")) {
        const auto* lesion = truth.find_lesion(family, target.at("lesion_id").get<int>());
        if (!lesion) throw Error(ErrorCode::EmptyMask, "lesion not in ground truth: " + target.dump());
        for (int z : target.at("slices").get<std::vector<int>>()) {
          AnnotatedSlice s{lesion->mask_on(z), {}};
          for (const auto& seg : d.segmentations)
            if (seg.at("series_uid") == series && seg.at("slice_index") == z)
              s.shapes.push_back(detail::shape_from_json(seg.at("shape")));
          slices.push_back(std::move(s));
        }
      }
      return normalized_iou_score(slices);
    }
    case TaskType::OracleBiradsReport:
    case TaskType::BiradsReport: {
      if (!d.birads_report) return {{"O", 0.0}, {"reason", "no report"}};
      return birads_report_score(*d.birads_report, phantom::birads_from_json(exp.at("birads")));
    }
    case TaskType::Longitudinal: {
      std::vector<PointFinding> truth_points;
      for (const auto& f : exp.at("findings"))
        truth_points.push_back({f.at("slice_index").get<int>(), f.at("x").get<double>(), f.at("y").get<double>()});
      auto submitted = detail::findings_of(d.findings);
      if (task.subtype() == "t4_lesion_single") {
        if (submitted.empty()) return {{"O", 0.0}, {"reason", "no finding"}};
        return {{"O", point_distance_score(submitted.front(), truth_points.front())}};
      }
      return multi_finding_score(submitted, truth_points);
    }
  }
  throw Error(ErrorCode::UnknownTaskType, std::string(tasks::to_string(task.task_type)));
}

inline ScoreCard score_task(const tasks::TaskSpec& task, const traj::Trajectory& t, const phantom::TruthCatalog& truth) {
  ScoreCard c;
  c.task_id = task.task_id;
  c.task_type = std::string(tasks::to_string(task.task_type));
  c.tier = std::string(tasks::to_string(task.tier));
  c.termination = std::string(traj::to_string(t.termination));
  c.planning = planning_score(task.reference_trajectory, t.tool_names());
  c.execution = execution_score(t, task.reference_trajectory.size());
  c.outcome_detail = outcome_score(task, t, truth);
  c.P = c.planning.P;
  c.E = c.execution.E;
  c.O = c.outcome_detail.at("O").get<double>();
  c.S = composite(c.P, c.E, c.O);
  return c;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string scores_csv(const std::vector<ScoreCard>& cards) {
  std::string out = "task_id,task_type,tier,P,E,O,S,A_tool,Q_param,E_turn,R_err,termination\n";
  for (const auto& c : cards) {
    out += c.task_id + "," + c.task_type + "," + c.tier;
    for (double v : {c.P, c.E, c.O, c.S, c.execution.A_tool, c.execution.Q_param, c.execution.E_turn, c.execution.R_err})
      out += "," + format_fixed(v, 6);
    out += "," + c.termination + "\n";
  }
  return out;
}

struct Aggregate {
  std::string group;
  int n = 0;
  double P = 0, E = 0, O = 0, S = 0;
};

struct Report {
  std::vector<Aggregate> by_tier;
  std::vector<Aggregate> by_type;
  Aggregate overall;
};

/// Every manifest task must have a card. The overall row weights each type's
/// mean by its task count.
inline Report composite_and_report(const std::vector<ScoreCard>& cards, const std::vector<tasks::TaskSpec>& manifest) {
  std::map<std::string, const ScoreCard*> by_id;
  for (const auto& c : cards) by_id[c.task_id] = &c;
  std::map<std::string, Aggregate> tiers, types;
  for (const auto& t : manifest) {
    auto it = by_id.find(t.task_id);
    if (it == by_id.end()) throw Error(ErrorCode::MissingScorecard, t.task_id);
    const auto& c = *it->second;
    for (auto* a : {&tiers[std::string(tasks::to_string(t.tier))], &types[std::string(tasks::to_string(t.task_type))]}) {
      ++a->n;
      a->P += c.P;
      a->E += c.E;
      a->O += c.O;
      a->S += c.S;
    }
  }
  Report r;
  r.overall.group = "overall";
  auto finish = [](const std::string& name, Aggregate a) {
    a.group = name;
    a.P /= a.n;
    a.E /= a.n;
    a.O /= a.n;
    a.S /= a.n;
    return a;
  };
  for (auto tier : {tasks::Tier::Easy, tasks::Tier::Medium, tasks::Tier::Hard}) {
    auto name = std::string(tasks::to_string(tier));
    if (tiers.count(name)) r.by_tier.push_back(finish(name, tiers[name]));
  }
  for (auto type : tasks::kAllTaskTypes) {
    auto name = std::string(tasks::to_string(type));
    if (!types.count(name)) continue;
    auto a = finish(name, types[name]);
    r.overall.n += a.n;
    r.overall.P += a.n * a.P;
    r.overall.E += a.n * a.E;
    r.overall.O += a.n * a.O;
    r.overall.S += a.n * a.S;
    r.by_type.push_back(a);
  }
  if (r.overall.n) {
    r.overall.P /= r.overall.n;
    r.overall.E /= r.overall.n;
    r.overall.O /= r.overall.n;
    r.overall.S /= r.overall.n;
  }
  return r;
}

inline std::string report_text(const Report& r) {
  auto row = [](const Aggregate& a) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %5d %7.3f %7.3f %7.3f %7.3f\n", a.group.c_str(), a.n, a.P, a.E, a.O, a.S);
    return std::string(buf);
  };
  char head[160];
  std::snprintf(head, sizeof head, "%-22s %5s %7s %7s %7s %7s\n", "group", "n", "P", "E", "O", "S");
  std::string out = "By tier\n";
  out += head;
  for (const auto& a : r.by_tier) out += row(a);
  out += "\nBy task type\n";
  out += head;
  for (const auto& a : r.by_type) out += row(a);
  out += "\n" + row(r.overall);
  return out;
}

}  // namespace radgym::scoring
