// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "radgym/cli.hpp"
#include "radgym/runner.hpp"
#include "radgym/scoring.hpp"
#include "support.hpp"

using namespace radgym;
using nlohmann::json;
using tasks::TaskType;
using testing_support::corpus;

namespace {

/// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;

  void that(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream s;
      s.precision(12);
      s << what << ": got " << got << " want " << want;
      failures.push_back(s.str());
    }
  }
};

traj::ToolCallRecord rec(std::string name, bool ok, json args = json::object()) {
  traj::ToolCallRecord c;
  c.name = std::move(name);
  c.args = std::move(args);
  c.success = ok;
  c.param_score = 1.0;
  if (!ok) c.error_code = "SliceOutOfRange";
  return c;
}

class Scripted : public runner::Agent {
 public:
  explicit Scripted(std::vector<runner::AgentOutput> outputs) : outputs_(std::move(outputs)) {}
  runner::AgentOutput step(const runner::Conversation&, const std::vector<tools::ToolSchema>&) override {
    ++steps;
    return outputs_[std::min(next_++, outputs_.size() - 1)];
  }
  int steps = 0;

 private:
  std::vector<runner::AgentOutput> outputs_;
  std::size_t next_ = 0;
};

runner::AgentOutput calls(std::vector<std::pair<std::string, json>> list) {
  runner::AgentOutput out;
  int i = 0;
  for (auto& [name, args] : list) out.calls.push_back({"c" + std::to_string(i++), name, args});
  return out;
}

// ---------------------------------------------------------------------------
// 1. golden vectors

void golden_vectors(Check& c) {
  auto p = scoring::planning_score({"a", "b"}, {"a", "b", "c", "c"});
  c.near(p.P, 2.0 / 3.0 - 0.1, 1e-9, "planning {a,b} vs {a,b,c,c}");
  c.near(p.P, 0.5667, 1e-4, "planning rounded");
  c.near(scoring::planning_score({"a", "b"}, {"c", "d", "e", "f", "g", "h", "i", "j", "k", "l"}).P, 0.0, 1e-9,
         "planning penalty cap");

  traj::Trajectory t;
  for (int i = 0; i < 8; ++i) t.turns.push_back({i, std::nullopt, {rec("ok", true)}, std::nullopt});
  for (int i = 8; i < 10; ++i) t.turns.push_back({i, std::nullopt, {rec("bad", false, {{"slice_index", 99}})}, std::nullopt});
  c.near(scoring::execution_score(t, 5).E, 0.645, 1e-9, "execution composite case");

  traj::Trajectory silent;
  silent.turns.push_back({0, std::string("text"), {}, std::nullopt});
  c.near(scoring::execution_score(silent, 2).E, 0.40, 1e-9, "execution with no calls");

  c.near(scoring::point_distance_score({5, 10, 10}, {5, 10, 10}), 1.0, 1e-9, "distance 0");
  c.near(scoring::point_distance_score({5, 30, 10}, {5, 10, 10}), 1.0, 1e-9, "distance 20");
  c.near(scoring::point_distance_score({5, 40, 10}, {5, 10, 10}), 0.5, 1e-9, "distance 30");
  c.near(scoring::point_distance_score({5, 50, 10}, {5, 10, 10}), 0.0, 1e-9, "distance 40");
  c.near(scoring::point_distance_score({4, 10, 10}, {5, 10, 10}), 0.0, 1e-9, "wrong slice");

  std::vector<scoring::PointFinding> truth{{3, 10, 10}, {8, 60, 60}};
  c.near(scoring::multi_finding_score({{3, 12, 10}, {8, 60, 65}, {20, 0, 0}}, truth)["O"].get<double>(), 0.9, 1e-9,
         "multi-finding 2 matched + 1 FP");
  c.near(scoring::multi_finding_score({{3, 12, 10}}, truth)["O"].get<double>(), 0.5, 1e-9, "multi-finding 1 of 2");

  phantom::BiradsRecord br{"left", 1, 4, true, std::nullopt};
  json exact{{"laterality", "left"}, {"lesion_count", 1}, {"birads_category", 4}, {"enhancement_present", true}};
  auto off = exact;
  off["birads_category"] = 5;
  c.near(scoring::birads_report_score(exact, br)["O"].get<double>(), 1.0, 1e-9, "birads exact");
  c.near(scoring::birads_report_score(off, br)["O"].get<double>(), 0.75 / 0.9, 1e-9, "birads off by one");
  c.near(scoring::birads_report_score(off, br)["O"].get<double>(), 0.8333, 1e-4, "birads rounded");
}

// ---------------------------------------------------------------------------
// 2. composite identity

void composite_identity(Check& c) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double p = u(rng), e = u(rng), o = u(rng);
    if (i == 0) p = e = o = 1.0;
    if (i == 1) p = e = o = 0.0;
    double s = scoring::composite(p, e, o);
    c.that(s == 0.20 * p + 0.30 * e + 0.50 * o, "composite identity at triple " + std::to_string(i));
    c.that(s >= 0.0 && s <= 1.0, "composite range at triple " + std::to_string(i));
  }
}

// ---------------------------------------------------------------------------
// 3. oracle vs random gap

void oracle_random_gap(Check& c) {
  const auto& k = corpus();
  auto suite = tasks::generate_suite(*k.store, *k.truth, {7, 50});
  auto oracle = runner::run_suite(suite, runner::oracle_policy(k.env()), k.env(), 4);
  auto random = runner::run_suite(suite, runner::random_policy(k.env(), 7), k.env(), 4);
  int oracle_n = 0, random_n = 0;
  double random_sum = 0;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& t = suite[i];
    if (t.task_type == TaskType::OracleAnnotation || t.task_type == TaskType::OracleBiradsReport) {
      ++oracle_n;
      c.near(scoring::score_task(t, oracle[i], *k.truth).O, 1.0, 0.01, "oracle O on " + t.task_id);
    }
    if (t.task_type == TaskType::Annotation) {
      ++random_n;
      random_sum += scoring::score_task(t, random[i], *k.truth).O;
    }
  }
  c.that(oracle_n == 100, "expected 100 oracle tasks, got " + std::to_string(oracle_n));
  c.that(random_n >= 50, "expected at least 50 annotation episodes, got " + std::to_string(random_n));
  if (random_n) c.that(random_sum / random_n < 0.10, "random annotation mean O = " + std::to_string(random_sum / random_n));
}

// ---------------------------------------------------------------------------
// 4. consensus rule

void consensus_rule(Check& c) {
  std::mt19937_64 rng(99);
  std::size_t singles = 0;
  for (int trial = 0; trial < 40; ++trial) {
    phantom::LesionSpec l;
    l.cx = 20 + static_cast<int>(rng() % 24);
    l.cy = 20 + static_cast<int>(rng() % 24);
    l.radius = 3.0 + static_cast<double>(rng() % 60) / 10.0;
    l.cz = 10 + static_cast<int>(rng() % 10);
    l.first_slice = l.cz - 3;
    l.last_slice = l.cz + 3;
    auto truth = phantom::detail::lesion_mask(l, 64, 64);
    phantom::JitterConfig jitter{3, 0.5};
    auto readers = phantom::simulate_reader_masks(truth, 3, 1000 + trial, jitter);
    // Shift one reader's z range so padding is exercised.
    if (trial % 3 == 0) {
      auto& r = readers[2];
      geom::BinaryVolume shifted(r.width, r.height, r.depth, r.z_origin + 1);
      shifted.data = r.data;
      r = shifted;
    }
    auto consensus = phantom::consensus_mask(readers);

    int z0 = 1 << 30, z1 = -(1 << 30);
    for (const auto& r : readers) {
      z0 = std::min(z0, r.z_origin);
      z1 = std::max(z1, r.z_origin + r.depth);
    }
    for (int z = z0 - 1; z <= z1; ++z)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          int votes = 0;
          for (const auto& r : readers)
            if (z >= r.z_origin && z < r.z_origin + r.depth && r.data[r.offset(x, y, z - r.z_origin)]) ++votes;
          bool want = votes >= 2;
          bool got = consensus.get(x, y, z) != 0;
          if (votes == 1) {
            ++singles;
            c.that(!got, "single-reader voxel kept in trial " + std::to_string(trial));
          }
          if (got != want) {
            c.that(false, "vote mismatch in trial " + std::to_string(trial));
            return;
          }
        }
  }
  c.that(singles > 0, "simulation never produced single-reader voxels");
}

// ---------------------------------------------------------------------------
// 5. reference trajectory closed forms

void trajectory_lengths(Check& c) {
  const auto& k = corpus();
  auto check_suite = [&](const std::vector<tasks::TaskSpec>& suite) {
    for (const auto& t : suite) {
      const auto sub = t.subtype();
      const auto* fam = k.truth->find_family(t.family_id());
      c.that(fam != nullptr, "no family for " + t.task_id);
      if (!fam) continue;
      std::size_t want = 0;
      auto lesion_slices = [&] {
        const auto* l = k.truth->find_lesion(fam->family_id, t.expected_outcome["targets"][0]["lesion_id"].get<int>());
        return l ? static_cast<int>(l->slices().size()) : -1;
      };
      if (sub == "t1_slice" || sub.starts_with("t1_wl_")) want = 1;
      else if (sub == "t1_slice_wl" || sub == "t1_series" || sub.starts_with("t2_")) want = 2;
      else if (sub == "t4_interval" || sub == "t4_slice_diff" || sub == "t3_oracle_birads") want = 3;
      else if (sub == "t3_nodule" || sub == "t3_oracle_single") want = 5;
      else if (sub == "vp_mod" || sub == "vp_pre") want = 1;
      else if (sub == "t3_find") want = 5 + 3 * (lesion_slices() - 1);
      else if (sub == "t3_oracle_vol") want = 2 + 3 * lesion_slices();
      else if (sub == "t3_oracle_multi") want = 2 + 3 * fam->truth.lesions.size();
      else if (sub == "t4_lesion_single") want = 28;
      else if (sub == "t4_lesion_multi") want = 27 + fam->truth.longitudinal->findings.size();
      else if (sub == "t4_birads") {
        int mr = 0;
        for (const auto& uid : k.store->study(t.study_uid).series_uids) mr += k.store->series(uid).modality == "MR";
        want = 2 + 7 * static_cast<std::size_t>(std::clamp(mr, 1, 4));
      } else {
        c.that(false, "unknown subtype " + sub);
        continue;
      }
      c.that(t.reference_trajectory.size() == want,
             t.task_id + ": length " + std::to_string(t.reference_trajectory.size()) + " want " + std::to_string(want));
    }
  };
  check_suite(k.suite);
  check_suite(tasks::generate_suite(*k.store, *k.truth, {11, 25}));
}

// ---------------------------------------------------------------------------
// 6. tool visibility

void visibility(Check& c) {
  // Columns in task-type order: viewer_control, metadata_qa, vision_probe,
  // annotation, oracle_annotation, oracle_birads_report, longitudinal, birads_report.
  const std::vector<std::pair<std::string, std::string>> table{
      {"get_study_metadata", "01011111"},          {"get_study_series", "01011111"},
      {"get_series_metadata", "01011111"},         {"get_instance_metadata", "01011111"},
      {"get_viewport_state", "11011111"},          {"list_segmentations", "00011011"},
      {"get_viewer_screenshot", "00010011"},       {"get_dicom_image", "00010011"},
      {"query_pathology_model", "00001000"},       {"query_birads_model", "00000100"},
      {"set_viewport_slice", "11011111"},          {"set_window_level", "11011111"},
      {"set_zoom", "11011111"},                    {"select_series", "11011111"},
      {"add_circle_segmentation", "00010011"},     {"add_rectangle_segmentation", "00010011"},
      {"add_polygon_segmentation", "00011011"},    {"submit_answer", "01111111"},
      {"submit_birads_report", "00000101"},        {"submit_longitudinal_finding", "00000010"},
      {"submit_longitudinal_complete", "00000010"},
  };
  c.that(table.size() == tools::kToolNames.size(), "tool count");
  for (std::size_t col = 0; col < tasks::kAllTaskTypes.size(); ++col) {
    auto type = tasks::kAllTaskTypes[col];
    std::set<std::string> shown;
    for (const auto& s : tools::visible_schemas(type)) shown.insert(s.name);
    for (const auto& [tool, row] : table) {
      bool want = row[col] == '1';
      c.that(shown.count(tool) == (want ? 1u : 0u),
             tool + " in " + std::string(tasks::to_string(type)) + (want ? " missing" : " unexpected"));
    }
    std::size_t expected = 0;
    for (const auto& row : table) expected += row.second[col] == '1';
    c.that(shown.size() == expected, "extra schemas for " + std::string(tasks::to_string(type)));
  }
}

// ---------------------------------------------------------------------------
// 7. IoU oracle equivalence

using Pts = std::vector<std::pair<double, double>>;

std::vector<std::uint8_t> brute_raster(const geom::Shape& s, int w, int h) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool in = false;
      if (auto* ci = std::get_if<geom::Circle>(&s)) {
        in = testing_support::centre_in_circle(x, y, ci->center.x, ci->center.y, ci->radius);
      } else if (auto* r = std::get_if<geom::Rectangle>(&s)) {
        in = testing_support::centre_in_rect(x, y, r->top_left.x, r->top_left.y, r->bottom_right.x, r->bottom_right.y);
      } else {
        Pts pts;
        for (const auto& p : std::get<geom::Polygon>(s).points) pts.emplace_back(p.x, p.y);
        in = testing_support::centre_in_polygon(x, y, pts);
      }
      out[static_cast<std::size_t>(y) * w + x] = in;
    }
  return out;
}

/// Gift-wrapping hull over every corner of every set pixel.
std::vector<std::pair<long, long>> jarvis_hull(const geom::Mask2D& m) {
  std::set<std::pair<long, long>> uniq;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y))
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) uniq.insert({x + dx, y + dy});
  std::vector<std::pair<long, long>> pts(uniq.begin(), uniq.end());
  auto cross = [](auto o, auto a, auto b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
  };
  auto d2 = [](auto a, auto b) {
    return (a.first - b.first) * (a.first - b.first) + (a.second - b.second) * (a.second - b.second);
  };
  std::vector<std::pair<long, long>> hull;
  auto start = pts.front();  // lexicographically smallest
  auto cur = start;
  do {
    hull.push_back(cur);
    auto next = pts[0] == cur ? pts[1] : pts[0];
    for (const auto& p : pts) {
      if (p == cur) continue;
      long cr = cross(cur, next, p);
      if (cr < 0 || (cr == 0 && d2(cur, p) > d2(cur, next))) next = p;
    }
    cur = next;
  } while (cur != start && hull.size() <= pts.size());
  return hull;
}

double oracle_best_fit(const geom::Shape& shape, const geom::Mask2D& mask) {
  const int w = mask.width, h = mask.height;
  if (std::holds_alternative<geom::Polygon>(shape)) return 1.0;
  if (std::holds_alternative<geom::Circle>(shape)) {
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (mask.at(x, y)) {
          sx += x + 0.5;
          sy += y + 0.5;
          n += 1;
        }
    geom::Circle best{{sx / n, sy / n}, std::sqrt(n / std::numbers::pi)};
    return testing_support::brute_iou(brute_raster(best, w, h), mask.data);
  }
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  double best = testing_support::brute_iou(
      brute_raster(geom::Rectangle{{double(x0), double(y0)}, {x1 + 1.0, y1 + 1.0}}, w, h), mask.data);

  auto hull = jarvis_hull(mask);
  struct Box {
    double ux, uy, lo_u, hi_u, lo_v, hi_v, area;
  };
  std::vector<Box> boxes;
  double min_area = 1e300;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    auto a = hull[i], b = hull[(i + 1) % hull.size()];
    double dx = double(b.first - a.first), dy = double(b.second - a.second);
    double len = std::hypot(dx, dy);
    Box box{dx / len, dy / len, 1e300, -1e300, 1e300, -1e300, 0};
    for (const auto& p : hull) {
      double s = p.first * box.ux + p.second * box.uy;
      double t = -p.first * box.uy + p.second * box.ux;
      box.lo_u = std::min(box.lo_u, s);
      box.hi_u = std::max(box.hi_u, s);
      box.lo_v = std::min(box.lo_v, t);
      box.hi_v = std::max(box.hi_v, t);
    }
    box.area = (box.hi_u - box.lo_u) * (box.hi_v - box.lo_v);
    min_area = std::min(min_area, box.area);
    boxes.push_back(box);
  }
  for (const auto& box : boxes) {
    if (box.area > min_area * (1 + 1e-9)) continue;
    std::vector<std::uint8_t> raster(mask.data.size(), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double px = x + 0.5, py = y + 0.5;
        double s = px * box.ux + py * box.uy, t = -px * box.uy + py * box.ux;
        raster[static_cast<std::size_t>(y) * w + x] = s >= box.lo_u - 1e-9 && s <= box.hi_u + 1e-9 &&
                                                      t >= box.lo_v - 1e-9 && t <= box.hi_v + 1e-9;
      }
    best = std::max(best, testing_support::brute_iou(raster, mask.data));
  }
  return best;
}

geom::Mask2D random_mask(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(8, 64);
  int w = dim(rng), h = dim(rng);
  geom::Mask2D m(w, h);
  std::uniform_real_distribution<double> u(0, 1);
  do {
    int blobs = 1 + static_cast<int>(rng() % 3);
    for (int b = 0; b < blobs; ++b) {
      double cx = u(rng) * w, cy = u(rng) * h;
      double a = 1 + u(rng) * w / 3.0, bb = 1 + u(rng) * h / 3.0, th = u(rng) * std::numbers::pi;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          double p = dx * std::cos(th) + dy * std::sin(th), q = -dx * std::sin(th) + dy * std::cos(th);
          if (p * p / (a * a) + q * q / (bb * bb) <= 1) m.set(x, y);
        }
    }
  } while (m.empty());
  return m;
}

geom::Shape random_shape(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  switch (rng() % 3) {
    case 0: return geom::Circle{{u(rng) * w, u(rng) * h}, 0.5 + u(rng) * std::max(w, h) / 2.0};
    case 1: {
      double x0 = u(rng) * w, y0 = u(rng) * h;
      return geom::Rectangle{{x0, y0}, {x0 + u(rng) * w, y0 + u(rng) * h}};
    }
    default: {
      geom::Polygon p;
      int n = 3 + static_cast<int>(rng() % 6);
      for (int i = 0; i < n; ++i) p.points.push_back({u(rng) * w, u(rng) * h});
      return p;
    }
  }
}

void iou_equivalence(Check& c) {
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 500; ++i) {
    auto mask = random_mask(rng);
    auto shape = random_shape(rng, mask.width, mask.height);
    double raw = testing_support::brute_iou(brute_raster(shape, mask.width, mask.height), mask.data);
    double norm = oracle_best_fit(shape, mask);
    double want = norm > 0 ? std::clamp(raw / norm, 0.0, 1.0) : 0.0;
    auto got = scoring::normalized_iou_score({{mask, {shape}}});
    c.near(got["O"].get<double>(), want, 1e-9, "placement " + std::to_string(i));
    c.near(got["raw_iou"].get<double>(), raw, 1e-9, "raw IoU of placement " + std::to_string(i));
  }

  for (int i = 0; i < 20; ++i) {
    std::uniform_real_distribution<double> u(0, 1);
    int size = 24 + static_cast<int>(rng() % 40);
    geom::Mask2D disc(size, size);
    double cx = size / 2.0 + u(rng) - 0.5, cy = size / 2.0 + u(rng) - 0.5, r = 2 + u(rng) * (size / 2.0 - 3);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (testing_support::centre_in_circle(x, y, cx, cy, r)) disc.set(x, y);
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (disc.at(x, y)) {
          sx += x + 0.5;
          sy += y + 0.5;
          n += 1;
        }
    geom::Circle best{{sx / n, sy / n}, std::sqrt(n / std::numbers::pi)};
    auto got = scoring::normalized_iou_score({{disc, {best}}});
    c.that(got["O"].get<double>() == 1.0, "best-fit circle on disc " + std::to_string(i) + " scored " + got["O"].dump());
  }
}

// ---------------------------------------------------------------------------
// 8. DICOM round trip and external spot check

void dicom_round_trip(Check& c) {
  const auto& k = corpus();
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(k.archive))
    if (e.path().extension() == ".dcm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  c.that(files.size() > 100, "corpus has only " + std::to_string(files.size()) + " files");
  for (const auto& f : files) {
    auto bytes = dicom::read_bytes(f);
    auto d = dicom::parse_instance(bytes);
    auto again = dicom::write_instance(d);
    c.that(dicom::parse_instance(again) == d, "parse(write(d)) != d for " + f.filename().string());
    c.that(again == bytes, "rewrite differs for " + f.filename().string());
  }

  std::vector<std::filesystem::path> sample;
  for (std::size_t i = 0; i < 5 && !files.empty(); ++i) sample.push_back(files[i * files.size() / 5]);
  std::string cmd = "python3 '" RADGYM_DUMP_SCRIPT "'";
  for (const auto& f : sample) cmd += " '" + f.string() + "'";
  cmd += " 2>/dev/null";
  std::string out;
  if (FILE* p = ::popen(cmd.c_str(), "r")) {
    char buf[65536];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    c.that(::pclose(p) == 0, "pydicom dump exited with an error");
  }
  json dumped;
  try {
    dumped = json::parse(out);
  } catch (const std::exception&) {
    c.that(false, "pydicom dump produced no JSON (is pydicom installed?)");
    return;
  }
  c.that(dumped.size() == sample.size(), "pydicom dumped a different number of files");
  for (std::size_t i = 0; i < sample.size() && i < dumped.size(); ++i) {
    auto d = dicom::read_file(sample[i]);
    const auto& ext = dumped[i];
    const auto name = sample[i].filename().string();
    for (const auto& [tag, value] : d.tags) {
      auto key = tag.to_string();
      if (!ext.contains(key)) {
        c.that(false, name + ": pydicom lacks " + key);
        continue;
      }
      const auto& v = ext[key]["value"];
      c.that(ext[key]["vr"] == value.vr, name + ": VR of " + key);
      if (value.vr == "US" || value.vr == "SS" || value.vr == "IS") {
        c.that(v.is_number_integer() && v.get<long>() == value.as_int(), name + ": value of " + key);
      } else if (value.vr == "DS") {
        auto ours = value.as_decimals();
        std::vector<double> theirs = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
        c.that(ours.size() == theirs.size(), name + ": multiplicity of " + key);
        for (std::size_t j = 0; j < std::min(ours.size(), theirs.size()); ++j)
          c.near(ours[j], theirs[j], 1e-9, name + ": " + key);
      } else {
        c.that(v.is_string() && v.get<std::string>() == value.as_string(), name + ": value of " + key);
      }
    }
    for (auto it = ext.begin(); it != ext.end(); ++it) {
      dicom::Tag tag{static_cast<std::uint16_t>(std::stoul(it.key().substr(0, 4), nullptr, 16)),
                     static_cast<std::uint16_t>(std::stoul(it.key().substr(5, 4), nullptr, 16))};
      if (tag.group == 0x0002 || tag == dicom::tags::PixelData) continue;
      c.that(d.has(tag), name + ": we lack " + it.key());
    }
    auto pixels = ext[dicom::tags::PixelData.to_string()]["value"].get<std::vector<std::uint16_t>>();
    c.that(d.pixel_data && *d.pixel_data == pixels, name + ": pixel data differs");
  }
}

// ---------------------------------------------------------------------------
// 9. episode semantics

void episode_semantics(Check& c) {
  const auto& k = corpus();
  for (auto type : tasks::kAllTaskTypes) {
    const auto& t = k.first(type);
    Scripted idle({calls({{"get_viewport_state", json::object()}})});
    auto tr = runner::run_episode(t, idle, k.env());
    const auto name = std::string(tasks::to_string(type));
    c.that(tr.termination == traj::Termination::TurnCap, name + ": expected turn-cap exit");
    c.that(static_cast<int>(tr.turns.size()) == t.max_turns, name + ": turn count");
    c.that(scoring::score_task(t, tr, *k.truth).O == 0.0, name + ": O must be 0 at turn cap");
  }

  std::vector<std::pair<const tasks::TaskSpec*, std::pair<std::string, json>>> terminals{
      {&k.first(TaskType::MetadataQa), {"submit_answer", {{"answer", "1"}}}},
      {&k.first(TaskType::BiradsReport),
       {"submit_birads_report",
        {{"laterality", "left"}, {"lesion_count", 1}, {"birads_category", 4}, {"enhancement_present", true}}}},
      {&k.first(TaskType::Longitudinal), {"submit_longitudinal_complete", json::object()}},
  };
  for (const auto& [task, terminal] : terminals) {
    Scripted agent({calls({terminal, {"set_zoom", {{"scale", 3.0}}}, {"set_viewport_slice", {{"slice_index", 0}}}})});
    auto tr = runner::run_episode(*task, agent, k.env());
    c.that(agent.steps == 1, task->task_id + ": agent invoked again after terminal call");
    c.that(tr.calls().size() == 1, task->task_id + ": calls after terminal were dispatched");
    c.that(tr.termination == traj::Termination::TerminalTool, task->task_id + ": termination");
    c.that(tr.final_viewport["zoom"] == 1.0, task->task_id + ": viewport changed after terminal");
  }

  runner::EpisodeOptions opt{false};
  for (auto factory : {runner::oracle_policy(k.env()), runner::random_policy(k.env(), 5)}) {
    auto serial = runner::run_suite(k.suite, factory, k.env(), 1, opt);
    auto parallel = runner::run_suite(k.suite, factory, k.env(), 8, opt);
    for (std::size_t i = 0; i < k.suite.size(); ++i)
      c.that(traj::to_jsonl(serial[i], false) == traj::to_jsonl(parallel[i], false),
             "parallel differs from serial on " + k.suite[i].task_id);
  }
}

// ---------------------------------------------------------------------------
// 10. end-to-end determinism

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "radgym");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::istringstream in;
  std::ostringstream out, err;
  int rc = cli::run_command(static_cast<int>(argv.size()), argv.data(), in, out, err);
  if (rc != 0) std::cerr << err.str();
  return rc;
}

void pipeline_determinism(Check& c) {
  auto root = testing_support::scratch_dir("pipeline");
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    auto dir = root / ("pass" + std::to_string(pass));
    auto archive = (dir / "archive").string(), suite = (dir / "suite").string();
    c.that(cli({"phantom", "gen", "--seed", "7", "--out", archive, "--ct", "2", "--mr", "2", "--longitudinal", "2"}) == 0,
           "phantom gen failed");
    c.that(cli({"tasks", "gen", "--archive", archive, "--suite", suite, "--per-type", "5", "--task-seed", "7"}) == 0,
           "tasks gen failed");
    for (const std::string agent : {"oracle", "random"}) {
      auto run = (dir / agent).string();
      c.that(cli({"run", "--archive", archive, "--suite", suite, "--out", run, "--agent", agent, "--agent-seed", "7",
                  "--parallelism", "4"}) == 0,
             agent + " run failed");
      c.that(cli({"score", "--archive", archive, "--suite", suite, "--run", run}) == 0, agent + " score failed");
      auto csv = phantom::read_text(std::filesystem::path(run) / "scores.csv");
      c.that(std::count(csv.begin(), csv.end(), '\n') == 41, agent + ": scores.csv should have 40 rows");
      if (pass == 0) first[agent] = csv;
      else c.that(csv == first[agent], agent + ": scores.csv differs between pipeline runs");
    }
  }
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"scoring golden vectors", golden_vectors},
      {"composite identity over 1000 triples", composite_identity},
      {"oracle vs random outcome gap", oracle_random_gap},
      {"three-reader consensus vote", consensus_rule},
      {"reference trajectory closed forms", trajectory_lengths},
      {"tool visibility matrix", visibility},
      {"normalized IoU vs brute-force oracle", iou_equivalence},
      {"DICOM round trip and pydicom spot check", dicom_round_trip},
      {"episode semantics", episode_semantics},
      {"end-to-end pipeline determinism", pipeline_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check check;
    auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(check);
    } catch (const std::exception& e) {
      check.failures.push_back(std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = check.failures.empty();
    failed += !ok;
    std::printf("%s %zu %s (%.2fs)\n", ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs);
    for (std::size_t j = 0; j < check.failures.size() && j < 10; ++j) std::printf("    %s\n", check.failures[j].c_str());
    if (check.failures.size() > 10) std::printf("    ... %zu more\n", check.failures.size() - 10);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
