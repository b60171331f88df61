#pragma once

// Shared fixtures: one phantom archive and task suite per test process, plus
// small brute-force helpers the tests use as independent oracles.

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <unistd.h>

#include "radgym/pacs.hpp"
#include "radgym/phantom.hpp"
#include "radgym/tasks.hpp"
#include "radgym/tools.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace radgym;

inline fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("radgym-test-" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Corpus {
  fs::path archive;
  std::shared_ptr<const pacs::Store> store;
  std::shared_ptr<const phantom::TruthCatalog> truth;
  std::vector<tasks::TaskSpec> suite;

  tools::Environment env() const { return {store, truth}; }

  const tasks::TaskSpec& first(tasks::TaskType type) const {
    for (const auto& t : suite)
      if (t.task_type == type) return t;
    throw std::runtime_error("no task of requested type");
  }
  const tasks::TaskSpec& by_subtype(const std::string& subtype) const {
    for (const auto& t : suite)
      if (t.subtype() == subtype) return t;
    throw std::runtime_error("no task with subtype " + subtype);
  }
};

/// Two families of each profile at 128x128x40, ten tasks per type.
inline const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus out;
    out.archive = scratch_dir("archive");
    phantom::ArchiveConfig cfg;
    cfg.ct_families = cfg.mr_families = cfg.longitudinal_families = 2;
    phantom::write_archive(out.archive, cfg);
    out.store = std::make_shared<const pacs::Store>(pacs::load_archive(out.archive));
    out.truth = std::make_shared<const phantom::TruthCatalog>(phantom::load_truth(out.archive));
    out.suite = tasks::generate_suite(*out.store, *out.truth, {});
    return out;
  }();
  return c;
}

/// Pixel-centre inclusion written directly from the definitions; boundaries
/// are closed with a 1e-9 slack.
inline constexpr double kEps = 1e-9;

inline bool centre_in_circle(int x, int y, double cx, double cy, double r) {
  double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
  return dx * dx + dy * dy <= r * r + kEps;
}

inline bool centre_in_rect(int x, int y, double x0, double y0, double x1, double y1) {
  double px = x + 0.5, py = y + 0.5;
  return px >= std::min(x0, x1) - kEps && px <= std::max(x0, x1) + kEps && py >= std::min(y0, y1) - kEps &&
         py <= std::max(y0, y1) + kEps;
}

/// Even-odd crossing count.
inline bool centre_in_polygon(int x, int y, const std::vector<std::pair<double, double>>& pts) {
  double px = x + 0.5, py = y + 0.5;
  bool inside = false;
  for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
    auto [xi, yi] = pts[i];
    auto [xj, yj] = pts[j];
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

inline double brute_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace testing_support
