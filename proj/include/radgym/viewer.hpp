#pragma once

// Per-episode viewer state: viewport, navigation commands, segmentation store.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/error.hpp"
#include "radgym/geometry.hpp"
#include "radgym/pacs.hpp"

namespace radgym::viewer {

using nlohmann::json;

struct ViewportState {
  int slice_index = 0;
  int total_images = 0;
  double window_width = 0.0;
  double window_center = 0.0;
  double zoom = 1.0;
  std::string series_uid;
  std::vector<std::string> display_set_uids;

  bool operator==(const ViewportState&) const = default;
};

/// The seven viewport keys, as embedded in the prompt and returned by
/// get_viewport_state.
inline json to_json(const ViewportState& s) {
  return {{"sliceIndex", s.slice_index},
          {"totalImages", s.total_images},
          {"windowWidth", s.window_width},
          {"windowCenter", s.window_center},
          {"zoom", s.zoom},
          {"seriesInstanceUID", s.series_uid},
          {"displaySetInstanceUIDs", s.display_set_uids}};
}

struct Segmentation {
  int id = 0;
  std::string label;
  int slice_index = 0;
  std::string series_uid;
  geom::Shape shape;

  bool operator==(const Segmentation&) const = default;
};

inline json point_json(geom::Point p) { return json::array({p.x, p.y}); }

inline json shape_json(const geom::Shape& shape) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, geom::Circle>) {
          return {{"type", "circle"}, {"center", point_json(s.center)}, {"radius", s.radius}};
        } else if constexpr (std::is_same_v<T, geom::Rectangle>) {
          return {{"type", "rectangle"}, {"top_left", point_json(s.top_left)}, {"bottom_right", point_json(s.bottom_right)}};
        } else {
          json pts = json::array();
          for (auto p : s.points) pts.push_back(point_json(p));
          return {{"type", "polygon"}, {"points", pts}};
        }
      },
      shape);
}

inline json to_json(const Segmentation& s) {
  return {{"id", s.id},
          {"label", s.label},
          {"slice_index", s.slice_index},
          {"series_uid", s.series_uid},
          {"shape", shape_json(s.shape)}};
}

struct SetSlice {
  long long slice_index = 0;
};
struct SetWindowLevel {
  double window_width = 0;
  double window_center = 0;
};
struct SetZoom {
  double scale = 1.0;
};
struct SelectSeries {
  std::string series_uid;
};
using Command = std::variant<SetSlice, SetWindowLevel, SetZoom, SelectSeries>;

/// Pure transition; throws on invalid commands so callers keep the old state.
inline ViewportState apply_navigation(const ViewportState& state, const Command& cmd, const pacs::Store& store) {
  ViewportState next = state;
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, SetSlice>) {
          if (c.slice_index < 0 || c.slice_index >= state.total_images)
            throw Error(ErrorCode::SliceOutOfRange, "slice " + std::to_string(c.slice_index) + " not in [0, " +
                                                        std::to_string(state.total_images) + ")");
          next.slice_index = static_cast<int>(c.slice_index);
        } else if constexpr (std::is_same_v<T, SetWindowLevel>) {
          if (!(c.window_width > 0) || !std::isfinite(c.window_width))
            throw Error(ErrorCode::NonPositiveWidth, "window width must be > 0");
          if (!std::isfinite(c.window_center)) throw Error(ErrorCode::SchemaValidationError, "window center not finite");
          next.window_width = c.window_width;
          next.window_center = c.window_center;
        } else if constexpr (std::is_same_v<T, SetZoom>) {
          if (!(c.scale > 0) || !std::isfinite(c.scale)) throw Error(ErrorCode::NonPositiveZoom, "zoom must be > 0");
          next.zoom = c.scale;
        } else {
          if (std::find(state.display_set_uids.begin(), state.display_set_uids.end(), c.series_uid) ==
              state.display_set_uids.end())
            throw Error(ErrorCode::UnknownSeries, "series " + c.series_uid + " is not loaded");
          const auto& s = store.series(c.series_uid);
          next.series_uid = c.series_uid;
          next.slice_index = 0;
          next.total_images = static_cast<int>(s.instances.size());
        }
      },
      cmd);
  return next;
}

struct ResetParams {
  std::string study_uid;
  std::vector<std::string> auxiliary_study_uids;
  std::string initial_series_uid;
  int initial_slice_index = 0;
};

inline void validate_shape(const geom::Shape& shape) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        auto finite = [](geom::Point p) { return std::isfinite(p.x) && std::isfinite(p.y); };
        if constexpr (std::is_same_v<T, geom::Circle>) {
          if (!(s.radius > 0) || !std::isfinite(s.radius) || !finite(s.center))
            throw Error(ErrorCode::InvalidShape, "circle radius must be > 0");
        } else if constexpr (std::is_same_v<T, geom::Rectangle>) {
          if (!finite(s.top_left) || !finite(s.bottom_right) || !(s.top_left.x < s.bottom_right.x) ||
              !(s.top_left.y < s.bottom_right.y))
            throw Error(ErrorCode::InvalidShape, "rectangle top_left must be above and left of bottom_right");
        } else {
          if (s.points.size() < 3) throw Error(ErrorCode::InvalidShape, "polygon needs at least 3 points");
          for (auto p : s.points)
            if (!finite(p)) throw Error(ErrorCode::InvalidShape, "polygon point not finite");
        }
      },
      shape);
}

class Viewer {
 public:
  /// Clears annotations and loads the study on the initial series and slice,
  /// with window defaults taken from that instance's tags.
  static Viewer reset(const ResetParams& p, const pacs::Store& store) {
    if (!store.has_study(p.study_uid)) throw Error(ErrorCode::UnknownStudy, p.study_uid);
    for (const auto& aux : p.auxiliary_study_uids)
      if (!store.has_study(aux)) throw Error(ErrorCode::UnknownStudy, aux);
    if (!store.has_series(p.initial_series_uid)) throw Error(ErrorCode::UnknownSeries, p.initial_series_uid);

    Viewer v;
    for (const auto& s : store.study(p.study_uid).series_uids) v.state_.display_set_uids.push_back(s);
    for (const auto& aux : p.auxiliary_study_uids)
      for (const auto& s : store.study(aux).series_uids) v.state_.display_set_uids.push_back(s);
    if (std::find(v.state_.display_set_uids.begin(), v.state_.display_set_uids.end(), p.initial_series_uid) ==
        v.state_.display_set_uids.end())
      throw Error(ErrorCode::UnknownSeries, p.initial_series_uid + " is not part of the loaded studies");

    const auto& series = store.series(p.initial_series_uid);
    const auto n = static_cast<int>(series.instances.size());
    if (p.initial_slice_index < 0 || p.initial_slice_index >= n)
      throw Error(ErrorCode::SliceOutOfRange, "initial slice " + std::to_string(p.initial_slice_index));
    const auto& inst = series.instances[static_cast<std::size_t>(p.initial_slice_index)];
    v.state_.series_uid = p.initial_series_uid;
    v.state_.slice_index = p.initial_slice_index;
    v.state_.total_images = n;
    v.state_.window_width = inst.decimal_or(dicom::tags::WindowWidth, 400.0);
    v.state_.window_center = inst.decimal_or(dicom::tags::WindowCenter, 40.0);
    v.state_.zoom = 1.0;
    return v;
  }

  const ViewportState& state() const { return state_; }
  const std::vector<Segmentation>& segmentations() const { return segmentations_; }

  void navigate(const Command& cmd, const pacs::Store& store) { state_ = apply_navigation(state_, cmd, store); }

  /// Appends to the active series; returns the fresh id.
  int add_segmentation(std::string label, long long slice_index, geom::Shape shape, const pacs::Store& store) {
    validate_shape(shape);
    if (slice_index < 0 || slice_index >= state_.total_images)
      throw Error(ErrorCode::SliceOutOfRange, "slice " + std::to_string(slice_index) + " not in [0, " +
                                                  std::to_string(state_.total_images) + ")");
    const auto& g = store.series(state_.series_uid).geometry;
    if (!geom::intersects_frame(shape, g.columns, g.rows))
      throw Error(ErrorCode::InvalidShape, "shape lies entirely outside the " + std::to_string(g.columns) + "x" +
                                               std::to_string(g.rows) + " frame");
    Segmentation seg{next_id_++, std::move(label), static_cast<int>(slice_index), state_.series_uid, std::move(shape)};
    segmentations_.push_back(std::move(seg));
    return segmentations_.back().id;
  }

  json list_segmentations() const {
    json out = json::array();
    for (const auto& s : segmentations_) out.push_back(to_json(s));
    return out;
  }

 private:
  ViewportState state_;
  std::vector<Segmentation> segmentations_;
  int next_id_ = 1;
};

}  // namespace radgym::viewer
