#pragma once

// Preprocessor pipelines (raw frame -> PNG) and the viewer screenshot
// composite.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "radgym/error.hpp"
#include "radgym/geometry.hpp"
#include "radgym/pacs.hpp"
#include "radgym/png.hpp"
#include "radgym/util.hpp"
#include "radgym/viewer.hpp"

namespace radgym::imaging {

enum class Pipeline { Default, LungWindow, SoftTissueWindow, PercentileNorm, BreastMri, RawUint16 };

inline constexpr std::array<std::string_view, 6> kPipelineNames{
    "default", "lung_window", "soft_tissue_window", "percentile_norm", "breast_mri", "raw_uint16"};

inline std::string_view to_string(Pipeline p) { return kPipelineNames[static_cast<std::size_t>(p)]; }

inline Pipeline parse_pipeline(std::string_view name) {
  for (std::size_t i = 0; i < kPipelineNames.size(); ++i)
    if (kPipelineNames[i] == name) return static_cast<Pipeline>(i);
  throw Error(ErrorCode::UnknownPipeline, "unknown preprocessor '" + std::string(name) + "'");
}

struct WindowPreset {
  double width;
  double center;
};
inline constexpr WindowPreset kLungWindow{1500, -600};
inline constexpr WindowPreset kSoftTissueWindow{400, 40};
inline constexpr WindowPreset kBoneWindow{2500, 480};

/// CT windows make no sense on MR and the breast pipeline none on CT.
inline bool compatible(Pipeline p, std::string_view modality) {
  switch (p) {
    case Pipeline::LungWindow:
    case Pipeline::SoftTissueWindow: return modality == "CT";
    case Pipeline::BreastMri: return modality == "MR";
    default: return true;
  }
}

inline std::uint8_t window_value(double v, double ww, double wc) {
  double lo = wc - ww / 2.0;
  double out = round_half_up((v - lo) / ww * 255.0);
  return static_cast<std::uint8_t>(std::clamp(out, 0.0, 255.0));
}

inline std::vector<std::uint8_t> apply_window(std::span<const double> values, double ww, double wc) {
  if (!(ww > 0)) throw Error(ErrorCode::NonPositiveWidth, "window width must be > 0");
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = window_value(values[i], ww, wc);
  return out;
}

/// Linear stretch of [lo, hi] onto [0, 255]; a flat range maps to 0.
inline std::vector<std::uint8_t> stretch(std::span<const double> values, double lo, double hi) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::clamp(round_half_up((values[i] - lo) / (hi - lo) * 255.0), 0.0, 255.0));
  return out;
}

struct Image {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::string png;
};

/// 8-bit grayscale rendering of one slice (everything except raw_uint16).
inline std::vector<std::uint8_t> render_gray(const pacs::Store& store, std::string_view series_uid, long long slice,
                                             Pipeline p) {
  auto frame = store.fetch_frame(series_uid, slice);
  auto values = frame.values();
  if (p == Pipeline::Default) p = frame.modality == "CT" ? Pipeline::SoftTissueWindow : Pipeline::PercentileNorm;
  switch (p) {
    case Pipeline::LungWindow: return apply_window(values, kLungWindow.width, kLungWindow.center);
    case Pipeline::SoftTissueWindow: return apply_window(values, kSoftTissueWindow.width, kSoftTissueWindow.center);
    case Pipeline::PercentileNorm: return stretch(values, pacs::percentile(values, 1.0), pacs::percentile(values, 99.0));
    case Pipeline::BreastMri: {
      const auto& st = store.stats(series_uid);
      return stretch(values, st.p1, st.max);
    }
    default: break;
  }
  throw Error(ErrorCode::UnknownPipeline, "raw_uint16 has no 8-bit rendering");
}

inline Image preprocess_frame(const pacs::Store& store, std::string_view series_uid, long long slice, Pipeline p) {
  auto frame = store.fetch_frame(series_uid, slice);
  Image img{frame.cols, frame.rows, 8, {}};
  if (p == Pipeline::RawUint16) {
    img.bit_depth = 16;
    img.png = png::encode_gray16(frame.cols, frame.rows, frame.stored);
  } else {
    img.png = png::encode_gray8(frame.cols, frame.rows, render_gray(store, series_uid, slice, p));
  }
  return img;
}

// ---------------------------------------------------------------------------
// Screenshot

namespace font {

/// 5x7 glyphs, one byte per column, bit 0 = top row.
inline const std::array<std::uint8_t, 5>* glyph(char c) {
  static const std::array<std::pair<char, std::array<std::uint8_t, 5>>, 43> kGlyphs{{
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00}}, {'-', {0x08, 0x08, 0x08, 0x08, 0x08}},
      {'.', {0x00, 0x60, 0x60, 0x00, 0x00}}, {'/', {0x20, 0x10, 0x08, 0x04, 0x02}},
      {':', {0x00, 0x36, 0x36, 0x00, 0x00}}, {'_', {0x40, 0x40, 0x40, 0x40, 0x40}},
      {'0', {0x3E, 0x51, 0x49, 0x45, 0x3E}}, {'1', {0x00, 0x42, 0x7F, 0x40, 0x00}},
      {'2', {0x42, 0x61, 0x51, 0x49, 0x46}}, {'3', {0x21, 0x41, 0x45, 0x4B, 0x31}},
      {'4', {0x18, 0x14, 0x12, 0x7F, 0x10}}, {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
      {'6', {0x3C, 0x4A, 0x49, 0x49, 0x30}}, {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
      {'8', {0x36, 0x49, 0x49, 0x49, 0x36}}, {'9', {0x06, 0x49, 0x49, 0x29, 0x1E}},
      {'A', {0x7E, 0x11, 0x11, 0x11, 0x7E}}, {'B', {0x7F, 0x49, 0x49, 0x49, 0x36}},
      {'C', {0x3E, 0x41, 0x41, 0x41, 0x22}}, {'D', {0x7F, 0x41, 0x41, 0x22, 0x1C}},
      {'E', {0x7F, 0x49, 0x49, 0x49, 0x41}}, {'F', {0x7F, 0x09, 0x09, 0x09, 0x01}},
      {'G', {0x3E, 0x41, 0x49, 0x49, 0x7A}}, {'H', {0x7F, 0x08, 0x08, 0x08, 0x7F}},
      {'I', {0x00, 0x41, 0x7F, 0x41, 0x00}}, {'J', {0x20, 0x40, 0x41, 0x3F, 0x01}},
      {'K', {0x7F, 0x08, 0x14, 0x22, 0x41}}, {'L', {0x7F, 0x40, 0x40, 0x40, 0x40}},
      {'M', {0x7F, 0x02, 0x0C, 0x02, 0x7F}}, {'N', {0x7F, 0x04, 0x08, 0x10, 0x7F}},
      {'O', {0x3E, 0x41, 0x41, 0x41, 0x3E}}, {'P', {0x7F, 0x09, 0x09, 0x09, 0x06}},
      {'Q', {0x3E, 0x41, 0x51, 0x21, 0x5E}}, {'R', {0x7F, 0x09, 0x19, 0x29, 0x46}},
      {'S', {0x46, 0x49, 0x49, 0x49, 0x31}}, {'T', {0x01, 0x01, 0x7F, 0x01, 0x01}},
      {'U', {0x3F, 0x40, 0x40, 0x40, 0x3F}}, {'V', {0x1F, 0x20, 0x40, 0x20, 0x1F}},
      {'W', {0x3F, 0x40, 0x38, 0x40, 0x3F}}, {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
      {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}}, {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
      {'?', {0x02, 0x01, 0x51, 0x09, 0x06}},
  }};
  char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& [ch, bits] : kGlyphs)
    if (ch == u) return &bits;
  return &kGlyphs.back().second;
}

inline constexpr int kAdvance = 6;
inline constexpr int kLineHeight = 9;

}  // namespace font

struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Canvas(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  void put(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
  }

  void text(int x, int y, std::string_view s, std::array<std::uint8_t, 3> c) {
    for (char ch : s) {
      const auto& g = *font::glyph(ch);
      for (int col = 0; col < 5; ++col)
        for (int row = 0; row < 7; ++row)
          if (g[static_cast<std::size_t>(col)] >> row & 1) put(x + col, y + row, c);
      x += font::kAdvance;
    }
  }
};

inline constexpr std::array<std::uint8_t, 3> kOverlayColor{255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kTextColor{255, 255, 0};

/// Set pixels of `m` with at least one 4-neighbour outside the mask.
inline geom::Mask2D outline(const geom::Mask2D& m) {
  geom::Mask2D out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y) && (!m.at(x - 1, y) || !m.at(x + 1, y) || !m.at(x, y - 1) || !m.at(x, y + 1))) out.set(x, y);
  return out;
}

inline std::vector<std::string> banner_lines(const viewer::ViewportState& v) {
  return {"SERIES " + v.series_uid,
          "SLICE " + std::to_string(v.slice_index) + "/" + std::to_string(v.total_images),
          "WW " + format_fixed(v.window_width, 0) + " WC " + format_fixed(v.window_center, 0) + " ZOOM " +
              format_fixed(v.zoom, 2)};
}

/// Composite of the current slice (current window, zoom about the frame
/// centre), outlines of the segmentations on that slice, and a text banner
/// below the image. At zoom 1 image pixels map 1:1 onto the canvas.
inline std::string render_screenshot(const viewer::ViewportState& v, const std::vector<viewer::Segmentation>& segs,
                                     const pacs::Store& store) {
  if (!store.has_series(v.series_uid)) throw Error(ErrorCode::UnknownSeries, v.series_uid);
  auto frame = store.fetch_frame(v.series_uid, v.slice_index);
  auto gray = apply_window(frame.values(), v.window_width, v.window_center);

  geom::Mask2D overlay(frame.cols, frame.rows);
  for (const auto& s : segs) {
    if (s.series_uid != v.series_uid || s.slice_index != v.slice_index) continue;
    auto edge = outline(geom::rasterize(s.shape, frame.cols, frame.rows));
    for (std::size_t i = 0; i < edge.data.size(); ++i) overlay.data[i] |= edge.data[i];
  }

  auto lines = banner_lines(v);
  std::size_t longest = 0;
  for (const auto& l : lines) longest = std::max(longest, l.size());
  const int width = std::max(frame.cols, static_cast<int>(longest) * font::kAdvance + 4);
  const int banner = static_cast<int>(lines.size()) * font::kLineHeight + 4;
  Canvas canvas(width, frame.rows + banner);

  const double cx = frame.cols / 2.0, cy = frame.rows / 2.0;
  for (int y = 0; y < frame.rows; ++y)
    for (int x = 0; x < frame.cols; ++x) {
      double fx = std::floor(cx + (x + 0.5 - cx) * v.zoom);
      double fy = std::floor(cy + (y + 0.5 - cy) * v.zoom);
      if (!(fx >= 0 && fy >= 0 && fx < frame.cols && fy < frame.rows)) continue;
      auto sx = static_cast<int>(fx), sy = static_cast<int>(fy);
      if (overlay.at(sx, sy)) {
        canvas.put(x, y, kOverlayColor);
      } else {
        auto g = gray[static_cast<std::size_t>(sy) * frame.cols + sx];
        canvas.put(x, y, {g, g, g});
      }
    }
  for (std::size_t i = 0; i < lines.size(); ++i)
    canvas.text(2, frame.rows + 2 + static_cast<int>(i) * font::kLineHeight, lines[i], kTextColor);
  return png::encode_rgb8(canvas.width, canvas.height, canvas.rgb);
}

}  // namespace radgym::imaging
