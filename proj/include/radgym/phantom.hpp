#pragma once

// Deterministic synthetic studies with exact ground truth: thoracic CT with
// nodules, multi-pass breast MR, and baseline/follow-up CT pairs. Everything
// is a pure function of its PhantomSpec (including the seed).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/dicom.hpp"
#include "radgym/error.hpp"
#include "radgym/geometry.hpp"
#include "radgym/util.hpp"

namespace radgym::phantom {

using nlohmann::json;

enum class Profile { CT, BreastMR, LongitudinalCT };

inline std::string to_string(Profile p) {
  switch (p) {
    case Profile::CT: return "CT";
    case Profile::BreastMR: return "BreastMR";
    case Profile::LongitudinalCT: return "LongitudinalCT";
  }
  return "CT";
}

inline Profile profile_from_string(std::string_view s) {
  if (s == "CT") return Profile::CT;
  if (s == "BreastMR") return Profile::BreastMR;
  if (s == "LongitudinalCT") return Profile::LongitudinalCT;
  throw Error(ErrorCode::ParseError, "unknown profile '" + std::string(s) + "'");
}

struct LesionSpec {
  int cx = 0;  // centre voxel
  int cy = 0;
  int cz = 0;
  double radius = 4.0;  // in-plane radius on the centre slice, pixels
  int first_slice = 0;  // inclusive slice range the lesion spans
  int last_slice = 0;
  std::string label;
};

/// Reader disagreement model: per reader, a disc dilation or erosion of
/// radius uniform in [0, max_radius], and each end slice dropped with
/// probability drop_end_probability.
struct JitterConfig {
  int max_radius = 2;
  double drop_end_probability = 0.3;
};

struct BiradsSpec {
  int category = 4;
  bool enhancement_present = true;
  bool include_quadrant = true;
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::string family_id = "family";
  std::string patient_id = "PHANTOM-0001";
  Profile profile = Profile::CT;
  int rows = 128;
  int cols = 128;
  int slices = 40;
  std::vector<LesionSpec> lesions;  // CT nodules, MR lesions, or lesions present at both time points
  int readers = 3;
  JitterConfig jitter;
  BiradsSpec birads;
  std::vector<LesionSpec> new_lesions;  // follow-up only
  int followup_slices = 40;
  int interval_days = 365;
  std::string baseline_date = "20000101";
};

struct LesionTruth {
  int id = 0;
  std::string label;
  std::string series_uid;
  geom::BinaryVolume consensus;  // global slice indices via z_origin
  int representative_slice = 0;  // widest in-plane extent

  std::vector<int> slices() const { return geom::occupied_slices(consensus); }
  geom::Mask2D mask_on(int slice) const { return geom::slice_of(consensus, slice); }
};

struct BiradsRecord {
  std::string laterality;  // left | right | bilateral | none
  int lesion_count = 0;
  int birads_category = 0;
  bool enhancement_present = false;
  std::optional<std::string> quadrant;

  bool operator==(const BiradsRecord&) const = default;
};

struct LongitudinalPoint {
  int slice_index = 0;
  double x = 0;
  double y = 0;
  bool operator==(const LongitudinalPoint&) const = default;
};

struct LongitudinalTruth {
  std::string baseline_study_uid;
  std::string baseline_series_uid;
  std::string followup_study_uid;
  std::string followup_series_uid;
  int interval_days = 0;
  int baseline_slices = 0;
  int followup_slices = 0;
  std::vector<LongitudinalPoint> findings;
};

struct GroundTruth {
  std::vector<LesionTruth> lesions;
  std::optional<BiradsRecord> birads;
  std::optional<LongitudinalTruth> longitudinal;
  std::string modality_letter;  // vision-probe key: A) CT  B) MRI
};

/// One generated study family: the instances of every study it contains and
/// the shared ground truth. study_uids[0] is the primary (or follow-up) study.
struct StudyFamily {
  std::string family_id;
  Profile profile = Profile::CT;
  std::string patient_id;
  std::vector<std::string> study_uids;
  std::vector<dicom::InstanceDataset> instances;
  GroundTruth truth;
};

struct LongitudinalPair {
  std::vector<dicom::InstanceDataset> baseline;
  std::vector<dicom::InstanceDataset> followup;
  GroundTruth truth;
};

// ---------------------------------------------------------------------------
// helpers

namespace detail {

inline std::string make_uid(std::uint64_t seed, const std::string& salt) {
  return "2.25." + std::to_string(mix_seed(seed, salt) | 1ull);
}

inline void validate(const PhantomSpec& spec, const std::vector<LesionSpec>& lesions, int slices) {
  if (spec.rows < 16 || spec.cols < 16) throw Error(ErrorCode::InvalidSpec, "frame must be at least 16x16");
  if (slices < 8) throw Error(ErrorCode::InvalidSpec, "slices must be >= 8");
  for (const auto& l : lesions) {
    if (l.radius < 2.0) throw Error(ErrorCode::InvalidSpec, "lesion radius must be >= 2 px");
    if (l.cx < 0 || l.cy < 0 || l.cx >= spec.cols || l.cy >= spec.rows || l.cz < 0 || l.cz >= slices)
      throw Error(ErrorCode::LesionOutOfBounds, "centre (" + std::to_string(l.cx) + "," + std::to_string(l.cy) + "," +
                                                    std::to_string(l.cz) + ") outside volume");
    if (l.first_slice < 0 || l.last_slice >= slices || l.first_slice > l.cz || l.last_slice < l.cz)
      throw Error(ErrorCode::LesionOutOfBounds, "slice range [" + std::to_string(l.first_slice) + "," +
                                                    std::to_string(l.last_slice) + "] invalid");
  }
}

/// In-plane radius of the lesion on slice z (ellipsoidal taper across the range).
inline double radius_on_slice(const LesionSpec& l, int z) {
  if (z < l.first_slice || z > l.last_slice) return -1.0;
  double half = std::max(l.cz - l.first_slice, l.last_slice - l.cz) + 0.5;
  double t = (z - l.cz) / half;
  return l.radius * std::sqrt(std::max(0.0, 1.0 - t * t));
}

inline bool in_lesion(const LesionSpec& l, int x, int y, int z) {
  double r = radius_on_slice(l, z);
  if (r < 0) return false;
  double dx = x - l.cx, dy = y - l.cy;
  return dx * dx + dy * dy <= r * r;
}

inline bool in_ellipse(double x, double y, double cx, double cy, double a, double b) {
  double dx = (x - cx) / a, dy = (y - cy) / b;
  return dx * dx + dy * dy <= 1.0;
}

inline std::string add_days(const std::string& yyyymmdd, int days) {
  using namespace std::chrono;
  if (yyyymmdd.size() != 8) throw Error(ErrorCode::InvalidSpec, "date must be YYYYMMDD");
  int y = std::stoi(yyyymmdd.substr(0, 4));
  unsigned m = static_cast<unsigned>(std::stoi(yyyymmdd.substr(4, 2)));
  unsigned d = static_cast<unsigned>(std::stoi(yyyymmdd.substr(6, 2)));
  year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw Error(ErrorCode::InvalidSpec, "invalid date " + yyyymmdd);
  year_month_day out{sys_days{ymd} + std::chrono::days{days}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u", static_cast<int>(out.year()), static_cast<unsigned>(out.month()),
                static_cast<unsigned>(out.day()));
  return buf;
}

struct SeriesHeader {
  std::string study_uid;
  std::string series_uid;
  std::string modality;
  std::string sop_class;
  std::string study_description;
  std::string series_description;
  std::string body_part;
  std::string patient_id;
  std::string date;
  int series_number = 1;
  double slice_thickness = 2.5;
  double pixel_spacing = 0.7;
  double rescale_intercept = 0.0;
  double window_center = 40;
  double window_width = 400;
  bool with_position = true;
};

inline dicom::InstanceDataset make_instance(const SeriesHeader& h, int rows, int cols, int index,
                                            std::vector<std::uint16_t> pixels) {
  using namespace dicom;
  InstanceDataset d;
  const auto sop = h.series_uid + "." + std::to_string(index + 1);
  d.set(make_uid(tags::SOPClassUID, h.sop_class));
  d.set(make_uid(tags::SOPInstanceUID, sop));
  d.set(make_string(tags::StudyDate, "DA", h.date));
  d.set(make_string(tags::StudyTime, "TM", "090000"));
  d.set(make_string(tags::Modality, "CS", h.modality));
  d.set(make_string(tags::StudyDescription, "LO", h.study_description));
  d.set(make_string(tags::SeriesDescription, "LO", h.series_description));
  d.set(make_string(tags::PatientName, "PN", "PHANTOM^" + h.patient_id));
  d.set(make_string(tags::PatientID, "LO", h.patient_id));
  d.set(make_string(tags::BodyPartExamined, "CS", h.body_part));
  d.set(make_ds(tags::SliceThickness, h.slice_thickness));
  d.set(make_uid(tags::StudyInstanceUID, h.study_uid));
  d.set(make_uid(tags::SeriesInstanceUID, h.series_uid));
  d.set(make_is(tags::SeriesNumber, h.series_number));
  d.set(make_is(tags::InstanceNumber, index + 1));
  if (h.with_position) {
    const std::array<double, 3> ipp{-cols * h.pixel_spacing / 2, -rows * h.pixel_spacing / 2,
                                    index * h.slice_thickness};
    d.set(make_ds(tags::ImagePositionPatient, ipp));
    const std::array<double, 6> iop{1, 0, 0, 0, 1, 0};
    d.set(make_ds(tags::ImageOrientationPatient, iop));
  }
  d.set(make_us(tags::SamplesPerPixel, 1));
  d.set(make_string(tags::PhotometricInterpretation, "CS", "MONOCHROME2"));
  d.set(make_us(tags::Rows, static_cast<std::uint16_t>(rows)));
  d.set(make_us(tags::Columns, static_cast<std::uint16_t>(cols)));
  const std::array<double, 2> spacing{h.pixel_spacing, h.pixel_spacing};
  d.set(make_ds(tags::PixelSpacing, spacing));
  d.set(make_us(tags::BitsAllocated, 16));
  d.set(make_us(tags::BitsStored, 16));
  d.set(make_us(tags::HighBit, 15));
  d.set(make_us(tags::PixelRepresentation, 0));
  d.set(make_ds(tags::WindowCenter, h.window_center));
  d.set(make_ds(tags::WindowWidth, h.window_width));
  d.set(make_ds(tags::RescaleIntercept, h.rescale_intercept));
  d.set(make_ds(tags::RescaleSlope, 1.0));
  d.pixel_data = std::move(pixels);
  return d;
}

inline std::uint16_t to_stored(double value, double intercept) {
  return static_cast<std::uint16_t>(std::clamp(std::lround(value - intercept), 0L, 65535L));
}

/// Stylized chest: air, body ellipse, two lung fields, nodules.
inline std::vector<std::uint16_t> chest_slice(int rows, int cols, int z, const std::vector<LesionSpec>& lesions,
                                              Rng& noise) {
  std::vector<std::uint16_t> px(static_cast<std::size_t>(rows) * cols);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      double cx = x + 0.5, cy = y + 0.5;
      double hu = -1000.0;
      if (in_ellipse(cx, cy, cols * 0.5, rows * 0.5, cols * 0.45, rows * 0.38)) hu = 0.0;
      if (in_ellipse(cx, cy, cols * 0.3, rows * 0.5, cols * 0.15, rows * 0.26) ||
          in_ellipse(cx, cy, cols * 0.7, rows * 0.5, cols * 0.15, rows * 0.26))
        hu = -850.0;
      for (const auto& l : lesions)
        if (in_lesion(l, x, y, z)) hu = 20.0;
      hu += static_cast<double>(noise.uniform_int(-10, 10));
      px[static_cast<std::size_t>(y) * cols + x] = to_stored(hu, -1024.0);
    }
  return px;
}

inline geom::BinaryVolume lesion_mask(const LesionSpec& l, int rows, int cols) {
  geom::BinaryVolume v(cols, rows, l.last_slice - l.first_slice + 1, l.first_slice);
  for (int z = l.first_slice; z <= l.last_slice; ++z)
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x)
        if (in_lesion(l, x, y, z)) v.at(x, y, z) = 1;
  return v;
}

inline int widest_slice(const geom::BinaryVolume& v) {
  int best = v.z_origin;
  std::size_t best_area = 0;
  for (int z : geom::occupied_slices(v)) {
    auto area = geom::slice_of(v, z).count();
    if (area > best_area) {
      best_area = area;
      best = z;
    }
  }
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reader simulation and consensus

/// Simulates independent reader contours of a true lesion mask.
inline std::vector<geom::BinaryVolume> simulate_reader_masks(const geom::BinaryVolume& true_mask, int readers,
                                                             std::uint64_t seed, const JitterConfig& jitter = {}) {
  if (readers < 1 || readers > 4) throw Error(ErrorCode::InvalidSpec, "readers must be in [1,4]");
  std::vector<geom::BinaryVolume> out;
  Rng rng(mix_seed(seed, "readers"));
  for (int r = 0; r < readers; ++r) {
    auto radius = static_cast<int>(rng.uniform_int(0, std::max(0, jitter.max_radius)));
    bool grow = rng.bernoulli(0.5);
    bool drop_first = rng.bernoulli(jitter.drop_end_probability);
    bool drop_last = rng.bernoulli(jitter.drop_end_probability);

    geom::BinaryVolume reader = true_mask;
    for (int z = true_mask.z_origin; z < true_mask.z_origin + true_mask.depth; ++z) {
      auto slice = geom::slice_of(true_mask, z);
      auto jittered = grow ? geom::dilate(slice, radius) : geom::erode(slice, radius);
      for (int y = 0; y < slice.height; ++y)
        for (int x = 0; x < slice.width; ++x) reader.at(x, y, z) = jittered.at(x, y);
    }
    auto occupied = geom::occupied_slices(reader);
    auto clear = [&](int z) {
      for (int y = 0; y < reader.height; ++y)
        for (int x = 0; x < reader.width; ++x) reader.at(x, y, z) = 0;
    };
    if (occupied.size() > 1) {
      if (drop_first) clear(occupied.front());
      if (drop_last) clear(occupied.back());
    }
    out.push_back(std::move(reader));
  }
  return out;
}

/// Volumetric majority vote: masks are zero-padded over the union z-range and
/// a voxel is kept when the mean over readers is >= 0.5.
inline geom::BinaryVolume consensus_mask(const std::vector<geom::BinaryVolume>& masks) {
  if (masks.empty()) throw Error(ErrorCode::EmptyInput, "no reader masks");
  const int w = masks.front().width, h = masks.front().height;
  int z0 = masks.front().z_origin, z1 = z0 + masks.front().depth;
  for (const auto& m : masks) {
    if (m.width != w || m.height != h) throw Error(ErrorCode::InvalidSpec, "reader masks differ in-plane");
    z0 = std::min(z0, m.z_origin);
    z1 = std::max(z1, m.z_origin + m.depth);
  }
  geom::BinaryVolume out(w, h, z1 - z0, z0);
  const auto n = static_cast<double>(masks.size());
  for (int z = z0; z < z1; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int votes = 0;
        for (const auto& m : masks) votes += m.get(x, y, z) ? 1 : 0;
        if (votes / n >= 0.5) out.at(x, y, z) = 1;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Generators

namespace detail {

inline LesionTruth lesion_truth(const PhantomSpec& spec, const LesionSpec& l, int id, const std::string& series_uid) {
  auto truth_mask = lesion_mask(l, spec.rows, spec.cols);
  auto readers = simulate_reader_masks(truth_mask, spec.readers,
                                       mix_seed(spec.seed, spec.family_id + "/lesion/" + std::to_string(id)),
                                       spec.jitter);
  auto consensus = consensus_mask(readers);
  if (geom::voxel_count(consensus) == 0) consensus = truth_mask;
  LesionTruth t;
  t.id = id;
  t.label = l.label.empty() ? "Nodule " + std::to_string(id) : l.label;
  t.series_uid = series_uid;
  t.consensus = std::move(consensus);
  t.representative_slice = widest_slice(t.consensus);
  return t;
}

inline SeriesHeader ct_header(const PhantomSpec& spec, const std::string& study_uid, const std::string& date,
                              const std::string& description) {
  SeriesHeader h;
  h.study_uid = study_uid;
  h.series_uid = study_uid + ".1";
  h.modality = "CT";
  h.sop_class = "1.2.840.10008.5.1.4.1.1.2";
  h.study_description = description;
  h.series_description = "AXIAL CHEST";
  h.body_part = "CHEST";
  h.patient_id = spec.patient_id;
  h.date = date;
  h.rescale_intercept = -1024.0;
  return h;
}

inline std::vector<dicom::InstanceDataset> ct_series(const PhantomSpec& spec, const SeriesHeader& h, int slices,
                                                     const std::vector<LesionSpec>& lesions, const std::string& salt) {
  Rng noise(mix_seed(spec.seed, spec.family_id + "/noise/" + salt));
  std::vector<dicom::InstanceDataset> out;
  for (int z = 0; z < slices; ++z)
    out.push_back(make_instance(h, spec.rows, spec.cols, z, chest_slice(spec.rows, spec.cols, z, lesions, noise)));
  return out;
}

}  // namespace detail

inline StudyFamily generate_ct_study(const PhantomSpec& spec) {
  if (spec.profile != Profile::CT) throw Error(ErrorCode::InvalidSpec, "profile must be CT");
  detail::validate(spec, spec.lesions, spec.slices);

  StudyFamily family;
  family.family_id = spec.family_id;
  family.profile = Profile::CT;
  family.patient_id = spec.patient_id;
  const auto study_uid = detail::make_uid(spec.seed, spec.family_id + "/study");
  family.study_uids = {study_uid};
  auto header = detail::ct_header(spec, study_uid, spec.baseline_date, "CHEST CT");
  family.instances = detail::ct_series(spec, header, spec.slices, spec.lesions, "ct");

  for (std::size_t i = 0; i < spec.lesions.size(); ++i)
    family.truth.lesions.push_back(
        detail::lesion_truth(spec, spec.lesions[i], static_cast<int>(i) + 1, header.series_uid));

  // Secondary-capture key images: two copies of axial frames.
  auto key = header;
  key.series_uid = study_uid + ".2";
  key.modality = "OT";
  key.sop_class = "1.2.840.10008.5.1.4.1.1.7";
  key.series_description = "KEY IMAGES";
  key.series_number = 2;
  key.with_position = false;
  std::vector<int> key_slices{spec.slices / 2, spec.slices / 4};
  for (std::size_t i = 0; i < key_slices.size(); ++i)
    family.instances.push_back(detail::make_instance(key, spec.rows, spec.cols, static_cast<int>(i),
                                                     *family.instances[static_cast<std::size_t>(key_slices[i])].pixel_data));
  family.truth.modality_letter = "A";
  return family;
}

/// Quadrant of a point inside the breast centred at (bx, by). "Outer" is away
/// from the midline.
inline std::string quadrant_of(double x, double y, double bx, double by, bool left_side) {
  bool upper = y < by;
  bool outer = left_side ? x < bx : x > bx;
  return std::string(upper ? "upper" : "lower") + "_" + (outer ? "outer" : "inner");
}

inline constexpr std::array<double, 4> kEnhancementCurve{2.0, 2.4, 2.2, 2.0};

/// Five axial series: one pre-contrast and four post-contrast passes. Image
/// left half is patient left.
inline StudyFamily generate_breast_mr_study(const PhantomSpec& spec) {
  if (spec.profile != Profile::BreastMR) throw Error(ErrorCode::InvalidSpec, "profile must be BreastMR");
  detail::validate(spec, spec.lesions, spec.slices);
  if (spec.birads.category < 0 || spec.birads.category > 6)
    throw Error(ErrorCode::InvalidSpec, "BI-RADS category must be in [0,6]");

  StudyFamily family;
  family.family_id = spec.family_id;
  family.profile = Profile::BreastMR;
  family.patient_id = spec.patient_id;
  const auto study_uid = detail::make_uid(spec.seed, spec.family_id + "/study");
  family.study_uids = {study_uid};

  const double bx_left = spec.cols * 0.27, bx_right = spec.cols * 0.73, by = spec.rows * 0.4;
  const double ba = spec.cols * 0.2, bb = spec.rows * 0.25;

  for (int pass = 0; pass < 5; ++pass) {
    detail::SeriesHeader h;
    h.study_uid = study_uid;
    h.series_uid = study_uid + "." + std::to_string(pass + 1);
    h.modality = "MR";
    h.sop_class = "1.2.840.10008.5.1.4.1.1.4";
    h.study_description = "BREAST MRI DCE";
    h.series_description = pass == 0 ? "AX T1 PRE" : "AX T1 POST " + std::to_string(pass);
    h.body_part = "BREAST";
    h.patient_id = spec.patient_id;
    h.date = spec.baseline_date;
    h.series_number = pass + 1;
    h.slice_thickness = 2.0;
    h.pixel_spacing = 0.8;
    h.window_center = pass == 0 ? 300 : 450;
    h.window_width = pass == 0 ? 600 : 900;
    const double gain = (pass > 0 && spec.birads.enhancement_present) ? kEnhancementCurve[pass - 1] : 1.0;

    Rng noise(mix_seed(spec.seed, spec.family_id + "/noise/mr/" + std::to_string(pass)));
    for (int z = 0; z < spec.slices; ++z) {
      std::vector<std::uint16_t> px(static_cast<std::size_t>(spec.rows) * spec.cols);
      for (int y = 0; y < spec.rows; ++y)
        for (int x = 0; x < spec.cols; ++x) {
          double cx = x + 0.5, cy = y + 0.5;
          double v = 20.0;
          if (cy > spec.rows * 0.55) v = 150.0;  // chest wall
          if (detail::in_ellipse(cx, cy, bx_left, by, ba, bb) || detail::in_ellipse(cx, cy, bx_right, by, ba, bb))
            v = 300.0;
          for (const auto& l : spec.lesions)
            if (detail::in_lesion(l, x, y, z)) v = 320.0 * gain;
          v += static_cast<double>(noise.uniform_int(-10, 10));
          px[static_cast<std::size_t>(y) * spec.cols + x] = detail::to_stored(v, 0.0);
        }
      family.instances.push_back(detail::make_instance(h, spec.rows, spec.cols, z, std::move(px)));
    }
  }

  BiradsRecord record;
  record.lesion_count = static_cast<int>(spec.lesions.size());
  record.birads_category = spec.birads.category;
  record.enhancement_present = spec.birads.enhancement_present;
  bool any_left = false, any_right = false;
  for (const auto& l : spec.lesions) (l.cx < spec.cols / 2 ? any_left : any_right) = true;
  record.laterality = any_left && any_right ? "bilateral" : any_left ? "left" : any_right ? "right" : "none";
  if (spec.birads.include_quadrant && !spec.lesions.empty()) {
    const auto& l = spec.lesions.front();
    bool left = l.cx < spec.cols / 2;
    record.quadrant = quadrant_of(l.cx + 0.5, l.cy + 0.5, left ? bx_left : bx_right, by, left);
  }
  family.truth.birads = record;
  for (std::size_t i = 0; i < spec.lesions.size(); ++i)
    family.truth.lesions.push_back(
        detail::lesion_truth(spec, spec.lesions[i], static_cast<int>(i) + 1, study_uid + ".2"));
  family.truth.modality_letter = "B";
  return family;
}

inline LongitudinalPair generate_longitudinal_pair(const PhantomSpec& spec) {
  if (spec.profile != Profile::LongitudinalCT) throw Error(ErrorCode::InvalidSpec, "profile must be LongitudinalCT");
  if (spec.new_lesions.empty() || spec.new_lesions.size() > 6)
    throw Error(ErrorCode::InvalidSpec, "longitudinal pairs need 1-6 new lesions");
  detail::validate(spec, spec.lesions, std::min(spec.slices, spec.followup_slices));
  detail::validate(spec, spec.new_lesions, spec.followup_slices);

  const auto baseline_uid = detail::make_uid(spec.seed, spec.family_id + "/baseline");
  const auto followup_uid = detail::make_uid(spec.seed, spec.family_id + "/followup");
  const auto followup_date = detail::add_days(spec.baseline_date, spec.interval_days);

  LongitudinalPair pair;
  auto base_header = detail::ct_header(spec, baseline_uid, spec.baseline_date, "LDCT BASELINE");
  auto follow_header = detail::ct_header(spec, followup_uid, followup_date, "LDCT FOLLOW-UP");
  pair.baseline = detail::ct_series(spec, base_header, spec.slices, spec.lesions, "baseline");
  auto all = spec.lesions;
  all.insert(all.end(), spec.new_lesions.begin(), spec.new_lesions.end());
  pair.followup = detail::ct_series(spec, follow_header, spec.followup_slices, all, "followup");

  LongitudinalTruth lt;
  lt.baseline_study_uid = baseline_uid;
  lt.baseline_series_uid = base_header.series_uid;
  lt.followup_study_uid = followup_uid;
  lt.followup_series_uid = follow_header.series_uid;
  lt.interval_days = spec.interval_days;
  lt.baseline_slices = spec.slices;
  lt.followup_slices = spec.followup_slices;
  for (const auto& l : spec.new_lesions) lt.findings.push_back({l.cz, l.cx + 0.5, l.cy + 0.5});
  pair.truth.longitudinal = lt;
  pair.truth.modality_letter = "A";
  return pair;
}

inline StudyFamily to_family(const PhantomSpec& spec, LongitudinalPair pair) {
  StudyFamily family;
  family.family_id = spec.family_id;
  family.profile = Profile::LongitudinalCT;
  family.patient_id = spec.patient_id;
  family.study_uids = {pair.truth.longitudinal->followup_study_uid, pair.truth.longitudinal->baseline_study_uid};
  family.instances = std::move(pair.baseline);
  family.instances.insert(family.instances.end(), std::make_move_iterator(pair.followup.begin()),
                          std::make_move_iterator(pair.followup.end()));
  family.truth = std::move(pair.truth);
  return family;
}

inline StudyFamily generate(const PhantomSpec& spec) {
  switch (spec.profile) {
    case Profile::CT: return generate_ct_study(spec);
    case Profile::BreastMR: return generate_breast_mr_study(spec);
    case Profile::LongitudinalCT: return to_family(spec, generate_longitudinal_pair(spec));
  }
  throw Error(ErrorCode::InvalidSpec, "unknown profile");
}

// ---------------------------------------------------------------------------
// Archive specs

struct ArchiveConfig {
  std::uint64_t seed = 7;
  int ct_families = 4;
  int mr_families = 4;
  int longitudinal_families = 4;
  int rows = 128;
  int cols = 128;
  int slices = 40;
};

namespace detail {

inline bool separated(const LesionSpec& a, const std::vector<LesionSpec>& others) {
  for (const auto& b : others) {
    double d = std::hypot(a.cx - b.cx, a.cy - b.cy);
    bool z_overlap = a.first_slice <= b.last_slice + 1 && b.first_slice <= a.last_slice + 1;
    if (z_overlap && d < a.radius + b.radius + 4) return false;
  }
  return true;
}

/// Random nodule inside a lung field, clear of the existing ones.
inline LesionSpec place_nodule(Rng& rng, int rows, int cols, int slices, const std::vector<LesionSpec>& existing,
                               double r_min, double r_max) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    LesionSpec l;
    l.radius = std::round(rng.uniform(r_min, r_max) * 2.0) / 2.0;
    bool right_lung = rng.bernoulli(0.5);
    double lx = cols * (right_lung ? 0.7 : 0.3), ly = rows * 0.5;
    double a = cols * 0.15 - l.radius - 1.5, b = rows * 0.26 - l.radius - 1.5;
    l.cx = static_cast<int>(rng.uniform_int(static_cast<int>(lx - a), static_cast<int>(lx + a)));
    l.cy = static_cast<int>(rng.uniform_int(static_cast<int>(ly - b), static_cast<int>(ly + b)));
    if (!in_ellipse(l.cx + 0.5, l.cy + 0.5, lx, ly, a, b)) continue;
    int half = static_cast<int>(rng.uniform_int(2, 3));
    l.cz = static_cast<int>(rng.uniform_int(half + 2, slices - half - 3));
    l.first_slice = l.cz - half;
    l.last_slice = l.cz + half;
    if (separated(l, existing)) return l;
  }
  throw Error(ErrorCode::InvalidSpec, "could not place a nodule");
}

}  // namespace detail

/// Deterministic family specs for a full archive.
inline std::vector<PhantomSpec> archive_specs(const ArchiveConfig& cfg) {
  std::vector<PhantomSpec> specs;
  Rng rng(mix_seed(cfg.seed, "archive"));
  char id[32];
  for (int i = 0; i < cfg.ct_families; ++i) {
    PhantomSpec s;
    s.seed = mix_seed(cfg.seed, "ct/" + std::to_string(i));
    std::snprintf(id, sizeof id, "ct-%02d", i + 1);
    s.family_id = id;
    std::snprintf(id, sizeof id, "LIDC-PH-%04d", i + 1);
    s.patient_id = id;
    s.profile = Profile::CT;
    s.rows = cfg.rows;
    s.cols = cfg.cols;
    s.slices = cfg.slices;
    s.baseline_date = detail::add_days("20000101", static_cast<int>(rng.uniform_int(0, 3000)));
    int nodules = 1 + (i % 3);
    for (int n = 0; n < nodules; ++n) {
      auto l = detail::place_nodule(rng, s.rows, s.cols, s.slices, s.lesions, 5.0, 9.0);
      l.label = "Nodule " + std::to_string(n + 1);
      s.lesions.push_back(l);
    }
    specs.push_back(s);
  }
  for (int i = 0; i < cfg.mr_families; ++i) {
    PhantomSpec s;
    s.seed = mix_seed(cfg.seed, "mr/" + std::to_string(i));
    std::snprintf(id, sizeof id, "mr-%02d", i + 1);
    s.family_id = id;
    std::snprintf(id, sizeof id, "DUKE-PH-%04d", i + 1);
    s.patient_id = id;
    s.profile = Profile::BreastMR;
    s.rows = 96;
    s.cols = 96;
    s.slices = 24;
    s.baseline_date = detail::add_days("20050101", static_cast<int>(rng.uniform_int(0, 3000)));
    s.birads.category = static_cast<int>(rng.uniform_int(2, 6));
    s.birads.enhancement_present = s.birads.category >= 4 || rng.bernoulli(0.3);
    s.birads.include_quadrant = (i % 2) == 0;
    int lesions = 1 + (i % 2);
    for (int n = 0; n < lesions; ++n) {
      LesionSpec l;
      bool left = rng.bernoulli(0.5);
      double bx = s.cols * (left ? 0.27 : 0.73), by = s.rows * 0.4;
      l.radius = static_cast<double>(rng.uniform_int(4, 6));
      l.cx = static_cast<int>(rng.uniform_int(static_cast<int>(bx - 8), static_cast<int>(bx + 8)));
      l.cy = static_cast<int>(rng.uniform_int(static_cast<int>(by - 8), static_cast<int>(by + 8)));
      l.cz = static_cast<int>(rng.uniform_int(6, s.slices - 7));
      l.first_slice = l.cz - 2;
      l.last_slice = l.cz + 2;
      l.label = "Lesion " + std::to_string(n + 1);
      if (!detail::separated(l, s.lesions)) continue;
      s.lesions.push_back(l);
    }
    specs.push_back(s);
  }
  for (int i = 0; i < cfg.longitudinal_families; ++i) {
    PhantomSpec s;
    s.seed = mix_seed(cfg.seed, "long/" + std::to_string(i));
    std::snprintf(id, sizeof id, "long-%02d", i + 1);
    s.family_id = id;
    std::snprintf(id, sizeof id, "NLST-PH-%04d", i + 1);
    s.patient_id = id;
    s.profile = Profile::LongitudinalCT;
    s.rows = cfg.rows;
    s.cols = cfg.cols;
    s.slices = cfg.slices;
    s.followup_slices = cfg.slices + static_cast<int>(rng.uniform_int(-5, 17));
    s.interval_days = static_cast<int>(rng.uniform_int(300, 800));
    s.baseline_date = detail::add_days("19990101", static_cast<int>(rng.uniform_int(0, 2000)));
    const int shared_slices = std::min(s.slices, s.followup_slices);
    s.lesions.push_back(detail::place_nodule(rng, s.rows, s.cols, shared_slices, {}, 4.0, 6.0));
    int new_count = (i % 2 == 0) ? 1 : 2 + static_cast<int>(rng.uniform_int(0, 1));
    auto existing = s.lesions;
    for (int n = 0; n < new_count; ++n) {
      auto l = detail::place_nodule(rng, s.rows, s.cols, s.followup_slices, existing, 4.0, 7.0);
      l.label = "New lesion " + std::to_string(n + 1);
      existing.push_back(l);
      s.new_lesions.push_back(l);
    }
    specs.push_back(s);
  }
  return specs;
}

// ---------------------------------------------------------------------------
// Ground-truth sidecars

inline json mask_to_json(const geom::BinaryVolume& v) {
  json slices = json::array();
  for (int z : geom::occupied_slices(v)) {
    json runs = json::array();
    for (int y = 0; y < v.height; ++y) {
      int x = 0;
      while (x < v.width) {
        if (!v.at(x, y, z)) {
          ++x;
          continue;
        }
        int start = x;
        while (x < v.width && v.at(x, y, z)) ++x;
        runs.push_back({y, start, x - 1});
      }
    }
    slices.push_back({{"slice_index", z}, {"runs", runs}});
  }
  return {{"width", v.width}, {"height", v.height}, {"z_origin", v.z_origin}, {"depth", v.depth}, {"slices", slices}};
}

inline geom::BinaryVolume mask_from_json(const json& j) {
  geom::BinaryVolume v(j.at("width").get<int>(), j.at("height").get<int>(), j.at("depth").get<int>(),
                       j.at("z_origin").get<int>());
  for (const auto& s : j.at("slices")) {
    int z = s.at("slice_index").get<int>();
    for (const auto& run : s.at("runs")) {
      int y = run.at(0).get<int>();
      for (int x = run.at(1).get<int>(); x <= run.at(2).get<int>(); ++x) v.at(x, y, z) = 1;
    }
  }
  return v;
}

inline json to_json(const BiradsRecord& r) {
  json j{{"laterality", r.laterality},
         {"lesion_count", r.lesion_count},
         {"birads_category", r.birads_category},
         {"enhancement_present", r.enhancement_present}};
  if (r.quadrant) j["quadrant"] = *r.quadrant;
  return j;
}

inline BiradsRecord birads_from_json(const json& j) {
  BiradsRecord r;
  r.laterality = j.at("laterality").get<std::string>();
  r.lesion_count = j.at("lesion_count").get<int>();
  r.birads_category = j.at("birads_category").get<int>();
  r.enhancement_present = j.at("enhancement_present").get<bool>();
  if (j.contains("quadrant")) r.quadrant = j.at("quadrant").get<std::string>();
  return r;
}

inline json to_json(const StudyFamily& f) {
  json lesions = json::array();
  for (const auto& l : f.truth.lesions)
    lesions.push_back({{"id", l.id},
                       {"label", l.label},
                       {"series_uid", l.series_uid},
                       {"representative_slice", l.representative_slice},
                       {"consensus", mask_to_json(l.consensus)}});
  json j{{"family_id", f.family_id},
         {"profile", to_string(f.profile)},
         {"patient_id", f.patient_id},
         {"study_uids", f.study_uids},
         {"modality_letter", f.truth.modality_letter},
         {"lesions", lesions}};
  if (f.truth.birads) j["birads"] = to_json(*f.truth.birads);
  if (const auto& lt = f.truth.longitudinal) {
    json findings = json::array();
    for (const auto& p : lt->findings) findings.push_back({{"slice_index", p.slice_index}, {"x", p.x}, {"y", p.y}});
    j["longitudinal"] = {{"baseline_study_uid", lt->baseline_study_uid},
                         {"baseline_series_uid", lt->baseline_series_uid},
                         {"followup_study_uid", lt->followup_study_uid},
                         {"followup_series_uid", lt->followup_series_uid},
                         {"interval_days", lt->interval_days},
                         {"baseline_slices", lt->baseline_slices},
                         {"followup_slices", lt->followup_slices},
                         {"findings", findings}};
  }
  return j;
}

/// A family as recorded in the archive: everything except the pixel data.
struct FamilyRecord {
  std::string family_id;
  Profile profile = Profile::CT;
  std::string patient_id;
  std::vector<std::string> study_uids;
  GroundTruth truth;
};

inline FamilyRecord family_from_json(const json& j) {
  FamilyRecord f;
  f.family_id = j.at("family_id").get<std::string>();
  f.profile = profile_from_string(j.at("profile").get<std::string>());
  f.patient_id = j.at("patient_id").get<std::string>();
  f.study_uids = j.at("study_uids").get<std::vector<std::string>>();
  f.truth.modality_letter = j.value("modality_letter", "");
  for (const auto& l : j.at("lesions")) {
    LesionTruth t;
    t.id = l.at("id").get<int>();
    t.label = l.at("label").get<std::string>();
    t.series_uid = l.at("series_uid").get<std::string>();
    t.representative_slice = l.at("representative_slice").get<int>();
    t.consensus = mask_from_json(l.at("consensus"));
    f.truth.lesions.push_back(std::move(t));
  }
  if (j.contains("birads")) f.truth.birads = birads_from_json(j.at("birads"));
  if (j.contains("longitudinal")) {
    const auto& l = j.at("longitudinal");
    LongitudinalTruth lt;
    lt.baseline_study_uid = l.at("baseline_study_uid").get<std::string>();
    lt.baseline_series_uid = l.at("baseline_series_uid").get<std::string>();
    lt.followup_study_uid = l.at("followup_study_uid").get<std::string>();
    lt.followup_series_uid = l.at("followup_series_uid").get<std::string>();
    lt.interval_days = l.at("interval_days").get<int>();
    lt.baseline_slices = l.at("baseline_slices").get<int>();
    lt.followup_slices = l.at("followup_slices").get<int>();
    for (const auto& p : l.at("findings"))
      lt.findings.push_back({p.at("slice_index").get<int>(), p.at("x").get<double>(), p.at("y").get<double>()});
    f.truth.longitudinal = lt;
  }
  return f;
}

/// Ground truth for every family in an archive, indexed by family, study and series.
class TruthCatalog {
 public:
  TruthCatalog() = default;
  explicit TruthCatalog(std::vector<FamilyRecord> families) : families_(std::move(families)) {}

  const std::vector<FamilyRecord>& families() const { return families_; }

  const FamilyRecord* find_family(std::string_view id) const {
    for (const auto& f : families_)
      if (f.family_id == id) return &f;
    return nullptr;
  }

  const FamilyRecord* family_of_study(std::string_view study_uid) const {
    for (const auto& f : families_)
      for (const auto& s : f.study_uids)
        if (s == study_uid) return &f;
    return nullptr;
  }

  /// Lesions annotated on a series, in id order.
  std::vector<const LesionTruth*> lesions_on(std::string_view series_uid) const {
    std::vector<const LesionTruth*> out;
    for (const auto& f : families_)
      for (const auto& l : f.truth.lesions)
        if (l.series_uid == series_uid) out.push_back(&l);
    return out;
  }

  const LesionTruth* find_lesion(std::string_view family_id, int lesion_id) const {
    if (const auto* f = find_family(family_id))
      for (const auto& l : f->truth.lesions)
        if (l.id == lesion_id) return &l;
    return nullptr;
  }

 private:
  std::vector<FamilyRecord> families_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes <archive>/<study_uid>/<series_uid>/<sop_uid>.dcm for every instance
/// and <archive>/<study_uids[0]>/ground_truth.json. Returns the sidecar path
/// relative to the archive root.
inline std::string write_family(const std::filesystem::path& archive, const StudyFamily& family) {
  namespace fs = std::filesystem;
  using namespace dicom;
  for (const auto& inst : family.instances) {
    auto dir = archive / inst.at(tags::StudyInstanceUID).as_string() / inst.at(tags::SeriesInstanceUID).as_string();
    fs::create_directories(dir);
    write_file(dir / (inst.at(tags::SOPInstanceUID).as_string() + ".dcm"), inst);
  }
  auto rel = fs::path(family.study_uids.front()) / "ground_truth.json";
  fs::create_directories(archive / family.study_uids.front());
  write_text(archive / rel, to_json(family).dump(1) + "\n");
  return rel.generic_string();
}

/// Generates every family of the config into an archive directory and writes
/// manifest.json listing them.
inline json write_archive(const std::filesystem::path& archive, const ArchiveConfig& cfg) {
  std::filesystem::create_directories(archive);
  json families = json::array();
  for (const auto& spec : archive_specs(cfg)) {
    auto family = generate(spec);
    auto sidecar = write_family(archive, family);
    families.push_back({{"family_id", family.family_id},
                        {"profile", to_string(family.profile)},
                        {"patient_id", family.patient_id},
                        {"study_uids", family.study_uids},
                        {"ground_truth", sidecar}});
  }
  json manifest{{"seed", cfg.seed}, {"families", families}};
  write_text(archive / "manifest.json", manifest.dump(1) + "\n");
  return manifest;
}

inline TruthCatalog load_truth(const std::filesystem::path& archive) {
  auto manifest = json::parse(read_text(archive / "manifest.json"));
  std::vector<FamilyRecord> families;
  for (const auto& f : manifest.at("families"))
    families.push_back(family_from_json(json::parse(read_text(archive / f.at("ground_truth").get<std::string>()))));
  return TruthCatalog(std::move(families));
}

}  // namespace radgym::phantom
