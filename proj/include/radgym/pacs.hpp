#pragma once

// Read-only study store: indexes an archive directory and answers the
// metadata queries and raw frame fetches the tools need.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "radgym/dicom.hpp"
#include "radgym/error.hpp"

namespace radgym::pacs {

using nlohmann::json;

/// One stored frame plus what is needed to bring it to modality units.
struct Frame {
  int rows = 0;
  int cols = 0;
  std::span<const std::uint16_t> stored;
  double slope = 1.0;
  double intercept = 0.0;
  std::array<double, 2> pixel_spacing{1.0, 1.0};
  double window_center = 0.0;
  double window_width = 0.0;
  std::string modality;

  double value(std::size_t i) const { return stored[i] * slope + intercept; }

  std::vector<double> values() const {
    std::vector<double> out(stored.size());
    for (std::size_t i = 0; i < stored.size(); ++i) out[i] = value(i);
    return out;
  }
};

/// Series-wide intensity statistics in modality units.
struct SeriesStats {
  double p1 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
};

/// Nearest-rank percentile of an unsorted sample (p in [0, 100]).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size()) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
  return values[rank];
}

enum class Level { Study, SeriesList, Series, Instance };

inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::Study: return "study";
    case Level::SeriesList: return "series-list";
    case Level::Series: return "series";
    case Level::Instance: return "instance";
  }
  return "study";
}

class Store {
 public:
  Store() = default;

  static Store from_instances(std::vector<dicom::InstanceDataset> instances, std::vector<std::string> warnings = {}) {
    if (instances.empty()) throw Error(ErrorCode::NoInstancesFound, "no parseable instances");
    Store s;
    s.loaded_ = instances.size();
    s.warnings_ = std::move(warnings);
    s.index_ = dicom::build_index(std::move(instances));
    for (const auto& [uid, series] : s.index_.series) {
      std::vector<double> all;
      for (std::size_t i = 0; i < series.instances.size(); ++i) {
        const auto& inst = series.instances[i];
        s.sop_location_[inst.at(dicom::tags::SOPInstanceUID).as_string()] = {uid, i};
        if (!inst.pixel_data) continue;
        double slope = inst.decimal_or(dicom::tags::RescaleSlope, 1.0);
        double intercept = inst.decimal_or(dicom::tags::RescaleIntercept, 0.0);
        for (auto v : *inst.pixel_data) all.push_back(v * slope + intercept);
      }
      SeriesStats st;
      if (!all.empty()) {
        st.max = *std::max_element(all.begin(), all.end());
        st.p99 = percentile(all, 99.0);
        st.p1 = percentile(std::move(all), 1.0);
      }
      s.stats_[uid] = st;
    }
    return s;
  }

  const dicom::StudyIndex& index() const { return index_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t loaded() const { return loaded_; }

  const dicom::StudyRecord& study(std::string_view uid) const {
    if (const auto* s = index_.find_study(uid)) return *s;
    throw Error(ErrorCode::UnknownUID, "study: " + std::string(uid));
  }

  const dicom::SeriesRecord& series(std::string_view uid) const {
    if (const auto* s = index_.find_series(uid)) return *s;
    throw Error(ErrorCode::UnknownUID, "series: " + std::string(uid));
  }

  bool has_series(std::string_view uid) const { return index_.find_series(uid) != nullptr; }
  bool has_study(std::string_view uid) const { return index_.find_study(uid) != nullptr; }

  const SeriesStats& stats(std::string_view series_uid) const {
    series(series_uid);
    return stats_.at(std::string(series_uid));
  }

  /// Location of a SOP instance as (series uid, slice index).
  std::pair<std::string, std::size_t> locate(std::string_view sop_uid) const {
    auto it = sop_location_.find(std::string(sop_uid));
    if (it == sop_location_.end()) throw Error(ErrorCode::UnknownUID, "instance: " + std::string(sop_uid));
    return it->second;
  }

  Frame fetch_frame(std::string_view series_uid, long long slice_index) const {
    const auto& s = series(series_uid);
    if (slice_index < 0 || slice_index >= static_cast<long long>(s.instances.size()))
      throw Error(ErrorCode::SliceOutOfRange, "slice " + std::to_string(slice_index) + " not in [0, " +
                                                  std::to_string(s.instances.size()) + ")");
    const auto& inst = s.instances[static_cast<std::size_t>(slice_index)];
    if (!inst.pixel_data) throw Error(ErrorCode::InvariantViolation, "instance has no pixel data");
    Frame f;
    f.rows = static_cast<int>(inst.at(dicom::tags::Rows).as_uint());
    f.cols = static_cast<int>(inst.at(dicom::tags::Columns).as_uint());
    f.stored = *inst.pixel_data;
    f.slope = inst.decimal_or(dicom::tags::RescaleSlope, 1.0);
    f.intercept = inst.decimal_or(dicom::tags::RescaleIntercept, 0.0);
    f.pixel_spacing = s.geometry.pixel_spacing;
    f.window_center = inst.decimal_or(dicom::tags::WindowCenter, 0.0);
    f.window_width = inst.decimal_or(dicom::tags::WindowWidth, 0.0);
    f.modality = s.modality;
    return f;
  }

  // -- metadata queries; keys are DICOM keywords --------------------------

  json series_summary(const dicom::SeriesRecord& s) const {
    return {{"SeriesInstanceUID", s.uid},
            {"SeriesDescription", s.description},
            {"Modality", s.modality},
            {"SeriesNumber", s.series_number},
            {"NumberOfInstances", s.instances.size()}};
  }

  json study_metadata(std::string_view study_uid) const {
    const auto& st = study(study_uid);
    json series = json::array();
    for (const auto& uid : st.series_uids) series.push_back(series_summary(index_.series.at(uid)));
    return {{"StudyInstanceUID", st.uid},
            {"StudyDate", st.date},
            {"PatientID", st.patient_id},
            {"PatientName", st.patient_name},
            {"Modality", std::vector<std::string>(st.modalities.begin(), st.modalities.end())},
            {"StudyDescription", st.description},
            {"NumberOfSeries", st.series_uids.size()},
            {"Series", series}};
  }

  json study_series(std::string_view study_uid) const {
    const auto& st = study(study_uid);
    json series = json::array();
    for (const auto& uid : st.series_uids) {
      const auto& s = index_.series.at(uid);
      auto entry = series_summary(s);
      json samples = json::array();
      for (std::size_t i = 0; i < std::min<std::size_t>(3, s.instances.size()); ++i)
        samples.push_back(s.instances[i].at(dicom::tags::SOPInstanceUID).as_string());
      entry["SampleInstances"] = samples;
      series.push_back(entry);
    }
    return {{"StudyInstanceUID", st.uid}, {"Series", series}};
  }

  json series_metadata(std::string_view series_uid) const {
    const auto& s = series(series_uid);
    const auto& g = s.geometry;
    return {{"SeriesInstanceUID", s.uid},
            {"StudyInstanceUID", s.study_uid},
            {"Modality", s.modality},
            {"SeriesDescription", s.description},
            {"SeriesNumber", s.series_number},
            {"BodyPartExamined", s.body_part},
            {"NumberOfInstances", s.instances.size()},
            {"SliceThickness", g.slice_thickness},
            {"PixelSpacing", g.pixel_spacing},
            {"ImageOrientationPatient", g.orientation},
            {"Rows", g.rows},
            {"Columns", g.columns}};
  }

  json instance_metadata(std::string_view study_uid, std::string_view series_uid, std::string_view sop_uid) const {
    study(study_uid);
    const auto& s = series(series_uid);
    if (s.study_uid != study_uid)
      throw Error(ErrorCode::UnknownUID, "series: " + std::string(series_uid) + " is not in study " +
                                             std::string(study_uid));
    auto [owner, slice] = locate(sop_uid);
    if (owner != series_uid)
      throw Error(ErrorCode::UnknownUID, "instance: " + std::string(sop_uid) + " is not in series " +
                                             std::string(series_uid));
    auto out = tags_to_json(s.instances[slice]);
    out["SliceIndex"] = slice;
    return out;
  }

  json query(Level level, const std::vector<std::string>& uids) const {
    auto need = [&](std::size_t n) {
      if (uids.size() < n)
        throw Error(ErrorCode::SchemaValidationError, std::string(to_string(level)) + " query needs " +
                                                          std::to_string(n) + " uid(s)");
    };
    switch (level) {
      case Level::Study: need(1); return study_metadata(uids[0]);
      case Level::SeriesList: need(1); return study_series(uids[0]);
      case Level::Series: need(1); return series_metadata(uids[0]);
      case Level::Instance: need(3); return instance_metadata(uids[0], uids[1], uids[2]);
    }
    return {};
  }

  static json tags_to_json(const dicom::InstanceDataset& d) {
    json out = json::object();
    for (const auto& [tag, value] : d.tags) {
      const auto* info = dicom::lookup(tag);
      std::string key = info ? std::string(info->keyword) : tag.to_string();
      const auto& vr = value.vr;
      if (vr == "US" || vr == "SS" || vr == "UL") {
        out[key] = value.as_int();
      } else if (vr == "IS" || vr == "DS") {
        if (value.multiplicity() > 1)
          out[key] = value.as_decimals();
        else if (vr == "IS")
          out[key] = value.as_int();
        else
          out[key] = value.as_decimal();
      } else if (vr == "OB" || vr == "OW" || vr == "UN") {
        continue;
      } else {
        out[key] = value.as_string();
      }
    }
    return out;
  }

 private:
  dicom::StudyIndex index_;
  std::vector<std::string> warnings_;
  std::size_t loaded_ = 0;
  std::map<std::string, SeriesStats> stats_;
  std::map<std::string, std::pair<std::string, std::size_t>> sop_location_;
};

/// Loads every *.dcm below `root`. Unparseable files and duplicate SOP
/// instances become warnings; an archive with nothing usable is an error.
inline Store load_archive(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(ErrorCode::NoInstancesFound, root.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".dcm") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<dicom::InstanceDataset> instances;
  std::vector<std::string> warnings;
  std::set<std::string> seen;
  for (const auto& f : files) {
    try {
      auto d = dicom::read_file(f);
      auto sop = d.string_or(dicom::tags::SOPInstanceUID);
      if (!seen.insert(sop).second) {
        warnings.push_back(f.string() + ": duplicate SOPInstanceUID " + sop);
        continue;
      }
      instances.push_back(std::move(d));
    } catch (const Error& e) {
      warnings.push_back(f.string() + ": " + e.what());
    }
  }
  if (instances.empty()) throw Error(ErrorCode::NoInstancesFound, "no parseable instances under " + root.string());
  return Store::from_instances(std::move(instances), std::move(warnings));
}

}  // namespace radgym::pacs
