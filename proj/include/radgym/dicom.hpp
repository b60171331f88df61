#pragma once

// A constrained DICOM Part 10 codec: 128-byte preamble, "DICM" magic,
// explicit VR little endian, uncompressed 16-bit pixel data. Also builds the
// study -> series -> instance index the rest of the environment queries.

#include <algorithm>
#include <array>
#include <charconv>
#include <compare>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "radgym/error.hpp"

namespace radgym::dicom {

struct Tag {
  std::uint16_t group = 0;
  std::uint16_t element = 0;

  constexpr auto operator<=>(const Tag&) const = default;

  std::string to_string() const {
    char buf[10];
    std::snprintf(buf, sizeof buf, "%04X,%04X", group, element);
    return buf;
  }
};

namespace tags {
inline constexpr Tag TransferSyntaxUID{0x0002, 0x0010};
inline constexpr Tag SOPClassUID{0x0008, 0x0016};
inline constexpr Tag SOPInstanceUID{0x0008, 0x0018};
inline constexpr Tag StudyDate{0x0008, 0x0020};
inline constexpr Tag StudyTime{0x0008, 0x0030};
inline constexpr Tag Modality{0x0008, 0x0060};
inline constexpr Tag StudyDescription{0x0008, 0x1030};
inline constexpr Tag SeriesDescription{0x0008, 0x103E};
inline constexpr Tag PatientName{0x0010, 0x0010};
inline constexpr Tag PatientID{0x0010, 0x0020};
inline constexpr Tag BodyPartExamined{0x0018, 0x0015};
inline constexpr Tag SliceThickness{0x0018, 0x0050};
inline constexpr Tag StudyInstanceUID{0x0020, 0x000D};
inline constexpr Tag SeriesInstanceUID{0x0020, 0x000E};
inline constexpr Tag SeriesNumber{0x0020, 0x0011};
inline constexpr Tag InstanceNumber{0x0020, 0x0013};
inline constexpr Tag ImagePositionPatient{0x0020, 0x0032};
inline constexpr Tag ImageOrientationPatient{0x0020, 0x0037};
inline constexpr Tag SamplesPerPixel{0x0028, 0x0002};
inline constexpr Tag PhotometricInterpretation{0x0028, 0x0004};
inline constexpr Tag Rows{0x0028, 0x0010};
inline constexpr Tag Columns{0x0028, 0x0011};
inline constexpr Tag PixelSpacing{0x0028, 0x0030};
inline constexpr Tag BitsAllocated{0x0028, 0x0100};
inline constexpr Tag BitsStored{0x0028, 0x0101};
inline constexpr Tag HighBit{0x0028, 0x0102};
inline constexpr Tag PixelRepresentation{0x0028, 0x0103};
inline constexpr Tag WindowCenter{0x0028, 0x1050};
inline constexpr Tag WindowWidth{0x0028, 0x1051};
inline constexpr Tag RescaleIntercept{0x0028, 0x1052};
inline constexpr Tag RescaleSlope{0x0028, 0x1053};
inline constexpr Tag PixelData{0x7FE0, 0x0010};
}  // namespace tags

inline constexpr std::string_view kExplicitVRLittleEndian = "1.2.840.10008.1.2.1";
inline constexpr std::string_view kImplementationClassUID = "2.25.304719245718231920357611086337745190";

struct TagInfo {
  Tag tag;
  std::string_view keyword;
  std::string_view vr;
};

inline constexpr std::array<TagInfo, 31> kDictionary{{
    {tags::SOPClassUID, "SOPClassUID", "UI"},
    {tags::SOPInstanceUID, "SOPInstanceUID", "UI"},
    {tags::StudyDate, "StudyDate", "DA"},
    {tags::StudyTime, "StudyTime", "TM"},
    {tags::Modality, "Modality", "CS"},
    {tags::StudyDescription, "StudyDescription", "LO"},
    {tags::SeriesDescription, "SeriesDescription", "LO"},
    {tags::PatientName, "PatientName", "PN"},
    {tags::PatientID, "PatientID", "LO"},
    {tags::BodyPartExamined, "BodyPartExamined", "CS"},
    {tags::SliceThickness, "SliceThickness", "DS"},
    {tags::StudyInstanceUID, "StudyInstanceUID", "UI"},
    {tags::SeriesInstanceUID, "SeriesInstanceUID", "UI"},
    {tags::SeriesNumber, "SeriesNumber", "IS"},
    {tags::InstanceNumber, "InstanceNumber", "IS"},
    {tags::ImagePositionPatient, "ImagePositionPatient", "DS"},
    {tags::ImageOrientationPatient, "ImageOrientationPatient", "DS"},
    {tags::SamplesPerPixel, "SamplesPerPixel", "US"},
    {tags::PhotometricInterpretation, "PhotometricInterpretation", "CS"},
    {tags::Rows, "Rows", "US"},
    {tags::Columns, "Columns", "US"},
    {tags::PixelSpacing, "PixelSpacing", "DS"},
    {tags::BitsAllocated, "BitsAllocated", "US"},
    {tags::BitsStored, "BitsStored", "US"},
    {tags::HighBit, "HighBit", "US"},
    {tags::PixelRepresentation, "PixelRepresentation", "US"},
    {tags::WindowCenter, "WindowCenter", "DS"},
    {tags::WindowWidth, "WindowWidth", "DS"},
    {tags::RescaleIntercept, "RescaleIntercept", "DS"},
    {tags::RescaleSlope, "RescaleSlope", "DS"},
    {tags::PixelData, "PixelData", "OW"},
}};

inline const TagInfo* lookup(Tag tag) {
  for (const auto& info : kDictionary)
    if (info.tag == tag) return &info;
  return nullptr;
}

inline const TagInfo* lookup(std::string_view keyword) {
  for (const auto& info : kDictionary)
    if (info.keyword == keyword) return &info;
  return nullptr;
}

inline bool is_supported_vr(std::string_view vr) {
  static constexpr std::array<std::string_view, 12> kSupported{
      "UI", "SH", "LO", "DA", "TM", "CS", "IS", "DS", "US", "SS", "PN", "OW"};
  return std::find(kSupported.begin(), kSupported.end(), vr) != kSupported.end();
}

// VRs whose explicit-VR header uses 2 reserved bytes and a 32-bit length.
inline bool has_long_length(std::string_view vr) {
  static constexpr std::array<std::string_view, 13> kLong{
      "OB", "OW", "OF", "OD", "OL", "OV", "SQ", "UT", "UN", "UC", "UR", "SV", "UV"};
  return std::find(kLong.begin(), kLong.end(), vr) != kLong.end();
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

inline std::vector<std::string_view> split_backslash(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find('\\', start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline double parse_double(std::string_view s) {
  s = trim(s);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(ErrorCode::ParseError, "not a decimal string: '" + std::string(s) + "'");
  return value;
}

inline std::int64_t parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(ErrorCode::ParseError, "not an integer string: '" + std::string(s) + "'");
  return value;
}

// DS values are limited to 16 characters.
inline std::string format_ds(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, res.ptr);
  for (int precision = 15; out.size() > 16 && precision > 1; --precision) {
    res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, precision);
    out.assign(buf, res.ptr);
  }
  return out;
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace detail

/// One data element: tag, VR and the raw little-endian value bytes.
struct TagValue {
  Tag tag;
  std::string vr;
  std::string bytes;

  bool operator==(const TagValue&) const = default;

  std::string as_string() const { return std::string(detail::trim(bytes)); }

  std::int64_t as_int() const {
    if (vr == "US") return get_u16(0);
    if (vr == "SS") return static_cast<std::int16_t>(get_u16(0));
    return detail::parse_int(detail::split_backslash(bytes).front());
  }

  std::uint32_t as_uint() const {
    auto v = as_int();
    if (v < 0) throw Error(ErrorCode::ParseError, tag.to_string() + " is negative");
    return static_cast<std::uint32_t>(v);
  }

  double as_decimal() const {
    if (vr == "US" || vr == "SS") return static_cast<double>(as_int());
    return detail::parse_double(detail::split_backslash(bytes).front());
  }

  std::vector<double> as_decimals() const {
    std::vector<double> out;
    for (auto part : detail::split_backslash(bytes)) out.push_back(detail::parse_double(part));
    return out;
  }

  /// Number of backslash-separated values (string VRs) or binary words.
  std::size_t multiplicity() const {
    if (vr == "US" || vr == "SS") return bytes.size() / 2;
    return detail::split_backslash(bytes).size();
  }

 private:
  std::uint16_t get_u16(std::size_t index) const {
    if (bytes.size() < 2 * (index + 1))
      throw Error(ErrorCode::ParseError, tag.to_string() + " has no binary value");
    auto b = reinterpret_cast<const std::uint8_t*>(bytes.data());
    return static_cast<std::uint16_t>(b[2 * index] | (b[2 * index + 1] << 8));
  }
};

inline TagValue make_string(Tag tag, std::string_view vr, std::string_view value) {
  std::string bytes(value);
  if (bytes.size() % 2 != 0) bytes.push_back(vr == "UI" ? '\0' : ' ');
  return {tag, std::string(vr), std::move(bytes)};
}

inline TagValue make_uid(Tag tag, std::string_view uid) { return make_string(tag, "UI", uid); }

inline TagValue make_ds(Tag tag, std::span<const double> values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined.push_back('\\');
    joined += detail::format_ds(values[i]);
  }
  return make_string(tag, "DS", joined);
}

inline TagValue make_ds(Tag tag, double value) { return make_ds(tag, std::span<const double>(&value, 1)); }

inline TagValue make_is(Tag tag, std::int64_t value) { return make_string(tag, "IS", std::to_string(value)); }

inline TagValue make_us(Tag tag, std::uint16_t value) {
  std::string bytes{static_cast<char>(value & 0xFF), static_cast<char>(value >> 8)};
  return {tag, "US", std::move(bytes)};
}

inline TagValue make_ss(Tag tag, std::int16_t value) {
  auto u = static_cast<std::uint16_t>(value);
  std::string bytes{static_cast<char>(u & 0xFF), static_cast<char>(u >> 8)};
  return {tag, "SS", std::move(bytes)};
}

inline TagValue make_opaque(Tag tag, std::string_view vr, std::string bytes) {
  return {tag, std::string(vr), std::move(bytes)};
}

struct InstanceDataset {
  std::map<Tag, TagValue> tags;
  std::optional<std::vector<std::uint16_t>> pixel_data;

  bool operator==(const InstanceDataset&) const = default;

  void set(TagValue value) {
    auto tag = value.tag;
    tags.insert_or_assign(tag, std::move(value));
  }

  bool has(Tag tag) const { return tags.contains(tag); }

  const TagValue* find(Tag tag) const {
    auto it = tags.find(tag);
    return it == tags.end() ? nullptr : &it->second;
  }

  const TagValue& at(Tag tag) const {
    if (auto* v = find(tag)) return *v;
    const auto* info = lookup(tag);
    throw Error(ErrorCode::InvariantViolation,
                "missing tag " + (info ? std::string(info->keyword) : tag.to_string()));
  }

  std::string string_or(Tag tag, std::string fallback = {}) const {
    auto* v = find(tag);
    return v ? v->as_string() : fallback;
  }

  double decimal_or(Tag tag, double fallback) const {
    auto* v = find(tag);
    return v ? v->as_decimal() : fallback;
  }
};

/// Field-by-field comparison with DS values compared at absolute tolerance 1e-9.
inline bool equivalent(const InstanceDataset& a, const InstanceDataset& b, double ds_tolerance = 1e-9) {
  if (a.pixel_data != b.pixel_data || a.tags.size() != b.tags.size()) return false;
  for (auto ia = a.tags.begin(), ib = b.tags.begin(); ia != a.tags.end(); ++ia, ++ib) {
    const auto& x = ia->second;
    const auto& y = ib->second;
    if (x.tag != y.tag || x.vr != y.vr) return false;
    if (x.vr == "DS") {
      auto dx = x.as_decimals();
      auto dy = y.as_decimals();
      if (dx.size() != dy.size()) return false;
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (std::abs(dx[i] - dy[i]) > ds_tolerance) return false;
    } else if (x.bytes != y.bytes) {
      return false;
    }
  }
  return true;
}

namespace detail {

inline std::string tag_name(Tag tag) {
  const auto* info = lookup(tag);
  return info ? std::string(info->keyword) : tag.to_string();
}

inline void write_element(std::vector<std::uint8_t>& out, Tag tag, std::string_view vr, std::string_view bytes) {
  put_u16(out, tag.group);
  put_u16(out, tag.element);
  out.push_back(static_cast<std::uint8_t>(vr[0]));
  out.push_back(static_cast<std::uint8_t>(vr[1]));
  if (has_long_length(vr)) {
    put_u16(out, 0);
    put_u32(out, static_cast<std::uint32_t>(bytes.size()));
  } else {
    put_u16(out, static_cast<std::uint16_t>(bytes.size()));
  }
  out.insert(out.end(), bytes.begin(), bytes.end());
}

inline void check_invariants(const InstanceDataset& d) {
  if (!d.has(tags::SOPInstanceUID))
    throw Error(ErrorCode::InvariantViolation, "SOPInstanceUID");
  for (const auto& [tag, value] : d.tags) {
    if (tag.group == 0x0002 || tag == tags::PixelData)
      throw Error(ErrorCode::InvariantViolation, tag_name(tag) + " must not be stored as a plain tag");
    if (value.vr.size() != 2)
      throw Error(ErrorCode::InvariantViolation, tag_name(tag) + " has malformed VR");
    if (value.bytes.size() % 2 != 0)
      throw Error(ErrorCode::InvariantViolation, tag_name(tag) + " has odd value length");
    if (!has_long_length(value.vr) && value.bytes.size() > 0xFFFF)
      throw Error(ErrorCode::InvariantViolation, tag_name(tag) + " value too long for its VR");
  }
  if (!d.pixel_data) return;
  for (Tag required : {tags::Rows, tags::Columns, tags::BitsAllocated, tags::PixelRepresentation,
                       tags::RescaleSlope, tags::RescaleIntercept}) {
    if (!d.has(required)) throw Error(ErrorCode::InvariantViolation, tag_name(required));
  }
  if (d.at(tags::BitsAllocated).as_int() != 16)
    throw Error(ErrorCode::InvariantViolation, "BitsAllocated");
  auto expected = static_cast<std::size_t>(d.at(tags::Rows).as_uint()) * d.at(tags::Columns).as_uint();
  if (d.pixel_data->size() != expected) throw Error(ErrorCode::InvariantViolation, "PixelData");
}

}  // namespace detail

/// Serializes a dataset as a Part 10 file. Output is deterministic: tags are
/// written in (group, element) order after a generated file meta group.
inline std::vector<std::uint8_t> write_instance(const InstanceDataset& d) {
  detail::check_invariants(d);

  std::vector<std::uint8_t> meta;
  std::string sop_class = d.string_or(tags::SOPClassUID, "1.2.840.10008.5.1.4.1.1.7");
  auto pad_uid = [](std::string s) {
    if (s.size() % 2) s.push_back('\0');
    return s;
  };
  detail::write_element(meta, {0x0002, 0x0001}, "OB", std::string("\x00\x01", 2));
  detail::write_element(meta, {0x0002, 0x0002}, "UI", pad_uid(sop_class));
  detail::write_element(meta, {0x0002, 0x0003}, "UI", d.at(tags::SOPInstanceUID).bytes);
  detail::write_element(meta, tags::TransferSyntaxUID, "UI", pad_uid(std::string(kExplicitVRLittleEndian)));
  detail::write_element(meta, {0x0002, 0x0012}, "UI", pad_uid(std::string(kImplementationClassUID)));

  std::vector<std::uint8_t> out(128, 0);
  out.insert(out.end(), {'D', 'I', 'C', 'M'});
  std::string group_length(4, '\0');
  auto len = static_cast<std::uint32_t>(meta.size());
  for (int i = 0; i < 4; ++i) group_length[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
  detail::write_element(out, {0x0002, 0x0000}, "UL", group_length);
  out.insert(out.end(), meta.begin(), meta.end());

  bool pixels_written = false;
  auto write_pixels = [&] {
    if (pixels_written || !d.pixel_data) return;
    std::string bytes;
    bytes.reserve(d.pixel_data->size() * 2);
    for (auto v : *d.pixel_data) {
      bytes.push_back(static_cast<char>(v & 0xFF));
      bytes.push_back(static_cast<char>(v >> 8));
    }
    detail::write_element(out, tags::PixelData, "OW", bytes);
    pixels_written = true;
  };
  for (const auto& [tag, value] : d.tags) {
    if (tags::PixelData < tag) write_pixels();
    detail::write_element(out, tag, value.vr, value.bytes);
  }
  write_pixels();
  return out;
}

/// Parses a Part 10 file. Errors name the byte offset where decoding failed.
inline InstanceDataset parse_instance(std::span<const std::uint8_t> bytes) {
  using detail::get_u16;
  using detail::get_u32;
  if (bytes.size() < 132 || std::memcmp(bytes.data() + 128, "DICM", 4) != 0)
    throw Error(ErrorCode::MissingMagic, "no DICM magic at offset 128");

  InstanceDataset d;
  std::optional<std::string> transfer_syntax;
  std::size_t transfer_syntax_offset = 132;
  std::size_t pos = 132;
  bool in_meta = true;

  while (pos < bytes.size()) {
    const std::size_t start = pos;
    if (pos + 8 > bytes.size())
      throw Error(ErrorCode::TruncatedElement, "element header truncated at offset " + std::to_string(start));
    Tag tag{get_u16(bytes, pos), get_u16(bytes, pos + 2)};

    if (in_meta && tag.group != 0x0002) {
      in_meta = false;
      if (!transfer_syntax || *transfer_syntax != kExplicitVRLittleEndian)
        throw Error(ErrorCode::UnsupportedTransferSyntax,
                    "'" + transfer_syntax.value_or("<missing>") + "' at offset " +
                        std::to_string(transfer_syntax_offset));
    }

    std::string vr{static_cast<char>(bytes[pos + 4]), static_cast<char>(bytes[pos + 5])};
    std::uint32_t length = 0;
    if (has_long_length(vr)) {
      if (pos + 12 > bytes.size())
        throw Error(ErrorCode::TruncatedElement, "element header truncated at offset " + std::to_string(start));
      length = get_u32(bytes, pos + 8);
      pos += 12;
    } else {
      length = get_u16(bytes, pos + 6);
      pos += 8;
    }
    if (length == 0xFFFFFFFFu)
      throw Error(ErrorCode::UnsupportedElement,
                  "undefined length for " + tag.to_string() + " at offset " + std::to_string(start));
    if (pos + length > bytes.size())
      throw Error(ErrorCode::TruncatedElement,
                  tag.to_string() + " value truncated at offset " + std::to_string(start));

    std::string value(reinterpret_cast<const char*>(bytes.data() + pos), length);
    pos += length;

    if (tag.group == 0x0002) {
      if (tag == tags::TransferSyntaxUID) {
        transfer_syntax = std::string(detail::trim(value));
        transfer_syntax_offset = start;
      }
      continue;
    }
    if (tag == tags::PixelData) {
      if (length % 2 != 0)
        throw Error(ErrorCode::UnsupportedElement, "odd-length pixel data at offset " + std::to_string(start));
      std::vector<std::uint16_t> pixels(length / 2);
      for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = get_u16(bytes, pos - length + 2 * i);
      d.pixel_data = std::move(pixels);
      continue;
    }
    d.tags.insert_or_assign(tag, TagValue{tag, std::move(vr), std::move(value)});
  }
  if (in_meta) {
    if (!transfer_syntax || *transfer_syntax != kExplicitVRLittleEndian)
      throw Error(ErrorCode::UnsupportedTransferSyntax,
                  "'" + transfer_syntax.value_or("<missing>") + "' at offset " + std::to_string(transfer_syntax_offset));
  }
  return d;
}

inline InstanceDataset parse_instance(std::string_view bytes) {
  return parse_instance(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline InstanceDataset read_file(const std::filesystem::path& path) { return parse_instance(read_bytes(path)); }

inline void write_file(const std::filesystem::path& path, const InstanceDataset& d) {
  auto bytes = write_instance(d);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Study index

struct SeriesGeometry {
  double slice_thickness = 0.0;
  std::array<double, 2> pixel_spacing{1.0, 1.0};
  std::array<double, 6> orientation{1, 0, 0, 0, 1, 0};
  std::uint16_t rows = 0;
  std::uint16_t columns = 0;

  bool operator==(const SeriesGeometry&) const = default;
};

struct SeriesRecord {
  std::string uid;
  std::string study_uid;
  std::string modality;
  std::string description;
  std::string body_part;
  std::int64_t series_number = 0;
  SeriesGeometry geometry;
  std::vector<InstanceDataset> instances;  // slice order

  bool operator==(const SeriesRecord&) const = default;
};

struct StudyRecord {
  std::string uid;
  std::string date;
  std::string patient_id;
  std::string patient_name;
  std::string description;
  std::set<std::string> modalities;
  std::vector<std::string> series_uids;  // by SeriesNumber, then UID

  bool operator==(const StudyRecord&) const = default;
};

/// Immutable after construction; safe for concurrent readers.
struct StudyIndex {
  std::map<std::string, StudyRecord> studies;
  std::map<std::string, SeriesRecord> series;

  bool operator==(const StudyIndex&) const = default;

  const StudyRecord* find_study(std::string_view uid) const {
    auto it = studies.find(std::string(uid));
    return it == studies.end() ? nullptr : &it->second;
  }

  const SeriesRecord* find_series(std::string_view uid) const {
    auto it = series.find(std::string(uid));
    return it == series.end() ? nullptr : &it->second;
  }

  std::size_t instance_count() const {
    std::size_t n = 0;
    for (const auto& [_, s] : series) n += s.instances.size();
    return n;
  }
};

namespace detail {

inline double slice_z(const InstanceDataset& d) {
  auto* ipp = d.find(tags::ImagePositionPatient);
  if (!ipp) return 0.0;
  auto values = ipp->as_decimals();
  return values.size() >= 3 ? values[2] : 0.0;
}

template <std::size_t N>
std::array<double, N> decimals_or(const InstanceDataset& d, Tag tag, std::array<double, N> fallback) {
  auto* v = d.find(tag);
  if (!v) return fallback;
  auto values = v->as_decimals();
  if (values.size() != N) return fallback;
  std::array<double, N> out{};
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

}  // namespace detail

inline StudyIndex build_index(std::vector<InstanceDataset> instances) {
  StudyIndex index;
  std::set<std::string> seen_sops;
  for (auto& inst : instances) {
    for (Tag required : {tags::StudyInstanceUID, tags::SeriesInstanceUID, tags::SOPInstanceUID})
      if (!inst.has(required)) throw Error(ErrorCode::InvariantViolation, detail::tag_name(required));
    auto sop = inst.at(tags::SOPInstanceUID).as_string();
    if (!seen_sops.insert(sop).second) throw Error(ErrorCode::DuplicateSOPInstanceUID, sop);

    auto study_uid = inst.at(tags::StudyInstanceUID).as_string();
    auto series_uid = inst.at(tags::SeriesInstanceUID).as_string();
    auto& study = index.studies[study_uid];
    if (study.uid.empty()) {
      study.uid = study_uid;
      study.date = inst.string_or(tags::StudyDate);
      study.patient_id = inst.string_or(tags::PatientID);
      study.patient_name = inst.string_or(tags::PatientName);
      study.description = inst.string_or(tags::StudyDescription);
    }
    auto& series = index.series[series_uid];
    if (series.uid.empty()) {
      series.uid = series_uid;
      series.study_uid = study_uid;
    } else if (series.study_uid != study_uid) {
      throw Error(ErrorCode::InvariantViolation, "series " + series_uid + " spans two studies");
    }
    series.instances.push_back(std::move(inst));
  }

  for (auto& [uid, series] : index.series) {
    auto key = [](const InstanceDataset& d) {
      auto number = d.find(tags::InstanceNumber) ? d.at(tags::InstanceNumber).as_int() : 0;
      return std::make_tuple(detail::slice_z(d), number, d.at(tags::SOPInstanceUID).as_string());
    };
    std::sort(series.instances.begin(), series.instances.end(),
              [&](const InstanceDataset& a, const InstanceDataset& b) { return key(a) < key(b); });
    const auto& first = series.instances.front();
    series.modality = first.string_or(tags::Modality);
    series.description = first.string_or(tags::SeriesDescription);
    series.body_part = first.string_or(tags::BodyPartExamined);
    series.series_number = first.find(tags::SeriesNumber) ? first.at(tags::SeriesNumber).as_int() : 0;
    series.geometry.slice_thickness = first.decimal_or(tags::SliceThickness, 0.0);
    series.geometry.pixel_spacing = detail::decimals_or<2>(first, tags::PixelSpacing, {1.0, 1.0});
    series.geometry.orientation = detail::decimals_or<6>(first, tags::ImageOrientationPatient, {1, 0, 0, 0, 1, 0});
    series.geometry.rows = first.find(tags::Rows) ? static_cast<std::uint16_t>(first.at(tags::Rows).as_uint()) : 0;
    series.geometry.columns =
        first.find(tags::Columns) ? static_cast<std::uint16_t>(first.at(tags::Columns).as_uint()) : 0;

    auto& study = index.studies.at(series.study_uid);
    if (!series.modality.empty()) study.modalities.insert(series.modality);
    study.series_uids.push_back(uid);
  }
  for (auto& [_, study] : index.studies) {
    std::sort(study.series_uids.begin(), study.series_uids.end(), [&](const auto& a, const auto& b) {
      return std::tie(index.series.at(a).series_number, a) < std::tie(index.series.at(b).series_number, b);
    });
  }
  return index;
}

}  // namespace radgym::dicom
