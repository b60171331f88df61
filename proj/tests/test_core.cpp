// dicom, phantom, pacs, geometry, imaging, png and viewer.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include <gtest/gtest.h>
#include <png.h>

#include "radgym/dicom.hpp"
#include "radgym/geometry.hpp"
#include "radgym/imaging.hpp"
#include "radgym/pacs.hpp"
#include "radgym/phantom.hpp"
#include "radgym/png.hpp"
#include "radgym/viewer.hpp"
#include "support.hpp"

using namespace radgym;
using testing_support::corpus;
namespace T = dicom::tags;

namespace {

// libpng decode into 16-bit samples so gray8, gray16 and rgb8 share a path.
struct Decoded {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

Decoded decode_png(const std::string& bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  struct Reader {
    const std::string* data;
    std::size_t pos;
  } reader{&bytes, 0};
  png_set_read_fn(png, &reader, [](png_structp p, png_bytep out, png_size_t n) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(p));
    if (r->pos + n > r->data->size()) png_error(p, "short read");
    std::memcpy(out, r->data->data() + r->pos, n);
    r->pos += n;
  });
  Decoded d;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng rejected the stream");
  }
  png_read_info(png, info);
  d.width = static_cast<int>(png_get_image_width(png, info));
  d.height = static_cast<int>(png_get_image_height(png, info));
  d.channels = png_get_channels(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  auto rowbytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> buf(rowbytes * static_cast<std::size_t>(d.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(d.height));
  for (int y = 0; y < d.height; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  for (std::size_t i = 0; i < buf.size(); i += d.bit_depth == 16 ? 2 : 1)
    d.samples.push_back(d.bit_depth == 16 ? static_cast<std::uint16_t>(buf[i] << 8 | buf[i + 1]) : buf[i]);
  return d;
}

dicom::InstanceDataset small_dataset(int rows = 4, int cols = 4) {
  dicom::InstanceDataset d;
  d.set(dicom::make_uid(T::SOPClassUID, "1.2.840.10008.5.1.4.1.1.2"));
  d.set(dicom::make_uid(T::SOPInstanceUID, "2.25.1001"));
  d.set(dicom::make_uid(T::StudyInstanceUID, "2.25.1"));
  d.set(dicom::make_uid(T::SeriesInstanceUID, "2.25.11"));
  d.set(dicom::make_string(T::Modality, "CS", "CT"));
  d.set(dicom::make_string(T::PatientName, "PN", "Doe^Jane"));
  d.set(dicom::make_is(T::InstanceNumber, 3));
  double pos[3] = {-100.25, 12.5, -7.125};
  d.set(dicom::make_ds(T::ImagePositionPatient, std::span<const double>(pos, 3)));
  d.set(dicom::make_ds(T::RescaleIntercept, -1024.0));
  d.set(dicom::make_ds(T::RescaleSlope, 1.0));
  d.set(dicom::make_us(T::Rows, static_cast<std::uint16_t>(rows)));
  d.set(dicom::make_us(T::Columns, static_cast<std::uint16_t>(cols)));
  d.set(dicom::make_us(T::BitsAllocated, 16));
  d.set(dicom::make_us(T::BitsStored, 16));
  d.set(dicom::make_us(T::HighBit, 15));
  d.set(dicom::make_us(T::PixelRepresentation, 0));
  d.set(dicom::make_us(T::SamplesPerPixel, 1));
  d.set(dicom::make_string(T::PhotometricInterpretation, "CS", "MONOCHROME2"));
  std::vector<std::uint16_t> px(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint16_t>(i * 37);
  d.pixel_data = px;
  return d;
}

phantom::PhantomSpec ct_spec(std::vector<phantom::LesionSpec> lesions) {
  phantom::PhantomSpec s;
  s.seed = 11;
  s.family_id = "ct-test";
  s.profile = phantom::Profile::CT;
  s.rows = s.cols = 64;
  s.slices = 40;
  s.lesions = std::move(lesions);
  return s;
}

std::vector<dicom::InstanceDataset> of_modality(const std::vector<dicom::InstanceDataset>& all, const std::string& m) {
  std::vector<dicom::InstanceDataset> out;
  for (const auto& d : all)
    if (d.string_or(T::Modality) == m) out.push_back(d);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// dicom

TEST(Dicom, RoundTripIsFieldwiseIdentity) {
  auto d = small_dataset();
  auto bytes = dicom::write_instance(d);
  auto back = dicom::parse_instance(std::span<const std::uint8_t>(bytes));
  EXPECT_TRUE(dicom::equivalent(d, back));
  EXPECT_EQ(back.at(T::PatientName).as_string(), "Doe^Jane");
  EXPECT_EQ(back.at(T::Rows).as_int(), 4);
  auto pos = back.at(T::ImagePositionPatient).as_decimals();
  ASSERT_EQ(pos.size(), 3u);
  EXPECT_DOUBLE_EQ(pos[2], -7.125);
}

TEST(Dicom, ShortInputHasNoMagic) {
  std::string junk(100, '\0');
  try {
    dicom::parse_instance(std::string_view(junk));
    FAIL() << "expected MissingMagic";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingMagic);
  }
}

TEST(Dicom, WriterIsDeterministic) {
  auto d = small_dataset();
  EXPECT_EQ(dicom::write_instance(d), dicom::write_instance(d));
}

TEST(Dicom, PixelsWithoutRowsViolateInvariant) {
  auto d = small_dataset();
  d.tags.erase(T::Rows);
  try {
    dicom::write_instance(d);
    FAIL() << "expected InvariantViolation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvariantViolation);
    EXPECT_NE(std::string(e.what()).find("Rows"), std::string::npos);
  }
}

TEST(Dicom, PixelDataLengthFor64x64) {
  auto bytes = dicom::write_instance(small_dataset(64, 64));
  // Scan for (7FE0,0010) OW: tag, VR, 2 reserved bytes, 4-byte length.
  const std::uint8_t key[] = {0xE0, 0x7F, 0x10, 0x00, 'O', 'W', 0, 0};
  auto it = std::search(bytes.begin(), bytes.end(), std::begin(key), std::end(key));
  ASSERT_NE(it, bytes.end());
  auto at = static_cast<std::size_t>(it - bytes.begin()) + 8;
  std::uint32_t len = bytes[at] | bytes[at + 1] << 8 | bytes[at + 2] << 16 | static_cast<std::uint32_t>(bytes[at + 3]) << 24;
  EXPECT_EQ(len, 64u * 64u * 2u);
  EXPECT_EQ(bytes.size() - (at + 4), 8192u);
}

TEST(Dicom, PreambleAndMagic) {
  auto bytes = dicom::write_instance(small_dataset());
  ASSERT_GT(bytes.size(), 132u);
  EXPECT_TRUE(std::all_of(bytes.begin(), bytes.begin() + 128, [](auto b) { return b == 0; }));
  EXPECT_EQ(std::string(bytes.begin() + 128, bytes.begin() + 132), "DICM");
}

TEST(Dicom, EmptyListGivesEmptyIndex) {
  auto idx = dicom::build_index({});
  EXPECT_TRUE(idx.studies.empty());
  EXPECT_TRUE(idx.series.empty());
}

TEST(Dicom, IndexOrdersBySliceAndIgnoresInputOrder) {
  auto fam = phantom::generate_ct_study(ct_spec({}));
  auto ct = of_modality(fam.instances, "CT");
  ASSERT_EQ(ct.size(), 40u);
  auto sorted = dicom::build_index(ct);
  ASSERT_EQ(sorted.series.size(), 1u);
  const auto& series = sorted.series.begin()->second;
  ASSERT_EQ(series.instances.size(), 40u);
  double z0 = dicom::detail::slice_z(series.instances.front());
  for (const auto& inst : series.instances) EXPECT_LE(z0, dicom::detail::slice_z(inst));
  for (std::size_t i = 1; i < series.instances.size(); ++i)
    EXPECT_LT(dicom::detail::slice_z(series.instances[i - 1]), dicom::detail::slice_z(series.instances[i]));

  std::mt19937 gen(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = ct;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    EXPECT_EQ(dicom::build_index(shuffled), sorted);
  }
}

TEST(Dicom, FileRoundTripOnPhantomCorpus) {
  for (const auto& entry : std::filesystem::recursive_directory_iterator(corpus().archive)) {
    if (entry.path().extension() != ".dcm") continue;
    auto d = dicom::read_file(entry.path());
    auto bytes = dicom::write_instance(d);
    auto again = dicom::parse_instance(std::span<const std::uint8_t>(bytes));
    ASSERT_TRUE(dicom::equivalent(d, again)) << entry.path();
    std::ifstream in(entry.path(), std::ios::binary);
    std::vector<std::uint8_t> disk((std::istreambuf_iterator<char>(in)), {});
    EXPECT_EQ(disk, bytes) << entry.path();
  }
}

// ---------------------------------------------------------------------------
// phantom

TEST(Phantom, TwoNodulesGiveTwoLesionRecords) {
  auto fam = phantom::generate_ct_study(ct_spec({{20, 20, 10, 4, 7, 13, ""}, {44, 40, 25, 5, 22, 28, ""}}));
  ASSERT_EQ(fam.truth.lesions.size(), 2u);
  EXPECT_EQ(fam.truth.lesions[0].id, 1);
  EXPECT_EQ(fam.truth.lesions[1].id, 2);
}

TEST(Phantom, SameSeedSameBytes) {
  auto spec = ct_spec({{20, 20, 10, 4, 7, 13, ""}});
  auto a = phantom::generate(spec), b = phantom::generate(spec);
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i)
    EXPECT_EQ(dicom::write_instance(a.instances[i]), dicom::write_instance(b.instances[i]));
}

TEST(Phantom, NoduleAreaNearDisc) {
  phantom::LesionSpec l{32, 32, 20, 5.0, 16, 24, ""};
  auto mask = phantom::detail::lesion_mask(l, 64, 64);
  std::size_t count = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) count += mask.at(x, y, 20) ? 1 : 0;
  const double expected = std::numbers::pi * 25.0;
  EXPECT_NEAR(static_cast<double>(count), expected, 0.10 * expected);
}

TEST(Phantom, EnhancementRaisesPostContrastMean) {
  for (bool enhance : {true, false}) {
    phantom::PhantomSpec s;
    s.seed = 3;
    s.family_id = "mr-test";
    s.profile = phantom::Profile::BreastMR;
    s.rows = s.cols = 64;
    s.slices = 12;
    s.lesions = {{18, 24, 6, 4, 4, 8, ""}};
    s.birads.enhancement_present = enhance;
    auto fam = phantom::generate(s);
    auto idx = dicom::build_index(fam.instances);
    auto mask = phantom::detail::lesion_mask(s.lesions[0], 64, 64);
    auto mean_in = [&](const dicom::SeriesRecord& series) {
      double sum = 0;
      int n = 0;
      for (int z = 4; z <= 8; ++z) {
        const auto& px = *series.instances[static_cast<std::size_t>(z)].pixel_data;
        for (int y = 0; y < 64; ++y)
          for (int x = 0; x < 64; ++x)
            if (mask.at(x, y, z)) {
              sum += px[static_cast<std::size_t>(y) * 64 + x];
              ++n;
            }
      }
      return sum / n;
    };
    std::vector<const dicom::SeriesRecord*> passes;
    for (const auto& [uid, series] : idx.series) passes.push_back(&series);
    std::sort(passes.begin(), passes.end(), [](auto* a, auto* b) { return a->series_number < b->series_number; });
    ASSERT_EQ(passes.size(), 5u);
    double pre = mean_in(*passes[0]), post = mean_in(*passes[1]);
    if (enhance)
      EXPECT_GE(post, 1.5 * pre);
    else
      EXPECT_NEAR(post, pre, 5.0);  // noise is uniform in [-10, 10]
  }
}

TEST(Phantom, LeftLateralityMeansLeftHalf) {
  int seen = 0;
  for (const auto& spec : phantom::archive_specs({})) {
    if (spec.profile != phantom::Profile::BreastMR) continue;
    auto fam = phantom::generate(spec);
    const auto& rec = *fam.truth.birads;
    for (const auto& l : spec.lesions) {
      if (rec.laterality == "left") EXPECT_LT(l.cx, spec.cols / 2);
      if (rec.laterality == "right") EXPECT_GE(l.cx, spec.cols / 2);
    }
    ++seen;
  }
  EXPECT_GT(seen, 0);
}

TEST(Phantom, FollowUpDateByCalendar) {
  using namespace std::chrono;
  // Oracle: count days forward from 2000-01-01 with year_month_day.
  sys_days start = year{2000} / January / 1;
  year_month_day end{start + days{365}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02u%02u", int(end.year()), unsigned(end.month()), unsigned(end.day()));
  EXPECT_EQ(phantom::detail::add_days("20000101", 365), std::string(buf));
  EXPECT_EQ(phantom::detail::add_days("20000101", 365), "20001231");  // 2000 is a leap year
  EXPECT_EQ(phantom::detail::add_days("20010101", 365), "20020101");
}

TEST(Phantom, LongitudinalPairTruth) {
  phantom::PhantomSpec s;
  s.seed = 9;
  s.family_id = "long-test";
  s.profile = phantom::Profile::LongitudinalCT;
  s.rows = s.cols = 64;
  s.slices = 40;
  s.followup_slices = 57;
  s.lesions = {{20, 20, 10, 4, 8, 12, ""}};
  s.new_lesions = {{44, 40, 30, 4, 28, 32, ""}};
  auto pair = phantom::generate_longitudinal_pair(s);
  ASSERT_TRUE(pair.truth.longitudinal);
  const auto& lt = *pair.truth.longitudinal;
  EXPECT_EQ(lt.findings.size(), 1u);
  EXPECT_EQ(lt.followup_slices - lt.baseline_slices, 17);
  EXPECT_EQ(of_modality(pair.followup, "CT").size(), 57u);
  EXPECT_EQ(pair.baseline.front().string_or(T::StudyDate), "20000101");
  EXPECT_EQ(pair.followup.front().string_or(T::StudyDate), phantom::detail::add_days("20000101", 365));
}

TEST(Phantom, SingleReaderWithoutJitterIsTruth) {
  phantom::LesionSpec l{30, 30, 10, 6, 6, 14, ""};
  auto truth = phantom::detail::lesion_mask(l, 64, 64);
  auto readers = phantom::simulate_reader_masks(truth, 1, 42, phantom::JitterConfig{0, 0.0});
  ASSERT_EQ(readers.size(), 1u);
  EXPECT_EQ(readers[0], truth);
}

TEST(Phantom, ReadersOverlapTruth) {
  phantom::LesionSpec l{30, 30, 10, 6, 6, 14, ""};
  auto truth = phantom::detail::lesion_mask(l, 64, 64);
  auto readers = phantom::simulate_reader_masks(truth, 3, 42);
  ASSERT_EQ(readers.size(), 3u);
  for (const auto& r : readers) {
    std::size_t inter = 0, uni = 0;
    for (int z = 0; z < 20; ++z)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          bool a = truth.get(x, y, z), b = r.get(x, y, z);
          inter += a && b;
          uni += a || b;
        }
    EXPECT_GT(static_cast<double>(inter) / static_cast<double>(uni), 0.5);
  }
  EXPECT_EQ(readers, phantom::simulate_reader_masks(truth, 3, 42));
}

TEST(Phantom, ConsensusVoteThresholds) {
  auto voxel_mask = [](bool on) {
    geom::BinaryVolume v(2, 1, 1, 0);
    v.at(0, 0, 0) = on ? 1 : 0;
    return v;
  };
  auto consensus_with = [&](int readers, int marking) {
    std::vector<geom::BinaryVolume> m;
    for (int r = 0; r < readers; ++r) m.push_back(voxel_mask(r < marking));
    return phantom::consensus_mask(m).get(0, 0, 0) != 0;
  };
  EXPECT_FALSE(consensus_with(3, 1));
  EXPECT_TRUE(consensus_with(3, 2));
  EXPECT_TRUE(consensus_with(4, 2));  // 0.5 counts
  EXPECT_FALSE(consensus_with(4, 1));
}

TEST(Phantom, ConsensusPadsDifferentZRanges) {
  geom::BinaryVolume a(1, 1, 2, 3), b(1, 1, 2, 4);
  a.at(0, 0, 3) = a.at(0, 0, 4) = 1;
  b.at(0, 0, 4) = b.at(0, 0, 5) = 1;
  auto c = phantom::consensus_mask({a, b});
  EXPECT_EQ(c.z_origin, 3);
  EXPECT_EQ(c.depth, 3);
  EXPECT_TRUE(c.get(0, 0, 3));  // 1 of 2 is 0.5
  EXPECT_TRUE(c.get(0, 0, 4));
}

TEST(Phantom, ArchiveTruthRoundTrip) {
  const auto& c = corpus();
  EXPECT_EQ(c.truth->families().size(), 6u);
  for (const auto& f : c.truth->families())
    for (const auto& l : f.truth.lesions) {
      EXPECT_FALSE(l.slices().empty());
      EXPECT_FALSE(l.mask_on(l.representative_slice).empty());
      EXPECT_TRUE(c.store->has_series(l.series_uid));
    }
}

// ---------------------------------------------------------------------------
// pacs

TEST(Pacs, FortyInstanceArchive) {
  auto dir = testing_support::scratch_dir("pacs40");
  auto fam = phantom::generate_ct_study(ct_spec({}));
  auto ct = of_modality(fam.instances, "CT");
  for (std::size_t i = 0; i < ct.size(); ++i) dicom::write_file(dir / ("i" + std::to_string(i) + ".dcm"), ct[i]);
  auto store = pacs::load_archive(dir);
  EXPECT_EQ(store.index().studies.size(), 1u);
  EXPECT_EQ(store.index().series.size(), 1u);
  EXPECT_EQ(store.index().instance_count(), 40u);
  EXPECT_TRUE(store.warnings().empty());

  // one corrupt file among 40
  std::ofstream(dir / "i7.dcm", std::ios::binary | std::ios::trunc) << "not a dicom file";
  auto partial = pacs::load_archive(dir);
  EXPECT_EQ(partial.index().instance_count(), 39u);
  EXPECT_EQ(partial.warnings().size(), 1u);
}

TEST(Pacs, EmptyDirectory) {
  auto dir = testing_support::scratch_dir("empty");
  try {
    pacs::load_archive(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoInstancesFound);
  }
}

TEST(Pacs, MetadataLevels) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Annotation);
  auto study = c.store->study_metadata(t.study_uid);
  auto mods = study.at("Modality").get<std::vector<std::string>>();
  EXPECT_NE(std::find(mods.begin(), mods.end(), "CT"), mods.end());
  auto series = c.store->series_metadata(t.initial_series_uid);
  EXPECT_EQ(series.at("Rows"), 128);
  EXPECT_EQ(series.at("Columns"), 128);
  try {
    c.store->series_metadata("1.2.3.nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownUID);
  }
  auto list = c.store->study_series(t.study_uid);
  const auto& first = list.at("Series").at(0);
  auto sop = first.at("SampleInstances").at(0).get<std::string>();
  auto inst = c.store->instance_metadata(t.study_uid, first.at("SeriesInstanceUID").get<std::string>(), sop);
  EXPECT_EQ(inst.at("SliceIndex"), 0);
}

TEST(Pacs, FrameFetch) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Annotation);
  try {
    c.store->fetch_frame(t.initial_series_uid, -1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SliceOutOfRange);
  }
  auto f = c.store->fetch_frame(t.initial_series_uid, 0);
  // Histogram oracle: the most common HU value (binned to 50) is air.
  std::map<long, int> hist;
  for (double v : f.values()) ++hist[std::lround(v / 50.0)];
  auto mode = std::max_element(hist.begin(), hist.end(), [](auto& a, auto& b) { return a.second < b.second; });
  EXPECT_NEAR(mode->first * 50.0, -1000.0, 50.0);
  auto again = c.store->fetch_frame(t.initial_series_uid, 0);
  EXPECT_TRUE(std::equal(f.stored.begin(), f.stored.end(), again.stored.begin(), again.stored.end()));
}

TEST(Pacs, NearestRankPercentile) {
  std::vector<double> v{5, 1, 4, 2, 3};
  EXPECT_EQ(pacs::percentile(v, 0), 1);
  EXPECT_EQ(pacs::percentile(v, 40), 2);
  EXPECT_EQ(pacs::percentile(v, 41), 3);
  EXPECT_EQ(pacs::percentile(v, 100), 5);
}

// ---------------------------------------------------------------------------
// geometry

TEST(Geometry, RasterizeMatchesCentreRule) {
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> coord(-5, 45), rad(0.5, 15);
  for (int trial = 0; trial < 50; ++trial) {
    geom::Circle c{{coord(gen), coord(gen)}, rad(gen)};
    geom::Rectangle r{{coord(gen), coord(gen)}, {coord(gen), coord(gen)}};
    if (r.top_left.x > r.bottom_right.x) std::swap(r.top_left.x, r.bottom_right.x);
    if (r.top_left.y > r.bottom_right.y) std::swap(r.top_left.y, r.bottom_right.y);
    auto mc = geom::rasterize(c, 40, 40);
    auto mr = geom::rasterize(r, 40, 40);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) {
        ASSERT_EQ(mc.at(x, y) != 0, testing_support::centre_in_circle(x, y, c.center.x, c.center.y, c.radius));
        ASSERT_EQ(mr.at(x, y) != 0,
                  testing_support::centre_in_rect(x, y, r.top_left.x, r.top_left.y, r.bottom_right.x, r.bottom_right.y));
      }
  }
}

TEST(Geometry, PolygonEvenOdd) {
  // Pentagram: the inner pentagon is covered twice and must be empty.
  geom::Polygon star;
  for (int k = 0; k < 5; ++k) {
    double a = -std::numbers::pi / 2 + k * 4 * std::numbers::pi / 5;
    star.points.push_back({32 + 25 * std::cos(a), 32 + 25 * std::sin(a)});
  }
  auto m = geom::rasterize(star, 64, 64);
  EXPECT_FALSE(m.at(32, 32));
  EXPECT_TRUE(m.at(32, 10));  // upper spike
  std::vector<std::pair<double, double>> pts;
  for (auto p : star.points) pts.emplace_back(p.x, p.y);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) ASSERT_EQ(m.at(x, y) != 0, testing_support::centre_in_polygon(x, y, pts));
}

TEST(Geometry, IouAndCentroid) {
  geom::Mask2D a(10, 10), b(10, 10);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a.set(x, y);
      b.set(x + 2, y);
    }
  EXPECT_DOUBLE_EQ(geom::iou(a, b), 8.0 / 24.0);
  auto c = geom::centroid(a);
  EXPECT_DOUBLE_EQ(c.x, 2.0);
  EXPECT_DOUBLE_EQ(c.y, 2.0);
}

TEST(Geometry, MinAreaBoxOfRotatedSquare) {
  // A diamond; its min-area box is the rotated square, not the AABB.
  geom::Polygon diamond{{{20, 5}, {35, 20}, {20, 35}, {5, 20}}};
  auto m = geom::rasterize(diamond, 40, 40);
  auto boxes = geom::min_area_boxes(geom::convex_hull(geom::pixel_corners(m)));
  ASSERT_FALSE(boxes.empty());
  double aabb_area = 0;
  {
    int x0 = 40, y0 = 40, x1 = -1, y1 = -1;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x)
        if (m.at(x, y)) x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
    aabb_area = (x1 - x0 + 1.0) * (y1 - y0 + 1.0);
  }
  EXPECT_LT(boxes.front().area(), 0.7 * aabb_area);
  EXPECT_GE(boxes.front().area(), static_cast<double>(m.count()));
}

TEST(Geometry, HullContainsAllCorners) {
  geom::Mask2D m(16, 16);
  m.set(3, 4);
  m.set(10, 2);
  m.set(7, 12);
  m.set(6, 6);
  auto hull = geom::convex_hull(geom::pixel_corners(m));
  ASSERT_GE(hull.size(), 3u);
  int pos = 0, neg = 0;
  for (auto p : geom::pixel_corners(m))
    for (std::size_t i = 0; i < hull.size(); ++i) {
      auto v = geom::cross(hull[i], hull[(i + 1) % hull.size()], p);
      pos += v > 0;
      neg += v < 0;
    }
  EXPECT_TRUE(pos == 0 || neg == 0);  // every corner on one side of every edge
}

TEST(Geometry, ContourTracesMask) {
  auto disc = geom::rasterize(geom::Circle{{16, 16}, 7}, 32, 32);
  auto poly = geom::trace_contour(disc);
  EXPECT_EQ(geom::rasterize(poly, 32, 32), disc);
}

// ---------------------------------------------------------------------------
// png

TEST(Png, Gray8RoundTrip) {
  std::vector<std::uint8_t> px(7 * 5);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 7);
  auto d = decode_png(png::encode_gray8(7, 5, px));
  EXPECT_EQ(d.width, 7);
  EXPECT_EQ(d.height, 5);
  EXPECT_EQ(d.bit_depth, 8);
  EXPECT_EQ(d.channels, 1);
  EXPECT_TRUE(std::equal(px.begin(), px.end(), d.samples.begin(), d.samples.end()));
}

TEST(Png, Gray16RoundTrip) {
  std::vector<std::uint16_t> px{0, 1, 255, 256, 4095, 65535};
  auto d = decode_png(png::encode_gray16(3, 2, px));
  EXPECT_EQ(d.bit_depth, 16);
  EXPECT_EQ(d.samples, px);
}

TEST(Png, Rgb8RoundTrip) {
  std::vector<std::uint8_t> rgb{255, 0, 0, 0, 255, 0, 0, 0, 255, 9, 9, 9};
  auto d = decode_png(png::encode_rgb8(2, 2, rgb));
  EXPECT_EQ(d.channels, 3);
  EXPECT_TRUE(std::equal(rgb.begin(), rgb.end(), d.samples.begin(), d.samples.end()));
}

// ---------------------------------------------------------------------------
// imaging

TEST(Imaging, WindowMap) {
  EXPECT_EQ(imaging::window_value(40, 400, 40), 128);
  EXPECT_EQ(imaging::window_value(-1350, 1500, -600), 0);
  EXPECT_EQ(imaging::window_value(1730, 2500, 480), 255);
  EXPECT_EQ(imaging::window_value(-5000, 400, 40), 0);
  EXPECT_EQ(imaging::window_value(5000, 400, 40), 255);
  // (v - lo) / ww * 255 by hand: lo = -160, v = 0 -> 102.
  EXPECT_EQ(imaging::window_value(0, 400, 40), 102);
}

TEST(Imaging, RawPassThrough) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Annotation);
  auto img = imaging::preprocess_frame(*c.store, t.initial_series_uid, 5, imaging::Pipeline::RawUint16);
  auto d = decode_png(img.png);
  auto f = c.store->fetch_frame(t.initial_series_uid, 5);
  EXPECT_EQ(d.bit_depth, 16);
  EXPECT_TRUE(std::equal(f.stored.begin(), f.stored.end(), d.samples.begin(), d.samples.end()));
}

TEST(Imaging, LungWindowShowsNodule) {
  const auto& c = corpus();
  const auto& fam = c.truth->families().front();
  ASSERT_FALSE(fam.truth.lesions.empty());
  const auto& lesion = fam.truth.lesions.front();
  int z = lesion.representative_slice;
  auto img = imaging::preprocess_frame(*c.store, lesion.series_uid, z, imaging::Pipeline::LungWindow);
  auto d = decode_png(img.png);
  auto f = c.store->fetch_frame(lesion.series_uid, z);
  auto mask = lesion.mask_on(z);
  double in = 0, out = 0;
  int n_in = 0, n_out = 0;
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) {
      auto i = static_cast<std::size_t>(y) * f.cols + x;
      double hu = f.value(i);
      if (mask.at(x, y)) {
        in += d.samples[i];
        ++n_in;
      } else if (hu > -950 && hu < -700) {  // aerated lung
        out += d.samples[i];
        ++n_out;
      }
    }
  ASSERT_GT(n_in, 0);
  ASSERT_GT(n_out, 0);
  EXPECT_GT(in / n_in, out / n_out);
}

TEST(Imaging, UnknownPipeline) {
  try {
    imaging::parse_pipeline("xray_magic");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownPipeline);
  }
}

TEST(Imaging, ScreenshotOverlay) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Annotation);
  auto v = viewer::Viewer::reset(t.reset_params(), *c.store);
  auto plain = imaging::render_screenshot(v.state(), {}, *c.store);
  EXPECT_EQ(plain, imaging::render_screenshot(v.state(), {}, *c.store));

  // Without overlays the image part is the windowed slice repeated in RGB.
  auto d = decode_png(plain);
  auto f = c.store->fetch_frame(v.state().series_uid, v.state().slice_index);
  for (int y = 0; y < f.rows; y += 7)
    for (int x = 0; x < f.cols; x += 5) {
      auto g = imaging::window_value(f.value(static_cast<std::size_t>(y) * f.cols + x), v.state().window_width,
                                     v.state().window_center);
      auto at = (static_cast<std::size_t>(y) * d.width + x) * 3;
      ASSERT_EQ(d.samples[at], g);
      ASSERT_EQ(d.samples[at + 1], g);
    }

  v.add_segmentation("x", v.state().slice_index, geom::Circle{{64, 64}, 20}, *c.store);
  auto shot = decode_png(imaging::render_screenshot(v.state(), v.segmentations(), *c.store));
  int red_on_locus = 0, samples = 0;
  for (int k = 0; k < 36; ++k) {
    double a = k * std::numbers::pi / 18;
    // Just inside the boundary the outline ring is drawn.
    int x = static_cast<int>(std::floor(64 + 19.6 * std::cos(a))), y = static_cast<int>(std::floor(64 + 19.6 * std::sin(a)));
    auto at = (static_cast<std::size_t>(y) * shot.width + x) * 3;
    ++samples;
    red_on_locus += shot.samples[at] == 255 && shot.samples[at + 1] == 0 && shot.samples[at + 2] == 0;
  }
  EXPECT_GE(red_on_locus, samples * 3 / 4);
  auto centre = (static_cast<std::size_t>(64) * shot.width + 64) * 3;
  EXPECT_FALSE(shot.samples[centre] == 255 && shot.samples[centre + 1] == 0);
}

// ---------------------------------------------------------------------------
// viewer

TEST(Viewer, ResetIsDeterministic) {
  const auto& c = corpus();
  auto t = c.first(tasks::TaskType::Annotation);
  t.initial_slice_index = 10;
  auto a = viewer::Viewer::reset(t.reset_params(), *c.store);
  auto b = viewer::Viewer::reset(t.reset_params(), *c.store);
  EXPECT_EQ(a.state(), b.state());
  EXPECT_EQ(a.state().slice_index, 10);
}

TEST(Viewer, LongitudinalLoadsBothStudies) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Longitudinal);
  auto v = viewer::Viewer::reset(t.reset_params(), *c.store);
  const auto* fam = c.truth->find_family(t.family_id());
  ASSERT_TRUE(fam && fam->truth.longitudinal);
  const auto& ids = v.state().display_set_uids;
  EXPECT_NE(std::find(ids.begin(), ids.end(), fam->truth.longitudinal->baseline_series_uid), ids.end());
  EXPECT_NE(std::find(ids.begin(), ids.end(), fam->truth.longitudinal->followup_series_uid), ids.end());
}

TEST(Viewer, NavigationStateMachine) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Longitudinal);
  auto v = viewer::Viewer::reset(t.reset_params(), *c.store);

  // Model: a map of series -> length and the expected state, updated by hand.
  auto model = v.state();
  std::mt19937 gen(23);
  for (int step = 0; step < 300; ++step) {
    int kind = static_cast<int>(gen() % 4);
    bool should_fail = false;
    viewer::Command cmd;
    if (kind == 0) {
      long long s = static_cast<long long>(gen() % 70) - 5;
      cmd = viewer::SetSlice{s};
      should_fail = s < 0 || s >= model.total_images;
      if (!should_fail) model.slice_index = static_cast<int>(s);
    } else if (kind == 1) {
      double w = static_cast<double>(gen() % 2000) - 100, ctr = static_cast<double>(gen() % 1000) - 500;
      cmd = viewer::SetWindowLevel{w, ctr};
      should_fail = w <= 0;
      if (!should_fail) model.window_width = w, model.window_center = ctr;
    } else if (kind == 2) {
      double z = (static_cast<double>(gen() % 50) - 5) / 10.0;
      cmd = viewer::SetZoom{z};
      should_fail = z <= 0;
      if (!should_fail) model.zoom = z;
    } else {
      const auto& ids = model.display_set_uids;
      bool bogus = gen() % 5 == 0;
      std::string uid = bogus ? "9.9.9" : ids[gen() % ids.size()];
      cmd = viewer::SelectSeries{uid};
      should_fail = bogus;
      if (!should_fail) {
        model.series_uid = uid;
        model.slice_index = 0;
        model.total_images = static_cast<int>(c.store->series(uid).instances.size());
      }
    }
    bool failed = false;
    try {
      v.navigate(cmd, *c.store);
    } catch (const Error&) {
      failed = true;
    }
    ASSERT_EQ(failed, should_fail) << "step " << step;
    ASSERT_EQ(v.state(), model) << "step " << step;
  }
}

TEST(Viewer, SliceBounds) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Annotation);
  auto v = viewer::Viewer::reset(t.reset_params(), *c.store);
  int n = v.state().total_images;
  auto before = v.state();
  v.navigate(viewer::SetSlice{n - 1}, *c.store);
  EXPECT_EQ(v.state().slice_index, n - 1);
  before.slice_index = n - 1;
  EXPECT_EQ(v.state(), before);
  try {
    v.navigate(viewer::SetSlice{n}, *c.store);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SliceOutOfRange);
  }
  EXPECT_EQ(v.state(), before);
}

TEST(Viewer, SegmentationValidation) {
  const auto& c = corpus();
  const auto& t = c.first(tasks::TaskType::Annotation);
  auto v = viewer::Viewer::reset(t.reset_params(), *c.store);
  auto code_of = [&](geom::Shape s) {
    try {
      v.add_segmentation("x", 0, std::move(s), *c.store);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;  // sentinel for "accepted"
  };
  EXPECT_EQ(code_of(geom::Circle{{10, 10}, 0}), ErrorCode::InvalidShape);
  EXPECT_EQ(code_of(geom::Polygon{{{1, 1}, {5, 5}}}), ErrorCode::InvalidShape);
  EXPECT_TRUE(v.segmentations().empty());
  EXPECT_TRUE(v.list_segmentations().empty());
  v.add_segmentation("a", 0, geom::Circle{{10, 10}, 3}, *c.store);
  v.add_segmentation("b", 1, geom::Rectangle{{1, 1}, {4, 4}}, *c.store);
  v.add_segmentation("c", 2, geom::Polygon{{{1, 1}, {8, 1}, {4, 6}}}, *c.store);
  auto list = v.list_segmentations();
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[0]["label"], "a");
  EXPECT_EQ(list[2]["shape"]["type"], "polygon");
}

TEST(Viewer, ViewportJsonKeys) {
  viewer::ViewportState s;
  s.slice_index = 10;
  auto j = viewer::to_json(s);
  for (const char* k : {"sliceIndex", "totalImages", "windowWidth", "windowCenter", "zoom", "seriesInstanceUID",
                        "displaySetInstanceUIDs"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["sliceIndex"], 10);
}
