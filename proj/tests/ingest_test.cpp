#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "audfer/ingest.hpp"

using namespace audfer;

namespace {

// OpenFace-style header with padded names and extra landmark columns.
std::string openface_header(bool with_face_id = true, const std::string& skip = "") {
  std::string h = "frame";
  if (with_face_id) h += ", face_id";
  h += ", timestamp, confidence, success, x_0, y_0";
  for (std::size_t s = 0; s < kNumIntensityAus; ++s)
    if (intensity_column(s) != skip) h += ", " + intensity_column(s);
  for (std::size_t a = 0; a < kNumAus; ++a)
    if (presence_column(a) != skip) h += ", " + presence_column(a);
  return h;
}

std::string openface_row(int frame, int face, double intensity, int presence, double conf = 0.98) {
  std::ostringstream r;
  r << frame << ", " << face << ", " << 0.04 * frame << ", " << conf << ", 1, 10.5, 20.5";
  for (std::size_t s = 0; s < kNumIntensityAus; ++s) r << ", " << intensity;
  for (std::size_t a = 0; a < kNumAus; ++a) r << ", " << presence;
  return r.str();
}

FrameAURecord frame(long long idx, double v, const std::string& id = "v") {
  FrameAURecord r;
  r.video_id = id;
  r.frame_index = idx;
  r.intensities.fill(v);
  return r;
}

}  // namespace

TEST(ParseOpenFace, ReadsPaddedHeaderInAnyOrder) {
  std::istringstream in(openface_header() + "\n" + openface_row(1, 0, 1.25, 1) + "\n" +
                        openface_row(2, 0, 0.5, 0) + "\r\n");
  const auto recs = parse_openface_csv(in, "vid");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].video_id, "vid");
  EXPECT_EQ(recs[0].frame_index, 1);
  EXPECT_DOUBLE_EQ(recs[0].confidence, 0.98);
  EXPECT_TRUE(recs[0].success);
  EXPECT_DOUBLE_EQ(recs[0].intensities[5], 1.25);
  EXPECT_EQ(recs[0].presences[kAu28Index], 1);
  EXPECT_DOUBLE_EQ(recs[1].intensities[16], 0.5);
  EXPECT_EQ(recs[1].presences[0], 0);
}

TEST(ParseOpenFace, MissingColumnIsNamed) {
  std::istringstream in(openface_header(true, "AU45_r") + "\n");
  try {
    parse_openface_csv(in, "vid");
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("missing column \"AU45_r\""), std::string::npos);
  }
}

TEST(ParseOpenFace, NonNumericCellNamesRowAndColumn) {
  std::string row = openface_row(1, 0, 1.0, 1);
  row.replace(row.find("0.98"), 4, "abc");
  std::istringstream in(openface_header() + "\n" + row + "\n");
  try {
    parse_openface_csv(in, "vid");
    FAIL();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos);
    EXPECT_NE(msg.find("confidence"), std::string::npos);
  }
}

TEST(ParseOpenFace, RejectsOutOfRangeIntensityAndPresence) {
  std::istringstream a(openface_header() + "\n" + openface_row(1, 0, 5.5, 1) + "\n");
  EXPECT_THROW(parse_openface_csv(a, "vid"), ContractError);
  std::istringstream b(openface_header() + "\n" + openface_row(1, 0, 1.0, 2) + "\n");
  EXPECT_THROW(parse_openface_csv(b, "vid"), ContractError);
}

TEST(ParseOpenFace, SecondaryFacesDroppedWithWarning) {
  std::istringstream in(openface_header() + "\n" + openface_row(1, 0, 1.0, 1) + "\n" +
                        openface_row(1, 1, 2.0, 0) + "\n");
  Diagnostics diag;
  const auto recs = parse_openface_csv(in, "vid", &diag);
  EXPECT_EQ(recs.size(), 1u);
  EXPECT_EQ(diag.warnings.size(), 1u);
}

TEST(ParseOpenFace, RoundTripThroughWriter) {
  std::istringstream in(openface_header(false) + "\n" + openface_row(1, 0, 1.5, 1).erase(2, 3) + "\n");
  const auto recs = parse_openface_csv(in, "vid");
  std::stringstream buf;
  write_openface_csv(buf, recs);
  EXPECT_EQ(parse_openface_csv(buf, "vid"), recs);
}

TEST(Interpolation, LinearInFrameIndex) {
  std::vector<FrameAURecord> v{frame(1, 1.0), frame(2, 0.0), frame(4, 0.0), frame(5, 3.0)};
  const auto r = interpolate_zero_intensities(v);
  EXPECT_DOUBLE_EQ(r.records[1].intensities[0], 1.5);
  EXPECT_DOUBLE_EQ(r.records[2].intensities[0], 2.5);
  EXPECT_TRUE(r.records[1].interpolated_mask[0]);
  EXPECT_FALSE(r.records[0].interpolated_mask[0]);
  EXPECT_TRUE(r.flags.empty());
}

TEST(Interpolation, EdgesCopyNearestAndAllZeroIsFlagged) {
  std::vector<FrameAURecord> v{frame(1, 0.0), frame(2, 2.0), frame(3, 0.0)};
  for (auto& f : v) f.intensities[2] = 0.0;
  const auto r = interpolate_zero_intensities(v);
  EXPECT_DOUBLE_EQ(r.records[0].intensities[0], 2.0);
  EXPECT_DOUBLE_EQ(r.records[2].intensities[0], 2.0);
  ASSERT_EQ(r.flags.size(), 1u);
  EXPECT_EQ(r.flags[0], "AU04 all-zero");
  EXPECT_DOUBLE_EQ(r.records[1].intensities[2], 0.0);
}

TEST(Interpolation, RejectsMixedOrUnsortedInput) {
  EXPECT_THROW(interpolate_zero_intensities({frame(1, 1.0, "a"), frame(2, 1.0, "b")}), ContractError);
  EXPECT_THROW(interpolate_zero_intensities({frame(2, 1.0), frame(1, 1.0)}), ContractError);
}

TEST(Interpolation, NonzeroSeriesUnchanged) {
  std::vector<FrameAURecord> v{frame(1, 0.3), frame(2, 4.0), frame(3, 1.1)};
  EXPECT_EQ(interpolate_zero_intensities(v).records, v);
}

TEST(FramePredictions, LoadsAndRenormalizes) {
  std::istringstream in(
      "video_id,frame,label,s0,s1,s2,s3,s4,s5,s6\n"
      "a,1,Happy,0.9,0.1,0,0,0,0,0.0005\n");
  const auto p = load_frame_predictions(in);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].label, Expression::Happy);
  double sum = 0;
  for (double s : p[0].scores) sum += s;
  EXPECT_NEAR(sum, 1.0, 1e-15);
}

TEST(FramePredictions, RejectsBadScores) {
  std::istringstream neg("video_id,frame,label,s0,s1,s2,s3,s4,s5,s6\na,1,Sad,-0.1,1.1,0,0,0,0,0\n");
  EXPECT_THROW(load_frame_predictions(neg), ContractError);
  std::istringstream far("video_id,frame,label,s0,s1,s2,s3,s4,s5,s6\na,1,Sad,0.5,0.4,0,0,0,0,0\n");
  EXPECT_THROW(load_frame_predictions(far), ContractError);
  std::istringstream unknown("video_id,frame,label,s0,s1,s2,s3,s4,s5,s6\na,1,Bored,1,0,0,0,0,0,0\n");
  EXPECT_THROW(load_frame_predictions(unknown), ContractError);
}

TEST(FrameStore, RoundTripIsExact) {
  auto a = frame(3, 1.0 / 3.0, "x");
  a.presences[kAu28Index] = 1;
  a.interpolated_mask[4] = true;
  a.timestamp = 0.12;
  auto b = frame(4, 0.1, "y");
  b.success = false;
  std::stringstream buf;
  write_frame_store(buf, {a, b});
  const auto back = read_frame_store(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
}

TEST(FrameStore, TruncationDetected) {
  std::stringstream buf;
  write_frame_store(buf, {frame(1, 1.0), frame(2, 1.0)});
  std::string text = buf.str();
  text.resize(text.rfind('{'));
  std::istringstream in(text);
  EXPECT_THROW(read_frame_store(in), Error);
}

TEST(IngestDirectory, VideoIdFromFileStem) {
  const auto dir = std::filesystem::temp_directory_path() / "audfer_ingest_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "clip_b.csv");
    f << openface_header() << '\n' << openface_row(1, 0, 2.0, 1) << '\n' << openface_row(2, 0, 0.0, 0) << '\n';
  }
  {
    std::ofstream f(dir / "clip_a.csv");
    f << openface_header() << '\n' << openface_row(1, 0, 1.0, 1) << '\n';
  }
  const auto recs = ingest_openface_directory(dir);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].video_id, "clip_a");
  EXPECT_EQ(recs[1].video_id, "clip_b");
  EXPECT_DOUBLE_EQ(recs[2].intensities[0], 2.0);
  EXPECT_TRUE(recs[2].interpolated_mask[0]);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(ingest_openface_directory(dir), IoError);
}

TEST(Interpolation, Idempotent) {
  std::vector<FrameAURecord> v{frame(1, 0.0), frame(3, 2.0), frame(4, 0.0), frame(9, 1.0), frame(10, 0.0)};
  v[2].intensities[6] = 0.7;
  const auto once = interpolate_zero_intensities(v).records;
  const auto twice = interpolate_zero_intensities(once).records;
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_EQ(once[i].intensities, twice[i].intensities);
    for (double x : once[i].intensities) EXPECT_NE(x, 0.0);
  }
}
