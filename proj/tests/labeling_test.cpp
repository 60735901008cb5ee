#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"

using namespace audfer;

namespace {

std::vector<FrameAURecord> video_with_presences(std::size_t n, std::size_t on, std::size_t au = 0) {
  std::vector<FrameAURecord> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    frames[i].video_id = "v";
    frames[i].frame_index = static_cast<long long>(i);
    frames[i].presences[au] = i < on ? 1 : 0;
  }
  return frames;
}

VideoAULabel label(Expression e, std::initializer_list<std::size_t> on) {
  VideoAULabel l;
  l.expression = e;
  for (auto a : on) l.y[a] = 1;
  return l;
}

}  // namespace

TEST(VideoLabels, HalfIsEnough) {
  EXPECT_EQ(derive_video_au_labels(video_with_presences(4, 2), Expression::Sad).y[0], 1);
  EXPECT_EQ(derive_video_au_labels(video_with_presences(4, 1), Expression::Sad).y[0], 0);
  EXPECT_EQ(derive_video_au_labels(video_with_presences(5, 3), Expression::Sad).y[0], 1);
  EXPECT_EQ(derive_video_au_labels(video_with_presences(5, 2), Expression::Sad).y[0], 0);
}

TEST(VideoLabels, BoundaryOverAllLengths) {
  for (std::size_t n = 1; n <= 200; ++n) {
    const std::size_t half_up = (n + 1) / 2;  // smallest sum with 2*sum >= n
    EXPECT_EQ(derive_video_au_labels(video_with_presences(n, half_up, 7), Expression::Fear).y[7], 1) << n;
    EXPECT_EQ(derive_video_au_labels(video_with_presences(n, half_up - 1, 7), Expression::Fear).y[7], 0) << n;
  }
}

TEST(VideoLabels, MetadataAndErrors) {
  const auto l = derive_video_au_labels(video_with_presences(6, 6, kAu28Index), Expression::Angry);
  EXPECT_EQ(l.video_id, "v");
  EXPECT_EQ(l.frame_count, 6u);
  EXPECT_EQ(l.expression, Expression::Angry);
  EXPECT_EQ(l.y[kAu28Index], 1);
  EXPECT_THROW(derive_video_au_labels({}, Expression::Happy), ContractError);
  auto mixed = video_with_presences(2, 1);
  mixed[1].video_id = "w";
  EXPECT_THROW(derive_video_au_labels(mixed, Expression::Happy), ContractError);
}

TEST(PosWeights, HandCountedGlobal) {
  // AU01 on in 1 of 4 videos -> 3; AU02 on in 2 of 4 -> 1.
  std::vector<VideoAULabel> v{label(Expression::Happy, {0, 1}), label(Expression::Happy, {1}),
                              label(Expression::Sad, {}), label(Expression::Fear, {})};
  const auto g = pos_weight_global(v);
  EXPECT_EQ(g.values(0, 0), 3.0);
  EXPECT_EQ(g.values(6, 0), 3.0);
  EXPECT_EQ(g.values(2, 1), 1.0);
  EXPECT_EQ(g.values(0, 2), 4.0);  // no positives falls back to the count
  EXPECT_EQ(g.total_count, 4u);
}

TEST(PosWeights, HandCountedDistinct) {
  std::vector<VideoAULabel> v{label(Expression::Happy, {0, 1}), label(Expression::Happy, {1}),
                              label(Expression::Happy, {}), label(Expression::Disgust, {0})};
  const auto d = pos_weight_distinct(v);
  EXPECT_EQ(d.values(0, 0), 2.0);
  EXPECT_EQ(d.values(0, 1), 0.5);
  EXPECT_EQ(d.values(5, 0), kPosWeightFloor);
  EXPECT_EQ(d.values(5, 1), 1.0);  // zero positives among one video
  EXPECT_EQ(d.values(3, 0), 1.0);  // empty class
  EXPECT_FALSE(d.warnings.empty());
}

TEST(PosWeights, MinorStrategy) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto v = fixtures::random_labels(rng);
    const auto m = pos_weight_minor(v);
    const auto d = pos_weight_distinct(v);
    for (std::size_t c = 0; c < kNumExpressions; ++c) {
      const auto r = static_cast<Eigen::Index>(c);
      if (is_major_class(c)) EXPECT_TRUE((m.values.row(r).array() == 1.0).all());
      else EXPECT_EQ(m.values.row(r), d.values.row(r));
    }
  }
}

TEST(PosWeights, MatchBruteForce) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 200; ++t) {
    const auto v = fixtures::random_labels(rng);
    for (auto s : {PosWeightStrategy::None, PosWeightStrategy::Global, PosWeightStrategy::Distinct,
                   PosWeightStrategy::Minor}) {
      EXPECT_EQ(compute_pos_weights(v, s).values, fixtures::brute_force_pos_weights(v, s))
          << strategy_name(s) << " trial " << t;
    }
  }
}

TEST(PosWeights, EmptyInputRejected) {
  EXPECT_THROW(pos_weight_global(std::vector<VideoAULabel>{}), ContractError);
}

TEST(Strategy, NamesRoundTrip) {
  for (auto s : {PosWeightStrategy::None, PosWeightStrategy::Global, PosWeightStrategy::Distinct,
                 PosWeightStrategy::Minor})
    EXPECT_EQ(parse_strategy(strategy_name(s)), s);
  EXPECT_THROW(parse_strategy("focal"), ContractError);
}

TEST(Files, LabelsRoundTrip) {
  std::mt19937_64 rng(9);
  const auto v = fixtures::random_labels(rng);
  std::stringstream buf;
  write_video_labels(buf, v);
  EXPECT_EQ(read_video_labels(buf), v);
}

TEST(Files, PosWeightsRoundTrip) {
  std::mt19937_64 rng(10);
  const auto spec = pos_weight_distinct(fixtures::random_labels(rng));
  std::stringstream buf;
  write_pos_weights(buf, spec);
  const auto back = read_pos_weights(buf);
  EXPECT_EQ(back.values, spec.values);
  EXPECT_EQ(back.strategy, spec.strategy);
  EXPECT_EQ(back.class_counts, spec.class_counts);
  EXPECT_EQ(back.total_count, spec.total_count);
}

TEST(Files, MalformedLabelsRejected) {
  std::istringstream bad("# audfer-labels version=1\nvideo_id,expression,n,AU01\nv,Happy,1,1\n");
  EXPECT_THROW(read_video_labels(bad), ContractError);
  std::istringstream bits(
      "# audfer-labels version=1\nvideo_id,expression,n,AU01,AU02,AU04,AU05,AU06,AU07,AU09,AU10,AU12,AU14,"
      "AU15,AU17,AU20,AU23,AU25,AU26,AU28,AU45\nv,Happy,1,2,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0\n");
  EXPECT_THROW(read_video_labels(bits), ContractError);
}

TEST(VideoLabels, InvariantUnderFrameReordering) {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 50; ++t) {
    std::vector<FrameAURecord> frames(1 + rng() % 9);
    for (auto& f : frames) {
      f.video_id = "v";
      for (auto& p : f.presences) p = coin(rng);
    }
    const auto a = derive_video_au_labels(frames, Expression::Neutral);
    std::shuffle(frames.begin(), frames.end(), rng);
    EXPECT_EQ(derive_video_au_labels(frames, Expression::Neutral), a);
  }
}

TEST(PosWeights, DuplicatingVideosChangesNothing) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const auto v = fixtures::random_labels(rng);
    auto doubled = v;
    doubled.insert(doubled.end(), v.begin(), v.end());
    for (auto s : {PosWeightStrategy::Global, PosWeightStrategy::Distinct, PosWeightStrategy::Minor}) {
      const auto a = compute_pos_weights(v, s).values;
      const auto b = compute_pos_weights(doubled, s).values;
      // ratios are unchanged; zero-positive cells fall back to the count, which doubles
      for (Eigen::Index i = 0; i < a.size(); ++i)
        EXPECT_TRUE(b.data()[i] == a.data()[i] || b.data()[i] == 2.0 * a.data()[i]);
    }
  }
}
