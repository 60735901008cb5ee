#pragma once

// Shared hand-built inputs with oracle values computed outside the library.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "audfer/audfer.hpp"

namespace fixtures {

using namespace audfer;

// Two populated classes with three reliable frames each, one frame below the
// threshold and one low-confidence detection.
//   Happy frame k, slot s: (s + k) / 4        -> median (s + 1) / 4
//   Sad frame k, slot s:   4 - s/5 + {-0.1, 0, 0.3}[k] -> median 4 - s/5
// AU28 raw: Happy 2.25, Sad 2.4. Global midrange over populated cells: 2.25.
inline std::vector<FrameAURecord> hand_frames() {
  std::vector<FrameAURecord> out;
  auto add = [&](const std::string& vid, long long idx, auto value, double conf = 0.95) {
    FrameAURecord r;
    r.video_id = vid;
    r.frame_index = idx;
    r.confidence = conf;
    for (std::size_t s = 0; s < kNumIntensityAus; ++s) r.intensities[s] = value(static_cast<double>(s));
    out.push_back(r);
  };
  for (int k = 0; k < 3; ++k) add("h", k + 1, [k](double s) { return (s + k) / 4.0; });
  const double jitter[3] = {-0.1, 0.0, 0.3};
  for (int k = 0; k < 3; ++k) add("s", k + 1, [&, k](double s) { return 4.0 - s / 5.0 + jitter[k]; });
  add("h", 4, [](double) { return 5.0; });        // prediction below theta
  add("s", 4, [](double) { return 0.0; }, 0.2);  // tracker confidence too low
  return out;
}

inline std::vector<FramePrediction> hand_predictions() {
  std::vector<FramePrediction> out;
  auto add = [&](const std::string& vid, long long idx, Expression e, double score) {
    FramePrediction p;
    p.video_id = vid;
    p.frame_index = idx;
    p.label = e;
    p.scores.fill((1.0 - score) / 6.0);
    p.scores[static_cast<std::size_t>(e)] = score;
    out.push_back(p);
  };
  for (int k = 1; k <= 3; ++k) add("h", k, Expression::Happy, 0.9);
  for (int k = 1; k <= 3; ++k) add("s", k, Expression::Sad, 0.8);
  add("h", 4, Expression::Happy, 0.4);
  add("s", 4, Expression::Sad, 0.99);
  return out;
}

// Rows in AU order, AU28 included.
inline constexpr std::array<double, 18> kHappyOracle{
    0.11920292202211755, 0.14804719803168948, 0.18242552380635635, 0.22270013882530884, 0.2689414213699951,
    0.320821300824607,   0.3775406687981454,  0.43782349911420193, 0.5,                 0.5621765008857981,
    0.6224593312018546,  0.679178699175393,   0.7310585786300049,  0.7772998611746911,  0.8175744761936437,
    0.8519528019683106,  0.5,                 0.8807970779778823};
inline constexpr std::array<double, 18> kSadOracle{
    0.8519528019683106,  0.8249137318359602,  0.7941296281990528,  0.759510916949111,   0.7211151780228631,
    0.679178699175393,   0.6341355910108007,  0.5866175789173299,  0.5374298453437496,  0.48750260351578967,
    0.43782349911420193, 0.38936076605077796, 0.34298953732650117, 0.29943285752602705, 0.25922510081784594,
    0.22270013882530884, 0.5374298453437496,  0.19000156601531293};

inline constexpr double kSigmoidMinusHalf = 0.3775406687981454;

inline KnowledgeMatrix hand_knowledge(Diagnostics* diag = nullptr) {
  const auto frames = hand_frames();
  const auto preds = hand_predictions();
  const auto reliable = filter_reliable_frames(preds, 0.5, diag, "hand");
  ExtractionOptions opts;
  opts.empty_classes = EmptyClassPolicy::Neutral;
  return compute_dataset_knowledge(frames, reliable, 0.5, opts, diag);
}


// Random video labels: 1..50 videos, class and AU bits drawn independently.
inline std::vector<VideoAULabel> random_labels(std::mt19937_64& rng, std::size_t max_videos = 50) {
  std::uniform_int_distribution<std::size_t> n_dist(1, max_videos);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(kNumExpressions) - 1);
  std::bernoulli_distribution density(0.5);
  const std::size_t n = n_dist(rng);
  std::uniform_real_distribution<double> rate(0.0, 1.0);
  std::vector<VideoAULabel> out(n);
  std::array<double, kNumAus> p{};
  for (auto& x : p) x = density(rng) ? rate(rng) : (density(rng) ? 0.0 : 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].video_id = "v" + std::to_string(i);
    out[i].expression = static_cast<Expression>(cls(rng));
    for (std::size_t a = 0; a < kNumAus; ++a) out[i].y[a] = std::bernoulli_distribution(p[a])(rng) ? 1 : 0;
  }
  return out;
}

// Enumerates videos per (class, AU) cell and forms the ratio from integer
// counts, with the documented fallbacks.
inline Eigen::MatrixXd brute_force_pos_weights(const std::vector<VideoAULabel>& labels, PosWeightStrategy s) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(kNumExpressions, kNumAus);
  if (s == PosWeightStrategy::None) return w;
  auto ratio = [](long long neg, long long pos) {
    if (pos == 0) return static_cast<double>(neg);
    if (neg == 0) return 1e-6;
    return static_cast<double>(neg) / static_cast<double>(pos);
  };
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    const bool major = is_major_class(c);
    for (std::size_t a = 0; a < kNumAus; ++a) {
      long long pos = 0, neg = 0;
      for (const auto& l : labels) {
        if (s != PosWeightStrategy::Global && static_cast<std::size_t>(l.expression) != c) continue;
        (l.y[a] ? pos : neg) += 1;
      }
      if (s == PosWeightStrategy::Minor && major) continue;
      if (s != PosWeightStrategy::Global && pos + neg == 0) continue;
      w(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = ratio(neg, pos);
    }
  }
  return w;
}

}  // namespace fixtures
