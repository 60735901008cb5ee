#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "audfer/domain.hpp"
#include "audfer/error.hpp"
#include "audfer/ingest.hpp"
#include "audfer/labeling.hpp"

namespace audfer {

/// Imbalanced profile: four major classes above 1/7, disgust rarest.
inline constexpr std::array<double, kNumExpressions> kDefaultClassProportions{0.30, 0.25, 0.20, 0.15,
                                                                              0.04, 0.02, 0.04};

/// Prototype AU intensities (0..5 scale) per expression, loosely following
/// the usual FACS descriptions. Active AUs sit above the 2.5 presence
/// threshold, inactive ones below it.
inline KnowledgeMatrix default_ground_truth(double active = 3.2, double inactive = 2.0) {
  KnowledgeMatrix g;
  g.stage = KnowledgeStage::LossScaled;
  g.theta = 0.5;
  g.values.setConstant(inactive);
  auto set = [&](Expression e, std::initializer_list<int> aus, double v) {
    for (int au : aus) {
      const auto row = static_cast<Eigen::Index>(au_index((au < 10 ? "AU0" : "AU") + std::to_string(au)));
      g.values(row, static_cast<Eigen::Index>(e)) = v;
    }
  };
  set(Expression::Happy, {6, 12, 25, 26}, active);
  set(Expression::Sad, {1, 4, 15, 17}, active);
  set(Expression::Neutral, {45}, 3.0);
  set(Expression::Angry, {4, 5, 7, 9, 10, 23}, active);
  set(Expression::Surprise, {1, 2, 5, 26}, active);
  set(Expression::Disgust, {9, 10, 15, 17}, active);
  set(Expression::Fear, {1, 2, 4, 5, 20, 25}, active);
  g.values.col(static_cast<Eigen::Index>(Expression::Neutral)).array() -= 0.5;
  g.values(static_cast<Eigen::Index>(kAu28Index), static_cast<Eigen::Index>(Expression::Neutral)) = 0.5;
  return g;
}

struct SynthSpec {
  std::array<double, kNumExpressions> class_proportions = kDefaultClassProportions;
  std::size_t total = 2000;
  KnowledgeMatrix ground_truth = default_ground_truth();
  double au_noise_sd = 0.7;
  double feature_noise_sd = 2.0;
  std::size_t feature_dim = 2048;
  /// Scale of the per-class feature anchors M_c.
  double anchor_scale = 0.0;
  /// Scale of the AU mixing map U.
  double mixing_scale = 0.5;
  std::uint64_t seed = 0;
};

struct SynthDataset {
  Eigen::MatrixXd features;          // N x F
  std::vector<int> expressions;      // N
  std::vector<VideoAULabel> labels;  // N single-frame videos
  Eigen::MatrixXd intensities;       // N x 18 latent intensities
  KnowledgeMatrix ground_truth;

  std::size_t size() const { return expressions.size(); }
  /// Binary AU targets as an N x 18 matrix.
  Eigen::MatrixXd au_targets() const {
    Eigen::MatrixXd y(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(kNumAus));
    for (std::size_t i = 0; i < labels.size(); ++i)
      for (std::size_t a = 0; a < kNumAus; ++a) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = labels[i].y[a];
    return y;
  }
};

inline constexpr double kPresenceThreshold = 2.5;

/// Class counts by largest-remainder rounding; ties go to the lower index.
inline std::array<std::size_t, kNumExpressions> largest_remainder_counts(
    const std::array<double, kNumExpressions>& proportions, std::size_t total) {
  std::array<std::size_t, kNumExpressions> counts{};
  std::array<double, kNumExpressions> rem{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    const double exact = proportions[c] * static_cast<double>(total);
    counts[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::array<std::size_t, kNumExpressions> order{};
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % kNumExpressions]];
  return counts;
}

inline void validate_synth_spec(const SynthSpec& s) {
  double sum = 0.0;
  for (double p : s.class_proportions) {
    if (!(p >= 0.0)) throw ContractError("class proportions must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("class proportions must sum to 1");
  if (s.total == 0) throw ContractError("synthetic dataset size must be positive");
  if (!(s.au_noise_sd >= 0.0) || !(s.feature_noise_sd >= 0.0)) throw ContractError("noise levels must be >= 0");
  if (s.feature_dim == 0) throw ContractError("feature dimension must be positive");
  if (s.ground_truth.stage != KnowledgeStage::LossScaled) throw ContractError("ground truth must be loss-scaled");
  const auto report = validate_knowledge(s.ground_truth);
  if (!report.ok()) throw ContractError("ground truth knowledge invalid: " + report.summary());
}

/// Draws one split of the benchmark. Class anchors and the AU mixing map
/// depend on `spec.seed` only, so every `stream` shares the same structure.
inline SynthDataset generate_dataset(const SynthSpec& spec, std::uint64_t stream = 0) {
  validate_synth_spec(spec);
  const auto f = static_cast<Eigen::Index>(spec.feature_dim);
  const auto aus = static_cast<Eigen::Index>(kNumAus);

  std::mt19937_64 structure_rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd anchors(f, static_cast<Eigen::Index>(kNumExpressions));
  for (Eigen::Index i = 0; i < anchors.size(); ++i) anchors.data()[i] = spec.anchor_scale * normal(structure_rng);
  Eigen::MatrixXd mixing(f, aus);
  const double mix_sd = spec.mixing_scale / std::sqrt(static_cast<double>(kNumAus));
  for (Eigen::Index i = 0; i < mixing.size(); ++i) mixing.data()[i] = mix_sd * normal(structure_rng);

  const auto counts = largest_remainder_counts(spec.class_proportions, spec.total);
  std::vector<int> order;
  order.reserve(spec.total);
  for (std::size_t c = 0; c < kNumExpressions; ++c) order.insert(order.end(), counts[c], static_cast<int>(c));
  std::seed_seq sample_seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                           static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(sample_seq);
  std::shuffle(order.begin(), order.end(), rng);

  SynthDataset d;
  d.ground_truth = spec.ground_truth;
  d.expressions = order;
  const auto n = static_cast<Eigen::Index>(spec.total);
  d.features.resize(n, f);
  d.intensities.resize(n, aus);
  d.labels.resize(spec.total);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = order[static_cast<std::size_t>(i)];
    Eigen::VectorXd a(aus);
    for (Eigen::Index j = 0; j < aus; ++j) {
      const double noise = spec.au_noise_sd > 0.0 ? spec.au_noise_sd * normal(rng) : 0.0;
      a(j) = std::clamp(spec.ground_truth.values(j, c) + noise, 0.0, 5.0);
    }
    d.intensities.row(i) = a.transpose();
    auto& label = d.labels[static_cast<std::size_t>(i)];
    label.video_id = "s" + std::to_string(stream) + "_" + std::to_string(i);
    label.frame_count = 1;
    label.expression = static_cast<Expression>(c);
    for (Eigen::Index j = 0; j < aus; ++j) label.y[static_cast<std::size_t>(j)] = a(j) >= kPresenceThreshold ? 1 : 0;
    Eigen::VectorXd x = anchors.col(c) + mixing * a;
    if (spec.feature_noise_sd > 0.0)
      for (Eigen::Index k = 0; k < f; ++k) x(k) += spec.feature_noise_sd * normal(rng);
    d.features.row(i) = x.transpose();
  }
  return d;
}

/// Each sample as a one-frame video record, for the knowledge and labeling
/// pipelines. AU28 keeps only its presence flag.
inline std::vector<FrameAURecord> to_frame_records(const SynthDataset& d) {
  std::vector<FrameAURecord> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto& r = out[i];
    r.video_id = d.labels[i].video_id;
    r.frame_index = 1;
    r.confidence = 1.0;
    r.success = true;
    for (std::size_t s = 0; s < kNumIntensityAus; ++s)
      r.intensities[s] = d.intensities(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(intensity_slot_to_au(s)));
    r.presences = d.labels[i].y;
  }
  return out;
}

/// One-hot frame predictions carrying the true labels.
inline std::vector<FramePrediction> to_oracle_predictions(const SynthDataset& d) {
  std::vector<FramePrediction> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i].video_id = d.labels[i].video_id;
    out[i].frame_index = 1;
    out[i].label = d.labels[i].expression;
    out[i].scores[static_cast<std::size_t>(d.expressions[i])] = 1.0;
  }
  return out;
}

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  return {{"class_proportions", s.class_proportions}, {"total", s.total},
          {"au_noise_sd", s.au_noise_sd},             {"feature_noise_sd", s.feature_noise_sd},
          {"feature_dim", s.feature_dim},             {"anchor_scale", s.anchor_scale},
          {"mixing_scale", s.mixing_scale},           {"seed", s.seed}};
}

/// Missing keys keep their defaults. The ground truth is always the default
/// prototype matrix unless `ground_truth` is provided as an 18x7 array.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    if (j.contains("class_proportions")) s.class_proportions = j.at("class_proportions").get<std::array<double, kNumExpressions>>();
    s.total = j.value("total", s.total);
    s.au_noise_sd = j.value("au_noise_sd", s.au_noise_sd);
    s.feature_noise_sd = j.value("feature_noise_sd", s.feature_noise_sd);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.anchor_scale = j.value("anchor_scale", s.anchor_scale);
    s.mixing_scale = j.value("mixing_scale", s.mixing_scale);
    s.seed = j.value("seed", s.seed);
    if (j.contains("ground_truth")) {
      const auto rows = j.at("ground_truth").get<std::vector<std::vector<double>>>();
      if (rows.size() != kNumAus) throw ContractError("ground_truth must have 18 rows");
      for (std::size_t a = 0; a < kNumAus; ++a) {
        if (rows[a].size() != kNumExpressions) throw ContractError("ground_truth rows must have 7 values");
        for (std::size_t c = 0; c < kNumExpressions; ++c)
          s.ground_truth.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = rows[a][c];
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed synthetic spec: ") + e.what());
  }
  validate_synth_spec(s);
  return s;
}

}  // namespace audfer
