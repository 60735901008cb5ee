#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "audfer/csv.hpp"
#include "audfer/domain.hpp"
#include "audfer/error.hpp"
#include "audfer/ingest.hpp"

namespace audfer {

inline constexpr std::string_view kToolVersion = "audfer-1.0.0";

using FrameKey = std::pair<std::string, long long>;

/// Frames whose asserted-label score exceeds theta.
struct ReliableFrameSet {
  std::string dataset_id;
  double theta = 0.5;
  std::map<FrameKey, Expression> members;
  std::array<std::size_t, kNumExpressions> per_class{};
};

inline ReliableFrameSet filter_reliable_frames(std::span<const FramePrediction> predictions, double theta,
                                               Diagnostics* diag = nullptr,
                                               std::string dataset_id = "dataset") {
  if (!(theta >= 0.0 && theta <= 1.0)) {
    throw ContractError("theta must lie in [0,1], got " + csv::format_double(theta));
  }
  ReliableFrameSet set;
  set.dataset_id = std::move(dataset_id);
  set.theta = theta;
  for (const auto& p : predictions) {
    const auto label = static_cast<std::size_t>(p.label);
    if (p.scores[label] > theta) {
      set.members.emplace(FrameKey{p.video_id, p.frame_index}, p.label);
      ++set.per_class[label];
    }
  }
  if (set.members.empty()) {
    warn(diag, "no reliable frames at theta = " + csv::format_double(theta));
  }
  return set;
}

/// Collects values for an exact median. Merging is order-independent since the
/// median is computed once at finalize.
class MedianAccumulator {
 public:
  void add(double v) { values_.push_back(v); }
  void merge(const MedianAccumulator& other) {
    values_.insert(values_.end(), other.values_.begin(), other.values_.end());
  }
  std::size_t count() const { return values_.size(); }

  /// Even counts average the two central order statistics.
  double finalize() const {
    if (values_.empty()) throw ContractError("median of an empty sample");
    std::vector<double> v = values_;
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
  }

 private:
  std::vector<double> values_;
};

/// Shifts every cell by the (max+min)/2 of the masked cells, then applies the
/// logistic function. Columns with mask false are excluded from the midpoint.
inline Eigen::MatrixXd center_and_squash(const Eigen::MatrixXd& raw, const std::vector<bool>& column_mask = {}) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    if (!column_mask.empty() && !column_mask[static_cast<std::size_t>(j)]) continue;
    lo = std::min(lo, raw.col(j).minCoeff());
    hi = std::max(hi, raw.col(j).maxCoeff());
  }
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ContractError("no populated cells to center");
  const double mid = 0.5 * (hi + lo);
  return (raw.array() - mid).unaryExpr([](double x) { return sigmoid(x); }).matrix();
}

enum class EmptyClassPolicy {
  Reject,   ///< fail when any class has no reliable frames
  Neutral,  ///< exclude empty classes from centering and set them to 0.5
};

struct ExtractionOptions {
  double min_confidence = 0.8;
  bool require_success = true;
  EmptyClassPolicy empty_classes = EmptyClassPolicy::Reject;
};

/// Per-dataset AU-expression knowledge matrix from reliable frames.
///
/// Cell (au, class) is the median intensity over that class's reliable frames;
/// the AU28 row, which has no intensity, is the mean of the 17 medians of its
/// column. The completed matrix is centered on its global midrange and squashed
/// through the logistic function.
inline KnowledgeMatrix compute_dataset_knowledge(std::span<const FrameAURecord> records,
                                                 const ReliableFrameSet& reliable, double theta,
                                                 const ExtractionOptions& opts = {},
                                                 Diagnostics* diag = nullptr) {
  std::array<std::array<MedianAccumulator, kNumIntensityAus>, kNumExpressions> acc;
  std::array<std::size_t, kNumExpressions> frames_per_class{};
  std::size_t unreliable_detections = 0;
  for (const auto& r : records) {
    auto it = reliable.members.find(FrameKey{r.video_id, r.frame_index});
    if (it == reliable.members.end()) continue;
    if ((opts.require_success && !r.success) || r.confidence < opts.min_confidence) {
      ++unreliable_detections;
      continue;
    }
    const auto c = static_cast<std::size_t>(it->second);
    ++frames_per_class[c];
    for (std::size_t s = 0; s < kNumIntensityAus; ++s) acc[c][s].add(r.intensities[s]);
  }
  if (unreliable_detections > 0) {
    warn(diag, "excluded " + std::to_string(unreliable_detections) +
                   " reliable frames with failed or low-confidence detection");
  }

  std::vector<bool> populated(kNumExpressions);
  std::string empty;
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    populated[c] = frames_per_class[c] > 0;
    if (!populated[c]) empty += (empty.empty() ? "" : ", ") + std::string(expression_name(c));
  }
  if (!empty.empty()) {
    if (opts.empty_classes == EmptyClassPolicy::Reject ||
        std::none_of(populated.begin(), populated.end(), [](bool b) { return b; })) {
      throw ContractError("classes without reliable frames: " + empty);
    }
    warn(diag, "classes without reliable frames set to 0.5: " + empty);
  }

  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(kNumAus, kNumExpressions);
  KnowledgeMatrix k;
  k.stage = KnowledgeStage::PerDataset;
  k.datasets = 1;
  k.theta = theta;
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    if (!populated[c]) continue;
    const auto col = static_cast<Eigen::Index>(c);
    double sum = 0.0;
    for (std::size_t s = 0; s < kNumIntensityAus; ++s) {
      const auto row = static_cast<Eigen::Index>(intensity_slot_to_au(s));
      raw(row, col) = acc[c][s].finalize();
      sum += raw(row, col);
      k.support(row, col) = static_cast<int>(acc[c][s].count());
    }
    raw(static_cast<Eigen::Index>(kAu28Index), col) = sum / static_cast<double>(kNumIntensityAus);
    k.support(static_cast<Eigen::Index>(kAu28Index), col) = static_cast<int>(frames_per_class[c]);
  }
  k.values = center_and_squash(raw, populated);
  for (std::size_t c = 0; c < kNumExpressions; ++c)
    if (!populated[c]) k.values.col(static_cast<Eigen::Index>(c)).setConstant(0.5);
  return k;
}

enum class MidpointPolicy {
  FixedCompat,  ///< subtract 2.5 regardless of dataset count
  Generalized,  ///< subtract D/2
};

inline KnowledgeMatrix aggregate_knowledge(std::span<const KnowledgeMatrix> inputs,
                                           MidpointPolicy policy = MidpointPolicy::Generalized) {
  if (inputs.empty()) throw ContractError("aggregate_knowledge needs at least one matrix");
  KnowledgeMatrix out;
  out.values = Eigen::MatrixXd::Zero(kNumAus, kNumExpressions);
  out.support = Eigen::MatrixXi::Zero(kNumAus, kNumExpressions);
  for (const auto& m : inputs) {
    if (m.stage != KnowledgeStage::PerDataset) {
      throw ContractError("aggregate_knowledge input has stage " + std::string(stage_name(m.stage)) +
                          ", expected per-dataset");
    }
    if (m.values.rows() != static_cast<Eigen::Index>(kNumAus) ||
        m.values.cols() != static_cast<Eigen::Index>(kNumExpressions)) {
      throw ContractError("aggregate_knowledge input has wrong shape");
    }
    out.values += m.values;
    out.support += m.support;
  }
  const int d = static_cast<int>(inputs.size());
  const double mid = policy == MidpointPolicy::FixedCompat ? 2.5 : 0.5 * d;
  out.values = (out.values.array() - mid).unaryExpr([](double x) { return sigmoid(x); }).matrix();
  out.stage = KnowledgeStage::Aggregate;
  out.datasets = d;
  out.theta = inputs.front().theta;
  for (const auto& m : inputs)
    if (m.theta != out.theta) out.theta = -1.0;  // mixed thresholds
  return out;
}

/// Rescales aggregate knowledge onto the 0..5 intensity range used as loss weights.
inline KnowledgeMatrix scale_for_loss(const KnowledgeMatrix& m) {
  if (m.stage != KnowledgeStage::Aggregate) {
    throw ContractError("scale_for_loss expects stage aggregate, got " + std::string(stage_name(m.stage)));
  }
  KnowledgeMatrix out = m;
  out.values *= 5.0;
  out.stage = KnowledgeStage::LossScaled;
  return out;
}

// ---------------------------------------------------------------------------
// File format: a metadata preamble line, a header row and 18 AU rows, plus a
// sidecar "<path>.support.csv" with the same layout holding integer counts.

inline constexpr int kKnowledgeFileVersion = 1;

inline std::string support_sidecar_path(const std::string& path) { return path + ".support.csv"; }

namespace detail {

inline void write_grid_header(std::ostream& out) {
  out << "au";
  for (auto n : kExpressionNames) out << ',' << n;
  out << '\n';
}

template <typename Cell>
inline void read_grid(std::istream& in, const std::string& what, Cell&& cell) {
  std::string line;
  if (!csv::read_line(in, line)) throw ContractError("corrupt knowledge file: missing header in " + what);
  const auto header = csv::split(line);
  if (header.size() != kNumExpressions + 1) {
    throw ContractError("shape mismatch in " + what + ": expected 7 expression columns");
  }
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    if (expression_index(header[c + 1]) != c) throw ContractError("column order mismatch in " + what);
  }
  std::size_t rows = 0;
  while (csv::read_line(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (rows >= kNumAus) throw ContractError("shape mismatch in " + what + ": more than 18 rows");
    if (cells.size() != kNumExpressions + 1) {
      throw ContractError("corrupt knowledge file: row " + std::to_string(rows + 1) + " of " + what +
                          " has " + std::to_string(cells.size()) + " cells");
    }
    if (au_index(cells[0]) != rows) {
      throw ContractError("corrupt knowledge file, shape mismatch in " + what + ": expected row " +
                          std::string(au_name(rows)) + ", found " + std::string(cells[0]));
    }
    for (std::size_t c = 0; c < kNumExpressions; ++c) cell(rows, c, cells[c + 1]);
    ++rows;
  }
  if (rows != kNumAus) {
    throw ContractError("corrupt knowledge file, shape mismatch in " + what + ": " + std::to_string(rows) +
                        " rows, expected 18");
  }
}

}  // namespace detail

inline void export_knowledge(const KnowledgeMatrix& m, const std::string& path) {
  const auto report = validate_knowledge(m);
  if (!report.ok()) throw ContractError("refusing to export invalid knowledge: " + report.summary());
  {
    auto out = csv::open_out(path);
    out << "# audfer-knowledge version=" << kKnowledgeFileVersion << " stage=" << stage_name(m.stage)
        << " datasets=" << m.datasets << " theta=" << csv::format_double(m.theta)
        << " tool=" << kToolVersion << '\n';
    detail::write_grid_header(out);
    for (std::size_t a = 0; a < kNumAus; ++a) {
      out << au_name(a);
      for (std::size_t c = 0; c < kNumExpressions; ++c)
        out << ',' << csv::format_double(m.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)));
      out << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
  }
  auto out = csv::open_out(support_sidecar_path(path));
  detail::write_grid_header(out);
  for (std::size_t a = 0; a < kNumAus; ++a) {
    out << au_name(a);
    for (std::size_t c = 0; c < kNumExpressions; ++c)
      out << ',' << m.support(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + support_sidecar_path(path));
}

inline KnowledgeMatrix import_knowledge(const std::string& path) {
  auto in = csv::open_in(path);
  std::string line;
  if (!csv::read_line(in, line) || line.rfind("# audfer-knowledge", 0) != 0) {
    throw ContractError("corrupt knowledge file " + path + ": missing preamble");
  }
  const auto meta = csv::parse_metadata(line);
  const auto version = csv::find_meta(meta, "version");
  if (!version || csv::parse_int(*version, "version") != kKnowledgeFileVersion) {
    throw ContractError("knowledge file " + path + " has unsupported version");
  }
  const auto stage = csv::find_meta(meta, "stage");
  if (!stage) throw ContractError("knowledge file " + path + " has no stage");
  KnowledgeMatrix m;
  m.stage = parse_stage(*stage);
  m.datasets = static_cast<int>(csv::parse_int(csv::find_meta(meta, "datasets").value_or(""), "datasets"));
  m.theta = csv::parse_double(csv::find_meta(meta, "theta").value_or(""), "theta");
  m.values.setConstant(std::numeric_limits<double>::quiet_NaN());
  detail::read_grid(in, path, [&](std::size_t a, std::size_t c, std::string_view cell) {
    m.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = csv::parse_double(cell, path);
  });
  const std::string side = support_sidecar_path(path);
  if (!std::filesystem::exists(side)) throw ContractError("knowledge support sidecar missing: " + side);
  auto sin = csv::open_in(side);
  detail::read_grid(sin, side, [&](std::size_t a, std::size_t c, std::string_view cell) {
    m.support(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) =
        static_cast<int>(csv::parse_int(cell, side));
  });
  const auto report = validate_knowledge(m);
  if (!report.ok()) throw ContractError("invalid knowledge in " + path + ": " + report.summary());
  return m;
}

}  // namespace audfer
