#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "audfer/csv.hpp"
#include "audfer/domain.hpp"
#include "audfer/error.hpp"
#include "audfer/ingest.hpp"

namespace audfer {

/// Video-level binary AU label derived from per-frame presences.
struct VideoAULabel {
  std::string video_id;
  std::array<std::uint8_t, kNumAus> y{};
  std::size_t frame_count = 1;
  Expression expression = Expression::Happy;

  bool operator==(const VideoAULabel&) const = default;
};

/// AU j is on for the video when it is present in at least half of the frames.
inline VideoAULabel derive_video_au_labels(std::span<const FrameAURecord> frames, Expression expression) {
  if (frames.empty()) throw ContractError("cannot label a video with no frames");
  VideoAULabel label;
  label.video_id = frames.front().video_id;
  label.frame_count = frames.size();
  label.expression = expression;
  std::array<std::size_t, kNumAus> sums{};
  for (const auto& f : frames) {
    if (f.video_id != label.video_id) {
      throw ContractError("frames of videos \"" + label.video_id + "\" and \"" + f.video_id +
                          "\" mixed in one label");
    }
    for (std::size_t a = 0; a < kNumAus; ++a) sums[a] += f.presences[a];
  }
  // sum >= 0.5 n, compared in integers
  for (std::size_t a = 0; a < kNumAus; ++a) label.y[a] = 2 * sums[a] >= label.frame_count ? 1 : 0;
  return label;
}

enum class PosWeightStrategy { None, Global, Distinct, Minor };

inline std::string_view strategy_name(PosWeightStrategy s) {
  switch (s) {
    case PosWeightStrategy::None: return "none";
    case PosWeightStrategy::Global: return "global";
    case PosWeightStrategy::Distinct: return "distinct";
    case PosWeightStrategy::Minor: return "minor";
  }
  return "?";
}

inline PosWeightStrategy parse_strategy(std::string_view s) {
  for (auto k : {PosWeightStrategy::None, PosWeightStrategy::Global, PosWeightStrategy::Distinct,
                 PosWeightStrategy::Minor}) {
    if (strategy_name(k) == detail::trim(s)) return k;
  }
  throw ContractError("unknown pos-weight strategy \"" + std::string(s) + "\"");
}

/// Positive-class weights, one row per expression and one column per AU.
struct PosWeightSpec {
  PosWeightStrategy strategy = PosWeightStrategy::None;
  Eigen::MatrixXd values = Eigen::MatrixXd::Ones(kNumExpressions, kNumAus);
  std::size_t total_count = 0;
  std::array<std::size_t, kNumExpressions> class_counts{};
  std::string split = "train";
  std::vector<std::string> warnings;
};

inline constexpr double kPosWeightFloor = 1e-6;

namespace detail {

/// (count - positives) / positives, with the documented fallbacks for empty
/// denominators and zero numerators.
inline double pos_weight_ratio(std::size_t count, std::size_t positives, const std::string& where,
                               std::vector<std::string>& warnings) {
  if (positives == 0) {
    warnings.push_back(where + ": no positives, weight set to " + std::to_string(count));
    return static_cast<double>(count);
  }
  if (positives == count) {
    warnings.push_back(where + ": all positive, weight floored at 1e-6");
    return kPosWeightFloor;
  }
  return static_cast<double>(count - positives) / static_cast<double>(positives);
}

inline void count_classes(std::span<const VideoAULabel> labels, PosWeightSpec& spec) {
  if (labels.empty()) throw ContractError("pos-weight computation needs at least one video label");
  spec.total_count = labels.size();
  for (const auto& l : labels) ++spec.class_counts[static_cast<std::size_t>(l.expression)];
}

}  // namespace detail

inline PosWeightSpec pos_weight_none(std::span<const VideoAULabel> labels) {
  PosWeightSpec spec;
  detail::count_classes(labels, spec);
  return spec;
}

/// One weight per AU shared by all expressions: negatives / positives.
inline PosWeightSpec pos_weight_global(std::span<const VideoAULabel> labels) {
  PosWeightSpec spec;
  spec.strategy = PosWeightStrategy::Global;
  detail::count_classes(labels, spec);
  for (std::size_t a = 0; a < kNumAus; ++a) {
    std::size_t pos = 0;
    for (const auto& l : labels) pos += l.y[a];
    const double w = detail::pos_weight_ratio(labels.size(), pos, au_name(a), spec.warnings);
    spec.values.col(static_cast<Eigen::Index>(a)).setConstant(w);
  }
  return spec;
}

/// Per-expression weights computed within each class's videos.
inline PosWeightSpec pos_weight_distinct(std::span<const VideoAULabel> labels) {
  PosWeightSpec spec;
  spec.strategy = PosWeightStrategy::Distinct;
  detail::count_classes(labels, spec);
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    const std::size_t count = spec.class_counts[c];
    if (count == 0) {
      spec.warnings.push_back(std::string(expression_name(c)) + ": no videos, weights set to 1");
      continue;
    }
    for (std::size_t a = 0; a < kNumAus; ++a) {
      std::size_t pos = 0;
      for (const auto& l : labels)
        if (static_cast<std::size_t>(l.expression) == c) pos += l.y[a];
      spec.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)) = detail::pos_weight_ratio(
          count, pos, std::string(expression_name(c)) + "/" + au_name(a), spec.warnings);
    }
  }
  return spec;
}

/// Distinct weights on minor classes, ones on major classes.
inline PosWeightSpec pos_weight_minor(std::span<const VideoAULabel> labels) {
  PosWeightSpec spec = pos_weight_distinct(labels);
  spec.strategy = PosWeightStrategy::Minor;
  for (std::size_t c = 0; c < kNumExpressions; ++c)
    if (is_major_class(c)) spec.values.row(static_cast<Eigen::Index>(c)).setOnes();
  std::erase_if(spec.warnings, [](const std::string& w) {
    for (std::size_t c = 0; c < kNumExpressions; ++c)
      if (is_major_class(c) && w.rfind(std::string(expression_name(c)) + "/", 0) == 0) return true;
    return false;
  });
  return spec;
}

inline PosWeightSpec compute_pos_weights(std::span<const VideoAULabel> labels, PosWeightStrategy s) {
  switch (s) {
    case PosWeightStrategy::None: return pos_weight_none(labels);
    case PosWeightStrategy::Global: return pos_weight_global(labels);
    case PosWeightStrategy::Distinct: return pos_weight_distinct(labels);
    case PosWeightStrategy::Minor: return pos_weight_minor(labels);
  }
  throw ContractError("unknown strategy");
}

// ---------------------------------------------------------------------------
// Label and weight files.

inline void write_video_labels(std::ostream& out, std::span<const VideoAULabel> labels) {
  out << "# audfer-labels version=1\n";
  out << "video_id,expression,n";
  for (std::size_t a = 0; a < kNumAus; ++a) out << ',' << au_name(a);
  out << '\n';
  for (const auto& l : labels) {
    out << l.video_id << ',' << expression_name(l.expression) << ',' << l.frame_count;
    for (auto y : l.y) out << ',' << int(y);
    out << '\n';
  }
}

inline std::vector<VideoAULabel> read_video_labels(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw ContractError("empty label file");
  if (line.rfind("#", 0) == 0 && !csv::read_line(in, line)) throw ContractError("label file has no header");
  const auto header = csv::split(line);
  if (header.size() != 3 + kNumAus || header[0] != "video_id" || header[1] != "expression" ||
      header[2] != "n") {
    throw ContractError("label file header must be video_id,expression,n followed by 18 AU columns");
  }
  for (std::size_t a = 0; a < kNumAus; ++a)
    if (au_index(header[3 + a]) != a) throw ContractError("label file AU columns out of order");
  std::vector<VideoAULabel> out;
  std::size_t row = 1;
  while (csv::read_line(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    const std::string ctx = "label row " + std::to_string(row);
    if (cells.size() != header.size()) throw ContractError(ctx + " has wrong cell count");
    VideoAULabel l;
    l.video_id = std::string(cells[0]);
    l.expression = to_expression(expression_index(cells[1]));
    const auto n = csv::parse_int(cells[2], ctx);
    if (n < 1) throw ContractError(ctx + ": frame count must be >= 1");
    l.frame_count = static_cast<std::size_t>(n);
    for (std::size_t a = 0; a < kNumAus; ++a) {
      const auto v = csv::parse_int(cells[3 + a], ctx);
      if (v != 0 && v != 1) throw ContractError(ctx + ": AU label must be 0 or 1");
      l.y[a] = static_cast<std::uint8_t>(v);
    }
    out.push_back(std::move(l));
  }
  return out;
}

inline void write_pos_weights(std::ostream& out, const PosWeightSpec& spec) {
  out << "# audfer-pos-weights version=1 strategy=" << strategy_name(spec.strategy)
      << " split=" << spec.split << " count=" << spec.total_count << " class_counts=";
  for (std::size_t c = 0; c < kNumExpressions; ++c) out << (c ? ":" : "") << spec.class_counts[c];
  out << '\n';
  out << "expression";
  for (std::size_t a = 0; a < kNumAus; ++a) out << ',' << au_name(a);
  out << '\n';
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    out << expression_name(c);
    for (std::size_t a = 0; a < kNumAus; ++a)
      out << ',' << csv::format_double(spec.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)));
    out << '\n';
  }
}

inline PosWeightSpec read_pos_weights(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line) || line.rfind("# audfer-pos-weights", 0) != 0) {
    throw ContractError("pos-weight file lacks its metadata line");
  }
  const auto meta = csv::parse_metadata(line);
  PosWeightSpec spec;
  spec.strategy = parse_strategy(csv::find_meta(meta, "strategy").value_or(""));
  spec.split = csv::find_meta(meta, "split").value_or("train");
  spec.total_count = static_cast<std::size_t>(csv::parse_int(csv::find_meta(meta, "count").value_or("0"), "count"));
  if (auto cc = csv::find_meta(meta, "class_counts")) {
    const auto parts = csv::split(*cc, ':');
    if (parts.size() != kNumExpressions) throw ContractError("class_counts must list 7 values");
    for (std::size_t c = 0; c < kNumExpressions; ++c)
      spec.class_counts[c] = static_cast<std::size_t>(csv::parse_int(parts[c], "class_counts"));
  }
  if (!csv::read_line(in, line)) throw ContractError("pos-weight file has no header");
  std::size_t rows = 0;
  while (csv::read_line(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (rows >= kNumExpressions || cells.size() != kNumAus + 1) {
      throw ContractError("pos-weight file must hold a 7x18 matrix");
    }
    if (expression_index(cells[0]) != rows) throw ContractError("pos-weight rows out of order");
    for (std::size_t a = 0; a < kNumAus; ++a) {
      const double v = csv::parse_double(cells[a + 1], "pos-weight file");
      if (!(v > 0.0) || !std::isfinite(v)) throw ContractError("pos-weights must be finite and positive");
      spec.values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(a)) = v;
    }
    ++rows;
  }
  if (rows != kNumExpressions) throw ContractError("pos-weight file must hold a 7x18 matrix");
  return spec;
}

}  // namespace audfer
