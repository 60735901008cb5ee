#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "audfer/error.hpp"

namespace audfer {

inline constexpr std::size_t kNumExpressions = 7;
inline constexpr std::size_t kNumAus = 18;
inline constexpr std::size_t kNumIntensityAus = 17;
inline constexpr std::size_t kAu28Index = 16;

/// Seven basic expressions in reporting order.
enum class Expression : int {
  Happy = 0,
  Sad = 1,
  Neutral = 2,
  Angry = 3,
  Surprise = 4,
  Disgust = 5,
  Fear = 6,
};

inline constexpr std::array<std::string_view, kNumExpressions> kExpressionNames{
    "Happy", "Sad", "Neutral", "Angry", "Surprise", "Disgust", "Fear"};

inline constexpr std::array<int, kNumAus> kAuNumbers{
    1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45};

namespace detail {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Case-insensitive lookup of an expression label.
inline std::size_t expression_index(std::string_view name) {
  const std::string key = detail::to_lower(detail::trim(name));
  for (std::size_t i = 0; i < kNumExpressions; ++i) {
    if (detail::to_lower(kExpressionNames[i]) == key) return i;
  }
  throw ContractError("unknown expression label \"" + std::string(name) + "\"");
}

inline std::string_view expression_name(std::size_t index) {
  if (index >= kNumExpressions) {
    throw ContractError("expression index out of range: " + std::to_string(index));
  }
  return kExpressionNames[index];
}

inline std::string_view expression_name(Expression e) {
  return expression_name(static_cast<std::size_t>(e));
}

inline Expression to_expression(std::size_t index) {
  if (index >= kNumExpressions) {
    throw ContractError("expression index out of range: " + std::to_string(index));
  }
  return static_cast<Expression>(index);
}

/// "AU01" style name of presence slot `index`.
inline std::string au_name(std::size_t index) {
  if (index >= kNumAus) {
    throw ContractError("AU index out of range: " + std::to_string(index));
  }
  const int n = kAuNumbers[index];
  return std::string("AU") + (n < 10 ? "0" : "") + std::to_string(n);
}

inline std::size_t au_index(std::string_view name) {
  const std::string_view t = detail::trim(name);
  for (std::size_t i = 0; i < kNumAus; ++i) {
    if (au_name(i) == t) return i;
  }
  throw ContractError("unknown AU \"" + std::string(name) + "\"");
}

/// AU28 is reported only as a presence flag.
inline constexpr bool has_intensity(std::size_t au) { return au != kAu28Index; }

/// Maps an intensity slot (0..16) to its presence index (0..17).
inline constexpr std::size_t intensity_slot_to_au(std::size_t slot) {
  return slot < kAu28Index ? slot : slot + 1;
}

inline constexpr bool is_major_class(Expression e) {
  return e == Expression::Happy || e == Expression::Sad ||
         e == Expression::Angry || e == Expression::Neutral;
}

inline constexpr bool is_major_class(std::size_t index) {
  return index < kNumExpressions && is_major_class(static_cast<Expression>(index));
}

struct MajorMinorPartition {
  std::vector<Expression> majors;
  std::vector<Expression> minors;
};

inline MajorMinorPartition major_minor_partition() {
  MajorMinorPartition p;
  for (std::size_t i = 0; i < kNumExpressions; ++i) {
    (is_major_class(i) ? p.majors : p.minors).push_back(static_cast<Expression>(i));
  }
  return p;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

enum class KnowledgeStage { PerDataset, Aggregate, LossScaled };

inline std::string_view stage_name(KnowledgeStage s) {
  switch (s) {
    case KnowledgeStage::PerDataset: return "per-dataset";
    case KnowledgeStage::Aggregate: return "aggregate";
    case KnowledgeStage::LossScaled: return "loss-scaled";
  }
  return "?";
}

inline KnowledgeStage parse_stage(std::string_view s) {
  if (s == "per-dataset") return KnowledgeStage::PerDataset;
  if (s == "aggregate") return KnowledgeStage::Aggregate;
  if (s == "loss-scaled") return KnowledgeStage::LossScaled;
  throw ContractError("unknown knowledge stage \"" + std::string(s) + "\"");
}

/// Upper bound of the open interval every cell must lie in.
inline double stage_upper_bound(KnowledgeStage s) {
  return s == KnowledgeStage::LossScaled ? 5.0 : 1.0;
}

/// AU-expression weight matrix, stored AU-major (18 rows x 7 columns).
struct KnowledgeMatrix {
  Eigen::MatrixXd values = Eigen::MatrixXd::Constant(kNumAus, kNumExpressions, 0.5);
  KnowledgeStage stage = KnowledgeStage::PerDataset;
  int datasets = 1;
  double theta = 0.5;
  Eigen::MatrixXi support = Eigen::MatrixXi::Zero(kNumAus, kNumExpressions);

  /// The 18 AU weights associated with one expression.
  Eigen::VectorXd for_expression(std::size_t expr) const { return values.col(static_cast<Eigen::Index>(expr)); }

  bool operator==(const KnowledgeMatrix& o) const {
    return stage == o.stage && datasets == o.datasets &&
           (theta == o.theta || (std::isnan(theta) && std::isnan(o.theta))) &&
           values.rows() == o.values.rows() && values.cols() == o.values.cols() &&
           values == o.values && support.rows() == o.support.rows() &&
           support.cols() == o.support.cols() && support == o.support;
  }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < violations.size(); ++i) os << (i ? "; " : "") << violations[i];
    return os.str();
  }
};

inline ValidationReport validate_knowledge(const KnowledgeMatrix& m) {
  ValidationReport r;
  const auto rows = m.values.rows();
  const auto cols = m.values.cols();
  if (rows != static_cast<Eigen::Index>(kNumAus) || cols != static_cast<Eigen::Index>(kNumExpressions)) {
    r.violations.push_back("shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                           ", expected 18x7");
  }
  if (m.support.rows() != rows || m.support.cols() != cols) {
    r.violations.push_back("support shape does not match values");
  }
  if (m.datasets < 1) r.violations.push_back("dataset count must be >= 1");
  const double hi = stage_upper_bound(m.stage);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = m.values(i, j);
      std::string where = "(" + std::to_string(i) + "," + std::to_string(j) + ")";
      if (std::isnan(v)) {
        r.violations.push_back("NaN at " + where);
      } else if (!(v > 0.0 && v < hi)) {
        std::ostringstream os;
        os << "value " << v << " at " << where << " outside (0," << hi << ") for stage "
           << stage_name(m.stage);
        r.violations.push_back(os.str());
      }
    }
  }
  for (Eigen::Index i = 0; i < m.support.size(); ++i) {
    if (m.support.data()[i] < 0) {
      r.violations.push_back("negative support count");
      break;
    }
  }
  return r;
}

}  // namespace audfer
