#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "audfer/csv.hpp"
#include "audfer/domain.hpp"
#include "audfer/error.hpp"
#include "audfer/labeling.hpp"

namespace audfer {

/// Scalar loss with its gradient with respect to the logits.
struct LossValue {
  double value = 0.0;
  Eigen::MatrixXd grad;
};

/// Components of the mixed objective L = (1 - lambda) L_e + lambda L_AU.
struct LossBreakdown {
  double expression = 0.0;
  double au = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::size_t batch = 0;
  double factor = 5.0;
};

inline constexpr double kExpressionLossFactor = 5.0;

/// -(1/N) sum_i log(factor * softmax(logits_i)[label_i]).
///
/// The factor shifts the loss by -log(factor) and leaves the gradient, which is
/// (softmax - onehot) / N, untouched.
inline LossValue expression_loss(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                 double factor = kExpressionLossFactor) {
  const Eigen::Index n = logits.rows();
  if (n < 1) throw ContractError("expression_loss needs at least one sample");
  if (logits.cols() != static_cast<Eigen::Index>(kNumExpressions)) {
    throw ContractError("expression logits must have 7 columns");
  }
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ContractError("label count does not match batch");
  if (!(factor > 0.0)) throw ContractError("expression loss factor must be positive");

  LossValue out;
  out.grad.resize(n, logits.cols());
  const double log_factor = std::log(factor);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= static_cast<int>(kNumExpressions)) {
      throw ContractError("expression label " + std::to_string(y) + " out of range");
    }
    const double m = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    const double log_p = logits(i, y) - m - std::log(z);
    total += -(log_factor + log_p);
    out.grad.row(i) = e / z;
    out.grad(i, y) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value = total * inv_n;
  out.grad *= inv_n;
  return out;
}

enum class AuReduction {
  MeanOverElements,  ///< divide by N * 18
  MeanOverSamples,   ///< divide by N
};

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); }

/// Knowledge-weighted binary cross-entropy on AU logits.
///
/// Element (i, j) contributes
///   k[j, e_i] * (pw[e_i, j] * y_ij * log s(x_ij) + (1 - y_ij) * log(1 - s(x_ij)))
/// where e_i is the sample's expression; the loss is the negated mean.
inline LossValue au_loss(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets,
                         std::span<const int> expressions, const KnowledgeMatrix& knowledge,
                         const PosWeightSpec& pos_weight,
                         AuReduction reduction = AuReduction::MeanOverElements) {
  const Eigen::Index n = logits.rows();
  const auto aus = static_cast<Eigen::Index>(kNumAus);
  if (knowledge.stage != KnowledgeStage::LossScaled) {
    throw ContractError("au_loss expects loss-scaled knowledge, got " + std::string(stage_name(knowledge.stage)));
  }
  if (n < 1) throw ContractError("au_loss needs at least one sample");
  if (logits.cols() != aus || targets.rows() != n || targets.cols() != aus) {
    throw ContractError("au_loss shape mismatch: logits and targets must be Nx18");
  }
  if (static_cast<Eigen::Index>(expressions.size()) != n) throw ContractError("expression count does not match batch");
  if (knowledge.values.rows() != aus || knowledge.values.cols() != static_cast<Eigen::Index>(kNumExpressions)) {
    throw ContractError("knowledge must be 18x7");
  }
  if (pos_weight.values.rows() != static_cast<Eigen::Index>(kNumExpressions) || pos_weight.values.cols() != aus) {
    throw ContractError("pos-weights must be 7x18");
  }

  const double denom = reduction == AuReduction::MeanOverElements ? static_cast<double>(n * aus)
                                                                  : static_cast<double>(n);
  LossValue out;
  out.grad.resize(n, aus);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int e = expressions[static_cast<std::size_t>(i)];
    if (e < 0 || e >= static_cast<int>(kNumExpressions)) throw ContractError("expression label out of range");
    for (Eigen::Index j = 0; j < aus; ++j) {
      const double x = logits(i, j);
      const double y = targets(i, j);
      const double k = knowledge.values(j, e);
      const double pw = pos_weight.values(e, j);
      const double s = sigmoid(x);
      // log(1 - s(x)) = log s(-x)
      const double term = pw * y * log_sigmoid(x) + (1.0 - y) * log_sigmoid(-x);
      total += k * term;
      out.grad(i, j) = -k * (pw * y * (1.0 - s) - (1.0 - y) * s) / denom;
    }
  }
  out.value = -total / denom;
  return out;
}

inline double combined_loss(double expression, double au, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ContractError("lambda must lie in [0,1], got " + csv::format_double(lambda));
  }
  return (1.0 - lambda) * expression + lambda * au;
}

struct GradReport {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  double epsilon = 1e-5;
  std::size_t worst_index = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares an analytic gradient with central differences of `loss` at `point`.
inline GradReport finite_difference_check(const std::function<double(const Eigen::VectorXd&)>& loss,
                                          const Eigen::VectorXd& point, const Eigen::VectorXd& analytic,
                                          double epsilon = 1e-5) {
  if (point.size() != analytic.size()) throw ContractError("gradient size does not match point");
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  if (!std::isfinite(loss(point))) throw NumericError("loss is not finite at the probe point");
  GradReport report;
  report.epsilon = epsilon;
  Eigen::VectorXd x = point;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + epsilon;
    const double plus = loss(x);
    x(i) = orig - epsilon;
    const double minus = loss(x);
    x(i) = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("loss is not finite near coordinate " + std::to_string(i));
    }
    const double err = relative_error(analytic(i), (plus - minus) / (2.0 * epsilon));
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = static_cast<std::size_t>(i);
    }
  }
  report.parameters_checked = static_cast<std::size_t>(x.size());
  return report;
}

}  // namespace audfer
