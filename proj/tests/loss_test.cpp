#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "audfer/loss.hpp"

using namespace audfer;

namespace {

KnowledgeMatrix loss_scaled(double v) {
  KnowledgeMatrix k;
  k.stage = KnowledgeStage::LossScaled;
  k.values.setConstant(v);
  return k;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST(ExpressionLoss, UniformLogitsGiveLogSeven) {
  const Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(3, 7);
  const std::vector<int> y{0, 3, 6};
  EXPECT_NEAR(expression_loss(logits, y, 1.0).value, 1.9459101490553132, 1e-15);
  EXPECT_NEAR(expression_loss(logits, y).value, 1.9459101490553132 - std::log(5.0), 1e-15);
}

TEST(ExpressionLoss, FactorShiftsValueOnly) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto logits = random_matrix(rng, 5, 7, 3.0);
    std::vector<int> y(5);
    for (auto& v : y) v = static_cast<int>(rng() % 7);
    const auto a = expression_loss(logits, y, 5.0);
    const auto b = expression_loss(logits, y, 1.0);
    EXPECT_NEAR(a.value - b.value, -std::log(5.0), 1e-12);
    EXPECT_LE((a.grad - b.grad).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ExpressionLoss, StableForLargeLogits) {
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(1, 7);
  logits(0, 2) = 800.0;
  const std::vector<int> right{2}, wrong{0};
  EXPECT_NEAR(expression_loss(logits, right, 1.0).value, 0.0, 1e-12);
  EXPECT_NEAR(expression_loss(logits, wrong, 1.0).value, 800.0, 1e-9);
}

TEST(ExpressionLoss, RejectsBadInput) {
  const Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(2, 7);
  EXPECT_THROW(expression_loss(logits, std::vector<int>{0}), ContractError);
  EXPECT_THROW(expression_loss(logits, std::vector<int>{0, 7}), ContractError);
  EXPECT_THROW(expression_loss(Eigen::MatrixXd::Zero(2, 6), std::vector<int>{0, 1}), ContractError);
}

TEST(AuLoss, ZeroLogitsGiveLogTwo) {
  const Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(2, 18);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(2, 18);
  y(0, 3) = 1;
  const std::vector<int> e{1, 4};
  PosWeightSpec pw;
  EXPECT_NEAR(au_loss(logits, y, e, loss_scaled(1.0), pw).value, std::log(2.0), 1e-15);
  EXPECT_NEAR(au_loss(logits, y, e, loss_scaled(1.0), pw, AuReduction::MeanOverSamples).value,
              18.0 * std::log(2.0), 1e-13);
}

TEST(AuLoss, ReducesToPlainBinaryCrossEntropy) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_matrix(rng, 6, 18, 2.0);
    Eigen::MatrixXd y(6, 18);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = coin(rng);
    const std::vector<int> e{0, 1, 2, 3, 4, 5};
    double direct = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-x.data()[i]));
      direct -= y.data()[i] * std::log(p) + (1.0 - y.data()[i]) * std::log(1.0 - p);
    }
    direct /= static_cast<double>(x.size());
    EXPECT_NEAR(au_loss(x, y, e, loss_scaled(1.0), PosWeightSpec{}).value, direct, 1e-12);
  }
}

TEST(AuLoss, KnowledgeAndWeightsSelectCells) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 18);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(1, 18);
  y(0, 0) = 1;
  const std::vector<int> e{5};
  auto k = loss_scaled(1e-9);
  k.values(0, 5) = 2.0;
  PosWeightSpec pw;
  pw.values(5, 0) = 3.0;
  // only cell (AU01, Disgust) matters: -2 * 3 * log(1/2) / 18
  EXPECT_NEAR(au_loss(x, y, e, k, pw).value, 6.0 * std::log(2.0) / 18.0, 1e-9);
}

TEST(AuLoss, RequiresLossScaledKnowledge) {
  KnowledgeMatrix k;
  EXPECT_THROW(au_loss(Eigen::MatrixXd::Zero(1, 18), Eigen::MatrixXd::Zero(1, 18), std::vector<int>{0}, k,
                       PosWeightSpec{}),
               ContractError);
}

TEST(AuLoss, FiniteAtExtremeLogits) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 18, 1000.0);
  x(0, 1) = -1000.0;
  const Eigen::MatrixXd y = Eigen::MatrixXd::Zero(1, 18);
  const auto l = au_loss(x, y, std::vector<int>{0}, loss_scaled(1.0), PosWeightSpec{});
  EXPECT_TRUE(std::isfinite(l.value));
  EXPECT_TRUE(l.grad.allFinite());
}

TEST(Combined, MixesAndValidates) {
  EXPECT_DOUBLE_EQ(combined_loss(2.0, 4.0, 0.25), 2.5);
  EXPECT_DOUBLE_EQ(combined_loss(2.0, 4.0, 0.0), 2.0);
  EXPECT_THROW(combined_loss(1.0, 1.0, 1.5), ContractError);
  EXPECT_THROW(combined_loss(1.0, 1.0, -0.1), ContractError);
}

TEST(FiniteDifference, ExpressionAndAuGradients) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_matrix(rng, 3, 7, 2.0);
    std::vector<int> y{static_cast<int>(rng() % 7), static_cast<int>(rng() % 7), static_cast<int>(rng() % 7)};
    const auto r = finite_difference_check(
        [&](const Eigen::VectorXd& v) { return expression_loss(v.reshaped(3, 7), y).value; }, x.reshaped(),
        expression_loss(x, y).grad.reshaped());
    EXPECT_LT(r.max_relative_error, 1e-5);
    EXPECT_EQ(r.parameters_checked, 21u);
  }
}

TEST(FiniteDifference, DetectsWrongGradient) {
  const Eigen::VectorXd p = Eigen::VectorXd::Ones(3);
  const Eigen::VectorXd wrong = Eigen::VectorXd::Zero(3);
  const auto r = finite_difference_check([](const Eigen::VectorXd& v) { return v.squaredNorm(); }, p, wrong);
  EXPECT_GT(r.max_relative_error, 0.5);
  EXPECT_THROW(finite_difference_check([](const Eigen::VectorXd&) { return std::nan(""); }, p, wrong),
               NumericError);
}
