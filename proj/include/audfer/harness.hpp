#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "audfer/csv.hpp"
#include "audfer/domain.hpp"
#include "audfer/error.hpp"
#include "audfer/knowledge.hpp"
#include "audfer/labeling.hpp"
#include "audfer/loss.hpp"
#include "audfer/model.hpp"
#include "audfer/synth.hpp"

namespace audfer {

struct TrainConfig {
  double lambda = 0.2;
  PosWeightStrategy strategy = PosWeightStrategy::Distinct;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{128};
  double expression_factor = kExpressionLossFactor;
  AuReduction au_reduction = AuReduction::MeanOverElements;
  std::string knowledge_path;
  std::string pos_weight_path;
  std::string train_features;
  std::string train_labels;
  std::string test_features;
  std::string test_labels;
};

/// Features with expression and AU targets, row-aligned.
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<int> expressions;
  Eigen::MatrixXd au_targets;
  std::vector<std::string> ids;

  std::size_t size() const { return expressions.size(); }
};

inline Dataset to_dataset(const SynthDataset& s) {
  Dataset d;
  d.features = s.features;
  d.expressions = s.expressions;
  d.au_targets = s.au_targets();
  for (const auto& l : s.labels) d.ids.push_back(l.video_id);
  return d;
}

inline Dataset make_dataset(Eigen::MatrixXd features, std::span<const VideoAULabel> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ContractError("feature rows (" + std::to_string(features.rows()) + ") do not match label rows (" +
                        std::to_string(labels.size()) + ")");
  }
  Dataset d;
  d.features = std::move(features);
  d.au_targets.resize(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(kNumAus));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    d.expressions.push_back(static_cast<int>(labels[i].expression));
    d.ids.push_back(labels[i].video_id);
    for (std::size_t a = 0; a < kNumAus; ++a)
      d.au_targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = labels[i].y[a];
  }
  return d;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  Eigen::Matrix<long long, kNumExpressions, kNumExpressions> confusion =
      Eigen::Matrix<long long, kNumExpressions, kNumExpressions>::Zero();
  /// NaN for classes without true samples.
  std::array<double, kNumExpressions> per_class_recall{};
  double war = 0.0;
  double uar = 0.0;
  std::size_t samples = 0;
};

/// Index of the largest score; ties go to the lowest index.
inline int argmax_row(const Eigen::MatrixXd& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    if (m(row, j) > m(row, best)) best = static_cast<int>(j);
  return best;
}

inline EvalReport report_from_confusion(const Eigen::Matrix<long long, kNumExpressions, kNumExpressions>& confusion) {
  EvalReport r;
  r.confusion = confusion;
  const long long total = confusion.sum();
  if (total <= 0) throw ContractError("cannot evaluate an empty confusion matrix");
  r.samples = static_cast<std::size_t>(total);
  r.war = static_cast<double>(confusion.trace()) / static_cast<double>(total);
  double sum = 0.0;
  int populated = 0;
  for (std::size_t c = 0; c < kNumExpressions; ++c) {
    const long long row = confusion.row(static_cast<Eigen::Index>(c)).sum();
    if (row == 0) {
      r.per_class_recall[c] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r.per_class_recall[c] =
        static_cast<double>(confusion(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c))) / static_cast<double>(row);
    sum += r.per_class_recall[c];
    ++populated;
  }
  r.uar = sum / populated;
  return r;
}

inline EvalReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw ContractError("cannot evaluate empty data");
  if (truth.size() != predicted.size()) throw ContractError("prediction count does not match labels");
  Eigen::Matrix<long long, kNumExpressions, kNumExpressions> cm =
      Eigen::Matrix<long long, kNumExpressions, kNumExpressions>::Zero();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= 7 || predicted[i] < 0 || predicted[i] >= 7) {
      throw ContractError("class index out of range in evaluation");
    }
    ++cm(truth[i], predicted[i]);
  }
  return report_from_confusion(cm);
}

inline std::vector<int> predict(const ModelParams& params, const Eigen::MatrixXd& features) {
  const auto pass = forward(params, features);
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(pass.expression_logits, i);
  return out;
}

inline EvalReport evaluate(const ModelParams& params, const Dataset& data) {
  if (data.size() == 0) throw ContractError("cannot evaluate empty data");
  const auto pred = predict(params, data.features);
  return evaluate_predictions(data.expressions, pred);
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double expression_loss = 0.0;
  double au_loss = 0.0;
  double total_loss = 0.0;
  double train_war = 0.0;
  double train_uar = 0.0;
  double test_war = std::numeric_limits<double>::quiet_NaN();
  double test_uar = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  OptimizerState optimizer;
  std::vector<EpochLog> logs;
};

/// Batch losses and head gradients for the mixed objective.
struct BatchObjective {
  LossBreakdown breakdown;
  Eigen::MatrixXd d_expression;
  Eigen::MatrixXd d_au;
};

inline BatchObjective batch_objective(const ForwardPass& pass, std::span<const int> expressions,
                                      const Eigen::MatrixXd& au_targets, const KnowledgeMatrix& knowledge,
                                      const PosWeightSpec& pos_weight, double lambda, double factor,
                                      AuReduction reduction) {
  BatchObjective o;
  auto le = expression_loss(pass.expression_logits, expressions, factor);
  auto la = au_loss(pass.au_logits, au_targets, expressions, knowledge, pos_weight, reduction);
  o.breakdown.expression = le.value;
  o.breakdown.au = la.value;
  o.breakdown.lambda = lambda;
  o.breakdown.total = combined_loss(le.value, la.value, lambda);
  o.breakdown.batch = expressions.size();
  o.breakdown.factor = factor;
  o.d_expression = (1.0 - lambda) * le.grad;
  o.d_au = lambda * la.grad;
  return o;
}

namespace detail {

inline Dataset take_rows(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.features.resize(n, d.features.cols());
  b.au_targets.resize(n, d.au_targets.cols());
  b.expressions.resize(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
    b.features.row(i) = d.features.row(r);
    b.au_targets.row(i) = d.au_targets.row(r);
    b.expressions[static_cast<std::size_t>(i)] = d.expressions[static_cast<std::size_t>(r)];
  }
  return b;
}

}  // namespace detail

inline void validate_train_inputs(const TrainConfig& cfg, const Dataset& data, const KnowledgeMatrix& knowledge) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ContractError("lambda must lie in [0,1]");
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw ContractError("epochs and batch size must be positive");
  if (data.size() == 0) throw ContractError("training data is empty");
  if (data.features.rows() != static_cast<Eigen::Index>(data.size()) ||
      data.au_targets.rows() != static_cast<Eigen::Index>(data.size()) ||
      data.au_targets.cols() != static_cast<Eigen::Index>(kNumAus)) {
    throw ContractError("training data shapes are inconsistent");
  }
  if (knowledge.stage != KnowledgeStage::LossScaled) throw ContractError("training needs loss-scaled knowledge");
}

/// Mini-batch training of the mixed objective. lambda = 0 is the
/// expression-only baseline. With `checkpoint_path` set, a non-finite loss
/// writes the last good parameters there before aborting.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const KnowledgeMatrix& knowledge,
                         const PosWeightSpec& pos_weight, const Dataset* test = nullptr,
                         const std::string& checkpoint_path = {}) {
  validate_train_inputs(cfg, data, knowledge);
  TrainResult result;
  result.params = init_params(cfg.seed, static_cast<std::size_t>(data.features.cols()), cfg.hidden);
  result.optimizer = make_optimizer(result.params, cfg.learning_rate, cfg.weight_decay);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_e = 0.0, sum_a = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Dataset batch = detail::take_rows(data, std::span(order).subspan(start, end - start));
      const auto pass = forward(result.params, batch.features);
      const auto obj = batch_objective(pass, batch.expressions, batch.au_targets, knowledge, pos_weight, cfg.lambda,
                                       cfg.expression_factor, cfg.au_reduction);
      if (!std::isfinite(obj.breakdown.total)) {
        if (!checkpoint_path.empty()) save_checkpoint(result.params, &result.optimizer, checkpoint_path);
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) +
                           (checkpoint_path.empty() ? "" : "; last good checkpoint written to " + checkpoint_path));
      }
      const double w = static_cast<double>(end - start);
      sum_e += w * obj.breakdown.expression;
      sum_a += w * obj.breakdown.au;
      const auto grads = backward(result.params, pass, obj.d_expression, obj.d_au);
      optimizer_step(result.params, grads, result.optimizer);
    }
    EpochLog log;
    log.epoch = epoch;
    log.expression_loss = sum_e / static_cast<double>(data.size());
    log.au_loss = sum_a / static_cast<double>(data.size());
    log.total_loss = combined_loss(log.expression_loss, log.au_loss, cfg.lambda);
    const auto tr = evaluate(result.params, data);
    log.train_war = tr.war;
    log.train_uar = tr.uar;
    if (test && test->size() > 0) {
      const auto te = evaluate(result.params, *test);
      log.test_war = te.war;
      log.test_uar = te.uar;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);
  }
  return result;
}

/// Losses of the full dataset at the given parameters, without updating them.
inline LossBreakdown evaluate_objective(const ModelParams& params, const Dataset& data, const KnowledgeMatrix& knowledge,
                                        const PosWeightSpec& pos_weight, double lambda,
                                        double factor = kExpressionLossFactor,
                                        AuReduction reduction = AuReduction::MeanOverElements) {
  const auto pass = forward(params, data.features);
  return batch_objective(pass, data.expressions, data.au_targets, knowledge, pos_weight, lambda, factor, reduction)
      .breakdown;
}

// ---------------------------------------------------------------------------
// Gradient checks

struct GradcheckResult {
  GradReport expression;
  GradReport au;
  GradReport model;
};

/// One random instance per loss: logits of the expression loss, logits of
/// the AU loss, and every parameter of a small model under the mixed objective.
inline GradcheckResult gradcheck_instance(std::uint64_t seed, std::size_t batch = 4, double epsilon = 1e-5,
                                          std::size_t feature_dim = 8, std::vector<std::size_t> hidden = {4}) {
  if (batch == 0) throw ContractError("gradcheck batch must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(kNumExpressions) - 1);
  const auto n = static_cast<Eigen::Index>(batch);
  const auto e7 = static_cast<Eigen::Index>(kNumExpressions);
  const auto a18 = static_cast<Eigen::Index>(kNumAus);
  auto fill = [&](Eigen::MatrixXd& m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
  };

  std::vector<int> labels(batch);
  for (auto& l : labels) l = cls(rng);
  Eigen::MatrixXd targets(n, a18);
  for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] = unit(rng) < 0.5 ? 1.0 : 0.0;
  KnowledgeMatrix k;
  k.stage = KnowledgeStage::LossScaled;
  for (Eigen::Index i = 0; i < k.values.size(); ++i) k.values.data()[i] = 0.05 + 4.9 * unit(rng);
  PosWeightSpec pw;
  pw.strategy = PosWeightStrategy::Distinct;
  for (Eigen::Index i = 0; i < pw.values.size(); ++i) pw.values.data()[i] = 0.1 + 4.0 * unit(rng);
  const double lambda = unit(rng);

  GradcheckResult out;
  {
    Eigen::MatrixXd logits(n, e7);
    fill(logits, 2.0);
    const auto analytic = expression_loss(logits, labels).grad;
    const Eigen::VectorXd point = logits.reshaped();
    out.expression = finite_difference_check(
        [&](const Eigen::VectorXd& v) { return expression_loss(v.reshaped(n, e7), labels).value; }, point,
        analytic.reshaped(), epsilon);
  }
  {
    Eigen::MatrixXd logits(n, a18);
    fill(logits, 2.0);
    const auto analytic = au_loss(logits, targets, labels, k, pw).grad;
    const Eigen::VectorXd point = logits.reshaped();
    out.au = finite_difference_check(
        [&](const Eigen::VectorXd& v) { return au_loss(v.reshaped(n, a18), targets, labels, k, pw).value; }, point,
        analytic.reshaped(), epsilon);
  }
  {
    ModelParams params = init_params(seed, feature_dim, hidden);
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(feature_dim));
    fill(x, 1.0);
    auto objective = [&](const ModelParams& p) {
      const auto pass = forward(p, x);
      return batch_objective(pass, labels, targets, k, pw, lambda, kExpressionLossFactor,
                             AuReduction::MeanOverElements);
    };
    const auto pass = forward(params, x);
    const auto o = objective(params);
    const auto grads = backward(params, pass, o.d_expression, o.d_au);
    ModelParams probe = params;
    out.model = finite_difference_check(
        [&](const Eigen::VectorXd& v) {
          unflatten(probe, v);
          return objective(probe).breakdown.total;
        },
        flatten(params), flatten(grads), epsilon);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmarks, sweeps and strategy comparison

/// One replicate: train and test splits plus the knowledge and video labels
/// derived from the training split.
struct Benchmark {
  Dataset train;
  Dataset test;
  std::vector<VideoAULabel> train_labels;
  KnowledgeMatrix knowledge;  // loss-scaled
};

/// Runs the extraction pipeline on a synthetic training split, treating the
/// true labels as one-hot frame predictions.
inline KnowledgeMatrix knowledge_from_synthetic(const SynthDataset& d, double theta = 0.5,
                                                EmptyClassPolicy empty = EmptyClassPolicy::Reject) {
  const auto frames = to_frame_records(d);
  const auto preds = to_oracle_predictions(d);
  const auto reliable = filter_reliable_frames(preds, theta);
  ExtractionOptions opts;
  opts.empty_classes = empty;
  const KnowledgeMatrix per = compute_dataset_knowledge(frames, reliable, theta, opts);
  return scale_for_loss(aggregate_knowledge(std::span(&per, 1), MidpointPolicy::Generalized));
}

/// Default imbalanced benchmark: 2000 training and 2000 test samples.
inline Benchmark make_synthetic_benchmark(SynthSpec spec, std::uint64_t seed, std::size_t test_size = 2000) {
  spec.seed = seed;
  const SynthDataset tr = generate_dataset(spec, 0);
  SynthSpec test_spec = spec;
  test_spec.total = test_size;
  const SynthDataset te = generate_dataset(test_spec, 1);
  Benchmark b;
  b.train = to_dataset(tr);
  b.test = to_dataset(te);
  b.train_labels = tr.labels;
  b.knowledge = knowledge_from_synthetic(tr);
  return b;
}

struct ResultRow {
  std::string name;
  double lambda = 0.0;
  PosWeightStrategy strategy = PosWeightStrategy::None;
  double war = 0.0;
  double uar = 0.0;
  std::array<double, kNumExpressions> per_class{};
  std::size_t replicates = 0;
  bool major_rows_all_ones = false;
};

namespace detail {

inline double nan_mean(double a, double b, std::size_t k) {
  if (std::isnan(b)) return a;
  return a + (b - a) / static_cast<double>(k);
}

}  // namespace detail

/// Trains and evaluates one configuration on every replicate; the model seed
/// of replicate r is cfg.seed + r. Metrics are averaged over replicates.
inline ResultRow run_replicates(const TrainConfig& cfg, std::span<const Benchmark> replicates) {
  if (replicates.empty()) throw ContractError("at least one replicate is required");
  ResultRow row;
  row.lambda = cfg.lambda;
  row.strategy = cfg.strategy;
  row.replicates = replicates.size();
  row.major_rows_all_ones = true;
  std::array<std::size_t, kNumExpressions> populated{};
  for (std::size_t r = 0; r < replicates.size(); ++r) {
    const auto& b = replicates[r];
    TrainConfig c = cfg;
    c.seed = cfg.seed + r;
    const PosWeightSpec pw = compute_pos_weights(b.train_labels, cfg.strategy);
    for (std::size_t e = 0; e < kNumExpressions; ++e)
      if (is_major_class(e) && !(pw.values.row(static_cast<Eigen::Index>(e)).array() == 1.0).all())
        row.major_rows_all_ones = false;
    const auto trained = train(c, b.train, b.knowledge, pw);
    const auto rep = evaluate(trained.params, b.test);
    row.war += rep.war / static_cast<double>(replicates.size());
    row.uar += rep.uar / static_cast<double>(replicates.size());
    for (std::size_t e = 0; e < kNumExpressions; ++e) {
      if (std::isnan(rep.per_class_recall[e])) continue;
      ++populated[e];
      row.per_class[e] = detail::nan_mean(row.per_class[e], rep.per_class_recall[e], populated[e]);
    }
  }
  for (std::size_t e = 0; e < kNumExpressions; ++e)
    if (populated[e] == 0) row.per_class[e] = std::numeric_limits<double>::quiet_NaN();
  return row;
}

/// One averaged row per lambda in `grid`.
inline std::vector<ResultRow> lambda_sweep(const TrainConfig& cfg, std::span<const double> grid,
                                           std::span<const Benchmark> replicates) {
  if (grid.empty()) throw ContractError("lambda grid is empty");
  for (double l : grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ContractError("lambda grid values must lie in [0,1]");
  std::vector<ResultRow> rows;
  for (double l : grid) {
    TrainConfig c = cfg;
    c.lambda = l;
    auto row = run_replicates(c, replicates);
    std::ostringstream name;
    name << "lambda=" << csv::format_double(l);
    row.name = name.str();
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(i / 10.0);
  return g;
}

/// Table layout of weighting strategies. `none` is the expression-only
/// baseline (lambda = 0); the others train at cfg.lambda.
inline std::vector<ResultRow> strategy_compare(const TrainConfig& cfg, std::span<const PosWeightStrategy> strategies,
                                               std::span<const Benchmark> replicates) {
  std::vector<ResultRow> rows;
  for (auto s : strategies) {
    TrainConfig c = cfg;
    c.strategy = s;
    if (s == PosWeightStrategy::None) c.lambda = 0.0;
    auto row = run_replicates(c, replicates);
    row.name = s == PosWeightStrategy::None ? "baseline" : std::string(strategy_name(s)) + " pos.";
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double minor_class_mean(const std::array<double, kNumExpressions>& per_class) {
  double s = 0.0;
  int n = 0;
  for (std::size_t e = 0; e < kNumExpressions; ++e) {
    if (is_major_class(e) || std::isnan(per_class[e])) continue;
    s += per_class[e];
    ++n;
  }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Table and artifact emission. Every table starts with one metadata line.

inline void write_result_rows(std::ostream& out, std::span<const ResultRow> rows, std::string_view kind) {
  out << "# audfer-" << kind << " version=1 rows=" << rows.size() << '\n';
  out << "name,lambda,strategy,replicates,major_rows_all_ones";
  for (auto n : kExpressionNames) out << ',' << n;
  out << ",WAR,UAR\n";
  for (const auto& r : rows) {
    out << r.name << ',' << csv::format_double(r.lambda) << ',' << strategy_name(r.strategy) << ','
        << r.replicates << ',' << (r.major_rows_all_ones ? 1 : 0);
    for (double v : r.per_class) out << ',' << csv::format_double(v);
    out << ',' << csv::format_double(r.war) << ',' << csv::format_double(r.uar) << '\n';
  }
}

inline void write_epoch_logs(std::ostream& out, std::span<const EpochLog> logs, double lambda, bool include_timing) {
  out << "# audfer-train-log version=1 lambda=" << csv::format_double(lambda) << '\n';
  out << "epoch,L_e,L_AU,L,train_WAR,train_UAR,test_WAR,test_UAR" << (include_timing ? ",seconds" : "") << '\n';
  for (const auto& l : logs) {
    out << l.epoch << ',' << csv::format_double(l.expression_loss) << ',' << csv::format_double(l.au_loss) << ','
        << csv::format_double(l.total_loss) << ',' << csv::format_double(l.train_war) << ','
        << csv::format_double(l.train_uar) << ',' << csv::format_double(l.test_war) << ','
        << csv::format_double(l.test_uar);
    if (include_timing) out << ',' << csv::format_double(l.seconds);
    out << '\n';
  }
}

inline void write_eval_report(std::ostream& out, const EvalReport& r) {
  out << "# audfer-eval version=1 samples=" << r.samples << " WAR=" << csv::format_double(r.war)
      << " UAR=" << csv::format_double(r.uar) << '\n';
  out << "metric";
  for (auto n : kExpressionNames) out << ',' << n;
  out << ",WAR,UAR\n";
  out << "recall";
  for (double v : r.per_class_recall) out << ',' << csv::format_double(v);
  out << ',' << csv::format_double(r.war) << ',' << csv::format_double(r.uar) << '\n';
}

inline void write_confusion_csv(std::ostream& out, const EvalReport& r) {
  out << "# audfer-confusion version=1 rows=true cols=predicted samples=" << r.samples << '\n';
  out << "true\\predicted";
  for (auto n : kExpressionNames) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < kNumExpressions; ++i) {
    out << kExpressionNames[i];
    for (std::size_t j = 0; j < kNumExpressions; ++j)
      out << ',' << r.confusion(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out << '\n';
  }
}

inline Eigen::Matrix<long long, kNumExpressions, kNumExpressions> read_confusion_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line) || line.rfind("# audfer-confusion", 0) != 0) {
    throw ContractError("confusion file lacks its metadata line");
  }
  if (!csv::read_line(in, line)) throw ContractError("confusion file has no header");
  Eigen::Matrix<long long, kNumExpressions, kNumExpressions> cm;
  std::size_t row = 0;
  while (csv::read_line(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (row >= kNumExpressions || cells.size() != kNumExpressions + 1) throw ContractError("confusion must be 7x7");
    if (expression_index(cells[0]) != row) throw ContractError("confusion rows out of order");
    for (std::size_t j = 0; j < kNumExpressions; ++j)
      cm(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = csv::parse_int(cells[j + 1], "confusion");
    ++row;
  }
  if (row != kNumExpressions) throw ContractError("confusion must be 7x7");
  return cm;
}

/// Row-normalized heatmap as a standalone SVG: 49 cells, 14 axis labels.
inline std::string confusion_svg(const EvalReport& r) {
  constexpr int cell = 56, left = 90, top = 40;
  const int size = cell * static_cast<int>(kNumExpressions);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + size + 20 << "\" height=\""
    << top + size + 70 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<title>Confusion matrix (rows: true, columns: predicted)</title>\n";
  for (std::size_t i = 0; i < kNumExpressions; ++i) {
    const long long total = r.confusion.row(static_cast<Eigen::Index>(i)).sum();
    for (std::size_t j = 0; j < kNumExpressions; ++j) {
      const long long v = r.confusion(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const double frac = total > 0 ? static_cast<double>(v) / static_cast<double>(total) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - frac)));
      const int x = left + static_cast<int>(j) * cell;
      const int y = top + static_cast<int>(i) * cell;
      s << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#888\" data-count=\"" << v << "\"/>\n";
      s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
        << (frac > 0.5 ? "#fff" : "#000") << "\">" << v << "</text>\n";
    }
  }
  for (std::size_t i = 0; i < kNumExpressions; ++i) {
    s << "<text class=\"axis-label\" x=\"" << left - 6 << "\" y=\"" << top + static_cast<int>(i) * cell + cell / 2 + 4
      << "\" text-anchor=\"end\">" << kExpressionNames[i] << "</text>\n";
  }
  for (std::size_t j = 0; j < kNumExpressions; ++j) {
    s << "<text class=\"axis-label\" x=\"" << left + static_cast<int>(j) * cell + cell / 2 << "\" y=\""
      << top + size + 16 << "\" text-anchor=\"middle\">" << kExpressionNames[j] << "</text>\n";
  }
  s << "<text x=\"" << left + size / 2 << "\" y=\"" << top + size + 40 << "\" text-anchor=\"middle\">predicted</text>\n";
  s << "<text x=\"" << left + size / 2 << "\" y=\"" << top - 16 << "\" text-anchor=\"middle\">true</text>\n";
  s << "</svg>\n";
  return s.str();
}

/// Writes `<prefix>.csv` and `<prefix>.svg`.
inline void export_confusion(const EvalReport& r, const std::string& prefix) {
  {
    auto out = csv::open_out(prefix + ".csv");
    write_confusion_csv(out, r);
    if (!out) throw IoError("failed writing " + prefix + ".csv");
  }
  auto out = csv::open_out(prefix + ".svg");
  out << confusion_svg(r);
  if (!out) throw IoError("failed writing " + prefix + ".svg");
}

/// Shared-pathway embeddings with labels, one row per sample.
inline void export_embeddings(const ModelParams& params, const Dataset& data, const std::string& path) {
  const auto pass = forward(params, data.features);
  const auto& e = pass.embeddings();
  auto out = csv::open_out(path);
  out << "# audfer-embeddings version=1 rows=" << e.rows() << " width=" << e.cols() << '\n';
  out << "id,expression";
  for (Eigen::Index j = 0; j < e.cols(); ++j) out << ",e" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out << (k < data.ids.size() ? data.ids[k] : std::to_string(k)) << ',' << expression_name(static_cast<std::size_t>(data.expressions[k]));
    for (Eigen::Index j = 0; j < e.cols(); ++j) out << ',' << csv::format_double(e(i, j));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Configuration documents

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"strategy", std::string(strategy_name(c.strategy))},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"hidden", c.hidden},
          {"expression_factor", c.expression_factor},
          {"au_reduction", c.au_reduction == AuReduction::MeanOverElements ? "elements" : "samples"},
          {"knowledge", c.knowledge_path},
          {"pos_weights", c.pos_weight_path},
          {"train_features", c.train_features},
          {"train_labels", c.train_labels},
          {"test_features", c.test_features},
          {"test_labels", c.test_labels}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lambda = j.value("lambda", c.lambda);
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.hidden = j.value("hidden", c.hidden);
    c.expression_factor = j.value("expression_factor", c.expression_factor);
    if (j.contains("au_reduction")) {
      const auto r = j.at("au_reduction").get<std::string>();
      if (r == "elements") c.au_reduction = AuReduction::MeanOverElements;
      else if (r == "samples") c.au_reduction = AuReduction::MeanOverSamples;
      else throw ContractError("au_reduction must be \"elements\" or \"samples\"");
    }
    c.knowledge_path = j.value("knowledge", c.knowledge_path);
    c.pos_weight_path = j.value("pos_weights", c.pos_weight_path);
    c.train_features = j.value("train_features", c.train_features);
    c.train_labels = j.value("train_labels", c.train_labels);
    c.test_features = j.value("test_features", c.test_features);
    c.test_labels = j.value("test_labels", c.test_labels);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("malformed training config: ") + e.what());
  }
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ContractError("lambda must lie in [0,1]");
  return c;
}

}  // namespace audfer
