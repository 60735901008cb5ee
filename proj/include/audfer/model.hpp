#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "audfer/csv.hpp"
#include "audfer/domain.hpp"
#include "audfer/error.hpp"

namespace audfer {

inline constexpr std::size_t kDefaultFeatureDim = 1024;

/// Affine map y = W x + b with W stored (out x in).
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  bool operator==(const DenseLayer& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() && weight == o.weight &&
           bias.size() == o.bias.size() && bias == o.bias;
  }
};

/// Shared ReLU pathway feeding an expression head (7) and an AU head (18).
///
/// Gradients use the same type: every tensor of a gradient mirrors the
/// parameter it belongs to.
struct ModelParams {
  std::size_t feature_dim = kDefaultFeatureDim;
  std::vector<std::size_t> hidden{128};
  std::vector<DenseLayer> backbone;
  DenseLayer expression_head;
  DenseLayer au_head;
  std::uint64_t seed = 0;

  std::size_t embedding_dim() const { return hidden.empty() ? feature_dim : hidden.back(); }

  /// Calls f(pointer, length) for every tensor in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& p, F&& f) {
    auto layer = [&](auto& l) {
      f(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
      f(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    };
    for (auto& l : p.backbone) layer(l);
    layer(p.expression_head);
    layer(p.au_head);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit(*this, [&](const double*, std::size_t len) { n += len; });
    return n;
  }

  bool operator==(const ModelParams& o) const {
    return feature_dim == o.feature_dim && hidden == o.hidden && backbone == o.backbone &&
           expression_head == o.expression_head && au_head == o.au_head && seed == o.seed;
  }
};

inline Eigen::VectorXd flatten(const ModelParams& p) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(p.parameter_count()));
  std::size_t off = 0;
  ModelParams::visit(p, [&](const double* d, std::size_t n) {
    std::copy(d, d + n, out.data() + off);
    off += n;
  });
  return out;
}

inline void unflatten(ModelParams& p, const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != p.parameter_count()) {
    throw ContractError("flat parameter vector has wrong length");
  }
  std::size_t off = 0;
  ModelParams::visit(p, [&](double* d, std::size_t n) {
    std::copy(flat.data() + off, flat.data() + off + n, d);
    off += n;
  });
}

/// A zero-valued tensor set with the same shapes as `p`.
inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  ModelParams::visit(z, [](double* d, std::size_t n) { std::fill(d, d + n, 0.0); });
  return z;
}

namespace detail {

inline DenseLayer glorot_layer(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseLayer l;
  l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
  l.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
  return l;
}

}  // namespace detail

inline ModelParams init_params(std::uint64_t seed, std::size_t feature_dim = kDefaultFeatureDim,
                               std::vector<std::size_t> hidden = {128}) {
  if (feature_dim < 1) throw ContractError("feature dimension must be >= 1");
  for (auto h : hidden)
    if (h < 1) throw ContractError("hidden layer sizes must be >= 1");
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.feature_dim = feature_dim;
  p.hidden = std::move(hidden);
  p.seed = seed;
  std::size_t in = feature_dim;
  for (auto h : p.hidden) {
    p.backbone.push_back(detail::glorot_layer(in, h, rng));
    in = h;
  }
  p.expression_head = detail::glorot_layer(in, kNumExpressions, rng);
  p.au_head = detail::glorot_layer(in, kNumAus, rng);
  return p;
}

/// Outputs and cached activations of one forward pass.
struct ForwardPass {
  Eigen::MatrixXd expression_logits;  // N x 7
  Eigen::MatrixXd au_logits;          // N x 18
  /// activations[0] is the input; activations[l + 1] is the output of hidden layer l.
  std::vector<Eigen::MatrixXd> activations;

  const Eigen::MatrixXd& embeddings() const { return activations.back(); }
};

namespace detail {

inline Eigen::MatrixXd affine(const DenseLayer& l, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = x * l.weight.transpose();
  y.rowwise() += l.bias.transpose();
  return y;
}

}  // namespace detail

inline ForwardPass forward(const ModelParams& p, const Eigen::MatrixXd& features) {
  if (features.cols() != static_cast<Eigen::Index>(p.feature_dim)) {
    throw ContractError("feature width " + std::to_string(features.cols()) + " does not match model width " +
                        std::to_string(p.feature_dim));
  }
  ForwardPass out;
  out.activations.reserve(p.backbone.size() + 1);
  out.activations.push_back(features);
  for (const auto& l : p.backbone) out.activations.push_back(detail::affine(l, out.activations.back()).cwiseMax(0.0));
  out.expression_logits = detail::affine(p.expression_head, out.activations.back());
  out.au_logits = detail::affine(p.au_head, out.activations.back());
  return out;
}

/// Gradients of a loss with respect to every parameter, given the loss
/// gradients on both heads' logits. Both heads feed the shared pathway.
inline ModelParams backward(const ModelParams& p, const ForwardPass& pass, const Eigen::MatrixXd& d_expression,
                            const Eigen::MatrixXd& d_au) {
  const Eigen::Index n = pass.activations.front().rows();
  if (d_expression.rows() != n || d_expression.cols() != static_cast<Eigen::Index>(kNumExpressions) ||
      d_au.rows() != n || d_au.cols() != static_cast<Eigen::Index>(kNumAus)) {
    throw ContractError("backward: head gradient shapes do not match the forward pass");
  }
  if (pass.activations.size() != p.backbone.size() + 1) throw ContractError("backward: forward pass depth mismatch");
  ModelParams g = zeros_like(p);
  const Eigen::MatrixXd& h = pass.activations.back();
  g.expression_head.weight = d_expression.transpose() * h;
  g.expression_head.bias = d_expression.colwise().sum().transpose();
  g.au_head.weight = d_au.transpose() * h;
  g.au_head.bias = d_au.colwise().sum().transpose();
  Eigen::MatrixXd d_h = d_expression * p.expression_head.weight + d_au * p.au_head.weight;
  for (std::size_t l = p.backbone.size(); l-- > 0;) {
    const Eigen::MatrixXd& out = pass.activations[l + 1];
    const Eigen::MatrixXd d_z = (out.array() > 0.0).select(d_h, 0.0);
    g.backbone[l].weight = d_z.transpose() * pass.activations[l];
    g.backbone[l].bias = d_z.colwise().sum().transpose();
    if (l > 0) d_h = d_z * p.backbone[l].weight;
  }
  return g;
}

inline ModelParams backward(const ModelParams& p, const Eigen::MatrixXd& features, const Eigen::MatrixXd& d_expression,
                            const Eigen::MatrixXd& d_au) {
  return backward(p, forward(p, features), d_expression, d_au);
}

/// Adam moments with decoupled weight decay.
struct OptimizerState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.05;

  bool operator==(const OptimizerState& o) const {
    return m.size() == o.m.size() && m == o.m && v.size() == o.v.size() && v == o.v && step == o.step &&
           learning_rate == o.learning_rate && beta1 == o.beta1 && beta2 == o.beta2 && epsilon == o.epsilon &&
           weight_decay == o.weight_decay;
  }
};

inline OptimizerState make_optimizer(const ModelParams& p, double learning_rate = 1e-3, double weight_decay = 0.05) {
  OptimizerState s;
  s.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.parameter_count()));
  s.v = s.m;
  s.learning_rate = learning_rate;
  s.weight_decay = weight_decay;
  return s;
}

inline void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  const auto n = static_cast<Eigen::Index>(params.parameter_count());
  if (state.m.size() != n || state.v.size() != n) throw ContractError("optimizer state does not match parameters");
  const Eigen::VectorXd g = flatten(grads);
  if (g.size() != n) throw ContractError("gradient does not match parameters");
  if (!g.allFinite()) {
    Eigen::Index bad = 0;
    for (; bad < g.size() && std::isfinite(g(bad)); ++bad) {}
    throw NumericError("non-finite gradient at parameter " + std::to_string(bad) + " (step " +
                       std::to_string(state.step + 1) + ")");
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * g;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  Eigen::VectorXd x = flatten(params);
  const Eigen::ArrayXd m_hat = state.m.array() / c1;
  const Eigen::ArrayXd v_hat = state.v.array() / c2;
  x.array() -= state.learning_rate * (m_hat / (v_hat.sqrt() + state.epsilon) + state.weight_decay * x.array());
  unflatten(params, x);
}

// ---------------------------------------------------------------------------
// Binary checkpoint: magic, version, shape, parameters, optional optimizer
// state, then an FNV-1a checksum over everything before it.

inline constexpr char kCheckpointMagic[8] = {'A', 'U', 'D', 'F', 'E', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

class ByteWriter {
 public:
  template <typename T>
  void put(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_doubles(const double* d, std::size_t n) { buf_.append(reinterpret_cast<const char*>(d), n * sizeof(double)); }
  void put_raw(const char* d, std::size_t n) { buf_.append(d, n); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_doubles(double* d, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(d, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::string_view get_raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ContractError("corrupt " + what_ + ": truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const std::string& path) {
  auto in = csv::open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  auto out = csv::open_out(path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace detail

struct Checkpoint {
  ModelParams params;
  std::optional<OptimizerState> optimizer;
};

inline std::string serialize_checkpoint(const ModelParams& p, const OptimizerState* state) {
  detail::ByteWriter w;
  w.put_raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(p.seed));
  w.put(static_cast<std::uint64_t>(p.feature_dim));
  w.put(static_cast<std::uint64_t>(p.hidden.size()));
  for (auto h : p.hidden) w.put(static_cast<std::uint64_t>(h));
  const Eigen::VectorXd flat = flatten(p);
  w.put(static_cast<std::uint64_t>(flat.size()));
  w.put_doubles(flat.data(), static_cast<std::size_t>(flat.size()));
  w.put(static_cast<std::uint8_t>(state ? 1 : 0));
  if (state) {
    if (state->m.size() != flat.size() || state->v.size() != flat.size()) {
      throw ContractError("optimizer state does not match parameters");
    }
    w.put(state->step);
    for (double d : {state->learning_rate, state->beta1, state->beta2, state->epsilon, state->weight_decay}) w.put(d);
    w.put_doubles(state->m.data(), static_cast<std::size_t>(state->m.size()));
    w.put_doubles(state->v.data(), static_cast<std::size_t>(state->v.size()));
  }
  w.put(detail::fnv1a(w.str()));
  return std::move(w.str());
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + sizeof(std::uint64_t)) {
    throw ContractError("corrupt checkpoint: truncated");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw ContractError("corrupt checkpoint: bad magic");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);
  detail::ByteReader r(body, "checkpoint");
  r.get_raw(sizeof kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ContractError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  if (detail::fnv1a(body) != stored) throw ContractError("corrupt checkpoint: checksum mismatch");
  Checkpoint ck;
  const auto seed = r.get<std::uint64_t>();
  const auto f = r.get<std::uint64_t>();
  const auto depth = r.get<std::uint64_t>();
  if (depth > 64) throw ContractError("corrupt checkpoint: implausible depth");
  std::vector<std::size_t> hidden;
  for (std::uint64_t i = 0; i < depth; ++i) hidden.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
  ck.params = init_params(seed, static_cast<std::size_t>(f), hidden);
  const auto count = r.get<std::uint64_t>();
  if (count != ck.params.parameter_count()) throw ContractError("corrupt checkpoint: parameter count mismatch");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  r.get_doubles(flat.data(), count);
  unflatten(ck.params, flat);
  if (r.get<std::uint8_t>() == 1) {
    OptimizerState s;
    s.step = r.get<std::uint64_t>();
    s.learning_rate = r.get<double>();
    s.beta1 = r.get<double>();
    s.beta2 = r.get<double>();
    s.epsilon = r.get<double>();
    s.weight_decay = r.get<double>();
    s.m.resize(static_cast<Eigen::Index>(count));
    s.v.resize(static_cast<Eigen::Index>(count));
    r.get_doubles(s.m.data(), count);
    r.get_doubles(s.v.data(), count);
    ck.optimizer = std::move(s);
  }
  if (r.remaining() != 0) throw ContractError("corrupt checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const ModelParams& p, const OptimizerState* state, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(p, state));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Feature matrices: binary container (magic, N, F, dtype tag, row-major f64)
// or a comma-separated fallback with one sample per line.

inline constexpr char kFeatureMagic[8] = {'A', 'U', 'D', 'F', 'E', 'A', 'T', '1'};
inline constexpr char kFeatureDtype[4] = {'f', '6', '4', '\0'};

inline void write_features(const Eigen::MatrixXd& x, const std::string& path) {
  if (std::filesystem::path(path).extension() == ".csv") {
    auto out = csv::open_out(path);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) out << (j ? "," : "") << csv::format_double(x(i, j));
      out << '\n';
    }
    return;
  }
  detail::ByteWriter w;
  w.put_raw(kFeatureMagic, sizeof kFeatureMagic);
  w.put(static_cast<std::uint64_t>(x.rows()));
  w.put(static_cast<std::uint64_t>(x.cols()));
  w.put_raw(kFeatureDtype, sizeof kFeatureDtype);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = x;
  w.put_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
  detail::write_file(path, w.str());
}

inline Eigen::MatrixXd read_features(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() >= sizeof kFeatureMagic && std::memcmp(bytes.data(), kFeatureMagic, sizeof kFeatureMagic) == 0) {
    detail::ByteReader r(bytes, "feature file");
    r.get_raw(sizeof kFeatureMagic);
    const auto n = r.get<std::uint64_t>();
    const auto f = r.get<std::uint64_t>();
    if (r.get_raw(sizeof kFeatureDtype) != std::string_view(kFeatureDtype, sizeof kFeatureDtype)) {
      throw ContractError("feature file has unsupported dtype");
    }
    if (r.remaining() != n * f * sizeof(double)) throw ContractError("corrupt feature file: size mismatch");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Eigen::Index>(n),
                                                                              static_cast<Eigen::Index>(f));
    r.get_doubles(rm.data(), n * f);
    return rm;
  }
  std::istringstream in(bytes);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (csv::read_line(in, line)) {
    if (detail::trim(line).empty()) continue;
    std::vector<double> row;
    for (auto c : csv::split(line)) row.push_back(csv::parse_double(c, path));
    if (!rows.empty() && row.size() != rows.front().size()) throw ContractError("ragged feature file " + path);
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return x;
}

}  // namespace audfer
