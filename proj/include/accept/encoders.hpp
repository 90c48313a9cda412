#pragma once

// Simulated-curve encoder (1D CNN, global average pool, linear projection)
// and operational encoder (variable-selection gating, multi-head temporal
// attention, masked mean pool, dense embedding head), both with hand-written
// backward passes.

#include <accept/error.hpp>
#include <accept/util.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace accept {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Embedding {
  VectorXd values;
  bool normalized = false;

  std::size_t dim() const { return static_cast<std::size_t>(values.size()); }
};

inline constexpr double min_embedding_norm = 1e-12;

inline Embedding normalize(const Embedding& e) {
  const double n = e.values.norm();
  if (!(n > min_embedding_norm)) throw Error(ErrorKind::degenerate_embedding, "embedding norm is (near) zero");
  return {e.values / n, true};
}

/// Pulls a gradient with respect to p = z / |z| back to z.
inline VectorXd normalize_backward(const VectorXd& z, const VectorXd& grad_p) {
  const double n = z.norm();
  const VectorXd p = z / n;
  return (grad_p - p * p.dot(grad_p)) / n;
}

inline double cosine(const Embedding& a, const Embedding& b) {
  return a.values.dot(b.values) / (a.values.norm() * b.values.norm());
}

/// Ordered, named weight tensors. Vectors are stored as n x 1 matrices.
struct NamedTensors {
  std::vector<std::string> names;
  std::vector<MatrixXd> values;

  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names.push_back(std::move(name));
    values.emplace_back(MatrixXd::Zero(rows, cols));
    return values.size() - 1;
  }

  std::size_t size() const { return values.size(); }
  MatrixXd& operator[](std::size_t i) { return values[i]; }
  const MatrixXd& operator[](std::size_t i) const { return values[i]; }

  NamedTensors zeros_like() const {
    NamedTensors z;
    z.names = names;
    for (const auto& v : values) z.values.emplace_back(MatrixXd::Zero(v.rows(), v.cols()));
    return z;
  }

  void set_zero() {
    for (auto& v : values) v.setZero();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
  }

  friend bool operator==(const NamedTensors& a, const NamedTensors& b) {
    if (a.names != b.names || a.values.size() != b.values.size()) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      if (a.values[i].rows() != b.values[i].rows() || a.values[i].cols() != b.values[i].cols()) return false;
      if (std::memcmp(a.values[i].data(), b.values[i].data(), sizeof(double) * static_cast<std::size_t>(a.values[i].size())) != 0)
        return false;
    }
    return true;
  }
};

inline void init_uniform(MatrixXd& m, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(fan_in);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform(rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// Simulated-curve encoder

struct ConvLayerSpec {
  std::size_t channels = 16;
  std::size_t kernel = 5;
  std::size_t stride = 2;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

struct SimEncoderConfig {
  std::size_t input_length = 256;
  /// Adds a second input channel holding the normalised grid position.
  bool position_channel = true;
  /// Capacity enters as (C - input_shift) * input_scale.
  double input_shift = 1.0;
  double input_scale = -1.0 / 0.3;
  std::vector<ConvLayerSpec> layers{{16, 5, 2}, {32, 5, 2}, {64, 5, 2}};
  std::size_t embed_dim = 64;

  std::size_t input_channels() const { return position_channel ? 2 : 1; }

  friend bool operator==(const SimEncoderConfig&, const SimEncoderConfig&) = default;

  /// Temporal length after each layer; throws when the stack does not fit.
  std::vector<std::size_t> lengths() const {
    std::vector<std::size_t> out{input_length};
    for (const auto& l : layers) {
      if (l.kernel == 0 || l.stride == 0 || l.channels == 0) throw Error(ErrorKind::config, "conv layer sizes must be positive");
      if (out.back() < l.kernel) throw Error(ErrorKind::config, "conv stack shrinks the sequence below the kernel width");
      out.push_back((out.back() - l.kernel) / l.stride + 1);
    }
    return out;
  }
};

struct SimForward {
  std::uint64_t weights_version = 0;
  std::vector<MatrixXd> activations;  // activations[0] is the input, then post-ReLU maps (channels x length)
  std::vector<MatrixXd> columns;      // im2col input of each layer
  VectorXd pooled;
  VectorXd output;
};

class SimEncoder {
 public:
  SimEncoder() : SimEncoder(SimEncoderConfig{}) {}
  explicit SimEncoder(SimEncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.lengths();
    if (cfg_.layers.empty()) throw Error(ErrorKind::config, "sim encoder needs at least one conv layer");
    std::size_t in = cfg_.input_channels();
    for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
      const auto& spec = cfg_.layers[l];
      w_.add("sim.conv" + std::to_string(l) + ".weight", static_cast<Eigen::Index>(spec.channels),
             static_cast<Eigen::Index>(in * spec.kernel));
      w_.add("sim.conv" + std::to_string(l) + ".bias", static_cast<Eigen::Index>(spec.channels), 1);
      in = spec.channels;
    }
    w_.add("sim.proj.weight", static_cast<Eigen::Index>(cfg_.embed_dim), static_cast<Eigen::Index>(in));
    w_.add("sim.proj.bias", static_cast<Eigen::Index>(cfg_.embed_dim), 1);
  }

  const SimEncoderConfig& config() const { return cfg_; }
  const NamedTensors& weights() const { return w_; }
  NamedTensors& mutable_weights() {
    ++version_;
    return w_;
  }
  std::uint64_t version() const { return version_; }

  void initialize(Rng& rng) {
    auto& w = mutable_weights();
    std::size_t in = cfg_.input_channels();
    for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
      const double fan_in = static_cast<double>(in * cfg_.layers[l].kernel);
      init_uniform(w[2 * l], fan_in, rng);
      init_uniform(w[2 * l + 1], fan_in, rng);
      in = cfg_.layers[l].channels;
    }
    init_uniform(w[w.size() - 2], static_cast<double>(in), rng);
    init_uniform(w[w.size() - 1], static_cast<double>(in), rng);
  }

  SimForward forward(std::span<const double> curve) const {
    if (curve.size() != cfg_.input_length)
      throw Error(ErrorKind::config, "sim encoder expects " + std::to_string(cfg_.input_length) + " points, got " +
                                         std::to_string(curve.size()));
    SimForward f;
    f.weights_version = version_;
    const auto n = static_cast<Eigen::Index>(curve.size());
    MatrixXd x(static_cast<Eigen::Index>(cfg_.input_channels()), n);
    for (Eigen::Index t = 0; t < n; ++t) {
      x(0, t) = (curve[static_cast<std::size_t>(t)] - cfg_.input_shift) * cfg_.input_scale;
      if (cfg_.position_channel) x(1, t) = n == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(n - 1);
    }
    f.activations.push_back(std::move(x));
    for (std::size_t l = 0; l < cfg_.layers.size(); ++l) {
      const auto& spec = cfg_.layers[l];
      const MatrixXd& in = f.activations.back();
      const auto k = static_cast<Eigen::Index>(spec.kernel);
      const auto s = static_cast<Eigen::Index>(spec.stride);
      const Eigen::Index t_out = (in.cols() - k) / s + 1;
      MatrixXd col(in.rows() * k, t_out);
      for (Eigen::Index t = 0; t < t_out; ++t)
        for (Eigen::Index c = 0; c < in.rows(); ++c)
          for (Eigen::Index j = 0; j < k; ++j) col(c * k + j, t) = in(c, t * s + j);
      MatrixXd out = w_[2 * l] * col;
      out.colwise() += w_[2 * l + 1].col(0);
      out = out.cwiseMax(0.0);
      f.columns.push_back(std::move(col));
      f.activations.push_back(std::move(out));
    }
    f.pooled = f.activations.back().rowwise().mean();
    f.output = w_[w_.size() - 2] * f.pooled + w_[w_.size() - 1].col(0);
    return f;
  }

  Embedding encode(std::span<const double> curve) const { return {forward(curve).output, false}; }

  /// Accumulates d(loss)/d(weights) into grads given d(loss)/d(output).
  void backward(const SimForward& f, const VectorXd& grad_out, NamedTensors& grads) const {
    if (f.weights_version != version_) throw Error(ErrorKind::stale_cache, "sim encoder cache is from older weights");
    const std::size_t np = w_.size();
    grads[np - 2] += grad_out * f.pooled.transpose();
    grads[np - 1].col(0) += grad_out;
    const VectorXd grad_pooled = w_[np - 2].transpose() * grad_out;
    const MatrixXd& last = f.activations.back();
    MatrixXd grad = grad_pooled.replicate(1, last.cols()) / static_cast<double>(last.cols());
    for (std::size_t li = cfg_.layers.size(); li-- > 0;) {
      const auto& spec = cfg_.layers[li];
      const MatrixXd& out = f.activations[li + 1];
      grad = (out.array() > 0.0).select(grad, 0.0);
      grads[2 * li] += grad * f.columns[li].transpose();
      grads[2 * li + 1].col(0) += grad.rowwise().sum();
      if (li == 0) break;
      const MatrixXd grad_col = w_[2 * li].transpose() * grad;
      const MatrixXd& in = f.activations[li];
      MatrixXd grad_in = MatrixXd::Zero(in.rows(), in.cols());
      const auto k = static_cast<Eigen::Index>(spec.kernel);
      const auto s = static_cast<Eigen::Index>(spec.stride);
      for (Eigen::Index t = 0; t < grad_col.cols(); ++t)
        for (Eigen::Index c = 0; c < in.rows(); ++c)
          for (Eigen::Index j = 0; j < k; ++j) grad_in(c, t * s + j) += grad_col(c * k + j, t);
      grad = std::move(grad_in);
    }
  }

 private:
  SimEncoderConfig cfg_;
  NamedTensors w_;
  std::uint64_t version_ = 1;
};

// ---------------------------------------------------------------------------
// Operational encoder

/// Cycle-level operational history. Per-step vectors share one padded length;
/// mask[t] = 1 marks a real step.
struct OperationalWindow {
  std::vector<double> cycle;
  std::vector<double> soh;
  std::vector<double> temp_c;
  std::vector<double> chg_crate;
  std::vector<double> dis_crate;
  std::vector<double> voltage_v;
  std::vector<std::uint8_t> mask;
  std::string chemistry;
  double initial_capacity_ah = 1.0;

  std::size_t padded_length() const { return mask.size(); }

  std::size_t valid_length() const {
    std::size_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
  }

  void validate() const {
    const std::size_t n = mask.size();
    if (cycle.size() != n || soh.size() != n || temp_c.size() != n || chg_crate.size() != n || dis_crate.size() != n ||
        voltage_v.size() != n)
      throw Error(ErrorKind::validation, "window channels and mask lengths differ");
    if (valid_length() == 0) throw Error(ErrorKind::empty_input, "window has no valid steps");
    for (std::size_t t = 0; t < n; ++t) {
      if (!mask[t]) continue;
      if (!(soh[t] > 0.0 && soh[t] <= 1.2)) throw Error(ErrorKind::validation, "window SoH must lie in (0, 1.2]");
      if (!std::isfinite(cycle[t]) || !std::isfinite(temp_c[t]) || !std::isfinite(chg_crate[t]) ||
          !std::isfinite(dis_crate[t]) || !std::isfinite(voltage_v[t]))
        throw Error(ErrorKind::validation, "window contains non-finite values");
    }
  }

  /// Appends `extra` masked steps (values copied from the last step).
  OperationalWindow padded(std::size_t extra) const {
    OperationalWindow w = *this;
    for (std::size_t i = 0; i < extra; ++i) {
      w.cycle.push_back(cycle.back());
      w.soh.push_back(soh.back());
      w.temp_c.push_back(temp_c.back());
      w.chg_crate.push_back(chg_crate.back());
      w.dis_crate.push_back(dis_crate.back());
      w.voltage_v.push_back(voltage_v.back());
      w.mask.push_back(0);
    }
    return w;
  }
};

/// Z-score statistics for the operational channels (temperature, charge
/// C-rate, discharge C-rate, voltage) and initial capacity. SoH is not
/// normalised; cycle index is divided by cycle_scale.
struct FeatureNormalizer {
  std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> stdev{1.0, 1.0, 1.0, 1.0};
  double capacity_mean = 0.0;
  double capacity_std = 1.0;
  double cycle_scale = 1000.0;

  friend bool operator==(const FeatureNormalizer&, const FeatureNormalizer&) = default;
};

inline constexpr std::size_t op_dynamic_channels = 6;  // soh, cycle, temp, chg, dis, voltage

struct OpEncoderConfig {
  std::vector<std::string> chemistries{"<unk>"};  // index 0 is the unknown token
  std::size_t chem_dim = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t embed_dim = 64;

  std::size_t input_width() const { return op_dynamic_channels + chem_dim + 1; }

  friend bool operator==(const OpEncoderConfig&, const OpEncoderConfig&) = default;
};

struct OpForward {
  std::uint64_t weights_version = 0;
  std::size_t chem_index = 0;
  MatrixXd x;       // T x n_in
  MatrixXd gates;   // T x n_in, rows sum to one
  MatrixXd gated;   // T x n_in
  MatrixXd values;  // T x hidden (tanh)
  MatrixXd q, k, v; // T x hidden
  std::vector<MatrixXd> attention;  // per head, T x T
  MatrixXd mixed;   // concatenated head outputs, T x hidden
  MatrixXd context; // T x hidden
  VectorXd pooled;
  VectorXd output;
};

class OpEncoder {
 public:
  enum Slot : std::size_t {
    chem_embedding, gate_w, gate_b, input_w, input_b, q_w, q_b, k_w, v_w, v_b, o_w, o_b, head_w, head_b, slot_count
  };

  OpEncoder() : OpEncoder(OpEncoderConfig{}) {}
  explicit OpEncoder(OpEncoderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.chemistries.empty()) throw Error(ErrorKind::config, "chemistry vocabulary needs the unknown token");
    if (cfg_.heads == 0 || cfg_.hidden % cfg_.heads != 0)
      throw Error(ErrorKind::config, "hidden size must be a positive multiple of the head count");
    const auto vocab = static_cast<Eigen::Index>(cfg_.chemistries.size());
    const auto n_in = static_cast<Eigen::Index>(cfg_.input_width());
    const auto h = static_cast<Eigen::Index>(cfg_.hidden);
    const auto d = static_cast<Eigen::Index>(cfg_.embed_dim);
    w_.add("op.chem_embedding", vocab, static_cast<Eigen::Index>(cfg_.chem_dim));
    w_.add("op.gate.weight", n_in, n_in);
    w_.add("op.gate.bias", n_in, 1);
    w_.add("op.input.weight", h, n_in);
    w_.add("op.input.bias", h, 1);
    // No key bias: it shifts every score in a row equally and the softmax ignores it.
    for (const char* name : {"query", "key", "value", "out"}) {
      w_.add(std::string("op.attn.") + name + ".weight", h, h);
      if (std::string(name) != "key") w_.add(std::string("op.attn.") + name + ".bias", h, 1);
    }
    w_.add("op.head.weight", d, h);
    w_.add("op.head.bias", d, 1);
  }

  const OpEncoderConfig& config() const { return cfg_; }
  const NamedTensors& weights() const { return w_; }
  NamedTensors& mutable_weights() {
    ++version_;
    return w_;
  }
  std::uint64_t version() const { return version_; }

  void initialize(Rng& rng) {
    auto& w = mutable_weights();
    const double n_in = static_cast<double>(cfg_.input_width());
    const double h = static_cast<double>(cfg_.hidden);
    init_uniform(w[chem_embedding], 1.0, rng);
    init_uniform(w[gate_w], n_in, rng);
    init_uniform(w[gate_b], n_in, rng);
    init_uniform(w[input_w], n_in, rng);
    init_uniform(w[input_b], n_in, rng);
    for (std::size_t s = q_w; s <= o_b; ++s) init_uniform(w[s], h, rng);
    init_uniform(w[head_w], h, rng);
    init_uniform(w[head_b], h, rng);
  }

  std::size_t chemistry_index(const std::string& chem) const {
    for (std::size_t i = 1; i < cfg_.chemistries.size(); ++i)
      if (cfg_.chemistries[i] == chem) return i;
    return 0;
  }

  /// Valid-step input matrix (T_valid x n_in) with the chemistry columns left zero.
  MatrixXd inputs(const OperationalWindow& w, const FeatureNormalizer& norm) const {
    w.validate();
    const auto n_valid = static_cast<Eigen::Index>(w.valid_length());
    MatrixXd x = MatrixXd::Zero(n_valid, static_cast<Eigen::Index>(cfg_.input_width()));
    const double cap_z = (w.initial_capacity_ah - norm.capacity_mean) / norm.capacity_std;
    Eigen::Index r = 0;
    for (std::size_t t = 0; t < w.mask.size(); ++t) {
      if (!w.mask[t]) continue;
      x(r, 0) = w.soh[t];
      x(r, 1) = w.cycle[t] / norm.cycle_scale;
      x(r, 2) = (w.temp_c[t] - norm.mean[0]) / norm.stdev[0];
      x(r, 3) = (w.chg_crate[t] - norm.mean[1]) / norm.stdev[1];
      x(r, 4) = (w.dis_crate[t] - norm.mean[2]) / norm.stdev[2];
      x(r, 5) = (w.voltage_v[t] - norm.mean[3]) / norm.stdev[3];
      x(r, x.cols() - 1) = cap_z;
      ++r;
    }
    return x;
  }

  OpForward forward(const OperationalWindow& window, const FeatureNormalizer& norm) const {
    OpForward f;
    f.weights_version = version_;
    f.chem_index = chemistry_index(window.chemistry);
    f.x = inputs(window, norm);
    const Eigen::Index T = f.x.rows();
    const auto n_in = f.x.cols();
    const auto cd = static_cast<Eigen::Index>(cfg_.chem_dim);
    for (Eigen::Index t = 0; t < T; ++t)
      f.x.block(t, static_cast<Eigen::Index>(op_dynamic_channels), 1, cd) =
          w_[chem_embedding].row(static_cast<Eigen::Index>(f.chem_index));

    MatrixXd logits = f.x * w_[gate_w].transpose();
    logits.rowwise() += w_[gate_b].col(0).transpose();
    f.gates = row_softmax(logits);
    f.gated = static_cast<double>(n_in) * f.gates.cwiseProduct(f.x);

    MatrixXd pre = f.gated * w_[input_w].transpose();
    pre.rowwise() += w_[input_b].col(0).transpose();
    f.values = pre.array().tanh().matrix();

    f.q = affine(f.values, q_w, q_b);
    f.k = f.values * w_[k_w].transpose();
    f.v = affine(f.values, v_w, v_b);
    const auto hd = static_cast<Eigen::Index>(cfg_.hidden / cfg_.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    f.mixed.resize(T, static_cast<Eigen::Index>(cfg_.hidden));
    f.attention.clear();
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * hd;
      MatrixXd scores = (f.q.middleCols(c0, hd) * f.k.middleCols(c0, hd).transpose()) * scale;
      MatrixXd a = row_softmax(scores);
      f.mixed.middleCols(c0, hd) = a * f.v.middleCols(c0, hd);
      f.attention.push_back(std::move(a));
    }
    f.context = f.values + affine(f.mixed, o_w, o_b);
    f.pooled = f.context.colwise().mean().transpose();
    f.output = w_[head_w] * f.pooled + w_[head_b].col(0);
    return f;
  }

  Embedding encode(const OperationalWindow& window, const FeatureNormalizer& norm) const {
    return {forward(window, norm).output, false};
  }

  void backward(const OpForward& f, const VectorXd& grad_out, NamedTensors& g) const {
    if (f.weights_version != version_) throw Error(ErrorKind::stale_cache, "op encoder cache is from older weights");
    const Eigen::Index T = f.x.rows();
    g[head_w] += grad_out * f.pooled.transpose();
    g[head_b].col(0) += grad_out;
    const VectorXd grad_pooled = w_[head_w].transpose() * grad_out;
    const MatrixXd grad_ctx = grad_pooled.transpose().replicate(T, 1) / static_cast<double>(T);

    MatrixXd grad_values = grad_ctx;
    g[o_w] += grad_ctx.transpose() * f.mixed;
    g[o_b].col(0) += grad_ctx.colwise().sum().transpose();
    const MatrixXd grad_mixed = grad_ctx * w_[o_w];

    const auto hd = static_cast<Eigen::Index>(cfg_.hidden / cfg_.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    MatrixXd gq(T, f.q.cols()), gk(T, f.k.cols()), gv(T, f.v.cols());
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * hd;
      const MatrixXd& a = f.attention[h];
      const MatrixXd go = grad_mixed.middleCols(c0, hd);
      const MatrixXd ga = go * f.v.middleCols(c0, hd).transpose();
      gv.middleCols(c0, hd) = a.transpose() * go;
      const VectorXd row_dot = (ga.cwiseProduct(a)).rowwise().sum();
      MatrixXd gs = a.cwiseProduct(ga.colwise() - row_dot) * scale;
      gq.middleCols(c0, hd) = gs * f.k.middleCols(c0, hd);
      gk.middleCols(c0, hd) = gs.transpose() * f.q.middleCols(c0, hd);
    }
    auto affine_back = [&](const MatrixXd& grad, Slot wslot, Slot bslot) {
      g[wslot] += grad.transpose() * f.values;
      g[bslot].col(0) += grad.colwise().sum().transpose();
      grad_values += grad * w_[wslot];
    };
    affine_back(gq, q_w, q_b);
    g[k_w] += gk.transpose() * f.values;
    grad_values += gk * w_[k_w];
    affine_back(gv, v_w, v_b);

    const MatrixXd grad_pre = grad_values.cwiseProduct((1.0 - f.values.array().square()).matrix());
    g[input_w] += grad_pre.transpose() * f.gated;
    g[input_b].col(0) += grad_pre.colwise().sum().transpose();
    const MatrixXd grad_gated = grad_pre * w_[input_w];

    const double n_in = static_cast<double>(f.x.cols());
    const MatrixXd grad_gates = n_in * grad_gated.cwiseProduct(f.x);
    MatrixXd grad_x = n_in * grad_gated.cwiseProduct(f.gates);
    const VectorXd gdot = grad_gates.cwiseProduct(f.gates).rowwise().sum();
    const MatrixXd grad_logits = f.gates.cwiseProduct(grad_gates.colwise() - gdot);
    g[gate_w] += grad_logits.transpose() * f.x;
    g[gate_b].col(0) += grad_logits.colwise().sum().transpose();
    grad_x += grad_logits * w_[gate_w];

    const auto cd = static_cast<Eigen::Index>(cfg_.chem_dim);
    g[chem_embedding].row(static_cast<Eigen::Index>(f.chem_index)) +=
        grad_x.middleCols(static_cast<Eigen::Index>(op_dynamic_channels), cd).colwise().sum();
  }

  static MatrixXd row_softmax(const MatrixXd& logits) {
    MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double m = logits.row(r).maxCoeff();
      out.row(r) = (logits.row(r).array() - m).exp().matrix();
      out.row(r) /= out.row(r).sum();
    }
    return out;
  }

 private:
  MatrixXd affine(const MatrixXd& in, Slot wslot, Slot bslot) const {
    MatrixXd out = in * w_[wslot].transpose();
    out.rowwise() += w_[bslot].col(0).transpose();
    return out;
  }

  OpEncoderConfig cfg_;
  NamedTensors w_;
  std::uint64_t version_ = 1;
};

}  // namespace accept
