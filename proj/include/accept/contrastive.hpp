#pragma once

// Queue-augmented contrastive objective and the training loop: each row i
// scores sim embedding i against every operational embedding in the batch
// plus K negatives drawn from a queue, with a learnable temperature.

#include <accept/curve_bank.hpp>
#include <accept/model.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace accept {

struct ContrastiveLoss {
  double loss = 0.0;
  VectorXd row_loss;
  MatrixXd grad_sim;        // B x d
  MatrixXd grad_op;         // B x d
  MatrixXd grad_negatives;  // K x d
  double grad_tau = 0.0;    // d loss / d tau
};

inline void require_unit_rows(const MatrixXd& m, const char* what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (std::abs(m.row(i).norm() - 1.0) > 1e-6)
      throw Error(ErrorKind::contract, std::string(what) + " row " + std::to_string(i) + " is not unit-norm");
}

/// L = -sum_i log( exp(s_ii / tau) / alpha_i ),
/// alpha_i = sum_j exp(<p_s_i, p_o_j> / tau) + sum_k exp(<p_s_i, n_k> / tau).
/// Rows are embeddings. `same_positive(i, j)` marks batch columns j != i that
/// share row i's positive; those are dropped from alpha_i.
inline ContrastiveLoss contrastive_loss(const MatrixXd& sim, const MatrixXd& op, const MatrixXd& negatives, double tau,
                                        const std::function<bool(Eigen::Index, Eigen::Index)>& same_positive = {}) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::contract, "temperature must be positive");
  if (sim.rows() != op.rows() || sim.cols() != op.cols())
    throw Error(ErrorKind::contract, "sim and op batches must have the same shape");
  if (negatives.rows() > 0 && negatives.cols() != sim.cols())
    throw Error(ErrorKind::contract, "negatives have the wrong dimension");
  require_unit_rows(sim, "sim embedding");
  require_unit_rows(op, "op embedding");
  require_unit_rows(negatives, "negative embedding");

  const Eigen::Index B = sim.rows(), K = negatives.rows();
  ContrastiveLoss out;
  out.row_loss = VectorXd::Zero(B);
  out.grad_sim = MatrixXd::Zero(B, sim.cols());
  out.grad_op = MatrixXd::Zero(B, sim.cols());
  out.grad_negatives = MatrixXd::Zero(K, sim.cols());

  const MatrixXd s_batch = sim * op.transpose();
  const MatrixXd s_neg = K > 0 ? MatrixXd(sim * negatives.transpose()) : MatrixXd(B, 0);
  for (Eigen::Index i = 0; i < B; ++i) {
    std::vector<char> keep(static_cast<std::size_t>(B), 1);
    if (same_positive)
      for (Eigen::Index j = 0; j < B; ++j)
        if (j != i && same_positive(i, j)) keep[static_cast<std::size_t>(j)] = 0;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < B; ++j)
      if (keep[static_cast<std::size_t>(j)]) m = std::max(m, s_batch(i, j) / tau);
    for (Eigen::Index k = 0; k < K; ++k) m = std::max(m, s_neg(i, k) / tau);
    double z = 0.0;
    for (Eigen::Index j = 0; j < B; ++j)
      if (keep[static_cast<std::size_t>(j)]) z += std::exp(s_batch(i, j) / tau - m);
    for (Eigen::Index k = 0; k < K; ++k) z += std::exp(s_neg(i, k) / tau - m);
    const double log_alpha = m + std::log(z);
    const double row = log_alpha - s_batch(i, i) / tau;
    out.row_loss(i) = row;
    out.loss += row;

    // d row / d logit = softmax weight - [is positive]; d logit / d s = 1 / tau.
    for (Eigen::Index j = 0; j < B; ++j) {
      if (!keep[static_cast<std::size_t>(j)]) continue;
      const double logit = s_batch(i, j) / tau;
      const double g = std::exp(logit - log_alpha) - (j == i ? 1.0 : 0.0);
      out.grad_sim.row(i) += (g / tau) * op.row(j);
      out.grad_op.row(j) += (g / tau) * sim.row(i);
      out.grad_tau += g * (-logit / tau);
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      const double logit = s_neg(i, k) / tau;
      const double g = std::exp(logit - log_alpha);
      out.grad_sim.row(i) += (g / tau) * negatives.row(k);
      out.grad_negatives.row(k) += (g / tau) * sim.row(i);
      out.grad_tau += g * (-logit / tau);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Negative queue

struct NegativeQueue {
  std::size_t capacity = 1024;
  std::vector<std::uint64_t> source_ids;  // bank ids (or window indices) the rows came from
  MatrixXd entries;                       // rows are unit-norm embeddings
  int refreshed_at_epoch = -1;

  std::size_t size() const { return static_cast<std::size_t>(entries.rows()); }
};

/// Uniform sample of K rows without replacement (partial Fisher-Yates).
/// Rows whose source id is in `exclude` are never drawn.
inline std::vector<std::size_t> queue_sample(const NegativeQueue& q, std::size_t K, Rng& rng,
                                             const std::vector<std::uint64_t>& exclude = {}) {
  std::vector<std::size_t> pool;
  pool.reserve(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    if (exclude.empty() || std::find(exclude.begin(), exclude.end(), q.source_ids[i]) == exclude.end())
      pool.push_back(i);
  if (K > pool.size())
    throw Error(ErrorKind::config, "queue draw K=" + std::to_string(K) + " exceeds available negatives " +
                                       std::to_string(pool.size()));
  for (std::size_t i = 0; i < K; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(K);
  return pool;
}

inline MatrixXd gather_rows(const MatrixXd& m, const std::vector<std::size_t>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingPair {
  OperationalWindow window;
  std::uint64_t positive_id = 0;
  std::string cell_id;
};

enum class QueueSource { bank_curves, operational_windows };

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t queue_draw = 256;    // K
  std::size_t queue_size = 1024;   // M
  QueueSource queue_source = QueueSource::bank_curves;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_epochs = 60;
  int patience = 5;
  std::uint64_t seed = 1;
  /// Drops in-batch columns and queue rows that share a row's positive curve.
  bool exclude_shared_positives = true;
  bool learn_temperature = true;

  void validate() const {
    if (batch_size < 1) throw Error(ErrorKind::config, "batch size must be at least 1");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::config, "learning rate must be non-negative");
    if (max_epochs < 1) throw Error(ErrorKind::config, "max_epochs must be at least 1");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double tau = 0.0;
};

struct TrainResult {
  Model best;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool diverged = false;
};

/// Adam over the union of both encoders' tensors and log_tau.
class Adam {
 public:
  Adam(const Model& m, const TrainConfig& cfg) : cfg_(cfg) {
    for (const NamedTensors* set : {&m.sim.weights(), &m.op.weights()})
      for (const auto& t : set->values) {
        m1_.emplace_back(MatrixXd::Zero(t.rows(), t.cols()));
        m2_.emplace_back(MatrixXd::Zero(t.rows(), t.cols()));
      }
  }

  void step(Model& m, const NamedTensors& g_sim, const NamedTensors& g_op, double g_log_tau) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.learning_rate;
    std::size_t k = 0;
    auto update = [&](MatrixXd& w, const MatrixXd& g) {
      m1_[k] = cfg_.beta1 * m1_[k] + (1.0 - cfg_.beta1) * g;
      m2_[k] = cfg_.beta2 * m2_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      w.array() -= lr * (m1_[k].array() / c1) / ((m2_[k].array() / c2).sqrt() + cfg_.epsilon);
      ++k;
    };
    auto& ws = m.sim.mutable_weights();
    for (std::size_t i = 0; i < ws.size(); ++i) update(ws[i], g_sim[i]);
    auto& wo = m.op.mutable_weights();
    for (std::size_t i = 0; i < wo.size(); ++i) update(wo[i], g_op[i]);
    if (cfg_.learn_temperature) {
      tm1_ = cfg_.beta1 * tm1_ + (1.0 - cfg_.beta1) * g_log_tau;
      tm2_ = cfg_.beta2 * tm2_ + (1.0 - cfg_.beta2) * g_log_tau * g_log_tau;
      m.log_tau -= lr * (tm1_ / c1) / (std::sqrt(tm2_ / c2) + cfg_.epsilon);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<MatrixXd> m1_, m2_;
  double tm1_ = 0.0, tm2_ = 0.0;
  std::uint64_t t_ = 0;
};

/// Forward + loss (+ optional gradients) for one mini-batch.
struct BatchOutcome {
  double loss = 0.0;
  NamedTensors grad_sim, grad_op;
  double grad_log_tau = 0.0;
};

inline BatchOutcome run_batch(const Model& model, const CurveBank& bank, const std::vector<const TrainingPair*>& batch,
                              const MatrixXd& negatives, bool exclude_shared, bool want_grad) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(model.embed_dim());
  std::vector<SimForward> sf;
  std::vector<OpForward> of;
  MatrixXd ps(B, d), po(B, d);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& pair = *batch[static_cast<std::size_t>(i)];
    sf.push_back(model.sim.forward(bank.at(pair.positive_id).capacity));
    of.push_back(model.op.forward(pair.window, model.normalizer));
    ps.row(i) = normalize({sf.back().output}).values.transpose();
    po.row(i) = normalize({of.back().output}).values.transpose();
  }
  std::function<bool(Eigen::Index, Eigen::Index)> shared;
  if (exclude_shared)
    shared = [&](Eigen::Index i, Eigen::Index j) {
      return batch[static_cast<std::size_t>(i)]->positive_id == batch[static_cast<std::size_t>(j)]->positive_id;
    };
  const auto loss = contrastive_loss(ps, po, negatives, model.tau(), shared);
  BatchOutcome out;
  out.loss = loss.loss;
  if (!want_grad) return out;
  out.grad_sim = model.sim.weights().zeros_like();
  out.grad_op = model.op.weights().zeros_like();
  for (Eigen::Index i = 0; i < B; ++i) {
    model.sim.backward(sf[static_cast<std::size_t>(i)], normalize_backward(sf[static_cast<std::size_t>(i)].output, loss.grad_sim.row(i).transpose()), out.grad_sim);
    model.op.backward(of[static_cast<std::size_t>(i)], normalize_backward(of[static_cast<std::size_t>(i)].output, loss.grad_op.row(i).transpose()), out.grad_op);
  }
  out.grad_log_tau = loss.grad_tau * model.tau();
  return out;
}

namespace detail {

inline std::vector<std::uint64_t> batch_positive_ids(const std::vector<const TrainingPair*>& batch) {
  std::vector<std::uint64_t> ids;
  for (const auto* p : batch) ids.push_back(p->positive_id);
  return ids;
}

/// Queue membership is chosen once; embeddings are recomputed on refresh.
inline std::vector<std::uint64_t> choose_queue_members(const CurveBank& bank, const std::vector<TrainingPair>& val,
                                                       const TrainConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x51));
  std::vector<std::uint64_t> ids;
  const std::size_t n = cfg.queue_source == QueueSource::bank_curves ? bank.size() : val.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  order.resize(std::min(n, cfg.queue_size));
  std::sort(order.begin(), order.end());
  for (auto i : order) ids.push_back(cfg.queue_source == QueueSource::bank_curves ? bank[i].id : i);
  return ids;
}

inline void refresh_queue(NegativeQueue& q, const Model& m, const CurveBank& bank, const std::vector<TrainingPair>& val,
                          QueueSource source, int epoch) {
  const auto d = static_cast<Eigen::Index>(m.embed_dim());
  q.entries.resize(static_cast<Eigen::Index>(q.source_ids.size()), d);
  parallel_for(q.source_ids.size(), [&](std::size_t i) {
    const Embedding e = source == QueueSource::bank_curves ? m.embed_curve(bank.at(q.source_ids[i]).capacity)
                                                           : m.embed_window(val[q.source_ids[i]].window);
    q.entries.row(static_cast<Eigen::Index>(i)) = e.values.transpose();
  });
  q.refreshed_at_epoch = epoch;
}

}  // namespace detail

/// Loss over `pairs` in fixed order with negatives drawn from a fixed stream;
/// used for the per-epoch train/validation figures.
inline double evaluate_loss(const Model& model, const CurveBank& bank, const std::vector<TrainingPair>& pairs,
                            const NegativeQueue& queue, const TrainConfig& cfg, std::uint64_t stream) {
  if (pairs.empty()) return 0.0;
  Rng rng(derive_seed(cfg.seed, stream));
  double total = 0.0;
  for (std::size_t b = 0; b < pairs.size(); b += cfg.batch_size) {
    std::vector<const TrainingPair*> batch;
    for (std::size_t i = b; i < std::min(pairs.size(), b + cfg.batch_size); ++i) batch.push_back(&pairs[i]);
    const auto exclude = cfg.exclude_shared_positives && cfg.queue_source == QueueSource::bank_curves
                             ? detail::batch_positive_ids(batch) : std::vector<std::uint64_t>{};
    const auto rows = cfg.queue_draw > 0 ? queue_sample(queue, cfg.queue_draw, rng, exclude) : std::vector<std::size_t>{};
    total += run_batch(model, bank, batch, gather_rows(queue.entries, rows), cfg.exclude_shared_positives, false).loss;
  }
  return total / static_cast<double>(pairs.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with Adam and epoch-boundary queue refresh. Keeps the
/// weights with the lowest validation loss (training loss when no validation
/// pairs are given) and stops after `patience` epochs without improvement.
inline TrainResult train(const std::vector<TrainingPair>& train_pairs, const std::vector<TrainingPair>& val_pairs,
                         const CurveBank& bank, Model model, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_pairs.empty()) throw Error(ErrorKind::empty_input, "training set is empty");
  for (const auto& p : train_pairs) bank.at(p.positive_id);
  for (const auto& p : val_pairs) bank.at(p.positive_id);
  if (model.sim.config().input_length != bank.grid_size())
    throw Error(ErrorKind::config, "sim encoder input length does not match the bank grid");

  NegativeQueue queue;
  queue.capacity = cfg.queue_size;
  if (cfg.queue_draw > 0) {
    queue.source_ids = detail::choose_queue_members(bank, val_pairs, cfg);
    const std::size_t reserve = cfg.exclude_shared_positives && cfg.queue_source == QueueSource::bank_curves ? cfg.batch_size : 0;
    if (queue.source_ids.size() < cfg.queue_draw + reserve)
      throw Error(ErrorKind::config, "queue of " + std::to_string(queue.source_ids.size()) +
                                         " entries cannot supply K=" + std::to_string(cfg.queue_draw) + " negatives per batch");
  }

  Adam adam(model, cfg);
  TrainResult result{model, {}, 0, false};
  auto record = [&](int epoch) {
    EpochRecord r{epoch, evaluate_loss(model, bank, train_pairs, queue, cfg, 0x7a),
                  val_pairs.empty() ? 0.0 : evaluate_loss(model, bank, val_pairs, queue, cfg, 0x7b), model.tau()};
    if (val_pairs.empty()) r.val_loss = r.train_loss;
    result.history.push_back(r);
    if (on_epoch) on_epoch(r);
    return r;
  };

  if (cfg.queue_draw > 0) detail::refresh_queue(queue, model, bank, val_pairs, cfg.queue_source, 0);
  double best_val = record(0).val_loss;
  int since_best = 0;

  std::vector<std::size_t> order(train_pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
    bool bad = false;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const TrainingPair*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(&train_pairs[order[i]]);
      MatrixXd negatives(0, static_cast<Eigen::Index>(model.embed_dim()));
      if (cfg.queue_draw > 0) {
        const auto exclude = cfg.exclude_shared_positives && cfg.queue_source == QueueSource::bank_curves
                                 ? detail::batch_positive_ids(batch) : std::vector<std::uint64_t>{};
        negatives = gather_rows(queue.entries, queue_sample(queue, cfg.queue_draw, rng, exclude));
      }
      const auto out = run_batch(model, bank, batch, negatives, cfg.exclude_shared_positives, true);
      if (!std::isfinite(out.loss)) {
        bad = true;
        break;
      }
      adam.step(model, out.grad_sim, out.grad_op, out.grad_log_tau);
    }
    if (cfg.queue_draw > 0 && !bad) detail::refresh_queue(queue, model, bank, val_pairs, cfg.queue_source, epoch);
    const EpochRecord r = bad ? EpochRecord{epoch, std::nan(""), std::nan(""), model.tau()} : record(epoch);
    if (bad || !std::isfinite(r.train_loss) || !std::isfinite(r.val_loss)) {
      if (bad) result.history.push_back(r);
      result.diverged = true;
      break;
    }
    if (r.val_loss < best_val) {
      best_val = r.val_loss;
      result.best = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace accept
