#include <gtest/gtest.h>

#include <accept/contrastive.hpp>

#include <cmath>
#include <set>

#include "fixtures.hpp"

using namespace accept;
using namespace accept::fixtures;

namespace {

MatrixXd unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = standard_normal(rng);
    m.row(i).normalize();
  }
  return m;
}

NegativeQueue make_queue(std::size_t n, Rng& rng) {
  NegativeQueue q;
  q.capacity = n;
  q.entries = unit_rows(static_cast<Eigen::Index>(n), 4, rng);
  for (std::size_t i = 0; i < n; ++i) q.source_ids.push_back(100 + i);
  return q;
}

}  // namespace

TEST(ContrastiveLoss, SinglePairIsZero) {
  MatrixXd a(1, 3);
  a << 0.0, 1.0, 0.0;
  MatrixXd b(1, 3);
  b << 1.0, 0.0, 0.0;
  EXPECT_EQ(contrastive_loss(a, b, MatrixXd(0, 3), 0.07).loss, 0.0);
}

TEST(ContrastiveLoss, OrthogonalCrossPairs) {
  const MatrixXd e = MatrixXd::Identity(2, 2);
  const auto r = contrastive_loss(e, e, MatrixXd(0, 2), 1.0);
  EXPECT_NEAR(r.row_loss(0), std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(r.loss, 2.0 * std::log(1.0 + std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(r.loss, 0.626523, 1e-6);
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveBLogB) {
  for (Eigen::Index B : {2, 3, 8, 17}) {
    MatrixXd e = MatrixXd::Zero(B, 5);
    e.col(2).setOnes();
    EXPECT_NEAR(contrastive_loss(e, e, MatrixXd(0, 5), 0.3).loss, static_cast<double>(B) * std::log(static_cast<double>(B)), 1e-9);
  }
}

TEST(ContrastiveLoss, RowTermsAreNonNegative) {
  Rng rng(1);
  const auto r = contrastive_loss(unit_rows(6, 8, rng), unit_rows(6, 8, rng), unit_rows(10, 8, rng), 0.1);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_GE(r.row_loss(i), 0.0);
}

TEST(ContrastiveLoss, PermutationEquivariant) {
  Rng rng(2);
  const MatrixXd s = unit_rows(5, 8, rng), o = unit_rows(5, 8, rng), n = unit_rows(7, 8, rng);
  const auto base = contrastive_loss(s, o, n, 0.2);
  const std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
  MatrixXd sp(5, 8), op(5, 8);
  for (Eigen::Index i = 0; i < 5; ++i) {
    sp.row(i) = s.row(perm[static_cast<std::size_t>(i)]);
    op.row(i) = o.row(perm[static_cast<std::size_t>(i)]);
  }
  const auto p = contrastive_loss(sp, op, n, 0.2);
  EXPECT_NEAR(p.loss, base.loss, 1e-12);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(p.row_loss(i), base.row_loss(perm[static_cast<std::size_t>(i)]), 1e-12);
}

TEST(ContrastiveLoss, NegativeEqualToPositiveRaisesRow) {
  Rng rng(3);
  const MatrixXd s = unit_rows(3, 6, rng), o = unit_rows(3, 6, rng);
  const auto before = contrastive_loss(s, o, MatrixXd(0, 6), 0.5);
  const auto after = contrastive_loss(s, o, o.row(1), 0.5);
  EXPECT_GT(after.row_loss(1), before.row_loss(1));
}

TEST(ContrastiveLoss, StableAtTinyTemperature) {
  MatrixXd s(2, 2), o(2, 2);
  s << 1, 0, 0, 1;
  o << 1, 0, -1, 0;
  MatrixXd n(1, 2);
  n << 0, -1;
  const auto r = contrastive_loss(s, o, n, 1e-3);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_TRUE(std::isfinite(r.grad_tau));
  EXPECT_TRUE(r.grad_sim.allFinite());
}

TEST(ContrastiveLoss, RejectsNonUnitInputs) {
  MatrixXd a = MatrixXd::Ones(2, 2);
  try {
    contrastive_loss(a, a, MatrixXd(0, 2), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
  EXPECT_THROW(contrastive_loss(MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), MatrixXd(0, 2), 0.0), Error);
}

TEST(ContrastiveLoss, TemperatureGradientMatchesFiniteDifference) {
  Rng rng(4);
  const MatrixXd s = unit_rows(4, 8, rng), o = unit_rows(4, 8, rng), n = unit_rows(6, 8, rng);
  for (double tau : {0.05, 0.3, 2.0}) {
    const double eps = 1e-5 * tau;
    const double num = (contrastive_loss(s, o, n, tau + eps).loss - contrastive_loss(s, o, n, tau - eps).loss) / (2 * eps);
    const double ana = contrastive_loss(s, o, n, tau).grad_tau;
    EXPECT_LT(std::abs(num - ana) / std::abs(ana), 1e-4);
  }
}

TEST(ContrastiveLoss, EmbeddingGradientsMatchFiniteDifferences) {
  // Directional derivatives along the tangent plane keep the inputs unit-norm.
  Rng rng(5);
  const MatrixXd s = unit_rows(3, 5, rng), o = unit_rows(3, 5, rng), n = unit_rows(4, 5, rng);
  const auto r = contrastive_loss(s, o, n, 0.4);
  auto check = [&](int which, Eigen::Index row) {
    MatrixXd base = which == 0 ? s : which == 1 ? o : n;
    VectorXd dir(5);
    for (auto& x : dir) x = standard_normal(rng);
    const VectorXd x = base.row(row).transpose();
    dir -= dir.dot(x) * x;
    dir.normalize();
    auto loss_at = [&](double a) {
      MatrixXd m = base;
      m.row(row) = (std::cos(a) * x + std::sin(a) * dir).transpose();
      return contrastive_loss(which == 0 ? m : s, which == 1 ? m : o, which == 2 ? m : n, 0.4).loss;
    };
    const double num = (loss_at(1e-6) - loss_at(-1e-6)) / 2e-6;
    const MatrixXd& g = which == 0 ? r.grad_sim : which == 1 ? r.grad_op : r.grad_negatives;
    EXPECT_NEAR(g.row(row).dot(dir.transpose()), num, 1e-7);
  };
  for (int which = 0; which < 3; ++which)
    for (Eigen::Index row = 0; row < 3; ++row) check(which, row);
}

TEST(ContrastiveLoss, SharedPositiveColumnsDropOut) {
  MatrixXd e = MatrixXd::Zero(2, 3);
  e(0, 0) = 1;
  e(1, 0) = 1;
  const auto masked = contrastive_loss(e, e, MatrixXd(0, 3), 0.1, [](Eigen::Index, Eigen::Index) { return true; });
  EXPECT_EQ(masked.loss, 0.0);
}

TEST(QueueSample, FullDrawIsPermutation) {
  Rng rng(6);
  const auto q = make_queue(12, rng);
  Rng draw(1);
  auto rows = queue_sample(q, 12, draw);
  std::set<std::size_t> seen(rows.begin(), rows.end());
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(*seen.rbegin(), 11u);
}

TEST(QueueSample, EmptyDrawAndInBatchReduction) {
  Rng rng(7);
  const auto q = make_queue(5, rng);
  Rng draw(1);
  EXPECT_TRUE(queue_sample(q, 0, draw).empty());
  const MatrixXd s = unit_rows(3, 4, rng), o = unit_rows(3, 4, rng);
  EXPECT_EQ(contrastive_loss(s, o, gather_rows(q.entries, {}), 0.2).loss, contrastive_loss(s, o, MatrixXd(0, 4), 0.2).loss);
}

TEST(QueueSample, DeterministicForSeed) {
  Rng rng(8);
  const auto q = make_queue(50, rng);
  Rng a(99), b(99), c(100);
  const auto x = queue_sample(q, 10, a);
  EXPECT_EQ(x, queue_sample(q, 10, b));
  EXPECT_NE(x, queue_sample(q, 10, c));
}

TEST(QueueSample, TooManyRequested) {
  Rng rng(9);
  const auto q = make_queue(4, rng);
  Rng draw(1);
  EXPECT_THROW(queue_sample(q, 5, draw), Error);
  EXPECT_THROW(queue_sample(q, 4, draw, {100}), Error);
}

TEST(QueueSample, ExclusionRespected) {
  Rng rng(10);
  const auto q = make_queue(20, rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng draw(seed);
    for (auto r : queue_sample(q, 15, draw, {103, 107, 111})) {
      EXPECT_NE(q.source_ids[r], 103u);
      EXPECT_NE(q.source_ids[r], 107u);
      EXPECT_NE(q.source_ids[r], 111u);
    }
  }
}

TEST(ModelGradient, EveryTensorAndTemperature) {
  Rng rng(11);
  const CurveBank bank = small_bank(12);
  Model m = Model::create(small_sim(8), small_op(8), 3);
  m.normalizer = test_normalizer();
  const auto pairs = toy_pairs(3, 6, rng);
  std::vector<const TrainingPair*> batch{&pairs[0], &pairs[1], &pairs[2]};
  MatrixXd negatives(4, 8);
  for (Eigen::Index k = 0; k < 4; ++k) negatives.row(k) = m.embed_curve(bank[5 + static_cast<std::size_t>(k)].capacity).values.transpose();
  const auto out = run_batch(m, bank, batch, negatives, true, true);

  Model probe = m;
  auto loss = [&] { return run_batch(probe, bank, batch, negatives, true, false).loss; };
  for (const auto& [name, err] : gradient_errors(probe.sim.mutable_weights(), out.grad_sim, loss)) EXPECT_LT(err, 1e-4) << name;
  for (const auto& [name, err] : gradient_errors(probe.op.mutable_weights(), out.grad_op, loss)) EXPECT_LT(err, 1e-4) << name;
  const double eps = 1e-5;
  probe.log_tau = m.log_tau + eps;
  const double up = loss();
  probe.log_tau = m.log_tau - eps;
  const double down = loss();
  EXPECT_LT(std::abs((up - down) / (2 * eps) - out.grad_log_tau) / std::abs(out.grad_log_tau), 1e-4);
}

TEST(Train, MemorisesToySet) {
  Rng rng(12);
  // Power-law fades of distinct depth and curvature.
  CurveBank bank(32, {});
  for (int i = 0; i < 20; ++i) {
    BankEntry e;
    e.id = static_cast<std::uint64_t>(i);
    e.t_end = 10.0;
    const double depth = 0.05 + 0.0625 * (i % 5), power = 0.5 + (i / 5);
    for (int j = 0; j < 32; ++j) e.capacity.push_back(1.0 - depth * std::pow(j / 31.0, power));
    bank.add(e);
  }
  const auto pairs = toy_pairs(20, 8, rng);
  Model m = Model::create(small_sim(16), small_op(16), 4);
  m.normalizer = test_normalizer();
  TrainConfig cfg;
  cfg.batch_size = 20;
  cfg.queue_draw = 0;
  cfg.max_epochs = 600;
  cfg.patience = 1000;
  cfg.learning_rate = 3e-3;
  const auto r = train(pairs, {}, bank, m, cfg);
  ASSERT_EQ(r.history.size(), 601u);
  EXPECT_LT(r.history.back().train_loss, 0.1 * r.history.front().train_loss);
  EXPECT_FALSE(r.diverged);
}

TEST(Train, ZeroLearningRateChangesNothing) {
  Rng rng(13);
  const CurveBank bank = small_bank(40);
  const auto pairs = toy_pairs(10, 5, rng);
  const auto val = toy_pairs(4, 5, rng);
  Model m = Model::create(small_sim(), small_op(), 5);
  m.normalizer = test_normalizer();
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.queue_draw = 8;
  cfg.queue_size = 30;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  const auto r = train(pairs, val, bank, m, cfg);
  ASSERT_EQ(r.history.size(), 5u);
  for (const auto& e : r.history) {
    EXPECT_EQ(std::memcmp(&e.train_loss, &r.history[0].train_loss, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&e.val_loss, &r.history[0].val_loss, sizeof(double)), 0);
    EXPECT_EQ(e.tau, r.history[0].tau);
  }
  EXPECT_TRUE(same_weights(r.best, m));
}

TEST(Train, ReproducibleHistories) {
  Rng rng(14);
  const CurveBank bank = small_bank(40);
  const auto pairs = toy_pairs(9, 5, rng);
  const auto val = toy_pairs(3, 5, rng);
  Model m = Model::create(small_sim(), small_op(), 6);
  m.normalizer = test_normalizer();
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.queue_draw = 6;
  cfg.queue_size = 25;
  cfg.max_epochs = 3;
  const auto a = train(pairs, val, bank, m, cfg);
  const auto b = train(pairs, val, bank, m, cfg);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
    EXPECT_EQ(a.history[i].tau, b.history[i].tau);
  }
  EXPECT_TRUE(same_weights(a.best, b.best));
  EXPECT_EQ(checkpoint_to_bytes(a.best), checkpoint_to_bytes(b.best));
}

TEST(Train, OperationalQueueSource) {
  Rng rng(15);
  const CurveBank bank = small_bank(30);
  const auto pairs = toy_pairs(6, 4, rng);
  auto val = toy_pairs(8, 4, rng);
  Model m = Model::create(small_sim(), small_op(), 7);
  m.normalizer = test_normalizer();
  TrainConfig cfg;
  cfg.queue_source = QueueSource::operational_windows;
  cfg.queue_draw = 5;
  cfg.max_epochs = 2;
  const auto r = train(pairs, val, bank, m, cfg);
  EXPECT_EQ(r.history.size(), 3u);
  for (const auto& e : r.history) EXPECT_TRUE(std::isfinite(e.val_loss));
}

TEST(Train, Preconditions) {
  const CurveBank bank = small_bank(10);
  Model m = Model::create(small_sim(), small_op(), 8);
  TrainConfig cfg;
  EXPECT_THROW(train({}, {}, bank, m, cfg), Error);
  Rng rng(16);
  auto pairs = toy_pairs(3, 4, rng);
  pairs[0].positive_id = 999;
  EXPECT_THROW(train(pairs, {}, bank, m, cfg), Error);
  pairs[0].positive_id = 0;
  cfg.queue_draw = 64;  // more than the 10-curve bank can supply
  EXPECT_THROW(train(pairs, {}, bank, m, cfg), Error);
  cfg.queue_draw = 0;
  cfg.batch_size = 0;
  EXPECT_THROW(train(pairs, {}, bank, m, cfg), Error);
}
