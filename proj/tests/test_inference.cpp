#include <gtest/gtest.h>

#include <accept/inference.hpp>

#include <filesystem>
#include <set>

#include "fixtures.hpp"

using namespace accept;
using namespace accept::fixtures;

namespace {

struct Scene {
  CurveBank bank = small_bank(25);
  Model model = [] {
    Model m = Model::create(small_sim(), small_op(), 21);
    m.normalizer = test_normalizer();
    return m;
  }();
  BankIndex index = build_index(model, bank);
};

OperationalWindow window_following(const BankEntry& e, double life, std::size_t n, Rng& rng) {
  OperationalWindow w = random_window(n, rng);
  for (std::size_t t = 0; t < n; ++t) w.soh[t] = capacity_at_cycle(e.capacity, life, w.cycle[t]);
  return w;
}

}  // namespace

TEST(Rank, SelfMatchScoresOne) {
  Scene s;
  for (std::size_t i = 0; i < s.bank.size(); i += 6) {
    Embedding q{s.index.embeddings.row(static_cast<Eigen::Index>(i)).transpose(), true};
    const auto r = rank(s.index, q, 3);
    EXPECT_EQ(r.front().id, s.bank[i].id);
    EXPECT_NEAR(r.front().score, 1.0, 1e-12);
  }
}

TEST(Rank, FullRankingIsPermutationSortedAndBounded) {
  Scene s;
  Rng rng(1);
  const auto r = rank(s.index, s.model.op.encode(random_window(10, rng), s.model.normalizer), s.bank.size());
  ASSERT_EQ(r.size(), s.bank.size());
  std::set<std::uint64_t> ids;
  for (std::size_t i = 0; i < r.size(); ++i) {
    ids.insert(r[i].id);
    EXPECT_GE(r[i].score, -1.0);
    EXPECT_LE(r[i].score, 1.0);
    if (i > 0) {
      EXPECT_GE(r[i - 1].score, r[i].score);
    }
  }
  EXPECT_EQ(ids.size(), s.bank.size());
}

TEST(Rank, QueryScaleDoesNotMatter) {
  Scene s;
  Rng rng(2);
  const Embedding q = s.model.op.encode(random_window(10, rng), s.model.normalizer);
  const auto a = rank(s.index, q, 10);
  for (double lambda : {1e-3, 5.0, 1e4}) {
    const auto b = rank(s.index, {lambda * q.values, false}, 10);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id);
  }
}

TEST(Rank, TiesResolvedByAscendingId) {
  BankIndex index;
  index.ids = {9, 3, 5};
  index.embeddings = MatrixXd::Zero(3, 2);
  index.embeddings.col(0).setOnes();
  VectorXd q(2);
  q << 1.0, 0.0;
  const auto r = rank(index, {q, true}, 3);
  EXPECT_EQ(r[0].id, 3u);
  EXPECT_EQ(r[1].id, 5u);
  EXPECT_EQ(r[2].id, 9u);
}

TEST(Predict, SingleEntryBank) {
  Scene s;
  CurveBank one(s.bank.grid_size(), s.bank.provenance());
  one.add(s.bank[4]);
  const BankIndex idx = build_index(s.model, one);
  Rng rng(3);
  const Forecast f = predict(random_window(20, rng), one, s.model, idx);
  EXPECT_EQ(f.best_entry, s.bank[4].id);
  EXPECT_GE(f.similarity, -1.0);
  EXPECT_LE(f.similarity, 1.0);
  ASSERT_EQ(f.top_k.size(), 1u);
}

TEST(Predict, ForecastInvariants) {
  Scene s;
  Rng rng(4);
  const Forecast f = predict(random_window(30, rng), s.bank, s.model, s.index);
  EXPECT_EQ(f.top_k.front().id, f.best_entry);
  EXPECT_EQ(f.top_k.size(), 5u);
  for (std::size_t i = 1; i < f.top_k.size(); ++i) EXPECT_GE(f.top_k[i - 1].score, f.top_k[i].score);
  ASSERT_FALSE(f.predicted_curve.empty());
  EXPECT_EQ(f.predicted_curve.size(), f.modes.size());
  EXPECT_EQ(f.predicted_curve.back().cycle, std::floor(f.life_cycles));
  for (const auto& m : f.modes) EXPECT_LE(std::abs(m.capacity - (1.0 - m.lli_fade) * (1.0 - m.lam_fade)), 1e-12);
}

TEST(Predict, GridMismatchIsConfigError) {
  Scene s;
  const CurveBank other = generate_bank(ParamBounds{}, 3, 1).bank;  // 256-point grid
  Rng rng(5);
  try {
    predict(random_window(5, rng), other, s.model, s.index);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  CurveBank empty(32, {});
  EXPECT_THROW(predict(random_window(5, rng), empty, s.model, s.index), Error);
}

TEST(Align, RecoversKnownLifetime) {
  Scene s;
  Rng rng(6);
  for (std::size_t i : {0u, 7u, 13u}) {
    const auto& e = s.bank[i];
    const double life = 900.0;
    const auto w = window_following(e, life, 400, rng);
    const auto obs = observed(w);
    EXPECT_NEAR(align_life(e.capacity, obs.cycles, obs.soh), life, 1.0) << i;
  }
}

TEST(Align, StaysAtOrAboveObservedCycles) {
  const std::vector<double> flat(32, 1.0);
  const double life = align_life(flat, {0, 1, 2, 150}, {1, 1, 1, 1});
  EXPECT_GE(life, 150.0);
}

TEST(TopK, FirstPathIsPrediction) {
  Scene s;
  Rng rng(7);
  const auto w = random_window(40, rng);
  PredictOptions opt;
  opt.k = 1;
  const Forecast f = predict(w, s.bank, s.model, s.index, opt);
  const auto paths = top_k_paths(f, s.bank, w);
  ASSERT_EQ(paths.size(), 1u);
  ASSERT_EQ(paths[0].curve.size(), f.predicted_curve.size());
  for (std::size_t i = 0; i < paths[0].curve.size(); ++i) EXPECT_EQ(paths[0].curve[i].capacity, f.predicted_curve[i].capacity);
}

TEST(TopK, DistinctEmbeddingsGiveStrictOrder) {
  Scene s;
  Rng rng(8);
  const auto w = random_window(40, rng);
  const Forecast f = predict(w, s.bank, s.model, s.index);
  const auto paths = top_k_paths(f, s.bank, w);
  for (std::size_t i = 1; i < paths.size(); ++i) EXPECT_GT(paths[i - 1].score, paths[i].score);
}

TEST(TopK, MissingIdIsCorruptBank) {
  Scene s;
  Rng rng(9);
  const auto w = random_window(10, rng);
  Forecast f = predict(w, s.bank, s.model, s.index);
  f.top_k.push_back({4242, -1.0});
  try {
    top_k_paths(f, s.bank, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::corrupt_bank);
  }
}

TEST(Uncertainty, VanishingSigmaCollapsesBand) {
  Scene s;
  Rng rng(10);
  const auto w = random_window(30, rng);
  const Forecast f = predict(w, s.bank, s.model, s.index);
  UncertaintyOptions opt;
  opt.rounds = 12;
  opt.sigma_rel = 1e-12;
  opt.grid_size = 32;
  const auto band = uncertainty(w, f, s.model, opt);
  EXPECT_EQ(band.samples.size(), 12u);
  EXPECT_LT(band.mean_width(), 1e-6);
  for (const auto& p : band.samples) EXPECT_NEAR(p.k, f.params.k, 1e-9);
}

TEST(Uncertainty, QuantilesOrdered) {
  Scene s;
  Rng rng(11);
  const auto w = random_window(30, rng);
  const Forecast f = predict(w, s.bank, s.model, s.index);
  UncertaintyOptions opt;
  opt.rounds = 40;
  opt.grid_size = 32;
  const auto band = uncertainty(w, f, s.model, opt);
  for (std::size_t i = 0; i < band.cycles.size(); ++i) {
    EXPECT_LE(band.q05[i], band.q50[i]);
    EXPECT_LE(band.q50[i], band.q95[i]);
  }
}

TEST(Uncertainty, WidthGrowsWithSigma) {
  Scene s;
  Rng rng(12);
  double widths[3] = {0, 0, 0};
  const double sigmas[3] = {0.01, 0.05, 0.1};
  for (int trial = 0; trial < 4; ++trial) {
    const auto w = random_window(30, rng);
    const Forecast f = predict(w, s.bank, s.model, s.index);
    for (int j = 0; j < 3; ++j) {
      UncertaintyOptions opt;
      opt.rounds = 40;
      opt.sigma_rel = sigmas[j];
      opt.grid_size = 32;
      widths[j] += uncertainty(w, f, s.model, opt).mean_width();
    }
  }
  EXPECT_LE(widths[0], widths[1]);
  EXPECT_LE(widths[1], widths[2]);
}

TEST(Uncertainty, Preconditions) {
  Scene s;
  Rng rng(13);
  const auto w = random_window(5, rng);
  const Forecast f = predict(w, s.bank, s.model, s.index);
  UncertaintyOptions opt;
  opt.rounds = 0;
  EXPECT_THROW(uncertainty(w, f, s.model, opt), Error);
  opt.rounds = 3;
  opt.sigma_rel = 0.0;
  EXPECT_THROW(uncertainty(w, f, s.model, opt), Error);
}

TEST(NearestRank, Definition) {
  EXPECT_EQ(nearest_rank({5, 1, 4, 2, 3}, 0.5), 3.0);
  EXPECT_EQ(nearest_rank({5, 1, 4, 2, 3}, 0.05), 1.0);
  EXPECT_EQ(nearest_rank({5, 1, 4, 2, 3}, 0.95), 5.0);
}

TEST(ZeroShot, IdenticalCandidatesKeepInputOrder) {
  Scene s;
  Rng rng(14);
  const auto r = zero_shot_classify(random_window(8, rng), {s.bank[2].capacity, s.bank[2].capacity}, s.model);
  EXPECT_EQ(r[0].index, 0u);
  EXPECT_EQ(r[1].index, 1u);
  EXPECT_EQ(r[0].score, r[1].score);
}

TEST(ZeroShot, Errors) {
  Scene s;
  Rng rng(15);
  const auto w = random_window(8, rng);
  EXPECT_THROW(zero_shot_classify(w, {s.bank[0].capacity}, s.model), Error);
  EXPECT_THROW(zero_shot_classify(w, {s.bank[0].capacity, std::vector<double>(31, 1.0)}, s.model), Error);
}

TEST(Diagnose, DelegatesToModes) {
  Scene s;
  Rng rng(16);
  const Forecast f = predict(random_window(20, rng), s.bank, s.model, s.index);
  const ModeReport start = diagnose(f, 0.0);
  EXPECT_EQ(start.capacity, 1.0);
  EXPECT_EQ(start.lam_fade, 0.0);
  const ModeReport mid = diagnose(f, 0.5 * f.life_cycles);
  const SimCurve c = simulate(f.params);
  const ModeReport direct = quantify_modes(c, f.cycle_to_t(0.5 * f.life_cycles));
  EXPECT_EQ(mid.capacity, direct.capacity);
  EXPECT_THROW(diagnose(f, 10.0 * f.life_cycles), Error);
}

TEST(IndexCache, RebuiltOnlyWhenCheckpointChanges) {
  Scene s;
  const auto dir = std::filesystem::temp_directory_path() / "accept_index_test";
  std::filesystem::create_directories(dir);
  const auto bank_path = dir / "bank.acb";
  save_bank(s.bank, bank_path);
  std::filesystem::remove(sidecar_path(bank_path));
  bool rebuilt = false;
  const auto a = load_or_build_index(s.model, s.bank, bank_path, &rebuilt);
  EXPECT_TRUE(rebuilt);
  const auto b = load_or_build_index(s.model, s.bank, bank_path, &rebuilt);
  EXPECT_FALSE(rebuilt);
  EXPECT_TRUE(a.embeddings == b.embeddings);
  Model other = s.model;
  other.log_tau += 0.1;
  load_or_build_index(other, s.bank, bank_path, &rebuilt);
  EXPECT_TRUE(rebuilt);
  std::filesystem::remove_all(dir);
}
