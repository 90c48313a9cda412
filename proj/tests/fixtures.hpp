#pragma once

// Shared builders for unit and acceptance tests.

#include <accept/contrastive.hpp>
#include <accept/curve_bank.hpp>
#include <accept/model.hpp>

#include <string>
#include <utility>
#include <vector>

namespace accept::fixtures {

inline OperationalWindow random_window(std::size_t T, Rng& rng, const std::string& chem = "LFP") {
  OperationalWindow w;
  w.chemistry = chem;
  w.initial_capacity_ah = 1.1 + 0.05 * standard_normal(rng);
  for (std::size_t t = 0; t < T; ++t) {
    w.cycle.push_back(static_cast<double>(t));
    w.soh.push_back(1.0 - 0.001 * static_cast<double>(t) + 0.002 * standard_normal(rng));
    w.temp_c.push_back(30.0 + standard_normal(rng));
    w.chg_crate.push_back(2.0 + 0.1 * standard_normal(rng));
    w.dis_crate.push_back(1.0 + 0.1 * standard_normal(rng));
    w.voltage_v.push_back(3.3 + 0.01 * standard_normal(rng));
    w.mask.push_back(1);
  }
  return w;
}

inline FeatureNormalizer test_normalizer() {
  FeatureNormalizer n;
  n.mean = {30.0, 2.0, 1.0, 3.3};
  n.stdev = {1.0, 0.1, 0.1, 0.01};
  n.capacity_mean = 1.1;
  n.capacity_std = 0.05;
  return n;
}

inline OpEncoderConfig small_op(std::size_t d = 8) {
  OpEncoderConfig c;
  c.chemistries = {"<unk>", "LFP", "NMC"};
  c.chem_dim = 3;
  c.hidden = 8;
  c.heads = 2;
  c.embed_dim = d;
  return c;
}

inline SimEncoderConfig small_sim(std::size_t d = 8) {
  SimEncoderConfig c;
  c.input_length = 32;
  c.layers = {{4, 5, 2}, {6, 3, 2}};
  c.embed_dim = d;
  return c;
}

inline std::vector<double> random_curve(std::size_t n, Rng& rng) {
  std::vector<double> c(n);
  double v = 1.0;
  for (auto& x : c) {
    x = v;
    v -= 0.01 * uniform01(rng);
  }
  return c;
}

/// Bank on the 32-point grid used by small_sim().
inline CurveBank small_bank(std::size_t n, std::uint64_t seed = 7) {
  BankOptions opt;
  opt.grid_size = 32;
  return generate_bank(ParamBounds{}, n, seed, opt).bank;
}

/// Pairs whose windows carry a per-pair operating point, positives 0..n-1.
inline std::vector<TrainingPair> toy_pairs(std::size_t n, std::size_t T, Rng& rng) {
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    OperationalWindow w = random_window(T, rng);
    const double shift = standard_normal(rng), shift2 = standard_normal(rng);
    for (std::size_t t = 0; t < T; ++t) {
      w.temp_c[t] += 3.0 * shift;
      w.chg_crate[t] += 0.3 * shift2;
    }
    out.push_back({w, static_cast<std::uint64_t>(i), "toy_" + std::to_string(i)});
  }
  return out;
}

/// Relative error ||num - ana|| / max(||num||, ||ana||) per tensor, with
/// central differences of step 1e-5.
template <class Loss>
std::vector<std::pair<std::string, double>> gradient_errors(NamedTensors& weights, const NamedTensors& analytic, Loss loss) {
  const double eps = 1e-5;
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    double num_sq = 0.0, diff_sq = 0.0, ana_sq = 0.0;
    for (Eigen::Index i = 0; i < weights[s].size(); ++i) {
      double& w = weights[s].data()[i];
      const double saved = w;
      w = saved + eps;
      const double up = loss();
      w = saved - eps;
      const double down = loss();
      w = saved;
      const double num = (up - down) / (2 * eps);
      const double ana = analytic[s].data()[i];
      num_sq += num * num;
      ana_sq += ana * ana;
      diff_sq += (num - ana) * (num - ana);
    }
    // The floor keeps a tensor with a near-zero gradient from comparing
    // finite-difference noise against itself.
    const double scale = std::max({std::sqrt(num_sq), std::sqrt(ana_sq), 1e-5});
    out.emplace_back(weights.names[s], std::sqrt(diff_sq) / scale);
  }
  return out;
}

}  // namespace accept::fixtures
