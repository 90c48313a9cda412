#pragma once

// Retrieval-based forecasting over an embedded curve bank.

#include <accept/curve_bank.hpp>
#include <accept/model.hpp>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>

namespace accept {

/// Normalised bank embeddings for one checkpoint. Row i belongs to ids[i].
struct BankIndex {
  std::vector<std::uint64_t> ids;
  MatrixXd embeddings;
  std::uint64_t checkpoint_hash = 0;
  std::uint64_t bank_hash = 0;

  std::size_t size() const { return ids.size(); }
};

inline std::uint64_t bank_fingerprint(const CurveBank& bank) { return io::fnv1a(bank_to_bytes(bank)); }

inline void check_compatible(const Model& model, const CurveBank& bank) {
  if (bank.empty()) throw Error(ErrorKind::empty_input, "bank is empty");
  if (model.sim.config().input_length != bank.grid_size())
    throw Error(ErrorKind::config, "checkpoint expects curves of length " + std::to_string(model.sim.config().input_length) +
                                       " but the bank grid is " + std::to_string(bank.grid_size()));
}

inline BankIndex build_index(const Model& model, const CurveBank& bank, unsigned threads = default_threads()) {
  check_compatible(model, bank);
  BankIndex index;
  index.checkpoint_hash = checkpoint_hash(model);
  index.bank_hash = bank_fingerprint(bank);
  index.embeddings.resize(static_cast<Eigen::Index>(bank.size()), static_cast<Eigen::Index>(model.embed_dim()));
  for (const auto& e : bank.entries()) index.ids.push_back(e.id);
  parallel_for(bank.size(), [&](std::size_t i) {
    index.embeddings.row(static_cast<Eigen::Index>(i)) = model.embed_curve(bank[i].capacity).values.transpose();
  }, threads);
  return index;
}

// Sidecar cache: "<bank>.emb" next to the bank file.
inline constexpr char index_magic[8] = {'A', 'C', 'C', 'E', 'M', 'B', '\0', '\0'};

inline std::string index_to_bytes(const BankIndex& index) {
  std::ostringstream os(std::ios::binary);
  os.write(index_magic, 8);
  io::write_u32(os, 1);
  io::write_u64(os, index.checkpoint_hash);
  io::write_u64(os, index.bank_hash);
  io::write_u64(os, index.ids.size());
  io::write_u64(os, static_cast<std::uint64_t>(index.embeddings.cols()));
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    io::write_u64(os, index.ids[i]);
    for (Eigen::Index j = 0; j < index.embeddings.cols(); ++j) io::write_f64(os, index.embeddings(static_cast<Eigen::Index>(i), j));
  }
  return os.str();
}

inline BankIndex index_from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, index_magic))
    throw Error(ErrorKind::corrupt_bank, "not an embedding cache");
  if (io::read_u32(is, "cache version") != 1) throw Error(ErrorKind::corrupt_bank, "unsupported cache version");
  BankIndex index;
  index.checkpoint_hash = io::read_u64(is, "checkpoint hash");
  index.bank_hash = io::read_u64(is, "bank hash");
  const auto n = io::read_u64(is, "entry count");
  const auto d = io::read_u64(is, "embedding dim");
  if (n > bytes.size() || d > bytes.size()) throw Error(ErrorKind::corrupt_bank, "cache header is implausible");
  index.ids.resize(n);
  index.embeddings.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < n; ++i) {
    index.ids[i] = io::read_u64(is, "entry id");
    for (std::uint64_t j = 0; j < d; ++j)
      index.embeddings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = io::read_f64(is, "embedding");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::corrupt_bank, "trailing bytes in cache");
  return index;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& bank_path) {
  auto p = bank_path;
  p += ".emb";
  return p;
}

/// Loads the sidecar when it was built from this checkpoint and bank,
/// otherwise rebuilds and rewrites it. `rebuilt` reports which happened.
inline BankIndex load_or_build_index(const Model& model, const CurveBank& bank, const std::filesystem::path& bank_path,
                                     bool* rebuilt = nullptr) {
  check_compatible(model, bank);
  const auto path = sidecar_path(bank_path);
  const auto want_ckpt = checkpoint_hash(model);
  const auto want_bank = bank_fingerprint(bank);
  if (std::filesystem::exists(path)) {
    try {
      auto index = index_from_bytes(io::read_file(path));
      if (index.checkpoint_hash == want_ckpt && index.bank_hash == want_bank &&
          index.embeddings.cols() == static_cast<Eigen::Index>(model.embed_dim())) {
        if (rebuilt) *rebuilt = false;
        return index;
      }
    } catch (const Error&) {
      // unreadable cache is rebuilt below
    }
  }
  auto index = build_index(model, bank);
  io::write_file_atomic(path, index_to_bytes(index));
  if (rebuilt) *rebuilt = true;
  return index;
}

// ---------------------------------------------------------------------------
// Ranking

struct Scored {
  std::uint64_t id = 0;
  double score = 0.0;
};

/// Cosine scores against every index row, best first; ties by ascending id.
inline std::vector<Scored> rank(const BankIndex& index, const Embedding& query, std::size_t k) {
  if (index.size() == 0) throw Error(ErrorKind::empty_input, "bank is empty");
  if (k < 1) throw Error(ErrorKind::config, "k must be at least 1");
  if (static_cast<Eigen::Index>(query.dim()) != index.embeddings.cols())
    throw Error(ErrorKind::config, "query embedding dimension does not match the index");
  const VectorXd q = normalize(query).values;
  const VectorXd s = index.embeddings * q;
  std::vector<Scored> all(index.size());
  for (std::size_t i = 0; i < all.size(); ++i)
    all[i] = {index.ids[i], std::clamp(s(static_cast<Eigen::Index>(i)), -1.0, 1.0)};
  k = std::min(k, all.size());
  auto better = [](const Scored& a, const Scored& b) { return a.score > b.score || (a.score == b.score && a.id < b.id); };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------
// Time alignment

/// Capacity of a bank grid curve whose end-of-curve falls on cycle `life`.
inline double capacity_at_cycle(const std::vector<double>& grid, double life, double cycle) {
  return interpolate_grid(grid, cycle / life);
}

struct AlignOptions {
  double max_life_ratio = 100.0;  // upper bound on life / last observed cycle
  int grid_points = 240;
  int refine_iterations = 60;
};

/// Cycle count spanned by the bank curve (its t_end) that minimises the squared
/// SoH misfit over the observed window. Searched on a log grid over
/// [last observed cycle, max_life_ratio * last observed cycle], then refined
/// by golden section.
inline double align_life(const std::vector<double>& grid, const std::vector<double>& cycles, const std::vector<double>& soh,
                         const AlignOptions& opt = {}) {
  if (cycles.empty() || cycles.size() != soh.size()) throw Error(ErrorKind::empty_input, "alignment needs observations");
  const double last = std::max(1.0, *std::max_element(cycles.begin(), cycles.end()));
  auto sse = [&](double log_life) {
    const double life = std::exp(log_life);
    double s = 0.0;
    for (std::size_t i = 0; i < cycles.size(); ++i) {
      const double r = capacity_at_cycle(grid, life, cycles[i]) - soh[i];
      s += r * r;
    }
    return s;
  };
  const double lo = std::log(last), hi = std::log(last * opt.max_life_ratio);
  const int n = std::max(2, opt.grid_points);
  int best = 0;
  double best_f = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double f = sse(lo + (hi - lo) * i / (n - 1));
    if (f < best_f) {
      best_f = f;
      best = i;
    }
  }
  double a = lo + (hi - lo) * std::max(0, best - 1) / (n - 1);
  double b = lo + (hi - lo) * std::min(n - 1, best + 1) / (n - 1);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = sse(x1), f2 = sse(x2);
  for (int it = 0; it < opt.refine_iterations; ++it) {
    if (f1 <= f2) {
      b = x2; x2 = x1; f2 = f1;
      x1 = b - g * (b - a); f1 = sse(x1);
    } else {
      a = x1; x1 = x2; f1 = f2;
      x2 = a + g * (b - a); f2 = sse(x2);
    }
  }
  const double x = f1 <= f2 ? x1 : x2;
  return std::min(f1, f2) <= best_f ? std::exp(x) : std::exp(lo + (hi - lo) * best / (n - 1));
}

struct WindowObservations {
  std::vector<double> cycles, soh;
};

inline WindowObservations observed(const OperationalWindow& w) {
  WindowObservations o;
  for (std::size_t t = 0; t < w.mask.size(); ++t)
    if (w.mask[t]) {
      o.cycles.push_back(w.cycle[t]);
      o.soh.push_back(w.soh[t]);
    }
  return o;
}

// ---------------------------------------------------------------------------
// Forecast

struct CyclePoint {
  double cycle = 0.0;
  double capacity = 0.0;
};

/// Materialises a grid curve on integer cycles 0..floor(life).
inline std::vector<CyclePoint> cycle_curve(const std::vector<double>& grid, double life) {
  const auto n = static_cast<std::size_t>(std::floor(life));
  std::vector<CyclePoint> out(n + 1);
  for (std::size_t i = 0; i <= n; ++i) out[i] = {static_cast<double>(i), capacity_at_cycle(grid, life, static_cast<double>(i))};
  return out;
}

struct Forecast {
  std::uint64_t best_entry = 0;
  double similarity = 0.0;
  DegradationParams params;
  double t_end = 0.0;
  double life_cycles = 0.0;  // cycle index aligned with t_end
  std::vector<CyclePoint> predicted_curve;
  std::vector<ModeReport> modes;  // one per predicted_curve point
  std::vector<Scored> top_k;

  double cycle_to_t(double cycle) const { return cycle / life_cycles * t_end; }
};

struct PredictOptions {
  std::size_t k = 5;
  AlignOptions align;
  double step = 0.01;
  bool with_modes = true;
};

inline std::vector<ModeReport> modes_on_cycles(const DegradationParams& p, double t_end, double life,
                                               const std::vector<CyclePoint>& pts, double step, double time_cap) {
  const SimCurve curve = simulate(p, step, time_cap);
  std::vector<ModeReport> out;
  out.reserve(pts.size());
  for (const auto& pt : pts) out.push_back(quantify_modes(curve, std::min(curve.t_end(), pt.cycle / life * t_end)));
  return out;
}

inline Forecast predict(const OperationalWindow& window, const CurveBank& bank, const Model& model, const BankIndex& index,
                        const PredictOptions& opt = {}) {
  check_compatible(model, bank);
  window.validate();
  Forecast f;
  f.top_k = rank(index, model.op.encode(window, model.normalizer), opt.k);
  const BankEntry& best = bank.at(f.top_k.front().id);
  f.best_entry = best.id;
  f.similarity = f.top_k.front().score;
  f.params = best.params;
  f.t_end = best.t_end;
  const auto obs = observed(window);
  f.life_cycles = align_life(best.capacity, obs.cycles, obs.soh, opt.align);
  f.predicted_curve = cycle_curve(best.capacity, f.life_cycles);
  if (opt.with_modes)
    f.modes = modes_on_cycles(best.params, best.t_end, f.life_cycles, f.predicted_curve, bank.provenance().step,
                              bank.provenance().time_cap);
  return f;
}

struct RankedPath {
  std::uint64_t id = 0;
  double score = 0.0;
  double life_cycles = 0.0;
  std::vector<CyclePoint> curve;
};

/// Curves for every ranked id, each aligned to the window on its own.
inline std::vector<RankedPath> top_k_paths(const Forecast& f, const CurveBank& bank, const OperationalWindow& window,
                                           const AlignOptions& align = {}) {
  const auto obs = observed(window);
  std::vector<RankedPath> out;
  for (const auto& s : f.top_k) {
    const BankEntry* e = bank.find(s.id);
    if (!e) throw Error(ErrorKind::corrupt_bank, "ranked id " + std::to_string(s.id) + " is missing from the bank");
    if (s.id == f.best_entry) {
      out.push_back({s.id, s.score, f.life_cycles, f.predicted_curve});
      continue;
    }
    const double life = align_life(e->capacity, obs.cycles, obs.soh, align);
    out.push_back({s.id, s.score, life, cycle_curve(e->capacity, life)});
  }
  return out;
}

inline ModeReport diagnose(const Forecast& f, double at_cycle, double step = 0.01, double time_cap = 50.0) {
  const SimCurve curve = simulate(f.params, step, time_cap);
  return quantify_modes(curve, f.cycle_to_t(at_cycle));
}

// ---------------------------------------------------------------------------
// Uncertainty

struct UncertaintyOptions {
  std::size_t rounds = 200;
  double sigma_rel = 0.05;
  std::size_t set_size = 8;  // perturbed candidates per round
  std::uint64_t seed = 1;
  double step = 0.01;
  double time_cap = 50.0;
  std::size_t grid_size = default_grid_size;
};

struct UncertaintyBand {
  std::vector<DegradationParams> samples;  // selected curve per round
  std::vector<double> sample_life;         // cycle at which each selected curve ends
  std::vector<double> cycles;
  std::vector<double> q05, q50, q95;

  double mean_width() const {
    if (cycles.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < cycles.size(); ++i) s += q95[i] - q05[i];
    return s / static_cast<double>(cycles.size());
  }
};

inline DegradationParams perturb(const DegradationParams& p, double sigma, Rng& rng) {
  DegradationParams q = p;
  q.k *= std::exp(sigma * standard_normal(rng));
  q.a0 *= std::exp(sigma * standard_normal(rng));
  q.b0 *= std::exp(sigma * standard_normal(rng));
  q.c *= std::exp(sigma * standard_normal(rng));
  q.t_p = std::max(0.0, q.t_p + sigma * q.t_p * standard_normal(rng));
  return q;
}

/// Nearest-rank quantile of an unsorted vector.
inline double nearest_rank(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(r, 1, v.size()) - 1];
}

/// Selected perturbed curves share the forecast's cycle-to-t scale, so a
/// faster-fading draw reaches end of life at an earlier cycle. Past its own
/// end a curve is continued without the capacity floor.
inline UncertaintyBand uncertainty(const OperationalWindow& window, const Forecast& forecast, const Model& model,
                                   const UncertaintyOptions& opt = {}) {
  if (opt.rounds < 1) throw Error(ErrorKind::config, "number of perturbation rounds must be at least 1");
  if (!(opt.sigma_rel > 0.0)) throw Error(ErrorKind::config, "sigma_rel must be positive");
  if (opt.set_size < 1) throw Error(ErrorKind::config, "perturbation set size must be at least 1");
  if (!(forecast.life_cycles > 0.0) || !(forecast.t_end > 0.0))
    throw Error(ErrorKind::contract, "forecast has no time scale");
  const VectorXd q = model.embed_window(window).values;
  const double cycles_per_t = forecast.life_cycles / forecast.t_end;

  struct Pick {
    bool ok = false;
    DegradationParams params;
    double t_end = 0.0;
  };
  std::vector<Pick> picks(opt.rounds);
  parallel_for(opt.rounds, [&](std::size_t r) {
    Rng rng(derive_seed(opt.seed, r));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < opt.set_size; ++j) {
      const DegradationParams p = perturb(forecast.params, opt.sigma_rel, rng);
      SimCurve curve;
      try {
        curve = simulate(p, opt.step, opt.time_cap);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::diverged) throw;
        continue;
      }
      const double s = model.embed_curve(resample_uniform(curve, opt.grid_size)).values.dot(q);
      if (s > best) {  // ties keep the earlier draw
        best = s;
        picks[r] = {true, p, curve.t_end()};
      }
    }
  });

  UncertaintyBand band;
  double max_life = forecast.life_cycles;
  for (const auto& p : picks)
    if (p.ok) {
      band.samples.push_back(p.params);
      band.sample_life.push_back(p.t_end * cycles_per_t);
      max_life = std::max(max_life, band.sample_life.back());
    }
  if (band.samples.empty()) throw Error(ErrorKind::diverged, "every perturbed simulation diverged");

  const auto n = static_cast<std::size_t>(std::floor(max_life));
  SimulateOptions full;
  full.step = opt.step;
  full.time_cap = std::min(opt.time_cap, (static_cast<double>(n) + 1.0) / cycles_per_t);
  full.early_stop = false;
  std::vector<SimCurve> curves(band.samples.size());
  parallel_for(curves.size(), [&](std::size_t i) { curves[i] = simulate(band.samples[i], full); });

  std::vector<double> col(curves.size());
  for (std::size_t c = 0; c <= n; ++c) {
    const double t = static_cast<double>(c) / cycles_per_t;
    for (std::size_t i = 0; i < curves.size(); ++i) col[i] = capacity_at(curves[i], t);
    band.cycles.push_back(static_cast<double>(c));
    band.q05.push_back(nearest_rank(col, 0.05));
    band.q50.push_back(nearest_rank(col, 0.50));
    band.q95.push_back(nearest_rank(col, 0.95));
  }
  return band;
}

// ---------------------------------------------------------------------------
// Zero-shot

struct CandidateScore {
  std::size_t index = 0;  // position in the candidate list
  double score = 0.0;
};

/// Ranks externally supplied curves (already on the encoder's grid) against
/// the window; ties keep input order.
inline std::vector<CandidateScore> zero_shot_classify(const OperationalWindow& window,
                                                      const std::vector<std::vector<double>>& candidates, const Model& model) {
  if (candidates.size() < 2) throw Error(ErrorKind::config, "zero-shot needs at least two candidates");
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].size() != model.sim.config().input_length)
      throw Error(ErrorKind::config, "candidate " + std::to_string(i) + " has length " + std::to_string(candidates[i].size()) +
                                         ", expected " + std::to_string(model.sim.config().input_length));
  const VectorXd q = model.embed_window(window).values;
  std::vector<CandidateScore> out;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    out.push_back({i, std::clamp(model.embed_curve(candidates[i]).values.dot(q), -1.0, 1.0)});
  std::stable_sort(out.begin(), out.end(), [](const CandidateScore& a, const CandidateScore& b) { return a.score > b.score; });
  return out;
}

}  // namespace accept
