#pragma once

// Recovery of DegradationParams from an observed capacity series by
// minimising a midpoint-rule L2 misfit with a box-projected Nelder-Mead.

#include <accept/degradation_model.hpp>
#include <accept/util.hpp>

#include <array>
#include <limits>
#include <vector>

namespace accept {

struct ParamBounds {
  std::array<double, DegradationParams::size> lo{0.0, 0.0, 0.0, 0.1, 0.0};
  std::array<double, DegradationParams::size> hi{0.02, 0.01, 0.1, 20.0, 40.0};

  static ParamBounds point(const DegradationParams& p) {
    ParamBounds b;
    b.lo = b.hi = p.to_array();
    return b;
  }

  void validate() const {
    for (std::size_t i = 0; i < DegradationParams::size; ++i) {
      if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || lo[i] > hi[i])
        throw Error(ErrorKind::config, std::string("invalid bounds for ") + DegradationParams::names[i]);
    }
    DegradationParams::from_array(lo).validate();
  }

  double span(std::size_t i) const { return hi[i] - lo[i]; }

  friend bool operator==(const ParamBounds&, const ParamBounds&) = default;
};

struct ObservedCurve {
  std::vector<double> t;
  std::vector<double> capacity;

  void validate() const {
    if (t.size() != capacity.size()) throw Error(ErrorKind::validation, "time and capacity lengths differ");
    if (t.size() < 2) throw Error(ErrorKind::validation, "observed curve needs at least 2 points");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t[i]) || !(capacity[i] > 0.0 && capacity[i] <= 1.2))
        throw Error(ErrorKind::validation, "observed capacity must lie in (0, 1.2]");
      if (i > 0 && !(t[i] > t[i - 1])) throw Error(ErrorKind::validation, "observed grid must be strictly increasing");
    }
  }
};

struct FitResult {
  DegradationParams params;
  double objective = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

struct FitOptions {
  double step = 0.01;
  int restarts = 8;
  std::uint64_t seed = 20240611;
  int max_evals = 2500;
  /// Simplex size (normalised coordinates) below which a restart stops.
  double xtol = 1e-9;
  double ftol = 1e-18;
  /// When false, c is held at fixed_c.
  bool fit_c = true;
  double fixed_c = 5.0;
  /// Extra starting points tried before the random restarts.
  std::vector<DegradationParams> initial_guesses;
  /// Rescale the observation so its first capacity is exactly 1.
  bool rescale_initial = true;
};

/// Midpoint-rule approximation of the integral of (C_sim - C_obs)^2 over the
/// observed range. The simulation runs without early stop up to the last
/// observed time and is linearly interpolated onto observation midpoints.
inline double fit_objective(const DegradationParams& params, const ObservedCurve& observed, double step = 0.01) {
  observed.validate();
  SimulateOptions opt;
  opt.step = step;
  opt.time_cap = observed.t.back();
  opt.early_stop = false;
  const SimCurve sim = simulate(params, opt);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < observed.t.size(); ++i) {
    const double width = observed.t[i + 1] - observed.t[i];
    const double mid = 0.5 * (observed.t[i] + observed.t[i + 1]);
    const double obs = 0.5 * (observed.capacity[i] + observed.capacity[i + 1]);
    const double diff = capacity_at(sim, mid) - obs;
    total += width * diff * diff;
  }
  return total;
}

namespace detail {

struct NelderMeadResult {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
  int evals = 0;
  bool converged = false;
};

/// Nelder-Mead on the unit box; trial points are clamped to [0, 1].
template <typename F>
NelderMeadResult nelder_mead_box(F&& f, std::vector<double> x0, double initial_step, int max_evals,
                                 double xtol, double ftol) {
  const std::size_t n = x0.size();
  auto clamp01 = [](std::vector<double> v) {
    for (auto& e : v) e = std::clamp(e, 0.0, 1.0);
    return v;
  };
  NelderMeadResult out;
  if (n == 0) {
    out.x = x0;
    out.f = f(x0);
    out.evals = 1;
    out.converged = true;
    return out;
  }
  std::vector<std::vector<double>> simplex(n + 1, clamp01(x0));
  for (std::size_t i = 0; i < n; ++i) {
    auto& v = simplex[i + 1];
    v[i] += (v[i] + initial_step <= 1.0) ? initial_step : -initial_step;
  }
  std::vector<double> fv(n + 1);
  int evals = 0;
  auto eval = [&](const std::vector<double>& x) {
    ++evals;
    const double y = f(x);
    return std::isfinite(y) ? y : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(simplex[i]);

  std::vector<std::size_t> order(n + 1);
  bool converged = false;
  while (evals < max_evals) {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];

    double size = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t j = 0; j < n; ++j) size = std::max(size, std::abs(simplex[i][j] - simplex[best][j]));
    if (size < xtol || std::abs(fv[worst] - fv[best]) <= ftol * (1.0 + std::abs(fv[best]))) {
      converged = true;
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / static_cast<double>(n);

    auto along = [&](double coef) {
      std::vector<double> p(n);
      for (std::size_t j = 0; j < n; ++j) p[j] = centroid[j] + coef * (simplex[worst][j] - centroid[j]);
      return clamp01(p);
    };

    const auto xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const auto xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        fv[worst] = fe;
      } else {
        simplex[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      simplex[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    const auto xc = along(outside ? -0.5 : 0.5);
    const double fc = eval(xc);
    if (fc < (outside ? fr : fv[worst])) {
      simplex[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t j = 0; j < n; ++j) simplex[i][j] = simplex[best][j] + 0.5 * (simplex[i][j] - simplex[best][j]);
      fv[i] = eval(simplex[i]);
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  out.x = simplex[static_cast<std::size_t>(it - fv.begin())];
  out.f = *it;
  out.evals = evals;
  out.converged = converged;
  return out;
}

}  // namespace detail

/// Multi-start box-constrained Nelder-Mead over the free parameters. Each
/// restart is polished by a second simplex started at its optimum.
inline FitResult fit(ObservedCurve observed, const ParamBounds& bounds, const FitOptions& opt = {}) {
  bounds.validate();
  if (opt.restarts < 1) throw Error(ErrorKind::config, "restarts must be at least 1");
  observed.validate();
  if (opt.rescale_initial) {
    const double c0 = observed.capacity.front();
    for (auto& c : observed.capacity) c /= c0;
  }

  // Free coordinates are the parameters with a non-degenerate range.
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < DegradationParams::size; ++i) {
    if (i == 3 && !opt.fit_c) continue;
    if (bounds.span(i) > 0) free.push_back(i);
  }
  auto base = bounds.lo;
  if (!opt.fit_c) base[3] = opt.fixed_c;

  auto to_params = [&](const std::vector<double>& u) {
    auto v = base;
    for (std::size_t j = 0; j < free.size(); ++j) v[free[j]] = bounds.lo[free[j]] + u[j] * bounds.span(free[j]);
    return DegradationParams::from_array(v);
  };
  auto to_unit = [&](const DegradationParams& p) {
    const auto v = p.to_array();
    std::vector<double> u(free.size());
    for (std::size_t j = 0; j < free.size(); ++j)
      u[j] = std::clamp((v[free[j]] - bounds.lo[free[j]]) / bounds.span(free[j]), 0.0, 1.0);
    return u;
  };

  std::string last_error;
  auto objective = [&](const std::vector<double>& u) {
    try {
      return fit_objective(to_params(u), observed, opt.step);
    } catch (const Error& e) {
      last_error = e.what();
      return std::numeric_limits<double>::infinity();
    }
  };

  std::vector<std::vector<double>> starts;
  for (const auto& g : opt.initial_guesses) starts.push_back(to_unit(g));
  Rng rng(opt.seed);
  for (int r = 0; r < opt.restarts; ++r) {
    std::vector<double> u(free.size());
    for (auto& e : u) e = uniform01(rng);
    starts.push_back(u);
  }

  FitResult best;
  int total_iters = 0;
  for (const auto& start : starts) {
    auto first = detail::nelder_mead_box(objective, start, 0.15, opt.max_evals, opt.xtol, opt.ftol);
    auto polished = detail::nelder_mead_box(objective, first.x, 0.02, opt.max_evals / 2, opt.xtol, opt.ftol);
    total_iters += first.evals + polished.evals;
    const auto& winner = polished.f <= first.f ? polished : first;
    if (std::isfinite(winner.f) && winner.f < best.objective) {
      best.params = to_params(winner.x);
      best.objective = winner.f;
      best.converged = winner.converged;
    }
  }
  best.iterations = total_iters;
  if (!std::isfinite(best.objective))
    throw Error(ErrorKind::fit_failed, "every restart failed to evaluate: " + last_error);

  // A rate with no effect on the objective (plating with t_p beyond the data,
  // say) is unidentified; report it at its lower bound instead.
  for (std::size_t i : {std::size_t{0}, std::size_t{1}, std::size_t{2}}) {
    auto v = best.params.to_array();
    if (v[i] == bounds.lo[i]) continue;
    v[i] = bounds.lo[i];
    const auto candidate = DegradationParams::from_array(v);
    const double f = fit_objective(candidate, observed, opt.step);
    ++best.iterations;
    if (f <= best.objective * (1.0 + 1e-6) + 1e-14) {
      best.params = candidate;
      best.objective = std::min(f, best.objective);
    }
  }
  return best;
}

}  // namespace accept
