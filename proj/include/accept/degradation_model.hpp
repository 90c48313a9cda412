#pragma once

// Dimensionless capacity-fade model: exponential loss of active material (M)
// combined with lithium-inventory loss from SEI growth (S) and delayed
// plating (P). Capacity is C = (1 - L) M with L = S + P.

#include <accept/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace accept {

struct DegradationParams {
  double k = 0.0;    // material degradation rate
  double a0 = 0.0;   // typical SEI growth rate
  double b0 = 0.0;   // typical plating growth rate
  double c = 1.0;    // knee sharpness
  double t_p = 0.0;  // plating onset

  static constexpr std::size_t size = 5;
  static constexpr std::array<const char*, size> names = {"k", "a0", "b0", "c", "t_p"};

  std::array<double, size> to_array() const { return {k, a0, b0, c, t_p}; }

  static DegradationParams from_array(const std::array<double, size>& v) {
    return {v[0], v[1], v[2], v[3], v[4]};
  }

  void validate() const {
    const auto v = to_array();
    for (std::size_t i = 0; i < size; ++i)
      if (!std::isfinite(v[i]))
        throw Error(ErrorKind::validation, std::string("parameter ") + names[i] + " is not finite");
    if (k < 0 || a0 < 0 || b0 < 0 || t_p < 0)
      throw Error(ErrorKind::validation, "k, a0, b0 and t_p must be non-negative");
    if (!(c > 0)) throw Error(ErrorKind::validation, "c must be positive");
  }

  friend bool operator==(const DegradationParams&, const DegradationParams&) = default;
};

struct SimState {
  double t = 0.0;
  double M = 1.0;
  double S = 0.0;
  double P = 0.0;
  double L = 0.0;
  double C = 1.0;

  static SimState make(double t, double M, double S, double P) {
    const double L = S + P;
    return {t, M, S, P, L, (1.0 - L) * M};
  }
};

enum class Termination { capacity_floor, time_cap };

inline const char* to_string(Termination t) {
  return t == Termination::capacity_floor ? "capacity_floor" : "time_cap";
}

struct SimCurve {
  DegradationParams params;
  double step = 0.01;
  std::vector<SimState> states;
  Termination terminated_by = Termination::time_cap;

  double t_end() const { return states.back().t; }
};

struct Rates {
  double dM = 0.0;
  double dS = 0.0;
  double dP = 0.0;
};

/// Lithium-loss gate 0.5 (1 + tanh(100 (1 - L))) with L clamped to [0, 1].
inline double lithium_gate(double L) {
  const double clamped = std::clamp(L, 0.0, 1.0);
  return 0.5 * (1.0 + std::tanh(100.0 * (1.0 - clamped)));
}

/// Right-hand side of the model at time t. L is taken from S + P, not from
/// the cached state.L, so intermediate RK4 stages stay consistent.
inline Rates derivatives(const SimState& state, const DegradationParams& p, bool plating) {
  const double gate = lithium_gate(state.S + state.P);
  Rates r;
  r.dM = -p.k * state.M;
  r.dS = p.a0 * gate;
  if (plating) {
    const double b = p.b0 * gate;
    r.dP = 0.5 * b * (1.0 + std::tanh(p.c * (state.t - p.t_p)));
  }
  return r;
}

inline Rates derivatives(const SimState& state, const DegradationParams& p) {
  return derivatives(state, p, state.t > p.t_p);
}

struct SimulateOptions {
  double step = 0.01;
  double time_cap = 50.0;
  /// Integration stops after the first full step with C below this value.
  double capacity_floor = 0.7;
  bool early_stop = true;
};

/// Classic fourth-order Runge-Kutta on (M, S, P), storing every grid step.
/// The plating rate jumps at t_p, so the step containing t_p is integrated as
/// two sub-steps meeting there, each on one smooth branch of the rate law.
inline SimCurve simulate(const DegradationParams& params, const SimulateOptions& opt = {}) {
  if (!(opt.step > 0) || !std::isfinite(opt.step))
    throw Error(ErrorKind::config, "step size must be positive");
  if (!(opt.time_cap > 0) || !std::isfinite(opt.time_cap))
    throw Error(ErrorKind::config, "time cap must be positive");

  SimCurve curve;
  curve.params = params;
  curve.step = opt.step;
  const auto n_steps = static_cast<std::size_t>(std::ceil(opt.time_cap / opt.step - 1e-9));
  curve.states.reserve(n_steps + 1);
  curve.states.push_back(SimState::make(0.0, 1.0, 0.0, 0.0));

  double M = 1.0, S = 0.0, P = 0.0;
  auto at = [](double t, double m, double s, double pl) { return SimState{t, m, s, pl, s + pl, 0.0}; };
  auto rk4 = [&](double t, double h, bool plating) {
    const Rates k1 = derivatives(at(t, M, S, P), params, plating);
    const Rates k2 = derivatives(at(t + 0.5 * h, M + 0.5 * h * k1.dM, S + 0.5 * h * k1.dS, P + 0.5 * h * k1.dP), params, plating);
    const Rates k3 = derivatives(at(t + 0.5 * h, M + 0.5 * h * k2.dM, S + 0.5 * h * k2.dS, P + 0.5 * h * k2.dP), params, plating);
    const Rates k4 = derivatives(at(t + h, M + h * k3.dM, S + h * k3.dS, P + h * k3.dP), params, plating);
    M += h / 6.0 * (k1.dM + 2.0 * k2.dM + 2.0 * k3.dM + k4.dM);
    S += h / 6.0 * (k1.dS + 2.0 * k2.dS + 2.0 * k3.dS + k4.dS);
    P += h / 6.0 * (k1.dP + 2.0 * k2.dP + 2.0 * k3.dP + k4.dP);
  };

  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) * opt.step;
    const double t_next = std::min(static_cast<double>(i + 1) * opt.step, opt.time_cap);
    if (t < params.t_p && params.t_p < t_next) {
      rk4(t, params.t_p - t, false);
      rk4(params.t_p, t_next - params.t_p, true);
    } else {
      rk4(t, t_next - t, t >= params.t_p);
    }

    if (!std::isfinite(M) || !std::isfinite(S) || !std::isfinite(P)) {
      std::ostringstream msg;
      msg << "integration diverged at t=" << t_next;
      throw Error(ErrorKind::diverged, msg.str());
    }
    curve.states.push_back(SimState::make(t_next, M, S, P));
    if (opt.early_stop && curve.states.back().C < opt.capacity_floor) {
      curve.terminated_by = Termination::capacity_floor;
      return curve;
    }
  }
  curve.terminated_by = Termination::time_cap;
  return curve;
}

inline SimCurve simulate(const DegradationParams& params, double step, double time_cap) {
  SimulateOptions opt;
  opt.step = step;
  opt.time_cap = time_cap;
  return simulate(params, opt);
}

/// Linear interpolation of capacity at time t, clamped to the curve's range.
inline double capacity_at(const SimCurve& curve, double t) {
  const auto& s = curve.states;
  if (t <= s.front().t) return s.front().C;
  if (t >= s.back().t) return s.back().C;
  auto it = std::upper_bound(s.begin(), s.end(), t, [](double v, const SimState& st) { return v < st.t; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double w = (t - lo.t) / (hi.t - lo.t);
  return lo.C + w * (hi.C - lo.C);
}

struct ModeReport {
  double t = 0.0;
  double lam_fade = 0.0;  // 1 - M
  double lli_fade = 0.0;  // L
  double capacity = 1.0;  // C
};

inline ModeReport mode_report(const SimState& s) {
  return {s.t, 1.0 - s.M, s.L, s.C};
}

/// Degradation-mode decomposition at the stored grid point nearest `at_t`.
inline ModeReport quantify_modes(const SimCurve& curve, double at_t) {
  const auto& s = curve.states;
  if (s.empty()) throw Error(ErrorKind::empty_input, "curve has no states");
  if (!(at_t >= s.front().t && at_t <= s.back().t)) {
    std::ostringstream msg;
    msg << "t=" << at_t << " outside simulated range [" << s.front().t << ", " << s.back().t << "]";
    throw Error(ErrorKind::out_of_range, msg.str());
  }
  auto it = std::lower_bound(s.begin(), s.end(), at_t, [](const SimState& st, double v) { return st.t < v; });
  if (it == s.end()) it = s.end() - 1;
  if (it != s.begin() && std::abs((it - 1)->t - at_t) <= std::abs(it->t - at_t)) --it;
  return mode_report(*it);
}

inline std::vector<ModeReport> mode_trajectory(const SimCurve& curve) {
  std::vector<ModeReport> out;
  out.reserve(curve.states.size());
  for (const auto& s : curve.states) out.push_back(mode_report(s));
  return out;
}

}  // namespace accept
