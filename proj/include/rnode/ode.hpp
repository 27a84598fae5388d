#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rnode/layers.hpp"
#include "rnode/tensor.hpp"

namespace rnode {

enum class SolverMethod { Euler, Rk4, Dopri5 };

// What the dynamics net receives as its scalar time input.
enum class TimeChannel { Absolute, Gap, None };

struct SolverConfig {
  SolverMethod method = SolverMethod::Euler;
  int steps_per_unit_time = 20;  // fixed-step methods
  int min_steps = 1;             // fixed-step methods
  double rtol = 1e-3;            // Dopri5
  double atol = 1e-4;            // Dopri5
  int max_adaptive_steps = 1000; // Dopri5, accepted + rejected attempts

  void validate() const {
    if (steps_per_unit_time < 1) {
      throw ContractError("SolverConfig: steps_per_unit_time must be >= 1");
    }
    if (min_steps < 1) throw ContractError("SolverConfig: min_steps must be >= 1");
    if (rtol <= 0.0 || atol <= 0.0) {
      throw ContractError("SolverConfig: rtol and atol must be positive");
    }
    if (max_adaptive_steps < 1) {
      throw ContractError("SolverConfig: max_adaptive_steps must be >= 1");
    }
  }
};

// Right-hand side of the hidden-state ODE: a feed-forward net over the
// hidden state, with an optional scalar time channel appended to its input.
// `interval_start` anchors the Gap channel at the start of the current
// integration interval, so the net sees the time elapsed since the last
// observation.
struct DynamicsNet {
  Mlp net;
  TimeChannel time_channel = TimeChannel::Absolute;
  std::size_t hidden_width = 0;

  Tensor operator()(const Tensor& h, double t, double interval_start) const {
    if (time_channel == TimeChannel::None) return mlp_forward(net, h);
    const double tv = time_channel == TimeChannel::Absolute ? t : t - interval_start;
    Tensor tcol = Tensor::full({h.rows(), 1}, tv);
    return mlp_forward(net, concat(h, tcol, /*axis=*/1));
  }

  std::size_t param_count() const { return net.param_count(); }
};

inline DynamicsNet make_dynamics(std::size_t hidden_width,
                                 std::vector<std::size_t> layer_widths,
                                 TimeChannel tc, Rng& rng) {
  if (hidden_width == 0) {
    throw ContractError("make_dynamics: hidden width must be positive");
  }
  if (layer_widths.empty()) layer_widths = {hidden_width};
  DynamicsNet f;
  f.time_channel = tc;
  f.hidden_width = hidden_width;
  const std::size_t in = hidden_width + (tc == TimeChannel::None ? 0 : 1);
  f.net = make_mlp(in, layer_widths, hidden_width, rng);
  return f;
}

// A dynamics net whose output is identically zero (all parameters zero).
inline DynamicsNet make_zero_dynamics(std::size_t hidden_width, TimeChannel tc) {
  Rng rng(0);
  DynamicsNet f = make_dynamics(hidden_width, {hidden_width}, tc, rng);
  for (auto& l : f.net.layers) {
    std::fill(l.weight.mutable_data().begin(), l.weight.mutable_data().end(), 0.0);
    std::fill(l.bias.mutable_data().begin(), l.bias.mutable_data().end(), 0.0);
  }
  return f;
}

inline std::size_t fixed_step_count(double t0, double t1,
                                    const SolverConfig& cfg) {
  const double gap = t1 - t0;
  const double raw = std::ceil(gap * static_cast<double>(cfg.steps_per_unit_time));
  return std::max<std::size_t>(static_cast<std::size_t>(cfg.min_steps),
                               static_cast<std::size_t>(raw));
}

namespace detail {

inline void check_finite_stage(const Tensor& k, double t) {
  for (double v : k.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("ode: non-finite stage value near t=" + std::to_string(t));
    }
  }
}

// Dormand-Prince 5(4) tableau.
namespace dp {
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0,
                 c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                 a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                 a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                 a65 = -5103.0 / 18656.0;
// Fifth-order solution weights (also the last tableau row; FSAL).
constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                 b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
// Difference between the 5th- and embedded 4th-order weights.
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
}  // namespace dp

// h + dt * sum(c_i k_i), skipping zero coefficients.
inline Tensor rk_combine(const Tensor& h, double dt,
                         const std::vector<std::pair<double, Tensor>>& terms) {
  Tensor acc = h;
  for (const auto& [c, k] : terms) {
    if (c != 0.0) acc = add(acc, scale(k, dt * c));
  }
  return acc;
}

}  // namespace detail

struct Dopri5Step {
  Tensor h_next;
  double dt_next = 0.0;
  bool accepted = false;
  double error = 0.0;
};

// One embedded Dormand-Prince 5(4) trial step. The error estimate is
// eps = max_i |h5_i - h4_i| / (atol + rtol*|h_i|); the step is accepted iff
// eps <= 1 and the next step size is dt * clamp(0.9*eps^(-1/5), 0.2, 5).
inline Dopri5Step dopri5_step(const DynamicsNet& f, const Tensor& h, double t,
                              double dt, double rtol, double atol,
                              double interval_start = 0.0) {
  if (dt <= 0.0) throw ContractError("dopri5_step: dt must be positive");
  using namespace detail::dp;
  const Tensor k1 = f(h, t, interval_start);
  detail::check_finite_stage(k1, t);
  const Tensor k2 = f(detail::rk_combine(h, dt, {{a21, k1}}), t + c2 * dt,
                      interval_start);
  const Tensor k3 = f(detail::rk_combine(h, dt, {{a31, k1}, {a32, k2}}),
                      t + c3 * dt, interval_start);
  const Tensor k4 =
      f(detail::rk_combine(h, dt, {{a41, k1}, {a42, k2}, {a43, k3}}),
        t + c4 * dt, interval_start);
  const Tensor k5 = f(detail::rk_combine(
                          h, dt, {{a51, k1}, {a52, k2}, {a53, k3}, {a54, k4}}),
                      t + c5 * dt, interval_start);
  const Tensor k6 =
      f(detail::rk_combine(
            h, dt, {{a61, k1}, {a62, k2}, {a63, k3}, {a64, k4}, {a65, k5}}),
        t + dt, interval_start);
  detail::check_finite_stage(k6, t);

  const Tensor h5 = detail::rk_combine(
      h, dt, {{b1, k1}, {b3, k3}, {b4, k4}, {b5, k5}, {b6, k6}});
  detail::check_finite_stage(h5, t + dt);

  // The seventh stage only feeds the error estimate, so it is evaluated
  // without recording.
  Tensor k7;
  {
    NoGradGuard ng;
    k7 = f(h5, t + dt, interval_start);
  }
  detail::check_finite_stage(k7, t + dt);

  double eps = 0.0;
  const auto hd = h.data();
  const auto k1d = k1.data(), k3d = k3.data(), k4d = k4.data(),
             k5d = k5.data(), k6d = k6.data(), k7d = k7.data();
  for (std::size_t i = 0; i < hd.size(); ++i) {
    const double err = dt * (e1 * k1d[i] + e3 * k3d[i] + e4 * k4d[i] +
                             e5 * k5d[i] + e6 * k6d[i] + e7 * k7d[i]);
    const double scale_i = atol + rtol * std::abs(hd[i]);
    eps = std::max(eps, std::abs(err) / scale_i);
  }

  double factor = 5.0;
  if (eps > 0.0) {
    factor = std::clamp(0.9 * std::pow(eps, -0.2), 0.2, 5.0);
  }
  return Dopri5Step{h5, dt * factor, eps <= 1.0, eps};
}

namespace detail {

inline Tensor solve_fixed(const DynamicsNet& f, const Tensor& h0, double t0,
                          double t1, const SolverConfig& cfg) {
  using namespace dp;
  const std::size_t n = fixed_step_count(t0, t1, cfg);
  const double dt = (t1 - t0) / static_cast<double>(n);
  Tensor h = h0;
  for (std::size_t s = 0; s < n; ++s) {
    const double t = t0 + dt * static_cast<double>(s);
    if (cfg.method == SolverMethod::Euler) {
      h = add(h, scale(f(h, t, t0), dt));
    } else {  // classic RK4
      const Tensor k1 = f(h, t, t0);
      const Tensor k2 = f(rk_combine(h, dt, {{0.5, k1}}), t + 0.5 * dt, t0);
      const Tensor k3 = f(rk_combine(h, dt, {{0.5, k2}}), t + 0.5 * dt, t0);
      const Tensor k4 = f(rk_combine(h, dt, {{1.0, k3}}), t + dt, t0);
      h = rk_combine(h, dt / 6.0,
                     {{1.0, k1}, {2.0, k2}, {2.0, k3}, {1.0, k4}});
    }
    check_finite_stage(h, t + dt);
  }
  return h;
}

inline Tensor solve_dopri5(const DynamicsNet& f, const Tensor& h0, double t0,
                           double t1, const SolverConfig& cfg) {
  const double span = t1 - t0;
  Tensor h = h0;
  double t = t0;
  double dt = span / 10.0;
  int attempts = 0;
  const double t_eps = 1e-14 * std::max(1.0, std::abs(t1));
  while (t1 - t > t_eps) {
    dt = std::min(dt, t1 - t);
    if (!(dt > 0.0)) {
      throw NumericError("dopri5: step size underflow on [" +
                         std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
    if (++attempts > cfg.max_adaptive_steps) {
      throw NumericError("dopri5: exceeded max_adaptive_steps=" +
                         std::to_string(cfg.max_adaptive_steps) + " on [" +
                         std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
    const Dopri5Step step = dopri5_step(f, h, t, dt, cfg.rtol, cfg.atol, t0);
    if (step.accepted) {
      h = step.h_next;
      t += dt;
    }
    dt = step.dt_next;
  }
  return h;
}

}  // namespace detail

// Integrate dh/dt = f(h, t) from t0 to t1 and return h(t1). The whole solve
// runs through tensor primitives, so gradients flow to both h0 and the
// dynamics parameters. Fixed-step methods take
// max(min_steps, ceil((t1-t0)*steps_per_unit_time)) steps; a zero-length
// interval returns h0 untouched.
inline Tensor ode_solve(const DynamicsNet& f, const Tensor& h0, double t0,
                        double t1, const SolverConfig& cfg) {
  cfg.validate();
  if (t1 < t0) {
    throw TimeOrderError("ode_solve: t1=" + std::to_string(t1) +
                         " precedes t0=" + std::to_string(t0));
  }
  if (t1 == t0) return h0;
  if (cfg.method == SolverMethod::Dopri5) {
    return detail::solve_dopri5(f, h0, t0, t1, cfg);
  }
  return detail::solve_fixed(f, h0, t0, t1, cfg);
}

}  // namespace rnode
