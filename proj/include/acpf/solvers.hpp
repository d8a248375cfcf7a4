#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "acpf/power_flow.hpp"

namespace acpf {

enum class Termination : std::uint8_t { Converged, SingularJacobian, NullSpaceStall, MaxIter };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::Converged: return "Converged";
    case Termination::SingularJacobian: return "SingularJacobian";
    case Termination::NullSpaceStall: return "NullSpaceStall";
    case Termination::MaxIter: return "MaxIter";
  }
  return "?";
}

enum class ScheduleKind : std::uint8_t { Constant, RandomConstant, StepDecay, Adam };

inline std::string_view to_string(ScheduleKind s) {
  switch (s) {
    case ScheduleKind::Constant: return "Constant";
    case ScheduleKind::RandomConstant: return "RandomConstant";
    case ScheduleKind::StepDecay: return "StepDecay";
    case ScheduleKind::Adam: return "Adam";
  }
  return "?";
}

/// Learning-rate schedule. An epoch is `epoch_length` full-gradient
/// iterations; the rate only changes at epoch boundaries.
struct Schedule {
  ScheduleKind kind = ScheduleKind::StepDecay;
  std::size_t epoch_length = 10;
  double decay_factor = 0.1;       ///< StepDecay
  std::size_t decay_every = 10;    ///< StepDecay, in epochs
  double beta1 = 0.9;              ///< Adam
  double beta2 = 0.999;            ///< Adam
  double eps = 1e-8;               ///< Adam
};

struct GdConfig {
  double eta = 0.01;
  Schedule schedule;
  double gamma = 0.9;
  double perturb_p = 0.05;
  double perturb_sigma = 0.01;
  std::uint64_t seed = 0;
  std::size_t max_iter = 1000;
  double loss_tol = 1e-12;
  double grad_tol = 1e-10;
  DiffEngine engine = DiffEngine::AutoDiff;

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
    if (!(perturb_p >= 0.0 && perturb_p <= 1.0)) throw std::invalid_argument("perturbation probability must lie in [0, 1]");
    if (!(perturb_sigma >= 0.0)) throw std::invalid_argument("perturbation intensity must be non-negative");
    if (schedule.epoch_length == 0) throw std::invalid_argument("epoch length must be positive");
    if (schedule.kind == ScheduleKind::StepDecay && schedule.decay_every == 0)
      throw std::invalid_argument("decay interval must be positive");
  }

  /// Conventional gradient descent: no momentum, no perturbation, constant rate.
  static GdConfig plain(double eta) {
    GdConfig c;
    c.eta = eta;
    c.gamma = 0.0;
    c.perturb_p = 0.0;
    c.perturb_sigma = 0.0;
    c.schedule.kind = ScheduleKind::Constant;
    return c;
  }

  /// Adam with the usual moment constants and an initial rate of 1e-3.
  static GdConfig adam(double eta = 1e-3) {
    GdConfig c;
    c.eta = eta;
    c.gamma = 0.0;
    c.perturb_p = 0.0;
    c.schedule.kind = ScheduleKind::Adam;
    return c;
  }
};

/// Learning rate in effect at `epoch`. RandomConstant draws from `rng`,
/// uniformly in [0.5 eta, 1.5 eta].
template <class Rng>
double learning_rate(const GdConfig& cfg, std::size_t epoch, Rng& rng) {
  switch (cfg.schedule.kind) {
    case ScheduleKind::Constant:
    case ScheduleKind::Adam: return cfg.eta;
    case ScheduleKind::RandomConstant: return std::uniform_real_distribution<double>(0.5 * cfg.eta, 1.5 * cfg.eta)(rng);
    case ScheduleKind::StepDecay:
      return cfg.eta * std::pow(cfg.schedule.decay_factor, static_cast<double>(epoch / cfg.schedule.decay_every));
  }
  return cfg.eta;
}

/// Box K on (V, theta).
struct Bounds {
  std::vector<double> v_min, v_max, theta_min, theta_max;

  void validate() const {
    const auto n = v_min.size();
    if (v_max.size() != n || theta_min.size() != n || theta_max.size() != n)
      throw std::invalid_argument("bounds dimension mismatch");
    for (std::size_t k = 0; k < n; ++k)
      if (v_min[k] > v_max[k] || theta_min[k] > theta_max[k]) throw std::invalid_argument("bounds with min > max");
  }

  bool contains(const StateVector& s) const {
    for (std::size_t k = 0; k < s.size(); ++k)
      if (s.v[k] < v_min[k] || s.v[k] > v_max[k] || s.theta[k] < theta_min[k] || s.theta[k] > theta_max[k])
        return false;
    return true;
  }

  /// Voltage limits from the case; angles limited to +-theta_limit.
  static Bounds from_case(const NetworkCase& net, double theta_limit = std::numbers::pi) {
    Bounds b;
    for (const auto& bus : net.buses) {
      b.v_min.push_back(bus.v_min);
      b.v_max.push_back(bus.v_max);
      b.theta_min.push_back(-theta_limit);
      b.theta_max.push_back(theta_limit);
    }
    return b;
  }

  /// Raises the lower voltage limit of every PQ bus by `delta`.
  Bounds tightened(const NetworkCase& net, double delta) const {
    Bounds b = *this;
    for (std::size_t k = 0; k < net.size(); ++k)
      if (net.buses[k].kind == BusKind::PQ) b.v_min[k] = std::min(b.v_min[k] + delta, b.v_max[k]);
    return b;
  }
};

struct Violations {
  std::size_t count = 0;
  double largest = 0.0;  ///< p.u. distance outside the box, 0 when none
};

/// PQ-bus voltage-magnitude violations of `state` against `bounds`.
inline Violations violation_report(const NetworkCase& net, const StateVector& state, const Bounds& bounds) {
  Violations out;
  for (std::size_t k = 0; k < net.size(); ++k) {
    if (net.buses[k].kind != BusKind::PQ) continue;
    const double below = bounds.v_min[k] - state.v[k];
    const double above = state.v[k] - bounds.v_max[k];
    const double dist = std::max(below, above);
    if (dist > 0.0) {
      ++out.count;
      out.largest = std::max(out.largest, dist);
    }
  }
  return out;
}

struct Timing {
  double derivative_s = 0.0;
  double linear_algebra_s = 0.0;
  double total_s = 0.0;
};

struct SolverReport {
  std::size_t iterations = 0;
  std::vector<double> loss_trace;       ///< iterations + 1 entries
  std::vector<double> grad_norm_trace;  ///< one entry per gradient/Jacobian evaluation
  std::vector<double> mismatch_trace;   ///< inf-norm of the Newton residual per iterate
  Timing timing;
  Termination termination = Termination::MaxIter;
  bool diverged = false;
  std::optional<std::size_t> switch_iteration;
  std::size_t scalar_evaluations = 0;   ///< finite-difference cost, 0 for AutoDiff
  StateVector final_state;
  Violations violations;
  std::vector<std::string> notes;

  double final_loss() const { return loss_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : loss_trace.back(); }
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline double norm2(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline void adopt_mask(const FlowModel& model, StateVector& s) {
  model.check(s);
  s.mask = UpdateMask::from_classes(model.classes(), model.size());
}

inline double newton_mismatch(const Residual& res) { return inf_norm(reduced(res)); }

}  // namespace detail

/// x - eta * grad on the free components; `grad` is packed [theta; V].
inline StateVector gd_step(const StateVector& state, std::span<const double> grad, double eta) {
  const auto n = state.size();
  if (grad.size() != 2 * n) throw std::invalid_argument("gradient dimension mismatch");
  StateVector next = state;
  for (std::size_t k = 0; k < n; ++k) {
    if (state.mask.theta[k]) next.theta[k] = state.theta[k] - eta * grad[k];
    if (state.mask.v[k]) next.v[k] = state.v[k] - eta * grad[n + k];
  }
  return next;
}

/// Euclidean projection onto the box: a componentwise clamp.
inline StateVector project(const StateVector& state, const Bounds& bounds) {
  StateVector out = state;
  for (std::size_t k = 0; k < state.size(); ++k) {
    out.v[k] = std::clamp(state.v[k], bounds.v_min[k], bounds.v_max[k]);
    out.theta[k] = std::clamp(state.theta[k], bounds.theta_min[k], bounds.theta_max[k]);
  }
  return out;
}

struct AdamMoments {
  std::vector<double> first;
  std::vector<double> second;
  std::size_t step = 0;

  static AdamMoments zeros(std::size_t packed_size) {
    return {std::vector<double>(packed_size, 0.0), std::vector<double>(packed_size, 0.0), 0};
  }
};

/// One bias-corrected Adam update on the free components.
inline StateVector adam_step(const StateVector& state, std::span<const double> grad, AdamMoments& moments,
                             double eta, const Schedule& s) {
  const auto n = state.size();
  if (grad.size() != 2 * n || moments.first.size() != 2 * n) throw std::invalid_argument("Adam dimension mismatch");
  ++moments.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(moments.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(moments.step));
  auto x = state.packed();
  for (std::size_t i = 0; i < 2 * n; ++i) {
    if (!state.mask.free(i)) continue;
    moments.first[i] = s.beta1 * moments.first[i] + (1.0 - s.beta1) * grad[i];
    moments.second[i] = s.beta2 * moments.second[i] + (1.0 - s.beta2) * grad[i] * grad[i];
    const double m_hat = moments.first[i] / c1;
    const double v_hat = moments.second[i] / c2;
    x[i] -= eta * m_hat / (std::sqrt(v_hat) + s.eps);
  }
  StateVector next = state;
  next.unpack(x);
  return next;
}

struct StopCriteria {
  double residual_bound = std::sqrt(2.0e-12);  ///< inf-norm below which the residual counts as zero
  double grad_tol = 1e-10;

  static StopCriteria from(const GdConfig& cfg) { return {std::sqrt(2.0 * cfg.loss_tol), cfg.grad_tol}; }
};

/// Stopping rule on one iterate. `gradient` is J^T residual over the free
/// variables. Returns nullopt to continue.
inline std::optional<Termination> check_stop(std::span<const double> residual, std::span<const double> gradient,
                                             const StopCriteria& crit, bool factorization_singular = false) {
  if (inf_norm(residual) < crit.residual_bound) return Termination::Converged;
  if (factorization_singular) return Termination::SingularJacobian;
  if (detail::norm2(gradient) < crit.grad_tol) return Termination::NullSpaceStall;
  return std::nullopt;
}

inline std::optional<Termination> check_stop(std::span<const double> residual, const Eigen::MatrixXd& jacobian,
                                             const StopCriteria& crit, bool factorization_singular = false) {
  if (static_cast<std::size_t>(jacobian.rows()) != residual.size())
    throw std::invalid_argument("Jacobian rows do not match residual");
  const Eigen::Map<const Eigen::VectorXd> r(residual.data(), static_cast<Eigen::Index>(residual.size()));
  const Eigen::VectorXd g = jacobian.transpose() * r;
  return check_stop(residual, std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), crit,
                    factorization_singular);
}

namespace detail {

struct Gradient {
  std::vector<double> values;
  std::size_t scalar_evaluations = 0;
};

// Loss gradient with the configured engine, split into derivative and
// linear-algebra time (the latter is the J^T residual product of the
// numeric engines).
inline Gradient timed_gradient(FlowModel& model, const StateVector& state, const Residual& res, DiffEngine engine,
                               Timing& timing) {
  Gradient out;
  auto t0 = Clock::now();
  if (engine == DiffEngine::AutoDiff) {
    out.values = gradient_loss(model, state, engine);
    timing.derivative_s += seconds_since(t0);
    return out;
  }
  fd::EvalCount count;
  const auto j = jacobian(model, state, engine, true, &count);
  timing.derivative_s += seconds_since(t0);
  out.scalar_evaluations = count.scalar_evaluations;
  t0 = Clock::now();
  out.values = gradient_from_jacobian(j, res);
  timing.linear_algebra_s += seconds_since(t0);
  return out;
}

enum class DescentRule { Momentum, Adam };

struct DescentOptions {
  const Bounds* bounds = nullptr;
  double switch_loss = 0.0;  ///< stop as soon as loss < switch_loss (0 disables)
  DescentRule rule = DescentRule::Momentum;
};

// Gradient-descent family: momentum (gamma = 0 gives plain GD) with
// occasional perturbation, or Adam; optionally projected onto `bounds`.
inline SolverReport descent(FlowModel& model, const StateVector& init, const GdConfig& cfg, const DescentOptions& opt) {
  cfg.validate();
  if (opt.bounds) opt.bounds->validate();
  const auto start = Clock::now();
  SolverReport rep;
  StateVector state = init;
  adopt_mask(model, state);
  const auto n = state.size();
  const auto crit = StopCriteria::from(cfg);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> momentum(2 * n, 0.0);
  auto adam = AdamMoments::zeros(2 * n);
  double eta = cfg.eta;

  auto res = residual(model, state);
  double current = loss(res);
  rep.loss_trace.push_back(current);
  rep.mismatch_trace.push_back(newton_mismatch(res));

  for (std::size_t t = 0;; ++t) {
    if (!std::isfinite(current)) {
      rep.diverged = true;
      rep.termination = Termination::MaxIter;
      break;
    }
    if (current < cfg.loss_tol) {
      rep.termination = Termination::Converged;
      break;
    }
    if (opt.switch_loss > 0.0 && current < opt.switch_loss) {
      rep.switch_iteration = t;
      rep.termination = Termination::Converged;
      break;
    }
    if (t == cfg.max_iter) {
      rep.termination = Termination::MaxIter;
      break;
    }

    auto grad = timed_gradient(model, state, res, cfg.engine, rep.timing);
    rep.scalar_evaluations += grad.scalar_evaluations;
    for (std::size_t i = 0; i < 2 * n; ++i)
      if (!state.mask.free(i)) grad.values[i] = 0.0;
    rep.grad_norm_trace.push_back(norm2(grad.values));
    if (auto stop = check_stop(res.values, grad.values, crit)) {
      rep.termination = *stop;
      break;
    }

    if (t % cfg.schedule.epoch_length == 0) eta = learning_rate(cfg, t / cfg.schedule.epoch_length, rng);
    StateVector next;
    if (opt.rule == DescentRule::Adam) {
      next = adam_step(state, grad.values, adam, eta, cfg.schedule);
    } else {
      for (std::size_t i = 0; i < 2 * n; ++i) momentum[i] = cfg.gamma * momentum[i] + (1.0 - cfg.gamma) * grad.values[i];
      if (coin(rng) < cfg.perturb_p)
        for (std::size_t i = 0; i < 2 * n; ++i)
          if (state.mask.free(i)) momentum[i] += cfg.perturb_sigma * normal(rng);
      next = gd_step(state, momentum, eta);
    }
    if (opt.bounds) next = project(next, *opt.bounds);

    double step = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      step = std::max({step, std::abs(next.v[k] - state.v[k]), std::abs(next.theta[k] - state.theta[k])});
    state = std::move(next);
    res = residual(model, state);
    const double updated = loss(res);
    ++rep.iterations;
    rep.loss_trace.push_back(updated);
    rep.mismatch_trace.push_back(newton_mismatch(res));

    const bool stalled = std::abs(updated - current) < 1e-12 && step < 1e-10;
    current = updated;
    if (stalled && std::isfinite(current)) {
      rep.termination = res.inf_norm() < crit.residual_bound ? Termination::Converged : Termination::NullSpaceStall;
      break;
    }
  }

  rep.final_state = state;
  rep.violations = violation_report(model.network(), state, opt.bounds ? *opt.bounds : Bounds::from_case(model.network()));
  rep.notes.push_back("schedule=" + std::string(to_string(cfg.schedule.kind)));
  rep.notes.push_back("perturbation drawn once per iteration for both V and theta");
  if (cfg.engine == DiffEngine::AutoDiff) rep.notes.push_back("loss gradient by reverse-mode sweep");
  rep.timing.total_s = seconds_since(start);
  return rep;
}

}  // namespace detail

/// Descent with momentum, random perturbation of the momentum and a
/// learning-rate schedule; projected onto `bounds` after every update when
/// given. With gamma = 0, p = 0 and a constant rate it is plain GD.
inline SolverReport enhanced_gd(FlowModel& model, const StateVector& init, const GdConfig& cfg,
                                const Bounds* bounds = nullptr) {
  return detail::descent(model, init, cfg, {bounds, 0.0, detail::DescentRule::Momentum});
}

inline SolverReport adam_solve(FlowModel& model, const StateVector& init, const GdConfig& cfg,
                               const Bounds* bounds = nullptr) {
  return detail::descent(model, init, cfg, {bounds, 0.0, detail::DescentRule::Adam});
}

struct NrOptions {
  std::size_t max_iter = 20;
  double tol = 1e-8;
  DiffEngine engine = DiffEngine::AutoDiff;
  double pivot_tol = 1e-12;            ///< relative to the largest |entry|
  std::size_t dense_below = 400;       ///< reduced dimension below which dense LU is used
};

namespace detail {

struct LinearSolve {
  Eigen::VectorXd dx;
  bool singular = false;
};

inline LinearSolve solve_newton(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& rhs, const NrOptions& opt) {
  LinearSolve out;
  const double scale = a.nonZeros() ? a.coeffs().cwiseAbs().maxCoeff() : 0.0;
  if (!(scale > 0.0)) {
    out.singular = true;
    return out;
  }
  if (static_cast<std::size_t>(a.rows()) < opt.dense_below) {
    const Eigen::MatrixXd dense(a);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(dense);
    const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(min_pivot >= opt.pivot_tol * scale)) {
      out.singular = true;
      return out;
    }
    out.dx = lu.solve(rhs);
  } else {
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(a);
    lu.factorize(a);
    if (lu.info() != Eigen::Success) {
      out.singular = true;
      return out;
    }
    out.dx = lu.solve(rhs);
  }
  if (!out.dx.allFinite()) out.singular = true;
  return out;
}

}  // namespace detail

/// Newton-Raphson on the square system (dP non-ref, dQ_PQ) x (theta non-ref,
/// V_PQ). The loss trace records half the squared norm of that system.
inline SolverReport newton_raphson(FlowModel& model, const StateVector& init, const NrOptions& opt = {}) {
  using namespace detail;
  const auto start = Clock::now();
  SolverReport rep;
  StateVector state = init;
  adopt_mask(model, state);
  const auto& l = model.layout();

  for (std::size_t it = 0;; ++it) {
    const auto res = residual(model, state);
    const auto r = reduced(res);
    rep.loss_trace.push_back(loss(r));
    const double mismatch = inf_norm(r);
    rep.mismatch_trace.push_back(mismatch);
    if (!std::isfinite(mismatch)) {
      rep.diverged = true;
      rep.termination = Termination::MaxIter;
      break;
    }
    if (mismatch < opt.tol) {
      rep.termination = Termination::Converged;
      break;
    }
    if (it == opt.max_iter) {
      rep.termination = Termination::MaxIter;
      break;
    }

    auto t0 = Clock::now();
    fd::EvalCount count;
    const auto j = jacobian(model, state, opt.engine, false, &count);
    const Eigen::SparseMatrix<double> a = j.reduced();
    rep.timing.derivative_s += seconds_since(t0);
    rep.scalar_evaluations += count.scalar_evaluations;

    t0 = Clock::now();
    const Eigen::Map<const Eigen::VectorXd> rhs(r.data(), static_cast<Eigen::Index>(r.size()));
    const Eigen::VectorXd jt_r = a.transpose() * rhs;
    rep.grad_norm_trace.push_back(jt_r.norm());
    const auto solved = solve_newton(a, rhs, opt);
    rep.timing.linear_algebra_s += seconds_since(t0);
    if (solved.singular) {
      rep.termination = Termination::SingularJacobian;
      break;
    }

    auto x = state.packed();
    for (std::size_t c = 0; c < l.reduced_cols.size(); ++c)
      x[l.var_of_col[l.reduced_cols[c]]] += solved.dx(static_cast<Eigen::Index>(c));
    state.unpack(x);
    ++rep.iterations;
  }

  rep.final_state = state;
  rep.violations = violation_report(model.network(), state, Bounds::from_case(model.network()));
  rep.notes.push_back(static_cast<std::size_t>(l.reduced_rows.size()) < opt.dense_below ? "linear solve: dense LU"
                                                                                      : "linear solve: sparse LU");
  if (opt.engine == DiffEngine::AutoDiff) rep.notes.push_back("Jacobian by forward-mode columns");
  rep.timing.total_s = seconds_since(start);
  return rep;
}

/// Enhanced GD until the loss drops below `switch_loss` or the descent stalls,
/// then Newton-Raphson from that iterate. `switch_loss <= 0` never switches;
/// `+inf` switches before the first descent step. If Newton fails, descent
/// resumes from the switch iterate with the remaining budget.
inline SolverReport hybrid_solve(FlowModel& model, const StateVector& init, const GdConfig& cfg, double switch_loss,
                                 const NrOptions& nr = {}, const Bounds* bounds = nullptr) {
  using namespace detail;
  if (!(switch_loss > 0.0)) {
    auto rep = enhanced_gd(model, init, cfg, bounds);
    rep.notes.push_back("hybrid: switching disabled");
    return rep;
  }
  const auto start = Clock::now();
  auto gd = descent(model, init, cfg, {bounds, switch_loss, DescentRule::Momentum});
  if (gd.termination == Termination::MaxIter) {
    gd.notes.push_back("hybrid: budget exhausted before switching");
    return gd;
  }

  auto newton = newton_raphson(model, gd.final_state, nr);
  SolverReport rep;
  const bool newton_ok = newton.termination == Termination::Converged;
  if (newton_ok) {
    rep = std::move(newton);
    rep.iterations += gd.iterations;
    rep.loss_trace.insert(rep.loss_trace.begin(), gd.loss_trace.begin(),
                          gd.loss_trace.begin() + static_cast<std::ptrdiff_t>(gd.iterations));
    rep.mismatch_trace.insert(rep.mismatch_trace.begin(), gd.mismatch_trace.begin(),
                              gd.mismatch_trace.begin() + static_cast<std::ptrdiff_t>(gd.iterations));
    rep.grad_norm_trace.insert(rep.grad_norm_trace.begin(), gd.grad_norm_trace.begin(), gd.grad_norm_trace.end());
    rep.switch_iteration = gd.iterations;
    rep.scalar_evaluations += gd.scalar_evaluations;
    rep.timing.derivative_s += gd.timing.derivative_s;
    rep.timing.linear_algebra_s += gd.timing.linear_algebra_s;
    rep.notes.insert(rep.notes.begin(), gd.notes.begin(), gd.notes.end());
    rep.notes.push_back("hybrid: switched to Newton-Raphson at iteration " + std::to_string(gd.iterations));
  } else {
    GdConfig rest = cfg;
    rest.max_iter = cfg.max_iter > gd.iterations ? cfg.max_iter - gd.iterations : 0;
    rest.seed = cfg.seed + 1;
    auto more = descent(model, gd.final_state, rest, {bounds, 0.0, DescentRule::Momentum});
    rep = std::move(gd);
    rep.iterations += more.iterations;
    rep.loss_trace.insert(rep.loss_trace.end(), more.loss_trace.begin() + 1, more.loss_trace.end());
    rep.mismatch_trace.insert(rep.mismatch_trace.end(), more.mismatch_trace.begin() + 1, more.mismatch_trace.end());
    rep.grad_norm_trace.insert(rep.grad_norm_trace.end(), more.grad_norm_trace.begin(), more.grad_norm_trace.end());
    rep.termination = more.termination;
    rep.diverged = more.diverged;
    rep.final_state = more.final_state;
    rep.violations = more.violations;
    rep.scalar_evaluations += more.scalar_evaluations + newton.scalar_evaluations;
    rep.timing.derivative_s += more.timing.derivative_s + newton.timing.derivative_s;
    rep.timing.linear_algebra_s += more.timing.linear_algebra_s + newton.timing.linear_algebra_s;
    rep.notes.push_back("hybrid: Newton-Raphson ended with " + std::string(to_string(newton.termination)) +
                        ", continued gradient descent");
  }
  rep.timing.total_s = seconds_since(start);
  return rep;
}

}  // namespace acpf
