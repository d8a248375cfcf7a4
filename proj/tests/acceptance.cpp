// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "acpf/acpf.hpp"

using namespace acpf;

namespace {

std::string data_path(const std::string& name) { return std::string(ACPF_TEST_DATA_DIR) + "/" + name + ".m"; }

NetworkCase two_bus() {
  return parse_case(R"(function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
  1  3  0      0    0  0  1  1.0  0  0  1  1.1  0.9;
  2  1  99.83  5.00 0  0  1  1.0  0  0  1  1.1  0.9;
];
mpc.gen = [
  1  0  0  9999  -9999  1.0  100  1  9999  0;
];
mpc.branch = [
  1  2  0  0.1  0  0  0  0  0  0  1  -360  360;
];
)");
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Free components drawn inside the case voltage box, pinned ones left at
// their set-points.
StateVector random_feasible(const FlowModel& model, std::mt19937_64& rng) {
  auto s = model.flat_start();
  const auto& net = model.network();
  std::uniform_real_distribution<double> u(0.0, 1.0), th(-0.5, 0.5);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s.mask.v[k]) s.v[k] = net.buses[k].v_min + u(rng) * (net.buses[k].v_max - net.buses[k].v_min);
    if (s.mask.theta[k]) s.theta[k] = th(rng);
  }
  return s;
}

// Complex power leaving each bus, summed from branch end currents and shunts.
struct BranchFlows {
  std::vector<double> p, q;
  double losses = 0.0;
};

BranchFlows branch_flows(const NetworkCase& net, const StateVector& s) {
  using C = std::complex<double>;
  BranchFlows out;
  out.p.assign(net.size(), 0.0);
  out.q.assign(net.size(), 0.0);
  auto volt = [&](std::size_t k) { return std::polar(s.v[k], s.theta[k]); };
  for (const auto& br : net.branches) {
    const C ys = 1.0 / C(br.r, br.x);
    const C t = std::polar(br.tap, br.phase_shift);
    const C jb2(0.0, br.b_charging / 2.0);
    const C vf = volt(br.from), vt = volt(br.to);
    const C sf = vf * std::conj((ys + jb2) / (br.tap * br.tap) * vf - ys / std::conj(t) * vt);
    const C st = vt * std::conj(-ys / t * vf + (ys + jb2) * vt);
    out.p[br.from] += sf.real();
    out.q[br.from] += sf.imag();
    out.p[br.to] += st.real();
    out.q[br.to] += st.imag();
    out.losses += (sf + st).real();
  }
  for (std::size_t k = 0; k < net.size(); ++k) {
    const double v2 = s.v[k] * s.v[k];
    out.p[k] += net.buses[k].shunt_g * v2;
    out.q[k] -= net.buses[k].shunt_b * v2;
    out.losses += net.buses[k].shunt_g * v2;
  }
  return out;
}

Outcome ad_correctness() {
  const auto t0 = Clock::now();
  double worst_jac = 0.0, worst_rel = 0.0;
  std::size_t states = 0;
  for (const char* name : {"case14", "case30"}) {
    FlowModel model(load_case(data_path(name)));
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial, ++states) {
      const auto s = random_feasible(model, rng);
      const Eigen::MatrixXd ad = jacobian_ad(model, s).dense();
      const Eigen::MatrixXd an = jacobian_analytic(model, s).dense();
      worst_jac = std::max(worst_jac, (ad - an).cwiseAbs().maxCoeff());

      const auto grad = gradient_loss(model, s);
      auto f = [&](std::span<const double> x) {
        StateVector probe = s;
        probe.unpack(x);
        return std::vector<double>{loss(residual(model, probe))};
      };
      const auto est = fd::numeric_gradient(f, s.packed(), 1e-6, fd::Scheme::Central);
      double scale = 0.0;
      for (double g : grad) scale = std::max(scale, std::abs(g));
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!s.mask.free(i)) continue;
        const double ref = est.jacobian(0, static_cast<Eigen::Index>(i));
        // Components far below the gradient scale are compared against it.
        const double denom = std::max(std::abs(ref), 1e-3 * scale);
        worst_rel = std::max(worst_rel, std::abs(grad[i] - ref) / denom);
      }
    }
  }
  const double secs = elapsed(t0);
  return {worst_jac <= 1e-10 && worst_rel <= 1e-5 && secs < 30.0,
          fmt("%zu states, max |J_ad - J_an| = %.2e, max rel grad err = %.2e, %.1f s", states, worst_jac, worst_rel,
              secs)};
}

Outcome graph_example_exactness() {
  ad::CompGraph g;
  const auto x = g.input(), y = g.input(), z = g.input();
  const auto sum = g.add(x, y);
  const auto out = g.mul(sum, z);
  g.mark_output(out);
  const std::vector<double> in{1.0, 3.0, -3.0};
  const double value = g.forward_eval(in)[0];
  const double inter = g.node(sum).value;
  const auto grad = g.reverse_sweep(out);
  const bool ok = value == -12.0 && inter == 4.0 && grad.size() == 3 && grad[0] == -3.0 && grad[1] == -3.0 &&
                  grad[2] == 4.0;
  return {ok, fmt("g = %g, x+y = %g, grad = (%g, %g, %g)", value, inter, grad[0], grad[1], grad[2])};
}

Outcome nr_baseline() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream detail;
  for (const char* name : {"case14", "case30", "case57", "case118"}) {
    const auto net = load_case(data_path(name));
    FlowModel model(net);
    const auto rep = newton_raphson(model, model.flat_start());
    const auto& s = rep.final_state;
    const auto inj = injections(s, model.admittance());
    const auto flows = branch_flows(net, s);
    double sum = 0.0;
    for (double p : inj.p) sum += p;
    const double conservation = std::abs(sum - flows.losses);
    // Mismatch recomputed from branch flows: P on every non-reference bus, Q on PQ buses.
    double oracle = 0.0;
    for (std::size_t k = 0; k < net.size(); ++k) {
      const auto kind = net.buses[k].kind;
      if (kind != BusKind::Ref) oracle = std::max(oracle, std::abs(net.buses[k].p_net() - flows.p[k]));
      if (kind == BusKind::PQ) oracle = std::max(oracle, std::abs(net.buses[k].q_net() - flows.q[k]));
    }
    const double mismatch = rep.mismatch_trace.back();
    const bool case_ok = rep.termination == Termination::Converged && rep.iterations <= 15 && mismatch < 1e-8 &&
                         oracle < 1e-8 && conservation < 1e-8;
    ok = ok && case_ok;
    detail << name << ": " << rep.iterations << " it, mismatch " << fmt("%.1e", mismatch) << ", oracle "
           << fmt("%.1e", oracle) << ", balance " << fmt("%.1e", conservation) << "; ";
  }
  const double secs = elapsed(t0);
  detail << fmt("%.2f s", secs);
  return {ok && secs < 10.0, detail.str()};
}

Outcome degeneration() {
  FlowModel model(two_bus());
  // Small enough that the run does not settle on the loss floor within 100 steps.
  constexpr double eta = 0.0005;
  auto cfg = GdConfig::plain(eta);
  cfg.max_iter = 100;
  cfg.loss_tol = 0.0;
  cfg.grad_tol = 0.0;
  cfg.seed = 99;
  const auto rep = enhanced_gd(model, model.flat_start(), cfg);

  // Textbook GD written out directly.
  auto s = model.flat_start();
  std::vector<double> trace{loss(residual(model, s))};
  for (int t = 0; t < 100; ++t) {
    const auto g = gradient_loss(model, s);
    const auto n = s.size();
    for (std::size_t k = 0; k < n; ++k) {
      if (s.mask.theta[k]) s.theta[k] -= eta * g[k];
      if (s.mask.v[k]) s.v[k] -= eta * g[n + k];
    }
    trace.push_back(loss(residual(model, s)));
  }
  const bool same = rep.loss_trace == trace && rep.final_state.v == s.v && rep.final_state.theta == s.theta;
  return {same && rep.iterations == 100,
          fmt("%zu iterations, traces %s, final loss %.6g", rep.iterations, same ? "bit-identical" : "differ",
              rep.loss_trace.back())};
}

struct EpochStats {
  std::vector<double> ends;
  double final = 0.0;
  double worst_jump = 1.0;
};

EpochStats epoch_stats(const SolverReport& rep, std::size_t epoch_length, std::size_t epochs) {
  EpochStats st;
  for (std::size_t e = 0; e <= epochs; ++e)
    st.ends.push_back(rep.loss_trace[std::min(e * epoch_length, rep.loss_trace.size() - 1)]);
  st.final = st.ends.back();
  if (!std::isfinite(st.final)) st.final = std::numeric_limits<double>::infinity();
  for (std::size_t e = 1; e < st.ends.size(); ++e) {
    const double a = st.ends[e - 1], b = st.ends[e];
    const double jump = std::isfinite(b) ? b / a : std::numeric_limits<double>::infinity();
    st.worst_jump = std::max(st.worst_jump, std::isfinite(a) ? jump : 1.0);
  }
  return st;
}

Outcome schedule_trend() {
  FlowModel model(load_case(data_path("case14")));
  const auto bounds = Bounds::from_case(model.network());
  constexpr std::size_t epochs = 200;
  auto run_with = [&](ScheduleKind kind, double eta, const Bounds* b) {
    GdConfig cfg;
    cfg.eta = eta;
    cfg.schedule.kind = kind;
    cfg.seed = 1;
    cfg.max_iter = epochs * cfg.schedule.epoch_length;
    return epoch_stats(enhanced_gd(model, model.flat_start(), cfg, b), cfg.schedule.epoch_length, epochs);
  };
  const auto step = run_with(ScheduleKind::StepDecay, 0.01, &bounds);
  const auto c1 = run_with(ScheduleKind::Constant, 0.01, &bounds);
  const auto c2 = run_with(ScheduleKind::Constant, 0.1, &bounds);
  const auto rnd = run_with(ScheduleKind::RandomConstant, 0.01, &bounds);
  const double best_const = std::min(c1.final, c2.final);
  const bool ok = step.final * 10.0 <= best_const && step.worst_jump <= 10.0;

  const auto free_step = run_with(ScheduleKind::StepDecay, 0.01, nullptr);
  const auto free_const = run_with(ScheduleKind::Constant, 0.01, nullptr);
  return {ok, fmt("projected: StepDecay %.3g vs best Constant %.3g (ratio %.0f), StepDecay worst jump %.2f, "
                  "RandomConstant worst jump %.3g; unprojected: StepDecay %.3g, Constant(0.01) %.3g",
                  step.final, best_const, best_const / step.final, step.worst_jump, rnd.worst_jump, free_step.final,
                  free_const.final)};
}

std::optional<std::size_t> first_below(const std::vector<double>& trace, double bound) {
  for (std::size_t i = 0; i < trace.size(); ++i)
    if (trace[i] < bound) return i;
  return std::nullopt;
}

Outcome hybrid_speedup() {
  FlowModel model(load_case(data_path("case30")));
  GdConfig cfg;
  cfg.eta = 0.003;
  cfg.seed = 7;
  cfg.max_iter = 2000;
  const auto gd = enhanced_gd(model, model.flat_start(), cfg);
  const auto hy = hybrid_solve(model, model.flat_start(), cfg, 1e-2);
  const auto gd_hit = first_below(gd.mismatch_trace, 1e-8);
  const auto hy_hit = first_below(hy.mismatch_trace, 1e-8);
  const bool ok = hy_hit && (!gd_hit || *hy_hit < *gd_hit);
  const std::string gd_text = gd_hit ? std::to_string(*gd_hit) : "not within " + std::to_string(gd.iterations);
  const std::string hy_text = hy_hit ? std::to_string(*hy_hit) : "never";
  return {ok, "iterations to mismatch < 1e-8: hybrid " + hy_text + " (switch at " +
                  (hy.switch_iteration ? std::to_string(*hy.switch_iteration) : "none") + "), enhanced GD " + gd_text +
                  fmt(" (final mismatch %.2e)", gd.mismatch_trace.back())};
}

double derivative_seconds(std::size_t n, DiffEngine engine) {
  FlowModel model(synth_case(n, Topology::Ladder));
  auto cfg = GdConfig::plain(1e-4);
  cfg.max_iter = 2;
  cfg.engine = engine;
  const auto rep = enhanced_gd(model, model.flat_start(), cfg);
  return rep.timing.derivative_s / static_cast<double>(rep.grad_norm_trace.size());
}

Outcome cost_trend() {
  const auto t0 = Clock::now();
  std::vector<double> ratios;
  std::ostringstream detail;
  for (std::size_t n : {500u, 2000u, 8000u}) {
    const double ad = derivative_seconds(n, DiffEngine::AutoDiff);
    const double fd = derivative_seconds(n, DiffEngine::NumericCentral);
    ratios.push_back(fd / ad);
    detail << "n=" << n << fmt(": central %.3g s, AD %.3g s, ratio %.0f; ", fd, ad, fd / ad);
  }
  const double secs = elapsed(t0);
  detail << fmt("%.1f s", secs);
  const bool ok = ratios[1] >= 3.0 && ratios[0] < ratios[1] && ratios[1] < ratios[2] && secs < 300.0;
  return {ok, detail.str()};
}

Outcome projection_suite() {
  FlowModel model(load_case(data_path("case14")));
  const auto& net = model.network();
  const auto bounds = Bounds::from_case(net, 0.3).tightened(net, 0.03);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> v(0.5, 1.5), th(-4.0, 4.0);
  std::size_t bad_idem = 0, bad_in = 0, bad_exact = 0, bad_iter = 0;
  auto step_cfg = GdConfig::plain(0.05);
  step_cfg.max_iter = 1;
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = model.flat_start();
    for (std::size_t k = 0; k < s.size(); ++k) {
      s.v[k] = v(rng);
      s.theta[k] = th(rng);
    }
    const auto p = project(s, bounds);
    const auto pp = project(p, bounds);
    if (pp.v != p.v || pp.theta != p.theta) ++bad_idem;
    if (!bounds.contains(p)) ++bad_in;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const bool v_inside = s.v[k] >= bounds.v_min[k] && s.v[k] <= bounds.v_max[k];
      const bool t_inside = s.theta[k] >= bounds.theta_min[k] && s.theta[k] <= bounds.theta_max[k];
      if ((v_inside && p.v[k] != s.v[k]) || (t_inside && p.theta[k] != s.theta[k])) ++bad_exact;
    }
    // One projected step from an in-box start with a rate large enough to leave the box.
    const auto rep = enhanced_gd(model, p, step_cfg, &bounds);
    if (!bounds.contains(rep.final_state)) ++bad_iter;
  }
  // Every prefix of one momentum-and-perturbation trajectory stays in K.
  GdConfig cfg;
  cfg.eta = 0.005;
  cfg.perturb_p = 0.3;
  cfg.seed = 4;
  for (std::size_t t = 1; t <= 100; ++t) {
    cfg.max_iter = t;
    if (!bounds.contains(enhanced_gd(model, project(model.flat_start(), bounds), cfg, &bounds).final_state)) ++bad_iter;
  }
  const bool ok = bad_idem == 0 && bad_in == 0 && bad_exact == 0 && bad_iter == 0;
  return {ok, fmt("1000 states: %zu not idempotent, %zu outside K, %zu moved although inside; %zu iterates outside K",
                  bad_idem, bad_in, bad_exact, bad_iter)};
}

Outcome stopping_suite() {
  // r = (1, 0) spans null(J^T) for J = diag(0, 1).
  Eigen::MatrixXd j(2, 2);
  j << 0, 0, 0, 1;
  const std::vector<double> r{1.0, 0.0};
  const auto constructed = check_stop(r, j, StopCriteria{});
  const bool null_ok = constructed == Termination::NullSpaceStall;

  auto net = two_bus();
  net.buses[1].p_demand = 20.0;
  FlowModel model(net);
  const auto nr = newton_raphson(model, model.flat_start());
  auto cfg = GdConfig::plain(0.002);
  cfg.max_iter = 20000;
  const auto gd = enhanced_gd(model, model.flat_start(), cfg);
  const bool nr_ok = nr.termination == Termination::SingularJacobian || nr.termination == Termination::MaxIter;
  const bool gd_ok = gd.termination != Termination::Converged;
  return {null_ok && nr_ok && gd_ok,
          "constructed: " + std::string(constructed ? to_string(*constructed) : "continue") +
              "; overloaded two-bus: NR " + std::string(to_string(nr.termination)) + ", GD " +
              std::string(to_string(gd.termination)) + fmt(" at loss %.4g", gd.loss_trace.back())};
}

Outcome determinism() {
  FlowModel model(load_case(data_path("case14")));
  GdConfig cfg;
  cfg.eta = 0.005;
  cfg.perturb_p = 0.3;
  cfg.schedule.kind = ScheduleKind::RandomConstant;
  cfg.seed = 123;
  cfg.max_iter = 300;
  auto same = [](const SolverReport& a, const SolverReport& b) {
    return a.iterations == b.iterations && a.loss_trace == b.loss_trace && a.final_state.v == b.final_state.v &&
           a.final_state.theta == b.final_state.theta;
  };
  const bool gd = same(enhanced_gd(model, model.flat_start(), cfg), enhanced_gd(model, model.flat_start(), cfg));
  const bool adam = same(adam_solve(model, model.flat_start(), GdConfig::adam()),
                         adam_solve(model, model.flat_start(), GdConfig::adam()));
  const bool hy = same(hybrid_solve(model, model.flat_start(), cfg, 1e-2),
                       hybrid_solve(model, model.flat_start(), cfg, 1e-2));
  const bool nr = same(newton_raphson(model, model.flat_start()), newton_raphson(model, model.flat_start()));
  auto other = cfg;
  other.seed = 124;
  const bool seed_matters = enhanced_gd(model, model.flat_start(), cfg).loss_trace !=
                            enhanced_gd(model, model.flat_start(), other).loss_trace;
  return {gd && adam && hy && nr,
          fmt("enhanced GD %s, Adam %s, hybrid %s, NR %s; another seed %s", gd ? "identical" : "differs",
              adam ? "identical" : "differs", hy ? "identical" : "differs", nr ? "identical" : "differs",
              seed_matters ? "changes the trace" : "gives the same trace")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"AD correctness", ad_correctness},
      {"graph example exactness", graph_example_exactness},
      {"Newton-Raphson baseline", nr_baseline},
      {"momentum-free degeneration", degeneration},
      {"learning-rate schedule trend", schedule_trend},
      {"hybrid speedup", hybrid_speedup},
      {"derivative cost trend", cost_trend},
      {"projection", projection_suite},
      {"stopping conditions", stopping_suite},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
