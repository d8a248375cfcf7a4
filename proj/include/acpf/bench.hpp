#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "acpf/network.hpp"
#include "acpf/power_flow.hpp"
#include "acpf/solvers.hpp"

namespace acpf {

enum class Method : std::uint8_t { GD, ProjectedGD, EnhancedGD, Adam, NR, Hybrid };
enum class Topology : std::uint8_t { Ladder, Ring };
enum class BoundsSource : std::uint8_t { None, Case, File };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::GD: return "GD";
    case Method::ProjectedGD: return "ProjectedGD";
    case Method::EnhancedGD: return "EnhancedGD";
    case Method::Adam: return "Adam";
    case Method::NR: return "NR";
    case Method::Hybrid: return "Hybrid";
  }
  return "?";
}

inline std::string_view to_string(Topology t) { return t == Topology::Ladder ? "Ladder" : "Ring"; }

namespace detail {
inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <class E, std::size_t N>
E parse_enum(std::string_view text, const E (&values)[N], std::string_view what) {
  for (auto v : values)
    if (lower(to_string(v)) == lower(text)) return v;
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(text) + "'");
}
}  // namespace detail

inline Method parse_method(std::string_view s) {
  static constexpr Method all[] = {Method::GD, Method::ProjectedGD, Method::EnhancedGD,
                                   Method::Adam, Method::NR, Method::Hybrid};
  return detail::parse_enum(s, all, "method");
}

inline DiffEngine parse_diff(std::string_view s) {
  static constexpr DiffEngine all[] = {DiffEngine::AutoDiff, DiffEngine::NumericForward, DiffEngine::NumericCentral};
  return detail::parse_enum(s, all, "differentiation engine");
}

inline ScheduleKind parse_schedule(std::string_view s) {
  static constexpr ScheduleKind all[] = {ScheduleKind::Constant, ScheduleKind::RandomConstant, ScheduleKind::StepDecay,
                                         ScheduleKind::Adam};
  return detail::parse_enum(s, all, "schedule");
}

inline Topology parse_topology(std::string_view s) {
  static constexpr Topology all[] = {Topology::Ladder, Topology::Ring};
  return detail::parse_enum(s, all, "topology");
}

inline Termination parse_termination(std::string_view s) {
  static constexpr Termination all[] = {Termination::Converged, Termination::SingularJacobian,
                                        Termination::NullSpaceStall, Termination::MaxIter};
  return detail::parse_enum(s, all, "termination");
}

/// Deterministic synthetic grid. Bus 0 is the reference, every 10th bus is
/// PV and supplies the load of the nine PQ buses after it; lossless x = 0.1
/// branches. Ladder: two rails (even/odd buses) joined by rungs. Ring: a
/// closed chain.
inline NetworkCase synth_case(std::size_t n, Topology topology, double load_level = 1.0) {
  if (n < 2) throw std::invalid_argument("synthetic case needs at least 2 buses");
  NetworkCase net;
  net.name = "synth_" + detail::lower(to_string(topology)) + "_" + std::to_string(n);
  net.base_mva = 100.0;
  for (std::size_t i = 0; i < n; ++i) {
    Bus bus;
    bus.id = static_cast<int>(i + 1);
    bus.v_min = 0.9;
    bus.v_max = 1.1;
    bus.v_set = 1.0;
    if (i == 0) {
      bus.kind = BusKind::Ref;
    } else if (i % 10 == 0) {
      bus.kind = BusKind::PV;
      const std::size_t block = std::min<std::size_t>(9, n - 1 - i);
      bus.p_gen = 0.1 * load_level * static_cast<double>(block);
    } else {
      bus.kind = BusKind::PQ;
      bus.p_demand = 0.1 * load_level;
      bus.q_demand = 0.03 * load_level;
    }
    net.buses.push_back(bus);
  }
  auto link = [&](std::size_t a, std::size_t b) {
    Branch br;
    br.from = a;
    br.to = b;
    br.x = 0.1;
    net.branches.push_back(br);
  };
  if (topology == Topology::Ladder) {
    for (std::size_t i = 0; i + 1 < n; i += 2) link(i, i + 1);
    for (std::size_t i = 0; i + 2 < n; ++i) link(i, i + 2);
  } else {
    for (std::size_t i = 0; i + 1 < n; ++i) link(i, i + 1);
    if (n >= 3) link(n - 1, 0);
  }
  validate(net);
  return net;
}

/// Reads a case file, or builds a synthetic one from "synth:<topology>:<n>[:<load>]".
inline NetworkCase load_case(const std::string& source) {
  if (source.starts_with("synth:")) {
    std::vector<std::string> parts;
    std::stringstream ss(source);
    for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
    if (parts.size() < 3 || parts.size() > 4) throw std::invalid_argument("expected synth:<topology>:<n>[:<load>]");
    const double load = parts.size() == 4 ? std::stod(parts[3]) : 1.0;
    return synth_case(std::stoul(parts[2]), parse_topology(parts[1]), load);
  }
  std::ifstream in(source);
  if (!in) throw std::ios_base::failure("cannot open case file '" + source + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  auto net = parse_case(buf.str());
  if (net.name.empty()) net.name = std::filesystem::path(source).stem().string();
  return net;
}

/// Bounds file: JSON object with arrays v_min, v_max, theta_min, theta_max.
inline Bounds load_bounds(const std::string& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open bounds file '" + path + "'");
  const auto j = nlohmann::json::parse(in);
  Bounds b;
  j.at("v_min").get_to(b.v_min);
  j.at("v_max").get_to(b.v_max);
  j.at("theta_min").get_to(b.theta_min);
  j.at("theta_max").get_to(b.theta_max);
  b.validate();
  if (b.v_min.size() != n) throw std::invalid_argument("bounds file dimension does not match the case");
  return b;
}

struct RunSpec {
  std::string name;
  std::string case_path;  ///< file path or synth:<topology>:<n>[:<load>]
  Method method = Method::EnhancedGD;
  DiffEngine diff = DiffEngine::AutoDiff;
  GdConfig gd;
  NrOptions nr;
  double switch_loss = 1e-2;
  BoundsSource bounds = BoundsSource::None;
  std::string bounds_file;
  double tighten_vmin = 0.0;
  ResidualRows residual_rows = ResidualRows::Block;
  std::string output_dir;  ///< empty: no artifacts
};

struct BenchRow {
  std::string case_name;
  std::size_t n = 0;
  std::string method;
  std::string diff;
  std::size_t iterations = 0;
  double derivative_time_s = 0.0;
  double linear_algebra_time_s = 0.0;
  double total_time_s = 0.0;
  std::string termination;

  bool operator==(const BenchRow&) const = default;
};

struct RunResult {
  BenchRow row;
  SolverReport report;
  std::string error;  ///< non-empty when the run could not execute

  bool converged() const { return error.empty() && report.termination == Termination::Converged; }
};

inline nlohmann::json to_json(const SolverReport& r) {
  nlohmann::json j;
  j["iterations"] = r.iterations;
  j["loss_trace"] = r.loss_trace;
  j["grad_norm_trace"] = r.grad_norm_trace;
  j["derivative_time_s"] = r.timing.derivative_s;
  j["linear_algebra_time_s"] = r.timing.linear_algebra_s;
  j["total_time_s"] = r.timing.total_s;
  j["termination"] = to_string(r.termination);
  j["violations_count"] = r.violations.count;
  j["violations_max_pu"] = r.violations.largest;
  j["mismatch_trace"] = r.mismatch_trace;
  j["diverged"] = r.diverged;
  j["switch_iteration"] = r.switch_iteration ? nlohmann::json(*r.switch_iteration) : nlohmann::json(nullptr);
  j["scalar_evaluations"] = r.scalar_evaluations;
  j["final_v"] = r.final_state.v;
  j["final_theta"] = r.final_state.theta;
  j["notes"] = r.notes;
  return j;
}

inline std::string safe_name(std::string_view name) {
  std::string out;
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return out;
}

/// CSV `epoch,loss`.
inline void write_trace_csv(std::ostream& os, const SolverReport& r) {
  os << std::setprecision(17) << "epoch,loss\n";
  for (std::size_t e = 0; e < r.loss_trace.size(); ++e) os << e << ',' << r.loss_trace[e] << '\n';
}

inline constexpr std::string_view bench_header =
    "case,n,method,diff,iterations,derivative_time_s,linear_algebra_time_s,total_time_s,termination";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << bench_header << '\n' << std::setprecision(17);
  for (const auto& r : rows)
    os << r.case_name << ',' << r.n << ',' << r.method << ',' << r.diff << ',' << r.iterations << ','
       << r.derivative_time_s << ',' << r.linear_algebra_time_s << ',' << r.total_time_s << ',' << r.termination
       << '\n';
}

inline std::vector<BenchRow> parse_bench_csv(std::string_view text) {
  std::vector<BenchRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != bench_header) throw std::invalid_argument("bench.csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
    if (f.size() != 9) throw std::invalid_argument("bench.csv: expected 9 fields in '" + line + "'");
    rows.push_back({f[0], std::stoul(f[1]), f[2], f[3], std::stoul(f[4]), std::stod(f[5]), std::stod(f[6]),
                    std::stod(f[7]), f[8]});
  }
  return rows;
}

inline std::string default_run_name(const RunSpec& spec, std::string_view case_name) {
  return std::string(case_name) + "_" + std::string(to_string(spec.method)) + "_" + std::string(to_string(spec.diff));
}

/// Executes one configured solve and, when `output_dir` is set, writes
/// run_<name>.json and trace_<name>.csv there.
inline RunResult run(const RunSpec& spec) {
  RunResult out;
  const auto net = load_case(spec.case_path);
  FlowModel model(net, spec.residual_rows);

  std::optional<Bounds> bounds;
  if (spec.bounds == BoundsSource::Case || (spec.method == Method::ProjectedGD && spec.bounds == BoundsSource::None))
    bounds = Bounds::from_case(net);
  else if (spec.bounds == BoundsSource::File)
    bounds = load_bounds(spec.bounds_file, net.size());
  if (bounds && spec.tighten_vmin != 0.0) bounds = bounds->tightened(net, spec.tighten_vmin);

  GdConfig gd = spec.gd;
  gd.engine = spec.diff;
  NrOptions nr = spec.nr;
  nr.engine = spec.diff;
  const auto init = model.flat_start();
  const Bounds* bp = bounds ? &*bounds : nullptr;

  switch (spec.method) {
    case Method::GD: {
      auto cfg = GdConfig::plain(gd.eta);
      cfg.max_iter = gd.max_iter;
      cfg.loss_tol = gd.loss_tol;
      cfg.grad_tol = gd.grad_tol;
      cfg.seed = gd.seed;
      cfg.engine = gd.engine;
      cfg.schedule.kind = gd.schedule.kind == ScheduleKind::Adam ? ScheduleKind::Constant : gd.schedule.kind;
      out.report = enhanced_gd(model, init, cfg, bp);
      break;
    }
    case Method::ProjectedGD: {
      auto cfg = GdConfig::plain(gd.eta);
      cfg.max_iter = gd.max_iter;
      cfg.loss_tol = gd.loss_tol;
      cfg.grad_tol = gd.grad_tol;
      cfg.seed = gd.seed;
      cfg.engine = gd.engine;
      out.report = enhanced_gd(model, init, cfg, bp);
      break;
    }
    case Method::EnhancedGD: out.report = enhanced_gd(model, init, gd, bp); break;
    case Method::Adam: {
      gd.schedule.kind = ScheduleKind::Adam;
      out.report = adam_solve(model, init, gd, bp);
      break;
    }
    case Method::NR: out.report = newton_raphson(model, init, nr); break;
    case Method::Hybrid: out.report = hybrid_solve(model, init, gd, spec.switch_loss, nr, bp); break;
  }
  if (bounds) out.report.violations = violation_report(net, out.report.final_state, *bounds);

  const auto& r = out.report;
  out.row = {net.name, net.size(), std::string(to_string(spec.method)), std::string(to_string(spec.diff)),
             r.iterations, r.timing.derivative_s, r.timing.linear_algebra_s, r.timing.total_s,
             std::string(to_string(r.termination))};

  if (!spec.output_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(spec.output_dir);
    const auto name = safe_name(spec.name.empty() ? default_run_name(spec, net.name) : spec.name);
    std::ofstream json(fs::path(spec.output_dir) / ("run_" + name + ".json"));
    auto j = to_json(r);
    j["case"] = net.name;
    j["method"] = to_string(spec.method);
    j["diff"] = to_string(spec.diff);
    j["seed"] = spec.gd.seed;
    json << j.dump(2) << '\n';
    std::ofstream trace(fs::path(spec.output_dir) / ("trace_" + name + ".csv"));
    write_trace_csv(trace, r);
    if (!json || !trace) throw std::ios_base::failure("cannot write artifacts to '" + spec.output_dir + "'");
  }
  return out;
}

/// Runs every spec (up to `jobs` at a time), keeps results in spec order and
/// writes bench.csv plus per-run artifacts under `output_dir`. A failing run
/// is recorded with termination "Error" and the sweep continues.
inline std::vector<RunResult> sweep(const std::vector<RunSpec>& specs, const std::string& output_dir,
                                    std::size_t jobs = 1) {
  if (specs.empty()) throw std::invalid_argument("sweep needs at least one run");
  std::vector<RunResult> results(specs.size());
  auto one = [&](std::size_t i) {
    RunSpec spec = specs[i];
    spec.output_dir = output_dir;
    if (spec.name.empty()) spec.name = "run" + std::to_string(i);
    try {
      results[i] = run(spec);
    } catch (const std::exception& e) {
      results[i].error = e.what();
      results[i].row.case_name = spec.case_path;
      results[i].row.method = to_string(spec.method);
      results[i].row.diff = to_string(spec.diff);
      results[i].row.termination = "Error";
    }
  };
  jobs = std::max<std::size_t>(1, jobs);
  for (std::size_t begin = 0; begin < specs.size(); begin += jobs) {
    std::vector<std::future<void>> batch;
    const auto end = std::min(specs.size(), begin + jobs);
    for (std::size_t i = begin; i < end; ++i) batch.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, one, i));
    for (auto& f : batch) f.get();
  }

  std::filesystem::create_directories(output_dir);
  std::vector<BenchRow> rows;
  for (const auto& r : results) rows.push_back(r.row);
  std::ofstream csv(std::filesystem::path(output_dir) / "bench.csv");
  write_bench_csv(csv, rows);
  if (!csv) throw std::ios_base::failure("cannot write bench.csv");
  return results;
}

/// Bench spec file:
/// `{"out": dir, "jobs": k, "runs": [{"case": ..., "method": ..., ...}, ...]}`.
/// Run keys mirror the `solve` options; omitted keys keep their defaults.
inline std::vector<RunSpec> parse_bench_spec(const nlohmann::json& j, std::string* out_dir = nullptr,
                                             std::size_t* jobs = nullptr) {
  if (out_dir && j.contains("out")) *out_dir = j.at("out").get<std::string>();
  if (jobs && j.contains("jobs")) *jobs = j.at("jobs").get<std::size_t>();
  std::vector<RunSpec> specs;
  for (const auto& r : j.at("runs")) {
    RunSpec s;
    s.case_path = r.at("case").get<std::string>();
    if (r.contains("name")) s.name = r["name"].get<std::string>();
    if (r.contains("method")) s.method = parse_method(r["method"].get<std::string>());
    if (r.contains("diff")) s.diff = parse_diff(r["diff"].get<std::string>());
    if (s.method == Method::Adam) s.gd = GdConfig::adam();
    if (r.contains("eta")) s.gd.eta = r["eta"].get<double>();
    if (r.contains("schedule")) s.gd.schedule.kind = parse_schedule(r["schedule"].get<std::string>());
    if (r.contains("decay_factor")) s.gd.schedule.decay_factor = r["decay_factor"].get<double>();
    if (r.contains("decay_every")) s.gd.schedule.decay_every = r["decay_every"].get<std::size_t>();
    if (r.contains("epoch_length")) s.gd.schedule.epoch_length = r["epoch_length"].get<std::size_t>();
    if (r.contains("gamma")) s.gd.gamma = r["gamma"].get<double>();
    if (r.contains("perturb_p")) s.gd.perturb_p = r["perturb_p"].get<double>();
    if (r.contains("perturb_sigma")) s.gd.perturb_sigma = r["perturb_sigma"].get<double>();
    if (r.contains("seed")) s.gd.seed = r["seed"].get<std::uint64_t>();
    if (r.contains("max_iter")) {
      s.gd.max_iter = r["max_iter"].get<std::size_t>();
      s.nr.max_iter = s.gd.max_iter;
    }
    if (r.contains("tol")) {
      const double tol = r["tol"].get<double>();
      s.nr.tol = tol;
      s.gd.loss_tol = 0.5 * tol * tol;
    }
    if (r.contains("switch_loss")) s.switch_loss = r["switch_loss"].get<double>();
    if (r.contains("bounds")) {
      const auto b = r["bounds"].get<std::string>();
      if (b == "case") s.bounds = BoundsSource::Case;
      else if (b == "none" || b.empty()) s.bounds = BoundsSource::None;
      else {
        s.bounds = BoundsSource::File;
        s.bounds_file = b;
      }
    }
    if (r.contains("tighten_vmin")) s.tighten_vmin = r["tighten_vmin"].get<double>();
    if (r.contains("residual_rows"))
      s.residual_rows = detail::lower(r["residual_rows"].get<std::string>()) == "all" ? ResidualRows::All
                                                                                      : ResidualRows::Block;
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace acpf
