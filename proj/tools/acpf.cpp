// Command-line front end: solve one case, run a benchmark sweep, or write a
// synthetic case file.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "acpf/acpf.hpp"

namespace {

namespace fs = std::filesystem;

constexpr int exit_ok = 0;
constexpr int exit_not_converged = 1;
constexpr int exit_usage = 2;

struct SolveArgs {
  std::string case_path;
  std::string method = "EnhancedGD";
  std::string diff = "AutoDiff";
  double eta = 0.0;
  std::string schedule;
  std::size_t epoch_length = 10;
  double gamma = 0.9;
  double perturb_p = 0.05;
  double perturb_sigma = 0.01;
  std::uint64_t seed = 0;
  std::size_t max_iter = 0;
  double tol = 1e-8;
  double switch_loss = 1e-2;
  std::string bounds;
  double tighten_vmin = 0.0;
  std::string residual_rows = "block";
  std::string out = ".";
  std::string name;
  bool quiet = false;
};

acpf::RunSpec to_spec(const SolveArgs& a) {
  acpf::RunSpec s;
  s.case_path = a.case_path;
  s.name = a.name;
  s.method = acpf::parse_method(a.method);
  s.diff = acpf::parse_diff(a.diff);
  if (s.method == acpf::Method::Adam) s.gd = acpf::GdConfig::adam();
  if (a.eta > 0.0) s.gd.eta = a.eta;
  if (!a.schedule.empty()) s.gd.schedule.kind = acpf::parse_schedule(a.schedule);
  s.gd.schedule.epoch_length = a.epoch_length;
  if (s.method != acpf::Method::Adam) {
    s.gd.gamma = a.gamma;
    s.gd.perturb_p = a.perturb_p;
  }
  s.gd.perturb_sigma = a.perturb_sigma;
  s.gd.seed = a.seed;
  if (a.max_iter > 0) {
    s.gd.max_iter = a.max_iter;
    s.nr.max_iter = a.max_iter;
  }
  s.nr.tol = a.tol;
  s.gd.loss_tol = 0.5 * a.tol * a.tol;
  s.switch_loss = a.switch_loss;
  if (a.bounds == "case") {
    s.bounds = acpf::BoundsSource::Case;
  } else if (!a.bounds.empty() && a.bounds != "none") {
    s.bounds = acpf::BoundsSource::File;
    s.bounds_file = a.bounds;
  }
  s.tighten_vmin = a.tighten_vmin;
  if (a.residual_rows == "all") s.residual_rows = acpf::ResidualRows::All;
  else if (a.residual_rows != "block") throw std::invalid_argument("--residual-rows must be 'block' or 'all'");
  s.output_dir = a.out;
  return s;
}

void print_row(const acpf::BenchRow& r) {
  std::cout << r.case_name << ": " << r.method << "/" << r.diff << " " << r.termination << " after " << r.iterations
            << " iterations (derivative " << r.derivative_time_s << " s, linear algebra " << r.linear_algebra_time_s
            << " s, total " << r.total_time_s << " s)\n";
}

int do_solve(const SolveArgs& args) {
  const auto spec = to_spec(args);
  if (!spec.case_path.starts_with("synth:") && !fs::exists(spec.case_path)) {
    std::cerr << "acpf: case file not found: " << spec.case_path << '\n';
    return exit_usage;
  }
  const auto result = acpf::run(spec);
  if (!args.quiet) {
    print_row(result.row);
    const auto& v = result.report.violations;
    std::cout << "violations: " << v.count << " (largest " << v.largest << " p.u.)\n";
    for (const auto& note : result.report.notes) std::cout << "note: " << note << '\n';
  }
  return result.converged() ? exit_ok : exit_not_converged;
}

int do_bench(const std::string& spec_path, std::string out_dir, std::size_t jobs) {
  std::ifstream in(spec_path);
  if (!in) {
    std::cerr << "acpf: cannot open spec file: " << spec_path << '\n';
    return exit_usage;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "acpf: spec file is not valid JSON: " << e.what() << '\n';
    return exit_usage;
  }
  std::string file_out = "bench_out";
  std::size_t file_jobs = 1;
  const auto specs = acpf::parse_bench_spec(j, &file_out, &file_jobs);
  if (out_dir.empty()) out_dir = file_out;
  if (jobs == 0) jobs = file_jobs;
  const auto results = acpf::sweep(specs, out_dir, jobs);
  bool any = false;
  for (const auto& r : results) {
    if (!r.error.empty()) std::cerr << "acpf: run failed: " << r.error << '\n';
    else print_row(r.row);
    any = any || r.converged();
  }
  std::cout << "wrote " << (fs::path(out_dir) / "bench.csv").string() << '\n';
  return any ? exit_ok : exit_not_converged;
}

int do_synth(std::size_t n, const std::string& topology, double load, const std::string& out) {
  const auto net = acpf::synth_case(n, acpf::parse_topology(topology), load);
  std::ofstream file(out);
  if (!file) {
    std::cerr << "acpf: cannot write " << out << '\n';
    return exit_usage;
  }
  file << acpf::serialize_case(net);
  return file ? exit_ok : exit_usage;
}

int do_inspect(const std::string& case_path, const std::string& what, const std::string& diff) {
  acpf::FlowModel model(acpf::load_case(case_path));
  const auto state = model.flat_start();
  if (what == "tape") {
    model.graph().forward_eval(state.packed());
    model.graph().reverse_sweep(model.loss_node());
    model.graph().dump(std::cout);
  } else if (what == "residual") {
    acpf::write_residual_csv(std::cout, model.network(), acpf::residual(model, state));
  } else if (what == "jacobian") {
    acpf::write_jacobian_csv(std::cout, model.network(), acpf::jacobian(model, state, acpf::parse_diff(diff)));
  } else {
    std::cerr << "acpf: unknown inspect target '" << what << "'\n";
    return exit_usage;
  }
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AC power flow by gradient descent, Newton-Raphson and automatic differentiation"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Solve one case");
  s->add_option("case", solve.case_path, "MATPOWER case file or synth:<topology>:<n>[:<load>]")->required();
  s->add_option("--method", solve.method, "GD, ProjectedGD, EnhancedGD, Adam, NR or Hybrid")->capture_default_str();
  s->add_option("--diff", solve.diff, "AutoDiff, NumericForward or NumericCentral")->capture_default_str();
  s->add_option("--eta", solve.eta, "Initial learning rate (default 0.01, Adam 0.001)");
  s->add_option("--schedule", solve.schedule, "Constant, RandomConstant, StepDecay or Adam");
  s->add_option("--epoch-length", solve.epoch_length, "Iterations per schedule epoch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  s->add_option("--gamma", solve.gamma, "Momentum coefficient")->capture_default_str();
  s->add_option("--perturb-p", solve.perturb_p, "Perturbation probability per iteration")->capture_default_str();
  s->add_option("--perturb-sigma", solve.perturb_sigma, "Perturbation intensity")->capture_default_str();
  s->add_option("--seed", solve.seed, "RNG seed")->capture_default_str();
  s->add_option("--max-iter", solve.max_iter, "Iteration cap (default 1000 for descent, 20 for NR)");
  s->add_option("--tol", solve.tol, "Mismatch tolerance (inf-norm)")->capture_default_str();
  s->add_option("--switch-loss", solve.switch_loss, "Hybrid: loss below which Newton takes over")
      ->capture_default_str();
  s->add_option("--bounds", solve.bounds, "'case' or a JSON file with v_min, v_max, theta_min, theta_max");
  s->add_option("--tighten-vmin", solve.tighten_vmin, "Raise every PQ lower voltage limit by this amount");
  s->add_option("--residual-rows", solve.residual_rows, "'block' or 'all'")->capture_default_str();
  s->add_option("--out", solve.out, "Output directory")->capture_default_str();
  s->add_option("--name", solve.name, "Run name used in artifact file names");
  s->add_flag("--quiet", solve.quiet, "Print nothing on success");

  std::string spec_path, bench_out;
  std::size_t jobs = 0;
  auto* b = app.add_subcommand("bench", "Run a sweep described by a JSON spec file");
  b->add_option("--spec", spec_path, "Spec file")->required();
  b->add_option("--out", bench_out, "Output directory (overrides the spec file)");
  b->add_option("--jobs", jobs, "Concurrent runs (default from spec, else 1)");

  std::size_t synth_n = 0;
  std::string topology = "ladder", synth_out;
  double load_level = 1.0;
  auto* y = app.add_subcommand("synth", "Write a synthetic case file");
  y->add_option("--n", synth_n, "Bus count")->required()->check(CLI::Range(std::size_t{2}, std::size_t{10'000'000}));
  y->add_option("--topology", topology, "ladder or ring")->capture_default_str();
  y->add_option("--load-level", load_level, "Load scale")->capture_default_str();
  y->add_option("--out", synth_out, "Output file")->required();

  std::string inspect_case, inspect_what = "residual", inspect_diff = "AutoDiff";
  auto* i = app.add_subcommand("inspect", "Dump the tape, residual or Jacobian at flat start");
  i->add_option("case", inspect_case, "Case file or synth spec")->required();
  i->add_option("--what", inspect_what, "tape, residual or jacobian")->capture_default_str();
  i->add_option("--diff", inspect_diff, "Engine for the Jacobian")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*s) return do_solve(solve);
    if (*b) return do_bench(spec_path, bench_out, jobs);
    if (*y) return do_synth(synth_n, topology, load_level, synth_out);
    if (*i) return do_inspect(inspect_case, inspect_what, inspect_diff);
  } catch (const acpf::CaseError& e) {
    std::cerr << "acpf: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "acpf: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "acpf: " << e.what() << '\n';
    return exit_usage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "acpf: bad spec: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    std::cerr << "acpf: " << e.what() << '\n';
    return exit_usage;
  }
  return exit_usage;
}
