// Command-line front end: single solves, consistency/deviation certificates,
// mediation runs, and the parameter-sweep harness.
//
// Exit codes: 0 success, 1 input/validation error, 2 numerical
// non-convergence.

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "teamalign/alignment.hpp"
#include "teamalign/equilibrium.hpp"
#include "teamalign/mediator.hpp"
#include "teamalign/netio.hpp"

using namespace teamalign;
using nlohmann::json;

namespace {

json vector_to_json(const Vector& v) {
  json j = json::array();
  for (Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
  return j;
}

json result_to_json(const EquilibriumResult& res) {
  return json{{"kind", res.kind == SolutionKind::NashEquilibrium ? "ne"
                                                                 : "team"},
              {"converged", res.converged},
              {"residual", res.residual},
              {"iterations", res.iterations},
              {"tau", res.tau_used},
              {"point", vector_to_json(res.point)}};
}

void emit(const json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << std::endl;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw io_error("cannot write output file '" + out_path + "'");
  out << j.dump(2) << "\n";
}

void warn_stepsize_window(const ProblemSpec& spec, double tau, bool team_map) {
  if (tau <= 0.0) return;
  try {
    SmoothnessConstants c =
        estimate_constants(spec, Vector::Zero(spec.dim_theta()));
    if (!c.certified) return;
    double kappa = team_map ? c.kappa1 : c.kappa2;
    double nu = team_map ? c.nu1 : c.nu2;
    double limit = stepsize_limit(kappa, nu);
    if (tau >= limit)
      std::cerr << "warning: tau = " << tau
                << " lies outside the certified linear-convergence window "
                   "(0, "
                << limit << "); the iteration may not contract\n";
  } catch (const Error&) {
    // uncertified instance: nothing to warn about
  }
}

StepsizeSchedule parse_schedule(const std::string& text, bool& auto_eta) {
  auto_eta = false;
  auto colon = text.find(':');
  std::string kind = text.substr(0, colon);
  std::string value =
      colon == std::string::npos ? std::string() : text.substr(colon + 1);
  if (kind == "dimin" || kind == "diminishing")
    return StepsizeSchedule::diminishing(value.empty() ? 1.0
                                                       : std::stod(value));
  if (kind == "fixed") {
    if (value.empty() || value == "auto") {
      auto_eta = true;
      return StepsizeSchedule::fixed(0.0);
    }
    return StepsizeSchedule::fixed(std::stod(value));
  }
  throw precondition_error("unknown schedule '" + text +
                           "' (expected dimin:c, fixed:eta or fixed:auto)");
}

struct SweepRow {
  double alpha, beta, gamma;
  int cr = 0;
  double closeness_ratio = 0.0;
  double travel_time_diff = 0.0;
  double gap = 0.0;
  std::string status = "ok";
  std::string verdict;
};

int sweep_thread_cap() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("TEAM_ALIGN_THREADS");
  if (env != nullptr) {
    char* end = nullptr;
    long parsed = std::strtol(env, &end, 10);
    if (end != env && parsed > 0)
      hw = std::min<unsigned>(hw, static_cast<unsigned>(parsed));
  }
  return static_cast<int>(hw);
}

int cmd_solve(const std::string& problem_path, double tau, double tol,
              int max_iter, const std::string& out_path, bool team_map) {
  ProblemSpec spec = load_problem(problem_path).to_problem_spec();
  SolverConfig cfg;
  cfg.tau = tau;
  cfg.tol = tol;
  cfg.max_iter = max_iter;
  warn_stepsize_window(spec, tau, team_map);
  Vector u0 = Vector::Zero(spec.dim_profile());
  try {
    EquilibriumResult res =
        team_map ? solve_team_optimum(spec, cfg, u0)
                 : solve_ne(spec, Vector::Zero(spec.dim_theta()), cfg, u0);
    emit(result_to_json(res), out_path);
    return 0;
  } catch (const SolveFailure& f) {
    std::cerr << "error: " << f.what() << "\n";
    emit(result_to_json(f.best()), out_path);
    return 2;
  }
}

int cmd_check(const std::string& problem_path, const std::string& theta_path,
              const std::string& out_path) {
  ProblemSpec spec = load_problem(problem_path).to_problem_spec();
  Vector theta = Vector::Zero(spec.dim_theta());
  if (!theta_path.empty()) {
    std::ifstream in(theta_path);
    if (!in) throw io_error("cannot open theta file '" + theta_path + "'");
    json j;
    in >> j;
    if (!j.contains("theta"))
      throw io_error("theta file must carry a 'theta' array");
    if (j["theta"].size() != static_cast<size_t>(spec.dim_theta()))
      throw io_error("theta has " + std::to_string(j["theta"].size()) +
                     " entries, expected " + std::to_string(spec.dim_theta()));
    theta = Vector(spec.dim_theta());
    for (Index k = 0; k < spec.dim_theta(); ++k)
      theta[k] = j["theta"][k].get<double>();
  }

  SolverConfig cfg;
  auto team = solve_team_optimum(spec, cfg, Vector::Zero(spec.dim_profile()));
  auto ne = solve_ne(spec, theta, cfg, team.point);

  ConsistencyVerdict verdict;
  if (spec.decision_dim == 1)
    verdict = check_consistency_1d(spec, theta, ne.point);
  else
    verdict = check_consistency_multidim(spec, theta, ne.point);

  auto constants = estimate_constants(spec, theta);
  auto cert = deviation_bound(spec, theta, ne.point, constants, &team.point);

  json evidence = json::array();
  for (const auto& ev : verdict.evidence) {
    json e{{"member", ev.member}, {"detail", ev.detail}, {"value", ev.value}};
    if (ev.witness.has_value()) e["witness"] = vector_to_json(*ev.witness);
    evidence.push_back(e);
  }
  json out{{"verdict", to_string(verdict.verdict)},
           {"cr", is_consistent(verdict.verdict) ? 1 : 0},
           {"evidence", evidence},
           {"deviation",
            {{"gap_norm", cert.gap_norm},
             {"kappa1", cert.kappa1},
             {"nu1", cert.nu1},
             {"bound", cert.bound},
             {"closeness_ratio", cert.closeness_ratio},
             {"actual_gap", *cert.actual_gap},
             {"constants_certified", cert.constants_certified}}},
           {"ne", result_to_json(ne)},
           {"team", result_to_json(team)}};
  emit(out, out_path);
  return 0;
}

int cmd_mediate(const std::string& problem_path, const std::string& schedule,
                const std::string& scenario, int max_outer, double outer_tol,
                const std::string& out_path, const std::string& trace_csv) {
  ProblemSpec spec = load_problem(problem_path).to_problem_spec();
  SolverConfig inner;
  inner.tol = 1e-11;
  auto team =
      solve_team_optimum(spec, inner, Vector::Zero(spec.dim_profile()));

  MediationConfig cfg;
  cfg.inner = inner;
  cfg.outer_tol = outer_tol;
  cfg.max_outer_iter = max_outer;
  cfg.adjustable = scenario_mask(spec, scenario);
  bool auto_eta = false;
  cfg.schedule = parse_schedule(schedule, auto_eta);
  if (cfg.schedule.kind == StepsizeSchedule::Kind::Fixed && auto_eta) {
    NuPsiEstimate nu = estimate_nu_psi(spec, team.point, cfg);
    cfg.nu_psi = nu.value;
    cfg.schedule = StepsizeSchedule::fixed(1.0 / nu.value);
  }

  MediationReport rep = run_mediation(spec, team.point, cfg);
  if (!trace_csv.empty()) export_trace_csv(rep, trace_csv);

  json out{{"scenario", scenario},
           {"converged", rep.converged},
           {"outer_iterations", rep.outer_iterations},
           {"criticality_residual", rep.criticality_residual},
           {"psi_final", rep.psi_trace.empty() ? 0.0 : rep.psi_trace.back()},
           {"final_gap", rep.final_gap},
           {"conservative_fallbacks", rep.conservative_fallback_count},
           {"nu_psi_used", rep.nu_psi_used},
           {"stepsize_schedule", schedule},
           {"theta_final", vector_to_json(rep.theta_final)},
           {"psi_trace", rep.psi_trace},
           {"hypergrad_norms", rep.hypergrad_norms},
           {"inner_iterations", rep.inner_iterations}};
  emit(out, out_path);
  return 0;
}

int cmd_sweep(const std::string& problem_path, const std::string& grid_path,
              const std::string& out_path) {
  TrafficInstance inst = load_problem(problem_path);
  ProblemSpec base = inst.to_problem_spec();
  ExperimentGrid grid = load_grid(grid_path);

  SolverConfig cfg;
  cfg.tol = 1e-11;
  auto team =
      solve_team_optimum(base, cfg, Vector::Zero(base.dim_profile()));
  double team_cost = eval_team_cost(base, team.point);

  struct Cell {
    double alpha, beta, gamma;
  };
  std::vector<Cell> cells;
  for (double a : grid.alpha_values)
    for (double b : grid.beta_values)
      for (double g : grid.gamma_values) cells.push_back({a, b, g});

  std::vector<SweepRow> rows(cells.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t k = next.fetch_add(1);
      if (k >= cells.size()) return;
      const Cell& cell = cells[k];
      SweepRow& row = rows[k];
      row.alpha = cell.alpha;
      row.beta = cell.beta;
      row.gamma = cell.gamma;
      try {
        ProblemSpec spec = base;
        ParamSet p;
        p.alpha = Vector::Constant(1, cell.alpha);
        p.beta = Vector::Constant(1, cell.beta);
        p.gamma = Vector::Constant(1, cell.gamma);
        spec.members.assign(spec.num_members, p);
        Vector theta = Vector::Zero(spec.dim_theta());
        auto ne = solve_ne(spec, theta, cfg, team.point);
        ConsistencyVerdict verdict =
            spec.decision_dim == 1
                ? check_consistency_1d(spec, theta, ne.point)
                : check_consistency_multidim(spec, theta, ne.point);
        auto constants = estimate_constants(spec, theta);
        auto cert = deviation_bound(spec, theta, ne.point, constants);
        row.cr = is_consistent(verdict.verdict) ? 1 : 0;
        row.verdict = to_string(verdict.verdict);
        row.closeness_ratio = cert.closeness_ratio;
        row.travel_time_diff = eval_team_cost(spec, ne.point) - team_cost;
        row.gap = (ne.point - team.point).norm();
      } catch (const Error& e) {
        row.status = std::string("error: ") + e.what();
      }
    }
  };
  int nthreads = std::min<int>(sweep_thread_cap(),
                               static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw io_error("cannot write sweep output '" + out_path + "'");
    os = &file;
  }
  os->precision(17);
  *os << "alpha_i,beta_i,gamma_i,cr,closeness_ratio,travel_time_diff,gap,"
         "status\n";
  for (const SweepRow& row : rows) {
    *os << row.alpha << ',' << row.beta << ',' << row.gamma << ',' << row.cr
        << ',' << row.closeness_ratio << ',' << row.travel_time_diff << ','
        << row.gap << ',' << row.status << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Parameterized team/game decision problems: equilibria, consistency "
      "certificates, deviation bounds and hypergradient mediation"};
  app.require_subcommand(1);

  std::string problem, out, theta_file, grid_file, trace_csv;
  double tau = 0.0, tol = 1e-10, outer_tol = 1e-8;
  int max_iter = 100000, max_outer = 500;
  std::string schedule = "fixed:auto", scenario = "all";

  auto add_solver_flags = [&](CLI::App* cmd) {
    cmd->add_option("--problem", problem, "problem file (JSON)")->required();
    cmd->add_option("--tau", tau, "projected-gradient stepsize (0: auto)");
    cmd->add_option("--tol", tol, "fixed-point residual tolerance");
    cmd->add_option("--max-iter", max_iter, "iteration budget");
    cmd->add_option("--out", out, "output file (default: stdout)");
  };

  CLI::App* solve_ne_cmd =
      app.add_subcommand("solve-ne", "compute the Nash equilibrium");
  add_solver_flags(solve_ne_cmd);
  CLI::App* solve_team_cmd =
      app.add_subcommand("solve-team", "compute the team optimum");
  add_solver_flags(solve_team_cmd);

  CLI::App* check_cmd = app.add_subcommand(
      "check", "consistency verdict and deviation certificate");
  check_cmd->add_option("--problem", problem, "problem file")->required();
  check_cmd->add_option("--theta", theta_file,
                        "adjustment file with a 'theta' array");
  check_cmd->add_option("--out", out, "output file");

  CLI::App* mediate_cmd =
      app.add_subcommand("mediate", "run the bi-level mediation loop");
  mediate_cmd->add_option("--problem", problem, "problem file")->required();
  mediate_cmd->add_option("--schedule", schedule,
                          "dimin:c | fixed:eta | fixed:auto");
  mediate_cmd->add_option("--scenario", scenario,
                          "alpha | gamma | alpha-beta | all");
  mediate_cmd->add_option("--max-outer", max_outer, "outer iteration budget");
  mediate_cmd->add_option("--tol", outer_tol, "criticality tolerance");
  mediate_cmd->add_option("--out", out, "output file");
  mediate_cmd->add_option("--trace-csv", trace_csv, "psi trace CSV path");

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "run the member-parameter grid");
  sweep_cmd->add_option("--problem", problem, "problem file")->required();
  sweep_cmd->add_option("--grid", grid_file, "grid file (JSON)")->required();
  sweep_cmd->add_option("--out", out, "output CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve_ne_cmd->parsed())
      return cmd_solve(problem, tau, tol, max_iter, out, false);
    if (solve_team_cmd->parsed())
      return cmd_solve(problem, tau, tol, max_iter, out, true);
    if (check_cmd->parsed()) return cmd_check(problem, theta_file, out);
    if (mediate_cmd->parsed())
      return cmd_mediate(problem, schedule, scenario, max_outer, outer_tol,
                         out, trace_csv);
    if (sweep_cmd->parsed()) return cmd_sweep(problem, grid_file, out);
  } catch (const SolveFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Convergence ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
