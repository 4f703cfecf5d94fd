#pragma once

#include <string>
#include <utility>
#include <vector>

#include "teamalign/mediator.hpp"
#include "teamalign/model.hpp"

namespace teamalign {

// Directed routing network; nodes are 1-based as in the problem files.
struct TrafficNetwork {
  int node_count = 0;
  std::vector<std::pair<int, int>> arcs;  // (from, to)
  std::vector<std::pair<int, int>> members;  // (origin, destination)

  int arc_count() const { return static_cast<int>(arcs.size()); }
};

// Connectivity and index checks; throws on violation.
void validate_network(const TrafficNetwork& net);

// Node-arc incidence H in {-1, 0, +1}^{r x n}: each column carries -1 at the
// arc's tail and +1 at its head, so H u = m routes one unit from the -1
// entry of m to its +1 entry.
Matrix build_incidence(const TrafficNetwork& net);

Vector build_od_vector(const TrafficNetwork& net, int origin, int dest);

struct TrafficOptions {
  bool nonneg = true;       // u >= 0 rows
  double capacity = -1.0;   // per-arc bound; < 0 selects 10 * total demand
  bool use_capacity = true; // false: no upper bound (requires nonneg=false
                            // for a validated set, or accepts unboundedness)
  double mediator_box = 50.0;  // theta box half-width when a set is not given
};

// Assembles the Example-1 quadratic problem over the network: per-member
// feasible sets {u >= 0, H u = m_i, u <= capacity} with one incidence row
// dropped so the equality block has full row rank. `nonneg=false` yields the
// equality-only sets of the affine-NE analysis.
ProblemSpec build_traffic_problem(const TrafficNetwork& net,
                                  const ParamSet& team,
                                  const std::vector<ParamSet>& members,
                                  const TrafficOptions& options = {});

// Parameter sweep grid; `vary_in_unison` sets every member to the same
// subjective values per cell.
struct ExperimentGrid {
  std::vector<double> alpha_values;
  std::vector<double> beta_values;
  std::vector<double> gamma_values;
  bool vary_in_unison = true;
};

// Parsed problem file (format_version 1). Kept alongside the assembled
// ProblemSpec so files round-trip losslessly.
struct TrafficInstance {
  TrafficNetwork network;
  ParamSet team;
  std::vector<ParamSet> members;
  TrafficOptions options;
  // Mediator box bounds; either one entry (broadcast) or d*N entries.
  Vector mediator_lo, mediator_hi;

  ProblemSpec to_problem_spec() const;
};

bool operator==(const TrafficInstance& a, const TrafficInstance& b);

TrafficInstance load_problem(const std::string& path);
void save_problem(const TrafficInstance& instance, const std::string& path);

ExperimentGrid load_grid(const std::string& path);

// Trace export: CSV carries `iter,psi,grad_norm,inner_iters`, one row per
// outer iteration; JSON carries the full report.
void export_trace_csv(const MediationReport& report, const std::string& path);
void export_trace_json(const MediationReport& report, const std::string& path);

}  // namespace teamalign
