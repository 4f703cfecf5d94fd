#include "teamalign/netio.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "teamalign/error.hpp"

namespace teamalign {

namespace {

using nlohmann::json;

bool directed_path_exists(const TrafficNetwork& net, int origin, int dest) {
  std::vector<std::vector<int>> out(net.node_count + 1);
  for (const auto& [from, to] : net.arcs) out[from].push_back(to);
  std::vector<bool> seen(net.node_count + 1, false);
  std::queue<int> frontier;
  frontier.push(origin);
  seen[origin] = true;
  while (!frontier.empty()) {
    int v = frontier.front();
    frontier.pop();
    if (v == dest) return true;
    for (int w : out[v])
      if (!seen[w]) {
        seen[w] = true;
        frontier.push(w);
      }
  }
  return false;
}

bool weakly_connected(const TrafficNetwork& net) {
  if (net.node_count == 0) return false;
  std::vector<std::vector<int>> adj(net.node_count + 1);
  for (const auto& [from, to] : net.arcs) {
    adj[from].push_back(to);
    adj[to].push_back(from);
  }
  std::vector<bool> seen(net.node_count + 1, false);
  std::queue<int> frontier;
  frontier.push(1);
  seen[1] = true;
  int count = 0;
  while (!frontier.empty()) {
    int v = frontier.front();
    frontier.pop();
    ++count;
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = true;
        frontier.push(w);
      }
  }
  return count == net.node_count;
}

Vector json_to_vector(const json& j, const std::string& field) {
  if (!j.is_array())
    throw io_error("field '" + field + "' must be an array of numbers");
  Vector v(j.size());
  for (size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number())
      throw io_error("field '" + field + "' entry " + std::to_string(k) +
                     " is not a number");
    v[k] = j[k].get<double>();
  }
  return v;
}

json vector_to_json(const Vector& v) {
  json j = json::array();
  for (Index k = 0; k < v.size(); ++k) j.push_back(v[k]);
  return j;
}

ParamSet params_from_json(const json& j, const std::string& where) {
  if (!j.contains("alpha") || !j.contains("beta") || !j.contains("gamma"))
    throw io_error(where + " must carry alpha, beta and gamma arrays");
  ParamSet p;
  p.alpha = json_to_vector(j["alpha"], where + ".alpha");
  p.beta = json_to_vector(j["beta"], where + ".beta");
  p.gamma = json_to_vector(j["gamma"], where + ".gamma");
  return p;
}

json params_to_json(const ParamSet& p) {
  return json{{"alpha", vector_to_json(p.alpha)},
              {"beta", vector_to_json(p.beta)},
              {"gamma", vector_to_json(p.gamma)}};
}

}  // namespace

void validate_network(const TrafficNetwork& net) {
  if (net.node_count < 2)
    throw validation_error("network needs at least two nodes");
  for (size_t a = 0; a < net.arcs.size(); ++a) {
    auto [from, to] = net.arcs[a];
    if (from < 1 || from > net.node_count || to < 1 || to > net.node_count)
      throw validation_error("arc " + std::to_string(a) +
                             " references an invalid node (" +
                             std::to_string(from) + " -> " +
                             std::to_string(to) + ")");
    if (from == to)
      throw validation_error("arc " + std::to_string(a) + " is a self-loop");
  }
  if (!weakly_connected(net))
    throw validation_error("network is not connected");
  for (size_t i = 0; i < net.members.size(); ++i) {
    auto [origin, dest] = net.members[i];
    if (origin < 1 || origin > net.node_count || dest < 1 ||
        dest > net.node_count)
      throw validation_error("member " + std::to_string(i) +
                             " has an invalid origin or destination");
    if (origin == dest)
      throw validation_error("member " + std::to_string(i) +
                             ": origin equals destination");
    if (!directed_path_exists(net, origin, dest))
      throw validation_error("member " + std::to_string(i) +
                             ": no directed path from node " +
                             std::to_string(origin) + " to node " +
                             std::to_string(dest));
  }
}

Matrix build_incidence(const TrafficNetwork& net) {
  for (size_t a = 0; a < net.arcs.size(); ++a) {
    auto [from, to] = net.arcs[a];
    if (from < 1 || from > net.node_count || to < 1 || to > net.node_count)
      throw validation_error("arc " + std::to_string(a) +
                             " references an invalid node");
  }
  Matrix h = Matrix::Zero(net.node_count, net.arc_count());
  for (int a = 0; a < net.arc_count(); ++a) {
    h(net.arcs[a].first - 1, a) = -1.0;
    h(net.arcs[a].second - 1, a) = 1.0;
  }
  return h;
}

Vector build_od_vector(const TrafficNetwork& net, int origin, int dest) {
  if (origin == dest)
    throw precondition_error("origin and destination must differ");
  if (origin < 1 || origin > net.node_count || dest < 1 ||
      dest > net.node_count)
    throw precondition_error("origin or destination node out of range");
  Vector m = Vector::Zero(net.node_count);
  m[origin - 1] = -1.0;
  m[dest - 1] = 1.0;
  return m;
}

ProblemSpec build_traffic_problem(const TrafficNetwork& net,
                                  const ParamSet& team,
                                  const std::vector<ParamSet>& members,
                                  const TrafficOptions& options) {
  validate_network(net);
  if (net.members.size() != members.size())
    throw dimension_error(
        "one parameter set per network member expected (network has " +
        std::to_string(net.members.size()) + ", got " +
        std::to_string(members.size()) + ")");
  const Index n = net.arc_count();
  const Index nm = static_cast<Index>(net.members.size());

  ProblemSpec spec;
  spec.num_members = nm;
  spec.decision_dim = n;
  spec.family = make_traffic_family(n, nm, team.alpha.size(),
                                    team.beta.size(), team.gamma.size());
  spec.team = team;
  spec.members = members;

  Matrix h_full = build_incidence(net);
  // The rows of the full incidence matrix sum to zero; dropping the last
  // node's row restores full row rank without changing the set.
  Matrix h = h_full.topRows(net.node_count - 1);
  double capacity = options.capacity;
  if (capacity < 0) capacity = 10.0 * static_cast<double>(nm);
  for (Index i = 0; i < nm; ++i) {
    Vector m_full =
        build_od_vector(net, net.members[i].first, net.members[i].second);
    Vector m = m_full.head(net.node_count - 1);
    if (!options.nonneg) {
      spec.feasible.push_back(Polyhedron::general(
          Matrix::Zero(0, n), Vector(0), h, m));
      continue;
    }
    Index rows = options.use_capacity ? 2 * n : n;
    Matrix d = Matrix::Zero(rows, n);
    Vector b = Vector::Zero(rows);
    for (Index k = 0; k < n; ++k) {
      d(k, k) = -1.0;  // u >= 0
      b[k] = 0.0;
    }
    if (options.use_capacity)
      for (Index k = 0; k < n; ++k) {
        d(n + k, k) = 1.0;
        b[n + k] = capacity;
      }
    spec.feasible.push_back(Polyhedron::general(d, b, h, m));
  }

  const Index dtheta = spec.dim_theta();
  spec.mediator_set =
      Polyhedron::box(Vector::Constant(dtheta, -options.mediator_box),
                      Vector::Constant(dtheta, options.mediator_box));
  validate_problem(spec);
  return spec;
}

ProblemSpec TrafficInstance::to_problem_spec() const {
  ProblemSpec spec = build_traffic_problem(network, team, members, options);
  if (mediator_lo.size() > 0) {
    Index dtheta = spec.dim_theta();
    Vector lo(dtheta), hi(dtheta);
    if (mediator_lo.size() == 1) {
      lo.setConstant(mediator_lo[0]);
      hi.setConstant(mediator_hi[0]);
    } else if (mediator_lo.size() == dtheta) {
      lo = mediator_lo;
      hi = mediator_hi;
    } else {
      throw io_error("mediator_set bounds must have 1 or d*N entries");
    }
    spec.mediator_set = Polyhedron::box(lo, hi);
  }
  return spec;
}

bool operator==(const TrafficInstance& a, const TrafficInstance& b) {
  auto params_eq = [](const ParamSet& x, const ParamSet& y) {
    return x.alpha == y.alpha && x.beta == y.beta && x.gamma == y.gamma;
  };
  if (a.network.node_count != b.network.node_count ||
      a.network.arcs != b.network.arcs ||
      a.network.members != b.network.members)
    return false;
  if (!params_eq(a.team, b.team) || a.members.size() != b.members.size())
    return false;
  for (size_t i = 0; i < a.members.size(); ++i)
    if (!params_eq(a.members[i], b.members[i])) return false;
  return a.options.nonneg == b.options.nonneg &&
         a.options.capacity == b.options.capacity &&
         a.options.use_capacity == b.options.use_capacity &&
         a.mediator_lo == b.mediator_lo && a.mediator_hi == b.mediator_hi;
}

TrafficInstance load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open problem file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw io_error("problem file '" + path + "': " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw io_error("problem file '" + path +
                   "': missing or unsupported format_version (expected 1)");
  if (j.value("family", "traffic") != std::string("traffic"))
    throw io_error("problem file '" + path +
                   "': only the traffic family is file-backed");

  TrafficInstance inst;
  const json& net = j.at("network");
  inst.network.node_count = net.at("nodes").get<int>();
  for (size_t a = 0; a < net.at("arcs").size(); ++a) {
    const json& arc = net["arcs"][a];
    if (!arc.contains("from") || !arc.contains("to"))
      throw io_error("arc " + std::to_string(a) +
                     " must carry 'from' and 'to'");
    int from = arc["from"].get<int>();
    int to = arc["to"].get<int>();
    if (from < 1 || from > inst.network.node_count || to < 1 ||
        to > inst.network.node_count)
      throw io_error("arc " + std::to_string(a) +
                     " references a node outside 1.." +
                     std::to_string(inst.network.node_count));
    inst.network.arcs.emplace_back(from, to);
  }
  for (const json& member : j.at("members"))
    inst.network.members.emplace_back(member.at("origin").get<int>(),
                                      member.at("dest").get<int>());
  inst.team = params_from_json(j.at("team_params"), "team_params");
  const json& mp = j.at("member_params");
  if (mp.size() != inst.network.members.size())
    throw io_error("member_params must list one entry per member");
  for (size_t i = 0; i < mp.size(); ++i)
    inst.members.push_back(
        params_from_json(mp[i], "member_params[" + std::to_string(i) + "]"));

  if (j.contains("options")) {
    const json& opt = j["options"];
    inst.options.nonneg = opt.value("nonneg", true);
    if (opt.contains("capacity")) {
      if (opt["capacity"].is_null())
        inst.options.use_capacity = false;
      else if (opt["capacity"].is_number())
        inst.options.capacity = opt["capacity"].get<double>();
      else if (opt["capacity"] != "auto")
        throw io_error("options.capacity must be a number, null or \"auto\"");
    }
  }
  if (j.contains("mediator_set")) {
    const json& ms = j["mediator_set"];
    if (ms.value("type", "box") != std::string("box"))
      throw io_error("mediator_set.type must be 'box'");
    auto read_bound = [&](const char* key) {
      if (!ms.contains(key))
        throw io_error(std::string("mediator_set needs '") + key + "'");
      if (ms[key].is_number())
        return Vector(Vector::Constant(1, ms[key].get<double>()));
      return json_to_vector(ms[key], std::string("mediator_set.") + key);
    };
    inst.mediator_lo = read_bound("lo");
    inst.mediator_hi = read_bound("hi");
    if (inst.mediator_lo.size() != inst.mediator_hi.size())
      throw io_error("mediator_set lo/hi size mismatch");
  }
  return inst;
}

void save_problem(const TrafficInstance& inst, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["family"] = "traffic";
  j["network"]["nodes"] = inst.network.node_count;
  j["network"]["arcs"] = json::array();
  for (const auto& [from, to] : inst.network.arcs)
    j["network"]["arcs"].push_back(json{{"from", from}, {"to", to}});
  j["members"] = json::array();
  for (const auto& [origin, dest] : inst.network.members)
    j["members"].push_back(json{{"origin", origin}, {"dest", dest}});
  j["team_params"] = params_to_json(inst.team);
  j["member_params"] = json::array();
  for (const ParamSet& p : inst.members)
    j["member_params"].push_back(params_to_json(p));
  j["options"] = json{{"nonneg", inst.options.nonneg}};
  if (!inst.options.use_capacity)
    j["options"]["capacity"] = nullptr;
  else if (inst.options.capacity >= 0)
    j["options"]["capacity"] = inst.options.capacity;
  else
    j["options"]["capacity"] = "auto";
  if (inst.mediator_lo.size() > 0) {
    j["mediator_set"]["type"] = "box";
    if (inst.mediator_lo.size() == 1) {
      j["mediator_set"]["lo"] = inst.mediator_lo[0];
      j["mediator_set"]["hi"] = inst.mediator_hi[0];
    } else {
      j["mediator_set"]["lo"] = vector_to_json(inst.mediator_lo);
      j["mediator_set"]["hi"] = vector_to_json(inst.mediator_hi);
    }
  }
  std::ofstream out(path);
  if (!out) throw io_error("cannot write problem file '" + path + "'");
  out << j.dump(2) << "\n";
}

ExperimentGrid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open grid file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw io_error("grid file '" + path + "': " + e.what());
  }
  ExperimentGrid grid;
  auto read = [&](const char* key) {
    std::vector<double> vals;
    for (const json& v : j.at(key)) vals.push_back(v.get<double>());
    if (vals.empty())
      throw io_error(std::string("grid '") + key + "' must be nonempty");
    return vals;
  };
  grid.alpha_values = read("alpha_values");
  grid.beta_values = read("beta_values");
  grid.gamma_values = read("gamma_values");
  grid.vary_in_unison = j.value("vary_in_unison", true);
  return grid;
}

void export_trace_csv(const MediationReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write trace file '" + path + "'");
  out << "iter,psi,grad_norm,inner_iters\n";
  out.precision(17);
  for (size_t k = 0; k < rep.psi_trace.size(); ++k) {
    out << k << ',' << rep.psi_trace[k] << ','
        << (k < rep.hypergrad_norms.size() ? rep.hypergrad_norms[k] : 0.0)
        << ','
        << (k < rep.inner_iterations.size() ? rep.inner_iterations[k] : 0)
        << '\n';
  }
}

void export_trace_json(const MediationReport& rep, const std::string& path) {
  json j;
  j["theta_final"] = vector_to_json(rep.theta_final);
  j["psi_trace"] = rep.psi_trace;
  j["hypergrad_norms"] = rep.hypergrad_norms;
  j["stepsizes"] = rep.stepsizes;
  j["inner_iterations"] = rep.inner_iterations;
  j["criticality_residual"] = rep.criticality_residual;
  j["outer_iterations"] = rep.outer_iterations;
  j["conservative_fallback_count"] = rep.conservative_fallback_count;
  j["converged"] = rep.converged;
  j["u_final"] = vector_to_json(rep.u_final);
  j["final_gap"] = rep.final_gap;
  j["nu_psi_used"] = rep.nu_psi_used;
  std::ofstream out(path);
  if (!out) throw io_error("cannot write trace file '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace teamalign
