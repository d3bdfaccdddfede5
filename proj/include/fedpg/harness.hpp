#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include "envs.hpp"
#include "federation.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace fedpg::harness {

enum class PolicyFamily { softmax, log_linear, gaussian };

inline const char* policy_name(PolicyFamily p) {
  switch (p) {
    case PolicyFamily::softmax: return "softmax";
    case PolicyFamily::log_linear: return "log_linear";
    case PolicyFamily::gaussian: return "gaussian";
  }
  return "?";
}

/// Error in a configuration document. `where` is "source:line" or just "source".
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& where, const std::string& key, const std::string& msg)
      : InvalidArgument(where + ": " + (key.empty() ? "" : "key '" + key + "': ") + msg),
        key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ExperimentConfig {
  FleetSpec fleet;
  FedConfig fed;
  PolicyFamily policy = PolicyFamily::softmax;
  int feature_dim = 4;          // log_linear only
  double policy_sigma = 0.5;    // gaussian only
  std::optional<double> action_clip;
  std::uint64_t seed = 0;       // repeat j uses seed + j
  int repeats = 100;
  std::string output = "results.csv";
  std::vector<double> sweep_beta;
  std::vector<double> sweep_kappa;
  std::vector<int> sweep_n_agents;
  std::optional<double> eps_fosp;

  bool is_sweep() const {
    return !sweep_beta.empty() || !sweep_kappa.empty() || !sweep_n_agents.empty();
  }

  void validate() const {
    require(repeats >= 1, "ExperimentConfig: repeats must be >= 1");
    require(!output.empty(), "ExperimentConfig: output must be nonempty");
    fleet.validate();
    fed.validate();
    require(fleet.n_agents == fed.n_agents, "ExperimentConfig: n_agents mismatch");
    const bool tabular = fleet.env_kind == EnvKind::tabular;
    require(tabular == (policy != PolicyFamily::gaussian),
            "ExperimentConfig: gaussian policy requires env = point_mass and vice versa");
    for (double b : sweep_beta) {
      require(b > 0.0 && b <= 1.0, "ExperimentConfig: sweep.beta values must lie in (0,1]");
      require(fed.algo != Algo::pavg || b == 1.0, "ExperimentConfig: pavg requires beta = 1");
    }
    for (double k : sweep_kappa)
      require(k >= 0.0 && k <= 1.0, "ExperimentConfig: sweep.kappa values must lie in [0,1]");
    for (int n : sweep_n_agents) require(n >= 1, "ExperimentConfig: sweep.n_agents must be >= 1");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// Parses a flat `key = value` document. `#` starts a comment; list values are comma
/// separated. Unknown keys, duplicate keys and out-of-range values are errors that name the
/// key and the line. The only required key is `algo`.
inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  struct Entry {
    std::string value;
    int line;
  };
  std::map<std::string, Entry> kv;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where, "", "expected 'key = value'");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where, "", "empty key");
    if (value.empty()) throw ConfigError(where, key, "empty value");
    if (kv.count(key)) throw ConfigError(where, key, "duplicate key");
    kv[key] = {value, line_no};
  }

  std::map<std::string, bool> used;
  auto loc = [&](const std::string& key) { return source + ":" + std::to_string(kv.at(key).line); };
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    used[key] = true;
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second.value;
  };
  auto num = [&](const std::string& key, double lo, double hi, bool lo_open = false,
                 bool hi_open = false) -> std::optional<double> {
    auto v = get(key);
    if (!v) return std::nullopt;
    double d = 0.0;
    if (!io::parse_double(*v, d)) throw ConfigError(loc(key), key, "not a number: '" + *v + "'");
    const bool ok = (lo_open ? d > lo : d >= lo) && (hi_open ? d < hi : d <= hi);
    if (!ok || !std::isfinite(d)) {
      std::ostringstream range;
      range << "value " << *v << " out of range " << (lo_open ? "(" : "[") << lo << ", " << hi
            << (hi_open ? ")" : "]");
      throw ConfigError(loc(key), key, range.str());
    }
    return d;
  };
  auto integer = [&](const std::string& key, long long lo, long long hi) -> std::optional<long long> {
    auto v = get(key);
    if (!v) return std::nullopt;
    long long x = 0;
    if (!io::parse_int(*v, x)) throw ConfigError(loc(key), key, "not an integer: '" + *v + "'");
    if (x < lo || x > hi)
      throw ConfigError(loc(key), key,
                        "value " + *v + " out of range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
    return x;
  };
  auto boolean = [&](const std::string& key) -> std::optional<bool> {
    auto v = get(key);
    if (!v) return std::nullopt;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(loc(key), key, "expected true or false, got '" + *v + "'");
  };
  auto word = [&](const std::string& key, std::initializer_list<const char*> allowed)
      -> std::optional<std::string> {
    auto v = get(key);
    if (!v) return std::nullopt;
    for (const char* a : allowed)
      if (*v == a) return v;
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : "|") + a;
    throw ConfigError(loc(key), key, "expected one of " + list + ", got '" + *v + "'");
  };
  auto num_list = [&](const std::string& key, double lo, double hi,
                      bool lo_open) -> std::vector<double> {
    auto v = get(key);
    if (!v) return {};
    std::vector<double> out;
    for (const auto& item : detail::split_list(*v)) {
      double d = 0.0;
      if (!io::parse_double(item, d))
        throw ConfigError(loc(key), key, "not a number: '" + item + "'");
      if (!((lo_open ? d > lo : d >= lo) && d <= hi))
        throw ConfigError(loc(key), key, "value " + item + " out of range");
      out.push_back(d);
    }
    if (out.empty()) throw ConfigError(loc(key), key, "empty list");
    return out;
  };

  ExperimentConfig cfg;
  const auto algo = word("algo", {"fedsvrpg_m", "fedhapg_m", "pavg"});
  if (!algo) throw ConfigError(source, "algo", "missing required key");
  cfg.fed.algo = *algo == "pavg"        ? Algo::pavg
                 : *algo == "fedhapg_m" ? Algo::fedhapg_m
                                        : Algo::fedsvrpg_m;

  const auto env = word("env", {"tabular", "point_mass"});
  cfg.fleet.env_kind = (env && *env == "point_mass") ? EnvKind::point_mass : EnvKind::tabular;
  const bool tabular = cfg.fleet.env_kind == EnvKind::tabular;
  cfg.policy = tabular ? PolicyFamily::softmax : PolicyFamily::gaussian;
  if (auto p = word("policy", {"softmax", "log_linear", "gaussian"}))
    cfg.policy = *p == "gaussian"     ? PolicyFamily::gaussian
                 : *p == "log_linear" ? PolicyFamily::log_linear
                                      : PolicyFamily::softmax;
  if ((cfg.policy == PolicyFamily::gaussian) == tabular)
    throw ConfigError(loc("policy"), "policy",
                      tabular ? "tabular env needs softmax or log_linear"
                              : "point_mass env needs gaussian");

  const int n_agents = static_cast<int>(integer("n_agents", 1, 100000).value_or(20));
  cfg.fleet.n_agents = cfg.fed.n_agents = n_agents;
  cfg.fleet.n_states = static_cast<int>(integer("n_states", 1, 100000).value_or(5));
  cfg.fleet.n_actions = static_cast<int>(integer("n_actions", 1, 100000).value_or(5));
  cfg.fleet.horizon = static_cast<int>(integer("horizon", 1, 1000000).value_or(50));
  cfg.fleet.gamma = num("gamma", 0.0, 1.0, true, true).value_or(0.9);
  cfg.fleet.r_max = num("r_max", 0.0, 1e300, true).value_or(1.0);
  cfg.fleet.kappa = num("kappa", 0.0, 1.0).value_or(0.0);
  cfg.fleet.perturb_rewards = boolean("perturb_rewards").value_or(false);
  cfg.fleet.bernoulli_kernel = boolean("bernoulli_kernel").value_or(false);
  cfg.fleet.base_goal = num("base_goal", -1e6, 1e6).value_or(cfg.fleet.base_goal);
  cfg.fleet.goal_spread = num("goal_spread", 0.0, 1e6).value_or(cfg.fleet.goal_spread);
  cfg.fleet.dynamics_gain = num("dynamics_gain", -1e6, 1e6).value_or(cfg.fleet.dynamics_gain);
  cfg.fleet.noise_std = num("noise_std", 0.0, 1e6).value_or(cfg.fleet.noise_std);
  cfg.fleet.init_std = num("init_std", 0.0, 1e6).value_or(cfg.fleet.init_std);

  cfg.feature_dim = static_cast<int>(integer("feature_dim", 1, 100000).value_or(4));
  cfg.policy_sigma = num("policy_sigma", 0.0, 1e6, true).value_or(0.5);
  cfg.action_clip = num("action_clip", 0.0, 1e300, true);
  if (!cfg.action_clip && cfg.policy == PolicyFamily::gaussian)
    cfg.action_clip =
        3.0 * cfg.policy_sigma + std::abs(cfg.fleet.base_goal) + cfg.fleet.goal_spread;

  cfg.fed.local_steps = static_cast<int>(integer("local_steps", 1, 1000000).value_or(32));
  cfg.fed.rounds = static_cast<int>(integer("rounds", 0, 100000000).value_or(100));
  cfg.fed.eta = num("eta", 0.0, 1e300, true).value_or(0.05);
  cfg.fed.global_step = num("global_step", 0.0, 1e300, true)
                            .value_or(cfg.fed.eta * static_cast<double>(cfg.fed.local_steps));
  const double beta_default = cfg.fed.algo == Algo::pavg ? 1.0 : 0.1;
  cfg.fed.beta = num("beta", 0.0, 1.0, true).value_or(beta_default);
  if (cfg.fed.algo == Algo::pavg && cfg.fed.beta != 1.0)
    throw ConfigError(loc("beta"), "beta", "conflicts with algo = pavg, which forces beta = 1");
  cfg.fed.eval_every = static_cast<int>(integer("eval_every", 1, 100000000).value_or(10));
  cfg.fed.clip_is = num("clip_is", 0.0, 1e300, true);
  if (auto u0 = word("u0", {"warm", "zero"})) cfg.fed.u0_init = *u0 == "zero" ? U0Init::zero : U0Init::warm;
  if (auto b = integer("u0_batch", 1, 1000000000LL)) cfg.fed.u0_batch = *b;
  cfg.fed.mc_eval_batch = static_cast<int>(integer("mc_eval_batch", 1, 100000000).value_or(1000));

  cfg.seed = static_cast<std::uint64_t>(integer("seed", 0, (1LL << 62)).value_or(0));
  cfg.repeats = static_cast<int>(integer("repeats", 1, 100000000).value_or(100));
  cfg.output = get("output").value_or("results.csv");
  cfg.eps_fosp = num("eps_fosp", 0.0, 1e300, true);

  cfg.sweep_beta = num_list("sweep.beta", 0.0, 1.0, true);
  if (cfg.fed.algo == Algo::pavg)
    for (double b : cfg.sweep_beta)
      if (b != 1.0)
        throw ConfigError(loc("sweep.beta"), "sweep.beta",
                          "conflicts with algo = pavg, which forces beta = 1");
  cfg.sweep_kappa = num_list("sweep.kappa", 0.0, 1.0, false);
  for (double n : num_list("sweep.n_agents", 1.0, 1e5, false)) {
    if (n != std::floor(n))
      throw ConfigError(loc("sweep.n_agents"), "sweep.n_agents", "values must be integers");
    cfg.sweep_n_agents.push_back(static_cast<int>(n));
  }

  for (const auto& [key, entry] : kv)
    if (!used.count(key))
      throw ConfigError(source + ":" + std::to_string(entry.line), key, "unknown key");
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(source, "", e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text,
                                            const std::string& source = "<config>") {
  std::istringstream in(text);
  return parse_config(in, source);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "", "cannot open file");
  return parse_config(in, path);
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct Cell {
  double beta = 1.0;
  double kappa = 0.0;
  int n_agents = 1;
};

struct RunRecord {
  int run_id = 0;
  Cell cell;
  std::uint64_t seed = 0;
  RunLog log;
};

/// The per-repeat seed; fleets and run streams of repeat j are keyed by it, so every cell of
/// a sweep sees the same environments for the same j.
inline std::uint64_t repeat_seed(const ExperimentConfig& cfg, int repeat) {
  return cfg.seed + static_cast<std::uint64_t>(repeat);
}

inline std::uint64_t master_seed_for(std::uint64_t seed) { return derive_key(seed, "master"); }

/// Runs one repeat of one cell. Agents within a round use `agent_threads` workers.
inline RunLog run_single(const ExperimentConfig& cfg, const Cell& cell, std::uint64_t seed,
                         unsigned agent_threads = 1) {
  FleetSpec spec = cfg.fleet;
  spec.n_agents = cell.n_agents;
  spec.kappa = cell.kappa;
  spec.base_seed = seed;
  FedConfig fed = cfg.fed;
  fed.n_agents = cell.n_agents;
  fed.beta = cell.beta;
  fed.master_seed = master_seed_for(seed);

  if (spec.env_kind == EnvKind::point_mass) {
    const LinearGaussianPolicy policy(cfg.policy_sigma, cfg.action_clip);
    return run_rounds(gen_point_mass_fleet(spec), policy, PolicyParams::Zero(policy.dim()), fed,
                      agent_threads, cfg.eps_fosp);
  }
  const auto fleet = gen_tabular_fleet(spec);
  if (cfg.policy == PolicyFamily::log_linear) {
    const auto policy = LogLinearPolicy::random(spec.n_states, spec.n_actions, cfg.feature_dim,
                                                derive_key(seed, "features"));
    return run_rounds(fleet, policy, PolicyParams::Zero(policy.dim()), fed, agent_threads,
                      cfg.eps_fosp);
  }
  const SoftmaxPolicy policy(spec.n_states, spec.n_actions);
  return run_rounds(fleet, policy, PolicyParams::Zero(policy.dim()), fed, agent_threads,
                    cfg.eps_fosp);
}

inline std::vector<Cell> sweep_cells(const ExperimentConfig& cfg) {
  const std::vector<double> betas =
      cfg.sweep_beta.empty() ? std::vector<double>{cfg.fed.beta} : cfg.sweep_beta;
  const std::vector<double> kappas =
      cfg.sweep_kappa.empty() ? std::vector<double>{cfg.fleet.kappa} : cfg.sweep_kappa;
  const std::vector<int> ns =
      cfg.sweep_n_agents.empty() ? std::vector<int>{cfg.fleet.n_agents} : cfg.sweep_n_agents;
  std::vector<Cell> cells;
  for (double b : betas)
    for (double k : kappas)
      for (int n : ns) cells.push_back({b, k, n});
  return cells;
}

/// Thrown when a run fails; carries the run id.
class ExperimentError : public RunError {
 public:
  ExperimentError(int run_id, const std::string& what)
      : RunError("run " + std::to_string(run_id) + ": " + what), run_id_(run_id) {}
  int run_id() const { return run_id_; }

 private:
  int run_id_;
};

/// Runs every (cell, repeat) pair; run_id = cell_index * repeats + repeat. Jobs are spread
/// over `threads` workers; a lone job gives its workers to the agents instead. Results are
/// independent of `threads`.
inline std::vector<RunRecord> run_all(const ExperimentConfig& cfg, const std::vector<Cell>& cells,
                                      unsigned threads = 1) {
  cfg.validate();
  const std::size_t jobs = cells.size() * static_cast<std::size_t>(cfg.repeats);
  std::vector<RunRecord> out(jobs);
  const unsigned agent_threads = jobs == 1 ? threads : 1;
  parallel_for(jobs, jobs == 1 ? 1 : threads, [&](std::size_t j) {
    const std::size_t c = j / static_cast<std::size_t>(cfg.repeats);
    const int rep = static_cast<int>(j % static_cast<std::size_t>(cfg.repeats));
    RunRecord& rec = out[j];
    rec.run_id = static_cast<int>(j);
    rec.cell = cells[c];
    rec.seed = repeat_seed(cfg, rep);
    try {
      rec.log = run_single(cfg, rec.cell, rec.seed, agent_threads);
    } catch (const std::exception& e) {
      throw ExperimentError(rec.run_id, e.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "run_id,algo,beta,kappa,n_agents,local_steps,rounds,seed,round,J_exact,grad_norm_sq,wall_ms";
inline constexpr const char* kAggregateHeader =
    "algo,beta,kappa,n_agents,local_steps,rounds,repeats,mean_final_J,stderr_final_J";

inline std::string format_rows(const ExperimentConfig& cfg, const std::vector<RunRecord>& runs) {
  std::string s = std::string(kCsvHeader) + "\n";
  for (const auto& r : runs) {
    for (const auto& row : r.log.rows) {
      s += std::to_string(r.run_id) + "," + algo_name(cfg.fed.algo) + "," +
           io::format_double(r.cell.beta) + "," + io::format_double(r.cell.kappa) + "," +
           std::to_string(r.cell.n_agents) + "," + std::to_string(cfg.fed.local_steps) + "," +
           std::to_string(cfg.fed.rounds) + "," + std::to_string(r.seed) + "," +
           std::to_string(row.round) + "," + io::format_double(row.J) + "," +
           io::format_double(row.grad_norm_sq) + "," + io::format_double(row.wall_ms) + "\n";
    }
  }
  return s;
}

struct CellStats {
  Cell cell;
  int count = 0;
  double mean = 0.0;
  double sem = 0.0;
};

/// Mean and standard error (sample sd / sqrt(n)) of final J per cell, in cell order.
inline std::vector<CellStats> aggregate(const std::vector<Cell>& cells,
                                        const std::vector<RunRecord>& runs, int repeats) {
  std::vector<CellStats> out;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellStats st;
    st.cell = cells[c];
    std::vector<double> xs;
    for (int j = 0; j < repeats; ++j)
      xs.push_back(runs[c * static_cast<std::size_t>(repeats) + j].log.summary.final_J);
    st.count = static_cast<int>(xs.size());
    double sum = 0.0;
    for (double x : xs) sum += x;
    st.mean = sum / st.count;
    if (st.count > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - st.mean) * (x - st.mean);
      st.sem = std::sqrt(ss / (st.count - 1)) / std::sqrt(static_cast<double>(st.count));
    }
    out.push_back(st);
  }
  return out;
}

inline std::string format_aggregate(const ExperimentConfig& cfg,
                                    const std::vector<CellStats>& stats) {
  std::string s = std::string(kAggregateHeader) + "\n";
  for (const auto& st : stats)
    s += std::string(algo_name(cfg.fed.algo)) + "," + io::format_double(st.cell.beta) + "," +
         io::format_double(st.cell.kappa) + "," + std::to_string(st.cell.n_agents) + "," +
         std::to_string(cfg.fed.local_steps) + "," + std::to_string(cfg.fed.rounds) + "," +
         std::to_string(st.count) + "," + io::format_double(st.mean) + "," +
         io::format_double(st.sem) + "\n";
  return s;
}

/// Writes via a temporary file in the same directory and renames it into place.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path() && !fs::is_directory(target.parent_path()))
    throw RunError("cannot write '" + path + "': directory does not exist");
  const fs::path tmp = target.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw RunError("cannot write '" + path + "'");
    os << content;
    os.flush();
    if (!os) throw RunError("write failed for '" + path + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw RunError("cannot move output into '" + path + "': " + ec.message());
  }
}

/// Aggregate file path: "<stem>_aggregate<ext>" beside the raw output.
inline std::string aggregate_path(const std::string& output) {
  const std::filesystem::path p(output);
  return (p.parent_path() / (p.stem().string() + "_aggregate" + p.extension().string())).string();
}

struct ExperimentResult {
  std::vector<Cell> cells;
  std::vector<RunRecord> runs;
  std::vector<CellStats> stats;
};

/// Single-cell experiment: raw CSV at cfg.output.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned threads = 1) {
  ExperimentResult res;
  res.cells = {Cell{cfg.fed.beta, cfg.fleet.kappa, cfg.fleet.n_agents}};
  res.runs = run_all(cfg, res.cells, threads);
  write_file_atomic(cfg.output, format_rows(cfg, res.runs));
  return res;
}

/// Cross product of the sweep axes times repeats: raw CSV at cfg.output and per-cell final-J
/// statistics at aggregate_path(cfg.output).
inline ExperimentResult run_sweep(const ExperimentConfig& cfg, unsigned threads = 1) {
  ExperimentResult res;
  res.cells = sweep_cells(cfg);
  res.runs = run_all(cfg, res.cells, threads);
  res.stats = aggregate(res.cells, res.runs, cfg.repeats);
  write_file_atomic(cfg.output, format_rows(cfg, res.runs));
  write_file_atomic(aggregate_path(cfg.output), format_aggregate(cfg, res.stats));
  return res;
}

}  // namespace fedpg::harness
