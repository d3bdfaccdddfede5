// fedpg: command-line front end for running, sweeping and validating federated
// policy-gradient experiments.
//
// Exit codes: 0 success, 1 configuration error, 2 run failure, 3 validation failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedpg/harness.hpp"
#include "fedpg/oracle.hpp"
#include "fedpg/validate.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRun = 2;
constexpr int kExitValidation = 3;

unsigned resolve_threads(std::optional<unsigned> flag) {
  if (flag) return std::max(1u, *flag);
  if (const char* env = std::getenv("FEDPG_THREADS")) {
    unsigned n = 0;
    if (fedpg::io::parse_int(env, n) && n >= 1) return n;
    std::cerr << "warning: ignoring invalid FEDPG_THREADS='" << env << "'\n";
  }
  return 1;
}

fedpg::harness::ExperimentConfig load(const std::string& path, std::optional<std::uint64_t> seed,
                                      const std::string& out) {
  auto cfg = fedpg::harness::load_config(path);
  if (seed) cfg.seed = *seed;
  if (!out.empty()) cfg.output = out;
  return cfg;
}

void print_constants(const fedpg::harness::ExperimentConfig& cfg) {
  using namespace fedpg;
  if (cfg.fleet.env_kind != EnvKind::tabular)
    throw Unsupported("constants: only tabular configurations are supported");
  FleetSpec spec = cfg.fleet;
  spec.base_seed = harness::repeat_seed(cfg, 0);
  const auto fleet = gen_tabular_fleet(spec);

  auto report = [&](const auto& policy) {
    const PolicyParams theta0 = PolicyParams::Zero(policy.dim());
    CounterRng rng = make_rng(spec.base_seed, "constants");
    const AssumptionMeasurement m = measure_assumption_constants(fleet, policy, ProbeConfig{}, rng);
    const TheoryConstants c = theory_constants(policy.bounds(), spec.horizon, spec.r_max,
                                               spec.gamma, m.W_hat, m.sigma_hat);
    const FleetObjective obj = fleet_objective(fleet, policy, theta0);
    const double delta = default_delta_estimate(spec.horizon, spec.r_max, spec.gamma, obj.J);
    const HyperparamPlan plan =
        recommended_hyperparams(c, cfg.fed.n_agents, cfg.fed.local_steps,
                                std::max(1, cfg.fed.rounds), delta,
                                obj.mean_agent_grad_norm_sq, cfg.fed.algo);
    auto line = [](const char* k, double v) {
      std::cout << k << " = " << io::format_double(v) << '\n';
    };
    std::cout << "policy = " << harness::policy_name(cfg.policy) << '\n';
    line("G", c.G);
    line("M", c.M);
    line("sigma_hat", c.sigma_hat);
    line("W_hat", c.W_hat);
    line("L", c.L);
    line("L_g", c.L_g);
    line("C_g", c.C_g);
    line("C_w", c.C_w);
    line("L1_tilde", c.L1_t);
    line("L2_tilde", c.L2_t);
    line("L3_tilde", c.L3_t);
    line("L4_tilde", c.L4_t);
    line("J0", obj.J);
    line("G0", obj.mean_agent_grad_norm_sq);
    line("delta_est", delta);
    line("L_bar", plan.L_bar);
    line("beta_rec", plan.beta_rec);
    line("lambda_rec", plan.lambda_rec);
    std::cout << "B_rec = " << plan.B_rec << '\n';
    line("eta_bound", plan.eta_bound);
  };
  if (cfg.policy == harness::PolicyFamily::log_linear)
    report(LogLinearPolicy::random(spec.n_states, spec.n_actions, cfg.feature_dim,
                                   derive_key(spec.base_seed, "features")));
  else
    report(SoftmaxPolicy(spec.n_states, spec.n_actions));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated policy-gradient simulator"};
  app.require_subcommand(1);

  std::string config_path, out_path, level = "quick";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> parallel;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "experiment config file");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
  };
  auto* run = app.add_subcommand("run", "run one configuration for `repeats` seeds");
  add_common(run, true);
  run->add_option("--out", out_path, "override the output CSV path");
  run->add_option("--parallel", parallel, "worker threads (default: FEDPG_THREADS or 1)");
  auto* sweep = app.add_subcommand("sweep", "run the cross product of the sweep axes");
  add_common(sweep, true);
  sweep->add_option("--out", out_path, "override the raw output CSV path");
  sweep->add_option("--parallel", parallel, "worker threads (default: FEDPG_THREADS or 1)");
  auto* validate = app.add_subcommand("validate", "run the identity and bound checks");
  validate->add_option("--level", level, "quick or full")
      ->check(CLI::IsMember({"quick", "full"}));
  validate->add_option("--seed", seed, "seed for the randomized probes");
  auto* constants = app.add_subcommand("constants", "print theory constants and hyperparameters");
  add_common(constants, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (validate->parsed()) {
    const auto lvl = level == "full" ? fedpg::validation::Level::full
                                     : fedpg::validation::Level::quick;
    try {
      const auto checks = fedpg::validation::run_checks(lvl, seed.value_or(2024));
      fedpg::validation::print_report(std::cout, checks);
      return fedpg::validation::all_pass(checks) ? 0 : kExitValidation;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitValidation;
    }
  }

  fedpg::harness::ExperimentConfig cfg;
  try {
    cfg = load(config_path, seed, out_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const unsigned threads = resolve_threads(parallel);
    if (constants->parsed()) {
      print_constants(cfg);
    } else if (run->parsed()) {
      const auto res = fedpg::harness::run_experiment(cfg, threads);
      std::cout << "wrote " << res.runs.size() << " runs to " << cfg.output << '\n';
    } else {
      const auto res = fedpg::harness::run_sweep(cfg, threads);
      std::cout << "wrote " << res.runs.size() << " runs to " << cfg.output << " and "
                << res.stats.size() << " cells to " << fedpg::harness::aggregate_path(cfg.output)
                << '\n';
      for (const auto& st : res.stats)
        std::cout << "beta=" << st.cell.beta << " kappa=" << st.cell.kappa
                  << " n_agents=" << st.cell.n_agents << " final_J=" << st.mean << " +- "
                  << st.sem << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitRun;
  }
  return 0;
}
