#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "envs.hpp"
#include "estimators.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace fedpg {

inline const char* algo_name(Algo a) {
  switch (a) {
    case Algo::fedsvrpg_m: return "fedsvrpg_m";
    case Algo::fedhapg_m: return "fedhapg_m";
    case Algo::pavg: return "pavg";
  }
  return "?";
}

enum class U0Init { warm, zero };

struct FedConfig {
  Algo algo = Algo::fedsvrpg_m;
  int n_agents = 1;
  int local_steps = 1;    // K
  int rounds = 1;         // R
  double eta = 0.05;      // local step size
  double global_step = 1.0;  // lambda_g
  double beta = 1.0;
  std::uint64_t master_seed = 0;
  int eval_every = 1;
  std::optional<double> clip_is;
  U0Init u0_init = U0Init::warm;
  std::optional<long long> u0_batch;  // overrides ceil(K / (R beta^2))
  double divergence_limit = 1e6;      // abort when ||theta|| exceeds this
  int mc_eval_batch = 1000;           // continuous fleets only

  void validate() const {
    require(n_agents >= 1, "FedConfig: n_agents must be >= 1");
    require(local_steps >= 1, "FedConfig: local_steps must be >= 1");
    require(rounds >= 0, "FedConfig: rounds must be >= 0");
    require(eta >= 0.0, "FedConfig: eta must be >= 0");
    require(global_step > 0.0, "FedConfig: global_step must be positive");
    require(beta > 0.0 && beta <= 1.0, "FedConfig: beta must lie in (0,1]");
    require(algo != Algo::pavg || beta == 1.0, "FedConfig: pavg requires beta = 1");
    require(eval_every >= 1, "FedConfig: eval_every must be >= 1");
    require(!clip_is || *clip_is > 0.0, "FedConfig: clip_is must be positive");
    require(!u0_batch || *u0_batch >= 1, "FedConfig: u0_batch must be >= 1");
  }
};

/// (theta_r, theta_{r-1}, u_r), the snapshot broadcast to every agent in round r.
struct ServerState {
  PolicyParams theta;
  PolicyParams theta_prev;
  Direction u;
  int round = 0;
};

inline ServerState initial_server_state(const PolicyParams& theta0, const Direction& u0) {
  require_dim("initial_server_state", theta0.size(), u0.size());
  return {theta0, theta0, u0, 0};
}

struct AgentDelta {
  int agent_id = 0;
  Direction delta;  // theta_{r,K} - theta_r
};

/// Thrown when a run leaves the finite range or trips the divergence guard.
class RunError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

inline CounterRng agent_rng(std::uint64_t master_seed, int round, int agent) {
  return make_rng(master_seed, "agent",
                  {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(agent)});
}

namespace detail {

inline void check_finite_step(const Vector& theta, int round, int k, int agent) {
  if (!theta.allFinite())
    throw RunError("non-finite local parameters at round " + std::to_string(round) +
                   ", local step " + std::to_string(k) + ", agent " + std::to_string(agent));
}

inline void check_server(const ServerState& server, Eigen::Index dim) {
  require_dim("server theta", dim, server.theta.size());
  require_dim("server theta_prev", dim, server.theta_prev.size());
  require_dim("server u", dim, server.u.size());
}

}  // namespace detail

// Local iterates are tracked as theta_{r,k} = theta_r + D_k with D_{k+1} = D_k + eta u_k,
// so the reported delta D_K equals theta_{r,K} - theta_r without a cancelling subtraction.

/// One FedSVRPG-M agent round. Per local step: tau ~ p_i(.|theta_{r,k}); g at theta_{r,k}
/// and at theta_{r-1} on the same tau; w(tau | theta_{r-1}, theta_{r,k}); momentum direction;
/// ascent step.
template <class Env, class Policy>
AgentDelta local_round_svrpg(const Env& env, const Policy& policy, const ServerState& server,
                             const FedConfig& cfg, int agent_id, CounterRng& rng) {
  detail::check_server(server, policy.dim());
  const auto anchor = policy.at(server.theta_prev);
  Direction disp = Direction::Zero(policy.dim());
  Vector theta = server.theta;
  for (int k = 0; k < cfg.local_steps; ++k) {
    const auto local = policy.at(theta);
    const auto traj = sample_trajectory_at(env, local, rng, agent_id);
    const Direction g_cur = gpomdp_grad_at(traj, local, policy.dim(), env.gamma());
    const Direction g_anchor = gpomdp_grad_at(traj, anchor, policy.dim(), env.gamma());
    const double w = is_weight_from_log(log_is_ratio_at(traj, anchor, local), cfg.clip_is);
    const Direction u = svrpg_m_direction(g_cur, g_anchor, w, server.u, cfg.beta);
    disp += cfg.eta * u;
    theta = server.theta + disp;
    detail::check_finite_step(theta, server.round, k, agent_id);
  }
  return {agent_id, std::move(disp)};
}

/// One PAvg agent round: plain GPOMDP ascent from theta_r.
template <class Env, class Policy>
AgentDelta local_round_pavg(const Env& env, const Policy& policy, const ServerState& server,
                            const FedConfig& cfg, int agent_id, CounterRng& rng) {
  detail::check_server(server, policy.dim());
  Direction disp = Direction::Zero(policy.dim());
  Vector theta = server.theta;
  for (int k = 0; k < cfg.local_steps; ++k) {
    const auto local = policy.at(theta);
    const auto traj = sample_trajectory_at(env, local, rng, agent_id);
    const Direction g = gpomdp_grad_at(traj, local, policy.dim(), env.gamma());
    disp += cfg.eta * g;
    theta = server.theta + disp;
    detail::check_finite_step(theta, server.round, k, agent_id);
  }
  return {agent_id, std::move(disp)};
}

/// One FedHAPG-M agent round. Per local step: alpha ~ U[0,1] (first draw), mixed parameters
/// theta(alpha) = alpha theta_{r-1} + (1 - alpha) theta_{r,k}, tau ~ p_i(.|theta(alpha)),
/// v = theta_{r,k} - theta_{r-1}, Hessian-aided correction and w(tau | theta_{r,k}, theta(alpha)).
template <class Env, class Policy>
AgentDelta local_round_hapg(const Env& env, const Policy& policy, const ServerState& server,
                            const FedConfig& cfg, int agent_id, CounterRng& rng) {
  detail::check_server(server, policy.dim());
  Direction disp = Direction::Zero(policy.dim());
  Vector theta = server.theta;
  for (int k = 0; k < cfg.local_steps; ++k) {
    const double alpha = rng.uniform();
    const Vector mixed = alpha * server.theta_prev + (1.0 - alpha) * theta;
    const Direction v = theta - server.theta_prev;
    const auto local = policy.at(theta);
    const auto behavior = policy.at(mixed);
    const auto traj = sample_trajectory_at(env, behavior, rng, agent_id);
    const Direction lambda = hapg_lambda_at(traj, behavior, v, policy.dim(), env.gamma());
    const double w = is_weight_from_log(log_is_ratio_at(traj, local, behavior), cfg.clip_is);
    const Direction g_cur = gpomdp_grad_at(traj, local, policy.dim(), env.gamma());
    const Direction u = hapg_direction(w, g_cur, server.u, lambda, cfg.beta);
    disp += cfg.eta * u;
    theta = server.theta + disp;
    detail::check_finite_step(theta, server.round, k, agent_id);
  }
  return {agent_id, std::move(disp)};
}

template <class Env, class Policy>
AgentDelta local_round(const Env& env, const Policy& policy, const ServerState& server,
                       const FedConfig& cfg, int agent_id, CounterRng& rng) {
  switch (cfg.algo) {
    case Algo::fedsvrpg_m: return local_round_svrpg(env, policy, server, cfg, agent_id, rng);
    case Algo::fedhapg_m: return local_round_hapg(env, policy, server, cfg, agent_id, rng);
    case Algo::pavg: return local_round_pavg(env, policy, server, cfg, agent_id, rng);
  }
  throw InvalidArgument("local_round: unknown algorithm");
}

/// u_{r+1} = (eta N K)^-1 sum_i delta_i, theta_{r+1} = theta_r + lambda_g u_{r+1}.
/// Deltas are summed in agent-id order.
inline ServerState server_aggregate_and_step(std::vector<AgentDelta> deltas,
                                             const ServerState& server, const FedConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.n_agents);
  if (deltas.size() != n)
    throw InvalidArgument("server_aggregate_and_step: expected " + std::to_string(n) +
                          " deltas, got " + std::to_string(deltas.size()));
  std::sort(deltas.begin(), deltas.end(),
            [](const AgentDelta& a, const AgentDelta& b) { return a.agent_id < b.agent_id; });
  for (std::size_t i = 0; i < n; ++i) {
    if (deltas[i].agent_id != static_cast<int>(i))
      throw InvalidArgument("server_aggregate_and_step: missing or duplicate agent " +
                            std::to_string(i));
    require_dim("server_aggregate_and_step", server.theta.size(), deltas[i].delta.size());
    if (!deltas[i].delta.allFinite())
      throw RunError("server_aggregate_and_step: non-finite delta from agent " +
                     std::to_string(i));
  }
  require(cfg.eta > 0.0, "server_aggregate_and_step: eta must be positive");
  Direction sum = deltas[0].delta;
  for (std::size_t i = 1; i < n; ++i) sum += deltas[i].delta;
  ServerState next;
  next.u = sum / (cfg.eta * static_cast<double>(cfg.n_agents) *
                  static_cast<double>(cfg.local_steps));
  next.theta = server.theta + cfg.global_step * next.u;
  next.theta_prev = server.theta;
  next.round = server.round + 1;
  if (!next.theta.allFinite() || next.theta.norm() > cfg.divergence_limit)
    throw RunError("divergence guard tripped after round " + std::to_string(server.round) +
                   " (||theta|| = " + std::to_string(next.theta.norm()) + ")");
  return next;
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

struct RunRow {
  int round = 0;
  double J = 0.0;
  double grad_norm_sq = 0.0;
  double wall_ms = 0.0;
};

struct RunSummary {
  double final_J = 0.0;
  double min_grad_norm_sq = 0.0;
  std::optional<int> rounds_to_eps;  // first evaluated round with ||grad J||^2 <= eps
  double g0 = 0.0;                   // (1/N) sum_i ||grad J_i(theta0)||^2
  double u0_batch = 0.0;
};

struct RunLog {
  std::vector<RunRow> rows;
  RunSummary summary;
  PolicyParams final_theta;
};

template <class Policy>
FleetObjective evaluate_fleet(const std::vector<TabularMdp>& fleet, const Policy& policy,
                              const PolicyParams& theta, const FedConfig&, int) {
  return fleet_objective(fleet, policy, theta);
}

template <class Policy>
FleetObjective evaluate_fleet(const std::vector<PointMassEnv>& fleet, const Policy& policy,
                              const PolicyParams& theta, const FedConfig& cfg, int round) {
  return fleet_objective_mc(fleet, policy, theta, cfg.mc_eval_batch,
                            derive_key(cfg.master_seed, "eval", {static_cast<std::uint64_t>(round)}));
}

/// Executes R synchronous rounds. Agent i in round r draws from agent_rng(seed, r, i), so the
/// log does not depend on `threads`. Rounds r with r % eval_every == 0, and round R, are
/// evaluated (exactly for tabular fleets).
template <class Env, class Policy>
RunLog run_rounds(const std::vector<Env>& fleet, const Policy& policy, const PolicyParams& theta0,
                  const FedConfig& cfg, unsigned threads = 1,
                  std::optional<double> eps = std::nullopt) {
  cfg.validate();
  require(static_cast<int>(fleet.size()) == cfg.n_agents,
          "run_rounds: fleet size does not match n_agents");
  require_dim("run_rounds", policy.dim(), theta0.size());
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  };

  RunLog log;
  Direction u0 = Direction::Zero(policy.dim());
  if (cfg.u0_init == U0Init::warm && cfg.algo != Algo::pavg && cfg.rounds > 0) {
    const long long batch =
        cfg.u0_batch ? *cfg.u0_batch : u0_batch_size(cfg.local_steps, cfg.rounds, cfg.beta);
    log.summary.u0_batch = static_cast<double>(batch);
    u0 = init_u0(fleet, policy, theta0, batch, cfg.master_seed);
  }
  ServerState server = initial_server_state(theta0, u0);

  auto record = [&](int round) {
    const FleetObjective obj = evaluate_fleet(fleet, policy, server.theta, cfg, round);
    if (round == 0) log.summary.g0 = obj.mean_agent_grad_norm_sq;
    log.rows.push_back({round, obj.J, obj.grad_norm_sq, elapsed_ms()});
  };

  record(0);
  std::vector<AgentDelta> deltas(fleet.size());
  for (int r = 0; r < cfg.rounds; ++r) {
    parallel_for(fleet.size(), threads, [&](std::size_t i) {
      CounterRng rng = agent_rng(cfg.master_seed, r, static_cast<int>(i));
      deltas[i] = local_round(fleet[i], policy, server, cfg, static_cast<int>(i), rng);
    });
    try {
      server = server_aggregate_and_step(deltas, server, cfg);
    } catch (const RunError& e) {
      throw RunError(std::string("round ") + std::to_string(r) + ": " + e.what());
    }
    if ((r + 1) % cfg.eval_every == 0 || r + 1 == cfg.rounds) record(r + 1);
  }

  log.final_theta = server.theta;
  log.summary.final_J = log.rows.back().J;
  log.summary.min_grad_norm_sq = log.rows.front().grad_norm_sq;
  for (const auto& row : log.rows) {
    log.summary.min_grad_norm_sq = std::min(log.summary.min_grad_norm_sq, row.grad_norm_sq);
    if (eps && !log.summary.rounds_to_eps && row.grad_norm_sq <= *eps)
      log.summary.rounds_to_eps = row.round;
  }
  return log;
}

}  // namespace fedpg
