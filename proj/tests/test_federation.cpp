#include <gtest/gtest.h>

#include "fedpg/federation.hpp"
#include "fedpg/validate.hpp"

using namespace fedpg;

namespace {

std::vector<TabularMdp> fleet_of(int n, double kappa, std::uint64_t seed, int S = 3, int A = 3,
                                 int H = 8) {
  FleetSpec spec;
  spec.n_agents = n;
  spec.n_states = S;
  spec.n_actions = A;
  spec.horizon = H;
  spec.kappa = kappa;
  spec.base_seed = seed;
  return gen_tabular_fleet(spec);
}

FedConfig config(Algo algo, int n, double beta) {
  FedConfig cfg;
  cfg.algo = algo;
  cfg.n_agents = n;
  cfg.local_steps = 4;
  cfg.rounds = 6;
  cfg.eta = 0.1;
  cfg.global_step = 0.4;
  cfg.beta = beta;
  cfg.master_seed = 1234;
  return cfg;
}

ServerState some_server(Eigen::Index d, std::uint64_t seed) {
  CounterRng rng(seed);
  ServerState s;
  s.theta = detail::random_params(d, 1.0, rng);
  s.theta_prev = s.theta + detail::random_direction(d, 0.3, rng);
  s.u = detail::random_params(d, 0.5, rng);
  s.round = 3;
  return s;
}

}  // namespace

TEST(Collapse, BetaOneLocalRoundEqualsPavgStepByStep) {
  const auto fleet = fleet_of(1, 0.0, 2);
  const SoftmaxPolicy policy(3, 3);
  const ServerState server = some_server(9, 5);
  for (int K = 1; K <= 5; ++K) {
    FedConfig cfg = config(Algo::fedsvrpg_m, 1, 1.0);
    cfg.local_steps = K;
    CounterRng a = agent_rng(cfg.master_seed, 3, 0), b = a;
    const AgentDelta ds = local_round_svrpg(fleet[0], policy, server, cfg, 0, a);
    const AgentDelta dp = local_round_pavg(fleet[0], policy, server, cfg, 0, b);
    EXPECT_EQ(ds.delta, dp.delta) << "K=" << K;
  }
}

TEST(Collapse, BetaOneRunEqualsPavg) {
  const auto c = validation::check_beta1_is_pavg(7);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Collapse, SingleAgentSingleStepIsCentralizedMomentum) {
  const auto c = validation::check_centralized_collapse(8);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Server, AggregationIdentityIsExact) {
  const auto c = validation::check_aggregation_identity(9);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Server, SumsInAgentOrderRegardlessOfArrival) {
  const ServerState server = some_server(3, 1);
  const FedConfig cfg = config(Algo::fedsvrpg_m, 3, 0.5);
  CounterRng rng(2);
  std::vector<AgentDelta> deltas;
  for (int i = 0; i < 3; ++i) deltas.push_back({i, detail::random_params(3, 1e3, rng)});
  std::vector<AgentDelta> shuffled{deltas[2], deltas[0], deltas[1]};
  const auto a = server_aggregate_and_step(deltas, server, cfg);
  const auto b = server_aggregate_and_step(shuffled, server, cfg);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.u, b.u);
  EXPECT_EQ(a.theta_prev, server.theta);
  EXPECT_EQ(a.round, server.round + 1);
}

TEST(Server, RejectsMissingOrDuplicateAgents) {
  const ServerState server = some_server(3, 1);
  const FedConfig cfg = config(Algo::fedsvrpg_m, 3, 0.5);
  const Vector z = Vector::Zero(3);
  EXPECT_THROW(server_aggregate_and_step({{0, z}, {1, z}}, server, cfg), InvalidArgument);
  EXPECT_THROW(server_aggregate_and_step({{0, z}, {1, z}, {1, z}}, server, cfg), InvalidArgument);
  EXPECT_THROW(server_aggregate_and_step({{0, z}, {1, z}, {2, Vector::Zero(4)}}, server, cfg),
               DimensionMismatch);
  Vector bad = z;
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(server_aggregate_and_step({{0, z}, {1, bad}, {2, z}}, server, cfg), RunError);
}

TEST(Server, DivergenceGuardTrips) {
  const ServerState server = some_server(3, 1);
  FedConfig cfg = config(Algo::fedsvrpg_m, 1, 0.5);
  cfg.local_steps = 1;
  cfg.divergence_limit = 10.0;
  Vector big = Vector::Constant(3, 100.0);
  EXPECT_THROW(server_aggregate_and_step({{0, big}}, server, cfg), RunError);
}

TEST(Server, LocalRoundsDoNotTouchTheBroadcast) {
  const auto fleet = fleet_of(2, 1.0, 3);
  const SoftmaxPolicy policy(3, 3);
  const ServerState server = some_server(9, 2);
  const ServerState copy = server;
  for (Algo algo : {Algo::fedsvrpg_m, Algo::fedhapg_m, Algo::pavg}) {
    const FedConfig cfg = config(algo, 2, algo == Algo::pavg ? 1.0 : 0.3);
    for (int i = 0; i < 2; ++i) {
      CounterRng rng = agent_rng(cfg.master_seed, 3, i);
      local_round(fleet[i], policy, server, cfg, i, rng);
    }
    EXPECT_EQ(server.theta, copy.theta);
    EXPECT_EQ(server.theta_prev, copy.theta_prev);
    EXPECT_EQ(server.u, copy.u);
  }
}

TEST(Config, Validation) {
  FedConfig cfg = config(Algo::pavg, 2, 0.5);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.beta = 1.0;
  EXPECT_NO_THROW(cfg.validate());
  cfg.local_steps = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = config(Algo::fedsvrpg_m, 2, 0.0);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(RunRounds, ParallelAgentsMatchSerial) {
  const auto fleet = fleet_of(5, 0.5, 4);
  const SoftmaxPolicy policy(3, 3);
  for (Algo algo : {Algo::fedsvrpg_m, Algo::fedhapg_m, Algo::pavg}) {
    const FedConfig cfg = config(algo, 5, algo == Algo::pavg ? 1.0 : 0.3);
    const RunLog a = run_rounds(fleet, policy, Vector::Zero(9), cfg, 1);
    const RunLog b = run_rounds(fleet, policy, Vector::Zero(9), cfg, 4);
    EXPECT_TRUE(validation::same_log(a, b)) << algo_name(algo);
  }
}

TEST(RunRounds, EvaluationScheduleAndSummary) {
  const auto fleet = fleet_of(3, 0.5, 5);
  const SoftmaxPolicy policy(3, 3);
  FedConfig cfg = config(Algo::fedsvrpg_m, 3, 0.25);
  cfg.rounds = 7;
  cfg.eval_every = 3;
  const RunLog log = run_rounds(fleet, policy, Vector::Zero(9), cfg, 1, 1e9);
  std::vector<int> rounds;
  for (const auto& r : log.rows) {
    rounds.push_back(r.round);
    EXPECT_TRUE(std::isfinite(r.J));
    EXPECT_TRUE(std::isfinite(r.grad_norm_sq));
  }
  EXPECT_EQ(rounds, (std::vector<int>{0, 3, 6, 7}));
  EXPECT_EQ(log.summary.final_J, log.rows.back().J);
  EXPECT_EQ(log.summary.rounds_to_eps, 0);
  EXPECT_EQ(log.summary.u0_batch, std::ceil(4.0 / (7 * 0.0625)));
  const FleetObjective at0 = fleet_objective(fleet, policy, Vector::Zero(9));
  EXPECT_EQ(log.rows.front().J, at0.J);
  EXPECT_EQ(log.summary.g0, at0.mean_agent_grad_norm_sq);
  EXPECT_EQ(log.rows.back().J, fleet_objective(fleet, policy, log.final_theta).J);
}

TEST(RunRounds, ZeroRoundsRecordsOnlyStart) {
  const auto fleet = fleet_of(2, 0.5, 6);
  FedConfig cfg = config(Algo::fedsvrpg_m, 2, 0.5);
  cfg.rounds = 0;
  const RunLog log = run_rounds(fleet, SoftmaxPolicy(3, 3), Vector::Zero(9), cfg);
  ASSERT_EQ(log.rows.size(), 1u);
  EXPECT_EQ(log.final_theta, Vector::Zero(9));
}

TEST(RunRounds, AllAlgorithmsImproveTheObjective) {
  const auto fleet = fleet_of(4, 0.5, 7, 4, 3, 10);
  const SoftmaxPolicy policy(4, 3);
  for (Algo algo : {Algo::fedsvrpg_m, Algo::fedhapg_m, Algo::pavg}) {
    FedConfig cfg = config(algo, 4, algo == Algo::pavg ? 1.0 : 0.5);
    cfg.rounds = 30;
    cfg.eta = 0.05;
    cfg.global_step = 0.2;
    cfg.eval_every = 30;
    const RunLog log = run_rounds(fleet, policy, Vector::Zero(12), cfg);
    EXPECT_GT(log.rows.back().J, log.rows.front().J + 0.05) << algo_name(algo);
  }
}

TEST(RunRounds, FleetSizeMustMatch) {
  const auto fleet = fleet_of(2, 0.5, 6);
  const FedConfig cfg = config(Algo::fedsvrpg_m, 3, 0.5);
  EXPECT_THROW(run_rounds(fleet, SoftmaxPolicy(3, 3), Vector::Zero(9), cfg), InvalidArgument);
}

TEST(RunRounds, PointMassFleetRunsWithMonteCarloEvaluation) {
  FleetSpec spec;
  spec.env_kind = EnvKind::point_mass;
  spec.n_agents = 3;
  spec.kappa = 0.5;
  spec.horizon = 10;
  spec.base_seed = 1;
  const auto fleet = gen_point_mass_fleet(spec);
  const LinearGaussianPolicy policy(0.5, 2.0);
  FedConfig cfg = config(Algo::fedsvrpg_m, 3, 0.5);
  cfg.mc_eval_batch = 200;
  cfg.clip_is = 50.0;
  const RunLog a = run_rounds(fleet, policy, Vector::Zero(2), cfg, 1);
  const RunLog b = run_rounds(fleet, policy, Vector::Zero(2), cfg, 3);
  EXPECT_TRUE(validation::same_log(a, b));
  for (const auto& r : a.rows) EXPECT_TRUE(std::isfinite(r.J));
}
