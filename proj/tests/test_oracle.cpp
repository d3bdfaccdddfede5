#include <gtest/gtest.h>

#include <cmath>

#include "fedpg/oracle.hpp"
#include "fedpg/validate.hpp"

using namespace fedpg;

namespace {

// Independent value computation: propagate the state distribution with dense
// matrices and sum gamma^h E[r_h].
double value_by_matrices(const TabularMdp& m, const SoftmaxPolicy& policy, const Vector& theta) {
  const int S = m.n_states(), A = m.n_actions();
  const auto pol = policy.at(theta);
  Eigen::MatrixXd P_pi = Eigen::MatrixXd::Zero(S, S);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      r_pi[s] += pol.prob(s, a) * m.reward(s, a);
      for (int n = 0; n < S; ++n) P_pi(s, n) += pol.prob(s, a) * m.transition(s, a, n);
    }
  Eigen::RowVectorXd d(S);
  for (int s = 0; s < S; ++s) d[s] = m.init_prob(s);
  double v = 0.0, disc = 1.0;
  for (int h = 0; h < m.horizon(); ++h) {
    v += disc * d.dot(r_pi);
    d = d * P_pi;
    disc *= m.gamma();
  }
  return v;
}

}  // namespace

TEST(ExactValue, AgreesWithMatrixPropagation) {
  CounterRng rng(1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = gen_random_mdp(seed, 4, 3, 9, 0.9, 1.0);
    const SoftmaxPolicy policy(4, 3);
    const Vector theta = detail::random_params(12, 2.0, rng);
    EXPECT_NEAR(exact_value(m, policy, theta), value_by_matrices(m, policy, theta), 1e-13);
  }
}

TEST(ExactValue, AgreesWithEnumeratedReturn) {
  const auto m = gen_random_mdp(3, 3, 2, 4, 0.9, 1.0);
  const SoftmaxPolicy policy(3, 2);
  CounterRng rng(2);
  const Vector theta = detail::random_params(6, 1.0, rng);
  const double e = enumerate_expectation(
      m, policy, theta, [](const TabularTrajectory& tr) { return discounted_return(tr, 0.9); });
  EXPECT_NEAR(e, exact_value(m, policy, theta), 1e-13);
}

TEST(ExactGradient, MatchesFiniteDifferencesOnTinyMatrix) {
  const auto c = validation::check_gradient_fd_matrix(validation::tiny_matrix(41), 3, 41);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(ExactGradient, MatchesFiniteDifferencesOnLargerMdp) {
  const std::vector<TabularMdp> envs{gen_random_mdp(5, 5, 5, 20, 0.9, 1.0)};
  const auto c = validation::check_gradient_fd(envs, SoftmaxPolicy(5, 5), 5, 42);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Enumeration, ProbabilitiesSumToOne) {
  const auto c = validation::check_enumeration_mass(validation::tiny_matrix(43), 3, 43);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Enumeration, RejectsOversizedProblems) {
  const auto m = gen_random_mdp(1, 5, 5, 20, 0.9, 1.0);
  EXPECT_GT(enumeration_size(m), kEnumerationBudget);
  EXPECT_THROW(enumerate_expectation(m, SoftmaxPolicy(5, 5), Vector::Zero(25),
                                     [](const TabularTrajectory&) { return 1.0; }),
               InvalidArgument);
  EXPECT_EQ(enumeration_size(gen_random_mdp(1, 2, 3, 2, 0.9, 1.0)), 8.0 * 9.0);
}

TEST(Oracle, PointMassIsUnsupported) {
  const PointMassEnv env;
  const LinearGaussianPolicy policy(1.0, 2.0);
  EXPECT_THROW(exact_value(env, policy, Vector::Zero(2)), Unsupported);
  EXPECT_THROW(exact_gradient(env, policy, Vector::Zero(2)), Unsupported);
}

TEST(Oracle, PolicyShapeMustMatchMdp) {
  const auto m = gen_random_mdp(1, 3, 2, 3, 0.9, 1.0);
  EXPECT_THROW(exact_value(m, SoftmaxPolicy(2, 2), Vector::Zero(4)), InvalidArgument);
  EXPECT_THROW(exact_value(m, SoftmaxPolicy(3, 2), Vector::Zero(5)), InvalidArgument);
}

TEST(FleetObjective, AveragesAgentObjectives) {
  FleetSpec spec;
  spec.n_agents = 3;
  spec.n_states = 3;
  spec.n_actions = 2;
  spec.horizon = 6;
  spec.kappa = 1.0;
  spec.base_seed = 5;
  const auto fleet = gen_tabular_fleet(spec);
  const SoftmaxPolicy policy(3, 2);
  CounterRng rng(6);
  const Vector theta = detail::random_params(6, 1.0, rng);
  const FleetObjective obj = fleet_objective(fleet, policy, theta);
  double J = 0.0, g0 = 0.0;
  Vector grad = Vector::Zero(6);
  for (const auto& m : fleet) {
    J += exact_value(m, policy, theta) / 3.0;
    const Vector g = exact_gradient(m, policy, theta);
    grad += g / 3.0;
    g0 += g.squaredNorm() / 3.0;
  }
  EXPECT_NEAR(obj.J, J, 1e-14);
  EXPECT_NEAR(obj.grad_norm_sq, grad.squaredNorm(), 1e-14);
  EXPECT_NEAR(obj.mean_agent_grad_norm_sq, g0, 1e-14);
  EXPECT_GE(obj.mean_agent_grad_norm_sq, obj.grad_norm_sq);

  const FleetObjective mc = fleet_objective_mc(fleet, policy, theta, 20000, 7);
  EXPECT_NEAR(mc.J, obj.J, mc.J_err);
}

TEST(Smoothness, GradientLipschitzWithinL) {
  const auto c = validation::check_lipschitz(validation::tiny_matrix(44), 300, 44);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Constants, HandComputedValues) {
  // G = 2, M = 1, H = 4, R = 1, gamma = 0.5, W = 0.5
  const TheoryConstants c = theory_constants({2.0, 1.0}, 4, 1.0, 0.5, 0.5, 3.0);
  EXPECT_DOUBLE_EQ(c.L, 4.0 * (1.0 + 16.0) / 0.5);      // 136
  EXPECT_DOUBLE_EQ(c.L_g, 4.0 / 0.5);                     // 8
  EXPECT_DOUBLE_EQ(c.C_g, 8.0 / 0.5);                     // 16
  EXPECT_DOUBLE_EQ(c.C_w, 4.0 * (32.0 + 1.0) * 1.5);      // 198
  EXPECT_DOUBLE_EQ(c.L1_t, std::sqrt(136.0 * 136.0 + 24.0 * 198.0 * 256.0 + 6.0 * 64.0));
  EXPECT_DOUBLE_EQ(c.L2_t, std::sqrt(64.0 + 2.0 * 198.0 * 256.0));
  EXPECT_DOUBLE_EQ(c.L3_t, std::sqrt(2.0 * 198.0 * 256.0 + 128.0));
  EXPECT_DOUBLE_EQ(c.L4_t, std::sqrt(16.0 * 16.0 + 1.0) / 0.25);
  EXPECT_THROW(theory_constants({2.0, 1.0}, 4, 1.0, 1.0, 0.0, 0.0), InvalidArgument);
}

TEST(Constants, RecommendedHyperparametersHandComputed) {
  TheoryConstants c;
  c.L = 10.0;
  c.L1_t = 20.0;
  c.L2_t = 5.0;
  c.L3_t = 7.0;
  c.L4_t = 3.0;
  c.sigma_hat = 2.0;
  // beta = min(1, (N K Lb^2 D^2 / (s^4 R^2))^(1/3)) with N=2, K=4, Lb=20, D=1, R=100
  const HyperparamPlan p = recommended_hyperparams(c, 2, 4, 100, 1.0, 0.5);
  const double beta = std::cbrt(2.0 * 4.0 * 400.0 / (16.0 * 1e4));
  EXPECT_DOUBLE_EQ(p.L_bar, 20.0);
  EXPECT_DOUBLE_EQ(p.beta_rec, beta);
  EXPECT_DOUBLE_EQ(p.lambda_rec, std::min(1.0 / 480.0, std::sqrt(beta * 8.0 / (162.0 * 400.0))));
  EXPECT_EQ(p.B_rec, static_cast<long long>(std::ceil(4.0 / (100.0 * beta * beta))));
  const double bound = std::min({std::sqrt(1.0 / (0.5 * p.lambda_rec * 100.0)),
                                 std::sqrt(beta / 2.0), std::pow(beta / 8.0, 0.25)});
  EXPECT_DOUBLE_EQ(p.eta_bound, bound / (4.0 * 20.0));

  const HyperparamPlan h = recommended_hyperparams(c, 2, 4, 100, 1.0, 0.5, Algo::fedhapg_m);
  EXPECT_DOUBLE_EQ(h.L_bar, std::sqrt(2.0 * 100.0 + 4.0 * 9.0));
  EXPECT_DOUBLE_EQ(h.lambda_rec,
                   std::min(1.0 / (24.0 * h.L_bar),
                            std::sqrt(h.beta_rec * 8.0 / (72.0 * h.L_bar * h.L_bar))));
}

TEST(Constants, BetaSaturatesAtOne) {
  TheoryConstants c;
  c.L = c.L1_t = c.L2_t = c.L3_t = 100.0;
  c.sigma_hat = 0.1;
  EXPECT_EQ(recommended_hyperparams(c, 10, 16, 500, 5.0, 1.0).beta_rec, 1.0);
}

TEST(Constants, DefaultDeltaEstimate) {
  EXPECT_DOUBLE_EQ(default_delta_estimate(2, 1.0, 0.5, 0.25), 1.5 - 0.25);
  EXPECT_EQ(default_delta_estimate(2, 1.0, 0.5, 10.0), 0.0);
}

TEST(Assumptions, MeasurementsArePositiveAndDeterministic) {
  FleetSpec spec;
  spec.n_agents = 2;
  spec.n_states = 3;
  spec.n_actions = 3;
  spec.horizon = 8;
  spec.base_seed = 3;
  const auto fleet = gen_tabular_fleet(spec);
  const SoftmaxPolicy policy(3, 3);
  ProbeConfig probe;
  probe.probe_count = 10;
  probe.samples_per_probe = 100;
  CounterRng a(5), b(5);
  const auto ma = measure_assumption_constants(fleet, policy, probe, a);
  const auto mb = measure_assumption_constants(fleet, policy, probe, b);
  EXPECT_GT(ma.sigma_hat, 0.0);
  EXPECT_GT(ma.W_hat, 0.0);
  EXPECT_EQ(ma.sigma_hat, mb.sigma_hat);
  EXPECT_EQ(ma.W_hat, mb.W_hat);
}
