#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "envs.hpp"
#include "estimators.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace fedpg {

// ---------------------------------------------------------------------------
// Exact value and gradient of a finite-horizon tabular MDP
// ---------------------------------------------------------------------------

namespace detail {

// d_h(s) for h = 0..H-1, row-major [h * S + s].
template <class Frozen>
std::vector<double> state_distributions(const TabularMdp& mdp, const Frozen& pol) {
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  const int H = mdp.horizon();
  std::vector<double> d(static_cast<std::size_t>(H) * S, 0.0);
  for (int s = 0; s < S; ++s) d[s] = mdp.init_prob(s);
  for (int h = 0; h + 1 < H; ++h) {
    const double* cur = &d[static_cast<std::size_t>(h) * S];
    double* next = &d[static_cast<std::size_t>(h + 1) * S];
    for (int s = 0; s < S; ++s) {
      if (cur[s] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double m = cur[s] * pol.prob(s, a);
        const double* row = mdp.transition_row(s, a);
        for (int n = 0; n < S; ++n) next[n] += m * row[n];
      }
    }
  }
  return d;
}

template <class Policy>
void check_tabular_policy(const TabularMdp& mdp, const Policy& policy, const PolicyParams& p) {
  require(policy.n_states() == mdp.n_states() && policy.n_actions() == mdp.n_actions(),
          "oracle: policy and MDP disagree on state/action counts");
  require_dim("oracle", policy.dim(), p.size());
}

}  // namespace detail

/// J = sum_{h<H} gamma^h sum_{s,a} d_h(s) pi(a|s) R(s,a), d_0 = rho.
template <class Policy>
double exact_value(const TabularMdp& mdp, const Policy& policy, const PolicyParams& params) {
  detail::check_tabular_policy(mdp, policy, params);
  const auto pol = policy.at(params);
  const auto d = detail::state_distributions(mdp, pol);
  const int S = mdp.n_states();
  double J = 0.0;
  double disc = 1.0;
  for (int h = 0; h < mdp.horizon(); ++h) {
    double step = 0.0;
    for (int s = 0; s < S; ++s) {
      const double ds = d[static_cast<std::size_t>(h) * S + s];
      if (ds == 0.0) continue;
      for (int a = 0; a < mdp.n_actions(); ++a) step += ds * pol.prob(s, a) * mdp.reward(s, a);
    }
    J += disc * step;
    disc *= mdp.gamma();
  }
  return J;
}

/// grad J = sum_t gamma^t sum_{s,a} d_t(s) pi(a|s) Q_t(s,a) score(s,a), with the
/// finite-horizon action values Q_t computed by a backward pass.
template <class Policy>
Direction exact_gradient(const TabularMdp& mdp, const Policy& policy,
                         const PolicyParams& params) {
  detail::check_tabular_policy(mdp, policy, params);
  const auto pol = policy.at(params);
  const auto d = detail::state_distributions(mdp, pol);
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  const int H = mdp.horizon();

  std::vector<double> disc(static_cast<std::size_t>(H));
  disc[0] = 1.0;
  for (int h = 1; h < H; ++h) disc[h] = disc[h - 1] * mdp.gamma();

  Direction grad = Direction::Zero(policy.dim());
  std::vector<double> v_next(static_cast<std::size_t>(S), 0.0);
  std::vector<double> v_cur(static_cast<std::size_t>(S));
  std::vector<double> q(static_cast<std::size_t>(A));
  for (int t = H - 1; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) {
        const double* row = mdp.transition_row(s, a);
        double cont = 0.0;
        for (int n = 0; n < S; ++n) cont += row[n] * v_next[n];
        q[a] = mdp.reward(s, a) + mdp.gamma() * cont;
        v += pol.prob(s, a) * q[a];
      }
      v_cur[s] = v;
      const double ds = d[static_cast<std::size_t>(t) * S + s];
      if (ds == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double c = disc[t] * ds * pol.prob(s, a) * q[a];
        if (c != 0.0) pol.add_score(s, a, c, grad);
      }
    }
    std::swap(v_cur, v_next);
  }
  return grad;
}

inline double exact_value(const PointMassEnv&, const LinearGaussianPolicy&, const PolicyParams&) {
  throw Unsupported("exact_value: continuous environments have no exact oracle");
}
inline Direction exact_gradient(const PointMassEnv&, const LinearGaussianPolicy&,
                                const PolicyParams&) {
  throw Unsupported("exact_gradient: continuous environments have no exact oracle");
}

// ---------------------------------------------------------------------------
// Brute-force trajectory enumeration
// ---------------------------------------------------------------------------

inline constexpr double kEnumerationBudget = 1e6;

/// Number of (s_0, a_0, ..., s_H) sequences: S^(H+1) * A^H.
inline double enumeration_size(const TabularMdp& mdp) {
  return std::pow(static_cast<double>(mdp.n_states()), mdp.horizon() + 1) *
         std::pow(static_cast<double>(mdp.n_actions()), mdp.horizon());
}

/// sum over all length-H trajectories of p(tau | theta) * f(tau), with
/// p(tau | theta) = rho(s_0) prod_h pi(a_h|s_h) P(s_{h+1}|s_h,a_h). The final state s_H
/// is summed out analytically since no functional depends on it. Zero-probability
/// prefixes are skipped.
template <class Policy, class F>
auto enumerate_expectation(const TabularMdp& mdp, const Policy& policy,
                           const PolicyParams& params, F&& f) {
  detail::check_tabular_policy(mdp, policy, params);
  if (enumeration_size(mdp) > kEnumerationBudget)
    throw InvalidArgument("enumerate_expectation: trajectory budget of 1e6 exceeded");
  using Result = std::decay_t<decltype(f(std::declval<const TabularTrajectory&>()))>;
  const auto pol = policy.at(params);
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  const int H = mdp.horizon();

  std::optional<Result> acc;
  TabularTrajectory traj;
  traj.steps.resize(static_cast<std::size_t>(H));

  auto visit = [&](auto&& self, int h, int s, double prob) -> void {
    for (int a = 0; a < A; ++a) {
      const double pa = prob * pol.prob(s, a);
      if (pa == 0.0) continue;
      traj.steps[h] = {s, a, mdp.reward(s, a)};
      if (h + 1 == H) {
        if (acc) *acc += pa * f(std::as_const(traj));
        else acc = pa * f(std::as_const(traj));
        continue;
      }
      for (int n = 0; n < S; ++n) {
        const double pn = pa * mdp.transition(s, a, n);
        if (pn == 0.0) continue;
        self(self, h + 1, n, pn);
      }
    }
  };
  for (int s = 0; s < S; ++s) {
    if (mdp.init_prob(s) == 0.0) continue;
    visit(visit, 0, s, mdp.init_prob(s));
  }
  if (!acc) throw NumericalError("enumerate_expectation: no trajectory has positive probability");
  return Result(*acc);
}

// ---------------------------------------------------------------------------
// Fleet objective
// ---------------------------------------------------------------------------

struct FleetObjective {
  double J = 0.0;             // (1/N) sum_i J_i
  double grad_norm_sq = 0.0;  // ||(1/N) sum_i grad J_i||^2
  double mean_agent_grad_norm_sq = 0.0;  // (1/N) sum_i ||grad J_i||^2 (G0 at theta0)
  Direction grad;
  double J_err = 0.0;  // 3-sigma Monte-Carlo error bar; 0 for exact evaluation
};

template <class Policy>
FleetObjective fleet_objective(const std::vector<TabularMdp>& fleet, const Policy& policy,
                               const PolicyParams& params) {
  require(!fleet.empty(), "fleet_objective: empty fleet");
  FleetObjective out;
  out.grad = Direction::Zero(policy.dim());
  for (const auto& mdp : fleet) {
    out.J += exact_value(mdp, policy, params);
    const Direction g = exact_gradient(mdp, policy, params);
    out.mean_agent_grad_norm_sq += g.squaredNorm();
    out.grad += g;
  }
  const double n = static_cast<double>(fleet.size());
  out.J /= n;
  out.grad /= n;
  out.mean_agent_grad_norm_sq /= n;
  out.grad_norm_sq = out.grad.squaredNorm();
  return out;
}

/// Monte-Carlo fallback for continuous fleets: `batch` trajectories per agent from
/// make_rng(seed, "eval", {i}). The gradient is the batch-mean GPOMDP estimate.
template <class Env, class Policy>
FleetObjective fleet_objective_mc(const std::vector<Env>& fleet, const Policy& policy,
                                  const PolicyParams& params, int batch, std::uint64_t seed) {
  require(!fleet.empty(), "fleet_objective_mc: empty fleet");
  require(batch >= 2, "fleet_objective_mc: batch must be >= 2");
  const auto pol = policy.at(params);
  FleetObjective out;
  out.grad = Direction::Zero(policy.dim());
  double var_sum = 0.0;
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    CounterRng rng = make_rng(seed, "eval", {static_cast<std::uint64_t>(i)});
    double sum = 0.0, sumsq = 0.0;
    Direction g = Direction::Zero(policy.dim());
    for (int b = 0; b < batch; ++b) {
      const auto traj = sample_trajectory_at(fleet[i], pol, rng, static_cast<int>(i));
      const double ret = discounted_return(traj, fleet[i].gamma());
      sum += ret;
      sumsq += ret * ret;
      g += gpomdp_grad_at(traj, pol, policy.dim(), fleet[i].gamma());
    }
    const double mean = sum / batch;
    var_sum += std::max(0.0, (sumsq / batch - mean * mean)) * batch / (batch - 1.0) / batch;
    out.J += mean;
    g /= batch;
    out.mean_agent_grad_norm_sq += g.squaredNorm();
    out.grad += g;
  }
  const double n = static_cast<double>(fleet.size());
  out.J /= n;
  out.grad /= n;
  out.mean_agent_grad_norm_sq /= n;
  out.grad_norm_sq = out.grad.squaredNorm();
  out.J_err = 3.0 * std::sqrt(var_sum) / n;
  return out;
}

// ---------------------------------------------------------------------------
// Theory constants and recommended hyperparameters
// ---------------------------------------------------------------------------

struct TheoryConstants {
  double G = 0, M = 0;
  double W_hat = 0, sigma_hat = 0;
  double L = 0, L_g = 0, C_g = 0, C_w = 0;
  double L1_t = 0, L2_t = 0, L3_t = 0, L4_t = 0;
  int horizon = 1;
  double r_max = 1, gamma = 0.5;
};

/// Smoothness and boundedness constants of the policy-gradient problem:
///   L   = H R (M + H G^2) / (1 - gamma)      L_g = H M R / (1 - gamma)
///   C_g = H G R / (1 - gamma)                C_w = H (2 H G^2 + M) (W + 1)
///   L1~^2 = L^2 + 24 C_w C_g^2 + 6 L_g^2     L2~^2 = L_g^2 + 2 C_w C_g^2
///   L3~^2 = 2 C_w C_g^2 + 2 L_g^2            L4~^2 = (H^2 G^4 R^2 + M^2 R^2) / (1 - gamma)^4
inline TheoryConstants theory_constants(PolicyBounds bounds, int horizon, double r_max,
                                        double gamma, double measured_W,
                                        double measured_sigma) {
  require(gamma > 0.0 && gamma < 1.0, "theory_constants: gamma must lie in (0,1)");
  require(horizon >= 1 && r_max > 0.0, "theory_constants: bad horizon or r_max");
  require(measured_W >= 0.0 && measured_sigma >= 0.0, "theory_constants: negative measurement");
  TheoryConstants c;
  const double H = horizon, G = bounds.G, M = bounds.M, R = r_max, omg = 1.0 - gamma;
  c.G = G;
  c.M = M;
  c.W_hat = measured_W;
  c.sigma_hat = measured_sigma;
  c.horizon = horizon;
  c.r_max = r_max;
  c.gamma = gamma;
  c.L = H * R * (M + H * G * G) / omg;
  c.L_g = H * M * R / omg;
  c.C_g = H * G * R / omg;
  c.C_w = H * (2.0 * H * G * G + M) * (measured_W + 1.0);
  const double cwcg = c.C_w * c.C_g * c.C_g;
  c.L1_t = std::sqrt(c.L * c.L + 24.0 * cwcg + 6.0 * c.L_g * c.L_g);
  c.L2_t = std::sqrt(c.L_g * c.L_g + 2.0 * cwcg);
  c.L3_t = std::sqrt(2.0 * cwcg + 2.0 * c.L_g * c.L_g);
  c.L4_t = std::sqrt(H * H * G * G * G * G * R * R + M * M * R * R) / (omg * omg);
  return c;
}

enum class Algo { fedsvrpg_m, fedhapg_m, pavg };

struct HyperparamPlan {
  double beta_rec = 1.0;
  double lambda_rec = 0.0;
  long long B_rec = 1;
  double eta_bound = 0.0;
  double L_bar = 0.0;  // L-bar (FedSVRPG-M) or L-hat (FedHAPG-M) used in the formulas
};

/// Rate-optimal momentum, global step, warm-start batch and local step bound.
///   beta   = min{1, (N K Lb^2 Delta^2 / (sigma^4 R^2))^(1/3)}
///   lambda = min{1 / (24 Lb), sqrt(beta N K / (c Lb^2))}, c = 162 (SVRPG) or 72 (HAPG)
///   B      = ceil(K / (R beta^2))
///   eta K Lb <= min{(Delta / (G0 lambda R))^(1/2), (beta/N)^(1/2), (beta/(N K))^(1/4)}
/// with Lb = max{L, L1~, L2~, L3~} for FedSVRPG-M and Lb = sqrt(2 L^2 + 4 L4~^2) for
/// FedHAPG-M. Every "up to a numeric constant" relation is taken with constant 1.
inline HyperparamPlan recommended_hyperparams(const TheoryConstants& c, int n_agents,
                                              int local_steps, int rounds, double delta_est,
                                              double g0, Algo algo = Algo::fedsvrpg_m) {
  require(n_agents >= 1 && local_steps >= 1 && rounds >= 1,
          "recommended_hyperparams: N, K, R must be >= 1");
  require(delta_est >= 0.0 && g0 >= 0.0, "recommended_hyperparams: negative delta or G0");
  const double N = n_agents, K = local_steps, R = rounds;
  HyperparamPlan plan;
  double denom = 162.0;
  if (algo == Algo::fedhapg_m) {
    plan.L_bar = std::sqrt(2.0 * c.L * c.L + 4.0 * c.L4_t * c.L4_t);
    denom = 72.0;
  } else {
    plan.L_bar = std::max({c.L, c.L1_t, c.L2_t, c.L3_t});
  }
  const double Lb = plan.L_bar;
  const double s4 = std::pow(c.sigma_hat, 4);
  if (s4 > 0.0) {
    const double raw = std::cbrt(N * K * Lb * Lb * delta_est * delta_est / (s4 * R * R));
    plan.beta_rec = std::min(1.0, raw);
  } else {
    plan.beta_rec = 1.0;
  }
  if (!(plan.beta_rec > 0.0)) plan.beta_rec = std::numeric_limits<double>::min();
  plan.lambda_rec =
      std::min(1.0 / (24.0 * Lb), std::sqrt(plan.beta_rec * N * K / (denom * Lb * Lb)));
  plan.B_rec = u0_batch_size(local_steps, rounds, plan.beta_rec);
  const double first = (g0 > 0.0 && delta_est > 0.0)
                           ? std::sqrt(delta_est / (g0 * plan.lambda_rec * R))
                           : std::numeric_limits<double>::infinity();
  const double bound =
      std::min({first, std::sqrt(plan.beta_rec / N), std::pow(plan.beta_rec / (N * K), 0.25)});
  plan.eta_bound = bound / (K * Lb);
  return plan;
}

/// Default Delta estimate: R_max (1 - gamma^H) / (1 - gamma) - J(theta0), an upper bound on
/// J(theta*) - J(theta0).
inline double default_delta_estimate(int horizon, double r_max, double gamma, double J0) {
  return std::max(0.0, r_max * (1.0 - std::pow(gamma, horizon)) / (1.0 - gamma) - J0);
}

// ---------------------------------------------------------------------------
// Empirical assumption constants
// ---------------------------------------------------------------------------

struct ProbeConfig {
  int probe_count = 100;
  int samples_per_probe = 200;
  double theta_scale = 1.0;   // probes theta ~ U(-scale, scale)^d
  double pair_radius = 0.5;   // theta-pairs at distance <= radius
};

struct AssumptionMeasurement {
  double sigma_hat = 0.0;  // sqrt of the largest measured Var(g)
  double W_hat = 0.0;      // largest measured Var(w)
};

namespace detail {
inline Vector random_params(Eigen::Index d, double scale, CounterRng& rng) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}
inline Vector random_direction(Eigen::Index d, double radius, CounterRng& rng) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = rng.normal();
  const double n = v.norm();
  if (n > 0.0) v *= radius * rng.uniform() / n;
  return v;
}
}  // namespace detail

/// Monte-Carlo surrogates for sigma^2 = sup Var(g) and W = sup Var(w) over random probes.
/// Var(g) = E||g - grad J_i||^2 uses the exact gradient; Var(w) = E(w - 1)^2 since E[w] = 1.
template <class Policy>
AssumptionMeasurement measure_assumption_constants(const std::vector<TabularMdp>& fleet,
                                                   const Policy& policy, const ProbeConfig& cfg,
                                                   CounterRng& rng) {
  require(!fleet.empty(), "measure_assumption_constants: empty fleet");
  require(cfg.probe_count >= 1 && cfg.samples_per_probe >= 2,
          "measure_assumption_constants: probe_count and samples_per_probe must be positive");
  AssumptionMeasurement out;
  double max_var_g = 0.0;
  for (int p = 0; p < cfg.probe_count; ++p) {
    const auto& mdp = fleet[static_cast<std::size_t>(p) % fleet.size()];
    const Vector theta = detail::random_params(policy.dim(), cfg.theta_scale, rng);
    const Vector other = theta + detail::random_direction(policy.dim(), cfg.pair_radius, rng);
    const Direction exact = exact_gradient(mdp, policy, theta);
    const auto pol = policy.at(theta);
    const auto pol_other = policy.at(other);
    double var_g = 0.0, var_w = 0.0;
    for (int b = 0; b < cfg.samples_per_probe; ++b) {
      const auto traj = sample_trajectory_at(mdp, pol, rng);
      var_g += (gpomdp_grad_at(traj, pol, policy.dim(), mdp.gamma()) - exact).squaredNorm();
      const double w = std::exp(log_is_ratio_at(traj, pol_other, pol));
      var_w += (w - 1.0) * (w - 1.0);
    }
    max_var_g = std::max(max_var_g, var_g / cfg.samples_per_probe);
    out.W_hat = std::max(out.W_hat, var_w / cfg.samples_per_probe);
  }
  out.sigma_hat = std::sqrt(max_var_g);
  return out;
}

}  // namespace fedpg
