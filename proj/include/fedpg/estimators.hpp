#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "envs.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace fedpg {

struct MomentumConfig {
  double beta = 1.0;
  std::optional<double> clip_is;  // cap on importance weights; none by default

  void validate() const {
    require(beta > 0.0 && beta <= 1.0, "MomentumConfig: beta must lie in (0,1]");
    require(!clip_is || *clip_is > 0.0, "MomentumConfig: clip_is must be positive");
  }
};

namespace detail {

// suffix[t] = sum_{h >= t} gamma^h r_h
template <class S, class A>
void discounted_suffix(const Trajectory<S, A>& traj, double gamma, std::vector<double>& suffix) {
  const std::size_t n = traj.steps.size();
  suffix.assign(n, 0.0);
  std::vector<double> disc(n);
  double g = 1.0;
  for (std::size_t h = 0; h < n; ++h) {
    disc[h] = g;
    g *= gamma;
  }
  double acc = 0.0;
  for (std::size_t h = n; h-- > 0;) {
    acc += disc[h] * traj.steps[h].reward;
    suffix[h] = acc;
  }
}

}  // namespace detail

/// GPOMDP on an already evaluated policy: out = sum_t (sum_{h>=t} gamma^h r_h) score_t.
template <class Frozen, class S, class A>
Direction gpomdp_grad_at(const Trajectory<S, A>& traj, const Frozen& pol, Eigen::Index dim,
                         double gamma) {
  std::vector<double> suffix;
  detail::discounted_suffix(traj, gamma, suffix);
  Direction out = Direction::Zero(dim);
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    if (suffix[t] != 0.0) pol.add_score(traj.steps[t].state, traj.steps[t].action, suffix[t], out);
  }
  return out;
}

/// GPOMDP gradient estimate g(tau | theta).
template <class Policy, class S, class A>
Direction gpomdp_grad(const Trajectory<S, A>& traj, const PolicyParams& params,
                      const Policy& policy, double gamma) {
  require_dim("gpomdp_grad", policy.dim(), params.size());
  return gpomdp_grad_at(traj, policy.at(params), policy.dim(), gamma);
}

/// sum_h log pi_target(a_h|s_h) - log pi_behavior(a_h|s_h).
template <class FrozenT, class FrozenB, class S, class A>
double log_is_ratio_at(const Trajectory<S, A>& traj, const FrozenT& target,
                       const FrozenB& behavior) {
  double lr = 0.0;
  for (const auto& st : traj.steps)
    lr += target.log_prob(st.state, st.action) - behavior.log_prob(st.state, st.action);
  return lr;
}

inline double is_weight_from_log(double log_ratio, std::optional<double> clip = std::nullopt) {
  if (!std::isfinite(log_ratio))
    throw NumericalError("is_weight: non-finite log importance ratio");
  double w = std::exp(log_ratio);
  if (clip && w > *clip) w = *clip;
  if (!std::isfinite(w)) throw NumericalError("is_weight: importance weight overflow");
  return w;
}

/// w(tau | target, behavior) = prod_h pi_target(a_h|s_h) / pi_behavior(a_h|s_h),
/// evaluated in log space. The transition kernels cancel, so no environment is needed.
template <class Policy, class S, class A>
double is_weight(const Trajectory<S, A>& traj, const PolicyParams& params_target,
                 const PolicyParams& params_behavior, const Policy& policy,
                 std::optional<double> clip = std::nullopt) {
  require_dim("is_weight", policy.dim(), params_target.size());
  require_dim("is_weight", policy.dim(), params_behavior.size());
  if (params_target == params_behavior) return clip ? std::min(1.0, *clip) : 1.0;
  return is_weight_from_log(
      log_is_ratio_at(traj, policy.at(params_target), policy.at(params_behavior)), clip);
}

/// Momentum variance-reduced direction
///   u = beta * g_cur + (1 - beta) * (u_r + g_cur - w * g_anchor).
inline Direction svrpg_m_direction(const Direction& g_cur, const Direction& g_anchor, double w,
                                   const Direction& u_r, double beta) {
  require_dim("svrpg_m_direction", g_cur.size(), g_anchor.size());
  require_dim("svrpg_m_direction", g_cur.size(), u_r.size());
  require(beta > 0.0 && beta <= 1.0, "svrpg_m_direction: beta must lie in (0,1]");
  return beta * g_cur + (1.0 - beta) * (u_r + g_cur - w * g_anchor);
}

/// Hessian-aided correction on an evaluated policy:
///   (sum_h <score_h, v>) * g(tau) + sum_h (sum_{i>=h} gamma^i r_i) * hess log pi_h * v.
template <class Frozen, class S, class A>
Direction hapg_lambda_at(const Trajectory<S, A>& traj, const Frozen& pol, const Direction& v,
                         Eigen::Index dim, double gamma) {
  std::vector<double> suffix;
  detail::discounted_suffix(traj, gamma, suffix);
  Direction g = Direction::Zero(dim);
  Direction hv = Direction::Zero(dim);
  double logp_dot_v = 0.0;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& st = traj.steps[t];
    logp_dot_v += pol.score_dot(st.state, st.action, v);
    if (suffix[t] != 0.0) {
      pol.add_score(st.state, st.action, suffix[t], g);
      pol.add_score_hvp(st.state, st.action, v, suffix[t], hv);
    }
  }
  return logp_dot_v * g + hv;
}

template <class Policy, class S, class A>
Direction hapg_lambda(const Trajectory<S, A>& traj, const PolicyParams& params_mixed,
                      const Direction& v, const Policy& policy, double gamma) {
  require_dim("hapg_lambda", policy.dim(), params_mixed.size());
  require_dim("hapg_lambda", policy.dim(), v.size());
  return hapg_lambda_at(traj, policy.at(params_mixed), v, policy.dim(), gamma);
}

/// u = beta * w * g_cur + (1 - beta) * (u_r + lambda_term).
inline Direction hapg_direction(double w, const Direction& g_cur, const Direction& u_r,
                                const Direction& lambda_term, double beta) {
  require_dim("hapg_direction", g_cur.size(), u_r.size());
  require_dim("hapg_direction", g_cur.size(), lambda_term.size());
  require(beta > 0.0 && beta <= 1.0, "hapg_direction: beta must lie in (0,1]");
  return beta * w * g_cur + (1.0 - beta) * (u_r + lambda_term);
}

/// B = ceil(K / (R * beta^2)).
inline long long u0_batch_size(int local_steps, int rounds, double beta) {
  require(beta > 0.0 && beta <= 1.0, "u0_batch_size: beta must lie in (0,1]");
  require(local_steps >= 1 && rounds >= 1, "u0_batch_size: K and R must be >= 1");
  const double b = std::ceil(static_cast<double>(local_steps) /
                             (static_cast<double>(rounds) * beta * beta));
  return std::max(1LL, static_cast<long long>(b));
}

/// Warm-start direction u0 = (1 / NB) sum_i sum_b g_i(tau_b^(i) | theta0), tau_b^(i) iid from
/// agent i's environment at theta0. Agent i draws from make_rng(seed, "u0", {i}).
template <class Env, class Policy>
Direction init_u0(const std::vector<Env>& fleet, const Policy& policy, const PolicyParams& theta0,
                  long long batch, std::uint64_t seed) {
  require(!fleet.empty(), "init_u0: empty fleet");
  require(batch >= 1, "init_u0: batch must be >= 1");
  require_dim("init_u0", policy.dim(), theta0.size());
  const auto pol = policy.at(theta0);
  Direction sum = Direction::Zero(policy.dim());
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    CounterRng rng = make_rng(seed, "u0", {static_cast<std::uint64_t>(i)});
    Direction agent_sum = Direction::Zero(policy.dim());
    for (long long b = 0; b < batch; ++b) {
      const auto traj = sample_trajectory_at(fleet[i], pol, rng, static_cast<int>(i));
      agent_sum += gpomdp_grad_at(traj, pol, policy.dim(), fleet[i].gamma());
    }
    sum += agent_sum;
  }
  return sum / (static_cast<double>(fleet.size()) * static_cast<double>(batch));
}

template <class Env, class Policy>
Direction init_u0(const std::vector<Env>& fleet, const Policy& policy, const PolicyParams& theta0,
                  int local_steps, int rounds, double beta, std::uint64_t seed) {
  return init_u0(fleet, policy, theta0, u0_batch_size(local_steps, rounds, beta), seed);
}

}  // namespace fedpg
