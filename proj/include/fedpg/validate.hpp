#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "envs.hpp"
#include "estimators.hpp"
#include "federation.hpp"
#include "io.hpp"
#include "oracle.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace fedpg::validation {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
  double worst = 0.0;  // largest error or ratio seen
};

/// Test-only fault injection. The IS-identity check maps log importance ratios to weights
/// through `is_weight`, so a corrupted function must make that check fail.
struct Hooks {
  std::function<double(double)> is_weight = [](double lr) { return is_weight_from_log(lr); };
};

inline std::string fmt(double x) { return io::format_double(x); }

inline std::string fmt_short(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

inline Check make_check(std::string name, double worst, double limit, long long count,
                        const char* what = "max_err") {
  Check c;
  c.name = std::move(name);
  c.worst = worst;
  c.pass = std::isfinite(worst) && worst <= limit;
  c.detail = std::string(what) + "=" + fmt(worst) + " limit=" + fmt_short(limit) +
             " n=" + std::to_string(count);
  return c;
}

/// S in {1,2,3} x A in {2,3} x H in {1,2,3}, gamma = 0.9, r_max = 1.
inline std::vector<TabularMdp> tiny_matrix(std::uint64_t seed) {
  std::vector<TabularMdp> out;
  for (int S = 1; S <= 3; ++S)
    for (int A = 2; A <= 3; ++A)
      for (int H = 1; H <= 3; ++H)
        out.push_back(gen_random_mdp(derive_key(seed, "tiny", {std::uint64_t(S), std::uint64_t(A),
                                                                std::uint64_t(H)}),
                                     S, A, H, 0.9, 1.0));
  return out;
}

/// Calls fn(policy) for the softmax family and a 3-feature log-linear family.
template <class Fn>
void for_each_tabular_family(const TabularMdp& mdp, std::uint64_t seed, Fn&& fn) {
  fn(SoftmaxPolicy(mdp.n_states(), mdp.n_actions()));
  fn(LogLinearPolicy::random(mdp.n_states(), mdp.n_actions(), 3, derive_key(seed, "features")));
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

/// Central finite-difference gradient of a scalar function.
template <class F>
Vector fd_gradient(F&& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Enumeration identities
// ---------------------------------------------------------------------------

inline Check check_enumeration_mass(const std::vector<TabularMdp>& mdps, int thetas,
                                    std::uint64_t seed, double tol = 1e-12) {
  CounterRng rng = make_rng(seed, "mass");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : mdps)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      for (int t = 0; t < thetas; ++t) {
        const Vector theta = detail::random_params(policy.dim(), 2.0, rng);
        const double mass =
            enumerate_expectation(mdp, policy, theta, [](const TabularTrajectory&) { return 1.0; });
        worst = std::max(worst, std::abs(mass - 1.0));
        ++n;
      }
    });
  return make_check("enumeration_mass", worst, tol, n);
}

inline Check check_gpomdp_unbiased(const std::vector<TabularMdp>& mdps, int thetas,
                                   std::uint64_t seed, double tol = 1e-10) {
  CounterRng rng = make_rng(seed, "unbiased");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : mdps)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      for (int t = 0; t < thetas; ++t) {
        const Vector theta = detail::random_params(policy.dim(), 1.0, rng);
        const Vector expect = enumerate_expectation(
            mdp, policy, theta,
            [&](const TabularTrajectory& tr) { return gpomdp_grad(tr, theta, policy, mdp.gamma()); });
        worst = std::max(worst, max_abs_diff(expect, exact_gradient(mdp, policy, theta)));
        ++n;
      }
    });
  return make_check("gpomdp_unbiased", worst, tol, n);
}

/// E_{tau ~ p(.|theta)}[w(tau | theta', theta) g(tau | theta')] = grad J(theta').
inline Check check_is_identity(const std::vector<TabularMdp>& mdps, int pairs, std::uint64_t seed,
                               const Hooks& hooks = {}, double tol = 1e-10) {
  CounterRng rng = make_rng(seed, "is_identity");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : mdps)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      for (int p = 0; p < pairs; ++p) {
        const Vector behavior = detail::random_params(policy.dim(), 1.0, rng);
        const Vector target = detail::random_params(policy.dim(), 1.0, rng);
        const auto pb = policy.at(behavior);
        const auto pt = policy.at(target);
        const Vector expect =
            enumerate_expectation(mdp, policy, behavior, [&](const TabularTrajectory& tr) {
              const double w = hooks.is_weight(log_is_ratio_at(tr, pt, pb));
              return Vector(w * gpomdp_grad_at(tr, pt, policy.dim(), mdp.gamma()));
            });
        worst = std::max(worst, max_abs_diff(expect, exact_gradient(mdp, policy, target)));
        ++n;
      }
    });
  return make_check("is_identity", worst, tol, n);
}

/// For fixed alpha: E_{tau ~ p(.|theta_a)}[Lambda(tau, theta_a, v)] equals the central
/// difference of grad J along v at theta_a = alpha theta_prev + (1 - alpha) theta_k.
inline Check check_hapg_identity(const std::vector<TabularMdp>& mdps,
                                 const std::vector<double>& alphas, int directions,
                                 std::uint64_t seed, double tol = 1e-5, double h = 1e-5) {
  CounterRng rng = make_rng(seed, "hapg_identity");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : mdps)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      for (double alpha : alphas)
        for (int j = 0; j < directions; ++j) {
          const Vector prev = detail::random_params(policy.dim(), 1.0, rng);
          const Vector v = detail::random_direction(policy.dim(), 1.0, rng);
          const Vector cur = prev + v;
          const Vector mixed = alpha * prev + (1.0 - alpha) * cur;
          const Vector expect = enumerate_expectation(
              mdp, policy, mixed, [&](const TabularTrajectory& tr) {
                return hapg_lambda(tr, mixed, v, policy, mdp.gamma());
              });
          const Vector fd = (exact_gradient(mdp, policy, Vector(mixed + h * v)) -
                             exact_gradient(mdp, policy, Vector(mixed - h * v))) /
                            (2.0 * h);
          worst = std::max(worst, max_abs_diff(expect, fd));
          ++n;
        }
    });
  return make_check("hapg_identity", worst, tol, n);
}

// ---------------------------------------------------------------------------
// Oracle triangle
// ---------------------------------------------------------------------------

template <class Policy>
Check check_gradient_fd(const std::vector<TabularMdp>& envs, const Policy& policy, int thetas,
                        std::uint64_t seed, double tol = 1e-6, const std::string& name = "gradient_fd") {
  CounterRng rng = make_rng(seed, "gradient_fd");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : envs)
    for (int t = 0; t < thetas; ++t) {
      const Vector theta = detail::random_params(policy.dim(), 1.0, rng);
      const Vector fd =
          fd_gradient([&](const Vector& x) { return exact_value(mdp, policy, x); }, theta);
      worst = std::max(worst, max_abs_diff(fd, exact_gradient(mdp, policy, theta)));
      ++n;
    }
  return make_check(name, worst, tol, n);
}

inline Check check_gradient_fd_matrix(const std::vector<TabularMdp>& mdps, int thetas,
                                      std::uint64_t seed, double tol = 1e-6) {
  Check out = make_check("gradient_fd", 0.0, tol, 0);
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : mdps)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      const Check c = check_gradient_fd(std::vector<TabularMdp>{mdp}, policy, thetas,
                                        derive_key(seed, "fd", {std::uint64_t(n)}), tol);
      worst = std::max(worst, c.worst);
      n += thetas;
    });
  return make_check("gradient_fd", worst, tol, n);
}

// ---------------------------------------------------------------------------
// Policy identities and bounds
// ---------------------------------------------------------------------------

template <class Policy, class StateGen, class ActionGen>
void policy_fd_errors(const Policy& policy, int probes, CounterRng& rng, StateGen&& state,
                      ActionGen&& action, double& score_err, double& hvp_err, double& g_ratio,
                      double& m_ratio, double h = 1e-5) {
  const PolicyBounds b = policy.bounds();
  for (int p = 0; p < probes; ++p) {
    const Vector theta = detail::random_params(policy.dim(), 2.0, rng);
    const auto s = state(rng);
    const auto a = action(rng, policy.at(theta), s);
    const Vector sc = score(policy, theta, s, a);
    const Vector fd =
        fd_gradient([&](const Vector& x) { return log_prob(policy, x, s, a); }, theta, h);
    score_err = std::max(score_err, max_abs_diff(sc, fd));
    const Vector v = detail::random_direction(policy.dim(), 1.0, rng);
    const Vector hv = score_hvp(policy, theta, s, a, v);
    const Vector fd_hv =
        (score(policy, Vector(theta + h * v), s, a) - score(policy, Vector(theta - h * v), s, a)) /
        (2.0 * h);
    hvp_err = std::max(hvp_err, max_abs_diff(hv, fd_hv));
    g_ratio = std::max(g_ratio, sc.norm() / b.G);
    if (v.norm() > 0.0) m_ratio = std::max(m_ratio, hv.norm() / (b.M * v.norm()));
  }
}

/// Score and score-Hessian against finite differences, ||score|| <= G and
/// ||hess log pi v|| <= M ||v|| for the three families.
inline std::vector<Check> check_policies(int probes, std::uint64_t seed, double tol = 1e-6) {
  CounterRng rng = make_rng(seed, "policies");
  double score_err = 0.0, hvp_err = 0.0, g_ratio = 0.0, m_ratio = 0.0, norm_err = 0.0;
  const int S = 4, A = 3;
  auto tab_state = [&](CounterRng& r) { return static_cast<int>(r.uniform() * S) % S; };
  auto tab_action = [&](CounterRng& r, const auto&, int) {
    return static_cast<int>(r.uniform() * A) % A;
  };
  const SoftmaxPolicy soft(S, A);
  const auto loglin = LogLinearPolicy::random(S, A, 5, derive_key(seed, "features"));
  policy_fd_errors(soft, probes, rng, tab_state, tab_action, score_err, hvp_err, g_ratio, m_ratio);
  policy_fd_errors(loglin, probes, rng, tab_state, tab_action, score_err, hvp_err, g_ratio,
                   m_ratio);
  const LinearGaussianPolicy gauss(0.7, 2.5);
  policy_fd_errors(
      gauss, probes, rng, [](CounterRng& r) { return r.uniform(-3.0, 3.0); },
      [&](CounterRng& r, const auto& pol, double x) { return pol.sample(x, r); }, score_err,
      hvp_err, g_ratio, m_ratio);
  for (int p = 0; p < probes; ++p) {
    const Vector theta = detail::random_params(soft.dim(), 5.0, rng);
    const auto pol = soft.at(theta);
    for (int s = 0; s < S; ++s) {
      double mass = 0.0;
      for (int a = 0; a < A; ++a) mass += std::exp(pol.log_prob(s, a));
      norm_err = std::max(norm_err, std::abs(mass - 1.0));
    }
  }
  const long long n = 3LL * probes;
  return {make_check("softmax_normalized", norm_err, 1e-12, probes),
          make_check("score_fd", score_err, tol, n),
          make_check("score_hvp_fd", hvp_err, tol, n),
          make_check("score_bound_G", g_ratio, 1.0, n, "max_ratio"),
          make_check("hvp_bound_M", m_ratio, 1.0, n, "max_ratio")};
}

// ---------------------------------------------------------------------------
// Constant bounds
// ---------------------------------------------------------------------------

template <class Policy>
TheoryConstants constants_for(const TabularMdp& mdp, const Policy& policy) {
  return theory_constants(policy.bounds(), mdp.horizon(), mdp.r_max(), mdp.gamma(), 0.0, 0.0);
}

/// ||g(tau | theta)|| / C_g over sampled (theta, tau).
inline Check check_grad_bound(const std::vector<TabularMdp>& envs, long long probes,
                              std::uint64_t seed) {
  CounterRng rng = make_rng(seed, "grad_bound");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : envs)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      const double cg = constants_for(mdp, policy).C_g;
      const long long per = probes / static_cast<long long>(2 * envs.size()) + 1;
      for (long long p = 0; p < per; ++p) {
        const Vector theta = detail::random_params(policy.dim(), 3.0, rng);
        const auto pol = policy.at(theta);
        const auto tr = sample_trajectory_at(mdp, pol, rng);
        worst = std::max(worst, gpomdp_grad_at(tr, pol, policy.dim(), mdp.gamma()).norm() / cg);
        ++n;
      }
    });
  return make_check("grad_bound_Cg", worst, 1.0, n, "max_ratio");
}

/// ||grad J(theta1) - grad J(theta2)|| / (L ||theta1 - theta2||) over random pairs.
inline Check check_lipschitz(const std::vector<TabularMdp>& envs, long long pairs,
                             std::uint64_t seed) {
  CounterRng rng = make_rng(seed, "lipschitz");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : envs)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      const double L = constants_for(mdp, policy).L;
      const long long per = pairs / static_cast<long long>(2 * envs.size()) + 1;
      for (long long p = 0; p < per; ++p) {
        const Vector a = detail::random_params(policy.dim(), 2.0, rng);
        const Vector b = a + detail::random_direction(policy.dim(), 2.0, rng);
        const double dist = (a - b).norm();
        if (dist == 0.0) continue;
        const double diff =
            (exact_gradient(mdp, policy, a) - exact_gradient(mdp, policy, b)).norm();
        worst = std::max(worst, diff / (L * dist));
        ++n;
      }
    });
  return make_check("lipschitz_L", worst, 1.0, n, "max_ratio");
}

/// Var_{tau ~ p(.|theta2)}(w(tau | theta1, theta2)) / (C_w ||theta1 - theta2||^2), with the
/// variance computed by enumeration. C_w uses W = 0, its smallest value.
inline Check check_is_variance(const std::vector<TabularMdp>& mdps, long long probes,
                               std::uint64_t seed, double radius = 0.5) {
  CounterRng rng = make_rng(seed, "is_variance");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : mdps)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      const double cw = constants_for(mdp, policy).C_w;
      const long long per = probes / static_cast<long long>(2 * mdps.size()) + 1;
      for (long long p = 0; p < per; ++p) {
        const Vector behavior = detail::random_params(policy.dim(), 2.0, rng);
        const Vector target = behavior + detail::random_direction(policy.dim(), radius, rng);
        const double dist2 = (target - behavior).squaredNorm();
        if (dist2 == 0.0) continue;
        const auto pb = policy.at(behavior);
        const auto pt = policy.at(target);
        const double var =
            enumerate_expectation(mdp, policy, behavior, [&](const TabularTrajectory& tr) {
              const double w = std::exp(log_is_ratio_at(tr, pt, pb));
              return (w - 1.0) * (w - 1.0);
            });
        worst = std::max(worst, var / (cw * dist2));
        ++n;
      }
    });
  return make_check("is_variance_Cw", worst, 1.0, n, "max_ratio");
}

/// ||Lambda(tau, theta, v)|| / (L4~ ||v||) over sampled (theta, v, tau).
inline Check check_lambda_bound(const std::vector<TabularMdp>& envs, long long probes,
                                std::uint64_t seed) {
  CounterRng rng = make_rng(seed, "lambda_bound");
  double worst = 0.0;
  long long n = 0;
  for (const auto& mdp : envs)
    for_each_tabular_family(mdp, seed, [&](const auto& policy) {
      const double l4 = constants_for(mdp, policy).L4_t;
      const long long per = probes / static_cast<long long>(2 * envs.size()) + 1;
      for (long long p = 0; p < per; ++p) {
        const Vector theta = detail::random_params(policy.dim(), 3.0, rng);
        const Vector v = detail::random_direction(policy.dim(), 2.0, rng);
        if (v.norm() == 0.0) continue;
        const auto pol = policy.at(theta);
        const auto tr = sample_trajectory_at(mdp, pol, rng);
        const double lam = hapg_lambda_at(tr, pol, v, policy.dim(), mdp.gamma()).norm();
        worst = std::max(worst, lam / (l4 * v.norm()));
        ++n;
      }
    });
  return make_check("lambda_bound_L4", worst, 1.0, n, "max_ratio");
}

// ---------------------------------------------------------------------------
// Environment and estimator properties
// ---------------------------------------------------------------------------

inline std::vector<Check> check_fleet_properties(std::uint64_t seed) {
  std::vector<Check> out;
  FleetSpec spec;
  spec.n_agents = 4;
  spec.n_states = 3;
  spec.n_actions = 2;
  spec.horizon = 6;
  spec.base_seed = seed;

  double stoch = 0.0;
  for (double kappa : {0.0, 0.3, 1.0}) {
    spec.kappa = kappa;
    for (const auto& mdp : gen_tabular_fleet(spec)) {
      double rho = -1.0;
      for (int s = 0; s < mdp.n_states(); ++s) rho += mdp.init_prob(s);
      stoch = std::max(stoch, std::abs(rho));
      for (int s = 0; s < mdp.n_states(); ++s)
        for (int a = 0; a < mdp.n_actions(); ++a) {
          double row = -1.0;
          for (int n = 0; n < mdp.n_states(); ++n) {
            row += mdp.transition(s, a, n);
            if (mdp.transition(s, a, n) < 0.0) stoch = 1.0;
          }
          stoch = std::max(stoch, std::abs(row));
        }
    }
  }
  out.push_back(make_check("fleet_stochastic", stoch, 1e-12, 3 * spec.n_agents));

  spec.kappa = 0.0;
  const auto homog = gen_tabular_fleet(spec);
  const SoftmaxPolicy policy(spec.n_states, spec.n_actions);
  CounterRng rng = make_rng(seed, "fleet");
  double spread = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vector theta = detail::random_params(policy.dim(), 2.0, rng);
    const double j0 = exact_value(homog[0], policy, theta);
    for (const auto& mdp : homog)
      spread = std::max(spread, std::abs(exact_value(mdp, policy, theta) - j0));
  }
  out.push_back(make_check("kappa0_identical_values", spread, 1e-12, 20));

  spec.kappa = 0.5;
  const bool same = gen_tabular_fleet(spec) == gen_tabular_fleet(spec);
  out.push_back({"fleet_deterministic", same, same ? "bitwise equal" : "fleets differ", 0.0});

  double ret_ratio = 0.0;
  const auto& mdp = homog[0];
  const double cap = mdp.r_max() * (1.0 - std::pow(mdp.gamma(), mdp.horizon())) / (1.0 - mdp.gamma());
  for (int t = 0; t < 200; ++t) {
    const Vector theta = detail::random_params(policy.dim(), 3.0, rng);
    const auto tr = sample_trajectory(mdp, policy, theta, rng);
    ret_ratio = std::max(ret_ratio, discounted_return(tr, mdp.gamma()) / cap);
  }
  out.push_back(make_check("return_bound", ret_ratio, 1.0, 200, "max_ratio"));
  return out;
}

/// The two direction maps are affine: f(x + y) + f(0) = f(x) + f(y) over their vector inputs.
inline Check check_direction_affine(std::uint64_t seed) {
  CounterRng rng = make_rng(seed, "affine");
  double worst = 0.0;
  const int d = 7;
  for (int t = 0; t < 50; ++t) {
    const double beta = rng.uniform(0.05, 1.0);
    const double w = rng.uniform(0.0, 3.0);
    auto rv = [&] { return detail::random_params(d, 2.0, rng); };
    const Vector g1 = rv(), g2 = rv(), a1 = rv(), a2 = rv(), u1 = rv(), u2 = rv(), l1 = rv(),
                 l2 = rv();
    const Vector z = Vector::Zero(d);
    const Vector lhs = svrpg_m_direction(g1 + g2, a1 + a2, w, u1 + u2, beta) +
                       svrpg_m_direction(z, z, w, z, beta);
    const Vector rhs =
        svrpg_m_direction(g1, a1, w, u1, beta) + svrpg_m_direction(g2, a2, w, u2, beta);
    worst = std::max(worst, max_abs_diff(lhs, rhs));
    const Vector hl = hapg_direction(w, g1 + g2, u1 + u2, l1 + l2, beta) +
                      hapg_direction(w, z, z, z, beta);
    const Vector hr = hapg_direction(w, g1, u1, l1, beta) + hapg_direction(w, g2, u2, l2, beta);
    worst = std::max(worst, max_abs_diff(hl, hr));
    const double c = rng.uniform(-2.0, 2.0);
    worst = std::max(worst, max_abs_diff(svrpg_m_direction(c * g1, c * a1, w, c * u1, beta),
                                         c * svrpg_m_direction(g1, a1, w, u1, beta)));
  }
  return make_check("direction_affine", worst, 1e-12, 50);
}

// ---------------------------------------------------------------------------
// Federated collapse equivalences
// ---------------------------------------------------------------------------

inline bool same_log(const RunLog& a, const RunLog& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i)
    if (a.rows[i].round != b.rows[i].round || a.rows[i].J != b.rows[i].J ||
        a.rows[i].grad_norm_sq != b.rows[i].grad_norm_sq)
      return false;
  return a.final_theta == b.final_theta;
}

/// beta = 1 FedSVRPG-M and PAvg produce bit-identical runs on matched seeds.
inline Check check_beta1_is_pavg(std::uint64_t seed, int n_agents = 3, int local_steps = 4,
                                 int rounds = 5) {
  FleetSpec spec;
  spec.n_agents = n_agents;
  spec.n_states = 3;
  spec.n_actions = 3;
  spec.horizon = 8;
  spec.kappa = 0.5;
  spec.base_seed = seed;
  const auto fleet = gen_tabular_fleet(spec);
  const SoftmaxPolicy policy(3, 3);
  FedConfig cfg;
  cfg.n_agents = n_agents;
  cfg.local_steps = local_steps;
  cfg.rounds = rounds;
  cfg.eta = 0.1;
  cfg.global_step = 0.3;
  cfg.beta = 1.0;
  cfg.master_seed = derive_key(seed, "master");
  cfg.algo = Algo::pavg;
  const RunLog pavg = run_rounds(fleet, policy, Vector::Zero(policy.dim()), cfg);
  cfg.algo = Algo::fedsvrpg_m;
  const RunLog svrpg = run_rounds(fleet, policy, Vector::Zero(policy.dim()), cfg);
  const bool ok = same_log(pavg, svrpg);
  return {"beta1_equals_pavg", ok, ok ? "bitwise equal" : "runs differ", 0.0};
}

/// With N = 1, K = 1 and eta = 0.5 (a power of two, so u = (eta u) / eta exactly), each round
/// equals u <- beta g + (1 - beta)(u + g - w g_anchor), theta <- theta + lambda_g u.
inline Check check_centralized_collapse(std::uint64_t seed, int rounds = 6) {
  const TabularMdp mdp = gen_random_mdp(derive_key(seed, "central"), 3, 2, 6, 0.9, 1.0);
  const std::vector<TabularMdp> fleet{mdp};
  const SoftmaxPolicy policy(3, 2);
  FedConfig cfg;
  cfg.algo = Algo::fedsvrpg_m;
  cfg.n_agents = 1;
  cfg.local_steps = 1;
  cfg.rounds = rounds;
  cfg.eta = 0.5;
  cfg.global_step = 0.3;
  cfg.beta = 0.3;
  cfg.master_seed = derive_key(seed, "master");
  cfg.u0_batch = 4;
  const Vector theta0 = Vector::Zero(policy.dim());
  const RunLog log = run_rounds(fleet, policy, theta0, cfg);

  Vector theta = theta0, prev = theta0;
  Vector u = init_u0(fleet, policy, theta0, 4, cfg.master_seed);
  for (int r = 0; r < rounds; ++r) {
    CounterRng rng = agent_rng(cfg.master_seed, r, 0);
    const auto tr = sample_trajectory(mdp, policy, theta, rng);
    const Vector g = gpomdp_grad(tr, theta, policy, mdp.gamma());
    const Vector ga = gpomdp_grad(tr, prev, policy, mdp.gamma());
    const double w = is_weight(tr, prev, theta, policy);
    u = cfg.beta * g + (1.0 - cfg.beta) * (u + g - w * ga);
    prev = theta;
    theta = theta + cfg.global_step * u;
  }
  const bool ok = theta == log.final_theta;
  return {"centralized_collapse", ok,
          ok ? "bitwise equal" : "max_diff=" + fmt(max_abs_diff(theta, log.final_theta)), 0.0};
}

/// theta_{r+1} = theta_r + lambda_g * (sum_i delta_i / (eta N K)) bit for bit, for each algorithm.
inline Check check_aggregation_identity(std::uint64_t seed, int rounds = 4) {
  FleetSpec spec;
  spec.n_agents = 4;
  spec.n_states = 3;
  spec.n_actions = 2;
  spec.horizon = 6;
  spec.kappa = 1.0;
  spec.base_seed = seed;
  const auto fleet = gen_tabular_fleet(spec);
  const SoftmaxPolicy policy(3, 2);
  bool ok = true;
  for (Algo algo : {Algo::fedsvrpg_m, Algo::fedhapg_m, Algo::pavg}) {
    FedConfig cfg;
    cfg.algo = algo;
    cfg.n_agents = 4;
    cfg.local_steps = 3;
    cfg.rounds = rounds;
    cfg.eta = 0.07;
    cfg.global_step = 0.11;
    cfg.beta = algo == Algo::pavg ? 1.0 : 0.4;
    cfg.master_seed = derive_key(seed, "master");
    ServerState server =
        initial_server_state(Vector::Zero(policy.dim()), Vector::Zero(policy.dim()));
    for (int r = 0; r < rounds; ++r) {
      std::vector<AgentDelta> deltas;
      Direction sum = Direction::Zero(policy.dim());
      for (int i = 0; i < 4; ++i) {
        CounterRng rng = agent_rng(cfg.master_seed, r, i);
        deltas.push_back(local_round(fleet[i], policy, server, cfg, i, rng));
        sum += deltas.back().delta;
      }
      const ServerState next = server_aggregate_and_step(deltas, server, cfg);
      const Vector expect = server.theta + cfg.global_step * (sum / (cfg.eta * 4.0 * 3.0));
      ok = ok && next.theta == expect && next.theta_prev == server.theta;
      server = next;
    }
  }
  return {"aggregation_identity", ok, ok ? "bitwise equal" : "mismatch", 0.0};
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

enum class Level { quick, full };

inline std::vector<Check> run_checks(Level level, std::uint64_t seed = 2024,
                                     const Hooks& hooks = {}) {
  std::vector<Check> out;
  const auto tiny = tiny_matrix(seed);
  out.push_back(check_enumeration_mass(tiny, 3, seed));
  out.push_back(check_gpomdp_unbiased(tiny, 3, seed));
  out.push_back(check_is_identity(tiny, 3, seed, hooks));
  out.push_back(check_hapg_identity(tiny, {0.0, 0.5, 1.0}, 2, seed));
  out.push_back(check_gradient_fd_matrix(tiny, 2, seed));
  for (auto& c : check_policies(100, seed)) out.push_back(std::move(c));
  out.push_back(check_grad_bound(tiny, 2000, seed));
  out.push_back(check_lipschitz(tiny, 200, seed));
  out.push_back(check_is_variance(tiny, 200, seed));
  out.push_back(check_lambda_bound(tiny, 2000, seed));
  for (auto& c : check_fleet_properties(seed)) out.push_back(std::move(c));
  out.push_back(check_direction_affine(seed));
  out.push_back(check_beta1_is_pavg(seed));
  out.push_back(check_centralized_collapse(seed));
  out.push_back(check_aggregation_identity(seed));

  if (level == Level::full) {
    FleetSpec spec;
    spec.n_agents = 4;
    spec.kappa = 0.5;
    spec.horizon = 20;
    spec.base_seed = seed;
    const auto fleet = gen_tabular_fleet(spec);
    const SoftmaxPolicy policy(spec.n_states, spec.n_actions);
    out.push_back(check_gradient_fd(fleet, policy, 5, seed, 1e-6, "gradient_fd_fleet"));
    out.push_back(check_grad_bound(fleet, 20000, seed));
    out.push_back(check_lipschitz(fleet, 200, seed));
    out.push_back(check_lambda_bound(fleet, 20000, seed));

    ProbeConfig probe;
    probe.probe_count = 40;
    probe.samples_per_probe = 400;
    CounterRng rng = make_rng(seed, "assumptions");
    const AssumptionMeasurement m = measure_assumption_constants(fleet, policy, probe, rng);
    const TheoryConstants c = theory_constants(policy.bounds(), spec.horizon, spec.r_max,
                                               spec.gamma, m.W_hat, m.sigma_hat);
    Check meas;
    meas.name = "assumption_constants";
    meas.pass = std::isfinite(m.sigma_hat) && std::isfinite(m.W_hat);
    meas.detail = "sigma_hat=" + fmt(m.sigma_hat) + " W_hat=" + fmt(m.W_hat) +
                  " C_w=" + fmt(c.C_w) + " pair_radius=" + fmt(probe.pair_radius);
    meas.worst = m.W_hat;
    out.push_back(meas);
    // W_hat was measured at distances <= pair_radius, so C_w * radius^2 bounds it.
    out.push_back(make_check("is_variance_mc", m.W_hat,
                             c.C_w * probe.pair_radius * probe.pair_radius, probe.probe_count,
                             "max_var_w"));
  }
  return out;
}

inline void print_report(std::ostream& os, const std::vector<Check>& checks) {
  for (const auto& c : checks)
    os << "CHECK " << c.name << ' ' << (c.pass ? "PASS" : "FAIL") << ' ' << c.detail << '\n';
}

inline bool all_pass(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

}  // namespace fedpg::validation
