#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "io.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace fedpg {

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

template <class State, class Action>
struct Step {
  State state;
  Action action;
  double reward;
};

/// Fixed-horizon sequence of (state, action, reward) triples from one agent.
template <class State, class Action>
struct Trajectory {
  std::vector<Step<State, Action>> steps;
  int env_id = 0;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }
};

using TabularTrajectory = Trajectory<int, int>;
using ContinuousTrajectory = Trajectory<double, double>;

/// sum_h gamma^h r_h.
template <class S, class A>
double discounted_return(const Trajectory<S, A>& traj, double gamma) {
  double ret = 0.0;
  double disc = 1.0;
  for (const auto& st : traj.steps) {
    ret += disc * st.reward;
    disc *= gamma;
  }
  return ret;
}

// ---------------------------------------------------------------------------
// Tabular MDP
// ---------------------------------------------------------------------------

/// Finite MDP with a fixed horizon. Immutable after construction.
///
/// The kernel is stored row-major as P[(s * A + a) * S + s'].
class TabularMdp {
 public:
  using state_type = int;
  using action_type = int;

  static constexpr double kStochasticTol = 1e-12;

  TabularMdp(int n_states, int n_actions, std::vector<double> kernel,
             std::vector<double> rewards, std::vector<double> init_dist, double gamma,
             int horizon, double r_max)
      : n_states_(n_states),
        n_actions_(n_actions),
        kernel_(std::move(kernel)),
        rewards_(std::move(rewards)),
        init_(std::move(init_dist)),
        gamma_(gamma),
        horizon_(horizon),
        r_max_(r_max) {
    validate();
  }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }
  int horizon() const { return horizon_; }
  double r_max() const { return r_max_; }

  double transition(int s, int a, int next) const {
    return kernel_[(static_cast<std::size_t>(s) * n_actions_ + a) * n_states_ + next];
  }
  const double* transition_row(int s, int a) const {
    return kernel_.data() + (static_cast<std::size_t>(s) * n_actions_ + a) * n_states_;
  }
  double reward(int s, int a) const {
    return rewards_[static_cast<std::size_t>(s) * n_actions_ + a];
  }
  double init_prob(int s) const { return init_[s]; }

  const std::vector<double>& kernel() const { return kernel_; }
  const std::vector<double>& rewards() const { return rewards_; }
  const std::vector<double>& init_dist() const { return init_; }

  bool valid_state(int s) const { return s >= 0 && s < n_states_; }
  bool valid_action(int a) const { return a >= 0 && a < n_actions_; }

  int sample_initial(CounterRng& rng) const { return rng.categorical(init_.data(), n_states_); }
  int sample_next(int s, int a, CounterRng& rng) const {
    return rng.categorical(transition_row(s, a), n_states_);
  }

  friend bool operator==(const TabularMdp&, const TabularMdp&) = default;

 private:
  void validate() const {
    require(n_states_ >= 1 && n_actions_ >= 1, "TabularMdp: sizes must be >= 1");
    require(horizon_ >= 1, "TabularMdp: horizon must be >= 1");
    require(gamma_ > 0.0 && gamma_ < 1.0, "TabularMdp: gamma must lie in (0,1)");
    require(r_max_ > 0.0, "TabularMdp: r_max must be positive");
    const auto S = static_cast<std::size_t>(n_states_);
    const auto A = static_cast<std::size_t>(n_actions_);
    require(kernel_.size() == S * A * S, "TabularMdp: kernel has wrong size");
    require(rewards_.size() == S * A, "TabularMdp: rewards have wrong size");
    require(init_.size() == S, "TabularMdp: init_dist has wrong size");
    for (std::size_t row = 0; row < S * A; ++row) {
      double sum = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        double p = kernel_[row * S + j];
        require(p >= 0.0, "TabularMdp: negative transition probability");
        sum += p;
      }
      require(std::abs(sum - 1.0) <= kStochasticTol, "TabularMdp: kernel row does not sum to 1");
    }
    double isum = 0.0;
    for (double p : init_) {
      require(p >= 0.0, "TabularMdp: negative initial probability");
      isum += p;
    }
    require(std::abs(isum - 1.0) <= kStochasticTol, "TabularMdp: init_dist does not sum to 1");
    for (double r : rewards_)
      require(r >= 0.0 && r <= r_max_, "TabularMdp: reward outside [0, r_max]");
  }

  int n_states_;
  int n_actions_;
  std::vector<double> kernel_;
  std::vector<double> rewards_;
  std::vector<double> init_;
  double gamma_;
  int horizon_;
  double r_max_;
};

/// Random MDP: kernel entries iid U(0,1) (or Bernoulli(1/2)) then row-normalized,
/// rewards iid U(0, r_max), uniform initial distribution.
///
/// Draw order: kernel entries in storage order, then rewards in storage order.
/// A Bernoulli row that comes out all-zero is replaced by the uniform row.
inline TabularMdp gen_random_mdp(std::uint64_t seed, int n_states, int n_actions, int horizon,
                                 double gamma, double r_max, bool bernoulli_kernel = false) {
  require(n_states >= 1 && n_actions >= 1, "gen_random_mdp: sizes must be >= 1");
  require(horizon >= 1, "gen_random_mdp: horizon must be >= 1");
  require(r_max > 0.0, "gen_random_mdp: r_max must be positive");
  CounterRng rng(seed);
  const auto S = static_cast<std::size_t>(n_states);
  const auto A = static_cast<std::size_t>(n_actions);
  std::vector<double> kernel(S * A * S);
  for (std::size_t row = 0; row < S * A; ++row) {
    double sum = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      double x = rng.uniform();
      if (bernoulli_kernel) x = x < 0.5 ? 1.0 : 0.0;
      kernel[row * S + j] = x;
      sum += x;
    }
    for (std::size_t j = 0; j < S; ++j)
      kernel[row * S + j] = sum > 0.0 ? kernel[row * S + j] / sum : 1.0 / static_cast<double>(S);
  }
  std::vector<double> rewards(S * A);
  for (auto& r : rewards) r = r_max * rng.uniform();
  std::vector<double> init(S, 1.0 / static_cast<double>(S));
  return TabularMdp(n_states, n_actions, std::move(kernel), std::move(rewards), std::move(init),
                    gamma, horizon, r_max);
}

// ---------------------------------------------------------------------------
// Point-mass environment
// ---------------------------------------------------------------------------

/// One-dimensional point mass: x' = x + gain * a + noise_std * xi, reward exp(-(x - goal)^2).
struct PointMassEnv {
  using state_type = double;
  using action_type = double;

  double goal = 1.0;
  double dynamics_gain = 0.5;
  double noise_std = 0.1;
  double init_std = 0.1;
  double gamma_ = 0.9;
  int horizon_ = 20;

  double gamma() const { return gamma_; }
  int horizon() const { return horizon_; }
  double r_max() const { return 1.0; }

  double reward(double x, double /*a*/) const {
    double d = x - goal;
    return std::exp(-d * d);
  }
  double sample_initial(CounterRng& rng) const { return init_std * rng.normal(); }
  double sample_next(double x, double a, CounterRng& rng) const {
    return x + dynamics_gain * a + noise_std * rng.normal();
  }

  friend bool operator==(const PointMassEnv&, const PointMassEnv&) = default;
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Sampling loop on an already evaluated policy (see policies.hpp for the Frozen interface).
template <class Env, class Frozen>
Trajectory<typename Env::state_type, typename Env::action_type> sample_trajectory_at(
    const Env& env, const Frozen& pol, CounterRng& rng, int env_id = 0) {
  Trajectory<typename Env::state_type, typename Env::action_type> traj;
  traj.env_id = env_id;
  traj.steps.reserve(static_cast<std::size_t>(env.horizon()));
  auto s = env.sample_initial(rng);
  for (int h = 0; h < env.horizon(); ++h) {
    auto a = pol.sample(s, rng);
    double r = env.reward(s, a);
    traj.steps.push_back({s, a, r});
    if (h + 1 < env.horizon()) s = env.sample_next(s, a, rng);
  }
  return traj;
}

/// s0 ~ rho, a_h ~ pi_theta(.|s_h), s_{h+1} ~ P(.|s_h, a_h); exactly H steps.
template <class Env, class Policy>
Trajectory<typename Env::state_type, typename Env::action_type> sample_trajectory(
    const Env& env, const Policy& policy, const PolicyParams& params, CounterRng& rng,
    int env_id = 0) {
  require_dim("sample_trajectory", policy.dim(), params.size());
  return sample_trajectory_at(env, policy.at(params), rng, env_id);
}

// ---------------------------------------------------------------------------
// Fleets
// ---------------------------------------------------------------------------

enum class EnvKind { tabular, point_mass };

struct FleetSpec {
  int n_agents = 1;
  double kappa = 0.0;
  std::uint64_t base_seed = 0;
  EnvKind env_kind = EnvKind::tabular;

  // tabular
  int n_states = 5;
  int n_actions = 5;
  int horizon = 20;
  double gamma = 0.9;
  double r_max = 1.0;
  bool perturb_rewards = false;
  bool bernoulli_kernel = false;

  // point mass
  double base_goal = 1.0;
  double goal_spread = 1.0;  // agent i's goal offset is drawn from U(-spread, spread)
  double dynamics_gain = 0.5;
  double noise_std = 0.1;
  double init_std = 0.1;

  void validate() const {
    require(n_agents >= 1, "FleetSpec: n_agents must be >= 1");
    require(kappa >= 0.0 && kappa <= 1.0, "FleetSpec: kappa must lie in [0,1]");
    require(horizon >= 1, "FleetSpec: horizon must be >= 1");
    require(gamma > 0.0 && gamma < 1.0, "FleetSpec: gamma must lie in (0,1)");
  }
};

/// Agent i's kernel is kappa * P_i + (1 - kappa) * P_0. P_0 (with the shared rewards and
/// initial distribution) comes from seed derive_key(base_seed, "base"); P_i from
/// derive_key(base_seed, "kernel", {i}). With perturb_rewards, rewards are mixed the same
/// way using derive_key(base_seed, "reward", {i}).
inline std::vector<TabularMdp> gen_tabular_fleet(const FleetSpec& spec) {
  spec.validate();
  require(spec.env_kind == EnvKind::tabular, "gen_tabular_fleet: spec is not tabular");
  const TabularMdp base = gen_random_mdp(derive_key(spec.base_seed, "base"), spec.n_states,
                                         spec.n_actions, spec.horizon, spec.gamma, spec.r_max,
                                         spec.bernoulli_kernel);
  const double k = spec.kappa;
  std::vector<TabularMdp> fleet;
  fleet.reserve(static_cast<std::size_t>(spec.n_agents));
  for (int i = 0; i < spec.n_agents; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const TabularMdp own = gen_random_mdp(derive_key(spec.base_seed, "kernel", {idx}),
                                          spec.n_states, spec.n_actions, spec.horizon,
                                          spec.gamma, spec.r_max, spec.bernoulli_kernel);
    std::vector<double> kernel(base.kernel().size());
    for (std::size_t j = 0; j < kernel.size(); ++j)
      kernel[j] = k * own.kernel()[j] + (1.0 - k) * base.kernel()[j];
    std::vector<double> rewards = base.rewards();
    if (spec.perturb_rewards) {
      const TabularMdp rsrc = gen_random_mdp(derive_key(spec.base_seed, "reward", {idx}),
                                             spec.n_states, spec.n_actions, spec.horizon,
                                             spec.gamma, spec.r_max, spec.bernoulli_kernel);
      for (std::size_t j = 0; j < rewards.size(); ++j)
        rewards[j] = std::min(spec.r_max, k * rsrc.rewards()[j] + (1.0 - k) * rewards[j]);
    }
    fleet.emplace_back(spec.n_states, spec.n_actions, std::move(kernel), std::move(rewards),
                       base.init_dist(), spec.gamma, spec.horizon, spec.r_max);
  }
  return fleet;
}

/// Agent i's goal is base_goal + kappa * offset_i, offset_i ~ U(-goal_spread, goal_spread)
/// from derive_key(base_seed, "goal", {i}).
inline std::vector<PointMassEnv> gen_point_mass_fleet(const FleetSpec& spec) {
  spec.validate();
  require(spec.env_kind == EnvKind::point_mass, "gen_point_mass_fleet: spec is not point_mass");
  require(spec.noise_std >= 0.0, "FleetSpec: noise_std must be >= 0");
  std::vector<PointMassEnv> fleet;
  for (int i = 0; i < spec.n_agents; ++i) {
    CounterRng rng(derive_key(spec.base_seed, "goal", {static_cast<std::uint64_t>(i)}));
    const double offset = rng.uniform(-spec.goal_spread, spec.goal_spread);
    PointMassEnv env;
    env.goal = spec.base_goal + spec.kappa * offset;
    env.dynamics_gain = spec.dynamics_gain;
    env.noise_std = spec.noise_std;
    env.init_std = spec.init_std;
    env.gamma_ = spec.gamma;
    env.horizon_ = spec.horizon;
    fleet.push_back(env);
  }
  return fleet;
}

using Fleet = std::variant<std::vector<TabularMdp>, std::vector<PointMassEnv>>;

inline Fleet gen_fleet(const FleetSpec& spec) {
  if (spec.env_kind == EnvKind::tabular) return gen_tabular_fleet(spec);
  return gen_point_mass_fleet(spec);
}

// ---------------------------------------------------------------------------
// Plain-text fleet fixtures
// ---------------------------------------------------------------------------
//
//   fedpg-tabular-fleet 1
//   agents <N> states <S> actions <A> horizon <H> gamma <g> r_max <r>
//   agent <i>
//   kernel            (S*A lines of S values, row (s, a) in order s-major)
//   rewards           (S lines of A values)
//   init              (1 line of S values)
//   ... repeated for each agent
//
// All numbers are written with 17 significant digits.

inline void write_fleet(std::ostream& os, const std::vector<TabularMdp>& fleet) {
  require(!fleet.empty(), "write_fleet: empty fleet");
  const auto& f = fleet.front();
  os << "fedpg-tabular-fleet 1\n";
  os << "agents " << fleet.size() << " states " << f.n_states() << " actions " << f.n_actions()
     << " horizon " << f.horizon() << " gamma " << io::format_double(f.gamma()) << " r_max "
     << io::format_double(f.r_max()) << "\n";
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    const auto& m = fleet[i];
    os << "agent " << i << "\nkernel\n";
    for (int s = 0; s < m.n_states(); ++s)
      for (int a = 0; a < m.n_actions(); ++a) {
        for (int n = 0; n < m.n_states(); ++n)
          os << (n ? " " : "") << io::format_double(m.transition(s, a, n));
        os << "\n";
      }
    os << "rewards\n";
    for (int s = 0; s < m.n_states(); ++s) {
      for (int a = 0; a < m.n_actions(); ++a)
        os << (a ? " " : "") << io::format_double(m.reward(s, a));
      os << "\n";
    }
    os << "init\n";
    for (int s = 0; s < m.n_states(); ++s)
      os << (s ? " " : "") << io::format_double(m.init_prob(s));
    os << "\n";
  }
}

inline std::vector<TabularMdp> read_fleet(std::istream& is) {
  auto expect = [&](const std::string& word) {
    std::string tok;
    if (!(is >> tok) || tok != word)
      throw InvalidArgument("read_fleet: expected '" + word + "', got '" + tok + "'");
  };
  auto number = [&]() {
    std::string tok;
    double x = 0.0;
    if (!(is >> tok) || !io::parse_double(tok, x))
      throw InvalidArgument("read_fleet: bad number '" + tok + "'");
    return x;
  };
  auto integer = [&]() {
    std::string tok;
    long long x = 0;
    if (!(is >> tok) || !io::parse_int(tok, x))
      throw InvalidArgument("read_fleet: bad integer '" + tok + "'");
    return x;
  };
  expect("fedpg-tabular-fleet");
  if (integer() != 1) throw InvalidArgument("read_fleet: unsupported version");
  expect("agents");
  const auto n = integer();
  expect("states");
  const int S = static_cast<int>(integer());
  expect("actions");
  const int A = static_cast<int>(integer());
  expect("horizon");
  const int H = static_cast<int>(integer());
  expect("gamma");
  const double gamma = number();
  expect("r_max");
  const double r_max = number();
  require(n >= 1 && S >= 1 && A >= 1, "read_fleet: bad dimensions");
  std::vector<TabularMdp> fleet;
  for (long long i = 0; i < n; ++i) {
    expect("agent");
    if (integer() != i) throw InvalidArgument("read_fleet: agents out of order");
    expect("kernel");
    std::vector<double> kernel(static_cast<std::size_t>(S) * A * S);
    for (auto& x : kernel) x = number();
    expect("rewards");
    std::vector<double> rewards(static_cast<std::size_t>(S) * A);
    for (auto& x : rewards) x = number();
    expect("init");
    std::vector<double> init(static_cast<std::size_t>(S));
    for (auto& x : init) x = number();
    fleet.emplace_back(S, A, std::move(kernel), std::move(rewards), std::move(init), gamma, H,
                       r_max);
  }
  return fleet;
}

}  // namespace fedpg
