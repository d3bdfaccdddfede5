#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "rng.hpp"
#include "types.hpp"

namespace fedpg {

/// Constants (G, M) with ||grad log pi|| <= G and ||hess log pi||_2 <= M.
struct PolicyBounds {
  double G = 0.0;
  double M = 0.0;
};

// Every policy family exposes
//   dim()                          parameter dimension d
//   at(theta) -> Frozen            the policy evaluated at theta
// and the Frozen object exposes, for a state s and action a,
//   log_prob(s, a)
//   score_dot(s, a, v)             <grad log pi(a|s), v>
//   add_score(s, a, c, out)        out += c * grad log pi(a|s)
//   add_score_hvp(s, a, v, c, out) out += c * hess log pi(a|s) * v
//   sample(s, rng)
// The free functions further down wrap these with argument checks.

// ---------------------------------------------------------------------------
// Tabular softmax: theta[s * A + a], pi(a|s) = softmax(theta[s, :])_a
// ---------------------------------------------------------------------------

class SoftmaxPolicy {
 public:
  using state_type = int;
  using action_type = int;

  SoftmaxPolicy(int n_states, int n_actions) : n_states_(n_states), n_actions_(n_actions) {
    require(n_states >= 1 && n_actions >= 1, "SoftmaxPolicy: sizes must be >= 1");
  }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(n_states_) * n_actions_; }

  bool valid_state(int s) const { return s >= 0 && s < n_states_; }
  bool valid_action(int a) const { return a >= 0 && a < n_actions_; }

  class Frozen {
   public:
    Frozen(const SoftmaxPolicy& pol, const Vector& theta)
        : A_(pol.n_actions_),
          probs_(static_cast<std::size_t>(pol.dim())),
          logp_(static_cast<std::size_t>(pol.dim())) {
      for (int s = 0; s < pol.n_states_; ++s) {
        const auto base = static_cast<Eigen::Index>(s) * A_;
        double mx = theta[base];
        for (int a = 1; a < A_; ++a) mx = std::max(mx, theta[base + a]);
        double z = 0.0;
        for (int a = 0; a < A_; ++a) z += std::exp(theta[base + a] - mx);
        const double logz = mx + std::log(z);
        for (int a = 0; a < A_; ++a) {
          logp_[base + a] = theta[base + a] - logz;
          probs_[base + a] = std::exp(logp_[base + a]);
        }
      }
    }

    double prob(int s, int a) const { return probs_[idx(s, a)]; }
    double log_prob(int s, int a) const { return logp_[idx(s, a)]; }

    double score_dot(int s, int a, const Vector& v) const {
      const auto base = idx(s, 0);
      double mean = 0.0;
      for (int b = 0; b < A_; ++b) mean += probs_[base + b] * v[base + b];
      return v[base + a] - mean;
    }

    void add_score(int s, int a, double c, Vector& out) const {
      const auto base = idx(s, 0);
      for (int b = 0; b < A_; ++b) out[base + b] -= c * probs_[base + b];
      out[base + a] += c;
    }

    // hess log pi(a|s) = -(diag(pi_s) - pi_s pi_s^T) on block s, independent of a.
    void add_score_hvp(int s, int /*a*/, const Vector& v, double c, Vector& out) const {
      const auto base = idx(s, 0);
      double pv = 0.0;
      for (int b = 0; b < A_; ++b) pv += probs_[base + b] * v[base + b];
      for (int b = 0; b < A_; ++b) out[base + b] -= c * probs_[base + b] * (v[base + b] - pv);
    }

    int sample(int s, CounterRng& rng) const { return rng.categorical(&probs_[idx(s, 0)], A_); }

   private:
    std::size_t idx(int s, int a) const {
      return static_cast<std::size_t>(s) * static_cast<std::size_t>(A_) +
             static_cast<std::size_t>(a);
    }
    int A_;
    std::vector<double> probs_;
    std::vector<double> logp_;
  };

  Frozen at(const Vector& theta) const {
    require_dim("SoftmaxPolicy", dim(), theta.size());
    return Frozen(*this, theta);
  }

  /// G = sqrt(2) bounds ||e_a - pi||; the block Hessian diag(pi) - pi pi^T has spectral norm
  /// at most 1/2, and M = 1 is reported.
  PolicyBounds bounds() const { return {std::numbers::sqrt2, 1.0}; }

 private:
  int n_states_;
  int n_actions_;
};

// ---------------------------------------------------------------------------
// Log-linear softmax over state-action features: pi(a|s) ~ exp(phi(s,a)^T theta)
// ---------------------------------------------------------------------------

class LogLinearPolicy {
 public:
  using state_type = int;
  using action_type = int;

  /// features(s * A + a, :) = phi(s, a)
  LogLinearPolicy(int n_states, int n_actions, Eigen::MatrixXd features)
      : n_states_(n_states), n_actions_(n_actions), features_(std::move(features)) {
    require(n_states >= 1 && n_actions >= 1, "LogLinearPolicy: sizes must be >= 1");
    require(features_.rows() == static_cast<Eigen::Index>(n_states) * n_actions,
            "LogLinearPolicy: feature matrix needs S*A rows");
    require(features_.cols() >= 1, "LogLinearPolicy: feature dimension must be >= 1");
    feature_bound_ = features_.rowwise().norm().maxCoeff();
  }

  /// Features drawn iid U(-1, 1).
  static LogLinearPolicy random(int n_states, int n_actions, int feature_dim,
                                std::uint64_t seed) {
    CounterRng rng(seed);
    Eigen::MatrixXd f(static_cast<Eigen::Index>(n_states) * n_actions, feature_dim);
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index j = 0; j < f.cols(); ++j) f(i, j) = rng.uniform(-1.0, 1.0);
    return LogLinearPolicy(n_states, n_actions, std::move(f));
  }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  Eigen::Index dim() const { return features_.cols(); }
  double feature_bound() const { return feature_bound_; }
  const Eigen::MatrixXd& features() const { return features_; }

  bool valid_state(int s) const { return s >= 0 && s < n_states_; }
  bool valid_action(int a) const { return a >= 0 && a < n_actions_; }

  class Frozen {
   public:
    Frozen(const LogLinearPolicy& pol, const Vector& theta)
        : pol_(&pol), A_(pol.n_actions_), probs_(static_cast<std::size_t>(pol.features_.rows())),
          logp_(probs_.size()), mean_(pol.features_.cols(), pol.n_states_) {
      const Vector logits = pol.features_ * theta;
      for (int s = 0; s < pol.n_states_; ++s) {
        const auto base = static_cast<Eigen::Index>(s) * A_;
        const double mx = logits.segment(base, A_).maxCoeff();
        double z = 0.0;
        for (int a = 0; a < A_; ++a) z += std::exp(logits[base + a] - mx);
        const double logz = mx + std::log(z);
        mean_.col(s).setZero();
        for (int a = 0; a < A_; ++a) {
          logp_[base + a] = logits[base + a] - logz;
          probs_[base + a] = std::exp(logp_[base + a]);
          mean_.col(s) += probs_[base + a] * pol.features_.row(base + a).transpose();
        }
      }
    }

    double prob(int s, int a) const { return probs_[row(s, a)]; }
    double log_prob(int s, int a) const { return logp_[row(s, a)]; }

    double score_dot(int s, int a, const Vector& v) const {
      return pol_->features_.row(row(s, a)).dot(v) - mean_.col(s).dot(v);
    }

    void add_score(int s, int a, double c, Vector& out) const {
      out += c * (pol_->features_.row(row(s, a)).transpose() - mean_.col(s));
    }

    // hess log pi = -Cov_pi(phi(s, .)), independent of a.
    void add_score_hvp(int s, int /*a*/, const Vector& v, double c, Vector& out) const {
      const double mv = mean_.col(s).dot(v);
      for (int b = 0; b < A_; ++b) {
        const auto r = row(s, b);
        const double fv = pol_->features_.row(r).dot(v);
        out -= c * probs_[r] * (fv - mv) * pol_->features_.row(r).transpose();
      }
    }

    int sample(int s, CounterRng& rng) const { return rng.categorical(&probs_[row(s, 0)], A_); }

   private:
    Eigen::Index row(int s, int a) const { return static_cast<Eigen::Index>(s) * A_ + a; }
    const LogLinearPolicy* pol_;
    int A_;
    std::vector<double> probs_;
    std::vector<double> logp_;
    Eigen::MatrixXd mean_;  // column s = E_pi[phi(s, .)]
  };

  Frozen at(const Vector& theta) const {
    require_dim("LogLinearPolicy", dim(), theta.size());
    return Frozen(*this, theta);
  }

  /// ||phi - E phi|| <= 2 B_phi and ||Cov(phi)|| <= B_phi^2.
  PolicyBounds bounds() const {
    return {2.0 * feature_bound_, feature_bound_ * feature_bound_};
  }

 private:
  int n_states_;
  int n_actions_;
  Eigen::MatrixXd features_;
  double feature_bound_ = 0.0;
};

// ---------------------------------------------------------------------------
// Linear-Gaussian policy on a scalar state: a ~ N(phi(x)^T theta, sigma^2),
// phi(x) = (1, tanh(x)), so ||phi|| <= sqrt(2).
// ---------------------------------------------------------------------------

/// G = B_a * B_phi / sigma^2, M = B_phi^2 / sigma^2.
inline PolicyBounds gaussian_policy_bounds(double action_clip, double feature_bound,
                                           double sigma) {
  require(sigma > 0.0, "gaussian_policy_bounds: sigma must be positive");
  return {action_clip * feature_bound / (sigma * sigma),
          feature_bound * feature_bound / (sigma * sigma)};
}

class LinearGaussianPolicy {
 public:
  using state_type = double;
  using action_type = double;

  static constexpr int kFeatureDim = 2;
  static constexpr double kFeatureBound = std::numbers::sqrt2;

  /// The sampled deviation a - mean is clipped to [-action_clip, action_clip] when a clip
  /// radius is given; without one the bound constants are undefined.
  explicit LinearGaussianPolicy(double sigma, std::optional<double> action_clip = std::nullopt)
      : sigma_(sigma), clip_(action_clip) {
    require(sigma > 0.0, "LinearGaussianPolicy: sigma must be positive");
    require(!clip_ || *clip_ > 0.0, "LinearGaussianPolicy: action clip must be positive");
  }

  Eigen::Index dim() const { return kFeatureDim; }
  double sigma() const { return sigma_; }
  std::optional<double> action_clip() const { return clip_; }

  bool valid_state(double x) const { return std::isfinite(x); }
  bool valid_action(double a) const { return std::isfinite(a); }

  static Eigen::Vector2d features(double x) { return {1.0, std::tanh(x)}; }

  class Frozen {
   public:
    Frozen(const LinearGaussianPolicy& pol, const Vector& theta)
        : w0_(theta[0]), w1_(theta[1]), sigma_(pol.sigma_), clip_(pol.clip_) {}

    double mean(double x) const { return w0_ + w1_ * std::tanh(x); }

    double log_prob(double x, double a) const {
      const double z = (a - mean(x)) / sigma_;
      return -0.5 * z * z - std::log(sigma_ * std::sqrt(2.0 * std::numbers::pi));
    }

    double score_dot(double x, double a, const Vector& v) const {
      const double t = std::tanh(x);
      return (a - w0_ - w1_ * t) / (sigma_ * sigma_) * (v[0] + t * v[1]);
    }

    void add_score(double x, double a, double c, Vector& out) const {
      const double t = std::tanh(x);
      const double k = c * (a - w0_ - w1_ * t) / (sigma_ * sigma_);
      out[0] += k;
      out[1] += k * t;
    }

    void add_score_hvp(double x, double /*a*/, const Vector& v, double c, Vector& out) const {
      const double t = std::tanh(x);
      const double k = -c * (v[0] + t * v[1]) / (sigma_ * sigma_);
      out[0] += k;
      out[1] += k * t;
    }

    double sample(double x, CounterRng& rng) const {
      double dev = sigma_ * rng.normal();
      if (clip_) dev = std::clamp(dev, -*clip_, *clip_);
      return mean(x) + dev;
    }

   private:
    double w0_;
    double w1_;
    double sigma_;
    std::optional<double> clip_;
  };

  Frozen at(const Vector& theta) const {
    require_dim("LinearGaussianPolicy", dim(), theta.size());
    return Frozen(*this, theta);
  }

  PolicyBounds bounds() const {
    if (!clip_)
      throw InvalidArgument("LinearGaussianPolicy: bounds need a declared action clip radius");
    return gaussian_policy_bounds(*clip_, kFeatureBound, sigma_);
  }

 private:
  double sigma_;
  std::optional<double> clip_;
};

// ---------------------------------------------------------------------------
// Checked free-function interface
// ---------------------------------------------------------------------------

namespace detail {
template <class Policy>
void check_state_action(const Policy& pol, typename Policy::state_type s,
                        typename Policy::action_type a, const char* where) {
  if (!pol.valid_state(s)) throw InvalidArgument(std::string(where) + ": state out of range");
  if (!pol.valid_action(a)) throw InvalidArgument(std::string(where) + ": action out of range");
}
}  // namespace detail

template <class Policy>
double log_prob(const Policy& pol, const PolicyParams& theta, typename Policy::state_type s,
                typename Policy::action_type a) {
  detail::check_state_action(pol, s, a, "log_prob");
  return pol.at(theta).log_prob(s, a);
}

template <class Policy>
Direction score(const Policy& pol, const PolicyParams& theta, typename Policy::state_type s,
                typename Policy::action_type a) {
  detail::check_state_action(pol, s, a, "score");
  Direction out = Direction::Zero(pol.dim());
  pol.at(theta).add_score(s, a, 1.0, out);
  return out;
}

template <class Policy>
Direction score_hvp(const Policy& pol, const PolicyParams& theta, typename Policy::state_type s,
                    typename Policy::action_type a, const Direction& v) {
  detail::check_state_action(pol, s, a, "score_hvp");
  require_dim("score_hvp", pol.dim(), v.size());
  Direction out = Direction::Zero(pol.dim());
  pol.at(theta).add_score_hvp(s, a, v, 1.0, out);
  return out;
}

template <class Policy>
typename Policy::action_type sample_action(const Policy& pol, const PolicyParams& theta,
                                           typename Policy::state_type s, CounterRng& rng) {
  if (!pol.valid_state(s)) throw InvalidArgument("sample_action: state out of range");
  return pol.at(theta).sample(s, rng);
}

template <class Policy>
PolicyBounds policy_bounds(const Policy& pol) {
  return pol.bounds();
}

}  // namespace fedpg
