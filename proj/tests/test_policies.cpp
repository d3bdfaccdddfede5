#include <gtest/gtest.h>

#include <cmath>

#include "fedpg/oracle.hpp"
#include "fedpg/policies.hpp"
#include "fedpg/validate.hpp"

using namespace fedpg;
using validation::fd_gradient;

TEST(Softmax, ProbabilitiesMatchHandComputation) {
  const SoftmaxPolicy policy(2, 3);
  Vector theta(6);
  theta << 0.0, 1.0, 2.0, -1.0, -1.0, 3.0;
  const auto pol = policy.at(theta);
  const double z0 = 1.0 + std::exp(1.0) + std::exp(2.0);
  EXPECT_NEAR(pol.prob(0, 0), 1.0 / z0, 1e-15);
  EXPECT_NEAR(pol.prob(0, 2), std::exp(2.0) / z0, 1e-15);
  const double z1 = 2.0 * std::exp(-1.0) + std::exp(3.0);
  EXPECT_NEAR(pol.log_prob(1, 2), 3.0 - std::log(z1), 1e-14);
}

TEST(Softmax, StableForLargeLogits) {
  const SoftmaxPolicy policy(1, 2);
  Vector theta(2);
  theta << 800.0, 0.0;
  const auto pol = policy.at(theta);
  EXPECT_EQ(pol.prob(0, 0), 1.0);
  EXPECT_TRUE(std::isfinite(pol.log_prob(0, 1)));
  EXPECT_NEAR(pol.log_prob(0, 1), -800.0, 1e-9);
}

TEST(Softmax, NormalizedEverywhere) {
  const SoftmaxPolicy policy(4, 5);
  CounterRng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto pol = policy.at(detail::random_params(policy.dim(), 10.0, rng));
    for (int s = 0; s < 4; ++s) {
      double mass = 0.0;
      for (int a = 0; a < 5; ++a) mass += std::exp(pol.log_prob(s, a));
      EXPECT_NEAR(mass, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, ScoreIsIndicatorMinusProbabilities) {
  const SoftmaxPolicy policy(3, 4);
  CounterRng rng(2);
  const Vector theta = detail::random_params(policy.dim(), 1.0, rng);
  const auto pol = policy.at(theta);
  const Vector sc = score(policy, theta, 1, 2);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 4; ++a) {
      const double expect = s != 1 ? 0.0 : (a == 2 ? 1.0 : 0.0) - pol.prob(1, a);
      EXPECT_NEAR(sc[s * 4 + a], expect, 1e-15);
    }
}

template <class Policy>
void expect_fd_consistent(const Policy& policy, std::uint64_t seed) {
  CounterRng rng(seed);
  for (int t = 0; t < 100; ++t) {
    const Vector theta = detail::random_params(policy.dim(), 2.0, rng);
    const int s = static_cast<int>(rng.uniform() * policy.n_states());
    const int a = static_cast<int>(rng.uniform() * policy.n_actions());
    const Vector fd =
        fd_gradient([&](const Vector& x) { return log_prob(policy, x, s, a); }, theta);
    EXPECT_LT(validation::max_abs_diff(score(policy, theta, s, a), fd), 1e-6);
    const Vector v = detail::random_direction(policy.dim(), 1.0, rng);
    const double h = 1e-5;
    const Vector fd_hv = (score(policy, Vector(theta + h * v), s, a) -
                          score(policy, Vector(theta - h * v), s, a)) /
                         (2.0 * h);
    EXPECT_LT(validation::max_abs_diff(score_hvp(policy, theta, s, a, v), fd_hv), 1e-6);
  }
}

TEST(Softmax, ScoreAndHessianMatchFiniteDifferences) {
  expect_fd_consistent(SoftmaxPolicy(3, 4), 3);
}

TEST(LogLinear, ScoreAndHessianMatchFiniteDifferences) {
  expect_fd_consistent(LogLinearPolicy::random(3, 4, 5, 17), 4);
}

TEST(LogLinear, OneHotFeaturesReduceToSoftmax) {
  const int S = 2, A = 3;
  const LogLinearPolicy loglin(S, A, Eigen::MatrixXd::Identity(S * A, S * A));
  const SoftmaxPolicy soft(S, A);
  CounterRng rng(5);
  const Vector theta = detail::random_params(soft.dim(), 2.0, rng);
  const Vector v = detail::random_direction(soft.dim(), 1.0, rng);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      EXPECT_NEAR(log_prob(loglin, theta, s, a), log_prob(soft, theta, s, a), 1e-14);
      EXPECT_LT(validation::max_abs_diff(score(loglin, theta, s, a), score(soft, theta, s, a)),
                1e-14);
      EXPECT_LT(validation::max_abs_diff(score_hvp(loglin, theta, s, a, v),
                                         score_hvp(soft, theta, s, a, v)),
                1e-14);
    }
}

template <class Policy>
void expect_bounds_hold(const Policy& policy, std::uint64_t seed) {
  const PolicyBounds b = policy_bounds(policy);
  CounterRng rng(seed);
  for (int t = 0; t < 2000; ++t) {
    const Vector theta = detail::random_params(policy.dim(), 6.0, rng);
    const int s = static_cast<int>(rng.uniform() * policy.n_states());
    const int a = static_cast<int>(rng.uniform() * policy.n_actions());
    EXPECT_LE(score(policy, theta, s, a).norm(), b.G);
    const Vector v = detail::random_direction(policy.dim(), 3.0, rng);
    EXPECT_LE(score_hvp(policy, theta, s, a, v).norm(), b.M * v.norm() * (1.0 + 1e-12));
  }
}

TEST(Bounds, SoftmaxScoreAndHessian) { expect_bounds_hold(SoftmaxPolicy(3, 5), 6); }
TEST(Bounds, LogLinearScoreAndHessian) {
  expect_bounds_hold(LogLinearPolicy::random(3, 5, 4, 8), 7);
}

TEST(Gaussian, LogDensityMatchesClosedForm) {
  const LinearGaussianPolicy policy(0.7, 2.0);
  Vector theta(2);
  theta << 0.3, -1.2;
  const double x = 0.4, a = 0.1;
  const double mean = 0.3 - 1.2 * std::tanh(0.4);
  const double expect = -0.5 * std::pow((a - mean) / 0.7, 2) - std::log(0.7 * std::sqrt(2 * M_PI));
  EXPECT_NEAR(log_prob(policy, theta, x, a), expect, 1e-14);
}

TEST(Gaussian, ScoreAndHessianMatchFiniteDifferences) {
  const LinearGaussianPolicy policy(0.6, 2.0);
  CounterRng rng(9);
  for (int t = 0; t < 100; ++t) {
    const Vector theta = detail::random_params(2, 2.0, rng);
    const double x = rng.uniform(-3.0, 3.0);
    const double a = sample_action(policy, theta, x, rng);
    const Vector fd =
        fd_gradient([&](const Vector& p) { return log_prob(policy, p, x, a); }, theta);
    EXPECT_LT(validation::max_abs_diff(score(policy, theta, x, a), fd), 1e-6);
    const Vector v = detail::random_direction(2, 1.0, rng);
    const double h = 1e-5;
    const Vector fd_hv = (score(policy, Vector(theta + h * v), x, a) -
                          score(policy, Vector(theta - h * v), x, a)) /
                         (2.0 * h);
    EXPECT_LT(validation::max_abs_diff(score_hvp(policy, theta, x, a, v), fd_hv), 1e-6);
  }
}

TEST(Gaussian, ClippedSamplesRespectBounds) {
  const double clip = 0.5, sigma = 1.0;
  const LinearGaussianPolicy policy(sigma, clip);
  const PolicyBounds b = policy.bounds();
  EXPECT_DOUBLE_EQ(b.G, clip * std::sqrt(2.0) / (sigma * sigma));
  EXPECT_DOUBLE_EQ(b.M, 2.0 / (sigma * sigma));
  CounterRng rng(10);
  Vector theta(2);
  theta << 1.0, 2.0;
  for (int t = 0; t < 5000; ++t) {
    const double x = rng.uniform(-5.0, 5.0);
    const double a = sample_action(policy, theta, x, rng);
    EXPECT_LE(std::abs(a - policy.at(theta).mean(x)), clip * (1.0 + 1e-12));
    EXPECT_LE(score(policy, theta, x, a).norm(), b.G * (1.0 + 1e-12));
  }
}

TEST(Gaussian, BoundsNeedClipRadius) {
  EXPECT_THROW(LinearGaussianPolicy(1.0).bounds(), InvalidArgument);
  EXPECT_THROW(LinearGaussianPolicy(0.0), InvalidArgument);
}

TEST(Policy, RejectsOutOfRangeInputs) {
  const SoftmaxPolicy policy(2, 2);
  const Vector theta = Vector::Zero(4);
  EXPECT_THROW(log_prob(policy, theta, 2, 0), InvalidArgument);
  EXPECT_THROW(score(policy, theta, 0, -1), InvalidArgument);
  EXPECT_THROW(log_prob(policy, Vector::Zero(3), 0, 0), DimensionMismatch);
  EXPECT_THROW(score_hvp(policy, theta, 0, 0, Vector::Zero(5)), DimensionMismatch);
}

TEST(Policy, SamplingFollowsProbabilities) {
  const SoftmaxPolicy policy(1, 3);
  Vector theta(3);
  theta << 0.0, 1.0, -1.0;
  const auto pol = policy.at(theta);
  CounterRng rng(12);
  int counts[3] = {0, 0, 0};
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[sample_action(policy, theta, 0, rng)];
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(counts[a] / double(n), pol.prob(0, a), 0.01);
}
