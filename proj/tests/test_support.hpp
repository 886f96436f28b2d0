/*
 * Copyright 2026 The FAWAC Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Small fixtures and independent reference computations shared by the tests.

#include "fawac/cmdp.hpp"
#include "fawac/rng.hpp"
#include "fawac/types.hpp"

#include <cmath>
#include <vector>

namespace fawac::testing {

/// Random dense CMDP with no absorbing states.
inline Cmdp random_cmdp(std::size_t n, std::size_t m, std::uint64_t seed, double gamma = 0.9) {
  Rng rng(seed);
  Cmdp c;
  c.n_states = n;
  c.n_actions = m;
  c.gamma = gamma;
  c.horizon = 200;
  c.transition.assign(m, Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t s = 0; s < n; ++s) {
      double total = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double w = rng.exponential();
        c.transition[a](s, t) = w;
        total += w;
      }
      c.transition[a].row(s) /= total;
    }
  }
  c.reward = Matrix(n, m);
  c.cost = Matrix(n, m);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a = 0; a < m; ++a) {
      c.reward(s, a) = rng.normal();
      c.cost(s, a) = std::abs(rng.normal());
    }
  }
  c.rho0 = Vector(n);
  for (std::size_t s = 0; s < n; ++s) {
    c.rho0[s] = rng.exponential();
  }
  c.rho0 /= c.rho0.sum();
  c.r_min = -1.0;
  c.r_max = 1.0;
  return c;
}

inline Matrix random_policy(std::size_t n, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  Matrix p(n, m);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a = 0; a < m; ++a) {
      p(s, a) = rng.exponential();
    }
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

inline Matrix uniform_policy(std::size_t n, std::size_t m) {
  return Matrix::Constant(n, m, 1.0 / static_cast<double>(m));
}

/// Policy evaluation by repeated Bellman backups (no linear solve).
inline Vector iterative_values(const Cmdp &c, const Matrix &policy, Signal signal) {
  const Matrix &g = signal == Signal::kReward ? c.reward : c.cost;
  Vector v = Vector::Zero(c.n_states);
  for (int iter = 0; iter < 100000; ++iter) {
    Vector next = Vector::Zero(c.n_states);
    for (std::size_t s = 0; s < c.n_states; ++s) {
      for (std::size_t a = 0; a < c.n_actions; ++a) {
        next[s] += policy(s, a) * (g(s, a) + c.gamma * c.transition[a].row(s).dot(v));
      }
    }
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < 1e-14) {
      break;
    }
  }
  return v;
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double se = 0.0;
};

/// Discounted return from rho0 averaged over truncated rollouts, sampled
/// directly from the tensors.
inline MonteCarloEstimate monte_carlo_value(const Cmdp &c, const Matrix &policy, Signal signal,
                                            std::size_t rollouts, int horizon,
                                            std::uint64_t seed) {
  const Matrix &g = signal == Signal::kReward ? c.reward : c.cost;
  Rng rng(seed);
  std::vector<double> rho(c.rho0.data(), c.rho0.data() + c.rho0.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  std::vector<double> row(c.n_actions);
  std::vector<double> next(c.n_states);
  for (std::size_t i = 0; i < rollouts; ++i) {
    std::size_t s = rng.categorical(rho);
    double ret = 0.0;
    double discount = 1.0;
    for (int t = 0; t < horizon; ++t) {
      for (std::size_t a = 0; a < c.n_actions; ++a) {
        row[a] = policy(s, a);
      }
      const std::size_t a = rng.categorical(row);
      ret += discount * g(s, a);
      discount *= c.gamma;
      for (std::size_t t2 = 0; t2 < c.n_states; ++t2) {
        next[t2] = c.transition[a](s, t2);
      }
      s = rng.categorical(next);
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double n = static_cast<double>(rollouts);
  const double mean = sum / n;
  const double var = (sum_sq - n * mean * mean) / (n - 1.0);
  return {mean, std::sqrt(std::max(var, 0.0) / n)};
}

inline double truncation_tail(const Cmdp &c, Signal signal, int horizon) {
  const Matrix &g = signal == Signal::kReward ? c.reward : c.cost;
  return std::pow(c.gamma, horizon) * g.cwiseAbs().maxCoeff() / (1.0 - c.gamma);
}

inline double max_abs_diff(const Matrix &a, const Matrix &b) {
  return (a - b).cwiseAbs().maxCoeff();
}

} // namespace fawac::testing
