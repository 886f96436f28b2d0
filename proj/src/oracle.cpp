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

#include "fawac/oracle.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fawac {

namespace {

constexpr double kRowTol = 1e-9;
constexpr double kTieTol = 1e-8;
constexpr double kControlTol = 1e-12;

using Idx = Eigen::Index;

Idx idx(std::size_t i) { return static_cast<Idx>(i); }

const Matrix &signal_table(const Cmdp &cmdp, Signal signal) {
  return signal == Signal::kReward ? cmdp.reward : cmdp.cost;
}

// Greedy policy from a q table: uniform over the actions within kTieTol of the
// best one (restricted to allowed actions when a mask is supplied).
Matrix greedy_policy(const Matrix &q, Goal goal,
                     const std::vector<std::vector<bool>> &allowed) {
  Matrix policy = Matrix::Zero(q.rows(), q.cols());
  for (Idx s = 0; s < q.rows(); ++s) {
    double best = goal == Goal::kMaximize ? -std::numeric_limits<double>::infinity()
                                          : std::numeric_limits<double>::infinity();
    for (Idx a = 0; a < q.cols(); ++a) {
      if (!allowed.empty() && !allowed[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
        continue;
      }
      best = goal == Goal::kMaximize ? std::max(best, q(s, a)) : std::min(best, q(s, a));
    }
    int ties = 0;
    for (Idx a = 0; a < q.cols(); ++a) {
      if (!allowed.empty() && !allowed[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
        continue;
      }
      if (std::abs(q(s, a) - best) <= kTieTol * std::max(1.0, std::abs(best))) {
        policy(s, a) = 1.0;
        ++ties;
      }
    }
    policy.row(s) /= static_cast<double>(ties);
  }
  return policy;
}

double log_sum_exp(std::span<const double> values) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    peak = std::max(peak, v);
  }
  if (!std::isfinite(peak)) {
    return peak;
  }
  double total = 0.0;
  for (double v : values) {
    total += std::exp(v - peak);
  }
  return peak + std::log(total);
}

std::vector<std::size_t> support_of(std::span<const double> pi_beta_s) {
  std::vector<std::size_t> support;
  double mass = 0.0;
  for (std::size_t x = 0; x < pi_beta_s.size(); ++x) {
    if (pi_beta_s[x] < 0.0 || !std::isfinite(pi_beta_s[x])) {
      throw InvalidInputError("behavior distribution has a negative or non-finite entry");
    }
    if (pi_beta_s[x] > 0.0) {
      support.push_back(x);
      mass += pi_beta_s[x];
    }
  }
  if (support.empty()) {
    throw InvalidInputError("degenerate behavior distribution: zero mass on every action");
  }
  if (std::abs(mass - 1.0) > 1e-8) {
    throw InvalidInputError(fmt::format("behavior distribution sums to {}, not 1", mass));
  }
  return support;
}

void check_sizes(std::span<const double> a_r, std::span<const double> a_c,
                 std::span<const double> pi_beta_s, double lambda) {
  if (a_r.size() != pi_beta_s.size() || a_c.size() != pi_beta_s.size()) {
    throw InvalidInputError("advantage and behavior vectors differ in length");
  }
  if (!(lambda > 0.0)) {
    throw InvalidInputError("temperature lambda must be positive");
  }
}

// Exponentiated-gradient ascent on the simplex restricted to the support.
// Iterates are kept in log space and renormalized by log-sum-exp.
std::vector<double> exponentiated_gradient(std::span<const double> a_r,
                                           std::span<const double> a_c,
                                           std::span<const double> beta, double lambda,
                                           double nu, const std::vector<std::size_t> &support,
                                           const BruteForceOptions &options) {
  const std::size_t n = beta.size();
  std::vector<double> pi(n, 0.0);
  std::vector<double> log_pi(support.size());
  for (std::size_t k = 0; k < support.size(); ++k) {
    pi[support[k]] = beta[support[k]];
    log_pi[k] = std::log(beta[support[k]]);
  }
  double current = regularized_objective(pi, a_r, a_c, beta, lambda, nu);
  double step = 1.0;
  std::vector<double> trial_log(support.size());
  std::vector<double> trial(n, 0.0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (std::size_t k = 0; k < support.size(); ++k) {
      const std::size_t x = support[k];
      const double grad = a_r[x] - nu * a_c[x] - lambda * (log_pi[k] - std::log(beta[x]) + 1.0);
      trial_log[k] = log_pi[k] + step * grad;
    }
    const double norm = log_sum_exp(trial_log);
    for (std::size_t k = 0; k < support.size(); ++k) {
      trial_log[k] -= norm;
      trial[support[k]] = std::exp(trial_log[k]);
    }
    const double candidate = regularized_objective(trial, a_r, a_c, beta, lambda, nu);
    if (candidate > current) {
      const double improvement = candidate - current;
      log_pi = trial_log;
      pi = trial;
      current = candidate;
      if (improvement < options.improvement_tol) {
        return pi;
      }
    } else {
      step *= 0.5;
      if (step < 1e-300) {
        // No ascent direction survives rounding: stationary point.
        return pi;
      }
    }
  }
  throw NonConvergenceError(fmt::format(
      "exponentiated-gradient solver hit the iteration cap ({}) without meeting the "
      "improvement threshold",
      options.max_iterations));
}

// Maximizes a concave function on [lo, hi]: dense grid bracket, then
// golden-section refinement. Returns the argmax.
template <typename F> double maximize_interval(F &&f, double lo, double hi) {
  if (hi - lo <= 0.0) {
    return lo;
  }
  constexpr int kGrid = 64;
  int best_k = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= kGrid; ++k) {
    const double x = lo + (hi - lo) * k / kGrid;
    const double v = f(x);
    if (v > best_val) {
      best_val = v;
      best_k = k;
    }
  }
  double a = lo + (hi - lo) * std::max(0, best_k - 1) / kGrid;
  double b = lo + (hi - lo) * std::min(kGrid, best_k + 1) / kGrid;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int iter = 0; iter < 200 && (b - a) > 1e-15; ++iter) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double mid = 0.5 * (a + b);
  double arg = mid;
  double val = f(mid);
  for (double x : {lo, hi, lo + (hi - lo) * best_k / kGrid}) {
    const double v = f(x);
    if (v > val) {
      val = v;
      arg = x;
    }
  }
  return arg;
}

std::vector<double> small_support_search(std::span<const double> a_r, std::span<const double> a_c,
                                         std::span<const double> beta, double lambda, double nu,
                                         const std::vector<std::size_t> &support) {
  std::vector<double> pi(beta.size(), 0.0);
  const auto objective = [&](const std::vector<double> &p) {
    return regularized_objective(p, a_r, a_c, beta, lambda, nu);
  };
  if (support.size() == 1) {
    pi[support[0]] = 1.0;
    return pi;
  }
  if (support.size() == 2) {
    const auto f = [&](double p0) {
      std::vector<double> p(beta.size(), 0.0);
      p[support[0]] = p0;
      p[support[1]] = 1.0 - p0;
      return objective(p);
    };
    const double p0 = maximize_interval(f, 0.0, 1.0);
    pi[support[0]] = p0;
    pi[support[1]] = 1.0 - p0;
    return pi;
  }
  // Three actions: the inner maximum of a jointly concave function is concave
  // in the outer coordinate, so nested one-dimensional searches suffice.
  const auto inner = [&](double p0, double *best_p1) {
    const double rest = 1.0 - p0;
    const auto g = [&](double p1) {
      std::vector<double> p(beta.size(), 0.0);
      p[support[0]] = p0;
      p[support[1]] = p1;
      p[support[2]] = std::max(0.0, rest - p1);
      return objective(p);
    };
    const double p1 = maximize_interval(g, 0.0, rest);
    if (best_p1 != nullptr) {
      *best_p1 = p1;
    }
    return g(p1);
  };
  const double p0 = maximize_interval([&](double x) { return inner(x, nullptr); }, 0.0, 1.0);
  double p1 = 0.0;
  inner(p0, &p1);
  pi[support[0]] = p0;
  pi[support[1]] = p1;
  pi[support[2]] = std::max(0.0, 1.0 - p0 - p1);
  return pi;
}

} // namespace

void require_policy(const Cmdp &cmdp, const Matrix &policy) {
  if (policy.rows() != idx(cmdp.n_states) || policy.cols() != idx(cmdp.n_actions)) {
    throw InvalidInputError(fmt::format("policy has shape {}x{}, expected {}x{}", policy.rows(),
                                        policy.cols(), cmdp.n_states, cmdp.n_actions));
  }
  for (Idx s = 0; s < policy.rows(); ++s) {
    if ((policy.row(s).array() < 0.0).any() ||
        std::abs(policy.row(s).sum() - 1.0) > kRowTol) {
      throw InvalidInputError(fmt::format("policy row {} is not a distribution", s));
    }
  }
}

Vector policy_signal(const Cmdp &cmdp, const Matrix &policy, Signal signal) {
  return policy.cwiseProduct(signal_table(cmdp, signal)).rowwise().sum();
}

Matrix policy_transition(const Cmdp &cmdp, const Matrix &policy) {
  const Idx n = idx(cmdp.n_states);
  Matrix p = Matrix::Zero(n, n);
  for (std::size_t a = 0; a < cmdp.n_actions; ++a) {
    p.noalias() += policy.col(idx(a)).asDiagonal() * cmdp.transition[a];
  }
  return p;
}

ExactValues policy_eval_exact(const Cmdp &cmdp, const Matrix &policy, Signal signal) {
  require_policy(cmdp, policy);
  if (!(cmdp.gamma < 1.0)) {
    throw InvalidInputError("policy evaluation requires gamma < 1");
  }
  const Idx n = idx(cmdp.n_states);
  const Matrix system = Matrix::Identity(n, n) - cmdp.gamma * policy_transition(cmdp, policy);
  const Vector g = policy_signal(cmdp, policy, signal);

  ExactValues out;
  out.signal = signal;
  out.v = system.partialPivLu().solve(g);
  const Matrix &table = signal_table(cmdp, signal);
  out.q.resize(n, idx(cmdp.n_actions));
  for (std::size_t a = 0; a < cmdp.n_actions; ++a) {
    out.q.col(idx(a)) = table.col(idx(a)) + cmdp.gamma * (cmdp.transition[a] * out.v);
  }
  out.a = out.q.colwise() - out.v;
  return out;
}

double value_at_rho0(const Cmdp &cmdp, const Matrix &policy, Signal signal) {
  return cmdp.rho0.dot(policy_eval_exact(cmdp, policy, signal).v);
}

Vector stationary_distribution(const Cmdp &cmdp, const Matrix &policy) {
  require_policy(cmdp, policy);
  const Idx n = idx(cmdp.n_states);
  const Matrix system =
      Matrix::Identity(n, n) - cmdp.gamma * policy_transition(cmdp, policy).transpose();
  return system.partialPivLu().solve((1.0 - cmdp.gamma) * cmdp.rho0);
}

Matrix state_action_distribution(const Cmdp &cmdp, const Matrix &policy) {
  const Vector d = stationary_distribution(cmdp, policy);
  return d.asDiagonal() * policy;
}

OptimalControl optimal_control(const Cmdp &cmdp, Signal signal, Goal goal, double tol,
                               const std::vector<std::vector<bool>> &allowed) {
  require_valid(cmdp);
  const Idx n = idx(cmdp.n_states);
  const Idx m = idx(cmdp.n_actions);
  const Matrix &table = signal_table(cmdp, signal);
  const double blocked = goal == Goal::kMaximize ? -std::numeric_limits<double>::infinity()
                                                 : std::numeric_limits<double>::infinity();
  Vector v = Vector::Zero(n);
  Matrix q(n, m);
  const auto backup = [&](const Vector &values) {
    for (Idx a = 0; a < m; ++a) {
      q.col(a) = table.col(a) + cmdp.gamma * (cmdp.transition[static_cast<std::size_t>(a)] * values);
    }
    if (!allowed.empty()) {
      for (Idx s = 0; s < n; ++s) {
        for (Idx a = 0; a < m; ++a) {
          if (!allowed[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]) {
            q(s, a) = blocked;
          }
        }
      }
    }
    return goal == Goal::kMaximize ? Vector(q.rowwise().maxCoeff())
                                   : Vector(q.rowwise().minCoeff());
  };
  // gamma^k shrinks the residual; the cap is generous for gamma <= 0.999.
  const int max_iter = 2000000;
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector next = backup(v);
    const double residual = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (residual < tol) {
      break;
    }
    if (iter + 1 == max_iter) {
      throw NonConvergenceError("value iteration did not reach the residual tolerance");
    }
  }
  backup(v);
  OptimalControl out;
  out.values = v;
  out.q = q;
  out.policy = greedy_policy(q, goal, allowed);
  return out;
}

Vector min_cost_values(const Cmdp &cmdp) {
  return optimal_control(cmdp, Signal::kCost, Goal::kMinimize, 1e-10).values;
}

FeasibilityReport feasible_set(const Cmdp &cmdp, double kappa,
                               const std::vector<bool> &dataset_states) {
  FeasibilityReport report;
  report.v_c_min = min_cost_values(cmdp);
  report.feasible_set.resize(cmdp.n_states);
  for (std::size_t s = 0; s < cmdp.n_states; ++s) {
    report.feasible_set[s] = report.v_c_min[idx(s)] <= kappa;
  }
  if (!dataset_states.empty()) {
    std::size_t in_data = 0;
    std::size_t feasible = 0;
    for (std::size_t s = 0; s < dataset_states.size() && s < cmdp.n_states; ++s) {
      if (dataset_states[s]) {
        ++in_data;
        feasible += report.feasible_set[s] ? 1 : 0;
      }
    }
    report.dataset_feasible_fraction =
        in_data == 0 ? 1.0 : static_cast<double>(feasible) / static_cast<double>(in_data);
  }
  return report;
}

Matrix cost_minimizing_policy(const Cmdp &cmdp) {
  return optimal_control(cmdp, Signal::kCost, Goal::kMinimize, kControlTol).policy;
}

Matrix safe_greedy_policy(const Cmdp &cmdp) {
  const OptimalControl safe = optimal_control(cmdp, Signal::kCost, Goal::kMinimize, kControlTol);
  std::vector<std::vector<bool>> allowed(cmdp.n_states, std::vector<bool>(cmdp.n_actions));
  for (std::size_t s = 0; s < cmdp.n_states; ++s) {
    for (std::size_t a = 0; a < cmdp.n_actions; ++a) {
      allowed[s][a] = safe.policy(idx(s), idx(a)) > 0.0;
    }
  }
  return optimal_control(cmdp, Signal::kReward, Goal::kMaximize, kControlTol, allowed).policy;
}

Matrix reward_greedy_policy(const Cmdp &cmdp) {
  return optimal_control(cmdp, Signal::kReward, Goal::kMaximize, kControlTol).policy;
}

std::pair<double, double> exact_return_bounds(const Cmdp &cmdp) {
  const Matrix worst = optimal_control(cmdp, Signal::kReward, Goal::kMinimize, kControlTol).policy;
  const Matrix best = reward_greedy_policy(cmdp);
  return {value_at_rho0(cmdp, worst, Signal::kReward),
          value_at_rho0(cmdp, best, Signal::kReward)};
}

StateSolution solve_nonparametric_state(std::span<const double> a_r, std::span<const double> a_c,
                                        std::span<const double> pi_beta_s, double lambda,
                                        double nu) {
  check_sizes(a_r, a_c, pi_beta_s, lambda);
  const auto support = support_of(pi_beta_s);
  std::vector<double> logits(support.size());
  for (std::size_t k = 0; k < support.size(); ++k) {
    const std::size_t x = support[k];
    logits[k] = std::log(pi_beta_s[x]) + (a_r[x] - nu * a_c[x]) / lambda;
  }
  StateSolution out;
  out.log_partition = log_sum_exp(logits);
  out.pi.assign(pi_beta_s.size(), 0.0);
  for (std::size_t k = 0; k < support.size(); ++k) {
    out.pi[support[k]] = std::exp(logits[k] - out.log_partition);
  }
  return out;
}

NonparametricSolution solve_nonparametric(const Matrix &a_r, const Matrix &a_c,
                                          const Matrix &pi_beta, double lambda,
                                          const Vector &nu) {
  NonparametricSolution out;
  out.lambda = lambda;
  out.nu = nu;
  out.pi_star = Matrix::Zero(pi_beta.rows(), pi_beta.cols());
  out.log_partition = Vector::Zero(pi_beta.rows());
  std::vector<double> r, c, b;
  for (Idx s = 0; s < pi_beta.rows(); ++s) {
    row_span(a_r, s, r);
    row_span(a_c, s, c);
    row_span(pi_beta, s, b);
    const StateSolution sol = solve_nonparametric_state(r, c, b, lambda, nu[s]);
    for (Idx x = 0; x < pi_beta.cols(); ++x) {
      out.pi_star(s, x) = sol.pi[static_cast<std::size_t>(x)];
    }
    out.log_partition[s] = sol.log_partition;
  }
  return out;
}

double regularized_objective(std::span<const double> pi, std::span<const double> a_r,
                             std::span<const double> a_c, std::span<const double> pi_beta_s,
                             double lambda, double nu) {
  double linear = 0.0;
  double kl = 0.0;
  for (std::size_t x = 0; x < pi.size(); ++x) {
    if (pi[x] <= 0.0) {
      continue;
    }
    if (pi_beta_s[x] <= 0.0) {
      return -std::numeric_limits<double>::infinity();
    }
    linear += pi[x] * (a_r[x] - nu * a_c[x]);
    kl += pi[x] * std::log(pi[x] / pi_beta_s[x]);
  }
  return linear - lambda * kl;
}

std::vector<double> solve_state_bruteforce(std::span<const double> a_r,
                                           std::span<const double> a_c,
                                           std::span<const double> pi_beta_s, double lambda,
                                           double nu, const BruteForceOptions &options) {
  check_sizes(a_r, a_c, pi_beta_s, lambda);
  if (pi_beta_s.size() > 16) {
    throw InvalidInputError("brute-force solver supports at most 16 actions");
  }
  const auto support = support_of(pi_beta_s);
  std::vector<double> best =
      exponentiated_gradient(a_r, a_c, pi_beta_s, lambda, nu, support, options);
  if (support.size() <= 3) {
    std::vector<double> grid = small_support_search(a_r, a_c, pi_beta_s, lambda, nu, support);
    // Gains below the ascent tolerance are rounding noise in a flat optimum.
    if (regularized_objective(grid, a_r, a_c, pi_beta_s, lambda, nu) >
        regularized_objective(best, a_r, a_c, pi_beta_s, lambda, nu) + options.improvement_tol) {
      best = std::move(grid);
    }
  }
  return best;
}

double kl_divergence_state(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw InvalidInputError("distributions differ in length");
  }
  double kl = 0.0;
  for (std::size_t x = 0; x < p.size(); ++x) {
    if (p[x] <= 0.0) {
      continue;
    }
    if (q[x] <= 0.0) {
      throw SupportViolationError(
          fmt::format("KL support violation: p places mass {} on action {} where q has none",
                      p[x], x));
    }
    kl += p[x] * std::log(p[x] / q[x]);
  }
  return std::max(0.0, kl);
}

double kl_divergence(const Matrix &p, const Matrix &q, const Vector &state_weights) {
  if (p.rows() != q.rows() || p.cols() != q.cols() || state_weights.size() != p.rows()) {
    throw InvalidInputError("KL operands have mismatched shapes");
  }
  double total = 0.0;
  std::vector<double> ps, qs;
  for (Idx s = 0; s < p.rows(); ++s) {
    if (state_weights[s] <= 0.0) {
      continue;
    }
    try {
      total += state_weights[s] * kl_divergence_state(row_span(p, s, ps), row_span(q, s, qs));
    } catch (const SupportViolationError &e) {
      throw SupportViolationError(fmt::format("state {}: {}", s, e.what()));
    }
  }
  return total;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  double tv = 0.0;
  for (std::size_t x = 0; x < p.size(); ++x) {
    tv += std::abs(p[x] - q[x]);
  }
  return 0.5 * tv;
}

} // namespace fawac
