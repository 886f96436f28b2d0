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

#include "fawac/cmdp.hpp"
#include "fawac/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace fawac {

/// Exact infinite-horizon discounted values of a fixed policy.
/// a = q - v holds entrywise by construction.
struct ExactValues {
  Vector v;
  Matrix q;
  Matrix a;
  Signal signal = Signal::kReward;
};

struct FeasibilityReport {
  Vector v_c_min;
  std::vector<bool> feasible_set;
  // |S_f0| / |S_0| over the supplied dataset states; 1 when none supplied.
  double dataset_feasible_fraction = 1.0;
};

struct StateSolution {
  std::vector<double> pi;
  double log_partition = 0.0;
};

/// Closed-form policy for every state, plus log Z(s).
struct NonparametricSolution {
  Matrix pi_star;
  Vector log_partition;
  double lambda = 1.0;
  Vector nu;
};

/// Result of optimal-control value iteration together with a greedy policy
/// (ties shared uniformly within 1e-9).
struct OptimalControl {
  Vector values;
  Matrix q;
  Matrix policy;
};

enum class Goal { kMaximize, kMinimize };

// --- policy evaluation -----------------------------------------------------

/// Throws InvalidInputError unless each row of `policy` is a distribution.
void require_policy(const Cmdp &cmdp, const Matrix &policy);

/// Per-state signal averaged under the policy.
Vector policy_signal(const Cmdp &cmdp, const Matrix &policy, Signal signal);

/// P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
Matrix policy_transition(const Cmdp &cmdp, const Matrix &policy);

/// Solves (I - gamma P_pi) v = g_pi by dense LU, then q = g + gamma P v.
ExactValues policy_eval_exact(const Cmdp &cmdp, const Matrix &policy, Signal signal);

/// rho0-weighted value.
double value_at_rho0(const Cmdp &cmdp, const Matrix &policy, Signal signal);

/// d(s) = (1 - gamma) sum_t gamma^t Pr(s_t = s), solved exactly from rho0.
Vector stationary_distribution(const Cmdp &cmdp, const Matrix &policy);

/// d(s, a) = d(s) pi(a|s).
Matrix state_action_distribution(const Cmdp &cmdp, const Matrix &policy);

// --- optimal control and feasibility ----------------------------------------

/// Value iteration on the given signal to sup-norm residual below `tol`.
/// `allowed`, when non-empty, masks the admissible actions per state.
OptimalControl optimal_control(const Cmdp &cmdp, Signal signal, Goal goal,
                               double tol = 1e-10,
                               const std::vector<std::vector<bool>> &allowed = {});

/// Fixed point of v(s) = min_a [c(s,a) + gamma sum P v] (residual < 1e-10).
Vector min_cost_values(const Cmdp &cmdp);

/// Thresholds the minimal cost values at kappa. `dataset_states` marks S_0.
FeasibilityReport feasible_set(const Cmdp &cmdp, double kappa,
                               const std::vector<bool> &dataset_states = {});

/// Pure cost minimizer: uniform over the cost-minimal actions in each state.
Matrix cost_minimizing_policy(const Cmdp &cmdp);

/// Cost-minimal actions first, then reward-maximizing among them.
Matrix safe_greedy_policy(const Cmdp &cmdp);

/// Reward-maximizing policy that ignores cost.
Matrix reward_greedy_policy(const Cmdp &cmdp);

/// Exact rho0 returns of the reward-minimizing and reward-maximizing
/// (cost-ignoring) policies.
std::pair<double, double> exact_return_bounds(const Cmdp &cmdp);

// --- closed-form improvement and its brute-force cross-check ---------------

/// pi*(x) ∝ pi_beta(x) exp((a_r[x] - nu a_c[x]) / lambda), normalized with a
/// log-sum-exp partition function. Zero-mass behavior actions stay at zero.
StateSolution solve_nonparametric_state(std::span<const double> a_r,
                                        std::span<const double> a_c,
                                        std::span<const double> pi_beta_s,
                                        double lambda, double nu);

NonparametricSolution solve_nonparametric(const Matrix &a_r, const Matrix &a_c,
                                          const Matrix &pi_beta, double lambda,
                                          const Vector &nu);

/// sum_x pi(x) (a_r[x] - nu a_c[x]) - lambda KL(pi || pi_beta).
double regularized_objective(std::span<const double> pi, std::span<const double> a_r,
                             std::span<const double> a_c,
                             std::span<const double> pi_beta_s, double lambda,
                             double nu);

struct BruteForceOptions {
  double improvement_tol = 1e-12;
  int max_iterations = 100000;
};

/// Maximizes the regularized objective over the simplex without using the
/// closed form: exponentiated-gradient ascent with step halving, plus a
/// nested golden-section search when at most three actions carry mass.
/// Returns whichever candidate scores the higher objective.
std::vector<double> solve_state_bruteforce(std::span<const double> a_r,
                                           std::span<const double> a_c,
                                           std::span<const double> pi_beta_s,
                                           double lambda, double nu,
                                           const BruteForceOptions &options = {});

// --- divergences ------------------------------------------------------------

double kl_divergence_state(std::span<const double> p, std::span<const double> q);

/// sum_s w(s) KL(p(.|s) || q(.|s)); states with zero weight are skipped.
double kl_divergence(const Matrix &p, const Matrix &q, const Vector &state_weights);

double total_variation(std::span<const double> p, std::span<const double> q);

inline std::span<const double> row_span(const Matrix &m, Eigen::Index row,
                                        std::vector<double> &scratch) {
  scratch.resize(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    scratch[static_cast<std::size_t>(c)] = m(row, c);
  }
  return scratch;
}

} // namespace fawac
