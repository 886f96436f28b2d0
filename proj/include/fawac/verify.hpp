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
#include "fawac/critic.hpp"
#include "fawac/dataset.hpp"
#include "fawac/oracle.hpp"
#include "fawac/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fawac {

struct ClosedFormInstance {
  std::uint64_t seed = 0;
  std::size_t n_actions = 0;
  double lambda = 0.0;
  double nu = 0.0;
  double tv_distance = 0.0;
  // Brute-force objective minus closed-form objective.
  double objective_gap = 0.0;
  std::vector<double> closed_form;
  std::vector<double> brute_force;
};

struct ClosedFormReport {
  std::size_t instances = 0;
  double max_tv_distance = 0.0;
  double max_objective_gap = 0.0;
  std::uint64_t worst_seed = 0;
  std::vector<ClosedFormInstance> records;
};

struct ClosedFormOptions {
  bool zero_advantages = false;
  // Give the first behavior action zero mass.
  bool zero_mass_action = false;
  BruteForceOptions brute_force;
};

/// Instance i draws from derive_seed(seed, i): advantages ~ N(0, 1),
/// pi_beta ~ Dirichlet(1), lambda ~ U[0.5, 5], nu ~ U[0, 20]. Action counts
/// cycle through `action_counts`.
ClosedFormReport check_closed_form(std::size_t n_instances, std::span<const std::size_t> action_counts,
                             std::uint64_t seed, const ClosedFormOptions &options = {});

struct BoundReport {
  double lhs = 0.0;         // visit-weighted mean of V_c^{pi*} over dataset states
  double lhs_uniform = 0.0; // uniform mean over dataset states
  double kappa = 0.0;
  double delta_used = 0.0;
  double eps_c = 0.0;
  double rhs = 0.0;
  bool holds = false;
  bool holds_uniform = false;
  bool pi_k_feasible = false;
  double kl_pi_k = 0.0;
};

/// kappa + 2 sqrt(2 delta) gamma eps_c / (1 - gamma)^2.
double violation_bound_rhs(double kappa, double delta, double gamma, double eps_c);

/// Evaluates the bound exactly. `cost_values_pi_k` are the oracle cost
/// values of pi_k; `pi_beta` must have full rows (see
/// BehaviorPolicy::completed). KL terms are weighted by d^{pi_beta}.
/// `state_weights` weights the left-hand side over dataset states.
BoundReport violation_bound(const Cmdp &cmdp, const Matrix &pi_star, const Matrix &pi_k,
                        const Matrix &pi_beta, const ExactValues &cost_values_pi_k,
                        double kappa, const std::vector<bool> &dataset_states,
                        const Vector &state_weights);

/// Per-state multiplier making pi* satisfy
/// v_c(s) + E_{pi*}[a_c(s, .)] / (1 - gamma) <= kappa, found by bisection on
/// [0, nu_max]; 0 when already satisfied, nu_max when unattainable.
Vector dual_multipliers(const Matrix &a_r, const Matrix &a_c, const Matrix &pi_beta,
                        const Vector &v_c, double kappa, double gamma, double lambda,
                        double nu_max);

/// Dataset-weighted V_r on the oracle feasible set minus V_c off it.
double feasibility_objective(const Cmdp &cmdp, const Matrix &policy, double kappa,
                             const Dataset &dataset);

struct FeasibilityVerdict {
  bool feasible = false;
  std::optional<std::size_t> violating_state;
  double worst_v_c = 0.0;
  double realized_kl = 0.0;
};

/// V_c^pi(s) <= kappa on every dataset state and d^{pi_beta}-weighted
/// KL(pi || pi_beta) <= delta.
FeasibilityVerdict is_feasible_policy(const Cmdp &cmdp, const Matrix &policy,
                                      const Matrix &pi_beta, double kappa, double delta,
                                      const std::vector<bool> &dataset_states);

struct CenteringAudit {
  double max_oracle_residual = 0.0;
  std::optional<double> max_learned_residual;
};

/// max_s |sum_x pi(x|s) A_c(s, x)| with oracle advantages, and the same
/// residual from learned critics at dataset states when given.
CenteringAudit centering_audit(const Cmdp &cmdp, const Matrix &policy,
                               const CriticSet *learned = nullptr,
                               const std::vector<bool> &dataset_states = {});

struct NamedBound {
  std::string name;
  BoundReport report;
};

/// Structured report with per-check pass flags and worst-case values.
std::string verification_report_json(const ClosedFormReport *closed_form,
                                     const std::vector<NamedBound> &bounds,
                                     const CenteringAudit *centering);

} // namespace fawac
