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

#include "fawac/verify.hpp"

#include "fawac/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace fawac {

namespace {

using Idx = Eigen::Index;

Idx idx(std::size_t i) { return static_cast<Idx>(i); }

Vector stationary_weighted(const Cmdp &cmdp, const Matrix &pi_beta) {
  return stationary_distribution(cmdp, pi_beta);
}

double weighted_kl(const Matrix &p, const Matrix &q, const Vector &weights) {
  return kl_divergence(p, q, weights);
}

} // namespace

ClosedFormReport check_closed_form(std::size_t n_instances, std::span<const std::size_t> action_counts,
                             std::uint64_t seed, const ClosedFormOptions &options) {
  if (action_counts.empty()) {
    throw InvalidInputError("at least one action count is required");
  }
  for (std::size_t count : action_counts) {
    if (count < 1 || count > 16) {
      throw InvalidInputError("action counts must lie in [1, 16]");
    }
  }
  ClosedFormReport report;
  report.instances = n_instances;
  for (std::size_t i = 0; i < n_instances; ++i) {
    ClosedFormInstance inst;
    inst.seed = derive_seed(seed, i);
    inst.n_actions = action_counts[i % action_counts.size()];
    Rng rng(inst.seed);
    const std::size_t m = inst.n_actions;
    std::vector<double> a_r(m, 0.0);
    std::vector<double> a_c(m, 0.0);
    std::vector<double> beta(m, 0.0);
    for (std::size_t x = 0; x < m; ++x) {
      a_r[x] = rng.normal();
      a_c[x] = rng.normal();
    }
    if (options.zero_advantages) {
      std::fill(a_r.begin(), a_r.end(), 0.0);
      std::fill(a_c.begin(), a_c.end(), 0.0);
    }
    double total = 0.0;
    for (std::size_t x = 0; x < m; ++x) {
      beta[x] = rng.exponential();
      total += beta[x];
    }
    if (options.zero_mass_action && m > 1) {
      total -= beta[0];
      beta[0] = 0.0;
    }
    for (double &b : beta) {
      b /= total;
    }
    inst.lambda = 0.5 + 4.5 * rng.uniform();
    inst.nu = 20.0 * rng.uniform();

    inst.closed_form = solve_nonparametric_state(a_r, a_c, beta, inst.lambda, inst.nu).pi;
    try {
      inst.brute_force =
          solve_state_bruteforce(a_r, a_c, beta, inst.lambda, inst.nu, options.brute_force);
    } catch (const NonConvergenceError &e) {
      throw NonConvergenceError(fmt::format("instance seed {}: {}", inst.seed, e.what()));
    }
    inst.tv_distance = total_variation(inst.closed_form, inst.brute_force);
    inst.objective_gap =
        regularized_objective(inst.brute_force, a_r, a_c, beta, inst.lambda, inst.nu) -
        regularized_objective(inst.closed_form, a_r, a_c, beta, inst.lambda, inst.nu);
    if (inst.tv_distance > report.max_tv_distance || i == 0) {
      report.max_tv_distance = inst.tv_distance;
      report.worst_seed = inst.seed;
    }
    report.max_objective_gap = std::max(report.max_objective_gap, inst.objective_gap);
    report.records.push_back(std::move(inst));
  }
  return report;
}

double violation_bound_rhs(double kappa, double delta, double gamma, double eps_c) {
  return kappa + 2.0 * std::sqrt(2.0 * delta) * gamma * eps_c / ((1.0 - gamma) * (1.0 - gamma));
}

BoundReport violation_bound(const Cmdp &cmdp, const Matrix &pi_star, const Matrix &pi_k,
                        const Matrix &pi_beta, const ExactValues &cost_values_pi_k,
                        double kappa, const std::vector<bool> &dataset_states,
                        const Vector &state_weights) {
  require_policy(cmdp, pi_star);
  require_policy(cmdp, pi_k);
  require_policy(cmdp, pi_beta);
  if (cost_values_pi_k.signal != Signal::kCost) {
    throw InvalidInputError("violation_bound needs the cost values of pi_k");
  }
  if (dataset_states.size() != cmdp.n_states ||
      state_weights.size() != static_cast<Idx>(cmdp.n_states)) {
    throw InvalidInputError("dataset state mask and weights must cover every state");
  }
  BoundReport report;
  report.kappa = kappa;
  const Vector d_beta = stationary_weighted(cmdp, pi_beta);
  report.delta_used = weighted_kl(pi_star, pi_beta, d_beta);
  report.kl_pi_k = weighted_kl(pi_k, pi_beta, d_beta);

  const ExactValues star_cost = policy_eval_exact(cmdp, pi_star, Signal::kCost);
  double weighted = 0.0;
  double weight_total = 0.0;
  double uniform = 0.0;
  std::size_t count = 0;
  bool pi_k_safe = true;
  for (std::size_t s = 0; s < cmdp.n_states; ++s) {
    if (!dataset_states[s]) {
      continue;
    }
    const Idx si = idx(s);
    weighted += state_weights[si] * star_cost.v[si];
    weight_total += state_weights[si];
    uniform += star_cost.v[si];
    ++count;
    const double centered = pi_star.row(si).dot(cost_values_pi_k.a.row(si));
    report.eps_c = std::max(report.eps_c, std::abs(centered));
    if (cost_values_pi_k.v[si] > kappa) {
      pi_k_safe = false;
    }
  }
  if (count == 0 || !(weight_total > 0.0)) {
    throw InvalidInputError("violation_bound needs at least one weighted dataset state");
  }
  report.lhs = weighted / weight_total;
  report.lhs_uniform = uniform / static_cast<double>(count);
  report.rhs = violation_bound_rhs(kappa, report.delta_used, cmdp.gamma, report.eps_c);
  report.holds = report.lhs <= report.rhs + 1e-9;
  report.holds_uniform = report.lhs_uniform <= report.rhs + 1e-9;
  report.pi_k_feasible = pi_k_safe && report.kl_pi_k <= report.delta_used;
  return report;
}

Vector dual_multipliers(const Matrix &a_r, const Matrix &a_c, const Matrix &pi_beta,
                        const Vector &v_c, double kappa, double gamma, double lambda,
                        double nu_max) {
  const Idx n = a_r.rows();
  Vector nu = Vector::Zero(n);
  std::vector<double> r_row;
  std::vector<double> c_row;
  std::vector<double> b_row;
  for (Idx s = 0; s < n; ++s) {
    const auto ar = row_span(a_r, s, r_row);
    const auto ac = row_span(a_c, s, c_row);
    const auto beta = row_span(pi_beta, s, b_row);
    const auto slack = [&](double value) {
      const auto pi = solve_nonparametric_state(ar, ac, beta, lambda, value).pi;
      double expected = 0.0;
      for (std::size_t x = 0; x < pi.size(); ++x) {
        expected += pi[x] * ac[x];
      }
      return v_c[s] + expected / (1.0 - gamma) - kappa;
    };
    if (slack(0.0) <= 0.0) {
      continue;
    }
    if (slack(nu_max) > 0.0) {
      nu[s] = nu_max;
      continue;
    }
    double lo = 0.0;
    double hi = nu_max;
    for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
      const double mid = 0.5 * (lo + hi);
      if (slack(mid) > 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    nu[s] = hi;
  }
  return nu;
}

double feasibility_objective(const Cmdp &cmdp, const Matrix &policy, double kappa,
                             const Dataset &dataset) {
  const FeasibilityReport feasible = feasible_set(cmdp, kappa);
  const ExactValues v_r = policy_eval_exact(cmdp, policy, Signal::kReward);
  const ExactValues v_c = policy_eval_exact(cmdp, policy, Signal::kCost);
  const Vector freq = dataset.state_frequency();
  double total = 0.0;
  for (std::size_t s = 0; s < cmdp.n_states; ++s) {
    const Idx si = idx(s);
    total += freq[si] * (feasible.feasible_set[s] ? v_r.v[si] : -v_c.v[si]);
  }
  return total;
}

FeasibilityVerdict is_feasible_policy(const Cmdp &cmdp, const Matrix &policy,
                                      const Matrix &pi_beta, double kappa, double delta,
                                      const std::vector<bool> &dataset_states) {
  require_policy(cmdp, policy);
  require_policy(cmdp, pi_beta);
  FeasibilityVerdict verdict;
  const ExactValues v_c = policy_eval_exact(cmdp, policy, Signal::kCost);
  verdict.worst_v_c = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < cmdp.n_states; ++s) {
    if (!dataset_states.empty() && !dataset_states[s]) {
      continue;
    }
    const double value = v_c.v[idx(s)];
    if (value > verdict.worst_v_c) {
      verdict.worst_v_c = value;
    }
    if (value > kappa && !verdict.violating_state) {
      verdict.violating_state = s;
    }
  }
  verdict.realized_kl = weighted_kl(policy, pi_beta, stationary_weighted(cmdp, pi_beta));
  verdict.feasible = !verdict.violating_state && verdict.realized_kl <= delta;
  return verdict;
}

CenteringAudit centering_audit(const Cmdp &cmdp, const Matrix &policy,
                               const CriticSet *learned,
                               const std::vector<bool> &dataset_states) {
  CenteringAudit audit;
  const ExactValues v_c = policy_eval_exact(cmdp, policy, Signal::kCost);
  for (Idx s = 0; s < policy.rows(); ++s) {
    audit.max_oracle_residual =
        std::max(audit.max_oracle_residual, std::abs(policy.row(s).dot(v_c.a.row(s))));
  }
  if (learned != nullptr) {
    double worst = 0.0;
    for (std::size_t s = 0; s < learned->n_states(); ++s) {
      if (!dataset_states.empty() && !dataset_states[s]) {
        continue;
      }
      double mass = 0.0;
      double centered = 0.0;
      for (std::size_t a = 0; a < learned->n_actions(); ++a) {
        if (!learned->visited(s, a)) {
          continue;
        }
        const double p = policy(idx(s), idx(a));
        mass += p;
        centered += p * advantage(*learned, s, a, Signal::kCost);
      }
      if (mass > 0.0) {
        worst = std::max(worst, std::abs(centered / mass));
      }
    }
    audit.max_learned_residual = worst;
  }
  return audit;
}

std::string verification_report_json(const ClosedFormReport *closed_form,
                                     const std::vector<NamedBound> &bounds,
                                     const CenteringAudit *centering) {
  nlohmann::ordered_json doc;
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  if (closed_form != nullptr) {
    nlohmann::ordered_json c;
    c["check"] = "closed_form_vs_bruteforce";
    c["instances"] = closed_form->instances;
    c["max_tv_distance"] = closed_form->max_tv_distance;
    c["max_objective_gap"] = closed_form->max_objective_gap;
    c["worst_seed"] = closed_form->worst_seed;
    c["pass"] = closed_form->max_tv_distance < 1e-5;
    checks.push_back(c);
  }
  std::size_t violations = 0;
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (const auto &bound : bounds) {
    const BoundReport &b = bound.report;
    nlohmann::ordered_json c;
    c["name"] = bound.name;
    c["lhs"] = b.lhs;
    c["lhs_uniform"] = b.lhs_uniform;
    c["kappa"] = b.kappa;
    c["delta_used"] = b.delta_used;
    c["eps_c"] = b.eps_c;
    c["rhs"] = b.rhs;
    c["holds"] = b.holds;
    c["holds_uniform"] = b.holds_uniform;
    c["pi_k_feasible"] = b.pi_k_feasible;
    c["kl_pi_k"] = b.kl_pi_k;
    if (b.pi_k_feasible && !b.holds) {
      ++violations;
    }
    cases.push_back(c);
  }
  if (!bounds.empty()) {
    nlohmann::ordered_json c;
    c["check"] = "constraint_violation_bound";
    c["cases"] = cases;
    c["violations_with_feasible_pi_k"] = violations;
    c["pass"] = violations == 0;
    checks.push_back(c);
  }
  if (centering != nullptr) {
    nlohmann::ordered_json c;
    c["check"] = "advantage_centering";
    c["max_oracle_residual"] = centering->max_oracle_residual;
    if (centering->max_learned_residual) {
      c["max_learned_residual"] = *centering->max_learned_residual;
    } else {
      c["max_learned_residual"] = nullptr;
    }
    c["pass"] = centering->max_oracle_residual < 1e-8;
    checks.push_back(c);
  }
  bool all = true;
  for (const auto &c : checks) {
    all = all && c["pass"].get<bool>();
  }
  doc["pass"] = all;
  doc["checks"] = checks;
  return doc.dump(2) + "\n";
}

} // namespace fawac
