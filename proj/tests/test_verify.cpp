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
#include "fawac/harness.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>

using namespace fawac;

namespace {

const std::filesystem::path kConfigDir = FAWAC_CONFIG_DIR;

struct Reference {
  ExperimentConfig config;
  Cmdp env;
  Dataset dataset;
  CriticSet critics;
  double kappa = 0.0;
};

const Reference &reference() {
  static const Reference ref = [] {
    Reference r;
    r.config = load_config(kConfigDir / "ref-grid8-fawacp.ini");
    r.env = build_environment(r.config);
    r.dataset = build_dataset(r.config, r.env);
    r.critics = train_critics(r.dataset, r.env.gamma, r.config.critic).critics;
    r.kappa = training_kappa(r.config);
    return r;
  }();
  return ref;
}

Cmdp zero_cost_corridor() {
  GridworldSpec spec;
  spec.width = 4;
  spec.height = 2;
  spec.goal_cells = {GoalCell{{3, 0}, 1.0}};
  spec.start_cells = {{0, 1}};
  spec.slip_probability = 0.2;
  return make_gridworld(spec);
}

Dataset uniform_dataset(const Cmdp &c, std::size_t n) {
  const Matrix uniform = Matrix::Constant(static_cast<Eigen::Index>(c.n_states),
                                          static_cast<Eigen::Index>(c.n_actions),
                                          1.0 / static_cast<double>(c.n_actions));
  const std::vector<MixtureComponent> mix{{"uniform", uniform, 1.0}};
  return generate_dataset(c, mix, n, c.horizon, 1);
}

double visit_weighted(const Vector &values, const Dataset &d) {
  return d.state_frequency().dot(values);
}

} // namespace

TEST(ClosedForm, ZeroAdvantagesGiveBehavior) {
  const std::size_t counts[] = {2, 3, 4, 8};
  ClosedFormOptions options;
  options.zero_advantages = true;
  const ClosedFormReport report = check_closed_form(20, counts, 3, options);
  EXPECT_LT(report.max_tv_distance, 1e-9);
}

TEST(ClosedForm, StandardSuiteAgrees) {
  const std::size_t counts[] = {4};
  const ClosedFormReport report = check_closed_form(200, counts, 2024);
  EXPECT_EQ(report.instances, 200u);
  EXPECT_EQ(report.records.size(), 200u);
  EXPECT_LT(report.max_tv_distance, 1e-5) << "worst seed " << report.worst_seed;
  for (const ClosedFormInstance &r : report.records) {
    EXPECT_GE(r.tv_distance, 0.0);
    EXPECT_GE(r.lambda, 0.5);
    EXPECT_LE(r.lambda, 5.0);
    EXPECT_GE(r.nu, 0.0);
    EXPECT_LE(r.nu, 20.0);
    // The closed form is the minimizer, so brute force cannot beat it.
    EXPECT_GE(r.objective_gap, -1e-10);
  }
}

TEST(ClosedForm, ZeroMassActionStaysZero) {
  const std::size_t counts[] = {3, 5};
  ClosedFormOptions options;
  options.zero_mass_action = true;
  const ClosedFormReport report = check_closed_form(10, counts, 8, options);
  for (const ClosedFormInstance &r : report.records) {
    EXPECT_EQ(r.closed_form[0], 0.0);
    EXPECT_EQ(r.brute_force[0], 0.0);
  }
}

TEST(ClosedForm, MixedActionCountsAndLimits) {
  const std::size_t counts[] = {2, 7, 16};
  const ClosedFormReport report = check_closed_form(9, counts, 5);
  EXPECT_EQ(report.records[1].n_actions, 7u);
  EXPECT_EQ(report.records[2].closed_form.size(), 16u);
  const std::size_t too_many[] = {17};
  EXPECT_THROW(check_closed_form(1, too_many, 5), InvalidInputError);
}

TEST(Bound, RhsFormula) {
  EXPECT_EQ(violation_bound_rhs(1.5, 0.0, 0.9, 3.0), 1.5);
  EXPECT_NEAR(violation_bound_rhs(1.5, 0.02, 0.9, 0.3), 1.5 + 2.0 * std::sqrt(0.04) * 0.9 * 0.3 / 0.01, 1e-12);
  EXPECT_GE(violation_bound_rhs(2.0, 0.5, 0.95, 0.0), 2.0);
}

TEST(Bound, CollapsesWhenAllPoliciesAreBehavior) {
  const Reference &ref = reference();
  const Matrix beta = ref.dataset.behavior.completed();
  const ExactValues cost = policy_eval_exact(ref.env, beta, Signal::kCost);
  const double kappa = cost.v.maxCoeff() + 1.0;
  const BoundReport b = violation_bound(ref.env, beta, beta, beta, cost, kappa,
                                    ref.dataset.states_in_data(), ref.dataset.state_frequency());
  EXPECT_EQ(b.delta_used, 0.0);
  EXPECT_EQ(b.rhs, kappa);
  EXPECT_LE(b.lhs, kappa);
  EXPECT_TRUE(b.holds);
  EXPECT_TRUE(b.pi_k_feasible);
  EXPECT_NEAR(b.lhs, visit_weighted(cost.v, ref.dataset), 1e-12);
}

TEST(Bound, ZeroCostEnvironment) {
  const Cmdp c = zero_cost_corridor();
  const Dataset d = uniform_dataset(c, 50);
  const Matrix beta = d.behavior.completed();
  const Matrix pi_k = fawac::testing::random_policy(c.n_states, c.n_actions, 4);
  const ExactValues reward = policy_eval_exact(c, pi_k, Signal::kReward);
  const ExactValues cost = policy_eval_exact(c, pi_k, Signal::kCost);
  const NonparametricSolution star =
      solve_nonparametric(reward.a, cost.a, beta, 1.0, Vector::Zero(8));
  const BoundReport b =
      violation_bound(c, star.pi_star, pi_k, beta, cost, 0.5, d.states_in_data(), d.state_frequency());
  EXPECT_EQ(b.eps_c, 0.0);
  EXPECT_EQ(b.rhs, 0.5);
  EXPECT_EQ(b.lhs, 0.0);
  EXPECT_TRUE(b.holds);
}

TEST(Bound, FieldsAgreeWithDirectComputation) {
  const Reference &ref = reference();
  const Matrix beta = ref.dataset.behavior.completed();
  const Matrix pi_k = train_variant(ref.config, ref.env, ref.dataset, ref.critics,
                                    Variant::kFawacP, 0)
                          .policy.probabilities();
  const ExactValues reward = policy_eval_exact(ref.env, pi_k, Signal::kReward);
  const ExactValues cost = policy_eval_exact(ref.env, pi_k, Signal::kCost);
  const Vector nu = dual_multipliers(reward.a, cost.a, beta, cost.v, ref.kappa, ref.env.gamma,
                                     2.0, 20.0);
  const Matrix star = solve_nonparametric(reward.a, cost.a, beta, 2.0, nu).pi_star;
  const BoundReport b = violation_bound(ref.env, star, pi_k, beta, cost, ref.kappa,
                                    ref.dataset.states_in_data(), ref.dataset.state_frequency());
  const Vector occupancy = stationary_distribution(ref.env, beta);
  EXPECT_NEAR(b.delta_used, kl_divergence(star, beta, occupancy), 1e-12);
  EXPECT_NEAR(b.kl_pi_k, kl_divergence(pi_k, beta, occupancy), 1e-12);
  double eps = 0.0;
  for (std::size_t s = 0; s < ref.env.n_states; ++s) {
    if (ref.dataset.behavior.is_visited(s)) {
      const auto si = static_cast<Eigen::Index>(s);
      eps = std::max(eps, std::abs(star.row(si).dot(cost.a.row(si))));
    }
  }
  EXPECT_NEAR(b.eps_c, eps, 1e-12);
  const Vector star_cost = policy_eval_exact(ref.env, star, Signal::kCost).v;
  EXPECT_NEAR(b.lhs, visit_weighted(star_cost, ref.dataset), 1e-12);
  EXPECT_NEAR(b.rhs, violation_bound_rhs(ref.kappa, b.delta_used, ref.env.gamma, b.eps_c), 1e-15);
  EXPECT_GE(b.rhs, b.kappa);
  EXPECT_EQ(b.holds, b.lhs <= b.rhs + 1e-9);
}

TEST(Bound, NeverViolatedOnReferenceSweep) {
  const Reference &ref = reference();
  std::vector<std::pair<std::string, Matrix>> policies;
  for (Variant v : {Variant::kBc, Variant::kAwr, Variant::kFawacP, Variant::kFawacM}) {
    policies.emplace_back(to_string(v), train_variant(ref.config, ref.env, ref.dataset,
                                                      ref.critics, v, 0)
                                            .policy.probabilities());
  }
  policies.emplace_back("behavior", ref.dataset.behavior.completed());
  policies.emplace_back("cost_min", cost_minimizing_policy(ref.env));
  const BoundSuite suite =
      bound_suite(ref.env, ref.dataset, policies, ref.kappa, {0.05, 0.1, 0.5, 2.0}, 20.0);
  EXPECT_EQ(suite.cases.size(), 6u * 2u * 4u * 3u);
  EXPECT_GE(suite.feasible, 1u);
  EXPECT_EQ(suite.violations, 0u);
  EXPECT_GE(suite.worst_margin, 0.0);
}

TEST(Bound, DualMultipliersMeetTheLinearizedConstraint) {
  const Reference &ref = reference();
  const Matrix beta = ref.dataset.behavior.completed();
  const ExactValues reward = policy_eval_exact(ref.env, beta, Signal::kReward);
  const ExactValues cost = policy_eval_exact(ref.env, beta, Signal::kCost);
  const double kappa = 0.5;
  const Vector nu =
      dual_multipliers(reward.a, cost.a, beta, cost.v, kappa, ref.env.gamma, 0.5, 20.0);
  const Matrix star = solve_nonparametric(reward.a, cost.a, beta, 0.5, nu).pi_star;
  for (Eigen::Index s = 0; s < nu.size(); ++s) {
    EXPECT_GE(nu[s], 0.0);
    EXPECT_LE(nu[s], 20.0);
    const double slack =
        cost.v[s] + star.row(s).dot(cost.a.row(s)) / (1.0 - ref.env.gamma) - kappa;
    if (nu[s] > 0.0 && nu[s] < 20.0) {
      EXPECT_NEAR(slack, 0.0, 1e-6);
    } else if (nu[s] == 0.0) {
      EXPECT_LE(slack, 0.0);
    }
  }
}

TEST(Bound, SupportViolationPropagates) {
  const Reference &ref = reference();
  Matrix beta = ref.dataset.behavior.completed();
  const ExactValues cost = policy_eval_exact(ref.env, beta, Signal::kCost);
  Matrix star = Matrix::Constant(beta.rows(), beta.cols(), 0.25);
  Matrix narrow = beta;
  narrow.row(0).setZero();
  narrow(0, 0) = 1.0;
  EXPECT_THROW(violation_bound(ref.env, star, beta, narrow, cost, 1.0, ref.dataset.states_in_data(),
                           ref.dataset.state_frequency()),
               SupportViolationError);
}

TEST(Objective, DegenerateIndicators) {
  const Reference &ref = reference();
  const Matrix beta = ref.dataset.behavior.completed();
  const Vector v_r = policy_eval_exact(ref.env, beta, Signal::kReward).v;
  const Vector v_c = policy_eval_exact(ref.env, beta, Signal::kCost).v;
  EXPECT_NEAR(feasibility_objective(ref.env, beta, 1e9, ref.dataset),
              visit_weighted(v_r, ref.dataset), 1e-12);
  EXPECT_NEAR(feasibility_objective(ref.env, beta, -1.0, ref.dataset),
              -visit_weighted(v_c, ref.dataset), 1e-12);
}

TEST(Objective, PenaltyVariantBeatsCloning) {
  const Reference &ref = reference();
  const Matrix p = train_variant(ref.config, ref.env, ref.dataset, ref.critics, Variant::kFawacP, 0)
                       .policy.probabilities();
  const Matrix bc = train_variant(ref.config, ref.env, ref.dataset, ref.critics, Variant::kBc, 0)
                        .policy.probabilities();
  const double p_score = feasibility_objective(ref.env, p, ref.kappa, ref.dataset);
  const double bc_score = feasibility_objective(ref.env, bc, ref.kappa, ref.dataset);
  EXPECT_GE(p_score, bc_score);
}

TEST(Feasibility, Examples) {
  const Cmdp c = zero_cost_corridor();
  const Dataset d = uniform_dataset(c, 30);
  const Matrix beta = d.behavior.completed();
  for (double kappa : {0.0, 1.0}) {
    for (double delta : {0.0, 0.1}) {
      const FeasibilityVerdict v = is_feasible_policy(c, beta, beta, kappa, delta, d.states_in_data());
      EXPECT_TRUE(v.feasible);
      EXPECT_EQ(v.realized_kl, 0.0);
    }
  }
  const FeasibilityVerdict bad = is_feasible_policy(c, beta, beta, -1.0, 1.0, d.states_in_data());
  EXPECT_FALSE(bad.feasible);
  ASSERT_TRUE(bad.violating_state.has_value());
  EXPECT_TRUE(d.states_in_data()[*bad.violating_state]);
}

TEST(Feasibility, DivergenceConditionUsesBehaviorOccupancy) {
  const Reference &ref = reference();
  const Matrix beta = ref.dataset.behavior.completed();
  const Matrix safe = cost_minimizing_policy(ref.env);
  // The cost-minimizing policy is deterministic, so it has to stay inside
  // pi_beta's support for the divergence to be finite; mix it with pi_beta.
  const Matrix mixed = 0.5 * safe + 0.5 * beta;
  const double kl = kl_divergence(mixed, beta, stationary_distribution(ref.env, beta));
  EXPECT_TRUE(is_feasible_policy(ref.env, mixed, beta, 1e9, kl, ref.dataset.states_in_data()).feasible);
  EXPECT_FALSE(
      is_feasible_policy(ref.env, mixed, beta, 1e9, 0.5 * kl, ref.dataset.states_in_data()).feasible);
}

TEST(Centering, OracleExactAndLearnedReported) {
  const Reference &ref = reference();
  const Matrix beta = ref.dataset.behavior.completed();
  const CenteringAudit audit =
      centering_audit(ref.env, beta, &ref.critics, ref.dataset.states_in_data());
  EXPECT_LT(audit.max_oracle_residual, 1e-8);
  ASSERT_TRUE(audit.max_learned_residual.has_value());
  EXPECT_TRUE(std::isfinite(*audit.max_learned_residual));
  EXPECT_FALSE(centering_audit(ref.env, beta).max_learned_residual.has_value());
}

TEST(Report, StructuredJson) {
  const std::size_t counts[] = {4};
  const ClosedFormReport closed_form = check_closed_form(5, counts, 1);
  BoundReport ok;
  ok.pi_k_feasible = true;
  ok.holds = true;
  BoundReport broken = ok;
  broken.holds = false;
  const CenteringAudit centering{1e-12, std::nullopt};
  const auto doc = nlohmann::json::parse(
      verification_report_json(&closed_form, {{"ok", ok}, {"broken", broken}}, &centering));
  EXPECT_FALSE(doc["pass"].get<bool>());
  ASSERT_EQ(doc["checks"].size(), 3u);
  EXPECT_TRUE(doc["checks"][0]["pass"].get<bool>());
  EXPECT_EQ(doc["checks"][1]["violations_with_feasible_pi_k"].get<int>(), 1);
  EXPECT_TRUE(doc["checks"][2]["max_learned_residual"].is_null());
}
