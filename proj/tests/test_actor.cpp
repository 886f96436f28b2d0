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

#include "fawac/actor.hpp"
#include "fawac/harness.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace fawac;

namespace {

const std::filesystem::path kConfigDir = FAWAC_CONFIG_DIR;
const double kInf = std::numeric_limits<double>::infinity();

struct Reference {
  ExperimentConfig config;
  Cmdp env;
  Dataset dataset;
  CriticSet critics;
};

const Reference &reference() {
  static const Reference ref = [] {
    Reference r;
    r.config = load_config(kConfigDir / "ref-grid8-fawacp.ini");
    r.env = build_environment(r.config);
    r.dataset = build_dataset(r.config, r.env);
    r.critics = train_critics(r.dataset, r.env.gamma, r.config.critic).critics;
    return r;
  }();
  return ref;
}

// One state, two visited actions, with the given advantages.
CriticSet two_action_critics(double a_r0, double a_c0, double v_c = 0.0) {
  CriticSet c;
  c.q_r = Matrix(1, 2);
  c.q_r << a_r0, 0.0;
  c.v_r = Vector::Zero(1);
  c.q_c = Matrix(1, 2);
  c.q_c << v_c + a_c0, v_c;
  c.v_c = Vector::Constant(1, v_c);
  c.visit_mask = {true, true};
  return c;
}

ActorConfig config_for(Variant variant) {
  const Reference &ref = reference();
  ActorConfig config = actor_config_for(ref.config, variant, 0);
  return config;
}

double max_state_kl(const Matrix &p, const Matrix &q, const Dataset &dataset) {
  double worst = 0.0;
  for (std::size_t s = 0; s < dataset.n_states; ++s) {
    if (!dataset.behavior.is_visited(s)) {
      continue;
    }
    const auto si = static_cast<Eigen::Index>(s);
    std::vector<double> pv(static_cast<std::size_t>(p.cols()));
    std::vector<double> qs(pv.size());
    for (Eigen::Index a = 0; a < p.cols(); ++a) {
      pv[static_cast<std::size_t>(a)] = p(si, a);
      qs[static_cast<std::size_t>(a)] = q(si, a);
    }
    worst = std::max(worst, kl_divergence_state(pv, qs));
  }
  return worst;
}

} // namespace

TEST(Weights, FeasibilityWeightExamples) {
  const MultiplierTable any{Vector::Constant(1, 7.5), 20.0};
  const MultiplierTable two{Vector::Constant(1, 2.0), 20.0};
  EXPECT_EQ(awr_weight_m(0, 0, two_action_critics(0.0, 0.0), any, 2.0), 1.0);
  EXPECT_NEAR(awr_weight_m(0, 0, two_action_critics(2.0, 0.0), any, 2.0), std::exp(1.0), 1e-15);
  EXPECT_NEAR(awr_weight_m(0, 0, two_action_critics(2.0, 1.0), two, 2.0), 1.0, 1e-15);
}

TEST(Weights, PenaltyIndicator) {
  // v_c below kappa: indicator off, weight equals AWR exactly.
  const CriticSet below = two_action_critics(1.3, 0.8, 1.0);
  EXPECT_EQ(awr_weight_p(0, 0, below, 20.0, 2.0, 1.5), awr_weight(0, 0, below, 2.0));
  // Boundary counts as infeasible.
  const CriticSet at = two_action_critics(1.3, 0.8, 1.5);
  EXPECT_NEAR(awr_weight_p(0, 0, at, 2.0, 2.0, 1.5), std::exp((1.3 - 2.0 * 0.8) / 2.0), 1e-15);
  EXPECT_NE(awr_weight_p(0, 0, at, 2.0, 2.0, 1.5), awr_weight(0, 0, at, 2.0));
  EXPECT_EQ(awr_weight_p(0, 0, at, 20.0, 2.0, kInf), awr_weight(0, 0, at, 2.0));
}

TEST(Weights, TemptingWeight) {
  EXPECT_EQ(awr_weight_t(0, 1, two_action_critics(3.0, 2.0), 2.0), 1.0);
  EXPECT_NEAR(awr_weight_t(0, 0, two_action_critics(3.0, 2.0), 2.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(awr_weight_t(0, 0, two_action_critics(3.0, 2.0), 1e9), 1.0, 1e-8);
}

TEST(Weights, UnvisitedPairRejected) {
  CriticSet c = two_action_critics(1.0, 1.0);
  c.visit_mask = {true, false};
  const MultiplierTable nu = zero_multipliers(1, 20.0);
  EXPECT_THROW(awr_weight_m(0, 1, c, nu, 2.0), UnvisitedPairError);
  EXPECT_THROW(awr_weight_p(0, 1, c, 1.0, 2.0, 1.0), UnvisitedPairError);
  EXPECT_THROW(awr_weight_t(0, 1, c, 2.0), UnvisitedPairError);
  EXPECT_THROW(awr_weight(0, 1, c, 2.0), UnvisitedPairError);
}

TEST(Weights, ClipAccountingCountsDistinctPairs) {
  const Reference &ref = reference();
  ActorConfig config = config_for(Variant::kAwr);
  config.lambda = 0.005;
  const WeightResult result =
      compute_weights(ref.dataset, ref.critics, zero_multipliers(ref.dataset.n_states, 20.0), config);
  std::size_t expected = 0;
  for (std::size_t s = 0; s < ref.dataset.n_states; ++s) {
    for (std::size_t a = 0; a < ref.dataset.n_actions; ++a) {
      if (ref.critics.visited(s, a) &&
          advantage(ref.critics, s, a, Signal::kReward) / config.lambda > config.weight_clip) {
        ++expected;
      }
    }
  }
  EXPECT_GT(expected, 0u);
  EXPECT_EQ(result.clip_count, expected);
  for (double w : result.per_transition) {
    EXPECT_LE(w, std::exp(config.weight_clip));
  }
}

TEST(Weights, PenaltyAtInfiniteKappaEqualsAwrBitwise) {
  const Reference &ref = reference();
  ActorConfig p = config_for(Variant::kFawacP);
  p.kappa = kInf;
  const ActorConfig awr = config_for(Variant::kAwr);
  const MultiplierTable nu = zero_multipliers(ref.dataset.n_states, 20.0);
  EXPECT_EQ(compute_weights(ref.dataset, ref.critics, nu, p).per_transition,
            compute_weights(ref.dataset, ref.critics, nu, awr).per_transition);
}

TEST(PolicyUpdate, UniformWeightsRecoverBehavior) {
  const Reference &ref = reference();
  const std::vector<double> ones(ref.dataset.transitions.size(), 1.0);
  const PolicyTable pi = update_policy(initial_policy(ref.dataset), ref.dataset, ones, 1.0, 5000);
  EXPECT_LT(max_state_kl(pi.probabilities(), ref.dataset.behavior.probs, ref.dataset), 1e-4);
}

TEST(PolicyUpdate, ConcentratedWeightsSelectOneAction) {
  const Reference &ref = reference();
  const Dataset &d = ref.dataset;
  // Pick a state with at least two dataset actions and favor its first one.
  std::size_t state = 0;
  std::size_t favored = 0;
  for (std::size_t s = 0; s < d.n_states; ++s) {
    if ((d.behavior.counts.row(static_cast<Eigen::Index>(s)).array() > 0.0).count() >= 2) {
      state = s;
      break;
    }
  }
  for (const Transition &t : d.transitions) {
    if (t.state == state) {
      favored = t.action;
      break;
    }
  }
  std::vector<double> weights(d.transitions.size(), 1.0);
  for (std::size_t i = 0; i < d.transitions.size(); ++i) {
    if (d.transitions[i].state == state && d.transitions[i].action != favored) {
      weights[i] = 0.0;
    }
  }
  const PolicyTable pi = update_policy(initial_policy(d), d, weights, 1.0, 5000);
  EXPECT_GE(pi.probabilities()(static_cast<Eigen::Index>(state), static_cast<Eigen::Index>(favored)),
            0.999);
}

TEST(PolicyUpdate, ConvergesToWeightMassFractions) {
  const Reference &ref = reference();
  const Dataset &d = ref.dataset;
  Rng rng(17);
  std::vector<double> weights(d.transitions.size());
  for (double &w : weights) {
    w = rng.exponential();
  }
  const PolicyTable pi = update_policy(initial_policy(d), d, weights, 1.0, 5000);
  const Matrix probs = pi.probabilities();
  // Independent fixed point: accumulate weight mass per (s, x).
  Matrix mass = Matrix::Zero(static_cast<Eigen::Index>(d.n_states), static_cast<Eigen::Index>(d.n_actions));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    mass(static_cast<Eigen::Index>(d.transitions[i].state),
         static_cast<Eigen::Index>(d.transitions[i].action)) += weights[i];
  }
  for (std::size_t s = 0; s < d.n_states; ++s) {
    if (!d.behavior.is_visited(s)) {
      continue;
    }
    const auto si = static_cast<Eigen::Index>(s);
    for (Eigen::Index a = 0; a < mass.cols(); ++a) {
      EXPECT_NEAR(probs(si, a), mass(si, a) / mass.row(si).sum(), 1e-4);
    }
  }
  const Matrix target = weighted_mle_target(d, weights);
  for (std::size_t s = 0; s < d.n_states; ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    const double total = mass.row(si).sum();
    for (Eigen::Index a = 0; a < mass.cols(); ++a) {
      EXPECT_NEAR(target(si, a), total > 0.0 ? mass(si, a) / total : 0.0, 1e-12);
    }
  }
}

TEST(PolicyUpdate, RejectsAllZeroWeights) {
  const Reference &ref = reference();
  const std::vector<double> zeros(ref.dataset.transitions.size(), 0.0);
  EXPECT_THROW(update_policy(initial_policy(ref.dataset), ref.dataset, zeros, 1.0, 10),
               InvalidInputError);
}

TEST(PolicyTable, RowsNormalizedAndSupportRespected) {
  const Reference &ref = reference();
  const PolicyTable pi = initial_policy(ref.dataset);
  const Matrix probs = pi.probabilities();
  for (std::size_t s = 0; s < pi.n_states(); ++s) {
    EXPECT_NEAR(probs.row(static_cast<Eigen::Index>(s)).sum(), 1.0, 1e-9);
    for (std::size_t a = 0; a < pi.n_actions(); ++a) {
      const bool in_data = ref.dataset.behavior.counts(static_cast<Eigen::Index>(s),
                                                       static_cast<Eigen::Index>(a)) > 0.0;
      const bool expected = ref.dataset.behavior.is_visited(s) ? in_data : true;
      EXPECT_EQ(pi.supported(s, a), expected);
      if (!expected) {
        EXPECT_EQ(probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)), 0.0);
      }
    }
  }
}

TEST(Multiplier, StatewiseExamples) {
  const CriticSet high = two_action_critics(0.0, 0.0, 10.0);
  const std::vector<bool> visited{true};
  MultiplierTable nu = zero_multipliers(1, 20.0);
  EXPECT_NEAR(update_multiplier_statewise(nu, high, visited, 7.32, 0.1).nu[0], 0.268, 1e-12);
  const CriticSet low = two_action_critics(0.0, 0.0, 5.0);
  EXPECT_EQ(update_multiplier_statewise(nu, low, visited, 7.32, 0.1).nu[0], 0.0);
  for (int i = 0; i < 200; ++i) {
    nu = update_multiplier_statewise(nu, high, visited, 7.32, 0.1);
    ASSERT_GE(nu.nu[0], 0.0);
    ASSERT_LE(nu.nu[0], 20.0);
  }
  EXPECT_EQ(nu.nu[0], 20.0);
}

TEST(Multiplier, UnvisitedStatesUntouched) {
  CriticSet c = two_action_critics(0.0, 0.0, 10.0);
  MultiplierTable nu{Vector::Constant(1, 3.0), 20.0};
  EXPECT_EQ(update_multiplier_statewise(nu, c, {false}, 1.0, 0.5).nu[0], 3.0);
}

TEST(Multiplier, GlobalExamples) {
  EXPECT_EQ(update_multiplier_global(4.0, 2.5, 2.5, 0.3, 20.0), 4.0);
  EXPECT_GT(update_multiplier_global(4.0, 3.0, 2.5, 0.3, 20.0), 4.0);
  EXPECT_EQ(update_multiplier_global(0.0, 1.0, 2.5, 0.3, 20.0), 0.0);
  EXPECT_EQ(update_multiplier_global(19.9, 100.0, 2.5, 0.3, 20.0), 20.0);
}

TEST(Training, BehaviorCloningRecoversBehavior) {
  const Reference &ref = reference();
  ActorConfig config = config_for(Variant::kBc);
  config.iterations = 200;
  const TrainingResult r = train_actor(ref.dataset, ref.critics, ref.config.critic, config);
  EXPECT_LT(max_state_kl(r.policy.probabilities(), ref.dataset.behavior.probs, ref.dataset), 1e-3);
}

TEST(Training, PenaltyWithInfiniteKappaMatchesAwr) {
  const Reference &ref = reference();
  ActorConfig p = config_for(Variant::kFawacP);
  p.kappa = kInf;
  const TrainingResult a = train_actor(ref.dataset, ref.critics, ref.config.critic, p);
  const TrainingResult b =
      train_actor(ref.dataset, ref.critics, ref.config.critic, config_for(Variant::kAwr));
  EXPECT_EQ(a.policy.logits, b.policy.logits);
}

TEST(Training, TemptingAtHighTemperatureMatchesBc) {
  const Reference &ref = reference();
  ActorConfig t = config_for(Variant::kFawacT);
  t.lambda = 1e4;
  ActorConfig bc = config_for(Variant::kBc);
  const TrainingResult a = train_actor(ref.dataset, ref.critics, ref.config.critic, t);
  const TrainingResult b = train_actor(ref.dataset, ref.critics, ref.config.critic, bc);
  EXPECT_LT(max_state_kl(a.policy.probabilities(), b.policy.probabilities(), ref.dataset), 1e-2);
}

TEST(Training, MultiplierLawsHoldOnHistory) {
  const Reference &ref = reference();
  ActorConfig m = config_for(Variant::kFawacM);
  m.nu_max = 20.0;
  m.nu_hat = 20.0;
  const TrainingResult r = train_actor(ref.dataset, ref.critics, ref.config.critic, m, &ref.env);
  ASSERT_FALSE(r.history.multiplier_steps.empty());
  for (const MultiplierStep &step : r.history.multiplier_steps) {
    const double sign = (step.v_c_minus_kappa > 0.0) - (step.v_c_minus_kappa < 0.0);
    const double dir = (step.raw_delta > 0.0) - (step.raw_delta < 0.0);
    EXPECT_EQ(sign, dir);
    EXPECT_GE(step.nu_after, 0.0);
    EXPECT_LE(step.nu_after, 20.0);
  }
  EXPECT_EQ(r.history.rows.size(), static_cast<std::size_t>(m.iterations));
  for (const HistoryRow &row : r.history.rows) {
    EXPECT_TRUE(std::isfinite(row.v_c_rho0));
    EXPECT_GE(row.mean_nu, 0.0);
    EXPECT_LE(row.mean_nu, 20.0);
  }
}

TEST(Training, MultiplierOrderAndGlobalOptionsRun) {
  const Reference &ref = reference();
  ActorConfig m = config_for(Variant::kFawacM);
  m.iterations = 10;
  const TrainingResult first = train_actor(ref.dataset, ref.critics, ref.config.critic, m);
  m.multiplier_first = false;
  const TrainingResult after = train_actor(ref.dataset, ref.critics, ref.config.critic, m);
  EXPECT_NE(first.policy.logits, after.policy.logits);
  m.global_multiplier = true;
  const TrainingResult global = train_actor(ref.dataset, ref.critics, ref.config.critic, m);
  for (Eigen::Index s = 1; s < global.multipliers.nu.size(); ++s) {
    if (ref.dataset.behavior.is_visited(static_cast<std::size_t>(s))) {
      EXPECT_GE(global.multipliers.nu[s], 0.0);
      EXPECT_LE(global.multipliers.nu[s], m.nu_max);
    }
  }
}

TEST(Training, RecomputedCriticsStayFinite) {
  const Reference &ref = reference();
  ActorConfig p = config_for(Variant::kFawacP);
  p.iterations = 6;
  p.recompute_critics_every = 3;
  const TrainingResult r = train_actor(ref.dataset, ref.critics, ref.config.critic, p, &ref.env);
  EXPECT_TRUE(r.policy.logits.allFinite());
  EXPECT_NE(r.critics, ref.critics);
}

TEST(Training, Deterministic) {
  const Reference &ref = reference();
  const ActorConfig m = config_for(Variant::kFawacM);
  const TrainingResult a = train_actor(ref.dataset, ref.critics, ref.config.critic, m, &ref.env);
  const TrainingResult b = train_actor(ref.dataset, ref.critics, ref.config.critic, m, &ref.env);
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_EQ(a.multipliers, b.multipliers);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
}

TEST(Training, HistoryCsvHeader) {
  TrainingHistory h;
  h.rows.push_back(HistoryRow{0, 1.0, 2.0, 0.5, 0.0, 3});
  const std::string csv = history_csv(h);
  EXPECT_EQ(csv.rfind("iter,v_r_rho0,v_c_rho0,kl_to_beta,mean_nu,clip_count\n", 0), 0u);
}

TEST(Training, ConfigValidation) {
  ActorConfig config;
  config.lambda = 0.0;
  EXPECT_THROW(require_valid(config), InvalidInputError);
  config.lambda = 1.0;
  config.actor_lr = -1.0;
  EXPECT_THROW(require_valid(config), InvalidInputError);
  EXPECT_EQ(parse_variant("fawac-m"), Variant::kFawacM);
  EXPECT_EQ(parse_variant("bc"), Variant::kBc);
  EXPECT_STREQ(to_string(Variant::kFawacT), "fawac_t");
  EXPECT_THROW(parse_variant("ppo"), InvalidInputError);
}

TEST(PolicySnapshot, RoundTripIsBitExact) {
  const Reference &ref = reference();
  const ActorConfig p = config_for(Variant::kFawacP);
  const TrainingResult r = train_actor(ref.dataset, ref.critics, ref.config.critic, p);
  const std::string text = serialize_policy(r.policy, p, ref.dataset.env_fingerprint);
  const PolicyTable loaded = parse_policy(text);
  EXPECT_EQ(loaded, r.policy);
  EXPECT_EQ(serialize_policy(loaded, p, ref.dataset.env_fingerprint), text);
}
