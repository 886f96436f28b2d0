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
#include "fawac/types.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fawac {

enum class Variant { kFawacM, kFawacP, kFawacT, kBc, kAwr };

const char *to_string(Variant variant);
/// Accepts fawac_m, fawac_p, fawac_t, bc, awr (also with '-').
Variant parse_variant(const std::string &name);

struct ActorConfig {
  Variant variant = Variant::kFawacP;
  double lambda = 2.0;
  double nu_hat = 20.0;
  double nu_max = 20.0;
  double kappa = std::numeric_limits<double>::infinity();
  double multiplier_lr = 0.1;
  double actor_lr = 1.0;
  double weight_clip = 20.0;
  int iterations = 100;
  // Gradient steps on the weighted likelihood per iteration.
  int policy_steps = 50;
  std::uint64_t seed = 0;
  // FAWAC-M: update nu before the actor step within an iteration.
  bool multiplier_first = true;
  // FAWAC-M: one scalar multiplier instead of one per state.
  bool global_multiplier = false;
  // Re-fit critics to the current policy every k iterations (0 = never).
  int recompute_critics_every = 0;
};

void require_valid(const ActorConfig &config);

/// Softmax policy over logits. `support` masks the actions a state may
/// use: at dataset states only the dataset actions, elsewhere all actions.
struct PolicyTable {
  Matrix logits;
  std::vector<bool> support; // [state * n_actions + action]

  std::size_t n_states() const { return static_cast<std::size_t>(logits.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(logits.cols()); }
  bool supported(std::size_t s, std::size_t a) const { return support[s * n_actions() + a]; }

  Matrix probabilities() const;
  bool operator==(const PolicyTable &) const = default;
};

/// Zero logits restricted to the dataset's actions at visited states.
PolicyTable initial_policy(const Dataset &dataset);

struct MultiplierTable {
  Vector nu;
  double nu_max = 20.0;
  bool operator==(const MultiplierTable &) const = default;
};

MultiplierTable zero_multipliers(std::size_t n_states, double nu_max);

/// Per-pair counter of exponents that exceeded weight_clip.
struct ClipCounter {
  std::size_t count = 0;
};

double awr_weight_m(std::size_t s, std::size_t a, const CriticSet &critics,
                    const MultiplierTable &multipliers, double lambda,
                    double weight_clip = 20.0, ClipCounter *clips = nullptr);

double awr_weight_p(std::size_t s, std::size_t a, const CriticSet &critics, double nu_hat,
                    double lambda, double kappa, double weight_clip = 20.0,
                    ClipCounter *clips = nullptr);

double awr_weight_t(std::size_t s, std::size_t a, const CriticSet &critics, double lambda,
                    double weight_clip = 20.0, ClipCounter *clips = nullptr);

/// exp(A_r / lambda) with the same clip.
double awr_weight(std::size_t s, std::size_t a, const CriticSet &critics, double lambda,
                  double weight_clip = 20.0, ClipCounter *clips = nullptr);

struct WeightResult {
  std::vector<double> per_transition;
  // Distinct visited pairs whose raw exponent exceeded weight_clip.
  std::size_t clip_count = 0;
};

/// Weights of the configured variant for every flat transition.
WeightResult compute_weights(const Dataset &dataset, const CriticSet &critics,
                             const MultiplierTable &multipliers, const ActorConfig &config);

/// Gradient descent on sum_i w_i (-log pi(a_i|s_i)) / sum_i w_i. Each state's
/// gradient is divided by its weight share, which keeps the minimizer and
/// makes the step size independent of visit counts. Throws InvalidInputError
/// if every weight is zero.
PolicyTable update_policy(const PolicyTable &policy, const Dataset &dataset,
                          const std::vector<double> &weights, double actor_lr, int steps);

/// Weight-mass fractions W(s, x) / W(s): the minimizer of the weighted
/// likelihood at each visited state. Rows of unvisited states are zero.
Matrix weighted_mle_target(const Dataset &dataset, const std::vector<double> &weights);

struct MultiplierStep {
  int iteration = 0;
  std::size_t state = 0;
  double v_c_minus_kappa = 0.0;
  double raw_delta = 0.0; // before projection
  double nu_after = 0.0;
};

/// nu(s) <- clip(nu(s) + lr (v_c(s) - kappa), 0, nu_max) at visited states.
MultiplierTable update_multiplier_statewise(const MultiplierTable &multipliers,
                                            const CriticSet &critics,
                                            const std::vector<bool> &visited_states,
                                            double kappa, double multiplier_lr,
                                            std::vector<MultiplierStep> *audit = nullptr,
                                            int iteration = 0);

/// Projected ascent on nu (mean_v_c - kappa).
double update_multiplier_global(double nu, double mean_v_c, double kappa, double lr,
                                double nu_max);

struct HistoryRow {
  int iter = 0;
  double v_r_rho0 = 0.0;
  double v_c_rho0 = 0.0;
  double kl_to_beta = 0.0;
  double mean_nu = 0.0;
  std::size_t clip_count = 0;
};

struct TrainingHistory {
  std::vector<HistoryRow> rows;
  std::vector<MultiplierStep> multiplier_steps;
};

struct TrainingResult {
  PolicyTable policy;
  MultiplierTable multipliers;
  TrainingHistory history;
  CriticSet critics;
};

/// Visit-weighted KL(pi || pi_beta) over dataset states.
double kl_to_behavior(const Matrix &policy, const Dataset &dataset);

/// Runs the actor loop on pre-trained critics. When `env` is given, history
/// rows carry exact values at rho0; otherwise those columns are NaN.
TrainingResult train_actor(const Dataset &dataset, const CriticSet &critics,
                           const CriticConfig &critic_config, const ActorConfig &config,
                           const Cmdp *env = nullptr);

/// Trains behavior critics on the dataset, then runs train_actor.
TrainingResult train(const Dataset &dataset, double gamma, const CriticConfig &critic_config,
                     const ActorConfig &config, const Cmdp *env = nullptr);

std::string history_csv(const TrainingHistory &history);

std::string serialize_policy(const PolicyTable &policy, const ActorConfig &config,
                             const std::string &env_fingerprint);
PolicyTable parse_policy(const std::string &text);
void save_policy(const PolicyTable &policy, const ActorConfig &config,
                 const std::string &env_fingerprint, const std::filesystem::path &path);
PolicyTable load_policy(const std::filesystem::path &path);

} // namespace fawac
