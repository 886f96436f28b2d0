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

#include "fawac/dataset.hpp"
#include "fawac/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fawac {

enum class TargetUpdate { kHardEachStep, kPolyak };

struct CriticConfig {
  double expectile_reward = 0.7;
  double expectile_cost = 0.7;
  double learning_rate = 0.25;
  TargetUpdate target_update = TargetUpdate::kHardEachStep;
  double polyak_coefficient = 0.005;
  int epochs = 20000;
  // 0 selects full-batch steps.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  double convergence_tol = 1e-10;
  // Use the residual V - Q for the cost value step (lower expectile).
  bool cost_expectile_flipped = false;
};

/// Throws InvalidInputError on an out-of-range field.
void require_valid(const CriticConfig &config);

/// Tabular reward and cost critics. Entries of unvisited pairs stay at zero
/// and are masked out of every loss.
struct CriticSet {
  Matrix q_r;
  Vector v_r;
  Matrix q_c;
  Vector v_c;
  double expectile_reward = 0.7;
  double expectile_cost = 0.7;
  std::vector<bool> visit_mask; // [state * n_actions + action]

  std::size_t n_states() const { return static_cast<std::size_t>(q_r.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(q_r.cols()); }
  bool visited(std::size_t s, std::size_t a) const { return visit_mask[s * n_actions() + a]; }
  bool operator==(const CriticSet &) const = default;
};

struct CriticEpoch {
  int epoch = 0;
  double q_loss_reward = 0.0;
  double v_loss_reward = 0.0;
  double q_loss_cost = 0.0;
  double v_loss_cost = 0.0;
  double max_change = 0.0;
};

struct CriticTrainingResult {
  CriticSet critics;
  std::vector<CriticEpoch> history;
  bool converged = false;
};

/// |level - 1(u < 0)| u^2.
double expectile_loss(double u, double level);

/// Alternating Q (TD regression) and V (expectile regression) gradient steps
/// on the dataset. Terminal steps bootstrap from zero.
CriticTrainingResult train_critics(const Dataset &dataset, double gamma,
                                   const CriticConfig &config);

/// V-step only: fits V(s) to the `level` expectile of a frozen Q over the
/// dataset actions at s. Unvisited states return 0.
Vector fit_expectile_values(const Dataset &dataset, const Matrix &q, double level,
                            const CriticConfig &config);

/// Critics of a given policy on the dataset: Q regresses on
/// r + gamma E_{a'~pi}[Q(s', a')] with pi renormalized over dataset actions,
/// and V(s) = E_{a~pi}[Q(s, a)]. Used when critics are re-fit during actor
/// training.
CriticSet evaluate_policy_critics(const Dataset &dataset, double gamma, const Matrix &policy,
                                  const CriticConfig &config);

/// q - v for the chosen signal; UnvisitedPairError for pairs outside the data.
double advantage(const CriticSet &critics, std::size_t s, std::size_t a, Signal signal);

/// Advantage table with zeros at unvisited pairs.
Matrix advantage_table(const CriticSet &critics, Signal signal);

std::string serialize_critics(const CriticSet &critics, const CriticConfig &config,
                              const std::string &env_fingerprint);
CriticSet parse_critics(const std::string &text);
void save_critics(const CriticSet &critics, const CriticConfig &config,
                  const std::string &env_fingerprint, const std::filesystem::path &path);
CriticSet load_critics(const std::filesystem::path &path);

} // namespace fawac
