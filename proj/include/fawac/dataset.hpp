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
#include "fawac/oracle.hpp"
#include "fawac/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fawac {

struct Trajectory {
  std::vector<std::size_t> states;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<double> costs;
  double discounted_reward_return = 0.0;
  double discounted_cost_return = 0.0;
  double undiscounted_cost_return = 0.0;
  std::uint64_t seed_tag = 0;

  std::size_t length() const { return states.size(); }
  bool operator==(const Trajectory &) const = default;
};

/// Recomputes the three stored returns from the step sequences.
void recompute_returns(Trajectory &trajectory, double gamma);

/// One dataset step. `done` marks the final step of its trajectory (the
/// absorbing step or the horizon cut); its target does not bootstrap.
struct Transition {
  std::size_t state = 0;
  std::size_t action = 0;
  double reward = 0.0;
  double cost = 0.0;
  std::size_t next_state = 0;
  bool done = false;
  bool operator==(const Transition &) const = default;
};

/// Empirical behavior policy from visit counts. Rows of unvisited states are
/// zero and flagged; they are never filled in.
struct BehaviorPolicy {
  Matrix counts;
  Matrix probs;
  std::vector<bool> visited;

  bool is_visited(std::size_t s) const { return visited[s]; }

  /// Probabilities with unvisited rows set to uniform. For exact evaluation
  /// against a CMDP only; training never reads the filled rows.
  Matrix completed() const;
};

struct Dataset {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  double gamma = 0.95;
  int horizon = 0;
  std::string env_fingerprint;
  std::vector<Trajectory> trajectories;
  std::vector<Transition> transitions;
  BehaviorPolicy behavior;

  /// Rebuilds flat transitions and the empirical behavior policy.
  void rebuild();

  bool empty() const { return trajectories.empty(); }

  /// Visit frequency per state over flat transitions (sums to 1 if nonempty).
  Vector state_frequency() const;

  /// Which states appear in the dataset (S_0).
  const std::vector<bool> &states_in_data() const { return behavior.visited; }

  bool operator==(const Dataset &other) const;
};

/// Samples one trajectory. Stops after the first step taken in an absorbing
/// state or at the horizon. Deterministic given the seed.
Trajectory rollout(const Cmdp &cmdp, const Matrix &policy, int horizon, std::uint64_t seed);

struct MixtureComponent {
  std::string name;
  Matrix policy;
  double weight = 0.0;
};

/// Largest-remainder apportionment of n items to the given weights.
std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t n);

/// Trajectory i uses seed_tag = seed + i. Component counts are exact.
Dataset generate_dataset(const Cmdp &cmdp, std::span<const MixtureComponent> mixture,
                         std::size_t n_trajectories, int horizon, std::uint64_t seed);

/// Reward-greedy (cost-ignoring), safe-greedy, and uniform behaviors. The two
/// greedy policies are mixed with uniform noise at rate `epsilon`.
std::vector<MixtureComponent> reference_mixture(const Cmdp &cmdp, double w_unsafe,
                                                double w_safe, double w_uniform,
                                                double epsilon);

/// Keeps round(keep_fraction * m) of the m trajectories whose undiscounted
/// cost return lies in [lo, hi] (seeded shuffle); others pass through.
/// Survivors keep their original relative order.
Dataset tempting_filter(const Dataset &dataset, double lo, double hi, double keep_fraction,
                        std::uint64_t seed);

// --- serialization ----------------------------------------------------------

std::string serialize_dataset(const Dataset &dataset);
void save_dataset(const Dataset &dataset, const std::filesystem::path &path);

struct LoadedDataset {
  Dataset dataset;
  std::vector<std::string> warnings;
};

LoadedDataset parse_dataset(const std::string &text, const Cmdp *against = nullptr);
LoadedDataset load_dataset(const std::filesystem::path &path, const Cmdp *against = nullptr);

// --- summaries --------------------------------------------------------------

struct TrajectoryRow {
  std::size_t traj_id = 0;
  double reward_return_disc = 0.0;
  double cost_return_disc = 0.0;
  double cost_return_undisc = 0.0;
  std::size_t length = 0;
};

struct DatasetStats {
  std::vector<TrajectoryRow> rows;
  std::vector<std::size_t> state_visits;
  double mean_reward_return = 0.0;
  double mean_cost_return = 0.0;
  double median_cost_return_undisc = 0.0;
  std::optional<double> feasible_fraction;
};

DatasetStats dataset_stats(const Dataset &dataset, const FeasibilityReport *feasibility = nullptr);

std::string stats_csv(const DatasetStats &stats);

double median(std::vector<double> values);

/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path &path, const std::string &contents);

} // namespace fawac
