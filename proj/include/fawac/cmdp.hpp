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

#include "fawac/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fawac {

/// Tabular constrained MDP. Transitions are stored one row-stochastic
/// |S| x |S| matrix per action: transition[a](s, s') = P(s' | s, a).
struct Cmdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<Matrix> transition;
  Matrix reward; // [state][action]
  Matrix cost;   // [state][action], nonnegative
  double gamma = 0.95;
  Vector rho0;
  int horizon = 60;
  double r_min = 0.0;
  double r_max = 0.0;

  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[a](static_cast<Eigen::Index>(s),
                         static_cast<Eigen::Index>(next));
  }

  /// Every action self-loops with zero reward and zero cost.
  bool is_absorbing(std::size_t s) const;

  /// Stable 64-bit FNV-1a digest over dimensions and tensors, hex-encoded.
  std::string fingerprint() const;
};

/// Returns one message per violated invariant; empty means valid.
std::vector<std::string> validate(const Cmdp &cmdp);

/// Throws InvalidSpecError listing every violation.
void require_valid(const Cmdp &cmdp);

enum class GridAction : std::size_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
inline constexpr std::size_t kGridActionCount = 4;

struct GridCell {
  int x = 0;
  int y = 0;
  bool operator==(const GridCell &) const = default;
};

struct HazardCell {
  GridCell cell;
  double cost = 1.0;
};

struct GoalCell {
  GridCell cell;
  double reward = 1.0;
};

struct GridworldSpec {
  int width = 1;
  int height = 1;
  std::vector<HazardCell> hazard_cells;
  std::vector<GoalCell> goal_cells;
  double step_penalty = 0.0;
  double slip_probability = 0.0;
  std::vector<GridCell> start_cells{GridCell{0, 0}};
  std::uint64_t seed = 0;
  // Extra hazards placed uniformly at random (by seed) on free cells.
  int random_hazard_count = 0;
  double random_hazard_cost = 1.0;
  double gamma = 0.95;
  int horizon = 60;
};

inline std::size_t cell_index(const GridworldSpec &spec, GridCell cell) {
  return static_cast<std::size_t>(cell.y) * static_cast<std::size_t>(spec.width) +
         static_cast<std::size_t>(cell.x);
}

/// Builds the gridworld CMDP. Rows are y (0 at the top), columns x.
/// Moving into a wall leaves the agent in place. Entering a goal pays its
/// reward; goals are absorbing. Acting inside a hazard cell emits its cost.
/// r_min / r_max are filled with the exact optimal and pessimal rho0 returns.
Cmdp make_gridworld(const GridworldSpec &spec);

/// Hazard set actually used by make_gridworld (configured plus seeded extras).
std::vector<HazardCell> resolved_hazards(const GridworldSpec &spec);

} // namespace fawac
