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

#include "fawac/cmdp.hpp"

#include "fawac/oracle.hpp"
#include "fawac/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fawac {

namespace {

constexpr double kStochasticTol = 1e-9;

class Fnv1a {
public:
  void bytes(const void *data, std::size_t size) {
    const auto *p = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t value) { bytes(&value, sizeof(value)); }
  void f64(double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    u64(bits);
  }
  std::uint64_t digest() const { return hash_; }

private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

bool inside(const GridworldSpec &spec, GridCell c) {
  return c.x >= 0 && c.y >= 0 && c.x < spec.width && c.y < spec.height;
}

GridCell step(const GridworldSpec &spec, GridCell c, GridAction a) {
  GridCell next = c;
  switch (a) {
  case GridAction::kUp:
    next.y -= 1;
    break;
  case GridAction::kDown:
    next.y += 1;
    break;
  case GridAction::kLeft:
    next.x -= 1;
    break;
  case GridAction::kRight:
    next.x += 1;
    break;
  }
  return inside(spec, next) ? next : c;
}

std::pair<GridAction, GridAction> lateral(GridAction a) {
  if (a == GridAction::kUp || a == GridAction::kDown) {
    return {GridAction::kLeft, GridAction::kRight};
  }
  return {GridAction::kUp, GridAction::kDown};
}

void check_spec(const GridworldSpec &spec) {
  std::vector<std::string> problems;
  if (spec.width < 1 || spec.height < 1) {
    problems.push_back("grid dimensions must be positive");
  }
  if (!(spec.slip_probability >= 0.0 && spec.slip_probability < 1.0)) {
    problems.push_back("slip_probability must lie in [0, 1)");
  }
  if (!(spec.gamma >= 0.0 && spec.gamma < 1.0)) {
    problems.push_back("gamma must lie in [0, 1)");
  }
  if (spec.horizon < 1) {
    problems.push_back("horizon must be at least 1");
  }
  if (spec.start_cells.empty()) {
    problems.push_back("at least one start cell is required");
  }
  if (spec.random_hazard_count < 0) {
    problems.push_back("random_hazard_count must be nonnegative");
  }
  for (const auto &h : spec.hazard_cells) {
    if (!inside(spec, h.cell)) {
      problems.push_back(fmt::format("hazard cell ({}, {}) outside grid", h.cell.x, h.cell.y));
    }
    if (!(h.cost >= 0.0)) {
      problems.push_back(fmt::format("hazard cell ({}, {}) has negative cost", h.cell.x, h.cell.y));
    }
  }
  for (const auto &g : spec.goal_cells) {
    if (!inside(spec, g.cell)) {
      problems.push_back(fmt::format("goal cell ({}, {}) outside grid", g.cell.x, g.cell.y));
    }
    for (const auto &h : spec.hazard_cells) {
      if (h.cell == g.cell) {
        problems.push_back(fmt::format("cell ({}, {}) is both goal and hazard", g.cell.x, g.cell.y));
      }
    }
  }
  for (const auto &s : spec.start_cells) {
    if (!inside(spec, s)) {
      problems.push_back(fmt::format("start cell ({}, {}) outside grid", s.x, s.y));
    }
  }
  if (!problems.empty()) {
    std::string message = "invalid gridworld spec:";
    for (const auto &p : problems) {
      message += "\n  - " + p;
    }
    throw InvalidSpecError(message);
  }
}

} // namespace

bool Cmdp::is_absorbing(std::size_t s) const {
  const auto row = static_cast<Eigen::Index>(s);
  for (std::size_t a = 0; a < n_actions; ++a) {
    const auto col = static_cast<Eigen::Index>(a);
    if (transition[a](row, row) != 1.0 || reward(row, col) != 0.0 ||
        cost(row, col) != 0.0) {
      return false;
    }
  }
  return true;
}

std::string Cmdp::fingerprint() const {
  Fnv1a h;
  h.u64(n_states);
  h.u64(n_actions);
  for (const auto &m : transition) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      h.f64(m.data()[i]);
    }
  }
  for (Eigen::Index i = 0; i < reward.size(); ++i) {
    h.f64(reward.data()[i]);
  }
  for (Eigen::Index i = 0; i < cost.size(); ++i) {
    h.f64(cost.data()[i]);
  }
  h.f64(gamma);
  for (Eigen::Index i = 0; i < rho0.size(); ++i) {
    h.f64(rho0[i]);
  }
  h.u64(static_cast<std::uint64_t>(horizon));
  return fmt::format("{:016x}", h.digest());
}

std::vector<std::string> validate(const Cmdp &cmdp) {
  std::vector<std::string> report;
  const auto n = static_cast<Eigen::Index>(cmdp.n_states);
  const auto m = static_cast<Eigen::Index>(cmdp.n_actions);
  if (cmdp.n_states == 0 || cmdp.n_actions == 0) {
    report.emplace_back("state and action counts must be positive");
    return report;
  }
  if (cmdp.transition.size() != cmdp.n_actions) {
    report.push_back(fmt::format("expected {} transition matrices, found {}",
                                 cmdp.n_actions, cmdp.transition.size()));
    return report;
  }
  for (std::size_t a = 0; a < cmdp.n_actions; ++a) {
    const Matrix &t = cmdp.transition[a];
    if (t.rows() != n || t.cols() != n) {
      report.push_back(fmt::format("transition matrix for action {} has shape {}x{}", a,
                                   t.rows(), t.cols()));
      continue;
    }
    for (Eigen::Index s = 0; s < n; ++s) {
      if ((t.row(s).array() < 0.0).any()) {
        report.push_back(fmt::format("transition row (s={}, a={}) has a negative entry", s, a));
      }
      const double sum = t.row(s).sum();
      if (!(std::abs(sum - 1.0) <= kStochasticTol)) {
        report.push_back(
            fmt::format("transition row (s={}, a={}) sums to {:.12g}, not 1", s, a, sum));
      }
    }
  }
  if (cmdp.reward.rows() != n || cmdp.reward.cols() != m) {
    report.emplace_back("reward table has the wrong shape");
  } else if (!cmdp.reward.allFinite()) {
    report.emplace_back("reward table has non-finite entries");
  }
  if (cmdp.cost.rows() != n || cmdp.cost.cols() != m) {
    report.emplace_back("cost table has the wrong shape");
  } else if ((cmdp.cost.array() < 0.0).any() || !cmdp.cost.allFinite()) {
    report.emplace_back("cost table has negative or non-finite entries");
  }
  if (!(cmdp.gamma >= 0.0 && cmdp.gamma < 1.0)) {
    report.push_back(fmt::format("discount gamma = {} is outside [0, 1)", cmdp.gamma));
  }
  if (cmdp.rho0.size() != n) {
    report.emplace_back("rho0 has the wrong length");
  } else {
    if ((cmdp.rho0.array() < 0.0).any()) {
      report.emplace_back("rho0 has a negative entry");
    }
    if (!(std::abs(cmdp.rho0.sum() - 1.0) <= kStochasticTol)) {
      report.push_back(fmt::format("rho0 sums to {:.12g}, not 1", cmdp.rho0.sum()));
    }
  }
  if (cmdp.horizon < 1) {
    report.emplace_back("horizon must be at least 1");
  }
  return report;
}

void require_valid(const Cmdp &cmdp) {
  const auto report = validate(cmdp);
  if (report.empty()) {
    return;
  }
  std::string message = "invalid CMDP:";
  for (const auto &line : report) {
    message += "\n  - " + line;
  }
  throw InvalidSpecError(message);
}

std::vector<HazardCell> resolved_hazards(const GridworldSpec &spec) {
  check_spec(spec);
  std::vector<HazardCell> hazards = spec.hazard_cells;
  if (spec.random_hazard_count == 0) {
    return hazards;
  }
  std::vector<GridCell> free_cells;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const GridCell c{x, y};
      const auto taken = [&](const auto &list, auto get) {
        return std::any_of(list.begin(), list.end(),
                           [&](const auto &item) { return get(item) == c; });
      };
      if (taken(spec.hazard_cells, [](const HazardCell &h) { return h.cell; }) ||
          taken(spec.goal_cells, [](const GoalCell &g) { return g.cell; }) ||
          taken(spec.start_cells, [](const GridCell &s) { return s; })) {
        continue;
      }
      free_cells.push_back(c);
    }
  }
  if (static_cast<std::size_t>(spec.random_hazard_count) > free_cells.size()) {
    throw InvalidSpecError("random_hazard_count exceeds the number of free cells");
  }
  Rng rng(spec.seed);
  rng.shuffle(free_cells);
  for (int i = 0; i < spec.random_hazard_count; ++i) {
    hazards.push_back(HazardCell{free_cells[static_cast<std::size_t>(i)],
                                 spec.random_hazard_cost});
  }
  return hazards;
}

Cmdp make_gridworld(const GridworldSpec &spec) {
  const auto hazards = resolved_hazards(spec);
  const std::size_t n = static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height);
  const auto ni = static_cast<Eigen::Index>(n);

  Vector hazard_cost = Vector::Zero(ni);
  for (const auto &h : hazards) {
    hazard_cost[static_cast<Eigen::Index>(cell_index(spec, h.cell))] += h.cost;
  }
  Vector goal_reward = Vector::Zero(ni);
  std::vector<bool> is_goal(n, false);
  for (const auto &g : spec.goal_cells) {
    const std::size_t idx = cell_index(spec, g.cell);
    is_goal[idx] = true;
    goal_reward[static_cast<Eigen::Index>(idx)] = g.reward;
  }

  Cmdp cmdp;
  cmdp.n_states = n;
  cmdp.n_actions = kGridActionCount;
  cmdp.transition.assign(kGridActionCount, Matrix::Zero(ni, ni));
  cmdp.reward = Matrix::Zero(ni, static_cast<Eigen::Index>(kGridActionCount));
  cmdp.cost = Matrix::Zero(ni, static_cast<Eigen::Index>(kGridActionCount));
  cmdp.gamma = spec.gamma;
  cmdp.horizon = spec.horizon;

  const double intended = 1.0 - spec.slip_probability;
  const double side = 0.5 * spec.slip_probability;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const GridCell here{x, y};
      const auto s = static_cast<Eigen::Index>(cell_index(spec, here));
      for (std::size_t ai = 0; ai < kGridActionCount; ++ai) {
        const auto col = static_cast<Eigen::Index>(ai);
        Matrix &t = cmdp.transition[ai];
        if (is_goal[static_cast<std::size_t>(s)]) {
          t(s, s) = 1.0;
          continue;
        }
        const auto a = static_cast<GridAction>(ai);
        const auto [left, right] = lateral(a);
        t(s, static_cast<Eigen::Index>(cell_index(spec, step(spec, here, a)))) += intended;
        if (side > 0.0) {
          t(s, static_cast<Eigen::Index>(cell_index(spec, step(spec, here, left)))) += side;
          t(s, static_cast<Eigen::Index>(cell_index(spec, step(spec, here, right)))) += side;
        }
        cmdp.reward(s, col) = t.row(s).dot(goal_reward) - spec.step_penalty;
        cmdp.cost(s, col) = hazard_cost[s];
      }
    }
  }

  cmdp.rho0 = Vector::Zero(ni);
  const double mass = 1.0 / static_cast<double>(spec.start_cells.size());
  for (const auto &c : spec.start_cells) {
    cmdp.rho0[static_cast<Eigen::Index>(cell_index(spec, c))] += mass;
  }
  require_valid(cmdp);

  const auto bounds = exact_return_bounds(cmdp);
  cmdp.r_min = bounds.first;
  cmdp.r_max = bounds.second;
  return cmdp;
}

} // namespace fawac
