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

#include "fawac/dataset.hpp"

#include "fawac/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fawac {

namespace {

using Idx = Eigen::Index;
using ordered_json = nlohmann::ordered_json;

Idx idx(std::size_t i) { return static_cast<Idx>(i); }

std::size_t sample_row(Rng &rng, const Matrix &m, std::size_t row, std::vector<double> &scratch) {
  return rng.categorical(row_span(m, idx(row), scratch));
}

template <typename T>
std::vector<T> read_array(const ordered_json &record, const char *key, std::size_t line) {
  if (!record.contains(key) || !record[key].is_array()) {
    throw ParseError(fmt::format("line {}: missing array field \"{}\"", line, key));
  }
  try {
    return record[key].get<std::vector<T>>();
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(fmt::format("line {}: field \"{}\": {}", line, key, e.what()));
  }
}

} // namespace

void recompute_returns(Trajectory &trajectory, double gamma) {
  double discount = 1.0;
  trajectory.discounted_reward_return = 0.0;
  trajectory.discounted_cost_return = 0.0;
  trajectory.undiscounted_cost_return = 0.0;
  for (std::size_t t = 0; t < trajectory.rewards.size(); ++t) {
    trajectory.discounted_reward_return += discount * trajectory.rewards[t];
    trajectory.discounted_cost_return += discount * trajectory.costs[t];
    trajectory.undiscounted_cost_return += trajectory.costs[t];
    discount *= gamma;
  }
}

Matrix BehaviorPolicy::completed() const {
  Matrix out = probs;
  for (Idx s = 0; s < out.rows(); ++s) {
    if (!visited[static_cast<std::size_t>(s)]) {
      out.row(s).setConstant(1.0 / static_cast<double>(out.cols()));
    }
  }
  return out;
}

void Dataset::rebuild() {
  transitions.clear();
  const Idx n = idx(n_states);
  const Idx m = idx(n_actions);
  behavior.counts = Matrix::Zero(n, m);
  behavior.probs = Matrix::Zero(n, m);
  behavior.visited.assign(n_states, false);
  for (const auto &traj : trajectories) {
    const std::size_t len = traj.length();
    for (std::size_t t = 0; t < len; ++t) {
      Transition step;
      step.state = traj.states[t];
      step.action = traj.actions[t];
      step.reward = traj.rewards[t];
      step.cost = traj.costs[t];
      step.done = t + 1 == len;
      step.next_state = step.done ? traj.states[t] : traj.states[t + 1];
      transitions.push_back(step);
      behavior.counts(idx(step.state), idx(step.action)) += 1.0;
    }
  }
  for (Idx s = 0; s < n; ++s) {
    const double total = behavior.counts.row(s).sum();
    if (total > 0.0) {
      behavior.visited[static_cast<std::size_t>(s)] = true;
      behavior.probs.row(s) = behavior.counts.row(s) / total;
    }
  }
}

Vector Dataset::state_frequency() const {
  Vector freq = Vector::Zero(idx(n_states));
  for (const auto &t : transitions) {
    freq[idx(t.state)] += 1.0;
  }
  if (!transitions.empty()) {
    freq /= static_cast<double>(transitions.size());
  }
  return freq;
}

bool Dataset::operator==(const Dataset &other) const {
  return n_states == other.n_states && n_actions == other.n_actions && gamma == other.gamma &&
         horizon == other.horizon && env_fingerprint == other.env_fingerprint &&
         trajectories == other.trajectories && transitions == other.transitions &&
         behavior.counts == other.behavior.counts && behavior.probs == other.behavior.probs &&
         behavior.visited == other.behavior.visited;
}

Trajectory rollout(const Cmdp &cmdp, const Matrix &policy, int horizon, std::uint64_t seed) {
  require_policy(cmdp, policy);
  Rng rng(seed);
  std::vector<double> scratch;
  std::vector<double> rho(cmdp.rho0.data(), cmdp.rho0.data() + cmdp.rho0.size());
  std::size_t s = rng.categorical(rho);

  Trajectory traj;
  traj.seed_tag = seed;
  for (int t = 0; t < horizon; ++t) {
    const std::size_t a = sample_row(rng, policy, s, scratch);
    traj.states.push_back(s);
    traj.actions.push_back(a);
    traj.rewards.push_back(cmdp.reward(idx(s), idx(a)));
    traj.costs.push_back(cmdp.cost(idx(s), idx(a)));
    if (cmdp.is_absorbing(s)) {
      break;
    }
    s = sample_row(rng, cmdp.transition[a], s, scratch);
  }
  recompute_returns(traj, cmdp.gamma);
  return traj;
}

std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t n) {
  if (weights.empty()) {
    throw InvalidInputError("invalid mixture: no components");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) {
      throw InvalidInputError("invalid mixture: negative weight");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidInputError(fmt::format("invalid mixture: weights sum to {}, not 1", total));
  }
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> remainder(weights.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] * static_cast<double>(n);
    // Guard against 0.3 * 10 = 2.9999999999999996.
    const double floored = std::floor(exact + 1e-9);
    counts[k] = static_cast<std::size_t>(floored);
    remainder[k] = exact - floored;
    assigned += counts[k];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i) {
    ++counts[order[i % order.size()]];
    ++assigned;
  }
  return counts;
}

Dataset generate_dataset(const Cmdp &cmdp, std::span<const MixtureComponent> mixture,
                         std::size_t n_trajectories, int horizon, std::uint64_t seed) {
  require_valid(cmdp);
  if (horizon < 1) {
    throw InvalidInputError("horizon must be at least 1");
  }
  std::vector<double> weights;
  for (const auto &c : mixture) {
    require_policy(cmdp, c.policy);
    weights.push_back(c.weight);
  }
  const auto counts = apportion(weights, n_trajectories);
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    labels.insert(labels.end(), counts[k], k);
  }
  Rng assign(derive_seed(seed, 0x6d6978));
  assign.shuffle(labels);

  Dataset data;
  data.n_states = cmdp.n_states;
  data.n_actions = cmdp.n_actions;
  data.gamma = cmdp.gamma;
  data.horizon = horizon;
  data.env_fingerprint = cmdp.fingerprint();
  data.trajectories.reserve(n_trajectories);
  for (std::size_t i = 0; i < n_trajectories; ++i) {
    data.trajectories.push_back(rollout(cmdp, mixture[labels[i]].policy, horizon, seed + i));
  }
  data.rebuild();
  return data;
}

std::vector<MixtureComponent> reference_mixture(const Cmdp &cmdp, double w_unsafe,
                                                double w_safe, double w_uniform,
                                                double epsilon) {
  const Matrix uniform = Matrix::Constant(idx(cmdp.n_states), idx(cmdp.n_actions),
                                          1.0 / static_cast<double>(cmdp.n_actions));
  const auto soften = [&](const Matrix &greedy) {
    return Matrix((1.0 - epsilon) * greedy + epsilon * uniform);
  };
  return {
      MixtureComponent{"reward_greedy", soften(reward_greedy_policy(cmdp)), w_unsafe},
      MixtureComponent{"safe_greedy", soften(safe_greedy_policy(cmdp)), w_safe},
      MixtureComponent{"uniform", uniform, w_uniform},
  };
}

Dataset tempting_filter(const Dataset &dataset, double lo, double hi, double keep_fraction,
                        std::uint64_t seed) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw InvalidInputError("keep_fraction must lie in [0, 1]");
  }
  if (!(lo <= hi)) {
    throw InvalidInputError("tempting interval requires lo <= hi");
  }
  std::vector<std::size_t> matching;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const double c = dataset.trajectories[i].undiscounted_cost_return;
    if (c >= lo && c <= hi) {
      matching.push_back(i);
    }
  }
  const auto keep =
      static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(matching.size())));
  Rng rng(seed);
  rng.shuffle(matching);
  std::vector<bool> dropped(dataset.trajectories.size(), false);
  for (std::size_t k = keep; k < matching.size(); ++k) {
    dropped[matching[k]] = true;
  }

  Dataset out;
  out.n_states = dataset.n_states;
  out.n_actions = dataset.n_actions;
  out.gamma = dataset.gamma;
  out.horizon = dataset.horizon;
  out.env_fingerprint = dataset.env_fingerprint;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    if (!dropped[i]) {
      out.trajectories.push_back(dataset.trajectories[i]);
    }
  }
  out.rebuild();
  return out;
}

std::string serialize_dataset(const Dataset &dataset) {
  std::string out;
  ordered_json header;
  header["env_fingerprint"] = dataset.env_fingerprint;
  header["gamma"] = dataset.gamma;
  header["horizon"] = dataset.horizon;
  header["n_states"] = dataset.n_states;
  header["n_actions"] = dataset.n_actions;
  out += header.dump();
  out += '\n';
  for (const auto &traj : dataset.trajectories) {
    ordered_json record;
    record["states"] = traj.states;
    record["actions"] = traj.actions;
    record["rewards"] = traj.rewards;
    record["costs"] = traj.costs;
    record["seed_tag"] = traj.seed_tag;
    out += record.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset &dataset, const std::filesystem::path &path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

LoadedDataset parse_dataset(const std::string &text, const Cmdp *against) {
  LoadedDataset loaded;
  Dataset &data = loaded.dataset;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    ordered_json record;
    try {
      record = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error &e) {
      throw ParseError(fmt::format("line {}: malformed record: {}", line_no, e.what()));
    }
    if (!record.is_object()) {
      throw ParseError(fmt::format("line {}: expected a JSON object", line_no));
    }
    if (!have_header) {
      try {
        data.env_fingerprint = record.at("env_fingerprint").get<std::string>();
        data.gamma = record.at("gamma").get<double>();
        data.horizon = record.at("horizon").get<int>();
        data.n_states = record.at("n_states").get<std::size_t>();
        data.n_actions = record.at("n_actions").get<std::size_t>();
      } catch (const nlohmann::json::exception &e) {
        throw ParseError(fmt::format("line {}: bad header: {}", line_no, e.what()));
      }
      have_header = true;
      continue;
    }
    Trajectory traj;
    traj.states = read_array<std::size_t>(record, "states", line_no);
    traj.actions = read_array<std::size_t>(record, "actions", line_no);
    traj.rewards = read_array<double>(record, "rewards", line_no);
    traj.costs = read_array<double>(record, "costs", line_no);
    if (!record.contains("seed_tag") || !record["seed_tag"].is_number_unsigned()) {
      throw ParseError(fmt::format("line {}: missing integer field \"seed_tag\"", line_no));
    }
    traj.seed_tag = record["seed_tag"].get<std::uint64_t>();
    const std::size_t len = traj.states.size();
    if (traj.actions.size() != len || traj.rewards.size() != len || traj.costs.size() != len) {
      throw ParseError(fmt::format("line {}: step sequences differ in length", line_no));
    }
    if (len == 0 || (data.horizon > 0 && len > static_cast<std::size_t>(data.horizon))) {
      throw ParseError(fmt::format("line {}: trajectory length {} outside [1, horizon]", line_no, len));
    }
    for (std::size_t t = 0; t < len; ++t) {
      if (traj.states[t] >= data.n_states || traj.actions[t] >= data.n_actions) {
        throw ParseError(fmt::format("line {}: state or action id out of range at step {}",
                                     line_no, t));
      }
    }
    recompute_returns(traj, data.gamma);
    data.trajectories.push_back(std::move(traj));
  }
  if (!have_header) {
    throw ParseError("line 1: missing dataset header");
  }
  data.rebuild();
  if (against != nullptr && against->fingerprint() != data.env_fingerprint) {
    loaded.warnings.push_back(fmt::format(
        "dataset fingerprint {} does not match environment fingerprint {}",
        data.env_fingerprint, against->fingerprint()));
  }
  return loaded;
}

LoadedDataset load_dataset(const std::filesystem::path &path, const Cmdp *against) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open dataset file " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), against);
}

double median(std::vector<double> values) {
  if (values.empty()) {
    return 0.0;
  }
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

DatasetStats dataset_stats(const Dataset &dataset, const FeasibilityReport *feasibility) {
  DatasetStats stats;
  std::vector<double> undisc;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const auto &t = dataset.trajectories[i];
    stats.rows.push_back(TrajectoryRow{i, t.discounted_reward_return, t.discounted_cost_return,
                                       t.undiscounted_cost_return, t.length()});
    stats.mean_reward_return += t.discounted_reward_return;
    stats.mean_cost_return += t.discounted_cost_return;
    undisc.push_back(t.undiscounted_cost_return);
  }
  if (!dataset.trajectories.empty()) {
    stats.mean_reward_return /= static_cast<double>(dataset.trajectories.size());
    stats.mean_cost_return /= static_cast<double>(dataset.trajectories.size());
  }
  stats.median_cost_return_undisc = median(std::move(undisc));
  stats.state_visits.assign(dataset.n_states, 0);
  for (const auto &step : dataset.transitions) {
    ++stats.state_visits[step.state];
  }
  if (feasibility != nullptr) {
    std::size_t in_data = 0;
    std::size_t feasible = 0;
    for (std::size_t s = 0; s < dataset.n_states; ++s) {
      if (stats.state_visits[s] > 0) {
        ++in_data;
        feasible += feasibility->feasible_set[s] ? 1 : 0;
      }
    }
    stats.feasible_fraction =
        in_data == 0 ? 1.0 : static_cast<double>(feasible) / static_cast<double>(in_data);
  }
  return stats;
}

std::string stats_csv(const DatasetStats &stats) {
  std::string out = "traj_id,reward_return_disc,cost_return_disc,cost_return_undisc,length\n";
  for (const auto &row : stats.rows) {
    out += fmt::format("{},{},{},{},{}\n", row.traj_id, row.reward_return_disc,
                       row.cost_return_disc, row.cost_return_undisc, row.length);
  }
  return out;
}

void write_file_atomic(const std::filesystem::path &path, const std::string &contents) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error("cannot write " + tmp.string());
    }
    out << contents;
  }
  std::filesystem::rename(tmp, path);
}

} // namespace fawac
