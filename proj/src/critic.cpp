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

#include "fawac/critic.hpp"

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

constexpr double kDivergenceLimit = 1e6;

Idx idx(std::size_t i) { return static_cast<Idx>(i); }

// Gradient of the mean expectile loss of u = Q - V with respect to V is
// -2 |level - 1(u<0)| u; flipped uses u = V - Q (sign reversed).
double expectile_grad_v(double q, double v, double level, bool flipped) {
  if (!flipped) {
    const double u = q - v;
    const double w = u < 0.0 ? 1.0 - level : level;
    return -2.0 * w * u;
  }
  const double u = v - q;
  const double w = u < 0.0 ? 1.0 - level : level;
  return 2.0 * w * u;
}

double expectile_value_loss(double q, double v, double level, bool flipped) {
  return expectile_loss(flipped ? v - q : q - v, level);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   Rng &rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (batch_size == 0 || batch_size >= n) {
    return {order};
  }
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// Per-entry accumulators reused across minibatches.
struct EntryMeans {
  Matrix sum;
  Matrix count;
  void reset(Idx rows, Idx cols) {
    sum.setZero(rows, cols);
    count.setZero(rows, cols);
  }
};

std::vector<bool> visit_mask_of(const Dataset &dataset) {
  std::vector<bool> mask(dataset.n_states * dataset.n_actions, false);
  for (const auto &t : dataset.transitions) {
    mask[t.state * dataset.n_actions + t.action] = true;
  }
  return mask;
}

void check_dataset(const Dataset &dataset) {
  if (dataset.transitions.empty()) {
    throw InvalidInputError("critic training requires a nonempty dataset");
  }
}

// One pass of V-step gradient updates over the batches, for one signal.
double value_step(const Dataset &dataset, const std::vector<std::vector<std::size_t>> &batches,
                  const Matrix &q, Vector &v, double level, bool flipped, double lr,
                  bool clamp_nonnegative, Vector *target, double polyak) {
  double max_change = 0.0;
  Vector grad_sum(v.size());
  Vector grad_count(v.size());
  for (const auto &batch : batches) {
    grad_sum.setZero();
    grad_count.setZero();
    for (std::size_t i : batch) {
      const auto &t = dataset.transitions[i];
      const Idx s = idx(t.state);
      grad_sum[s] += expectile_grad_v(q(s, idx(t.action)), v[s], level, flipped);
      grad_count[s] += 1.0;
    }
    for (Idx s = 0; s < v.size(); ++s) {
      if (grad_count[s] == 0.0) {
        continue;
      }
      double next = v[s] - lr * grad_sum[s] / grad_count[s];
      if (clamp_nonnegative) {
        next = std::max(0.0, next);
      }
      max_change = std::max(max_change, std::abs(next - v[s]));
      v[s] = next;
    }
    if (target != nullptr) {
      *target = (1.0 - polyak) * *target + polyak * v;
    }
  }
  return max_change;
}

} // namespace

void require_valid(const CriticConfig &config) {
  const auto in_open = [](double x) { return x >= 0.5 && x < 1.0; };
  if (!in_open(config.expectile_reward) || !in_open(config.expectile_cost)) {
    throw InvalidInputError("expectile levels must lie in [0.5, 1)");
  }
  if (!(config.learning_rate > 0.0)) {
    throw InvalidInputError("critic learning_rate must be positive");
  }
  if (config.epochs < 1) {
    throw InvalidInputError("critic epochs must be at least 1");
  }
  if (config.target_update == TargetUpdate::kPolyak &&
      !(config.polyak_coefficient > 0.0 && config.polyak_coefficient <= 1.0)) {
    throw InvalidInputError("polyak coefficient must lie in (0, 1]");
  }
}

double expectile_loss(double u, double level) {
  const double w = u < 0.0 ? 1.0 - level : level;
  return w * u * u;
}

CriticTrainingResult train_critics(const Dataset &dataset, double gamma,
                                   const CriticConfig &config) {
  require_valid(config);
  check_dataset(dataset);
  const Idx n = idx(dataset.n_states);
  const Idx m = idx(dataset.n_actions);

  CriticTrainingResult result;
  CriticSet &c = result.critics;
  c.q_r = Matrix::Zero(n, m);
  c.q_c = Matrix::Zero(n, m);
  c.v_r = Vector::Zero(n);
  c.v_c = Vector::Zero(n);
  c.expectile_reward = config.expectile_reward;
  c.expectile_cost = config.expectile_cost;
  c.visit_mask = visit_mask_of(dataset);

  Rng rng(config.seed);
  const bool polyak = config.target_update == TargetUpdate::kPolyak;
  Vector target_r = c.v_r;
  Vector target_c = c.v_c;
  EntryMeans acc_r;
  EntryMeans acc_c;
  const double lr = config.learning_rate;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (!polyak) {
      target_r = c.v_r;
      target_c = c.v_c;
    }
    double max_change = 0.0;

    // Q-step: TD regression toward r + gamma V(s').
    for (const auto &batch : make_batches(dataset.transitions.size(), config.batch_size, rng)) {
      acc_r.reset(n, m);
      acc_c.reset(n, m);
      for (std::size_t i : batch) {
        const auto &t = dataset.transitions[i];
        const Idx s = idx(t.state);
        const Idx a = idx(t.action);
        const double bootstrap = t.done ? 0.0 : gamma;
        acc_r.sum(s, a) += t.reward + bootstrap * target_r[idx(t.next_state)];
        acc_c.sum(s, a) += t.cost + bootstrap * target_c[idx(t.next_state)];
        acc_r.count(s, a) += 1.0;
        acc_c.count(s, a) += 1.0;
      }
      for (Idx s = 0; s < n; ++s) {
        for (Idx a = 0; a < m; ++a) {
          const double count = acc_r.count(s, a);
          if (count == 0.0) {
            continue;
          }
          const double next_r =
              c.q_r(s, a) - lr * 2.0 * (c.q_r(s, a) - acc_r.sum(s, a) / count);
          const double next_c = std::max(
              0.0, c.q_c(s, a) - lr * 2.0 * (c.q_c(s, a) - acc_c.sum(s, a) / count));
          max_change = std::max({max_change, std::abs(next_r - c.q_r(s, a)),
                                 std::abs(next_c - c.q_c(s, a))});
          c.q_r(s, a) = next_r;
          c.q_c(s, a) = next_c;
        }
      }
    }

    // V-step: expectile regression onto the current Q.
    const auto batches = make_batches(dataset.transitions.size(), config.batch_size, rng);
    max_change = std::max(
        max_change, value_step(dataset, batches, c.q_r, c.v_r, config.expectile_reward, false,
                               lr, false, polyak ? &target_r : nullptr,
                               config.polyak_coefficient));
    max_change = std::max(
        max_change,
        value_step(dataset, batches, c.q_c, c.v_c, config.expectile_cost,
                   config.cost_expectile_flipped, lr, true, polyak ? &target_c : nullptr,
                   config.polyak_coefficient));

    CriticEpoch record;
    record.epoch = epoch;
    record.max_change = max_change;
    for (const auto &t : dataset.transitions) {
      const Idx s = idx(t.state);
      const Idx a = idx(t.action);
      const double bootstrap = t.done ? 0.0 : gamma;
      const double td_r = t.reward + bootstrap * c.v_r[idx(t.next_state)] - c.q_r(s, a);
      const double td_c = t.cost + bootstrap * c.v_c[idx(t.next_state)] - c.q_c(s, a);
      record.q_loss_reward += td_r * td_r;
      record.q_loss_cost += td_c * td_c;
      record.v_loss_reward += expectile_value_loss(c.q_r(s, a), c.v_r[s], config.expectile_reward, false);
      record.v_loss_cost += expectile_value_loss(c.q_c(s, a), c.v_c[s], config.expectile_cost,
                                                 config.cost_expectile_flipped);
    }
    const double inv = 1.0 / static_cast<double>(dataset.transitions.size());
    record.q_loss_reward *= inv;
    record.q_loss_cost *= inv;
    record.v_loss_reward *= inv;
    record.v_loss_cost *= inv;
    result.history.push_back(record);

    const double worst = std::max({record.q_loss_reward, record.q_loss_cost,
                                   record.v_loss_reward, record.v_loss_cost});
    if (!(worst <= kDivergenceLimit)) {
      throw DivergenceError(fmt::format("critic loss {} exceeded {} at epoch {}", worst,
                                        kDivergenceLimit, epoch));
    }
    if (max_change < config.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

Vector fit_expectile_values(const Dataset &dataset, const Matrix &q, double level,
                            const CriticConfig &config) {
  check_dataset(dataset);
  if (!(level > 0.0 && level < 1.0)) {
    throw InvalidInputError("expectile level must lie in (0, 1)");
  }
  Vector v = Vector::Zero(idx(dataset.n_states));
  Rng rng(config.seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(dataset.transitions.size(), config.batch_size, rng);
    const double change = value_step(dataset, batches, q, v, level, false,
                                     config.learning_rate, false, nullptr, 0.0);
    if (change < config.convergence_tol) {
      break;
    }
  }
  return v;
}

CriticSet evaluate_policy_critics(const Dataset &dataset, double gamma, const Matrix &policy,
                                  const CriticConfig &config) {
  check_dataset(dataset);
  const Idx n = idx(dataset.n_states);
  const Idx m = idx(dataset.n_actions);
  CriticSet c;
  c.q_r = Matrix::Zero(n, m);
  c.q_c = Matrix::Zero(n, m);
  c.v_r = Vector::Zero(n);
  c.v_c = Vector::Zero(n);
  c.expectile_reward = config.expectile_reward;
  c.expectile_cost = config.expectile_cost;
  c.visit_mask = visit_mask_of(dataset);

  // Policy restricted to dataset actions.
  Matrix restricted = Matrix::Zero(n, m);
  for (Idx s = 0; s < n; ++s) {
    double mass = 0.0;
    for (Idx a = 0; a < m; ++a) {
      if (c.visited(static_cast<std::size_t>(s), static_cast<std::size_t>(a))) {
        restricted(s, a) = policy(s, a);
        mass += policy(s, a);
      }
    }
    if (mass > 0.0) {
      restricted.row(s) /= mass;
    } else {
      for (Idx a = 0; a < m; ++a) {
        if (c.visited(static_cast<std::size_t>(s), static_cast<std::size_t>(a))) {
          restricted(s, a) = 1.0;
          mass += 1.0;
        }
      }
      if (mass > 0.0) {
        restricted.row(s) /= mass;
      }
    }
  }

  Rng rng(config.seed);
  const double lr = config.learning_rate;
  EntryMeans acc_r;
  EntryMeans acc_c;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Vector target_r = c.v_r;
    const Vector target_c = c.v_c;
    double max_change = 0.0;
    for (const auto &batch : make_batches(dataset.transitions.size(), config.batch_size, rng)) {
      acc_r.reset(n, m);
      acc_c.reset(n, m);
      for (std::size_t i : batch) {
        const auto &t = dataset.transitions[i];
        const double bootstrap = t.done ? 0.0 : gamma;
        acc_r.sum(idx(t.state), idx(t.action)) += t.reward + bootstrap * target_r[idx(t.next_state)];
        acc_c.sum(idx(t.state), idx(t.action)) += t.cost + bootstrap * target_c[idx(t.next_state)];
        acc_r.count(idx(t.state), idx(t.action)) += 1.0;
      }
      for (Idx s = 0; s < n; ++s) {
        for (Idx a = 0; a < m; ++a) {
          const double count = acc_r.count(s, a);
          if (count == 0.0) {
            continue;
          }
          const double next_r = c.q_r(s, a) - lr * 2.0 * (c.q_r(s, a) - acc_r.sum(s, a) / count);
          const double next_c =
              std::max(0.0, c.q_c(s, a) - lr * 2.0 * (c.q_c(s, a) - acc_c.sum(s, a) / count));
          max_change = std::max({max_change, std::abs(next_r - c.q_r(s, a)),
                                 std::abs(next_c - c.q_c(s, a))});
          c.q_r(s, a) = next_r;
          c.q_c(s, a) = next_c;
        }
      }
    }
    c.v_r = restricted.cwiseProduct(c.q_r).rowwise().sum();
    c.v_c = restricted.cwiseProduct(c.q_c).rowwise().sum();
    if (max_change < config.convergence_tol) {
      break;
    }
  }
  return c;
}

double advantage(const CriticSet &critics, std::size_t s, std::size_t a, Signal signal) {
  if (s >= critics.n_states() || a >= critics.n_actions() || !critics.visited(s, a)) {
    throw UnvisitedPairError(s, a);
  }
  const Idx si = idx(s);
  const Idx ai = idx(a);
  return signal == Signal::kReward ? critics.q_r(si, ai) - critics.v_r[si]
                                   : critics.q_c(si, ai) - critics.v_c[si];
}

Matrix advantage_table(const CriticSet &critics, Signal signal) {
  Matrix out = Matrix::Zero(critics.q_r.rows(), critics.q_r.cols());
  for (std::size_t s = 0; s < critics.n_states(); ++s) {
    for (std::size_t a = 0; a < critics.n_actions(); ++a) {
      if (critics.visited(s, a)) {
        out(idx(s), idx(a)) = advantage(critics, s, a, signal);
      }
    }
  }
  return out;
}

std::string serialize_critics(const CriticSet &critics, const CriticConfig &config,
                              const std::string &env_fingerprint) {
  nlohmann::ordered_json header;
  header["kind"] = "critics";
  header["env_fingerprint"] = env_fingerprint;
  header["n_states"] = critics.n_states();
  header["n_actions"] = critics.n_actions();
  header["expectile_reward"] = critics.expectile_reward;
  header["expectile_cost"] = critics.expectile_cost;
  header["learning_rate"] = config.learning_rate;
  header["target_update"] =
      config.target_update == TargetUpdate::kPolyak ? "polyak" : "hard-each-step";
  header["polyak_coefficient"] = config.polyak_coefficient;
  header["epochs"] = config.epochs;
  header["batch_size"] = config.batch_size;
  header["seed"] = config.seed;
  header["convergence_tol"] = config.convergence_tol;
  header["cost_expectile_flipped"] = config.cost_expectile_flipped;
  std::string out = header.dump() + "\n";
  for (std::size_t s = 0; s < critics.n_states(); ++s) {
    out += fmt::format("v {} {:.17g} {:.17g}\n", s, critics.v_r[idx(s)], critics.v_c[idx(s)]);
    for (std::size_t a = 0; a < critics.n_actions(); ++a) {
      out += fmt::format("q {} {} {} {:.17g} {:.17g}\n", s, a, critics.visited(s, a) ? 1 : 0,
                         critics.q_r(idx(s), idx(a)), critics.q_c(idx(s), idx(a)));
    }
  }
  return out;
}

CriticSet parse_critics(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("line 1: missing critic header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(fmt::format("line 1: malformed critic header: {}", e.what()));
  }
  CriticSet c;
  std::size_t n = 0;
  std::size_t m = 0;
  try {
    n = header.at("n_states").get<std::size_t>();
    m = header.at("n_actions").get<std::size_t>();
    c.expectile_reward = header.at("expectile_reward").get<double>();
    c.expectile_cost = header.at("expectile_cost").get<double>();
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(fmt::format("line 1: bad critic header: {}", e.what()));
  }
  c.q_r = Matrix::Zero(idx(n), idx(m));
  c.q_c = Matrix::Zero(idx(n), idx(m));
  c.v_r = Vector::Zero(idx(n));
  c.v_c = Vector::Zero(idx(n));
  c.visit_mask.assign(n * m, false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::string tag;
    fields >> tag;
    const auto fail = [&] { return ParseError(fmt::format("line {}: malformed critic row", line_no)); };
    std::size_t s = 0;
    if (!(fields >> s) || s >= n) {
      throw fail();
    }
    std::string x;
    std::string y;
    if (tag == "v") {
      if (!(fields >> x >> y)) {
        throw fail();
      }
      c.v_r[idx(s)] = std::strtod(x.c_str(), nullptr);
      c.v_c[idx(s)] = std::strtod(y.c_str(), nullptr);
    } else if (tag == "q") {
      std::size_t a = 0;
      int visited = 0;
      if (!(fields >> a >> visited >> x >> y) || a >= m) {
        throw fail();
      }
      c.visit_mask[s * m + a] = visited != 0;
      c.q_r(idx(s), idx(a)) = std::strtod(x.c_str(), nullptr);
      c.q_c(idx(s), idx(a)) = std::strtod(y.c_str(), nullptr);
    } else {
      throw fail();
    }
  }
  return c;
}

void save_critics(const CriticSet &critics, const CriticConfig &config,
                  const std::string &env_fingerprint, const std::filesystem::path &path) {
  write_file_atomic(path, serialize_critics(critics, config, env_fingerprint));
}

CriticSet load_critics(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open critic file " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_critics(buffer.str());
}

} // namespace fawac
