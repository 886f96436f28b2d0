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

#include "fawac/oracle.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fawac {

namespace {

using Idx = Eigen::Index;

Idx idx(std::size_t i) { return static_cast<Idx>(i); }

double clipped_exp(double exponent, double clip, ClipCounter *clips) {
  if (exponent > clip) {
    if (clips != nullptr) {
      ++clips->count;
    }
    exponent = clip;
  }
  return std::exp(exponent);
}

void require_lambda(double lambda) {
  if (!(lambda > 0.0)) {
    throw InvalidInputError("lambda must be positive");
  }
}

std::string format_real(double x) { return fmt::format("{:.17g}", x); }

} // namespace

const char *to_string(Variant variant) {
  switch (variant) {
  case Variant::kFawacM:
    return "fawac_m";
  case Variant::kFawacP:
    return "fawac_p";
  case Variant::kFawacT:
    return "fawac_t";
  case Variant::kBc:
    return "bc";
  case Variant::kAwr:
    return "awr";
  }
  return "unknown";
}

Variant parse_variant(const std::string &name) {
  std::string key = name;
  std::replace(key.begin(), key.end(), '-', '_');
  std::transform(key.begin(), key.end(), key.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Variant v : {Variant::kFawacM, Variant::kFawacP, Variant::kFawacT, Variant::kBc,
                    Variant::kAwr}) {
    if (key == to_string(v)) {
      return v;
    }
  }
  throw InvalidInputError("unknown variant '" + name + "'");
}

void require_valid(const ActorConfig &config) {
  require_lambda(config.lambda);
  if (!(config.actor_lr > 0.0) || !(config.multiplier_lr > 0.0)) {
    throw InvalidInputError("learning rates must be positive");
  }
  if (!(config.nu_hat >= 0.0) || !(config.nu_max >= 0.0)) {
    throw InvalidInputError("nu_hat and nu_max must be nonnegative");
  }
  if (config.iterations < 1 || config.policy_steps < 1) {
    throw InvalidInputError("iterations and policy_steps must be at least 1");
  }
  if (std::isnan(config.kappa)) {
    throw InvalidInputError("kappa must not be NaN");
  }
  if (config.recompute_critics_every < 0) {
    throw InvalidInputError("recompute_critics_every must be nonnegative");
  }
}

Matrix PolicyTable::probabilities() const {
  const std::size_t n = n_states();
  const std::size_t m = n_actions();
  Matrix probs = Matrix::Zero(logits.rows(), logits.cols());
  for (std::size_t s = 0; s < n; ++s) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m; ++a) {
      if (supported(s, a)) {
        top = std::max(top, logits(idx(s), idx(a)));
      }
    }
    double total = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      if (supported(s, a)) {
        const double e = std::exp(logits(idx(s), idx(a)) - top);
        probs(idx(s), idx(a)) = e;
        total += e;
      }
    }
    probs.row(idx(s)) /= total;
  }
  return probs;
}

PolicyTable initial_policy(const Dataset &dataset) {
  PolicyTable policy;
  policy.logits = Matrix::Zero(idx(dataset.n_states), idx(dataset.n_actions));
  policy.support.assign(dataset.n_states * dataset.n_actions, true);
  for (std::size_t s = 0; s < dataset.n_states; ++s) {
    if (!dataset.behavior.is_visited(s)) {
      continue;
    }
    for (std::size_t a = 0; a < dataset.n_actions; ++a) {
      policy.support[s * dataset.n_actions + a] = dataset.behavior.counts(idx(s), idx(a)) > 0.0;
    }
  }
  return policy;
}

MultiplierTable zero_multipliers(std::size_t n_states, double nu_max) {
  return MultiplierTable{Vector::Zero(idx(n_states)), nu_max};
}

double awr_weight_m(std::size_t s, std::size_t a, const CriticSet &critics,
                    const MultiplierTable &multipliers, double lambda, double weight_clip,
                    ClipCounter *clips) {
  require_lambda(lambda);
  const double a_r = advantage(critics, s, a, Signal::kReward);
  const double a_c = advantage(critics, s, a, Signal::kCost);
  return clipped_exp((a_r - multipliers.nu[idx(s)] * a_c) / lambda, weight_clip, clips);
}

double awr_weight_p(std::size_t s, std::size_t a, const CriticSet &critics, double nu_hat,
                    double lambda, double kappa, double weight_clip, ClipCounter *clips) {
  require_lambda(lambda);
  const double a_r = advantage(critics, s, a, Signal::kReward);
  const double a_c = advantage(critics, s, a, Signal::kCost);
  // Boundary counts as infeasible.
  if (critics.v_c[idx(s)] >= kappa) {
    return clipped_exp((a_r - nu_hat * a_c) / lambda, weight_clip, clips);
  }
  return clipped_exp(a_r / lambda, weight_clip, clips);
}

double awr_weight_t(std::size_t s, std::size_t a, const CriticSet &critics, double lambda,
                    double weight_clip, ClipCounter *clips) {
  require_lambda(lambda);
  const double a_c = advantage(critics, s, a, Signal::kCost);
  return clipped_exp(-a_c / lambda, weight_clip, clips);
}

double awr_weight(std::size_t s, std::size_t a, const CriticSet &critics, double lambda,
                  double weight_clip, ClipCounter *clips) {
  require_lambda(lambda);
  const double a_r = advantage(critics, s, a, Signal::kReward);
  return clipped_exp(a_r / lambda, weight_clip, clips);
}

WeightResult compute_weights(const Dataset &dataset, const CriticSet &critics,
                             const MultiplierTable &multipliers, const ActorConfig &config) {
  const std::size_t m = dataset.n_actions;
  Matrix table = Matrix::Zero(idx(dataset.n_states), idx(m));
  ClipCounter clips;
  for (std::size_t s = 0; s < dataset.n_states; ++s) {
    for (std::size_t a = 0; a < m; ++a) {
      if (!critics.visited(s, a)) {
        continue;
      }
      double w = 1.0;
      switch (config.variant) {
      case Variant::kFawacM:
        w = awr_weight_m(s, a, critics, multipliers, config.lambda, config.weight_clip, &clips);
        break;
      case Variant::kFawacP:
        w = awr_weight_p(s, a, critics, config.nu_hat, config.lambda, config.kappa,
                         config.weight_clip, &clips);
        break;
      case Variant::kFawacT:
        w = awr_weight_t(s, a, critics, config.lambda, config.weight_clip, &clips);
        break;
      case Variant::kAwr:
        w = awr_weight(s, a, critics, config.lambda, config.weight_clip, &clips);
        break;
      case Variant::kBc:
        break;
      }
      table(idx(s), idx(a)) = w;
    }
  }
  WeightResult result;
  result.clip_count = clips.count;
  result.per_transition.reserve(dataset.transitions.size());
  for (const auto &t : dataset.transitions) {
    result.per_transition.push_back(table(idx(t.state), idx(t.action)));
  }
  return result;
}

Matrix weighted_mle_target(const Dataset &dataset, const std::vector<double> &weights) {
  if (weights.size() != dataset.transitions.size()) {
    throw InvalidInputError("one weight per transition is required");
  }
  Matrix mass = Matrix::Zero(idx(dataset.n_states), idx(dataset.n_actions));
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidInputError(fmt::format("weight {} is not a finite nonnegative number", i));
    }
    const auto &t = dataset.transitions[i];
    mass(idx(t.state), idx(t.action)) += w;
    total += w;
  }
  if (!(total > 0.0)) {
    throw InvalidInputError("all transition weights are zero");
  }
  for (Idx s = 0; s < mass.rows(); ++s) {
    const double row = mass.row(s).sum();
    if (row > 0.0) {
      mass.row(s) /= row;
    }
  }
  return mass;
}

PolicyTable update_policy(const PolicyTable &policy, const Dataset &dataset,
                          const std::vector<double> &weights, double actor_lr, int steps) {
  if (!(actor_lr > 0.0)) {
    throw InvalidInputError("actor_lr must be positive");
  }
  const Matrix target = weighted_mle_target(dataset, weights);
  std::vector<bool> active(dataset.n_states, false);
  for (std::size_t s = 0; s < dataset.n_states; ++s) {
    active[s] = target.row(idx(s)).sum() > 0.0;
  }
  PolicyTable out = policy;
  for (int step = 0; step < steps; ++step) {
    const Matrix probs = out.probabilities();
    double largest = 0.0;
    for (std::size_t s = 0; s < dataset.n_states; ++s) {
      if (!active[s]) {
        continue;
      }
      for (std::size_t a = 0; a < dataset.n_actions; ++a) {
        if (!out.supported(s, a)) {
          continue;
        }
        const double g = probs(idx(s), idx(a)) - target(idx(s), idx(a));
        out.logits(idx(s), idx(a)) -= actor_lr * g;
        largest = std::max(largest, std::abs(g));
      }
    }
    if (largest < 1e-14) {
      break;
    }
  }
  return out;
}

MultiplierTable update_multiplier_statewise(const MultiplierTable &multipliers,
                                            const CriticSet &critics,
                                            const std::vector<bool> &visited_states,
                                            double kappa, double multiplier_lr,
                                            std::vector<MultiplierStep> *audit, int iteration) {
  MultiplierTable out = multipliers;
  for (std::size_t s = 0; s < visited_states.size(); ++s) {
    if (!visited_states[s]) {
      continue;
    }
    const double gap = critics.v_c[idx(s)] - kappa;
    const double delta = multiplier_lr * gap;
    out.nu[idx(s)] = std::clamp(multipliers.nu[idx(s)] + delta, 0.0, multipliers.nu_max);
    if (audit != nullptr) {
      audit->push_back({iteration, s, gap, delta, out.nu[idx(s)]});
    }
  }
  return out;
}

double update_multiplier_global(double nu, double mean_v_c, double kappa, double lr,
                                double nu_max) {
  return std::clamp(nu + lr * (mean_v_c - kappa), 0.0, nu_max);
}

double kl_to_behavior(const Matrix &policy, const Dataset &dataset) {
  Vector weights = dataset.state_frequency();
  return kl_divergence(policy, dataset.behavior.probs, weights);
}

TrainingResult train_actor(const Dataset &dataset, const CriticSet &critics,
                           const CriticConfig &critic_config, const ActorConfig &config,
                           const Cmdp *env) {
  require_valid(config);
  if (dataset.transitions.empty()) {
    throw InvalidInputError("actor training requires a nonempty dataset");
  }
  TrainingResult result;
  result.critics = critics;
  result.policy = initial_policy(dataset);
  result.multipliers = zero_multipliers(dataset.n_states, config.nu_max);
  const std::vector<bool> &visited = dataset.states_in_data();
  const Vector freq = dataset.state_frequency();
  const bool uses_multiplier = config.variant == Variant::kFawacM;

  const auto step_multipliers = [&](int iteration) {
    if (config.global_multiplier) {
      const double mean_v_c = freq.dot(result.critics.v_c);
      const double before = result.multipliers.nu.size() > 0 ? result.multipliers.nu[0] : 0.0;
      const double after =
          update_multiplier_global(before, mean_v_c, config.kappa, config.multiplier_lr,
                                   config.nu_max);
      result.multipliers.nu.setConstant(after);
      return;
    }
    result.multipliers =
        update_multiplier_statewise(result.multipliers, result.critics, visited, config.kappa,
                                    config.multiplier_lr, &result.history.multiplier_steps,
                                    iteration);
  };

  for (int it = 1; it <= config.iterations; ++it) {
    if (config.recompute_critics_every > 0 && it > 1 &&
        (it - 1) % config.recompute_critics_every == 0) {
      result.critics = evaluate_policy_critics(dataset, dataset.gamma,
                                               result.policy.probabilities(), critic_config);
    }
    if (uses_multiplier && config.multiplier_first) {
      step_multipliers(it);
    }
    const WeightResult weights =
        compute_weights(dataset, result.critics, result.multipliers, config);
    result.policy = update_policy(result.policy, dataset, weights.per_transition,
                                  config.actor_lr, config.policy_steps);
    if (uses_multiplier && !config.multiplier_first) {
      step_multipliers(it);
    }

    HistoryRow row;
    row.iter = it;
    const Matrix probs = result.policy.probabilities();
    if (env != nullptr) {
      row.v_r_rho0 = value_at_rho0(*env, probs, Signal::kReward);
      row.v_c_rho0 = value_at_rho0(*env, probs, Signal::kCost);
    } else {
      row.v_r_rho0 = std::numeric_limits<double>::quiet_NaN();
      row.v_c_rho0 = std::numeric_limits<double>::quiet_NaN();
    }
    row.kl_to_beta = kl_to_behavior(probs, dataset);
    double nu_sum = 0.0;
    std::size_t nu_count = 0;
    for (std::size_t s = 0; s < visited.size(); ++s) {
      if (visited[s]) {
        nu_sum += result.multipliers.nu[idx(s)];
        ++nu_count;
      }
    }
    row.mean_nu = nu_count > 0 ? nu_sum / static_cast<double>(nu_count) : 0.0;
    row.clip_count = weights.clip_count;
    result.history.rows.push_back(row);
  }
  return result;
}

TrainingResult train(const Dataset &dataset, double gamma, const CriticConfig &critic_config,
                     const ActorConfig &config, const Cmdp *env) {
  require_valid(config);
  const CriticTrainingResult critics = train_critics(dataset, gamma, critic_config);
  return train_actor(dataset, critics.critics, critic_config, config, env);
}

std::string history_csv(const TrainingHistory &history) {
  std::string out = "iter,v_r_rho0,v_c_rho0,kl_to_beta,mean_nu,clip_count\n";
  for (const auto &row : history.rows) {
    out += fmt::format("{},{},{},{},{},{}\n", row.iter, format_real(row.v_r_rho0),
                       format_real(row.v_c_rho0), format_real(row.kl_to_beta),
                       format_real(row.mean_nu), row.clip_count);
  }
  return out;
}

std::string serialize_policy(const PolicyTable &policy, const ActorConfig &config,
                             const std::string &env_fingerprint) {
  nlohmann::ordered_json header;
  header["kind"] = "policy";
  header["variant"] = to_string(config.variant);
  header["env_fingerprint"] = env_fingerprint;
  header["n_states"] = policy.n_states();
  header["n_actions"] = policy.n_actions();
  header["lambda"] = format_real(config.lambda);
  header["nu_hat"] = format_real(config.nu_hat);
  header["nu_max"] = format_real(config.nu_max);
  header["kappa"] = format_real(config.kappa);
  header["multiplier_lr"] = format_real(config.multiplier_lr);
  header["actor_lr"] = format_real(config.actor_lr);
  header["weight_clip"] = format_real(config.weight_clip);
  header["iterations"] = config.iterations;
  header["policy_steps"] = config.policy_steps;
  header["seed"] = config.seed;
  std::string out = header.dump() + "\n";
  for (std::size_t s = 0; s < policy.n_states(); ++s) {
    for (std::size_t a = 0; a < policy.n_actions(); ++a) {
      out += fmt::format("p {} {} {} {}\n", s, a, policy.supported(s, a) ? 1 : 0,
                         format_real(policy.logits(idx(s), idx(a))));
    }
  }
  return out;
}

PolicyTable parse_policy(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("line 1: missing policy header");
  }
  std::size_t n = 0;
  std::size_t m = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    n = header.at("n_states").get<std::size_t>();
    m = header.at("n_actions").get<std::size_t>();
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(fmt::format("line 1: bad policy header: {}", e.what()));
  }
  PolicyTable policy;
  policy.logits = Matrix::Zero(idx(n), idx(m));
  policy.support.assign(n * m, true);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::string tag;
    std::size_t s = 0;
    std::size_t a = 0;
    int supported = 0;
    std::string logit;
    if (!(fields >> tag >> s >> a >> supported >> logit) || tag != "p" || s >= n || a >= m) {
      throw ParseError(fmt::format("line {}: malformed policy row", line_no));
    }
    policy.support[s * m + a] = supported != 0;
    policy.logits(idx(s), idx(a)) = std::strtod(logit.c_str(), nullptr);
  }
  return policy;
}

void save_policy(const PolicyTable &policy, const ActorConfig &config,
                 const std::string &env_fingerprint, const std::filesystem::path &path) {
  write_file_atomic(path, serialize_policy(policy, config, env_fingerprint));
}

PolicyTable load_policy(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open policy file " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_policy(buffer.str());
}

} // namespace fawac
