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

#include "fawac/harness.hpp"

#include "fawac/oracle.hpp"
#include "fawac/rng.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <utility>

namespace fawac {

namespace {

using Idx = Eigen::Index;
namespace pt = boost::property_tree;

constexpr std::uint64_t kTemptingTag = 0x74656d70;
constexpr std::uint64_t kEvalTag = 0x6576616c;

const std::map<std::string, std::set<std::string>> &known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"grid",
       {"width", "height", "hazards", "hazard_cost", "goals", "goal_reward", "step_penalty",
        "slip_probability", "start", "random_hazard_count", "random_hazard_cost", "seed",
        "gamma", "horizon"}},
      {"dataset",
       {"n_trajectories", "w_unsafe", "w_safe", "w_uniform", "epsilon", "horizon", "seed",
        "tempting", "tempting_lo", "tempting_hi", "keep_fraction"}},
      {"critic",
       {"expectile_reward", "expectile_cost", "learning_rate", "target_update",
        "polyak_coefficient", "epochs", "batch_size", "seed", "convergence_tol",
        "cost_expectile_flipped"}},
      {"actor",
       {"variants", "lambda", "nu_hat", "nu_max", "multiplier_lr", "actor_lr", "weight_clip",
        "iterations", "policy_steps", "seed", "multiplier_first", "global_multiplier",
        "recompute_critics_every"}},
      {"thresholds", {"kappa_undiscounted", "planning_steps", "kappa_discounted"}},
      {"eval", {"n_eval_rollouts", "seeds", "closed_form_suite", "closed_form_instances", "output_dir"}},
  };
  return keys;
}

std::string trim(const std::string &s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) {
    return "";
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) {
      parts.push_back(item);
    }
  }
  return parts;
}

class Section {
public:
  Section(const pt::ptree *tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string &key) const {
    if (tree_ == nullptr) {
      return std::nullopt;
    }
    const auto child = tree_->get_optional<std::string>(key);
    if (!child) {
      return std::nullopt;
    }
    return trim(*child);
  }

  [[noreturn]] void fail(const std::string &key, const std::string &why) const {
    throw ParseError(fmt::format("[{}] {}: {}", name_, key, why));
  }

  double real(const std::string &key, double fallback) const {
    const auto text = raw(key);
    if (!text) {
      return fallback;
    }
    return parse_real(key, *text);
  }

  std::optional<double> optional_real(const std::string &key) const {
    const auto text = raw(key);
    if (!text || text->empty()) {
      return std::nullopt;
    }
    return parse_real(key, *text);
  }

  long long integer(const std::string &key, long long fallback) const {
    const auto text = raw(key);
    if (!text) {
      return fallback;
    }
    return parse_integer(key, *text);
  }

  bool boolean(const std::string &key, bool fallback) const {
    const auto text = raw(key);
    if (!text) {
      return fallback;
    }
    if (*text == "true" || *text == "1" || *text == "yes" || *text == "on") {
      return true;
    }
    if (*text == "false" || *text == "0" || *text == "no" || *text == "off") {
      return false;
    }
    fail(key, "expected a boolean");
  }

  double parse_real(const std::string &key, const std::string &text) const {
    if (text == "inf" || text == "+inf") {
      return std::numeric_limits<double>::infinity();
    }
    try {
      std::size_t used = 0;
      const double value = std::stod(text, &used);
      if (used != text.size()) {
        fail(key, "trailing characters in '" + text + "'");
      }
      return value;
    } catch (const std::logic_error &) {
      fail(key, "expected a number, got '" + text + "'");
    }
  }

  long long parse_integer(const std::string &key, const std::string &text) const {
    try {
      std::size_t used = 0;
      const long long value = std::stoll(text, &used);
      if (used != text.size()) {
        fail(key, "trailing characters in '" + text + "'");
      }
      return value;
    } catch (const std::logic_error &) {
      fail(key, "expected an integer, got '" + text + "'");
    }
  }

  // "x,y" cells and "x0-x1,y0-y1" rectangles separated by ';'.
  std::vector<GridCell> cells(const std::string &key) const {
    std::vector<GridCell> out;
    const auto text = raw(key);
    if (!text) {
      return out;
    }
    for (const auto &item : split(*text, ';')) {
      const auto xy = split(item, ',');
      if (xy.size() != 2) {
        fail(key, "expected x,y in '" + item + "'");
      }
      const auto range = [&](const std::string &part) {
        const auto dash = part.find('-', 1);
        if (dash == std::string::npos) {
          const long long v = parse_integer(key, part);
          return std::pair<long long, long long>{v, v};
        }
        return std::pair<long long, long long>{parse_integer(key, trim(part.substr(0, dash))),
                                               parse_integer(key, trim(part.substr(dash + 1)))};
      };
      const auto [x0, x1] = range(xy[0]);
      const auto [y0, y1] = range(xy[1]);
      if (x1 < x0 || y1 < y0) {
        fail(key, "empty range in '" + item + "'");
      }
      for (long long y = y0; y <= y1; ++y) {
        for (long long x = x0; x <= x1; ++x) {
          out.push_back(GridCell{static_cast<int>(x), static_cast<int>(y)});
        }
      }
    }
    return out;
  }

private:
  const pt::ptree *tree_;
  std::string name_;
};

std::string format_real(double x) { return fmt::format("{:.10g}", x); }

void write_output(const std::filesystem::path &dir, const std::string &name,
                  const std::string &contents) {
  write_file_atomic(dir / name, contents);
}

std::string run_tag(Variant variant, std::uint64_t seed) {
  return fmt::format("{}_seed{}", to_string(variant), seed);
}

} // namespace

ExperimentConfig parse_config(const std::string &text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error &e) {
    throw ParseError(fmt::format("line {}: {}", e.line(), e.message()));
  }
  for (const auto &[name, section] : tree) {
    const auto found = known_keys().find(name);
    if (found == known_keys().end()) {
      throw ParseError("unknown section [" + name + "]");
    }
    for (const auto &entry : section) {
      if (found->second.count(entry.first) == 0) {
        throw ParseError(fmt::format("[{}] unknown key '{}'", name, entry.first));
      }
    }
  }
  const auto section = [&](const std::string &name) {
    const auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  ExperimentConfig config;
  {
    const Section grid = section("grid");
    GridworldSpec &g = config.grid;
    g.width = static_cast<int>(grid.integer("width", 8));
    g.height = static_cast<int>(grid.integer("height", 8));
    const double hazard_cost = grid.real("hazard_cost", 1.0);
    for (const auto &cell : grid.cells("hazards")) {
      g.hazard_cells.push_back(HazardCell{cell, hazard_cost});
    }
    const double goal_reward = grid.real("goal_reward", 1.0);
    for (const auto &cell : grid.cells("goals")) {
      g.goal_cells.push_back(GoalCell{cell, goal_reward});
    }
    g.step_penalty = grid.real("step_penalty", 0.0);
    g.slip_probability = grid.real("slip_probability", 0.0);
    const auto starts = grid.cells("start");
    if (!starts.empty()) {
      g.start_cells = starts;
    }
    g.random_hazard_count = static_cast<int>(grid.integer("random_hazard_count", 0));
    g.random_hazard_cost = grid.real("random_hazard_cost", 1.0);
    g.seed = static_cast<std::uint64_t>(grid.integer("seed", 0));
    g.gamma = grid.real("gamma", 0.95);
    g.horizon = static_cast<int>(grid.integer("horizon", 60));
  }
  {
    const Section d = section("dataset");
    DatasetSection &ds = config.dataset;
    const long long n = d.integer("n_trajectories", 500);
    if (n < 0) {
      d.fail("n_trajectories", "must be nonnegative");
    }
    ds.n_trajectories = static_cast<std::size_t>(n);
    ds.w_unsafe = d.real("w_unsafe", ds.w_unsafe);
    ds.w_safe = d.real("w_safe", ds.w_safe);
    ds.w_uniform = d.real("w_uniform", ds.w_uniform);
    ds.epsilon = d.real("epsilon", ds.epsilon);
    ds.horizon = static_cast<int>(d.integer("horizon", 0));
    ds.seed = static_cast<std::uint64_t>(d.integer("seed", 0));
    ds.tempting = d.boolean("tempting", false);
    ds.tempting_lo = d.real("tempting_lo", 0.0);
    ds.tempting_hi = d.real("tempting_hi", 0.0);
    ds.keep_fraction = d.real("keep_fraction", 0.1);
  }
  {
    const Section c = section("critic");
    CriticConfig &cc = config.critic;
    cc.expectile_reward = c.real("expectile_reward", cc.expectile_reward);
    cc.expectile_cost = c.real("expectile_cost", cc.expectile_cost);
    cc.learning_rate = c.real("learning_rate", cc.learning_rate);
    const std::string update = c.raw("target_update").value_or("hard");
    if (update == "hard" || update == "hard-each-step") {
      cc.target_update = TargetUpdate::kHardEachStep;
    } else if (update == "polyak") {
      cc.target_update = TargetUpdate::kPolyak;
    } else {
      c.fail("target_update", "expected hard or polyak");
    }
    cc.polyak_coefficient = c.real("polyak_coefficient", cc.polyak_coefficient);
    cc.epochs = static_cast<int>(c.integer("epochs", cc.epochs));
    cc.batch_size = static_cast<std::size_t>(c.integer("batch_size", 0));
    cc.seed = static_cast<std::uint64_t>(c.integer("seed", 0));
    cc.convergence_tol = c.real("convergence_tol", cc.convergence_tol);
    cc.cost_expectile_flipped = c.boolean("cost_expectile_flipped", false);
  }
  {
    const Section a = section("actor");
    ActorConfig &ac = config.actor;
    if (const auto list = a.raw("variants")) {
      config.variants.clear();
      for (const auto &name : split(*list, ',')) {
        try {
          config.variants.push_back(parse_variant(name));
        } catch (const InvalidInputError &e) {
          a.fail("variants", e.what());
        }
      }
      if (config.variants.empty()) {
        a.fail("variants", "at least one variant is required");
      }
    }
    ac.lambda = a.real("lambda", ac.lambda);
    ac.nu_hat = a.real("nu_hat", ac.nu_hat);
    ac.nu_max = a.real("nu_max", ac.nu_max);
    ac.multiplier_lr = a.real("multiplier_lr", ac.multiplier_lr);
    ac.actor_lr = a.real("actor_lr", ac.actor_lr);
    ac.weight_clip = a.real("weight_clip", ac.weight_clip);
    ac.iterations = static_cast<int>(a.integer("iterations", ac.iterations));
    ac.policy_steps = static_cast<int>(a.integer("policy_steps", ac.policy_steps));
    ac.seed = static_cast<std::uint64_t>(a.integer("seed", 0));
    ac.multiplier_first = a.boolean("multiplier_first", true);
    ac.global_multiplier = a.boolean("global_multiplier", false);
    ac.recompute_critics_every =
        static_cast<int>(a.integer("recompute_critics_every", 0));
  }
  {
    const Section t = section("thresholds");
    ThresholdSection &th = config.thresholds;
    th.kappa_undiscounted = t.real("kappa_undiscounted", th.kappa_undiscounted);
    if (t.raw("planning_steps")) {
      th.planning_steps = static_cast<int>(t.integer("planning_steps", 0));
    }
    th.kappa_discounted = t.optional_real("kappa_discounted");
  }
  {
    const Section e = section("eval");
    EvalSection &ev = config.eval;
    ev.n_eval_rollouts = static_cast<std::size_t>(e.integer("n_eval_rollouts", 20));
    if (const auto seeds = e.raw("seeds")) {
      ev.seeds.clear();
      for (const auto &item : split(*seeds, ',')) {
        ev.seeds.push_back(static_cast<std::uint64_t>(e.parse_integer("seeds", item)));
      }
    }
    ev.closed_form_suite = e.boolean("closed_form_suite", false);
    ev.closed_form_instances = static_cast<std::size_t>(e.integer("closed_form_instances", 200));
    if (const auto dir = e.raw("output_dir")) {
      config.output_dir = *dir;
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open config file " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void require_valid(const ExperimentConfig &config) {
  const ThresholdSection &th = config.thresholds;
  if (!(th.kappa_undiscounted > 0.0)) {
    throw InvalidInputError("kappa_undiscounted must be positive");
  }
  if (!th.kappa_discounted && !th.planning_steps) {
    throw InvalidInputError("thresholds need kappa_discounted or planning_steps");
  }
  if (th.planning_steps && *th.planning_steps < 1) {
    throw InvalidInputError("planning_steps must be at least 1");
  }
  if (config.eval.seeds.empty()) {
    throw InvalidInputError("at least one evaluation seed is required");
  }
  if (config.eval.n_eval_rollouts < 1) {
    throw InvalidInputError("n_eval_rollouts must be at least 1");
  }
  require_valid(config.critic);
  require_valid(config.actor);
}

double kappa_from_planning(double kappa_undiscounted, int planning_steps, double gamma) {
  if (planning_steps < 1) {
    throw InvalidInputError("planning_steps must be at least 1");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw InvalidInputError("gamma must lie in [0, 1)");
  }
  double sum = 0.0;
  double power = 1.0;
  for (int t = 0; t < planning_steps; ++t) {
    sum += power;
    power *= gamma;
  }
  return kappa_undiscounted / static_cast<double>(planning_steps) * sum;
}

double training_kappa(const ExperimentConfig &config) {
  const ThresholdSection &th = config.thresholds;
  if (th.kappa_discounted) {
    return *th.kappa_discounted;
  }
  if (!th.planning_steps) {
    throw InvalidInputError("thresholds need kappa_discounted or planning_steps");
  }
  return kappa_from_planning(th.kappa_undiscounted, *th.planning_steps, config.grid.gamma);
}

NormalizedMetrics normalize_metrics(double reward_return, double cost_return_undiscounted,
                                    double r_min, double r_max, double kappa_undiscounted) {
  if (!(r_max > r_min)) {
    throw InvalidInputError(
        fmt::format("degenerate reward range: r_min {} r_max {}", r_min, r_max));
  }
  if (!(kappa_undiscounted > 0.0)) {
    throw InvalidInputError("kappa_undiscounted must be positive");
  }
  return {(reward_return - r_min) / (r_max - r_min),
          cost_return_undiscounted / kappa_undiscounted};
}

MetricsRow make_metrics_row(const std::string &variant, std::uint64_t seed, double norm_reward,
                            double norm_cost, double exact_vr, double exact_vc) {
  MetricsRow row;
  row.variant = variant;
  row.seed = seed;
  row.normalized_reward = norm_reward;
  row.normalized_cost = norm_cost;
  row.exact_v_r_rho0 = exact_vr;
  row.exact_v_c_rho0 = exact_vc;
  row.safe = norm_cost < 1.0;
  return row;
}

RolloutSummary monte_carlo(const Cmdp &cmdp, const Matrix &policy, std::size_t rollouts,
                           std::uint64_t seed) {
  require_policy(cmdp, policy);
  if (rollouts == 0) {
    throw InvalidInputError("at least one rollout is required");
  }
  RolloutSummary summary;
  summary.rollouts = rollouts;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < rollouts; ++i) {
    const Trajectory t = rollout(cmdp, policy, cmdp.horizon, derive_seed(seed, i));
    summary.mean_reward_disc += t.discounted_reward_return;
    summary.mean_cost_disc += t.discounted_cost_return;
    summary.mean_cost_undisc += t.undiscounted_cost_return;
    sum_sq += t.discounted_cost_return * t.discounted_cost_return;
  }
  const double n = static_cast<double>(rollouts);
  summary.mean_reward_disc /= n;
  summary.mean_cost_disc /= n;
  summary.mean_cost_undisc /= n;
  if (rollouts > 1) {
    const double var =
        std::max(0.0, (sum_sq - n * summary.mean_cost_disc * summary.mean_cost_disc) / (n - 1.0));
    summary.se_cost_disc = std::sqrt(var / n);
  }
  return summary;
}

bool monte_carlo_consistent(const Cmdp &cmdp, double exact, double mean, double se,
                            Signal signal) {
  const Matrix &g = signal == Signal::kReward ? cmdp.reward : cmdp.cost;
  const double tail =
      std::pow(cmdp.gamma, cmdp.horizon) * g.cwiseAbs().maxCoeff() / (1.0 - cmdp.gamma);
  return std::abs(exact - mean) <= 3.0 * se + tail;
}

Comparison compare(const std::vector<MetricsRow> &rows) {
  Comparison out;
  out.rows = rows;
  std::vector<std::string> order;
  for (const auto &row : rows) {
    if (std::find(order.begin(), order.end(), row.variant) == order.end()) {
      order.push_back(row.variant);
    }
  }
  for (const auto &variant : order) {
    double r = 0.0;
    double c = 0.0;
    double vr = 0.0;
    double vc = 0.0;
    std::size_t n = 0;
    for (const auto &row : rows) {
      if (row.variant != variant) {
        continue;
      }
      r += row.normalized_reward;
      c += row.normalized_cost;
      vr += row.exact_v_r_rho0;
      vc += row.exact_v_c_rho0;
      ++n;
    }
    const double k = static_cast<double>(n);
    out.means.push_back(make_metrics_row(variant, 0, r / k, c / k, vr / k, vc / k));
  }
  return out;
}

std::string metrics_csv(const std::vector<MetricsRow> &rows) {
  std::string out = "variant,seed,norm_reward,norm_cost,exact_vr,exact_vc,safe\n";
  for (const auto &row : rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", row.variant, row.seed,
                       format_real(row.normalized_reward), format_real(row.normalized_cost),
                       format_real(row.exact_v_r_rho0), format_real(row.exact_v_c_rho0),
                       row.safe ? 1 : 0);
  }
  return out;
}

std::string comparison_text(const Comparison &comparison) {
  std::string out = fmt::format("{:<10} {:>6} {:>10} {:>10} {:>10} {:>10}  {}\n", "variant",
                                "seed", "norm_R", "norm_C", "exact_Vr", "exact_Vc", "safe");
  const auto line = [](const MetricsRow &row, const std::string &seed) {
    return fmt::format("{:<10} {:>6} {:>10.2f} {:>10.2f} {:>10.4f} {:>10.4f}  {}\n",
                       row.variant, seed, row.normalized_reward, row.normalized_cost,
                       row.exact_v_r_rho0, row.exact_v_c_rho0, row.safe ? "SAFE" : "-");
  };
  for (const auto &row : comparison.rows) {
    out += line(row, std::to_string(row.seed));
  }
  out += "\n";
  for (const auto &row : comparison.means) {
    out += line(row, "mean");
  }
  return out;
}

Cmdp build_environment(const ExperimentConfig &config) { return make_gridworld(config.grid); }

Dataset build_dataset(const ExperimentConfig &config, const Cmdp &env) {
  const DatasetSection &ds = config.dataset;
  if (ds.n_trajectories == 0) {
    throw InvalidInputError("n_trajectories must be positive");
  }
  const auto mixture = reference_mixture(env, ds.w_unsafe, ds.w_safe, ds.w_uniform, ds.epsilon);
  const int horizon = ds.horizon > 0 ? ds.horizon : env.horizon;
  Dataset dataset = generate_dataset(env, mixture, ds.n_trajectories, horizon, ds.seed);
  if (ds.tempting) {
    dataset = tempting_filter(dataset, ds.tempting_lo, ds.tempting_hi, ds.keep_fraction,
                              derive_seed(ds.seed, kTemptingTag));
  }
  return dataset;
}

std::string environment_json(const Cmdp &env) {
  nlohmann::ordered_json doc;
  doc["fingerprint"] = env.fingerprint();
  doc["n_states"] = env.n_states;
  doc["n_actions"] = env.n_actions;
  doc["gamma"] = env.gamma;
  doc["horizon"] = env.horizon;
  doc["r_min"] = env.r_min;
  doc["r_max"] = env.r_max;
  std::vector<double> rho0(env.rho0.data(), env.rho0.data() + env.rho0.size());
  doc["rho0"] = rho0;
  return doc.dump(2) + "\n";
}

ActorConfig actor_config_for(const ExperimentConfig &config, Variant variant,
                             std::uint64_t seed) {
  ActorConfig actor = config.actor;
  actor.variant = variant;
  actor.seed = seed;
  actor.kappa = training_kappa(config);
  return actor;
}

TrainingResult train_variant(const ExperimentConfig &config, const Cmdp &env,
                             const Dataset &dataset, const CriticSet &critics, Variant variant,
                             std::uint64_t seed) {
  return train_actor(dataset, critics, config.critic, actor_config_for(config, variant, seed),
                     &env);
}

MetricsRow evaluate_policy(const ExperimentConfig &config, const Cmdp &env,
                           const Matrix &policy, Variant variant, std::uint64_t seed) {
  const RolloutSummary mc =
      monte_carlo(env, policy, config.eval.n_eval_rollouts, derive_seed(seed, kEvalTag));
  const NormalizedMetrics norm =
      normalize_metrics(mc.mean_reward_disc, mc.mean_cost_undisc, env.r_min, env.r_max,
                        config.thresholds.kappa_undiscounted);
  return make_metrics_row(to_string(variant), seed, norm.reward, norm.cost,
                          value_at_rho0(env, policy, Signal::kReward),
                          value_at_rho0(env, policy, Signal::kCost));
}

BoundReport bound_for_policy(const Cmdp &cmdp, const Dataset &dataset, const Matrix &pi_k,
                             double kappa, double lambda, double nu_max) {
  const Matrix pi_beta = dataset.behavior.completed();
  const ExactValues reward = policy_eval_exact(cmdp, pi_k, Signal::kReward);
  const ExactValues cost = policy_eval_exact(cmdp, pi_k, Signal::kCost);
  const Vector nu =
      dual_multipliers(reward.a, cost.a, pi_beta, cost.v, kappa, cmdp.gamma, lambda, nu_max);
  const NonparametricSolution star = solve_nonparametric(reward.a, cost.a, pi_beta, lambda, nu);
  return violation_bound(cmdp, star.pi_star, pi_k, pi_beta, cost, kappa, dataset.states_in_data(),
                     dataset.state_frequency());
}

BoundSuite bound_suite(const Cmdp &cmdp, const Dataset &dataset,
                       const std::vector<std::pair<std::string, Matrix>> &policies, double kappa,
                       const std::vector<double> &lambdas, double nu_max) {
  const Matrix pi_beta = dataset.behavior.completed();
  const std::vector<bool> &states = dataset.states_in_data();
  const Vector weights = dataset.state_frequency();
  BoundSuite suite;
  suite.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto &[name, pi_k] : policies) {
    const ExactValues reward = policy_eval_exact(cmdp, pi_k, Signal::kReward);
    const ExactValues cost = policy_eval_exact(cmdp, pi_k, Signal::kCost);
    double worst_v_c = 0.0;
    for (std::size_t s = 0; s < states.size(); ++s) {
      if (states[s]) {
        worst_v_c = std::max(worst_v_c, cost.v[static_cast<Eigen::Index>(s)]);
      }
    }
    for (double threshold : {kappa, worst_v_c}) {
      for (double lambda : lambdas) {
        for (const char *mode : {"dual", "zero", "max"}) {
          Vector nu;
          if (std::string(mode) == "dual") {
            nu = dual_multipliers(reward.a, cost.a, pi_beta, cost.v, threshold, cmdp.gamma,
                                  lambda, nu_max);
          } else {
            nu = Vector::Constant(static_cast<Eigen::Index>(cmdp.n_states),
                                  std::string(mode) == "zero" ? 0.0 : nu_max);
          }
          const NonparametricSolution star =
              solve_nonparametric(reward.a, cost.a, pi_beta, lambda, nu);
          BoundCase c{name, threshold, lambda, mode,
                      violation_bound(cmdp, star.pi_star, pi_k, pi_beta, cost, threshold, states,
                                  weights)};
          if (c.report.pi_k_feasible) {
            ++suite.feasible;
            suite.violations += c.report.holds ? 0 : 1;
            suite.worst_margin = std::min(suite.worst_margin, c.report.rhs - c.report.lhs);
          }
          suite.cases.push_back(std::move(c));
        }
      }
    }
  }
  return suite;
}

ExperimentResult run_experiment(const ExperimentConfig &config, bool write_outputs) {
  ExperimentResult result;
  run_stage("config", [&] { require_valid(config); });
  result.kappa = run_stage("config", [&] { return training_kappa(config); });
  result.env = run_stage("environment", [&] { return build_environment(config); });
  result.dataset = run_stage("dataset", [&] { return build_dataset(config, result.env); });
  result.stats = run_stage("dataset", [&] {
    const FeasibilityReport feasible =
        feasible_set(result.env, result.kappa, result.dataset.states_in_data());
    return dataset_stats(result.dataset, &feasible);
  });
  result.critics = run_stage("critic", [&] {
    return train_critics(result.dataset, result.env.gamma, config.critic).critics;
  });

  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : config.eval.seeds) {
    for (Variant variant : config.variants) {
      VariantRun run;
      run.variant = variant;
      run.seed = seed;
      run.training = run_stage("actor", [&] {
        return train_variant(config, result.env, result.dataset, result.critics, variant, seed);
      });
      const Matrix probs = run.training.policy.probabilities();
      run.metrics = run_stage(
          "evaluation", [&] { return evaluate_policy(config, result.env, probs, variant, seed); });
      run.bound = run_stage("verification", [&] {
        return bound_for_policy(result.env, result.dataset, probs, result.kappa,
                                config.actor.lambda, config.actor.nu_max);
      });
      run.centering = run_stage("verification", [&] {
        return centering_audit(result.env, probs, &result.critics,
                               result.dataset.states_in_data());
      });
      rows.push_back(run.metrics);
      result.runs.push_back(std::move(run));
    }
  }
  result.comparison = compare(rows);
  if (config.eval.closed_form_suite) {
    result.closed_form = run_stage("verification", [&] {
      const std::size_t counts[] = {4};
      return check_closed_form(config.eval.closed_form_instances, counts, config.dataset.seed);
    });
  }

  if (write_outputs) {
    run_stage("output", [&] {
      const auto &dir = config.output_dir;
      std::filesystem::create_directories(dir);
      const std::string fp = result.env.fingerprint();
      write_output(dir, "env.json", environment_json(result.env));
      save_dataset(result.dataset, dir / "dataset.jsonl");
      write_output(dir, "dataset_stats.csv", stats_csv(result.stats));
      save_critics(result.critics, config.critic, fp, dir / "critics.txt");
      std::vector<NamedBound> bounds;
      for (const auto &run : result.runs) {
        const std::string tag = run_tag(run.variant, run.seed);
        save_policy(run.training.policy, actor_config_for(config, run.variant, run.seed), fp,
                    dir / ("policy_" + tag + ".txt"));
        write_output(dir, "history_" + tag + ".csv", history_csv(run.training.history));
        bounds.push_back({tag, run.bound});
      }
      write_output(dir, "metrics.csv", metrics_csv(result.comparison.rows));
      write_output(dir, "comparison.txt", comparison_text(result.comparison));
      const CenteringAudit *centering =
          result.runs.empty() ? nullptr : &result.runs.front().centering;
      write_output(dir, "verification.json",
                   verification_report_json(result.closed_form ? &*result.closed_form : nullptr, bounds,
                                            centering));
    });
  }
  return result;
}

} // namespace fawac
