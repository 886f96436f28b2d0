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

#include "fawac/actor.hpp"
#include "fawac/cmdp.hpp"
#include "fawac/critic.hpp"
#include "fawac/dataset.hpp"
#include "fawac/verify.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fawac {

/// Discounted threshold used by the original benchmark configuration.
inline constexpr double benchmark_preset_kappa = 7.32;

/// Desk-scale undiscounted budgets for the gridworld.
inline constexpr double desk_kappa_presets[] = {2.0, 4.0, 8.0};

/// Error raised by the harness with the failing stage attached.
class StageError : public Error {
public:
  StageError(std::string stage, const std::string &message)
      : Error(stage + ": " + message), stage_(std::move(stage)), message_(message) {}
  const std::string &stage() const { return stage_; }
  const std::string &message() const { return message_; }

private:
  std::string stage_;
  std::string message_;
};

struct DatasetSection {
  std::size_t n_trajectories = 500;
  double w_unsafe = 0.5;
  double w_safe = 0.3;
  double w_uniform = 0.2;
  double epsilon = 0.1;
  // 0 uses the environment horizon.
  int horizon = 0;
  std::uint64_t seed = 0;
  bool tempting = false;
  double tempting_lo = 0.0;
  double tempting_hi = 0.0;
  double keep_fraction = 0.1;
};

struct ThresholdSection {
  double kappa_undiscounted = 2.0;
  std::optional<int> planning_steps;
  std::optional<double> kappa_discounted;
};

struct EvalSection {
  std::size_t n_eval_rollouts = 20;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool closed_form_suite = false;
  std::size_t closed_form_instances = 200;
};

struct ExperimentConfig {
  GridworldSpec grid;
  DatasetSection dataset;
  CriticConfig critic;
  ActorConfig actor;
  std::vector<Variant> variants{Variant::kBc, Variant::kAwr, Variant::kFawacP,
                                Variant::kFawacM};
  ThresholdSection thresholds;
  EvalSection eval;
  std::filesystem::path output_dir = "out";
};

/// Parses the sectioned key-value format ([grid] [dataset] [critic] [actor]
/// [thresholds] [eval]). Throws ParseError naming the offending key.
ExperimentConfig parse_config(const std::string &text);
ExperimentConfig load_config(const std::filesystem::path &path);

/// Throws InvalidInputError unless the threshold section determines kappa.
void require_valid(const ExperimentConfig &config);

/// (kappa' / H) sum_{t < H} gamma^t.
double kappa_from_planning(double kappa_undiscounted, int planning_steps, double gamma);

/// Explicit discounted kappa if given, else the planning-steps conversion.
double training_kappa(const ExperimentConfig &config);

struct NormalizedMetrics {
  double reward = 0.0;
  double cost = 0.0;
};

NormalizedMetrics normalize_metrics(double reward_return, double cost_return_undiscounted,
                                    double r_min, double r_max, double kappa_undiscounted);

struct MetricsRow {
  std::string variant;
  std::uint64_t seed = 0;
  double normalized_reward = 0.0;
  double normalized_cost = 0.0;
  double exact_v_r_rho0 = 0.0;
  double exact_v_c_rho0 = 0.0;
  bool safe = false;
};

MetricsRow make_metrics_row(const std::string &variant, std::uint64_t seed, double norm_reward,
                            double norm_cost, double exact_vr, double exact_vc);

struct RolloutSummary {
  std::size_t rollouts = 0;
  double mean_reward_disc = 0.0;
  double mean_cost_disc = 0.0;
  double se_cost_disc = 0.0;
  double mean_cost_undisc = 0.0;
};

/// Seeded Monte Carlo evaluation from rho0 up to the CMDP horizon.
RolloutSummary monte_carlo(const Cmdp &cmdp, const Matrix &policy, std::size_t rollouts,
                           std::uint64_t seed);

/// |exact - mean| <= 3 SE + gamma^T max|g| / (1 - gamma).
bool monte_carlo_consistent(const Cmdp &cmdp, double exact, double mean, double se,
                            Signal signal);

struct Comparison {
  std::vector<MetricsRow> rows;
  std::vector<MetricsRow> means; // one per variant, seed unused
};

Comparison compare(const std::vector<MetricsRow> &rows);

std::string metrics_csv(const std::vector<MetricsRow> &rows);
std::string comparison_text(const Comparison &comparison);

// --- pipeline stages --------------------------------------------------------

Cmdp build_environment(const ExperimentConfig &config);
Dataset build_dataset(const ExperimentConfig &config, const Cmdp &env);
std::string environment_json(const Cmdp &env);

struct VariantRun {
  Variant variant = Variant::kBc;
  std::uint64_t seed = 0;
  TrainingResult training;
  MetricsRow metrics;
  BoundReport bound;
  CenteringAudit centering;
};

/// Actor configuration for one variant of the experiment.
ActorConfig actor_config_for(const ExperimentConfig &config, Variant variant,
                             std::uint64_t seed);

/// Trains one variant on shared critics.
TrainingResult train_variant(const ExperimentConfig &config, const Cmdp &env,
                             const Dataset &dataset, const CriticSet &critics, Variant variant,
                             std::uint64_t seed);

/// Exact and Monte Carlo evaluation of a trained policy.
MetricsRow evaluate_policy(const ExperimentConfig &config, const Cmdp &env,
                           const Matrix &policy, Variant variant, std::uint64_t seed);

/// Bound check for a trained policy taken as pi_k, with pi* the closed-form
/// solution on oracle advantages of pi_k and per-state dual multipliers.
BoundReport bound_for_policy(const Cmdp &cmdp, const Dataset &dataset, const Matrix &pi_k,
                             double kappa, double lambda, double nu_max);

struct BoundCase {
  std::string policy;
  double kappa = 0.0;
  double lambda = 0.0;
  // "dual", "zero" or "max": how pi*'s multipliers were chosen.
  std::string multiplier_mode;
  BoundReport report;
};

struct BoundSuite {
  std::vector<BoundCase> cases;
  std::size_t feasible = 0;
  std::size_t violations = 0;
  // Smallest rhs - lhs over feasible cases.
  double worst_margin = 0.0;
};

/// Sweeps the bound over candidate pi_k policies, two thresholds (the given
/// kappa and pi_k's largest dataset-state cost value), the given
/// temperatures, and three multiplier choices for pi*.
BoundSuite bound_suite(const Cmdp &cmdp, const Dataset &dataset,
                       const std::vector<std::pair<std::string, Matrix>> &policies, double kappa,
                       const std::vector<double> &lambdas, double nu_max);

struct ExperimentResult {
  Cmdp env;
  Dataset dataset;
  DatasetStats stats;
  CriticSet critics;
  double kappa = 0.0;
  std::vector<VariantRun> runs;
  Comparison comparison;
  std::optional<ClosedFormReport> closed_form;
};

/// Full pipeline. When `write_outputs` is set, every artifact is written
/// atomically under config.output_dir. Failures raise StageError.
ExperimentResult run_experiment(const ExperimentConfig &config, bool write_outputs = true);

/// Wraps `body`, converting any exception into StageError(stage).
template <typename F> auto run_stage(const std::string &stage, F &&body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError &) {
    throw;
  } catch (const std::exception &e) {
    throw StageError(stage, e.what());
  }
}

} // namespace fawac
