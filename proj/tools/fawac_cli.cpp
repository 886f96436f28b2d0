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

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace fawac;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load(const GlobalOptions &opts) {
  ExperimentConfig config = run_stage("config", [&] {
    if (opts.config_path.empty()) {
      throw InvalidInputError("--config is required");
    }
    return load_config(opts.config_path);
  });
  if (opts.seed) {
    config.eval.seeds = {*opts.seed};
  }
  if (!opts.out.empty()) {
    config.output_dir = opts.out;
  }
  run_stage("config", [&] { require_valid(config); });
  return config;
}

std::string tag_of(Variant variant, std::uint64_t seed) {
  return fmt::format("{}_seed{}", to_string(variant), seed);
}

Cmdp environment(const ExperimentConfig &config) {
  return run_stage("environment", [&] { return build_environment(config); });
}

// Reuses a dataset already in the output directory, else generates one.
Dataset dataset_for(const ExperimentConfig &config, const Cmdp &env) {
  const fs::path path = config.output_dir / "dataset.jsonl";
  if (fs::exists(path)) {
    return run_stage("dataset", [&] {
      LoadedDataset loaded = load_dataset(path, &env);
      for (const auto &warning : loaded.warnings) {
        std::cerr << "warning: " << warning << "\n";
      }
      return loaded.dataset;
    });
  }
  return run_stage("dataset", [&] { return build_dataset(config, env); });
}

std::vector<std::pair<Variant, std::uint64_t>> runs_of(const ExperimentConfig &config) {
  std::vector<std::pair<Variant, std::uint64_t>> runs;
  for (std::uint64_t seed : config.eval.seeds) {
    for (Variant variant : config.variants) {
      runs.emplace_back(variant, seed);
    }
  }
  return runs;
}

Matrix load_trained(const ExperimentConfig &config, Variant variant, std::uint64_t seed,
                    const std::string &stage) {
  return run_stage(stage, [&] {
    const fs::path path = config.output_dir / ("policy_" + tag_of(variant, seed) + ".txt");
    if (!fs::exists(path)) {
      throw InvalidInputError("missing " + path.string() + " (run train first)");
    }
    return load_policy(path).probabilities();
  });
}

int cmd_gen_env(const ExperimentConfig &config) {
  const Cmdp env = environment(config);
  run_stage("output", [&] {
    fs::create_directories(config.output_dir);
    write_file_atomic(config.output_dir / "env.json", environment_json(env));
  });
  std::cout << fmt::format("environment {} ({} states, {} actions) r_min={:.6f} r_max={:.6f}\n",
                           env.fingerprint(), env.n_states, env.n_actions, env.r_min, env.r_max);
  return 0;
}

int cmd_gen_dataset(const ExperimentConfig &config) {
  const Cmdp env = environment(config);
  const Dataset dataset = run_stage("dataset", [&] { return build_dataset(config, env); });
  const double kappa = training_kappa(config);
  const DatasetStats stats = run_stage("dataset", [&] {
    const FeasibilityReport feasible = feasible_set(env, kappa, dataset.states_in_data());
    return dataset_stats(dataset, &feasible);
  });
  run_stage("output", [&] {
    fs::create_directories(config.output_dir);
    save_dataset(dataset, config.output_dir / "dataset.jsonl");
    write_file_atomic(config.output_dir / "dataset_stats.csv", stats_csv(stats));
  });
  std::cout << fmt::format("{} trajectories, {} transitions, mean discounted cost {:.4f}, "
                           "median undiscounted cost {:.4f}, feasible fraction {:.3f}\n",
                           dataset.trajectories.size(), dataset.transitions.size(),
                           stats.mean_cost_return, stats.median_cost_return_undisc,
                           stats.feasible_fraction.value_or(1.0));
  return 0;
}

int cmd_train(ExperimentConfig config, const std::vector<std::string> &variant_names) {
  if (!variant_names.empty()) {
    config.variants.clear();
    for (const auto &name : variant_names) {
      config.variants.push_back(run_stage("config", [&] { return parse_variant(name); }));
    }
  }
  const Cmdp env = environment(config);
  const Dataset dataset = dataset_for(config, env);
  const CriticSet critics = run_stage(
      "critic", [&] { return train_critics(dataset, env.gamma, config.critic).critics; });
  run_stage("output", [&] {
    fs::create_directories(config.output_dir);
    save_critics(critics, config.critic, env.fingerprint(), config.output_dir / "critics.txt");
  });
  std::cout << fmt::format("kappa = {:.6f}\n", training_kappa(config));
  for (const auto &[variant, seed] : runs_of(config)) {
    const TrainingResult result = run_stage("actor", [&, v = variant, s = seed] {
      return train_variant(config, env, dataset, critics, v, s);
    });
    const std::string tag = tag_of(variant, seed);
    run_stage("output", [&, v = variant, s = seed] {
      save_policy(result.policy, actor_config_for(config, v, s), env.fingerprint(),
                  config.output_dir / ("policy_" + tag + ".txt"));
      write_file_atomic(config.output_dir / ("history_" + tag + ".csv"),
                        history_csv(result.history));
    });
    const auto &last = result.history.rows.back();
    std::cout << fmt::format("{:<16} V_r(rho0)={:.4f} V_c(rho0)={:.4f} KL={:.4f} clips={}\n",
                             tag, last.v_r_rho0, last.v_c_rho0, last.kl_to_beta,
                             last.clip_count);
  }
  return 0;
}

int cmd_eval(const ExperimentConfig &config) {
  const Cmdp env = environment(config);
  std::vector<MetricsRow> rows;
  for (const auto &[variant, seed] : runs_of(config)) {
    const Matrix policy = load_trained(config, variant, seed, "evaluation");
    rows.push_back(run_stage("evaluation", [&, v = variant, s = seed] {
      return evaluate_policy(config, env, policy, v, s);
    }));
  }
  const Comparison comparison = compare(rows);
  run_stage("output", [&] {
    write_file_atomic(config.output_dir / "metrics.csv", metrics_csv(rows));
    write_file_atomic(config.output_dir / "comparison.txt", comparison_text(comparison));
  });
  std::cout << comparison_text(comparison);
  return 0;
}

int cmd_verify(const ExperimentConfig &config, std::size_t closed_form_instances) {
  const Cmdp env = environment(config);
  const Dataset dataset = dataset_for(config, env);
  const double kappa = training_kappa(config);
  const std::size_t counts[] = {4};
  const ClosedFormReport closed_form = run_stage("verification", [&] {
    return check_closed_form(closed_form_instances, counts, config.dataset.seed);
  });
  std::vector<NamedBound> bounds;
  std::optional<CenteringAudit> centering;
  for (const auto &[variant, seed] : runs_of(config)) {
    const fs::path path = config.output_dir / ("policy_" + tag_of(variant, seed) + ".txt");
    if (!fs::exists(path)) {
      continue;
    }
    const Matrix policy = load_trained(config, variant, seed, "verification");
    bounds.push_back({tag_of(variant, seed), run_stage("verification", [&] {
                        return bound_for_policy(env, dataset, policy, kappa,
                                                config.actor.lambda, config.actor.nu_max);
                      })});
    if (!centering) {
      centering = run_stage("verification", [&] { return centering_audit(env, policy); });
    }
  }
  const std::string report =
      verification_report_json(&closed_form, bounds, centering ? &*centering : nullptr);
  run_stage("output", [&] {
    fs::create_directories(config.output_dir);
    write_file_atomic(config.output_dir / "verification.json", report);
  });
  std::size_t violations = 0;
  for (const auto &b : bounds) {
    violations += (b.report.pi_k_feasible && !b.report.holds) ? 1 : 0;
  }
  std::cout << fmt::format("closed form vs brute force: {} instances, max TV {:.3e}\n",
                           closed_form.instances, closed_form.max_tv_distance);
  std::cout << fmt::format("bound checks: {} policies, {} violations with feasible pi_k\n",
                           bounds.size(), violations);
  return closed_form.max_tv_distance < 1e-5 && violations == 0 ? 0 : 3;
}

int cmd_compare(ExperimentConfig config) {
  config.eval.closed_form_suite = false;
  const ExperimentResult result = run_experiment(config, true);
  std::cout << comparison_text(result.comparison);
  return 0;
}

int cmd_run(const ExperimentConfig &config) {
  const ExperimentResult result = run_experiment(config, true);
  std::cout << fmt::format("kappa = {:.6f}, {} transitions\n", result.kappa,
                           result.dataset.transitions.size());
  std::cout << comparison_text(result.comparison);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Feasibility-informed advantage weighted regression lab for tabular CMDPs"};
  app.require_subcommand(1);
  GlobalOptions opts;
  std::uint64_t seed = 0;
  app.add_option("--config", opts.config_path, "experiment config (.ini)");
  auto *seed_opt = app.add_option("--seed", seed, "single evaluation/training seed");
  app.add_option("--out", opts.out, "output directory");

  auto *gen_env = app.add_subcommand("gen-env", "build the gridworld and write env.json");
  auto *gen_dataset = app.add_subcommand("gen-dataset", "generate the offline dataset");
  auto *train = app.add_subcommand("train", "train critics and actor variants");
  std::vector<std::string> variant_names;
  train->add_option("--variant", variant_names, "variants to train (default: config list)");
  auto *eval = app.add_subcommand("eval", "evaluate trained policies");
  auto *verify = app.add_subcommand("verify", "run the verification suite");
  std::size_t instances = 200;
  verify->add_option("--instances", instances, "closed-form vs brute-force instances");
  auto *compare_cmd = app.add_subcommand("compare", "train and evaluate every variant");
  auto *run = app.add_subcommand("run", "full pipeline");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) {
    opts.seed = seed;
  }

  try {
    const ExperimentConfig config = load(opts);
    if (*gen_env) {
      return cmd_gen_env(config);
    }
    if (*gen_dataset) {
      return cmd_gen_dataset(config);
    }
    if (*train) {
      return cmd_train(config, variant_names);
    }
    if (*eval) {
      return cmd_eval(config);
    }
    if (*verify) {
      return cmd_verify(config, instances);
    }
    if (*compare_cmd) {
      return cmd_compare(config);
    }
    if (*run) {
      return cmd_run(config);
    }
  } catch (const StageError &e) {
    std::cerr << "error [" << e.stage() << "]: " << e.message() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
