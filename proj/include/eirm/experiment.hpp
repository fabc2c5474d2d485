#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eirm/datasets.hpp"
#include "eirm/game.hpp"

namespace eirm {

enum class Method { FIrm, VIrm, Erm, ErmPerEnv, Robust, Oracle };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);
const std::vector<Method>& all_methods();

struct ExperimentConfig {
  BenchmarkName benchmark = BenchmarkName::ColoredShapes;
  BenchmarkOptions data;
  std::vector<Method> methods = all_methods();
  TrainConfig train;
  ArchConfig arch;
  std::size_t n_seeds = 10;
  std::uint64_t seed_offset = 0;
  std::filesystem::path out_dir = "results";
  bool checkpoints = true;
};

/// "desk": 2000 rows per environment, width 64, 3000 turns recorded every 20, 3 seeds.
/// "paper": the full-scale defaults.
ExperimentConfig preset_config(std::string_view preset);

/// Overrides fields of `base` with those present in the JSON text. A top-level
/// "preset" key replaces `base` with that preset first. Unknown keys and bad
/// values raise ConfigError naming the field.
ExperimentConfig config_from_json(std::string_view text, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::string> preset = std::nullopt);
std::string config_to_json(const ExperimentConfig& config);

/// Seed used for run index i.
std::uint64_t run_seed(const ExperimentConfig& config, std::size_t i);

struct SeedResult {
  Method method = Method::Erm;
  std::uint64_t seed = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::size_t turns = 0;
  bool terminated = false;
};

struct MethodSummary {
  Method method = Method::Erm;
  std::size_t runs = 0;
  double train_mean = 0.0;
  std::optional<double> train_std;
  double test_mean = 0.0;
  std::optional<double> test_std;
};

/// Mean and sample standard deviation per method, in first-seen order.
std::vector<MethodSummary> summarize(const std::vector<SeedResult>& results);

struct MethodRun {
  SeedResult result;
  /// One trace per trained model (ERM_PER_ENV yields one per environment).
  std::vector<TrainTrace> traces;
  /// Final ensemble for the game methods.
  std::optional<EnsembleModel> ensemble;
  std::vector<Mlp> classifiers;
};

MethodRun run_method(Method method, const Benchmark& bench, const ExperimentConfig& config, std::uint64_t seed);

std::filesystem::path trace_path(const std::filesystem::path& out, Method m, std::uint64_t seed,
                                 std::optional<std::size_t> env = std::nullopt);
std::filesystem::path checkpoint_path(const std::filesystem::path& out, Method m, std::uint64_t seed,
                                      std::optional<std::size_t> env = std::nullopt);

void write_results_csv(const std::vector<MethodSummary>& table, std::ostream& out);
void write_results_markdown(const std::vector<MethodSummary>& table, std::ostream& out);
void write_seed_csv(const std::vector<SeedResult>& results, std::ostream& out);

struct ExperimentResult {
  std::vector<SeedResult> runs;
  std::vector<MethodSummary> table;
};

/// Runs every (seed, method) pair and writes traces, checkpoints, results.csv,
/// results.md, seeds.csv and manifest.json under config.out_dir. Progress goes
/// to `log` when given.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

}  // namespace eirm
