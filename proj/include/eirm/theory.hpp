#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eirm/datasets.hpp"
#include "eirm/game.hpp"
#include "eirm/rng.hpp"

namespace eirm {

// ---- Scalar quadratic game ---------------------------------------------------

/// R(v) = curvature * (v - minimizer)^2 + offset, where v is the ensemble value.
struct QuadEnv {
  double curvature = 1.0;
  double minimizer = 0.0;
  double offset = 0.0;
};

double quad_risk(const QuadEnv& env, double v);

/// Two-player game on the strategy grid lo, lo + step, ..., hi.
struct QuadGameSpec {
  std::vector<QuadEnv> envs;
  double lo = -1.0;
  double hi = 1.0;
  double step = 0.1;

  std::size_t grid_size() const;
  double grid_value(std::size_t i) const { return lo + static_cast<double>(i) * step; }
};

/// Throws ConfigError unless: 2 environments, positive curvatures, lo == -hi,
/// (hi - lo) / step integral, at least 11 points.
void validate(const QuadGameSpec& spec);

/// Sets are stored by grid index: a pair (i, j) and an ensemble value by the
/// index sum k = i + j, whose value is lo + k * step / 2.
struct GridResult {
  std::vector<std::pair<std::size_t, std::size_t>> ne_pairs;
  std::vector<std::size_t> ne_ensembles;
  std::vector<std::size_t> invariant_set;
  bool equal = false;

  double pair_value(const QuadGameSpec& spec, std::size_t i) const { return spec.grid_value(i); }
  static double ensemble_value(const QuadGameSpec& spec, std::size_t k) {
    return spec.lo + static_cast<double>(k) * spec.step / 2.0;
  }
};

/// Brute-force enumeration of pure Nash equilibria and of the invariant
/// ensemble values (joint minimisers over achievable means).
GridResult scalar_game_grid(const QuadGameSpec& spec);

struct BoundedNe {
  double w1 = 0.0;
  double w2 = 0.0;
  /// Both strategies strictly inside the box.
  bool interior = false;
  /// The ensemble minimises both risks over the box.
  bool invariant = false;
  /// Iterated best responses reached the fixed point; false means the
  /// algebraic fallback supplied it.
  bool converged = false;
  std::size_t iterations = 0;

  double ensemble() const { return 0.5 * (w1 + w2); }
};

/// Iterates w_e <- clamp(2 c_e - w_other) over the box [lo, hi] of `spec`.
BoundedNe bounded_linear_ne(const QuadGameSpec& spec, std::size_t max_iters = 1000);

/// Ensemble of scalar linear classifiers on a constant unit feature, one per
/// strategy, so that its output is the mean strategy.
EnsembleModel quadratic_model(std::span<const double> strategies);

/// Regression environments whose mean squared error in the ensemble value v is
/// (v - c_e)^2 + offset_e. Requires unit curvature.
std::vector<EnvironmentDataset> quadratic_envs(const QuadGameSpec& spec, std::size_t rows = 2);

// ---- Certificates ------------------------------------------------------------

struct NashConfig {
  std::size_t budget = 200;
  double lr = 1e-2;
  double eps = 1e-3;
  LossKind loss = LossKind::CrossEntropy;
};

struct Deviation {
  double before = 0.0;
  double best = 0.0;
  double gain = 0.0;
};

struct DeviationReport {
  std::vector<Deviation> envs;
  double max_gain = 0.0;
  double eps = 0.0;
  bool pass = false;
};

/// For each environment, retrains a copy of its classifier alone (others and Φ
/// frozen; dropout and weight decay off) with full-batch Adam and records the
/// lowest risk seen. Passes iff every gain is below eps.
DeviationReport verify_nash(const EnsembleModel& model, std::span<const EnvironmentDataset> envs,
                            const NashConfig& config);

struct InvarianceConfig {
  std::size_t n_perturb = 120;
  std::vector<double> scales{0.01, 0.1, 1.0};
  std::size_t retrain_steps = 50;
  double lr = 1e-2;
  double eps = 1e-3;
  LossKind loss = LossKind::CrossEntropy;
};

struct InvarianceReport {
  /// Largest risk decrease found per environment (0 when none improved).
  std::vector<double> improvement;
  double max_improvement = 0.0;
  std::size_t candidates = 0;
  double eps = 0.0;
  bool pass = false;
};

/// Samples alternative classifiers with Φ frozen: Gaussian noise on every
/// classifier parameter at each scale times that classifier's parameter RMS,
/// plus, per environment, a short full-batch retraining of all classifiers on
/// that environment alone. Passes iff no candidate lowers any environment's
/// risk by more than eps.
InvarianceReport verify_invariance(const EnsembleModel& model, std::span<const EnvironmentDataset> envs,
                                   const InvarianceConfig& config, Rng& rng);

// ---- Linear SEM scenario ---------------------------------------------------

/// Two-environment linear SEM played as an F-IRM game with squared loss; the
/// fixed representation projects onto the causal coordinates.
struct SemScenario {
  std::vector<EnvironmentDataset> envs;
  EnsembleModel model;
  std::vector<double> gamma;
};

SemScenario sem_scenario(std::uint64_t seed, std::size_t turns, std::size_t samples_per_env = 2000);

/// Slopes of the ensemble output with respect to each raw input feature.
std::vector<double> linear_coefficients(const EnsembleModel& model, std::size_t input_dim);

/// Least-squares slopes (with intercept) of the targets on the given feature columns of the pooled data.
std::vector<double> ols_coefficients(std::span<const EnvironmentDataset> envs, std::span<const std::size_t> columns);

// ---- Reports -----------------------------------------------------------------

using Report = std::vector<std::pair<std::string, std::string>>;

Report to_report(const GridResult& result, const QuadGameSpec& spec);
Report to_report(const BoundedNe& ne);
Report to_report(const DeviationReport& report);
Report to_report(const InvarianceReport& report);

std::string format_report(std::string_view title, const Report& report);
void write_key_values(const Report& report, const std::filesystem::path& path);

}  // namespace eirm
