#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eirm/datasets.hpp"
#include "eirm/matrix.hpp"
#include "eirm/nn.hpp"
#include "eirm/rng.hpp"

namespace eirm {

enum class PhiMode { Fixed, Variable };
enum class LossKind { CrossEntropy, SquaredError };

/// Layer shapes for the per-environment classifiers and the shared representation.
struct ArchConfig {
  std::vector<std::size_t> hidden{390, 390};
  Activation activation = Activation::ELU;
  double l2 = 1.25e-3;
  double dropout = 0.75;
  /// Representation learner (variable-phi only): hidden layers then an output layer.
  std::vector<std::size_t> phi_hidden{390};
  std::size_t phi_out = 390;
  std::size_t outputs = 2;
};

std::vector<LayerSpec> classifier_layers(const ArchConfig& arch);
std::vector<LayerSpec> representation_layers(const ArchConfig& arch);

/// One classifier per training environment plus an optional shared
/// representation. Without a representation the classifiers read the raw
/// features. In Fixed mode a supplied representation is never trained.
class EnsembleModel {
 public:
  EnsembleModel(std::vector<Mlp> classifiers, std::optional<Mlp> representation, PhiMode mode);

  /// Fresh model: Fixed mode has no representation, Variable mode builds one.
  static EnsembleModel create(std::size_t input_dim, std::size_t n_envs, PhiMode mode,
                              const ArchConfig& arch, const Rng& rng);

  PhiMode mode() const { return mode_; }
  std::size_t n_envs() const { return classifiers_.size(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const { return classifiers_.front().output_dim(); }

  const std::vector<Mlp>& classifiers() const { return classifiers_; }
  Mlp& classifier(std::size_t e);
  const std::optional<Mlp>& representation() const { return representation_; }
  Mlp& mutable_representation();

  /// Inference-mode Φ(x), or x itself when there is no representation.
  Matrix represent(const Matrix& batch) const;
  /// Same, without copying: returns `batch` itself or Φ(batch) held in `storage`.
  const Matrix& represent(const Matrix& batch, Matrix& storage) const;

 private:
  std::vector<Mlp> classifiers_;
  std::optional<Mlp> representation_;
  PhiMode mode_;
};

/// Mean of the classifiers' inference-mode logits on Φ(batch).
Matrix ensemble_logits(const EnsembleModel& model, const Matrix& batch);

/// Rows drawn from one environment.
struct Batch {
  Matrix features;
  std::vector<int> labels;
  Matrix targets;
};

Batch take_rows(const EnvironmentDataset& data, std::span<const std::size_t> rows);

/// Cycles a shuffled permutation of [0, n), reshuffling at every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, Rng rng);
  std::vector<std::size_t> next();
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// Gradient of the mean loss with respect to the prediction.
Matrix loss_gradient(LossKind loss, const Matrix& prediction, const Batch& batch);
double batch_loss(LossKind loss, const Matrix& prediction, const Batch& batch);

/// One SGD-style move of environment e's classifier against R^e(w_av ∘ Φ).
/// Only classifier e changes. Returns the batch loss before the update.
double env_turn(EnsembleModel& model, std::size_t e, const Batch& batch, AdamState& opt,
                LossKind loss, Rng& rng);

/// One move of the representation against the sum of environment risks; one
/// batch per environment. Only Φ changes. Requires Variable mode.
double phi_turn(EnsembleModel& model, std::span<const Batch> batches, AdamState& opt, LossKind loss,
                Rng& rng);

struct TerminationRule {
  enum class Kind { Quantile, Threshold, None };
  Kind kind = Kind::Quantile;
  std::size_t window = 20;
  double quantile = 0.25;
  /// Used by Kind::Threshold: stop once accuracy falls below this value.
  double threshold = 0.0;
};

/// Watches the ensemble training accuracy and decides when to stop.
///
/// Quantile rule: fires once step >= warm_start + window, the window is full,
/// and the current accuracy is at or below the window's q-quantile (linear
/// interpolation, current value included). Threshold rule: fires after warm
/// start when accuracy drops below the threshold.
class TerminationMonitor {
 public:
  TerminationMonitor(TerminationRule rule, std::size_t warm_start_steps);

  bool update(double accuracy, std::size_t step);
  std::size_t min_steps() const;
  const std::deque<double>& window() const { return window_; }

 private:
  TerminationRule rule_;
  std::size_t warm_start_;
  std::deque<double> window_;
};

bool should_terminate(TerminationMonitor& monitor, double accuracy, std::size_t step);

/// Linear-interpolation quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);

struct TrainConfig {
  double lr = 2.5e-4;
  std::size_t batch_size = 256;
  /// Adam steps each player takes per turn.
  std::size_t steps_per_turn = 1;
  /// Turns before the termination monitor may fire; 0 means one epoch of the
  /// pooled training data (rows / batch_size).
  std::size_t warm_start_steps = 0;
  std::size_t max_iters = 1000;
  TerminationRule termination;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::CrossEntropy;
  /// Test accuracy is recorded every this many turns.
  std::size_t test_every = 10;
  /// Trace rows (and termination checks) every this many turns.
  std::size_t record_every = 1;
};

std::size_t resolve_warm_start(const TrainConfig& config, std::size_t train_rows);

struct TraceRow {
  std::size_t step = 0;
  std::string turn_owner;
  double ens_train_acc = 0.0;
  std::vector<double> env_acc;
  std::vector<double> env_risk;
  double ens_spur_corr = 0.0;
  std::vector<double> member_spur_corr;
  std::optional<double> test_acc;
};

class TrainTrace {
 public:
  /// Step indices must strictly increase.
  void append(TraceRow row);
  const std::vector<TraceRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

  /// Header: step,turn_owner,ens_train_acc,env{k}_risk...,ens_spur_corr,w{k}_spur_corr...,test_acc
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<TraceRow> rows_;
};

struct Evaluation {
  /// NaN for regression data.
  double accuracy = 0.0;
  /// Cross-entropy (classification) or mean squared error (regression).
  double risk = 0.0;
};

/// Accuracy and risk from precomputed logits; ties in argmax go to class 0.
Evaluation evaluate_logits(const Matrix& logits, const EnvironmentDataset& data);
Evaluation evaluate(const EnsembleModel& model, const EnvironmentDataset& data);
Evaluation evaluate(const Mlp& model, const EnvironmentDataset& data);

/// Pearson correlation between hard predicted labels and the spurious bits.
double spurious_correlation_logits(const Matrix& logits, std::span<const std::uint8_t> bits);
double spurious_correlation(const EnsembleModel& model, const EnvironmentDataset& data);
double spurious_correlation(const Mlp& model, const EnvironmentDataset& data);

/// Evaluates the ensemble on the training environments (and optionally a test
/// environment) and fills one trace row.
TraceRow record_step(const EnsembleModel& model, std::span<const EnvironmentDataset> envs,
                     std::size_t step, std::string turn_owner, const EnvironmentDataset* test);

struct TrainResult {
  EnsembleModel model;
  TrainTrace trace;
  std::size_t turns = 0;
  bool terminated = false;
};

/// Best-response training: players take turns in the order
/// (Φ when variable), env 0, ..., env n-1, each for steps_per_turn Adam steps.
/// A turn is one trace step. Stops when the termination monitor fires or after
/// max_iters turns; the returned model is the state at that point.
TrainResult best_response_train(std::span<const EnvironmentDataset> envs, const TrainConfig& config,
                                PhiMode mode, const ArchConfig& arch,
                                const EnvironmentDataset* test = nullptr);

/// Same loop starting from a caller-supplied model.
TrainResult best_response_train(EnsembleModel initial, std::span<const EnvironmentDataset> envs,
                                const TrainConfig& config, const EnvironmentDataset* test = nullptr);

void save_ensemble(const EnsembleModel& model, const std::filesystem::path& path);
EnsembleModel load_ensemble(const std::filesystem::path& path);

}  // namespace eirm
