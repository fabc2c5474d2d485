#include "eirm/baselines.hpp"

#include <limits>
#include <optional>

#include "eirm/errors.hpp"
#include "eirm/loss.hpp"

namespace eirm {

namespace {

void check_inputs(std::span<const EnvironmentDataset> envs, const TrainConfig& config, const char* who) {
  if (envs.empty()) throw DataError(std::string(who) + ": no datasets");
  for (const auto& env : envs) {
    if (env.size() == 0) throw DataError(std::string(who) + ": empty dataset");
    if (config.loss == LossKind::SquaredError && !env.is_regression()) {
      throw DataError(std::string(who) + ": squared loss needs regression targets");
    }
    if (config.loss == LossKind::CrossEntropy && env.labels.size() != env.size()) {
      throw DataError(std::string(who) + ": cross-entropy needs labels");
    }
  }
  if (!(config.lr > 0.0)) throw ConfigError(std::string(who) + ": lr must be positive");
  if (config.batch_size == 0 || config.max_iters == 0 || config.test_every == 0 || config.record_every == 0) {
    throw ConfigError(std::string(who) + ": counts must be at least 1");
  }
}

Mlp fresh_classifier(std::size_t input_dim, const TrainConfig& config, const ArchConfig& arch) {
  // Same lineage as the game's first classifier, so comparisons share the initialisation.
  Rng init = Rng(config.seed).split("init/w", 0);
  return Mlp::create(input_dim, classifier_layers(arch), init);
}

bool should_record(const TrainConfig& config, std::size_t step) {
  return step % config.record_every == 0 || step == config.max_iters;
}

void record(BaselineResult& out, std::span<const EnvironmentDataset> envs, const TrainConfig& config,
            std::size_t step, const char* owner, const EnvironmentDataset* test) {
  if (!should_record(config, step)) return;
  const bool with_test = test != nullptr && (step % config.test_every == 0 || step == config.max_iters);
  out.trace.append(record_single(out.model, envs, step, owner, with_test ? test : nullptr));
}

}  // namespace

TraceRow record_single(const Mlp& model, std::span<const EnvironmentDataset> envs, std::size_t step,
                       std::string turn_owner, const EnvironmentDataset* test) {
  const EnsembleModel single({model}, std::nullopt, PhiMode::Fixed);
  return record_step(single, envs, step, std::move(turn_owner), test);
}

BaselineResult train_erm(std::span<const EnvironmentDataset> datasets, const TrainConfig& config,
                         const ArchConfig& arch, const EnvironmentDataset* test) {
  check_inputs(datasets, config, "train_erm");
  return train_erm(fresh_classifier(datasets.front().features.cols(), config, arch), datasets, config, test);
}

BaselineResult train_erm(Mlp initial, std::span<const EnvironmentDataset> datasets, const TrainConfig& config,
                         const EnvironmentDataset* test) {
  check_inputs(datasets, config, "train_erm");
  const EnvironmentDataset pooled = datasets.size() == 1 ? datasets.front() : pool(datasets);
  const Rng root(config.seed);
  BatchSampler sampler(pooled.size(), config.batch_size, root.split("batches", 0));
  Rng dropout_rng = root.split("dropout");
  BaselineResult out{std::move(initial), {}};
  AdamState opt(out.model.parameter_count(), config.lr);
  for (std::size_t step = 1; step <= config.max_iters; ++step) {
    const Batch batch = take_rows(pooled, sampler.next());
    auto pass = forward(out.model, batch.features, /*train_mode=*/true, dropout_rng);
    adam_step(opt, out.model, backward(out.model, pass.cache, loss_gradient(config.loss, pass.logits, batch)));
    record(out, datasets, config, step, "erm", test);
  }
  return out;
}

BaselineResult train_robust_minmax(std::span<const EnvironmentDataset> envs, const TrainConfig& config,
                                   const ArchConfig& arch, const EnvironmentDataset* test) {
  if (envs.size() < 2) throw ConfigError("train_robust_minmax: needs at least two environments");
  check_inputs(envs, config, "train_robust_minmax");
  return train_robust_minmax(fresh_classifier(envs.front().features.cols(), config, arch), envs, config, test);
}

BaselineResult train_robust_minmax(Mlp initial, std::span<const EnvironmentDataset> envs,
                                   const TrainConfig& config, const EnvironmentDataset* test) {
  if (envs.size() < 2) throw ConfigError("train_robust_minmax: needs at least two environments");
  check_inputs(envs, config, "train_robust_minmax");
  const Rng root(config.seed);
  std::vector<BatchSampler> samplers;
  for (std::size_t e = 0; e < envs.size(); ++e) samplers.emplace_back(envs[e].size(), config.batch_size, root.split("batches", e));
  Rng dropout_rng = root.split("dropout");
  BaselineResult out{std::move(initial), {}};
  AdamState opt(out.model.parameter_count(), config.lr);
  for (std::size_t step = 1; step <= config.max_iters; ++step) {
    double worst_loss = -std::numeric_limits<double>::infinity();
    std::optional<ForwardResult> worst_pass;
    Matrix worst_grad;
    for (std::size_t e = 0; e < envs.size(); ++e) {
      const Batch batch = take_rows(envs[e], samplers[e].next());
      auto pass = forward(out.model, batch.features, /*train_mode=*/true, dropout_rng);
      const double loss = batch_loss(config.loss, pass.logits, batch);
      if (loss > worst_loss) {
        worst_loss = loss;
        worst_grad = loss_gradient(config.loss, pass.logits, batch);
        worst_pass = std::move(pass);
      }
    }
    adam_step(opt, out.model, backward(out.model, worst_pass->cache, worst_grad));
    record(out, envs, config, step, "robust", test);
  }
  return out;
}

}  // namespace eirm
