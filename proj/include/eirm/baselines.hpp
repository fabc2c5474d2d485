#pragma once

#include <span>

#include "eirm/datasets.hpp"
#include "eirm/game.hpp"
#include "eirm/nn.hpp"

namespace eirm {

struct BaselineResult {
  Mlp model;
  TrainTrace trace;
};

/// Plain ERM on the concatenation of `datasets`. Runs exactly max_iters Adam
/// steps; the termination rule is ignored. Trace rows use turn_owner "erm".
BaselineResult train_erm(std::span<const EnvironmentDataset> datasets, const TrainConfig& config,
                         const ArchConfig& arch, const EnvironmentDataset* test = nullptr);
BaselineResult train_erm(Mlp initial, std::span<const EnvironmentDataset> datasets, const TrainConfig& config,
                         const EnvironmentDataset* test = nullptr);

/// Minimises max_e R^e: each step draws one batch per environment and follows
/// the gradient of the environment with the largest batch loss (lowest index on
/// ties). Needs at least two environments. Trace rows use turn_owner "robust".
BaselineResult train_robust_minmax(std::span<const EnvironmentDataset> envs, const TrainConfig& config,
                                   const ArchConfig& arch, const EnvironmentDataset* test = nullptr);
BaselineResult train_robust_minmax(Mlp initial, std::span<const EnvironmentDataset> envs,
                                   const TrainConfig& config, const EnvironmentDataset* test = nullptr);

/// Trace row for a single classifier evaluated on each environment.
TraceRow record_single(const Mlp& model, std::span<const EnvironmentDataset> envs, std::size_t step,
                       std::string turn_owner, const EnvironmentDataset* test);

}  // namespace eirm
