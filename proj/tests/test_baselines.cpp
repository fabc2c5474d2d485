#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "eirm/baselines.hpp"
#include "eirm/errors.hpp"
#include "eirm/game.hpp"

using namespace eirm;

namespace {

EnvironmentDataset signal_env(std::size_t n, std::size_t d, Rng& rng, bool informative) {
  EnvironmentDataset env;
  env.features = Matrix(n, d);
  for (double& v : env.features.values()) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = informative ? (env.features(i, 0) + 0.5 * env.features(i, 1) > 0 ? 1 : 0)
                              : static_cast<int>(rng.below(2));
    env.labels.push_back(y);
    env.spurious_bits.push_back(static_cast<std::uint8_t>(env.features(i, 2) > 0));
  }
  return env;
}

// Constant input; the model output is W + b, so risks are quadratics in one number.
EnvironmentDataset quadratic_env(double centre, double spread, std::size_t n) {
  EnvironmentDataset env;
  env.features = Matrix(n, 1, 1.0);
  env.targets = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) env.targets(i, 0) = centre + (i % 2 == 0 ? spread : -spread);
  return env;
}

Mlp scalar_model() {
  DenseLayer layer;
  layer.weights = Matrix(1, 1);
  layer.bias = {0.0};
  return Mlp({layer});
}

double output(const Mlp& m) { return m.layers()[0].weights(0, 0) + m.layers()[0].bias[0]; }

ArchConfig small_arch() {
  ArchConfig a;
  a.hidden = {16};
  a.dropout = 0.0;
  a.l2 = 0.0;
  return a;
}

}  // namespace

TEST_CASE("ERM on labels independent of features stays at chance on fresh data") {
  Rng rng(1);
  const std::vector<EnvironmentDataset> train{signal_env(2000, 4, rng, false)};
  const auto test = signal_env(2000, 4, rng, false);
  TrainConfig config;
  config.lr = 1e-2;
  config.batch_size = 128;
  config.max_iters = 300;
  config.record_every = 50;
  const auto r = train_erm(train, config, small_arch(), &test);
  const double acc = evaluate(r.model, test).accuracy;
  CHECK(std::abs(acc - 0.5) < 3.0 * std::sqrt(0.25 / 2000.0));
  CHECK(r.trace.rows().size() == 6);
  CHECK(r.trace.rows().front().turn_owner == "erm");
  CHECK(r.trace.rows().back().test_acc.has_value());
}

TEST_CASE("ERM learns an informative signal and matches the one-environment game") {
  Rng rng(2);
  const std::vector<EnvironmentDataset> train{signal_env(1000, 4, rng, true)};
  TrainConfig config;
  config.lr = 1e-2;
  config.batch_size = 64;
  config.max_iters = 200;
  config.termination.kind = TerminationRule::Kind::None;
  ArchConfig arch = small_arch();
  arch.dropout = 0.25;
  const auto erm = train_erm(train, config, arch);
  const double erm_acc = evaluate(erm.model, train.front()).accuracy;
  CHECK(erm_acc > 0.9);
  const auto game = best_response_train(train, config, PhiMode::Fixed, arch);
  CHECK(std::abs(evaluate(game.model, train.front()).accuracy - erm_acc) <= 0.02);
}

TEST_CASE("pooled ERM on one dataset equals per-environment ERM") {
  Rng rng(3);
  const auto env = signal_env(300, 4, rng, true);
  const std::vector<EnvironmentDataset> one{env};
  TrainConfig config;
  config.lr = 1e-2;
  config.batch_size = 32;
  config.max_iters = 40;
  const auto a = train_erm(one, config, small_arch());
  const auto b = train_erm(std::span<const EnvironmentDataset>(&env, 1), config, small_arch());
  CHECK(parameter_hash(a.model) == parameter_hash(b.model));
  REQUIRE(a.trace.rows().size() == b.trace.rows().size());
  for (std::size_t i = 0; i < a.trace.rows().size(); ++i)
    CHECK(a.trace.rows()[i].ens_train_acc == b.trace.rows()[i].ens_train_acc);
}

TEST_CASE("robust min-max errors") {
  Rng rng(4);
  const std::vector<EnvironmentDataset> one{signal_env(50, 4, rng, true)};
  CHECK_THROWS_AS(train_robust_minmax(one, TrainConfig{}, small_arch()), ConfigError);
  std::vector<EnvironmentDataset> two{one.front(), EnvironmentDataset{}};
  two[1].features = Matrix(0, 4);
  CHECK_THROWS_AS(train_robust_minmax(two, TrainConfig{}, small_arch()), DataError);
  CHECK_THROWS_AS(train_erm({}, TrainConfig{}, small_arch()), DataError);
}

TEST_CASE("robust min-max on identical environments is ERM on one of them") {
  Rng rng(5);
  const auto env = signal_env(200, 4, rng, true);
  const std::vector<EnvironmentDataset> twins{env, env};
  TrainConfig config;
  config.lr = 1e-2;
  config.batch_size = env.size();
  config.max_iters = 25;
  const auto robust = train_robust_minmax(twins, config, small_arch());
  const auto erm = train_erm(std::span<const EnvironmentDataset>(&env, 1), config, small_arch());
  const auto p = robust.model.parameters(), q = erm.model.parameters();
  double diff = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) diff = std::max(diff, std::abs(p[i] - q[i]));
  CHECK(diff < 1e-12);
  CHECK(robust.trace.rows().front().turn_owner == "robust");
}

TEST_CASE("robust min-max finds the minimax point of two quadratics") {
  // R1(o) = (o - c1)^2 + s^2, R2(o) = (o - c2)^2; they cross at the minimax point.
  const double c1 = 1.0, c2 = -1.0, s = 1.0;
  const double analytic = (c1 * c1 - c2 * c2 + s * s) / (2.0 * (c1 - c2));
  const std::vector<EnvironmentDataset> envs{quadratic_env(c1, s, 64), quadratic_env(c2, 0.0, 64)};
  TrainConfig config;
  config.lr = 2e-3;
  config.batch_size = 64;
  config.max_iters = 3000;
  config.loss = LossKind::SquaredError;
  const auto r = train_robust_minmax(scalar_model(), envs, config);
  CHECK(std::abs(output(r.model) - analytic) < 1e-2);

  // Window-50 moving average of the worst environment risk never rises, up to
  // the plateau jitter of a fixed-step subgradient method (a fraction of lr).
  std::vector<double> worst;
  for (const auto& row : r.trace.rows()) worst.push_back(*std::max_element(row.env_risk.begin(), row.env_risk.end()));
  const std::size_t w = 50;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + w <= worst.size(); ++i) {
    double avg = 0.0;
    for (std::size_t k = i; k < i + w; ++k) avg += worst[k];
    avg /= static_cast<double>(w);
    CHECK(avg <= prev + 0.05 * config.lr);
    prev = avg;
  }
}
