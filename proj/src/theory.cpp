#include "eirm/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "eirm/errors.hpp"
#include "eirm/loss.hpp"

namespace eirm {

namespace {

constexpr double kTieTolerance = 1e-12;

bool near_min(double value, double best) { return value <= best + kTieTolerance * std::max(1.0, std::abs(best)); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace

double quad_risk(const QuadEnv& env, double v) {
  const double d = v - env.minimizer;
  return env.curvature * d * d + env.offset;
}

std::size_t QuadGameSpec::grid_size() const {
  if (!(step > 0.0)) throw ConfigError("QuadGameSpec: step must be positive");
  return static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
}

void validate(const QuadGameSpec& spec) {
  if (spec.envs.size() != 2) throw ConfigError("QuadGameSpec: exactly two environments are supported");
  for (const auto& e : spec.envs) {
    if (!(e.curvature > 0.0)) throw ConfigError("QuadGameSpec: curvature must be positive");
  }
  if (!(spec.step > 0.0) || !(spec.hi > spec.lo)) throw ConfigError("QuadGameSpec: empty grid");
  if (std::abs(spec.lo + spec.hi) > 1e-12) throw ConfigError("QuadGameSpec: grid must be symmetric about 0");
  const double span = (spec.hi - spec.lo) / spec.step;
  if (std::abs(span - std::round(span)) > 1e-9) throw ConfigError("QuadGameSpec: step must divide hi - lo");
  if (spec.grid_size() < 11) throw ConfigError("QuadGameSpec: grid needs at least 11 points");
}

GridResult scalar_game_grid(const QuadGameSpec& spec) {
  validate(spec);
  const std::size_t n = spec.grid_size();
  const std::size_t sums = 2 * n - 1;
  std::vector<double> r1(sums), r2(sums);
  for (std::size_t k = 0; k < sums; ++k) {
    const double v = GridResult::ensemble_value(spec, k);
    r1[k] = quad_risk(spec.envs[0], v);
    r2[k] = quad_risk(spec.envs[1], v);
  }
  // Best value each player can reach against a fixed opponent index.
  std::vector<double> best1(n), best2(n);
  for (std::size_t other = 0; other < n; ++other) {
    best1[other] = *std::min_element(r1.begin() + static_cast<std::ptrdiff_t>(other),
                                     r1.begin() + static_cast<std::ptrdiff_t>(other + n));
    best2[other] = *std::min_element(r2.begin() + static_cast<std::ptrdiff_t>(other),
                                     r2.begin() + static_cast<std::ptrdiff_t>(other + n));
  }
  GridResult out;
  std::vector<bool> ne_sum(sums, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (near_min(r1[i + j], best1[j]) && near_min(r2[i + j], best2[i])) {
        out.ne_pairs.emplace_back(i, j);
        ne_sum[i + j] = true;
      }
    }
  }
  for (std::size_t k = 0; k < sums; ++k) {
    if (ne_sum[k]) out.ne_ensembles.push_back(k);
  }
  const double min1 = *std::min_element(r1.begin(), r1.end());
  const double min2 = *std::min_element(r2.begin(), r2.end());
  for (std::size_t k = 0; k < sums; ++k) {
    if (near_min(r1[k], min1) && near_min(r2[k], min2)) out.invariant_set.push_back(k);
  }
  out.equal = out.ne_ensembles == out.invariant_set;
  return out;
}

BoundedNe bounded_linear_ne(const QuadGameSpec& spec, std::size_t max_iters) {
  if (spec.envs.size() != 2) throw ConfigError("bounded_linear_ne: exactly two environments are supported");
  if (!(spec.hi > spec.lo)) throw ConfigError("bounded_linear_ne: empty box");
  const double lo = spec.lo, hi = spec.hi;
  const double c1 = spec.envs[0].minimizer, c2 = spec.envs[1].minimizer;
  auto respond1 = [&](double w2) { return std::clamp(2.0 * c1 - w2, lo, hi); };
  auto respond2 = [&](double w1) { return std::clamp(2.0 * c2 - w1, lo, hi); };

  BoundedNe ne;
  double w1 = std::clamp(0.0, lo, hi), w2 = w1;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    const double n1 = respond1(w2);
    const double n2 = respond2(n1);
    ne.iterations = it;
    if (n1 == w1 && n2 == w2) {
      ne.converged = true;
      break;
    }
    w1 = n1;
    w2 = n2;
  }
  if (!ne.converged) {
    // Fixed points of the continuous clamped map: one player on a face, or both
    // interior with a common stationary point.
    bool found = false;
    for (double b : {lo, hi}) {
      if (const double o2 = respond2(b); !found && respond1(o2) == b) w1 = b, w2 = o2, found = true;
      if (const double o1 = respond1(b); !found && respond2(o1) == b) w1 = o1, w2 = b, found = true;
    }
    if (!found && c1 == c2 && c1 > lo && c1 < hi) w1 = w2 = c1, found = true;
    if (!found) throw ContractError("bounded_linear_ne: no fixed point found");
  }
  ne.w1 = w1;
  ne.w2 = w2;
  ne.interior = w1 > lo && w1 < hi && w2 > lo && w2 < hi;
  const double v = ne.ensemble();
  ne.invariant = std::abs(std::clamp(c1, lo, hi) - v) <= kTieTolerance &&
                 std::abs(std::clamp(c2, lo, hi) - v) <= kTieTolerance;
  if (ne.interior && !ne.invariant) {
    throw ContractError("bounded_linear_ne: interior equilibrium is not a common stationary point");
  }
  return ne;
}

EnsembleModel quadratic_model(std::span<const double> strategies) {
  std::vector<Mlp> members;
  for (double w : strategies) {
    DenseLayer layer;
    layer.weights = Matrix(1, 1, w);
    layer.bias = {0.0};
    members.push_back(Mlp({layer}));
  }
  return EnsembleModel(std::move(members), std::nullopt, PhiMode::Fixed);
}

std::vector<EnvironmentDataset> quadratic_envs(const QuadGameSpec& spec, std::size_t rows) {
  if (rows < 2 || rows % 2 != 0) throw ConfigError("quadratic_envs: rows must be even and at least 2");
  std::vector<EnvironmentDataset> envs;
  for (std::size_t e = 0; e < spec.envs.size(); ++e) {
    const auto& q = spec.envs[e];
    if (q.curvature != 1.0) throw ConfigError("quadratic_envs: squared loss fixes the curvature at 1");
    if (q.offset < 0.0) throw ConfigError("quadratic_envs: offset must be non-negative");
    const double spread = std::sqrt(q.offset);
    EnvironmentDataset env;
    env.env_id = static_cast<int>(e);
    env.features = Matrix(rows, 1, 1.0);
    env.targets = Matrix(rows, 1);
    for (std::size_t i = 0; i < rows; ++i) env.targets(i, 0) = q.minimizer + (i % 2 == 0 ? spread : -spread);
    envs.push_back(std::move(env));
  }
  return envs;
}

// ---- Certificates ------------------------------------------------------------

namespace {

void strip_regularisation(Mlp& net) {
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& layer = net.mutable_layer(l);
    layer.l2 = 0.0;
    layer.dropout = 0.0;
  }
}

Batch full_batch(const EnvironmentDataset& env, const Matrix& z) {
  Batch b;
  b.features = z;
  b.labels = env.labels;
  b.targets = env.targets;
  return b;
}

Matrix member_mean(std::span<const Mlp> members, const Matrix& z) {
  Matrix total = predict(members.front(), z);
  for (std::size_t q = 1; q < members.size(); ++q) total += predict(members[q], z);
  total *= 1.0 / static_cast<double>(members.size());
  return total;
}

void check_envs(const EnsembleModel& model, std::span<const EnvironmentDataset> envs) {
  if (envs.size() != model.n_envs()) throw ConfigError("certificate: one environment per classifier is required");
  for (const auto& env : envs) {
    if (env.size() == 0) throw DataError("certificate: empty environment");
  }
}

}  // namespace

DeviationReport verify_nash(const EnsembleModel& model, std::span<const EnvironmentDataset> envs,
                            const NashConfig& config) {
  check_envs(model, envs);
  if (config.budget == 0) throw ConfigError("verify_nash: budget must be positive");
  DeviationReport report;
  report.eps = config.eps;
  const std::size_t n = model.n_envs();
  const double share = 1.0 / static_cast<double>(n);
  Rng unused(0);
  for (std::size_t e = 0; e < n; ++e) {
    Matrix storage;
    const Matrix& z = model.represent(envs[e].features, storage);
    const Batch batch = full_batch(envs[e], z);
    Matrix others(z.rows(), model.output_dim());
    for (std::size_t q = 0; q < n; ++q) {
      if (q != e) others += predict(model.classifiers()[q], z);
    }
    Mlp player = model.classifiers()[e];
    strip_regularisation(player);
    AdamState opt(player.parameter_count(), config.lr);

    Deviation dev;
    for (std::size_t s = 0; s <= config.budget; ++s) {
      auto pass = forward(player, z, /*train_mode=*/false, unused);
      Matrix ens = others;
      ens += pass.logits;
      ens *= share;
      const double risk = batch_loss(config.loss, ens, batch);
      if (s == 0) dev.before = dev.best = risk;
      dev.best = std::min(dev.best, risk);
      if (s == config.budget) break;
      Matrix grad = loss_gradient(config.loss, ens, batch);
      grad *= share;
      adam_step(opt, player, backward(player, pass.cache, grad));
    }
    dev.gain = dev.before - dev.best;
    report.max_gain = std::max(report.max_gain, dev.gain);
    report.envs.push_back(dev);
  }
  report.pass = report.max_gain < config.eps;
  return report;
}

InvarianceReport verify_invariance(const EnsembleModel& model, std::span<const EnvironmentDataset> envs,
                                   const InvarianceConfig& config, Rng& rng) {
  check_envs(model, envs);
  if (config.scales.empty()) throw ConfigError("verify_invariance: no perturbation scales");
  InvarianceReport report;
  report.eps = config.eps;
  report.improvement.assign(envs.size(), 0.0);

  std::vector<Matrix> zs;
  std::vector<Batch> batches;
  std::vector<double> base;
  for (const auto& env : envs) {
    zs.push_back(model.represent(env.features));
    batches.push_back(full_batch(env, zs.back()));
    base.push_back(batch_loss(config.loss, member_mean(model.classifiers(), zs.back()), batches.back()));
  }
  auto score = [&](std::span<const Mlp> members) {
    for (std::size_t e = 0; e < envs.size(); ++e) {
      const double risk = batch_loss(config.loss, member_mean(members, zs[e]), batches[e]);
      report.improvement[e] = std::max(report.improvement[e], base[e] - risk);
    }
    ++report.candidates;
  };

  std::vector<double> rms;
  for (const auto& c : model.classifiers()) {
    const auto p = c.parameters();
    double sq = 0.0;
    for (double v : p) sq += v * v;
    rms.push_back(std::max(std::sqrt(sq / static_cast<double>(std::max<std::size_t>(p.size(), 1))), 1e-3));
  }
  for (std::size_t i = 0; i < config.n_perturb; ++i) {
    const double scale = config.scales[i % config.scales.size()];
    std::vector<Mlp> members = model.classifiers();
    for (std::size_t q = 0; q < members.size(); ++q) {
      auto p = members[q].parameters();
      for (double& v : p) v += rng.normal() * scale * rms[q];
      members[q].set_parameters(p);
    }
    score(members);
  }

  // Short retraining of the whole ensemble classifier on one environment.
  const double share = 1.0 / static_cast<double>(model.n_envs());
  Rng unused(0);
  for (std::size_t e = 0; e < envs.size() && config.retrain_steps > 0; ++e) {
    std::vector<Mlp> members = model.classifiers();
    std::vector<AdamState> opts;
    for (auto& m : members) {
      strip_regularisation(m);
      opts.emplace_back(m.parameter_count(), config.lr);
    }
    for (std::size_t s = 0; s < config.retrain_steps; ++s) {
      std::vector<ForwardResult> passes;
      Matrix ens(zs[e].rows(), model.output_dim());
      for (const auto& m : members) {
        passes.push_back(forward(m, zs[e], /*train_mode=*/false, unused));
        ens += passes.back().logits;
      }
      ens *= share;
      Matrix grad = loss_gradient(config.loss, ens, batches[e]);
      grad *= share;
      for (std::size_t q = 0; q < members.size(); ++q) {
        adam_step(opts[q], members[q], backward(members[q], passes[q].cache, grad));
      }
      score(members);
    }
  }
  report.max_improvement = *std::max_element(report.improvement.begin(), report.improvement.end());
  report.pass = report.max_improvement <= config.eps;
  return report;
}

// ---- Linear SEM scenario ---------------------------------------------------

SemScenario sem_scenario(std::uint64_t seed, std::size_t turns, std::size_t samples_per_env) {
  SemSpec spec;
  spec.samples_per_env = samples_per_env;
  Rng rng(seed);
  auto sem = make_linear_sem(spec, rng);
  const std::size_t d = spec.n_causal + spec.n_spurious;
  DenseLayer proj;
  proj.weights = Matrix(d, spec.n_causal);
  for (std::size_t c = 0; c < spec.n_causal; ++c) proj.weights(c, c) = 1.0;
  proj.bias.assign(spec.n_causal, 0.0);
  DenseLayer head;
  head.weights = Matrix(spec.n_causal, 1);
  head.bias = {0.0};
  std::vector<Mlp> members(sem.envs.size(), Mlp({head}));
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch_size = spec.samples_per_env;
  tc.max_iters = turns;
  tc.loss = LossKind::SquaredError;
  tc.termination.kind = TerminationRule::Kind::None;
  tc.seed = seed;
  auto result = best_response_train(EnsembleModel(members, Mlp({proj}), PhiMode::Fixed), sem.envs, tc);
  return {std::move(sem.envs), std::move(result.model), sem.gamma};
}

std::vector<double> linear_coefficients(const EnsembleModel& model, std::size_t input_dim) {
  Matrix probe(input_dim + 1, input_dim);
  for (std::size_t c = 0; c < input_dim; ++c) probe(c + 1, c) = 1.0;
  const Matrix out = ensemble_logits(model, probe);
  std::vector<double> slopes(input_dim);
  for (std::size_t c = 0; c < input_dim; ++c) slopes[c] = out(c + 1, 0) - out(0, 0);
  return slopes;
}

std::vector<double> ols_coefficients(std::span<const EnvironmentDataset> envs, std::span<const std::size_t> columns) {
  const EnvironmentDataset pooled = pool(envs);
  if (!pooled.is_regression()) throw ContractError("ols_coefficients: data has no regression targets");
  Matrix design(pooled.size(), columns.size() + 1);
  std::vector<double> y(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t c = 0; c < columns.size(); ++c) design(i, c) = pooled.features(i, columns[c]);
    design(i, columns.size()) = 1.0;
    y[i] = pooled.targets(i, 0);
  }
  auto beta = least_squares(design, y);
  beta.pop_back();
  return beta;
}

// ---- Reports -----------------------------------------------------------------

Report to_report(const GridResult& result, const QuadGameSpec& spec) {
  auto values = [&](const std::vector<std::size_t>& ks) {
    std::string s = "{";
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (i) s += ",";
      s += num(GridResult::ensemble_value(spec, ks[i]));
    }
    return s + "}";
  };
  bool boundary_only = !result.ne_pairs.empty();
  const std::size_t last = spec.grid_size() - 1;
  for (const auto& [i, j] : result.ne_pairs) {
    if (i != 0 && i != last && j != 0 && j != last) boundary_only = false;
  }
  return {{"grid_points", std::to_string(spec.grid_size())},
          {"ne_pairs", std::to_string(result.ne_pairs.size())},
          {"ne_ensembles", values(result.ne_ensembles)},
          {"invariant_set", values(result.invariant_set)},
          {"ne_boundary_only", flag(boundary_only)},
          {"equal", flag(result.equal)}};
}

Report to_report(const BoundedNe& ne) {
  return {{"w1", num(ne.w1)},
          {"w2", num(ne.w2)},
          {"ensemble", num(ne.ensemble())},
          {"interior", flag(ne.interior)},
          {"invariant", flag(ne.invariant)},
          {"converged", flag(ne.converged)},
          {"iterations", std::to_string(ne.iterations)}};
}

Report to_report(const DeviationReport& report) {
  Report out;
  for (std::size_t e = 0; e < report.envs.size(); ++e) {
    const auto tag = "env" + std::to_string(e + 1);
    out.emplace_back(tag + "_risk", num(report.envs[e].before));
    out.emplace_back(tag + "_best_deviation", num(report.envs[e].best));
    out.emplace_back(tag + "_gain", num(report.envs[e].gain));
  }
  out.emplace_back("max_gain", num(report.max_gain));
  out.emplace_back("eps", num(report.eps));
  out.emplace_back("pass", flag(report.pass));
  return out;
}

Report to_report(const InvarianceReport& report) {
  Report out;
  for (std::size_t e = 0; e < report.improvement.size(); ++e) {
    out.emplace_back("env" + std::to_string(e + 1) + "_improvement", num(report.improvement[e]));
  }
  out.emplace_back("max_improvement", num(report.max_improvement));
  out.emplace_back("candidates", std::to_string(report.candidates));
  out.emplace_back("eps", num(report.eps));
  out.emplace_back("pass", flag(report.pass));
  return out;
}

std::string format_report(std::string_view title, const Report& report) {
  std::size_t width = 0;
  for (const auto& [k, v] : report) width = std::max(width, k.size());
  std::ostringstream out;
  out << title << '\n';
  for (const auto& [k, v] : report) out << "  " << k << std::string(width - k.size() + 2, ' ') << v << '\n';
  return out.str();
}

void write_key_values(const Report& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PathError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : report) out << k << '=' << v << '\n';
}

}  // namespace eirm
