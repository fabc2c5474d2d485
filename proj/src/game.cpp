#include "eirm/game.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include "binary_io.hpp"
#include "eirm/errors.hpp"
#include "eirm/loss.hpp"

namespace eirm {

namespace {

constexpr std::uint32_t kEnsembleVersion = 1;

std::vector<LayerSpec> hidden_then_output(const std::vector<std::size_t>& hidden, std::size_t out,
                                          const ArchConfig& arch, bool output_is_hidden) {
  std::vector<LayerSpec> specs;
  for (auto width : hidden) specs.push_back({width, arch.activation, arch.l2, arch.dropout});
  if (output_is_hidden) {
    specs.push_back({out, arch.activation, arch.l2, arch.dropout});
  } else {
    specs.push_back({out, Activation::Linear, 0.0, 0.0});
  }
  return specs;
}

}  // namespace

std::vector<LayerSpec> classifier_layers(const ArchConfig& arch) {
  return hidden_then_output(arch.hidden, arch.outputs, arch, false);
}

std::vector<LayerSpec> representation_layers(const ArchConfig& arch) {
  return hidden_then_output(arch.phi_hidden, arch.phi_out, arch, true);
}

// ---- EnsembleModel -----------------------------------------------------------

EnsembleModel::EnsembleModel(std::vector<Mlp> classifiers, std::optional<Mlp> representation, PhiMode mode)
    : classifiers_(std::move(classifiers)), representation_(std::move(representation)), mode_(mode) {
  if (classifiers_.empty()) throw ConfigError("EnsembleModel: need at least one classifier");
  if (mode_ == PhiMode::Variable && !representation_) {
    throw ConfigError("EnsembleModel: variable-phi mode needs a representation");
  }
  const std::size_t in = representation_ ? representation_->output_dim() : classifiers_.front().input_dim();
  const std::size_t out = classifiers_.front().output_dim();
  for (const auto& c : classifiers_) {
    if (c.input_dim() != in) throw ShapeError("EnsembleModel: classifier input differs from representation output");
    if (c.output_dim() != out) throw ShapeError("EnsembleModel: classifiers disagree on output size");
  }
}

EnsembleModel EnsembleModel::create(std::size_t input_dim, std::size_t n_envs, PhiMode mode,
                                    const ArchConfig& arch, const Rng& rng) {
  if (n_envs == 0) throw ConfigError("EnsembleModel::create: need at least one environment");
  std::optional<Mlp> phi;
  std::size_t classifier_in = input_dim;
  if (mode == PhiMode::Variable) {
    Rng phi_rng = rng.split("init/phi");
    phi = Mlp::create(input_dim, representation_layers(arch), phi_rng);
    classifier_in = arch.phi_out;
  }
  std::vector<Mlp> classifiers;
  for (std::size_t e = 0; e < n_envs; ++e) {
    Rng w_rng = rng.split("init/w", e);
    classifiers.push_back(Mlp::create(classifier_in, classifier_layers(arch), w_rng));
  }
  return EnsembleModel(std::move(classifiers), std::move(phi), mode);
}

std::size_t EnsembleModel::input_dim() const {
  return representation_ ? representation_->input_dim() : classifiers_.front().input_dim();
}

Mlp& EnsembleModel::classifier(std::size_t e) {
  if (e >= classifiers_.size()) throw IndexError("EnsembleModel: environment index out of range");
  return classifiers_[e];
}

Mlp& EnsembleModel::mutable_representation() {
  if (!representation_) throw ModeError("EnsembleModel: model has no representation");
  return *representation_;
}

Matrix EnsembleModel::represent(const Matrix& batch) const {
  if (batch.cols() != input_dim()) {
    throw ShapeError("EnsembleModel: batch has " + std::to_string(batch.cols()) + " features, model expects " +
                     std::to_string(input_dim()));
  }
  return representation_ ? predict(*representation_, batch) : batch;
}

const Matrix& EnsembleModel::represent(const Matrix& batch, Matrix& storage) const {
  if (!representation_) {
    if (batch.cols() != input_dim()) {
      throw ShapeError("EnsembleModel: batch has " + std::to_string(batch.cols()) + " features, model expects " +
                       std::to_string(input_dim()));
    }
    return batch;
  }
  storage = represent(batch);
  return storage;
}

Matrix ensemble_logits(const EnsembleModel& model, const Matrix& batch) {
  Matrix storage;
  const Matrix& z = model.represent(batch, storage);
  Matrix total = predict(model.classifiers().front(), z);
  for (std::size_t q = 1; q < model.n_envs(); ++q) total += predict(model.classifiers()[q], z);
  total *= 1.0 / static_cast<double>(model.n_envs());
  return total;
}

// ---- Batching ------------------------------------------------------------------

Batch take_rows(const EnvironmentDataset& data, std::span<const std::size_t> rows) {
  Batch b;
  b.features = data.features.select_rows(rows);
  if (!data.labels.empty()) {
    b.labels.reserve(rows.size());
    for (auto r : rows) b.labels.push_back(data.labels[r]);
  }
  if (data.is_regression()) b.targets = data.targets.select_rows(rows);
  return b;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, Rng rng)
    : batch_size_(std::min(batch_size, n)), rng_(std::move(rng)) {
  if (n == 0) throw DataError("BatchSampler: empty environment");
  if (batch_size == 0) throw ConfigError("BatchSampler: batch size must be positive");
  order_ = rng_.permutation(n);
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_size_ > order_.size()) {
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
    ++epoch_;
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return out;
}

// ---- Losses ----------------------------------------------------------------------

Matrix loss_gradient(LossKind loss, const Matrix& prediction, const Batch& batch) {
  if (loss == LossKind::CrossEntropy) return loss_grad_logits(softmax_rows(prediction), batch.labels);
  if (batch.targets.rows() != prediction.rows() || batch.targets.cols() != prediction.cols()) {
    throw ShapeError("loss_gradient: targets shape differs from prediction shape");
  }
  Matrix grad = prediction;
  grad -= batch.targets;
  grad *= 2.0 / static_cast<double>(std::max<std::size_t>(prediction.size(), 1));
  return grad;
}

double batch_loss(LossKind loss, const Matrix& prediction, const Batch& batch) {
  if (loss == LossKind::CrossEntropy) return cross_entropy(softmax_rows(prediction), batch.labels);
  return mean_squared_error(prediction, batch.targets);
}

// ---- Turns -------------------------------------------------------------------------

double env_turn(EnsembleModel& model, std::size_t e, const Batch& batch, AdamState& opt, LossKind loss,
                Rng& rng) {
  if (e >= model.n_envs()) throw IndexError("env_turn: environment index out of range");
  Matrix storage;
  const Matrix& z = model.represent(batch.features, storage);
  const double share = 1.0 / static_cast<double>(model.n_envs());
  Matrix others(batch.features.rows(), model.output_dim());
  for (std::size_t q = 0; q < model.n_envs(); ++q) {
    if (q != e) others += predict(model.classifiers()[q], z);
  }
  Mlp& player = model.classifier(e);
  auto pass = forward(player, z, /*train_mode=*/true, rng);
  Matrix ensemble = std::move(others);
  ensemble += pass.logits;
  ensemble *= share;
  const double before = batch_loss(loss, ensemble, batch);
  Matrix grad = loss_gradient(loss, ensemble, batch);
  grad *= share;  // d(ensemble)/d(own logits)
  adam_step(opt, player, backward(player, pass.cache, grad));
  return before;
}

double phi_turn(EnsembleModel& model, std::span<const Batch> batches, AdamState& opt, LossKind loss,
                Rng& rng) {
  if (model.mode() != PhiMode::Variable) throw ModeError("phi_turn: representation is fixed");
  if (batches.empty()) throw DataError("phi_turn: no batches");
  std::vector<Matrix> parts;
  for (const auto& b : batches) parts.push_back(b.features);
  const Matrix pooled = vstack(parts);

  Mlp& phi = model.mutable_representation();
  auto phi_pass = forward(phi, pooled, /*train_mode=*/true, rng);
  const Matrix& z = phi_pass.logits;
  const double share = 1.0 / static_cast<double>(model.n_envs());

  std::vector<ForwardResult> members;
  Matrix ensemble(z.rows(), model.output_dim());
  Rng unused(0);
  for (const auto& c : model.classifiers()) {
    members.push_back(forward(c, z, /*train_mode=*/false, unused));
    ensemble += members.back().logits;
  }
  ensemble *= share;

  // Sum of per-environment mean losses: each block is scaled by its own batch size.
  Matrix grad(z.rows(), model.output_dim());
  double total = 0.0;
  std::size_t offset = 0;
  for (const auto& b : batches) {
    const std::size_t n = b.features.rows();
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), offset);
    const Matrix block = ensemble.select_rows(rows);
    total += batch_loss(loss, block, b);
    const Matrix g = loss_gradient(loss, block, b);
    for (std::size_t r = 0; r < n; ++r) {
      auto dst = grad.row(offset + r);
      const auto src = g.row(r);
      std::copy(src.begin(), src.end(), dst.begin());
    }
    offset += n;
  }
  grad *= share;

  Matrix dz(z.rows(), z.cols());
  for (std::size_t q = 0; q < model.n_envs(); ++q) {
    dz += backward(model.classifiers()[q], members[q].cache, grad, /*want_input_grad=*/true).input;
  }
  adam_step(opt, phi, backward(phi, phi_pass.cache, dz));
  return total;
}

// ---- Termination -------------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

TerminationMonitor::TerminationMonitor(TerminationRule rule, std::size_t warm_start_steps)
    : rule_(rule), warm_start_(warm_start_steps) {
  if (rule_.kind == TerminationRule::Kind::Quantile && rule_.window == 0) {
    throw ConfigError("TerminationMonitor: window must be positive");
  }
}

std::size_t TerminationMonitor::min_steps() const {
  return rule_.kind == TerminationRule::Kind::Quantile ? warm_start_ + rule_.window : warm_start_;
}

bool TerminationMonitor::update(double accuracy, std::size_t step) {
  switch (rule_.kind) {
    case TerminationRule::Kind::None:
      return false;
    case TerminationRule::Kind::Threshold:
      return step >= warm_start_ && accuracy < rule_.threshold;
    case TerminationRule::Kind::Quantile:
      break;
  }
  window_.push_back(accuracy);
  if (window_.size() > rule_.window) window_.pop_front();
  if (step < min_steps() || window_.size() < rule_.window) return false;
  // Exact ties with the quantile count as "at or below"; the interpolation can
  // leave a rounding residue, so compare with a relative slack of one ulp-ish.
  const double cut = quantile({window_.begin(), window_.end()}, rule_.quantile);
  return accuracy <= cut + 1e-12 * std::max(1.0, std::abs(cut));
}

bool should_terminate(TerminationMonitor& monitor, double accuracy, std::size_t step) {
  return monitor.update(accuracy, step);
}

std::size_t resolve_warm_start(const TrainConfig& config, std::size_t train_rows) {
  if (config.warm_start_steps > 0) return config.warm_start_steps;
  return std::max<std::size_t>(1, train_rows / std::max<std::size_t>(config.batch_size, 1));
}

// ---- Trace ---------------------------------------------------------------------------

void TrainTrace::append(TraceRow row) {
  if (!rows_.empty() && row.step <= rows_.back().step) {
    throw ContractError("TrainTrace: step indices must strictly increase");
  }
  rows_.push_back(std::move(row));
}

namespace {

std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void TrainTrace::write_csv(std::ostream& out) const {
  const std::size_t n_envs = rows_.empty() ? 0 : rows_.front().env_risk.size();
  const std::size_t n_members = rows_.empty() ? 0 : rows_.front().member_spur_corr.size();
  out << "step,turn_owner,ens_train_acc";
  for (std::size_t k = 0; k < n_envs; ++k) out << ",env" << k + 1 << "_risk";
  out << ",ens_spur_corr";
  for (std::size_t k = 0; k < n_members; ++k) out << ",w" << k + 1 << "_spur_corr";
  out << ",test_acc\n";
  for (const auto& r : rows_) {
    out << r.step << ',' << r.turn_owner << ',' << fmt6(r.ens_train_acc);
    for (double v : r.env_risk) out << ',' << fmt6(v);
    out << ',' << fmt6(r.ens_spur_corr);
    for (double v : r.member_spur_corr) out << ',' << fmt6(v);
    out << ',';
    if (r.test_acc) out << fmt6(*r.test_acc);
    out << '\n';
  }
}

void TrainTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw PathError("cannot open " + path.string() + " for writing");
  write_csv(out);
}

// ---- Evaluation ------------------------------------------------------------------------

Evaluation evaluate_logits(const Matrix& logits, const EnvironmentDataset& data) {
  if (logits.rows() != data.size()) throw ShapeError("evaluate: prediction rows differ from dataset rows");
  Evaluation ev;
  if (data.is_regression()) {
    ev.accuracy = std::numeric_limits<double>::quiet_NaN();
    ev.risk = mean_squared_error(logits, data.targets);
    return ev;
  }
  if (data.size() == 0) return ev;
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  ev.risk = cross_entropy(softmax_rows(logits), data.labels);
  return ev;
}

Evaluation evaluate(const EnsembleModel& model, const EnvironmentDataset& data) {
  return evaluate_logits(ensemble_logits(model, data.features), data);
}

Evaluation evaluate(const Mlp& model, const EnvironmentDataset& data) {
  return evaluate_logits(predict(model, data.features), data);
}

double spurious_correlation_logits(const Matrix& logits, std::span<const std::uint8_t> bits) {
  if (bits.size() != logits.rows()) throw DataError("spurious_correlation: dataset has no spurious bits");
  if (bits.size() < 2) return 0.0;
  const auto pred = argmax_rows(logits);
  std::vector<double> x(pred.begin(), pred.end());
  std::vector<double> z(bits.begin(), bits.end());
  return pearson(x, z).value;
}

double spurious_correlation(const EnsembleModel& model, const EnvironmentDataset& data) {
  return spurious_correlation_logits(ensemble_logits(model, data.features), data.spurious_bits);
}

double spurious_correlation(const Mlp& model, const EnvironmentDataset& data) {
  return spurious_correlation_logits(predict(model, data.features), data.spurious_bits);
}

namespace {

// Member logits on a fixed list of datasets; only stale members are recomputed.
class LogitCache {
 public:
  LogitCache(std::span<const EnvironmentDataset> envs, std::size_t members)
      : envs_(envs), logits_(envs.size(), std::vector<Matrix>(members)), stale_(members, true) {}

  void invalidate(std::size_t member) { stale_[member] = true; }
  void invalidate_all() { std::fill(stale_.begin(), stale_.end(), true); }

  // [env][member]
  const std::vector<std::vector<Matrix>>& refresh(const EnsembleModel& model) {
    if (std::none_of(stale_.begin(), stale_.end(), [](bool b) { return b; })) return logits_;
    for (std::size_t e = 0; e < envs_.size(); ++e) {
      Matrix storage;
      const Matrix& z = model.represent(envs_[e].features, storage);
      for (std::size_t q = 0; q < stale_.size(); ++q) {
        if (stale_[q]) logits_[e][q] = predict(model.classifiers()[q], z);
      }
    }
    std::fill(stale_.begin(), stale_.end(), false);
    return logits_;
  }

 private:
  std::span<const EnvironmentDataset> envs_;
  std::vector<std::vector<Matrix>> logits_;
  std::vector<bool> stale_;
};

Matrix mean_of(const std::vector<Matrix>& members) {
  Matrix ens = members.front();
  for (std::size_t q = 1; q < members.size(); ++q) ens += members[q];
  ens *= 1.0 / static_cast<double>(members.size());
  return ens;
}

TraceRow trace_row(const std::vector<std::vector<Matrix>>& logits, std::span<const EnvironmentDataset> envs,
                   std::size_t step, std::string turn_owner) {
  TraceRow row;
  row.step = step;
  row.turn_owner = std::move(turn_owner);
  const std::size_t members = logits.front().size();
  std::vector<double> ens_pred, bits;
  std::vector<std::vector<double>> member_pred(members);
  std::size_t correct = 0, total = 0;
  bool regression = false;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    const auto& env = envs[e];
    const Matrix ens = mean_of(logits[e]);
    const auto ev = evaluate_logits(ens, env);
    row.env_acc.push_back(ev.accuracy);
    row.env_risk.push_back(ev.risk);
    regression = regression || env.is_regression();
    if (env.is_regression()) continue;
    const auto pred = argmax_rows(ens);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == env.labels[i];
    total += pred.size();
    if (env.spurious_bits.size() == env.size()) {
      ens_pred.insert(ens_pred.end(), pred.begin(), pred.end());
      bits.insert(bits.end(), env.spurious_bits.begin(), env.spurious_bits.end());
      for (std::size_t q = 0; q < members; ++q) {
        const auto mp = argmax_rows(logits[e][q]);
        member_pred[q].insert(member_pred[q].end(), mp.begin(), mp.end());
      }
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.ens_train_acc = regression || total == 0 ? nan : static_cast<double>(correct) / static_cast<double>(total);
  const bool have_bits = bits.size() >= 2;
  row.ens_spur_corr = have_bits ? pearson(ens_pred, bits).value : nan;
  for (std::size_t q = 0; q < members; ++q) {
    row.member_spur_corr.push_back(have_bits ? pearson(member_pred[q], bits).value : nan);
  }
  return row;
}

}  // namespace

TraceRow record_step(const EnsembleModel& model, std::span<const EnvironmentDataset> envs, std::size_t step,
                     std::string turn_owner, const EnvironmentDataset* test) {
  LogitCache cache(envs, model.n_envs());
  TraceRow row = trace_row(cache.refresh(model), envs, step, std::move(turn_owner));
  if (test != nullptr) row.test_acc = evaluate(model, *test).accuracy;
  return row;
}

// ---- Training loop -------------------------------------------------------------------------

namespace {

void validate_envs(std::span<const EnvironmentDataset> envs, LossKind loss) {
  if (envs.empty()) throw DataError("best_response_train: no environments");
  for (const auto& env : envs) {
    if (env.size() == 0) throw DataError("best_response_train: environment " + std::to_string(env.env_id) + " is empty");
    if (loss == LossKind::SquaredError && !env.is_regression()) {
      throw DataError("best_response_train: squared loss needs regression targets");
    }
    if (loss == LossKind::CrossEntropy && env.labels.size() != env.size()) {
      throw DataError("best_response_train: cross-entropy needs labels");
    }
  }
}

void validate_config(const TrainConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("TrainConfig: lr must be positive");
  if (config.batch_size == 0 || config.steps_per_turn == 0 || config.max_iters == 0 || config.test_every == 0 ||
      config.record_every == 0) {
    throw ConfigError("TrainConfig: counts must be at least 1");
  }
}

}  // namespace

TrainResult best_response_train(std::span<const EnvironmentDataset> envs, const TrainConfig& config, PhiMode mode,
                                const ArchConfig& arch, const EnvironmentDataset* test) {
  validate_envs(envs, config.loss);
  const Rng root(config.seed);
  auto model = EnsembleModel::create(envs.front().features.cols(), envs.size(), mode, arch, root);
  return best_response_train(std::move(model), envs, config, test);
}

TrainResult best_response_train(EnsembleModel initial, std::span<const EnvironmentDataset> envs,
                                const TrainConfig& config, const EnvironmentDataset* test) {
  validate_config(config);
  validate_envs(envs, config.loss);
  if (initial.n_envs() != envs.size()) {
    throw ConfigError("best_response_train: model has " + std::to_string(initial.n_envs()) +
                      " classifiers for " + std::to_string(envs.size()) + " environments");
  }
  const Rng root(config.seed);
  TrainResult result{std::move(initial), {}, 0, false};
  EnsembleModel& model = result.model;

  std::vector<BatchSampler> samplers;
  std::vector<AdamState> opts;
  std::size_t train_rows = 0;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    samplers.emplace_back(envs[e].size(), config.batch_size, root.split("batches", e));
    opts.emplace_back(model.classifiers()[e].parameter_count(), config.lr);
    train_rows += envs[e].size();
  }
  const bool variable = model.mode() == PhiMode::Variable;
  AdamState phi_opt;
  if (variable) phi_opt = AdamState(model.representation()->parameter_count(), config.lr);
  Rng dropout_rng = root.split("dropout");

  TerminationMonitor monitor(config.termination, resolve_warm_start(config, train_rows));
  // Turn schedule: Φ (variable mode only), then each environment.
  const std::size_t period = envs.size() + (variable ? 1 : 0);

  LogitCache train_logits(envs, model.n_envs());
  std::optional<LogitCache> test_logits;
  if (test != nullptr) test_logits.emplace(std::span<const EnvironmentDataset>(test, 1), model.n_envs());

  for (std::size_t step = 1; step <= config.max_iters; ++step) {
    const std::size_t slot = (step - 1) % period;
    std::string owner;
    if (variable && slot == 0) {
      owner = "phi";
      for (std::size_t k = 0; k < config.steps_per_turn; ++k) {
        std::vector<Batch> batches;
        for (std::size_t e = 0; e < envs.size(); ++e) batches.push_back(take_rows(envs[e], samplers[e].next()));
        phi_turn(model, batches, phi_opt, config.loss, dropout_rng);
      }
      train_logits.invalidate_all();
      if (test_logits) test_logits->invalidate_all();
    } else {
      const std::size_t e = slot - (variable ? 1 : 0);
      owner = "env" + std::to_string(e + 1);
      for (std::size_t k = 0; k < config.steps_per_turn; ++k) {
        env_turn(model, e, take_rows(envs[e], samplers[e].next()), opts[e], config.loss, dropout_rng);
      }
      train_logits.invalidate(e);
      if (test_logits) test_logits->invalidate(e);
    }
    result.turns = step;

    if (step % config.record_every != 0 && step != config.max_iters) continue;
    TraceRow row = trace_row(train_logits.refresh(model), envs, step, owner);
    const bool stop = !std::isnan(row.ens_train_acc) && monitor.update(row.ens_train_acc, step);
    if (test_logits && (step % config.test_every == 0 || stop || step == config.max_iters)) {
      row.test_acc = evaluate_logits(mean_of(test_logits->refresh(model).front()), *test).accuracy;
    }
    result.trace.append(std::move(row));
    if (stop) {
      result.terminated = true;
      break;
    }
  }
  return result;
}

// ---- Persistence -----------------------------------------------------------------------------

void save_ensemble(const EnsembleModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot open " + path.string() + " for writing");
  binio::write_magic(out, "EENS");
  binio::write_le<std::uint32_t>(out, kEnsembleVersion);
  binio::write_le<std::uint32_t>(out, model.mode() == PhiMode::Variable ? 1u : 0u);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.n_envs()));
  binio::write_le<std::uint8_t>(out, model.representation() ? 1 : 0);
  if (model.representation()) save_checkpoint(*model.representation(), out);
  for (const auto& c : model.classifiers()) save_checkpoint(c, out);
  if (!out) throw PathError("write failed for " + path.string());
}

EnsembleModel load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open " + path.string());
  binio::expect_magic(in, "EENS", "load_ensemble");
  const auto version = binio::read_le<std::uint32_t>(in, "load_ensemble");
  if (version != kEnsembleVersion) throw FormatError("load_ensemble: unsupported version " + std::to_string(version));
  const auto mode = binio::read_le<std::uint32_t>(in, "load_ensemble");
  const auto n = binio::read_le<std::uint32_t>(in, "load_ensemble");
  const auto has_phi = binio::read_le<std::uint8_t>(in, "load_ensemble");
  std::optional<Mlp> phi;
  if (has_phi) phi = load_checkpoint(in);
  std::vector<Mlp> classifiers;
  for (std::uint32_t i = 0; i < n; ++i) classifiers.push_back(load_checkpoint(in));
  return EnsembleModel(std::move(classifiers), std::move(phi), mode == 1 ? PhiMode::Variable : PhiMode::Fixed);
}

}  // namespace eirm
