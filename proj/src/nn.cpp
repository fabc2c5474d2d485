#include "eirm/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "binary_io.hpp"
#include "eirm/errors.hpp"
#include "eirm/loss.hpp"

namespace eirm {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t next_net_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::ELU: return z > 0.0 ? z : std::expm1(z);
    case Activation::Linear: break;
  }
  return z;
}

double activation_slope(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::ELU: return z > 0.0 ? 1.0 : std::exp(z);
    case Activation::Linear: break;
  }
  return 1.0;
}

Matrix layer_pre_activation(const DenseLayer& layer, const Matrix& input) {
  Matrix z = matmul(input, layer.weights);
  add_row_vector(z, layer.bias);
  return z;
}

Matrix apply_activation(Activation a, const Matrix& z) {
  Matrix out = z;
  if (a != Activation::Linear)
    for (double& v : out.values()) v = activate(a, v);
  return out;
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::ELU: return "elu";
    case Activation::Linear: break;
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "elu") return Activation::ELU;
  if (name == "linear") return Activation::Linear;
  throw ConfigError("unknown activation \"" + std::string(name) + "\"");
}

Mlp::Mlp() : id_(next_net_id()) {}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)), id_(next_net_id()) {
  validate();
}

Mlp::Mlp(const Mlp& other) : layers_(other.layers_), id_(next_net_id()) {}

Mlp& Mlp::operator=(const Mlp& other) {
  if (this != &other) {
    layers_ = other.layers_;
    id_ = next_net_id();
    generation_ = 0;
  }
  return *this;
}

void Mlp::validate() const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.out_dim()) throw ShapeError("Mlp: bias length differs from layer width");
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      throw ShapeError("Mlp: layer " + std::to_string(i) + " input " + std::to_string(l.in_dim()) +
                       " does not chain to previous output " +
                       std::to_string(layers_[i - 1].out_dim()));
    }
    if (l.l2 < 0.0) throw ConfigError("Mlp: negative l2 coefficient");
    if (!(l.dropout >= 0.0 && l.dropout < 1.0)) throw ConfigError("Mlp: dropout outside [0, 1)");
  }
}

Mlp Mlp::create(std::size_t input_dim, std::span<const LayerSpec> specs, Rng& rng) {
  std::vector<DenseLayer> layers;
  std::size_t fan_in = input_dim;
  for (const auto& spec : specs) {
    DenseLayer layer;
    layer.weights = Matrix(fan_in, spec.out);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + spec.out));
    for (double& w : layer.weights.values()) w = rng.uniform(-limit, limit);
    layer.bias.assign(spec.out, 0.0);
    layer.activation = spec.activation;
    layer.l2 = spec.l2;
    layer.dropout = spec.dropout;
    layers.push_back(std::move(layer));
    fan_in = spec.out;
  }
  return Mlp(std::move(layers));
}

DenseLayer& Mlp::mutable_layer(std::size_t i) {
  ++generation_;
  return layers_.at(i);
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> Mlp::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weights.values().begin(), l.weights.values().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void Mlp::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("Mlp::set_parameters: length mismatch");
  std::size_t at = 0;
  for (auto& l : layers_) {
    auto w = l.weights.values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), w.size(), w.begin());
    at += w.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.bias.size(), l.bias.begin());
    at += l.bias.size();
  }
  ++generation_;
}

ForwardResult forward(const Mlp& net, const Matrix& batch, bool train_mode, Rng& rng) {
  if (batch.cols() != net.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " features, network expects " + std::to_string(net.input_dim()));
  }
  ForwardResult result;
  auto& cache = result.cache;
  cache.net_id = net.id();
  cache.generation = net.generation();
  Matrix current = batch;
  for (const auto& layer : net.layers()) {
    Matrix z = layer_pre_activation(layer, current);
    Matrix a = apply_activation(layer.activation, z);
    Matrix mask;
    if (train_mode && layer.dropout > 0.0) {
      const double keep = 1.0 - layer.dropout;
      const double scale = 1.0 / keep;
      mask = Matrix(a.rows(), a.cols());
      auto mv = mask.values();
      auto av = a.values();
      for (std::size_t i = 0; i < mv.size(); ++i) {
        mv[i] = rng.uniform() < keep ? scale : 0.0;
        av[i] *= mv[i];
      }
    }
    cache.inputs.push_back(std::move(current));
    cache.pre.push_back(std::move(z));
    cache.masks.push_back(std::move(mask));
    current = std::move(a);
  }
  result.logits = std::move(current);
  return result;
}

Matrix predict(const Mlp& net, const Matrix& batch) {
  if (batch.cols() != net.input_dim()) {
    throw ShapeError("predict: batch has " + std::to_string(batch.cols()) +
                     " features, network expects " + std::to_string(net.input_dim()));
  }
  Matrix current;
  const Matrix* input = &batch;
  for (const auto& layer : net.layers()) {
    Matrix z = layer_pre_activation(layer, *input);
    if (layer.activation != Activation::Linear)
      for (double& v : z.values()) v = activate(layer.activation, v);
    current = std::move(z);
    input = &current;
  }
  return current;
}

std::vector<double> Gradients::flat() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.insert(out.end(), weights[i].values().begin(), weights[i].values().end());
    out.insert(out.end(), biases[i].begin(), biases[i].end());
  }
  return out;
}

Gradients backward(const Mlp& net, const ForwardCache& cache, const Matrix& dlogits,
                   bool want_input_grad) {
  if (cache.net_id != net.id() || cache.generation != net.generation() ||
      cache.inputs.size() != net.layers().size()) {
    throw ContractError("backward: cache does not belong to this network state");
  }
  if (!cache.pre.empty()) {
    const auto& last = cache.pre.back();
    if (dlogits.rows() != last.rows() || dlogits.cols() != last.cols()) {
      throw ShapeError("backward: dlogits shape differs from logits shape");
    }
  }
  const auto& layers = net.layers();
  Gradients grads;
  grads.weights.resize(layers.size());
  grads.biases.resize(layers.size());
  Matrix upstream = dlogits;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    Matrix dz = std::move(upstream);
    const Matrix& mask = cache.masks[li];
    if (!mask.empty()) {
      auto dv = dz.values();
      auto mv = mask.values();
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= mv[i];
    }
    if (layer.activation != Activation::Linear) {
      auto dv = dz.values();
      auto zv = cache.pre[li].values();
      for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= activation_slope(layer.activation, zv[i]);
    }
    Matrix dw = matmul_at_b(cache.inputs[li], dz);
    if (layer.l2 > 0.0) {
      auto gv = dw.values();
      auto wv = layer.weights.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += 2.0 * layer.l2 * wv[i];
    }
    grads.weights[li] = std::move(dw);
    grads.biases[li] = column_sums(dz);
    if (li > 0 || want_input_grad) upstream = matmul_a_bt(dz, layer.weights);
  }
  if (want_input_grad) grads.input = std::move(upstream);
  return grads;
}

AdamState::AdamState(std::size_t parameter_count, double learning_rate)
    : m(parameter_count, 0.0), v(parameter_count, 0.0), lr(learning_rate) {}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment lengths differ");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void adam_step(AdamState& state, Mlp& net, const Gradients& grads) {
  auto params = net.parameters();
  const auto flat = grads.flat();
  adam_step(state, params, flat);
  net.set_parameters(params);
}

double regularized_loss(const Mlp& net, const Matrix& batch, std::span<const int> labels) {
  double loss = cross_entropy(softmax_rows(predict(net, batch)), labels);
  for (const auto& l : net.layers()) {
    if (l.l2 == 0.0) continue;
    double sq = 0.0;
    for (double w : l.weights.values()) sq += w * w;
    loss += l.l2 * sq;
  }
  return loss;
}

namespace {

signed char relu_sign(double v) { return std::abs(v) < 1e-6 ? 0 : (v > 0 ? 1 : -1); }

// Loss of the network when layer k's pre-activation is replaced by `z`, with the
// layers before k untouched. Sets `kinked` when any ReLU pre-activation from
// layer k on changes sign class relative to `base_pre` (units within 1e-6 of
// zero count as "at the kink").
double loss_from_layer(const Mlp& net, std::size_t k, Matrix z, const std::vector<Matrix>& base_pre,
                       std::span<const int> labels, bool& kinked) {
  const auto& layers = net.layers();
  for (std::size_t j = k;; ++j) {
    const auto& layer = layers[j];
    if (layer.activation == Activation::ReLU) {
      const auto zv = z.values();
      const auto bv = base_pre[j].values();
      for (std::size_t i = 0; i < zv.size(); ++i)
        if (relu_sign(zv[i]) != relu_sign(bv[i]) || relu_sign(zv[i]) == 0) kinked = true;
    }
    if (layer.activation != Activation::Linear)
      for (double& v : z.values()) v = activate(layer.activation, v);
    if (j + 1 == layers.size()) break;
    z = layer_pre_activation(layers[j + 1], z);
  }
  return cross_entropy(softmax_rows(z), labels);
}

}  // namespace

double finite_diff_check(const Mlp& net, const Matrix& batch, std::span<const int> labels,
                         double h) {
  Rng unused(0);
  auto pass = forward(net, batch, /*train_mode=*/false, unused);
  const auto dlogits = loss_grad_logits(softmax_rows(pass.logits), labels);
  const auto analytic = backward(net, pass.cache, dlogits).flat();
  const auto& inputs = pass.cache.inputs;
  const auto& pre = pass.cache.pre;

  // Perturbing one parameter of layer k shifts a single column of that layer's
  // pre-activation, so each evaluation restarts from the cached layer input.
  const double base_ce = cross_entropy(softmax_rows(pass.logits), labels);
  double worst = 0.0;
  std::size_t index = 0;
  auto probe = [&](std::size_t k, std::size_t col, std::span<const double> shift, double weight, double l2) {
    const bool inert = !shift.empty() && std::all_of(shift.begin(), shift.end(), [](double v) { return v == 0.0; });
    double loss[2];
    bool kinked = false;
    for (int side = 0; side < 2; ++side) {
      const double delta = side == 0 ? h : -h;
      if (inert) {
        loss[side] = base_ce + l2 * ((weight + delta) * (weight + delta) - weight * weight);
        continue;
      }
      Matrix z = pre[k];
      for (std::size_t r = 0; r < z.rows(); ++r) z(r, col) += delta * (shift.empty() ? 1.0 : shift[r]);
      loss[side] = loss_from_layer(net, k, std::move(z), pre, labels, kinked) +
                   l2 * ((weight + delta) * (weight + delta) - weight * weight);
    }
    const std::size_t i = index++;
    if (kinked) return;
    const double numeric = (loss[0] - loss[1]) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  };

  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    const auto& layer = net.layers()[k];
    std::vector<double> column(inputs[k].rows());
    for (std::size_t r = 0; r < layer.in_dim(); ++r) {
      for (std::size_t b = 0; b < column.size(); ++b) column[b] = inputs[k](b, r);
      for (std::size_t c = 0; c < layer.out_dim(); ++c) probe(k, c, column, layer.weights(r, c), layer.l2);
    }
    for (std::size_t c = 0; c < layer.out_dim(); ++c) probe(k, c, {}, 0.0, 0.0);
  }
  return worst;
}

std::uint64_t parameter_hash(const Mlp& net) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (double v : net.parameters()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

void save_checkpoint(const Mlp& net, std::ostream& out) {
  binio::write_magic(out, "EIRM");
  binio::write_le<std::uint32_t>(out, kCheckpointVersion);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    binio::write_le<std::uint64_t>(out, l.in_dim());
    binio::write_le<std::uint64_t>(out, l.out_dim());
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.activation));
    binio::write_le<double>(out, l.l2);
    binio::write_le<double>(out, l.dropout);
    for (double w : l.weights.values()) binio::write_le<double>(out, w);
    for (double b : l.bias) binio::write_le<double>(out, b);
  }
  if (!out) throw PathError("save_checkpoint: write failed");
}

Mlp load_checkpoint(std::istream& in) {
  binio::expect_magic(in, "EIRM", "load_checkpoint");
  const auto version = binio::read_le<std::uint32_t>(in, "load_checkpoint");
  if (version != kCheckpointVersion) {
    throw FormatError("load_checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = binio::read_le<std::uint32_t>(in, "load_checkpoint");
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = binio::read_le<std::uint64_t>(in, "load_checkpoint");
    const auto cols = binio::read_le<std::uint64_t>(in, "load_checkpoint");
    const auto act = binio::read_le<std::uint32_t>(in, "load_checkpoint");
    if (act > static_cast<std::uint32_t>(Activation::ELU)) {
      throw FormatError("load_checkpoint: unknown activation code " + std::to_string(act));
    }
    if (rows * cols > (std::uint64_t{1} << 32)) throw FormatError("load_checkpoint: layer too large");
    DenseLayer layer;
    layer.activation = static_cast<Activation>(act);
    layer.l2 = binio::read_le<double>(in, "load_checkpoint");
    layer.dropout = binio::read_le<double>(in, "load_checkpoint");
    layer.weights = Matrix(rows, cols);
    for (double& w : layer.weights.values()) w = binio::read_le<double>(in, "load_checkpoint");
    layer.bias.resize(cols);
    for (double& b : layer.bias) b = binio::read_le<double>(in, "load_checkpoint");
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

void save_checkpoint(const Mlp& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot open " + path.string() + " for writing");
  save_checkpoint(net, out);
}

Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open " + path.string());
  return load_checkpoint(in);
}

}  // namespace eirm
