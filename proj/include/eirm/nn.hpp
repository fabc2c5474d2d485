#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "eirm/matrix.hpp"
#include "eirm/rng.hpp"

namespace eirm {

enum class Activation : std::uint32_t { Linear = 0, ReLU = 1, ELU = 2 };

const char* to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct DenseLayer {
  Matrix weights;            // in x out
  std::vector<double> bias;  // out
  Activation activation = Activation::Linear;
  double l2 = 0.0;
  /// Drop probability applied to this layer's output in training mode.
  double dropout = 0.0;

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }
};

struct LayerSpec {
  std::size_t out = 0;
  Activation activation = Activation::Linear;
  double l2 = 0.0;
  double dropout = 0.0;
};

/// Feed-forward stack of dense layers.
///
/// Parameters are enumerated layer by layer, weights (row-major) before bias.
/// That order is shared by parameters(), set_parameters(), Gradients::flat()
/// and the Adam accumulators.
class Mlp {
 public:
  Mlp();
  explicit Mlp(std::vector<DenseLayer> layers);
  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  /// Glorot-uniform weights, zero biases.
  static Mlp create(std::size_t input_dim, std::span<const LayerSpec> specs, Rng& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding forward caches.
  DenseLayer& mutable_layer(std::size_t i);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;

  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  std::uint64_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

 private:
  void validate() const;

  std::vector<DenseLayer> layers_;
  std::uint64_t id_;
  std::uint64_t generation_ = 0;
};

/// Everything backward() needs from a forward pass.
struct ForwardCache {
  std::uint64_t net_id = 0;
  std::uint64_t generation = 0;
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> pre;          // pre-activation of each layer
  std::vector<Matrix> masks;        // scaled keep masks; empty matrix when no dropout applied
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

ForwardResult forward(const Mlp& net, const Matrix& batch, bool train_mode, Rng& rng);

/// Inference-mode forward pass without retaining a cache.
Matrix predict(const Mlp& net, const Matrix& batch);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  /// Gradient with respect to the batch; filled only when requested.
  Matrix input;

  std::vector<double> flat() const;
};

/// Backpropagates `dlogits` through the cached pass. Weight gradients include
/// the L2 term 2 * l2 * w.
Gradients backward(const Mlp& net, const ForwardCache& cache, const Matrix& dlogits,
                   bool want_input_grad = false);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t parameter_count, double learning_rate);
};

/// One bias-corrected Adam update applied in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);
void adam_step(AdamState& state, Mlp& net, const Gradients& grads);

/// Mean cross-entropy of the inference-mode softmax plus the L2 penalties.
double regularized_loss(const Mlp& net, const Matrix& batch, std::span<const int> labels);

/// Maximum relative error between analytic and central-difference gradients
/// of regularized_loss. Parameters whose perturbation moves a ReLU unit across
/// (or within 1e-6 of) its kink are skipped.
double finite_diff_check(const Mlp& net, const Matrix& batch, std::span<const int> labels,
                         double h = 1e-5);

/// FNV-1a over the raw parameter bytes.
std::uint64_t parameter_hash(const Mlp& net);

void save_checkpoint(const Mlp& net, std::ostream& out);
Mlp load_checkpoint(std::istream& in);
void save_checkpoint(const Mlp& net, const std::filesystem::path& path);
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace eirm
