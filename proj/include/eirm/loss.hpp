#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eirm/matrix.hpp"

namespace eirm {

/// Lower clamp applied to the true-class probability before taking its log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Row-wise softmax, stabilized by subtracting each row's maximum.
Matrix softmax_rows(const Matrix& logits);

/// Mean over rows of -log(max(p[i, y_i], kProbabilityFloor)).
double cross_entropy(const Matrix& probs, std::span<const int> labels);

double mean_squared_error(const Matrix& pred, const Matrix& target);

/// Gradient of the mean cross-entropy with respect to the logits: (p - onehot(y)) / batch.
Matrix loss_grad_logits(const Matrix& probs, std::span<const int> labels);

struct Correlation {
  double value = 0.0;
  /// Set when either input had zero variance; value is then 0.
  bool degenerate = false;
};

Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Index of the largest entry per row; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace eirm
