#include "eirm/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eirm/errors.hpp"

namespace eirm {

namespace {

void check_labels(const Matrix& probs, std::span<const int> labels, const char* what) {
  if (labels.size() != probs.rows()) {
    throw ShapeError(std::string(what) + ": label count " + std::to_string(labels.size()) +
                     " differs from row count " + std::to_string(probs.rows()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
      throw IndexError(std::string(what) + ": label " + std::to_string(y) + " outside [0, " +
                       std::to_string(probs.cols()) + ")");
    }
  }
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto dst = out.row(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

double cross_entropy(const Matrix& probs, std::span<const int> labels) {
  check_labels(probs, labels, "cross_entropy");
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    total -= std::log(std::max(probs(r, static_cast<std::size_t>(labels[r])), kProbabilityFloor));
  }
  return total / static_cast<double>(probs.rows());
}

double mean_squared_error(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("mean_squared_error: shape mismatch");
  }
  if (pred.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values()[i] - target.values()[i];
    total += d * d;
  }
  return total / static_cast<double>(pred.size());
}

Matrix loss_grad_logits(const Matrix& probs, std::span<const int> labels) {
  check_labels(probs, labels, "loss_grad_logits");
  Matrix grad = probs;
  const double scale = probs.rows() == 0 ? 0.0 : 1.0 / static_cast<double>(probs.rows());
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    grad(r, static_cast<std::size_t>(labels[r])) -= 1.0;
    for (double& v : grad.row(r)) v *= scale;
  }
  return grad;
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  if (x.size() < 2) throw ShapeError("pearson: need at least two observations");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace eirm
