#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "eirm/errors.hpp"
#include "eirm/loss.hpp"
#include "eirm/matrix.hpp"
#include "eirm/rng.hpp"

using namespace eirm;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

// Reference product with no zero-skipping or loop reordering.
Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("matmul examples") {
  const Matrix m{{1.5, -2.0}, {0.25, 4.0}};
  CHECK(matmul(Matrix::identity(2), m) == m);
  const Matrix prod = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{1}, {1}});
  CHECK(prod == Matrix{{3}, {7}});

  Rng rng(7);
  const auto a = random_matrix(5, 7, rng);
  const auto b = random_matrix(7, 3, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_product(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_at_b(a.transpose(), b), naive_product(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_a_bt(a, b.transpose()), naive_product(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3)), ShapeError);
}

TEST_CASE("matmul is associative on random triples") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_matrix(4, 6, rng, 3.0);
    const auto b = random_matrix(6, 5, rng, 3.0);
    const auto c = random_matrix(5, 3, rng, 3.0);
    const auto left = matmul(matmul(a, b), c);
    const auto right = matmul(a, matmul(b, c));
    double scale = 0.0;
    for (double v : left.values()) scale = std::max(scale, std::abs(v));
    CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(scale, 1.0));
  }
}

TEST_CASE("softmax_rows examples") {
  const auto p = softmax_rows(Matrix{{0, 0}, {1000, 0}, {std::log(3.0), 0}});
  CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(p(1, 0) - 1.0) < 1e-12);
  CHECK(std::abs(p(1, 1)) < 1e-12);
  CHECK(std::abs(p(2, 0) - 0.75) < 1e-12);
  CHECK(std::abs(p(2, 1) - 0.25) < 1e-12);
}

TEST_CASE("softmax_rows rows sum to one and ignore per-row shifts") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = random_matrix(3, 4, rng, 1000.0);
    const auto p = softmax_rows(logits);
    auto shifted = logits;
    for (std::size_t r = 0; r < shifted.rows(); ++r) {
      const double c = rng.uniform(-500.0, 500.0);
      for (double& v : shifted.row(r)) v += c;
    }
    const auto q = softmax_rows(shifted);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double total = 0.0;
      for (double v : p.row(r)) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    CHECK(max_abs_diff(p, q) < 1e-12);
    CHECK(p.all_finite());
  }
}

TEST_CASE("cross_entropy examples and errors") {
  const int zero[] = {0};
  const int one[] = {1};
  CHECK(cross_entropy(Matrix{{1, 0}}, zero) == 0.0);
  CHECK(cross_entropy(Matrix{{0.5, 0.5}}, one) == doctest::Approx(std::numbers::ln2));
  const int both[] = {0, 1};
  CHECK(std::abs(cross_entropy(Matrix{{0.75, 0.25}, {0.25, 0.75}}, both) - std::log(4.0 / 3.0)) < 1e-15);
  // Clamp keeps a zero-probability label finite.
  CHECK(cross_entropy(Matrix{{1, 0}}, one) == doctest::Approx(-std::log(kProbabilityFloor)));
  const int bad[] = {2};
  CHECK_THROWS_AS(cross_entropy(Matrix{{0.5, 0.5}}, bad), IndexError);
}

TEST_CASE("cross_entropy of softmax is shift invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto logits = random_matrix(6, 3, rng, 20.0);
    std::vector<int> labels(6);
    for (int& y : labels) y = static_cast<int>(rng.below(3));
    const double base = cross_entropy(softmax_rows(logits), labels);
    for (double& v : logits.values()) v += 37.5;
    CHECK(std::abs(cross_entropy(softmax_rows(logits), labels) - base) < 1e-9);
  }
}

TEST_CASE("mean_squared_error examples") {
  const Matrix a{{1, 2}};
  CHECK(mean_squared_error(a, a) == 0.0);
  CHECK(mean_squared_error(Matrix{{1}}, Matrix{{3}}) == 4.0);
  CHECK(mean_squared_error(Matrix{{1, 2}}, Matrix{{0, 0}}) == 2.5);
  CHECK_THROWS_AS(mean_squared_error(Matrix{{1, 2}}, Matrix{{1}, {2}}), ShapeError);
}

TEST_CASE("pearson examples") {
  const std::vector<double> x{0.3, 1.2, -0.7, 2.0};
  std::vector<double> neg(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) neg[i] = -x[i];
  CHECK(pearson(x, x).value == doctest::Approx(1.0));
  CHECK(pearson(x, neg).value == doctest::Approx(-1.0));
  const std::vector<double> a{0, 1, 0, 1}, b{1, 0, 1, 0};
  CHECK(pearson(a, b).value == doctest::Approx(-1.0));

  const std::vector<double> flat{2, 2, 2, 2};
  const auto c = pearson(flat, a);
  CHECK(c.value == 0.0);
  CHECK(c.degenerate);
  const std::vector<double> short_x{1, 2, 3};
  CHECK_THROWS_AS(pearson(short_x, a), ShapeError);
}

TEST_CASE("least_squares recovers an exact linear map") {
  Rng rng(9);
  const auto x = random_matrix(40, 3, rng);
  const std::vector<double> beta{0.5, -1.25, 2.0};
  std::vector<double> y(40);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 3; ++j) y[i] += x(i, j) * beta[j];
  const auto fit = least_squares(x, y);
  for (std::size_t j = 0; j < 3; ++j) CHECK(fit[j] == doctest::Approx(beta[j]).epsilon(1e-10));
}

TEST_CASE("Rng streams are fixed by the seed") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  // Frozen from the first run; guards against platform-dependent streams.
  Rng golden(42);
  const std::uint64_t first = golden.next_u64();
  const double u = golden.uniform();
  const double z = golden.normal();
  CHECK(first == 0x23C18B60556BA7F9ULL);
  CHECK(u == 0.9693205787161252);
  CHECK(z == 0.021917593614617373);
}

TEST_CASE("Rng children do not depend on parent draw order") {
  Rng parent(99);
  const auto before = parent.split("init", 3).next_u64();
  for (int i = 0; i < 17; ++i) parent.next_u64();
  const auto after = parent.split("init", 3).next_u64();
  CHECK(before == after);
  CHECK(parent.split("init", 3).next_u64() != parent.split("init", 4).next_u64());
  CHECK(parent.split("a").next_u64() != parent.split("b").next_u64());
}

TEST_CASE("Rng distributions") {
  Rng rng(77);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  std::vector<int> counts(5);
  for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
  const auto perm = rng.permutation(10);
  std::vector<bool> seen(10);
  for (auto p : perm) seen[p] = true;
  for (bool s : seen) CHECK(s);
}
