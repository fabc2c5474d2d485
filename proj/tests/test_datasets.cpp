#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "eirm/datasets.hpp"
#include "eirm/errors.hpp"

using namespace eirm;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("eirm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double mismatch_rate(std::span<const int> a, std::span<const std::uint8_t> b) {
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

double three_sigma(double p, std::size_t n) { return 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(n)); }

LabeledImages constant_images(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
  LabeledImages src;
  src.height = h;
  src.width = w;
  src.images = Matrix(n, h * w);
  for (double& v : src.images.values()) v = rng.uniform();
  src.prelim_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) src.prelim_labels[i] = static_cast<int>(i % 2);
  return src;
}

}  // namespace

TEST_CASE("read_idx on synthetic fixtures") {
  const auto dir = scratch_dir("idx");
  const std::uint32_t img_dims[] = {4, 2, 2};
  std::vector<std::uint8_t> pixels(16);
  for (std::size_t i = 0; i < 16; ++i) pixels[i] = static_cast<std::uint8_t>(i * 17);
  write_idx(dir / "img", kIdxImageMagic, img_dims, pixels);
  const auto img = read_idx(dir / "img");
  CHECK(img.dims == std::vector<std::uint32_t>{4, 2, 2});
  REQUIRE(img.data.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(img.data[i] == doctest::Approx(i * 17 / 255.0));

  const std::uint32_t lab_dims[] = {3};
  const std::uint8_t labels[] = {7, 0, 3};
  write_idx(dir / "lab", kIdxLabelMagic, lab_dims, labels);
  const auto lab = read_idx(dir / "lab");
  CHECK(lab.data == std::vector<double>{7, 0, 3});

  write_idx(dir / "bad", 0x00000802, lab_dims, labels);
  CHECK_THROWS_AS(read_idx(dir / "bad"), FormatError);

  std::vector<std::uint8_t> short_payload(10);
  write_idx(dir / "short", kIdxImageMagic, img_dims, short_payload);
  try {
    read_idx(dir / "short");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset 26") != std::string::npos);
  }
  CHECK_THROWS_AS(read_idx(dir / "missing"), PathError);
}

TEST_CASE("load_idx_corpus binarizes and drops excluded classes") {
  const auto dir = scratch_dir("corpus");
  const std::uint32_t img_dims[] = {4, 2, 2};
  std::vector<std::uint8_t> pixels(16, 255);
  const std::uint32_t lab_dims[] = {4};
  const std::uint8_t labels[] = {5, 8, 0, 9};
  write_idx(dir / "img", kIdxImageMagic, img_dims, pixels);
  write_idx(dir / "lab", kIdxLabelMagic, lab_dims, labels);
  const int positive[] = {5, 7, 9};
  const int excluded[] = {8};
  const auto corpus = load_idx_corpus(dir / "img", dir / "lab", positive, excluded);
  CHECK(corpus.prelim_labels == std::vector<int>{1, 0, 1});
  CHECK(corpus.images.rows() == 3);
  CHECK(corpus.images(0, 0) == 1.0);
}

TEST_CASE("make_spurious_env flip extremes") {
  Rng rng(1);
  const auto src = constant_images(500, 4, 4, rng);
  auto none = make_spurious_env(src, 0.0, SpuriousMode::Color, rng);
  auto all = make_spurious_env(src, 1.0, SpuriousMode::Color, rng);
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(none.spurious_bits[i] == none.labels[i]);
    CHECK(all.spurious_bits[i] == 1 - all.labels[i]);
  }
}

TEST_CASE("flip rates match the recipe within binomial 3 sigma") {
  const std::size_t n = 30000;
  Rng rng(2);
  const auto src = constant_images(n, 2, 2, rng);
  for (double p : {0.2, 0.1, 0.9}) {
    auto env = make_spurious_env(src, p, SpuriousMode::Color, rng);
    std::vector<std::uint8_t> prelim(src.prelim_labels.begin(), src.prelim_labels.end());
    CHECK(std::abs(mismatch_rate(env.labels, prelim) - kLabelNoise) < three_sigma(kLabelNoise, n));
    CHECK(std::abs(mismatch_rate(env.labels, env.spurious_bits) - p) < three_sigma(p, n));
  }
}

TEST_CASE("color encoding puts the grayscale in exactly one channel") {
  Rng rng(3);
  const auto src = constant_images(200, 3, 5, rng);
  const auto env = make_spurious_env(src, 0.3, SpuriousMode::Color, rng);
  REQUIRE(env.features.cols() == 3 * 5 * 3);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto row = env.features.row(i);
    const std::size_t lit = env.spurious_bits[i] ? 0 : 1;
    for (std::size_t p = 0; p < 15; ++p) {
      CHECK(row[p * 3 + lit] == src.images(i, p));
      CHECK(row[p * 3 + (1 - lit)] == 0.0);
      CHECK(row[p * 3 + 2] == 0.0);
    }
  }
}

TEST_CASE("patch encoding") {
  Rng rng(4);
  LabeledImages src;
  src.height = 6;
  src.width = 6;
  src.images = Matrix(50, 36, 0.0);
  src.prelim_labels.assign(50, 0);
  const auto env = make_spurious_env(src, 0.5, SpuriousMode::Patch, rng);
  for (std::size_t i = 0; i < 50; ++i) {
    double total = 0.0;
    for (double v : env.features.row(i)) total += v;
    if (env.spurious_bits[i]) {
      CHECK(total == 9.0);
      CHECK(env.features(i, 0) == 1.0);
      CHECK(env.features(i, 2 * 6 + 2) == 1.0);
    } else {
      CHECK(total == 4.0);
      CHECK(env.features(i, 35) == 1.0);
      CHECK(env.features(i, 4 * 6 + 4) == 1.0);
    }
  }
}

TEST_CASE("synth_shapes renders circles and squares with the right areas") {
  Rng a(5), b(5);
  const auto params = draw_shapes(2, 20, 20, a);
  const auto images = synth_shapes(2, 20, 20, b);
  REQUIRE(images.prelim_labels == std::vector<int>{0, 1});
  for (std::size_t i = 0; i < 2; ++i) {
    double count = 0.0;
    for (double v : images.images.row(i)) {
      CHECK((v == 0.0 || v == 1.0));
      count += v;
    }
    const double r = params[i].scale;
    if (params[i].kind == ShapeKind::Circle) {
      CHECK(std::abs(count - std::numbers::pi * r * r) <= 2 * std::numbers::pi * r);
    } else {
      CHECK(std::abs(count - 4 * r * r) <= 8 * r + 1);
    }
  }
}

TEST_CASE("smallest shapes still cover 16 pixels") {
  const double r = min_shape_scale(16, 16);
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    for (auto kind : {ShapeKind::Circle, ShapeKind::Square}) {
      ShapeParams s{kind, rng.uniform(r, 16 - r), rng.uniform(r, 16 - r), r};
      std::vector<double> canvas(256);
      render_shape(s, 16, 16, canvas);
      double count = 0.0;
      for (double v : canvas) count += v;
      CHECK(count >= 16.0);
    }
  }
  Rng small(1);
  CHECK_THROWS_AS(synth_shapes(2, 15, 16, small), ConfigError);
}

TEST_CASE("synth_shapes is deterministic per seed") {
  Rng a(7), b(7);
  CHECK(synth_shapes(20, 16, 16, a).images == synth_shapes(20, 16, 16, b).images);
}

TEST_CASE("make_benchmark shapes: disjoint rows, shapes and determinism") {
  BenchmarkOptions opt;
  opt.sizes = {2000, 2000, 2000};
  opt.seed = 0;
  const auto bench = make_benchmark(BenchmarkName::ColoredShapes, opt);
  REQUIRE(bench.train_envs.size() == 2);
  std::set<std::size_t> seen;
  for (const auto* env : {&bench.train_envs[0], &bench.train_envs[1], &bench.test_env}) {
    CHECK(env->size() == 2000);
    CHECK(env->features.cols() == 16 * 16 * 3);
    for (auto r : env->source_rows) CHECK(seen.insert(r).second);
  }
  CHECK(bench.oracle_env.size() == 4000);
  CHECK(bench.oracle_env.features.cols() == 256);
  CHECK(bench.oracle_test_env.labels == bench.test_env.labels);
  CHECK(bench.test_env.flip_prob == 0.9);

  // Majority class on the test environment.
  std::size_t ones = 0;
  for (int y : bench.test_env.labels) ones += static_cast<std::size_t>(y);
  const double majority = std::max(ones, 2000 - ones) / 2000.0;
  CHECK(std::abs(majority - 0.5) <= 0.04);

  const auto again = make_benchmark(BenchmarkName::ColoredShapes, opt);
  CHECK(again.train_envs[1].features == bench.train_envs[1].features);
  CHECK(again.test_env.spurious_bits == bench.test_env.spurious_bits);
}

TEST_CASE("make_benchmark errors") {
  BenchmarkOptions opt;
  opt.sizes = {10, 10};
  opt.flip_probs = {0.2};
  CHECK_THROWS_AS(make_benchmark(BenchmarkName::ColoredShapes, opt), ConfigError);

  const auto dir = scratch_dir("capacity");
  fs::create_directories(dir / "mnist");
  const std::uint32_t img_dims[] = {5, 2, 2};
  const std::uint32_t lab_dims[] = {5};
  std::vector<std::uint8_t> pixels(20, 10), labels{0, 1, 5, 6, 9};
  write_idx(dir / "mnist" / "train-images-idx3-ubyte", kIdxImageMagic, img_dims, pixels);
  write_idx(dir / "mnist" / "train-labels-idx1-ubyte", kIdxLabelMagic, lab_dims, labels);
  BenchmarkOptions big;
  big.sizes = {3, 3, 3};
  big.data_dir = dir;
  CHECK_THROWS_AS(make_benchmark(BenchmarkName::ColoredDigits, big), CapacityError);
  big.sizes = {2, 2, 1};
  const auto ok = make_benchmark(BenchmarkName::ColoredDigits, big);
  CHECK(ok.test_env.features.cols() == 12);

  big.data_dir = dir / "nowhere";
  CHECK_THROWS_AS(make_benchmark(BenchmarkName::ColoredFashion, big), PathError);
}

TEST_CASE("make_linear_sem: noiseless case is identified by OLS") {
  SemSpec spec;
  spec.n_causal = 3;
  spec.n_spurious = 1;
  spec.gamma = {1.0, -2.0, 0.5};
  spec.alpha_per_env = {0.0};
  spec.noise_sd = 0.0;
  spec.samples_per_env = 60;
  Rng rng(8);
  const auto data = make_linear_sem(spec, rng);
  const auto& env = data.envs[0];
  const auto beta = least_squares(env.features, env.targets.values());
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(beta[j] - spec.gamma[j]) < 1e-8);
  CHECK(std::abs(beta[3]) < 1e-8);
}

TEST_CASE("make_linear_sem: opposite loadings cancel in the pooled fit") {
  SemSpec spec;
  spec.n_causal = 2;
  spec.gamma = {1.0, 0.5};
  spec.alpha_per_env = {1.0, -1.0};
  spec.noise_sd = 0.5;
  spec.samples_per_env = 10000;
  Rng rng(9);
  const auto data = make_linear_sem(spec, rng);
  const auto pooled = pool(data.envs);
  const auto beta = least_squares(pooled.features, pooled.targets.values());
  CHECK(std::abs(beta[2]) < 0.02);
}

TEST_CASE("make_linear_sem: per-environment fit leans on the spurious feature") {
  SemSpec spec;
  spec.n_causal = 2;
  spec.gamma = {1.0, 0.5};
  spec.alpha_per_env = {1.0, 0.9};
  spec.noise_sd = 1.0;
  spec.samples_per_env = 10000;
  Rng rng(10);
  const auto data = make_linear_sem(spec, rng);
  for (std::size_t e = 0; e < 2; ++e) {
    const double a = spec.alpha_per_env[e];
    const double s2 = spec.noise_sd * spec.noise_sd;
    // Population coefficient: Cov(eps, X_s | X_c) / Var(X_s | X_c).
    const double population = a * s2 / (a * a * s2 + 1.0);
    const auto beta = least_squares(data.envs[e].features, data.envs[e].targets.values());
    CHECK(std::abs(beta[2]) > 0.2);
    CHECK(std::abs(beta[2] - population) < 0.03);
  }
  SemSpec same = spec;
  same.alpha_per_env = {1.0, 1.0};
  CHECK_THROWS_AS(make_linear_sem(same, rng), ConfigError);
}

TEST_CASE("environment cache round trip") {
  const auto dir = scratch_dir("cache");
  BenchmarkOptions opt;
  opt.sizes = {50, 20};
  opt.flip_probs = {0.2, 0.9};
  const auto bench = make_benchmark(BenchmarkName::ColoredShapes, opt);
  write_env_cache(bench.train_envs[0], dir / "env0.eenv");
  const auto back = read_env_cache(dir / "env0.eenv");
  CHECK(back.features == bench.train_envs[0].features);
  CHECK(back.labels == bench.train_envs[0].labels);
  CHECK(back.spurious_bits == bench.train_envs[0].spurious_bits);
  CHECK(back.flip_prob == 0.2);

  std::ifstream raw(dir / "env0.eenv", std::ios::binary);
  char magic[4];
  raw.read(magic, 4);
  CHECK(std::string(magic, 4) == "EENV");

  SemSpec spec;
  Rng rng(1);
  const auto sem = make_linear_sem(spec, rng);
  write_env_cache(sem.envs[1], dir / "sem.eenv");
  const auto sem_back = read_env_cache(dir / "sem.eenv");
  CHECK(sem_back.targets == sem.envs[1].targets);
  CHECK(sem_back.labels.empty());

  std::ofstream(dir / "junk.eenv") << "nope";
  CHECK_THROWS_AS(read_env_cache(dir / "junk.eenv"), FormatError);
}
