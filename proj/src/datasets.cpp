#include "eirm/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include "binary_io.hpp"
#include "eirm/errors.hpp"

namespace eirm {

namespace {

constexpr std::uint32_t kEnvCacheVersion = 1;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  const auto offset = static_cast<long long>(in.tellg());
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("read_idx: " + path.string() + " truncated at byte offset " +
                      std::to_string(offset));
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

EnvironmentDataset pool(std::span<const EnvironmentDataset> envs) {
  if (envs.empty()) throw DataError("pool: no environments");
  EnvironmentDataset out;
  out.env_id = -1;
  std::vector<Matrix> features, targets;
  for (const auto& e : envs) {
    features.push_back(e.features);
    if (e.is_regression()) targets.push_back(e.targets);
    out.labels.insert(out.labels.end(), e.labels.begin(), e.labels.end());
    out.spurious_bits.insert(out.spurious_bits.end(), e.spurious_bits.begin(), e.spurious_bits.end());
    out.source_rows.insert(out.source_rows.end(), e.source_rows.begin(), e.source_rows.end());
  }
  out.features = vstack(features);
  if (!targets.empty()) {
    if (targets.size() != envs.size()) throw DataError("pool: mixing regression and classification");
    out.targets = vstack(targets);
  }
  return out;
}

// ---- IDX -------------------------------------------------------------------

IdxTensor read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("read_idx: cannot open " + path.string());
  IdxTensor t;
  t.magic = read_be32(in, path);
  if (t.magic != kIdxImageMagic && t.magic != kIdxLabelMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", t.magic);
    throw FormatError("read_idx: " + path.string() + " has bad magic " + buf + " at byte offset 0");
  }
  const std::size_t ndims = t.magic & 0xFF;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    t.dims.push_back(read_be32(in, path));
    count *= t.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  std::vector<unsigned char> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::uint64_t>(in.gcount()) != count) {
    throw FormatError("read_idx: " + path.string() + " truncated at byte offset " +
                      std::to_string(header + static_cast<std::size_t>(in.gcount())) + ", expected " +
                      std::to_string(header + count) + " bytes");
  }
  const double scale = t.magic == kIdxImageMagic ? 1.0 / 255.0 : 1.0;
  t.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) t.data[i] = payload[i] * scale;
  return t;
}

void write_idx(const std::filesystem::path& path, std::uint32_t magic,
               std::span<const std::uint32_t> dims, std::span<const std::uint8_t> payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("write_idx: cannot open " + path.string());
  write_be32(out, magic);
  for (auto d : dims) write_be32(out, d);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

LabeledImages load_idx_corpus(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::span<const int> positive_classes,
                              std::span<const int> excluded_classes) {
  const auto img = read_idx(images);
  const auto lab = read_idx(labels);
  if (img.magic != kIdxImageMagic || img.dims.size() != 3) {
    throw FormatError("load_idx_corpus: " + images.string() + " is not a 3-d image file");
  }
  if (lab.magic != kIdxLabelMagic || lab.dims.size() != 1) {
    throw FormatError("load_idx_corpus: " + labels.string() + " is not a label file");
  }
  if (img.dims[0] != lab.dims[0]) throw FormatError("load_idx_corpus: image and label counts differ");
  const std::size_t h = img.dims[1], w = img.dims[2], pixels = h * w;
  LabeledImages out;
  out.height = h;
  out.width = w;
  std::vector<double> kept;
  for (std::size_t i = 0; i < lab.dims[0]; ++i) {
    const int cls = static_cast<int>(lab.data[i]);
    if (std::find(excluded_classes.begin(), excluded_classes.end(), cls) != excluded_classes.end())
      continue;
    const bool positive =
        std::find(positive_classes.begin(), positive_classes.end(), cls) != positive_classes.end();
    out.prelim_labels.push_back(positive ? 1 : 0);
    kept.insert(kept.end(), img.data.begin() + static_cast<std::ptrdiff_t>(i * pixels),
                img.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * pixels));
  }
  out.images = Matrix(out.prelim_labels.size(), pixels, std::move(kept));
  return out;
}

// ---- Spurious environments ---------------------------------------------------

EnvironmentDataset make_spurious_env(const LabeledImages& src, double flip_prob, SpuriousMode mode,
                                     Rng& rng, bool noise_patches) {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("make_spurious_env: p_e outside [0, 1]");
  const std::size_t n = src.size();
  const std::size_t pixels = src.height * src.width;
  if (src.images.cols() != pixels) throw ShapeError("make_spurious_env: image width mismatch");
  EnvironmentDataset env;
  env.flip_prob = flip_prob;
  env.labels.resize(n);
  env.spurious_bits.resize(n);
  env.source_rows.resize(n);
  std::iota(env.source_rows.begin(), env.source_rows.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.bernoulli(kLabelNoise) ? 1 - src.prelim_labels[i] : src.prelim_labels[i];
    const int z = rng.bernoulli(flip_prob) ? 1 - y : y;
    env.labels[i] = y;
    env.spurious_bits[i] = static_cast<std::uint8_t>(z);
  }

  if (mode == SpuriousMode::Color) {
    env.features = Matrix(n, pixels * 3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto gray = src.images.row(i);
      auto dst = env.features.row(i);
      const std::size_t channel = env.spurious_bits[i] ? 0 : 1;  // red : green
      for (std::size_t p = 0; p < pixels; ++p) dst[p * 3 + channel] = gray[p];
    }
    return env;
  }

  env.features = src.images;
  if (src.height < 3 || src.width < 3) throw ShapeError("make_spurious_env: image too small for patches");
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = env.features.row(i);
    const bool top_left = env.spurious_bits[i] != 0;
    const std::size_t side = top_left ? 3 : 2;
    const std::size_t r0 = top_left ? 0 : src.height - 2;
    const std::size_t c0 = top_left ? 0 : src.width - 2;
    for (std::size_t r = r0; r < r0 + side; ++r)
      for (std::size_t c = c0; c < c0 + side; ++c)
        dst[r * src.width + c] = noise_patches ? rng.uniform() : 1.0;
  }
  return env;
}

EnvironmentDataset strip_spurious(const LabeledImages& src, const EnvironmentDataset& env) {
  EnvironmentDataset out = env;
  out.features = src.images.select_rows(env.source_rows);
  return out;
}

// ---- Benchmarks ----------------------------------------------------------------

std::string_view to_string(BenchmarkName name) {
  switch (name) {
    case BenchmarkName::ColoredDigits: return "COLORED_DIGITS";
    case BenchmarkName::ColoredFashion: return "COLORED_FASHION";
    case BenchmarkName::ColoredShapes: return "COLORED_SHAPES";
    case BenchmarkName::PatchFashion: return "PATCH_FASHION";
  }
  return "?";
}

BenchmarkName benchmark_from_string(std::string_view name) {
  for (auto b : {BenchmarkName::ColoredDigits, BenchmarkName::ColoredFashion,
                 BenchmarkName::ColoredShapes, BenchmarkName::PatchFashion}) {
    if (to_string(b) == name) return b;
  }
  throw ConfigError("unknown benchmark \"" + std::string(name) + "\"");
}

std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& explicit_dir) {
  if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
  if (const char* env = std::getenv("EIRM_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

namespace {

LabeledImages concat_images(LabeledImages a, const LabeledImages& b) {
  if (a.height != b.height || a.width != b.width) throw FormatError("corpus splits have different image sizes");
  const Matrix parts[] = {a.images, b.images};
  a.images = vstack(parts);
  a.prelim_labels.insert(a.prelim_labels.end(), b.prelim_labels.begin(), b.prelim_labels.end());
  return a;
}

LabeledImages load_named_corpus(BenchmarkName name, const std::filesystem::path& root) {
  const bool digits = name == BenchmarkName::ColoredDigits;
  const auto dir = root / (digits ? "mnist" : "fashion");
  // Digits: 5-9 vs 0-4. Fashion: footwear (sandal, sneaker, ankle boot) vs
  // clothing; bags belong to neither group and are dropped.
  static constexpr int kDigitPositive[] = {5, 6, 7, 8, 9};
  static constexpr int kFashionPositive[] = {5, 7, 9};
  static constexpr int kFashionExcluded[] = {8};
  const std::span<const int> positive = digits ? std::span<const int>(kDigitPositive)
                                               : std::span<const int>(kFashionPositive);
  const std::span<const int> excluded = digits ? std::span<const int>()
                                               : std::span<const int>(kFashionExcluded);
  const auto train_img = dir / "train-images-idx3-ubyte";
  const auto train_lab = dir / "train-labels-idx1-ubyte";
  if (!std::filesystem::exists(train_img) || !std::filesystem::exists(train_lab)) {
    throw PathError("corpus for " + std::string(to_string(name)) + " not found: expected " +
                    train_img.string() + " and " + train_lab.string() +
                    " (set EIRM_DATA_DIR or data_dir)");
  }
  auto corpus = load_idx_corpus(train_img, train_lab, positive, excluded);
  const auto test_img = dir / "t10k-images-idx3-ubyte";
  const auto test_lab = dir / "t10k-labels-idx1-ubyte";
  if (std::filesystem::exists(test_img) && std::filesystem::exists(test_lab)) {
    corpus = concat_images(std::move(corpus), load_idx_corpus(test_img, test_lab, positive, excluded));
  }
  return corpus;
}

}  // namespace

Benchmark make_benchmark(BenchmarkName name, const BenchmarkOptions& options) {
  if (options.sizes.size() < 2) throw ConfigError("make_benchmark: need at least one training and one test size");
  if (options.flip_probs.size() != options.sizes.size()) {
    throw ConfigError("make_benchmark: sizes and flip_probs must have the same length");
  }
  for (auto s : options.sizes)
    if (s == 0) throw ConfigError("make_benchmark: environment sizes must be positive");
  const std::size_t total = std::accumulate(options.sizes.begin(), options.sizes.end(), std::size_t{0});
  const Rng root(options.seed);

  LabeledImages corpus;
  if (name == BenchmarkName::ColoredShapes) {
    Rng shapes_rng = root.split("shapes");
    corpus = synth_shapes(total, options.shape_size, options.shape_size, shapes_rng);
  } else {
    corpus = load_named_corpus(name, resolve_data_dir(options.data_dir));
  }
  if (total > corpus.size()) {
    throw CapacityError("make_benchmark: requested " + std::to_string(total) + " rows but " +
                        std::string(to_string(name)) + " has " + std::to_string(corpus.size()));
  }

  const SpuriousMode mode = name == BenchmarkName::PatchFashion ? SpuriousMode::Patch : SpuriousMode::Color;
  Rng order_rng = root.split("rows");
  const auto order = order_rng.permutation(corpus.size());

  Benchmark bench;
  std::vector<EnvironmentDataset> oracle_train;
  std::size_t cursor = 0;
  for (std::size_t e = 0; e < options.sizes.size(); ++e) {
    const std::span<const std::size_t> rows(order.data() + cursor, options.sizes[e]);
    cursor += options.sizes[e];
    LabeledImages part;
    part.height = corpus.height;
    part.width = corpus.width;
    part.images = corpus.images.select_rows(rows);
    for (auto r : rows) part.prelim_labels.push_back(corpus.prelim_labels[r]);

    Rng env_rng = root.split("env", e);
    auto env = make_spurious_env(part, options.flip_probs[e], mode, env_rng, options.noise_patches);
    env.env_id = static_cast<int>(e);
    env.source_rows.assign(rows.begin(), rows.end());
    auto plain = strip_spurious(corpus, env);

    if (e + 1 == options.sizes.size()) {
      bench.test_env = std::move(env);
      bench.oracle_test_env = std::move(plain);
    } else {
      bench.train_envs.push_back(std::move(env));
      oracle_train.push_back(std::move(plain));
    }
  }
  bench.oracle_env = pool(oracle_train);
  return bench;
}

// ---- Procedural shapes -----------------------------------------------------------

double min_shape_scale(std::size_t height, std::size_t width) {
  // An inscribed square of side scale*sqrt(2) >= 4 always covers >= 16 pixel centers.
  return std::max(3.0, 0.15 * static_cast<double>(std::min(height, width)));
}

static double jittered_center(double extent, double scale, double jitter, Rng& rng) {
  const double mid = extent / 2.0;
  return rng.uniform(std::max(scale, mid - jitter), std::min(extent - scale, mid + jitter));
}

std::vector<ShapeParams> draw_shapes(std::size_t n, std::size_t height, std::size_t width, Rng& rng) {
  if (height < 16 || width < 16) throw ConfigError("synth_shapes: canvas must be at least 16x16");
  const double lo = min_shape_scale(height, width);
  const double hi = 0.4 * static_cast<double>(std::min(height, width));
  const double jitter = std::max(2.0, 0.125 * static_cast<double>(std::min(height, width)));
  std::vector<ShapeParams> shapes(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = shapes[i];
    s.kind = i % 2 == 0 ? ShapeKind::Circle : ShapeKind::Square;
    s.scale = rng.uniform(lo, hi);
    s.center_row = jittered_center(static_cast<double>(height), s.scale, jitter, rng);
    s.center_col = jittered_center(static_cast<double>(width), s.scale, jitter, rng);
  }
  return shapes;
}

void render_shape(const ShapeParams& shape, std::size_t height, std::size_t width,
                  std::span<double> canvas) {
  if (canvas.size() != height * width) throw ShapeError("render_shape: canvas size mismatch");
  for (std::size_t r = 0; r < height; ++r) {
    const double dy = static_cast<double>(r) + 0.5 - shape.center_row;
    for (std::size_t c = 0; c < width; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - shape.center_col;
      const bool inside = shape.kind == ShapeKind::Circle
                              ? dx * dx + dy * dy <= shape.scale * shape.scale
                              : std::abs(dx) <= shape.scale && std::abs(dy) <= shape.scale;
      canvas[r * width + c] = inside ? 1.0 : 0.0;
    }
  }
}

LabeledImages synth_shapes(std::size_t n, std::size_t height, std::size_t width, Rng& rng) {
  const auto shapes = draw_shapes(n, height, width, rng);
  LabeledImages out;
  out.height = height;
  out.width = width;
  out.images = Matrix(n, height * width);
  out.prelim_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    render_shape(shapes[i], height, width, out.images.row(i));
    out.prelim_labels[i] = static_cast<int>(shapes[i].kind);
  }
  return out;
}

// ---- Linear SEM ------------------------------------------------------------------

SemData make_linear_sem(const SemSpec& spec, Rng& rng) {
  if (spec.gamma.size() != spec.n_causal) throw ConfigError("make_linear_sem: gamma length differs from n_causal");
  if (spec.alpha_per_env.empty()) throw ConfigError("make_linear_sem: no environments");
  if (spec.alpha_per_env.size() > 1) {
    const std::set<double> distinct(spec.alpha_per_env.begin(), spec.alpha_per_env.end());
    if (distinct.size() != spec.alpha_per_env.size()) {
      throw ConfigError("make_linear_sem: spurious loadings must differ across environments");
    }
  }
  if (spec.noise_sd < 0.0) throw ConfigError("make_linear_sem: negative noise_sd");
  SemData data;
  data.gamma = spec.gamma;
  const std::size_t d = spec.n_causal + spec.n_spurious;
  for (std::size_t e = 0; e < spec.alpha_per_env.size(); ++e) {
    Rng env_rng = rng.split("sem-env", e);
    EnvironmentDataset env;
    env.env_id = static_cast<int>(e);
    env.features = Matrix(spec.samples_per_env, d);
    env.targets = Matrix(spec.samples_per_env, 1);
    for (std::size_t i = 0; i < spec.samples_per_env; ++i) {
      auto row = env.features.row(i);
      double y = 0.0;
      for (std::size_t c = 0; c < spec.n_causal; ++c) {
        row[c] = env_rng.normal();
        y += spec.gamma[c] * row[c];
      }
      y += spec.noise_sd * env_rng.normal();
      for (std::size_t s = 0; s < spec.n_spurious; ++s) {
        row[spec.n_causal + s] = spec.alpha_per_env[e] * y + env_rng.normal();
      }
      env.targets(i, 0) = y;
    }
    data.envs.push_back(std::move(env));
  }
  return data;
}

// ---- Cache -------------------------------------------------------------------------

void write_env_cache(const EnvironmentDataset& env, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("write_env_cache: cannot open " + path.string());
  binio::write_magic(out, "EENV");
  binio::write_le<std::uint32_t>(out, kEnvCacheVersion);
  binio::write_le<std::uint64_t>(out, env.features.rows());
  binio::write_le<std::uint64_t>(out, env.features.cols());
  binio::write_le<std::int32_t>(out, env.env_id);
  binio::write_le<double>(out, env.flip_prob);
  const std::uint8_t flags = (env.labels.empty() ? 0 : 1) | (env.spurious_bits.empty() ? 0 : 2) |
                             (env.is_regression() ? 4 : 0);
  binio::write_le<std::uint8_t>(out, flags);
  for (double v : env.features.values()) binio::write_le<double>(out, v);
  for (int y : env.labels) binio::write_le<std::int32_t>(out, y);
  for (auto z : env.spurious_bits) binio::write_le<std::uint8_t>(out, z);
  for (double t : env.targets.values()) binio::write_le<double>(out, t);
  if (!out) throw PathError("write_env_cache: write failed for " + path.string());
}

EnvironmentDataset read_env_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("read_env_cache: cannot open " + path.string());
  binio::expect_magic(in, "EENV", "read_env_cache");
  const auto version = binio::read_le<std::uint32_t>(in, "read_env_cache");
  if (version != kEnvCacheVersion) throw FormatError("read_env_cache: unsupported version " + std::to_string(version));
  const auto n = binio::read_le<std::uint64_t>(in, "read_env_cache");
  const auto d = binio::read_le<std::uint64_t>(in, "read_env_cache");
  if (n * d > (std::uint64_t{1} << 34)) throw FormatError("read_env_cache: implausible dimensions");
  EnvironmentDataset env;
  env.env_id = binio::read_le<std::int32_t>(in, "read_env_cache");
  env.flip_prob = binio::read_le<double>(in, "read_env_cache");
  const auto flags = binio::read_le<std::uint8_t>(in, "read_env_cache");
  env.features = Matrix(n, d);
  for (double& v : env.features.values()) v = binio::read_le<double>(in, "read_env_cache");
  if (flags & 1) {
    env.labels.resize(n);
    for (int& y : env.labels) y = binio::read_le<std::int32_t>(in, "read_env_cache");
  }
  if (flags & 2) {
    env.spurious_bits.resize(n);
    for (auto& z : env.spurious_bits) z = binio::read_le<std::uint8_t>(in, "read_env_cache");
  }
  if (flags & 4) {
    env.targets = Matrix(n, 1);
    for (double& t : env.targets.values()) t = binio::read_le<double>(in, "read_env_cache");
  }
  return env;
}

}  // namespace eirm
