#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eirm/matrix.hpp"
#include "eirm/rng.hpp"

namespace eirm {

/// Grayscale images in [0, 1] with binary preliminary labels.
struct LabeledImages {
  Matrix images;  // n x (height * width)
  std::vector<int> prelim_labels;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return prelim_labels.size(); }
};

/// One environment's samples.
struct EnvironmentDataset {
  Matrix features;
  std::vector<int> labels;
  /// Spurious attribute z per row (color id or patch location).
  std::vector<std::uint8_t> spurious_bits;
  /// Real-valued regression targets (n x 1); empty for classification data.
  Matrix targets;
  int env_id = 0;
  double flip_prob = 0.0;
  /// Rows of the source corpus this environment was drawn from.
  std::vector<std::size_t> source_rows;

  std::size_t size() const { return features.rows(); }
  bool is_regression() const { return !targets.empty(); }
};

/// Concatenates environments row-wise; env_id of the result is -1.
EnvironmentDataset pool(std::span<const EnvironmentDataset> envs);

// ---- IDX ingestion ---------------------------------------------------------

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

struct IdxTensor {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  /// Image payloads are scaled by 1/255; label payloads keep their raw values.
  std::vector<double> data;
};

IdxTensor read_idx(const std::filesystem::path& path);
/// Writes unsigned-byte IDX files; used to build fixtures.
void write_idx(const std::filesystem::path& path, std::uint32_t magic,
               std::span<const std::uint32_t> dims, std::span<const std::uint8_t> payload);

/// Images file + labels file -> LabeledImages with the binarized preliminary
/// label (1 for `positive_classes`). Rows whose class is in `excluded_classes`
/// are dropped.
LabeledImages load_idx_corpus(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::span<const int> positive_classes,
                              std::span<const int> excluded_classes = {});

// ---- Spurious environments -------------------------------------------------

enum class SpuriousMode { Color, Patch };

inline constexpr double kLabelNoise = 0.25;

/// Noisy label y = prelim flipped w.p. 0.25; spurious bit z = y flipped w.p. p_e.
/// Color: features are H*W*3 interleaved RGB with the grayscale in red (z=1) or
/// green (z=0). Patch: H*W grayscale with a 3x3 block of 1.0 at the top-left
/// (z=1) or a 2x2 block of 1.0 at the bottom-right (z=0).
EnvironmentDataset make_spurious_env(const LabeledImages& src, double flip_prob, SpuriousMode mode,
                                     Rng& rng, bool noise_patches = false);

/// Same rows and labels with the spurious signal removed (plain grayscale, no patches).
EnvironmentDataset strip_spurious(const LabeledImages& src, const EnvironmentDataset& env);

// ---- Benchmarks ------------------------------------------------------------

enum class BenchmarkName { ColoredDigits, ColoredFashion, ColoredShapes, PatchFashion };

std::string_view to_string(BenchmarkName name);
BenchmarkName benchmark_from_string(std::string_view name);

struct BenchmarkOptions {
  /// Per-environment sizes: training environments first, test environment last.
  std::vector<std::size_t> sizes{30000, 30000, 10000};
  std::vector<double> flip_probs{0.2, 0.1, 0.9};
  std::uint64_t seed = 0;
  /// Directory holding the IDX corpora; falls back to $EIRM_DATA_DIR.
  std::optional<std::filesystem::path> data_dir;
  /// Canvas size for the procedural shapes corpus.
  std::size_t shape_size = 16;
  bool noise_patches = false;
};

struct Benchmark {
  std::vector<EnvironmentDataset> train_envs;
  EnvironmentDataset test_env;
  /// Pooled training rows without the spurious signal.
  EnvironmentDataset oracle_env;
  /// Test rows without the spurious signal.
  EnvironmentDataset oracle_test_env;
};

Benchmark make_benchmark(BenchmarkName name, const BenchmarkOptions& options);

/// Resolves the corpus directory: explicit option first, then $EIRM_DATA_DIR.
std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& explicit_dir);

enum class ShapeKind { Circle = 0, Square = 1 };

struct ShapeParams {
  ShapeKind kind = ShapeKind::Circle;
  double center_row = 0.0;
  double center_col = 0.0;
  /// Radius for circles, half-side for squares.
  double scale = 0.0;
};

/// Draws n shapes alternating circle/square, so the kinds are exactly balanced.
std::vector<ShapeParams> draw_shapes(std::size_t n, std::size_t height, std::size_t width, Rng& rng);

/// Rasterizes one shape: a pixel is lit when its center lies inside the shape.
void render_shape(const ShapeParams& shape, std::size_t height, std::size_t width,
                  std::span<double> canvas);

/// Filled circles (prelim label 0) and squares (prelim label 1) with random
/// center and scale, fully inside the canvas, pixel values in {0, 1}.
LabeledImages synth_shapes(std::size_t n, std::size_t height, std::size_t width, Rng& rng);

/// Smallest radius / half-side synth_shapes draws for a canvas.
double min_shape_scale(std::size_t height, std::size_t width);

// ---- Linear structural equation model -------------------------------------

struct SemSpec {
  std::size_t n_causal = 2;
  std::size_t n_spurious = 1;
  std::vector<double> gamma{1.0, -0.5};
  /// Spurious loading alpha_e, one per environment.
  std::vector<double> alpha_per_env{1.0, 2.0};
  double noise_sd = 0.1;
  std::size_t samples_per_env = 1000;
};

struct SemData {
  /// Features are [causal | spurious]; targets carry Y.
  std::vector<EnvironmentDataset> envs;
  std::vector<double> gamma;
};

/// X_c ~ N(0, I); Y = gamma . X_c + N(0, noise_sd^2); X_s = alpha_e * Y + N(0, 1).
SemData make_linear_sem(const SemSpec& spec, Rng& rng);

// ---- Dataset cache ---------------------------------------------------------

void write_env_cache(const EnvironmentDataset& env, const std::filesystem::path& path);
EnvironmentDataset read_env_cache(const std::filesystem::path& path);

}  // namespace eirm
