#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eirm/datasets.hpp"
#include "eirm/errors.hpp"
#include "eirm/experiment.hpp"
#include "eirm/game.hpp"
#include "eirm/theory.hpp"

using namespace eirm;
namespace fs = std::filesystem;

namespace {

int emit(std::string_view title, const Report& report, const std::optional<fs::path>& out, bool pass) {
  std::cout << format_report(title, report);
  if (out) write_key_values(report, *out);
  std::cout << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? 0 : 1;
}

QuadGameSpec quad_spec(double c1, double c2, double a1, double a2, double bound, double step) {
  QuadGameSpec spec;
  spec.envs = {{a1, c1, 0.0}, {a2, c2, 0.0}};
  spec.lo = -bound;
  spec.hi = bound;
  spec.step = step;
  return spec;
}

struct ModelSource {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> config;
  std::optional<std::string> preset;
  std::uint64_t seed = 0;
  std::size_t sem_turns = 3000;

  void add_to(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "Ensemble checkpoint from `run`");
    app->add_option("--config", config, "Experiment config that produced the checkpoint");
    app->add_option("--preset", preset, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--seed", seed, "Benchmark seed the checkpoint was trained on");
    app->add_option("--sem-turns", sem_turns, "Training turns for the built-in linear SEM scenario");
  }

  // Either a checkpoint on its benchmark, or the linear SEM scenario.
  std::pair<EnsembleModel, std::vector<EnvironmentDataset>> load(LossKind& loss) const {
    if (!checkpoint) {
      auto s = sem_scenario(seed, sem_turns);
      loss = LossKind::SquaredError;
      return {std::move(s.model), std::move(s.envs)};
    }
    if (!config) throw ConfigError("--checkpoint needs --config to rebuild the benchmark");
    auto cfg = load_config(*config, preset);
    BenchmarkOptions opts = cfg.data;
    opts.seed = seed;
    auto bench = make_benchmark(cfg.benchmark, opts);
    loss = LossKind::CrossEntropy;
    return {load_ensemble(*checkpoint), std::move(bench.train_envs)};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble invariant risk minimisation: training, benchmarks and equilibrium checks"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run an experiment config over all its seeds and methods");
  fs::path config_path;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed_offset;
  std::optional<fs::path> out_dir;
  run->add_option("config", config_path, "JSON experiment config")->required();
  run->add_option("--preset", preset, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--seed-offset", seed_offset, "First seed");
  run->add_option("--out", out_dir, "Output directory");

  // theory
  auto* theory = app.add_subcommand("theory", "Equilibrium and invariance checks");
  theory->require_subcommand(1);
  std::optional<fs::path> report_out;
  theory->add_option("--report", report_out, "Write the report as key=value lines");

  double c1 = 0.5, c2 = 0.5, a1 = 1.0, a2 = 1.0, bound = 2.0, step = 0.1;
  auto add_quad = [&](CLI::App* sub) {
    sub->add_option("--c1", c1, "Minimizer of environment 1");
    sub->add_option("--c2", c2, "Minimizer of environment 2");
    sub->add_option("--a1", a1, "Curvature of environment 1");
    sub->add_option("--a2", a2, "Curvature of environment 2");
    sub->add_option("--bound", bound, "Strategies lie in [-bound, bound]");
  };
  auto* grid = theory->add_subcommand("grid", "Brute-force equilibria of a scalar quadratic game");
  add_quad(grid);
  grid->add_option("--step", step, "Grid step");
  auto* bounded = theory->add_subcommand("bounded", "Clamped best-response fixed point in a box");
  add_quad(bounded);

  ModelSource source;
  NashConfig nash_cfg;
  auto* nash = theory->add_subcommand("nash", "Unilateral-deviation certificate (linear SEM unless --checkpoint)");
  source.add_to(nash);
  nash->add_option("--budget", nash_cfg.budget, "Adam steps per deviation")->check(CLI::Range(100, 1000000));
  nash->add_option("--eps", nash_cfg.eps, "Gain tolerance");
  nash->add_option("--lr", nash_cfg.lr, "Deviation learning rate");

  InvarianceConfig inv_cfg;
  std::uint64_t inv_seed = 0;
  auto* invariance = theory->add_subcommand("invariance", "Sampled invariance certificate (linear SEM unless --checkpoint)");
  source.add_to(invariance);
  invariance->add_option("--perturb", inv_cfg.n_perturb, "Random perturbations")->check(CLI::Range(100, 1000000));
  invariance->add_option("--retrain-steps", inv_cfg.retrain_steps, "Retraining steps per environment");
  invariance->add_option("--eps", inv_cfg.eps, "Improvement tolerance");
  invariance->add_option("--sample-seed", inv_seed, "Seed for the perturbations");

  // gen
  auto* gen = app.add_subcommand("gen", "Write a benchmark's environments as dataset caches");
  std::string bench_name;
  BenchmarkOptions gen_opts;
  fs::path gen_out = "data_cache";
  std::optional<std::string> gen_preset;
  std::optional<fs::path> gen_data_dir;
  gen->add_option("benchmark", bench_name, "COLORED_DIGITS|COLORED_FASHION|COLORED_SHAPES|PATCH_FASHION")->required();
  gen->add_option("--sizes", gen_opts.sizes, "Rows per environment, test last");
  gen->add_option("--flip-probs", gen_opts.flip_probs, "Colour flip probability per environment, test last");
  gen->add_option("--seed", gen_opts.seed, "Generation seed");
  gen->add_option("--data-dir", gen_data_dir, "Corpus directory (default $EIRM_DATA_DIR)");
  gen->add_option("--shape-size", gen_opts.shape_size, "Canvas size for the shapes corpus");
  gen->add_flag("--noise-patches", gen_opts.noise_patches, "Add structured-noise patches");
  gen->add_option("--preset", gen_preset, "desk|paper sizes")->check(CLI::IsMember({"desk", "paper"}));
  gen->add_option("--out", gen_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      auto cfg = load_config(config_path, preset);
      if (seed_offset) cfg.seed_offset = *seed_offset;
      if (out_dir) cfg.out_dir = *out_dir;
      run_experiment(cfg, &std::cout);
      std::cout << "results written to " << cfg.out_dir.string() << '\n';
      return 0;
    }
    if (gen->parsed()) {
      if (gen_preset && gen->count("--sizes") == 0) gen_opts.sizes = preset_config(*gen_preset).data.sizes;
      gen_opts.data_dir = gen_data_dir;
      const auto name = benchmark_from_string(bench_name);
      const auto bench = make_benchmark(name, gen_opts);
      fs::create_directories(gen_out);
      for (std::size_t e = 0; e < bench.train_envs.size(); ++e) {
        write_env_cache(bench.train_envs[e], gen_out / ("train_env" + std::to_string(e + 1) + ".eenv"));
      }
      write_env_cache(bench.test_env, gen_out / "test.eenv");
      write_env_cache(bench.oracle_env, gen_out / "oracle_train.eenv");
      write_env_cache(bench.oracle_test_env, gen_out / "oracle_test.eenv");
      std::cout << "wrote " << bench.train_envs.size() + 3 << " environments to " << gen_out.string() << '\n';
      return 0;
    }
    if (grid->parsed()) {
      const auto spec = quad_spec(c1, c2, a1, a2, bound, step);
      const auto r = scalar_game_grid(spec);
      if (r.invariant_set.empty()) std::cout << "note: no invariant predictor on this grid\n";
      // Without an invariant predictor the sets legitimately differ.
      return emit("scalar game grid", to_report(r, spec), report_out, r.equal || r.invariant_set.empty());
    }
    if (bounded->parsed()) {
      const auto ne = bounded_linear_ne(quad_spec(c1, c2, a1, a2, bound, step));
      return emit("bounded linear equilibrium", to_report(ne), report_out, !ne.interior || ne.invariant);
    }
    if (nash->parsed()) {
      auto [model, envs] = source.load(nash_cfg.loss);
      const auto r = verify_nash(model, envs, nash_cfg);
      return emit("nash certificate", to_report(r), report_out, r.pass);
    }
    if (invariance->parsed()) {
      auto [model, envs] = source.load(inv_cfg.loss);
      Rng rng(inv_seed);
      const auto r = verify_invariance(model, envs, inv_cfg, rng);
      return emit("invariance certificate", to_report(r), report_out, r.pass);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
