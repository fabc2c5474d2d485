#include "eirm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "eirm/baselines.hpp"
#include "eirm/errors.hpp"
#include "json.hpp"

namespace eirm {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct MethodName {
  Method method;
  std::string_view name;
};

constexpr MethodName kMethodNames[] = {
    {Method::FIrm, "F_IRM"},         {Method::VIrm, "V_IRM"},     {Method::Erm, "ERM"},
    {Method::ErmPerEnv, "ERM_PER_ENV"}, {Method::Robust, "ROBUST"}, {Method::Oracle, "ORACLE"},
};

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& [method, name] : kMethodNames) {
    if (method == m) return name;
  }
  return "UNKNOWN";
}

Method method_from_string(std::string_view name) {
  for (const auto& [method, n] : kMethodNames) {
    if (n == name) return method;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::Erm,  Method::ErmPerEnv, Method::Robust,
                                           Method::FIrm, Method::VIrm,      Method::Oracle};
  return methods;
}

// ---- Configuration -----------------------------------------------------------

ExperimentConfig preset_config(std::string_view preset) {
  ExperimentConfig c;
  if (preset == "paper") return c;
  if (preset != "desk") throw ConfigError("preset: unknown preset '" + std::string(preset) + "' (desk|paper)");
  c.data.sizes = {2000, 2000, 2000};
  c.arch.hidden = {64, 64};
  c.arch.phi_hidden = {64};
  c.arch.phi_out = 64;
  c.train.max_iters = 3000;
  c.train.record_every = 20;
  c.n_seeds = 3;
  return c;
}

namespace {

using Path = std::string;

[[noreturn]] void bad(const Path& field, const std::string& why) { throw ConfigError(field + ": " + why); }

template <typename T>
T get(const json& j, const Path& field) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    bad(field, "wrong type");
  }
}

std::size_t count(const json& j, const Path& field, std::size_t min = 1) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) bad(field, "expected an integer");
  const auto v = j.get<long long>();
  if (v < static_cast<long long>(min)) bad(field, "must be at least " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

double number(const json& j, const Path& field) {
  if (!j.is_number()) bad(field, "expected a number");
  return j.get<double>();
}

std::vector<std::size_t> counts(const json& j, const Path& field, std::size_t min) {
  if (!j.is_array()) bad(field, "expected an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(count(j[i], field + "[" + std::to_string(i) + "]", min));
  return out;
}

template <typename Fn>
void for_fields(const json& obj, const Path& where, Fn&& fn) {
  if (!obj.is_object()) bad(where.empty() ? "config" : where, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const Path field = where.empty() ? it.key() : where + "." + it.key();
    if (!fn(it.key(), it.value(), field)) bad(field, "unknown key");
  }
}

void read_data(const json& j, BenchmarkOptions& d) {
  for_fields(j, "data", [&](const std::string& k, const json& v, const Path& f) {
    if (k == "sizes") d.sizes = counts(v, f, 1);
    else if (k == "flip_probs") {
      if (!v.is_array()) bad(f, "expected an array");
      d.flip_probs.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double p = number(v[i], f + "[" + std::to_string(i) + "]");
        if (p < 0.0 || p > 1.0) bad(f, "probabilities must lie in [0, 1]");
        d.flip_probs.push_back(p);
      }
    } else if (k == "data_dir") d.data_dir = get<std::string>(v, f);
    else if (k == "shape_size") d.shape_size = count(v, f, 1);
    else if (k == "noise_patches") d.noise_patches = get<bool>(v, f);
    else return false;
    return true;
  });
}

void read_termination(const json& j, TerminationRule& t) {
  for_fields(j, "train.termination", [&](const std::string& k, const json& v, const Path& f) {
    if (k == "kind") {
      const auto s = get<std::string>(v, f);
      if (s == "quantile") t.kind = TerminationRule::Kind::Quantile;
      else if (s == "threshold") t.kind = TerminationRule::Kind::Threshold;
      else if (s == "none") t.kind = TerminationRule::Kind::None;
      else bad(f, "expected quantile|threshold|none");
    } else if (k == "window") t.window = count(v, f, 1);
    else if (k == "quantile") {
      t.quantile = number(v, f);
      if (t.quantile < 0.0 || t.quantile > 1.0) bad(f, "must lie in [0, 1]");
    } else if (k == "threshold") t.threshold = number(v, f);
    else return false;
    return true;
  });
}

void read_train(const json& j, TrainConfig& t) {
  for_fields(j, "train", [&](const std::string& k, const json& v, const Path& f) {
    if (k == "lr") {
      t.lr = number(v, f);
      if (!(t.lr > 0.0)) bad(f, "must be positive");
    } else if (k == "batch_size") t.batch_size = count(v, f, 1);
    else if (k == "steps_per_turn") t.steps_per_turn = count(v, f, 1);
    else if (k == "warm_start_steps") t.warm_start_steps = count(v, f, 0);
    else if (k == "max_iters") t.max_iters = count(v, f, 1);
    else if (k == "test_every") t.test_every = count(v, f, 1);
    else if (k == "record_every") t.record_every = count(v, f, 1);
    else if (k == "termination") read_termination(v, t.termination);
    else return false;
    return true;
  });
}

void read_arch(const json& j, ArchConfig& a) {
  for_fields(j, "arch", [&](const std::string& k, const json& v, const Path& f) {
    if (k == "hidden") a.hidden = counts(v, f, 1);
    else if (k == "activation") {
      try {
        a.activation = activation_from_string(get<std::string>(v, f));
      } catch (const Error&) {
        bad(f, "unknown activation");
      }
    } else if (k == "l2") {
      a.l2 = number(v, f);
      if (a.l2 < 0.0) bad(f, "must be non-negative");
    } else if (k == "dropout") {
      a.dropout = number(v, f);
      if (a.dropout < 0.0 || a.dropout >= 1.0) bad(f, "must lie in [0, 1)");
    } else if (k == "phi_hidden") a.phi_hidden = counts(v, f, 1);
    else if (k == "phi_out") a.phi_out = count(v, f, 1);
    else return false;
    return true;
  });
}

void validate(const ExperimentConfig& c) {
  if (c.data.sizes.size() < 2) bad("data.sizes", "need at least one training and one test environment");
  if (c.data.sizes.size() != c.data.flip_probs.size()) bad("data.flip_probs", "length must match data.sizes");
  if (c.methods.empty()) bad("methods", "at least one method is required");
  if (c.n_seeds == 0) bad("n_seeds", "must be at least 1");
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text, const ExperimentConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: expected an object");
  ExperimentConfig c = j.contains("preset") ? preset_config(get<std::string>(j["preset"], "preset")) : base;
  for_fields(j, "", [&](const std::string& k, const json& v, const Path& f) {
    if (k == "preset") return true;
    if (k == "benchmark") {
      try {
        c.benchmark = benchmark_from_string(get<std::string>(v, f));
      } catch (const ConfigError&) {
        bad(f, "unknown benchmark");
      }
    } else if (k == "data") read_data(v, c.data);
    else if (k == "methods") {
      if (!v.is_array()) bad(f, "expected an array");
      c.methods.clear();
      for (const auto& m : v) {
        try {
          c.methods.push_back(method_from_string(get<std::string>(m, f)));
        } catch (const ConfigError& e) {
          bad(f, e.what());
        }
      }
    } else if (k == "train") read_train(v, c.train);
    else if (k == "arch") read_arch(v, c.arch);
    else if (k == "n_seeds") c.n_seeds = count(v, f, 1);
    else if (k == "seed_offset") c.seed_offset = count(v, f, 0);
    else if (k == "out_dir") c.out_dir = get<std::string>(v, f);
    else if (k == "checkpoints") c.checkpoints = get<bool>(v, f);
    else return false;
    return true;
  });
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::string> preset) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (!preset) return config_from_json(buf.str());
  // A preset given by the caller wins over one named in the file.
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.is_object()) j.erase("preset");
  return config_from_json(j.dump(), preset_config(*preset));
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["benchmark"] = std::string(to_string(c.benchmark));
  j["data"]["sizes"] = c.data.sizes;
  j["data"]["flip_probs"] = c.data.flip_probs;
  if (c.data.data_dir) j["data"]["data_dir"] = c.data.data_dir->string();
  j["data"]["shape_size"] = c.data.shape_size;
  j["data"]["noise_patches"] = c.data.noise_patches;
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(std::string(to_string(m)));
  j["methods"] = methods;
  auto& t = j["train"];
  t["lr"] = c.train.lr;
  t["batch_size"] = c.train.batch_size;
  t["steps_per_turn"] = c.train.steps_per_turn;
  t["warm_start_steps"] = c.train.warm_start_steps;
  t["max_iters"] = c.train.max_iters;
  t["test_every"] = c.train.test_every;
  t["record_every"] = c.train.record_every;
  const char* kinds[] = {"quantile", "threshold", "none"};
  t["termination"] = {{"kind", kinds[static_cast<int>(c.train.termination.kind)]},
                      {"window", c.train.termination.window},
                      {"quantile", c.train.termination.quantile},
                      {"threshold", c.train.termination.threshold}};
  j["arch"] = {{"hidden", c.arch.hidden},         {"activation", to_string(c.arch.activation)},
               {"l2", c.arch.l2},                 {"dropout", c.arch.dropout},
               {"phi_hidden", c.arch.phi_hidden}, {"phi_out", c.arch.phi_out}};
  j["n_seeds"] = c.n_seeds;
  j["seed_offset"] = c.seed_offset;
  j["out_dir"] = c.out_dir.string();
  j["checkpoints"] = c.checkpoints;
  return j.dump(2);
}

std::uint64_t run_seed(const ExperimentConfig& config, std::size_t i) { return config.seed_offset + i; }

// ---- Running -----------------------------------------------------------------

namespace {

double final_train_acc(const TrainTrace& trace) { return trace.rows().back().ens_train_acc; }

}  // namespace

MethodRun run_method(Method method, const Benchmark& bench, const ExperimentConfig& config, std::uint64_t seed) {
  TrainConfig train = config.train;
  train.seed = seed;
  const auto& envs = bench.train_envs;
  MethodRun run;
  run.result.method = method;
  run.result.seed = seed;
  switch (method) {
    case Method::FIrm:
    case Method::VIrm: {
      auto r = best_response_train(envs, train, method == Method::FIrm ? PhiMode::Fixed : PhiMode::Variable,
                                   config.arch, &bench.test_env);
      run.result.train_acc = final_train_acc(r.trace);
      run.result.test_acc = evaluate(r.model, bench.test_env).accuracy;
      run.result.turns = r.turns;
      run.result.terminated = r.terminated;
      run.traces.push_back(std::move(r.trace));
      run.ensemble.emplace(std::move(r.model));
      break;
    }
    case Method::Erm:
    case Method::Robust: {
      auto r = method == Method::Erm ? train_erm(envs, train, config.arch, &bench.test_env)
                                     : train_robust_minmax(envs, train, config.arch, &bench.test_env);
      run.result.train_acc = final_train_acc(r.trace);
      run.result.test_acc = evaluate(r.model, bench.test_env).accuracy;
      run.result.turns = train.max_iters;
      run.traces.push_back(std::move(r.trace));
      run.classifiers.push_back(std::move(r.model));
      break;
    }
    case Method::ErmPerEnv: {
      // One model per environment; the row reports their mean.
      for (const auto& env : envs) {
        auto r = train_erm(std::span<const EnvironmentDataset>(&env, 1), train, config.arch, &bench.test_env);
        run.result.train_acc += final_train_acc(r.trace) / static_cast<double>(envs.size());
        run.result.test_acc += evaluate(r.model, bench.test_env).accuracy / static_cast<double>(envs.size());
        run.traces.push_back(std::move(r.trace));
        run.classifiers.push_back(std::move(r.model));
      }
      run.result.turns = train.max_iters;
      break;
    }
    case Method::Oracle: {
      auto r = train_erm(std::span<const EnvironmentDataset>(&bench.oracle_env, 1), train, config.arch,
                         &bench.oracle_test_env);
      run.result.train_acc = final_train_acc(r.trace);
      run.result.test_acc = evaluate(r.model, bench.oracle_test_env).accuracy;
      run.result.turns = train.max_iters;
      run.traces.push_back(std::move(r.trace));
      run.classifiers.push_back(std::move(r.model));
      break;
    }
  }
  return run;
}

std::vector<MethodSummary> summarize(const std::vector<SeedResult>& results) {
  std::vector<MethodSummary> table;
  for (const auto& r : results) {
    auto it = std::find_if(table.begin(), table.end(), [&](const MethodSummary& s) { return s.method == r.method; });
    if (it == table.end()) {
      table.push_back({});
      it = table.end() - 1;
      it->method = r.method;
    }
  }
  for (auto& row : table) {
    std::vector<double> train, test;
    for (const auto& r : results) {
      if (r.method != row.method) continue;
      train.push_back(r.train_acc);
      test.push_back(r.test_acc);
    }
    row.runs = train.size();
    auto stats = [](const std::vector<double>& v, double& mean, std::optional<double>& sd) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      if (v.size() < 2) return;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    stats(train, row.train_mean, row.train_std);
    stats(test, row.test_mean, row.test_std);
  }
  return table;
}

std::filesystem::path trace_path(const std::filesystem::path& out, Method m, std::uint64_t seed,
                                 std::optional<std::size_t> env) {
  std::string name = std::string(to_string(m)) + "_seed" + std::to_string(seed);
  if (env) name += "_env" + std::to_string(*env + 1);
  return out / "traces" / (name + ".csv");
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out, Method m, std::uint64_t seed,
                                      std::optional<std::size_t> env) {
  std::string name = std::string(to_string(m)) + "_seed" + std::to_string(seed);
  if (env) name += "_env" + std::to_string(*env + 1);
  return out / "checkpoints" / (name + ".bin");
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_results_csv(const std::vector<MethodSummary>& table, std::ostream& out) {
  out << "method,runs,train_acc_mean,train_acc_std,test_acc_mean,test_acc_std\n";
  for (const auto& r : table) {
    out << to_string(r.method) << ',' << r.runs << ',' << full(r.train_mean) << ','
        << (r.train_std ? full(*r.train_std) : "n/a") << ',' << full(r.test_mean) << ','
        << (r.test_std ? full(*r.test_std) : "n/a") << '\n';
  }
}

void write_results_markdown(const std::vector<MethodSummary>& table, std::ostream& out) {
  out << "| Method | Train accuracy | Test accuracy |\n|---|---|---|\n";
  for (const auto& r : table) {
    auto cell = [](double mean, const std::optional<double>& sd) {
      return pct(mean) + " ± " + (sd ? pct(*sd) : std::string("n/a"));
    };
    out << "| " << to_string(r.method) << " | " << cell(r.train_mean, r.train_std) << " | "
        << cell(r.test_mean, r.test_std) << " |\n";
  }
}

void write_seed_csv(const std::vector<SeedResult>& results, std::ostream& out) {
  out << "method,seed,train_acc,test_acc,turns,terminated\n";
  for (const auto& r : results) {
    out << to_string(r.method) << ',' << r.seed << ',' << full(r.train_acc) << ',' << full(r.test_acc) << ','
        << r.turns << ',' << (r.terminated ? 1 : 0) << '\n';
  }
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PathError("cannot open " + path.string() + " for writing");
  out << text;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
  validate(config);
  const auto started = std::chrono::steady_clock::now();
  const auto& out = config.out_dir;
  std::filesystem::create_directories(out / "traces");
  if (config.checkpoints) std::filesystem::create_directories(out / "checkpoints");

  ExperimentResult result;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < config.n_seeds; ++i) {
    const auto seed = run_seed(config, i);
    seeds.push_back(seed);
    BenchmarkOptions opts = config.data;
    opts.seed = seed;
    const Benchmark bench = make_benchmark(config.benchmark, opts);
    for (auto method : config.methods) {
      const auto t0 = std::chrono::steady_clock::now();
      auto run = run_method(method, bench, config, seed);
      const bool per_env = method == Method::ErmPerEnv;
      for (std::size_t k = 0; k < run.traces.size(); ++k) {
        run.traces[k].write_csv(trace_path(out, method, seed, per_env ? std::optional<std::size_t>(k) : std::nullopt));
      }
      if (config.checkpoints) {
        if (run.ensemble) save_ensemble(*run.ensemble, checkpoint_path(out, method, seed));
        for (std::size_t k = 0; k < run.classifiers.size(); ++k) {
          save_checkpoint(run.classifiers[k],
                          checkpoint_path(out, method, seed, per_env ? std::optional<std::size_t>(k) : std::nullopt));
        }
      }
      if (log) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[160];
        std::snprintf(line, sizeof line, "seed %llu %-12s train %6.2f%%  test %6.2f%%  turns %zu%s  (%.1fs)\n",
                      static_cast<unsigned long long>(seed), std::string(to_string(method)).c_str(),
                      100.0 * run.result.train_acc, 100.0 * run.result.test_acc, run.result.turns,
                      run.result.terminated ? " terminated" : "", secs);
        *log << line << std::flush;
      }
      result.runs.push_back(run.result);
    }
  }
  result.table = summarize(result.runs);

  std::ostringstream csv, md, per_seed;
  write_results_csv(result.table, csv);
  write_results_markdown(result.table, md);
  write_seed_csv(result.runs, per_seed);
  write_file(out / "results.csv", csv.str());
  write_file(out / "results.md", md.str());
  write_file(out / "seeds.csv", per_seed.str());

  json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = json::parse(config_to_json(config));
  manifest["seeds"] = seeds;
  manifest["data_dir"] = config.benchmark == BenchmarkName::ColoredShapes
                             ? json(nullptr)
                             : json(resolve_data_dir(config.data.data_dir).string());
  manifest["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

}  // namespace eirm
