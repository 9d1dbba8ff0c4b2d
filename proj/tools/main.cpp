#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcam/errors.hpp"
#include "pcam/gradcheck.hpp"
#include "pcam/jsonio.hpp"
#include "pcam/pcam.hpp"
#include "pcam/rng.hpp"
#include "pcam/synthdata.hpp"
#include "pcam/train.hpp"

namespace {

using namespace pcam;

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw DataError("dataset: not a directory: " + dir.string());
  std::vector<Sample> data;
  for (std::size_t i = 0;; ++i) {
    const auto sub = dir / sample_dir_name(i);
    if (!std::filesystem::exists(sub)) break;
    data.push_back(load_sample(sub));
  }
  if (data.empty())
    throw DataError("dataset: no sample directories under " + dir.string());
  return data;
}

std::vector<Sample> dataset_for(const RunConfig& config,
                                const std::string& data_dir) {
  if (!data_dir.empty()) return load_dataset(data_dir);
  return generate(config.dataset, config.dataset_count);
}

void print_history_tail(const TrainResult& result) {
  std::cout << "epochs run: " << result.history.size()
            << (result.stopped_early ? " (stopped early)" : "") << "\n";
  std::cout << "best val dsc: " << fmt_g6(result.best_val_dsc) << " at epoch "
            << result.best_epoch << "\n";
}

void cmd_gen(const SynthSpec& spec, std::size_t count,
             const std::filesystem::path& out) {
  const std::vector<Sample> samples = generate(spec, count);
  for (std::size_t i = 0; i < samples.size(); ++i)
    save_sample(out / sample_dir_name(i), samples[i]);
  std::cout << "wrote " << samples.size() << " samples under " << out.string()
            << "\n";
}

void cmd_train(const RunConfig& config, const std::string& data_dir,
               std::size_t folds) {
  const std::vector<Sample> data = dataset_for(config, data_dir);
  const std::filesystem::path out{config.output_dir};
  if (folds < 2) {
    const TrainResult result = train_run(config, data);
    write_run_outputs(out, config, result);
    print_history_tail(result);
    std::cout << "outputs under " << out.string() << "\n";
    return;
  }
  if (folds > data.size())
    throw DataError("train: more folds than samples");
  long double dsc_sum = 0.0L;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * data.size() / folds;
    const std::size_t hi = (f + 1) * data.size() / folds;
    std::vector<Sample> rotated;
    rotated.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      if (i < lo || i >= hi) rotated.push_back(data[i]);
    rotated.insert(rotated.end(),
                   data.begin() + static_cast<std::ptrdiff_t>(lo),
                   data.begin() + static_cast<std::ptrdiff_t>(hi));
    const TrainResult result = train_run(config, rotated, hi - lo);
    write_run_outputs(out / ("fold_" + std::to_string(f)), config, result);
    std::cout << "fold " << f << ": best val dsc "
              << fmt_g6(result.best_val_dsc) << " at epoch "
              << result.best_epoch << " over " << result.history.size()
              << " epochs\n";
    dsc_sum += result.best_val_dsc;
  }
  std::cout << "mean best val dsc: "
            << fmt_g6(static_cast<double>(dsc_sum /
                                          static_cast<long double>(folds)))
            << "\n";
  std::cout << "outputs under " << out.string() << "\n";
}

void cmd_eval(const std::filesystem::path& checkpoint,
              const std::filesystem::path& data_dir, const std::string& out) {
  const Network net = load_network(checkpoint);
  const std::vector<Sample> data = load_dataset(data_dir);
  const EvalReport report = eval_run(net, data);
  if (out.empty()) {
    std::cout << canonical_json(eval_json(report)) << "\n";
    return;
  }
  const std::filesystem::path path{out};
  if (path.extension() == ".csv") {
    std::ofstream file(path);
    if (!file) throw DataError("eval: cannot open " + out);
    write_eval_csv(report, file);
  } else if (path.extension() == ".json") {
    save_canonical_json(path, eval_json(report));
  } else {
    std::filesystem::create_directories(path);
    std::ofstream file(path / "eval.csv");
    if (!file)
      throw DataError("eval: cannot open " + (path / "eval.csv").string());
    write_eval_csv(report, file);
    save_canonical_json(path / "eval.json", eval_json(report));
  }
  std::cout << "mean dsc: " << fmt_g6(report.volumes.dsc.mean) << " over "
            << report.volumes.dsc.counted << " volumes\n";
  std::cout << "report written to " << out << "\n";
}

void cmd_ablate(const RunConfig& config, const std::string& data_dir,
                const std::string& out) {
  const std::vector<Sample> data = dataset_for(config, data_dir);
  const AblateReport report = ablate_run(config, data);
  write_ablate_csv(report, std::cout);
  const AblateRow* best = nullptr;
  for (const AblateRow& row : report.rows)
    if (row.betti0_error.counted &&
        (best == nullptr || row.betti0_error.mean < best->betti0_error.mean))
      best = &row;
  if (best != nullptr)
    std::cout << "note: lowest mean betti0_error at location " << best->location
              << "\n";
  if (!out.empty()) {
    const std::filesystem::path dir{out};
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "ablate.csv");
    if (!csv)
      throw DataError("ablate: cannot open " + (dir / "ablate.csv").string());
    write_ablate_csv(report, csv);
    save_canonical_json(dir / "ablate.json", ablate_json(report));
    std::cout << "report written to " << out << "\n";
  }
}

void cmd_gradcheck(std::uint64_t seed, std::size_t instances) {
  const std::vector<GradCheck> checks = gradcheck_suite(seed, instances);
  for (const GradCheck& check : checks)
    std::cout << check.name << ": " << check.checked << " entries, worst gap "
              << fmt_g6(check.worst_gap) << ", "
              << (check.ok ? "ok" : "FAIL") << "\n";
  if (!gradcheck_passed(checks))
    throw NumericError("gradient check failed");
  std::cout << "gradient check passed\n";
}

void cmd_bench(std::uint64_t seed) {
  constexpr std::array<std::array<std::size_t, 5>, 11> grid{{
      {2, 2, 2, 2, 1},
      {2, 2, 4, 4, 2},
      {3, 2, 5, 5, 3},
      {4, 3, 6, 6, 2},
      {5, 4, 7, 3, 2},
      {7, 2, 9, 9, 3},
      {8, 2, 8, 8, 4},
      {16, 2, 8, 8, 8},
      {32, 2, 12, 12, 6},
      {64, 3, 16, 16, 8},
      {64, 2, 48, 48, 16},
  }};
  Rng rng(seed);
  CsvWriter csv(std::cout,
                {"c", "n", "h", "w", "s", "formula", "measured", "ratio"});
  for (const auto& [c, n, h, w, s] : grid) {
    const std::size_t m = h * w * s;
    std::vector<double> values(c * m);
    for (double& v : values) v = rng.uniform(-1.0, 1.0);
    const Tensor features(Shape{c, m}, std::move(values));
    std::vector<BinaryVolume> masks(n, BinaryVolume({m, 1, 1}));
    for (std::size_t i = 0; i < m; ++i) masks[i % n].voxels[i] = 1;
    const ClassCenters centers = class_centers(features, masks);
    const std::uint64_t formula = pcam_flops(c, h, w, s, n);
    const std::uint64_t measured = instrumented_affinity_ops(features, centers);
    csv.row({std::to_string(c), std::to_string(n), std::to_string(h),
             std::to_string(w), std::to_string(s), std::to_string(formula),
             std::to_string(measured),
             CsvWriter::num(static_cast<double>(measured) /
                            static_cast<double>(formula))});
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"position-prior clustering attention: data, training and "
               "evaluation tools"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_spec_path;
  std::string gen_out;
  std::size_t gen_count = 16;
  std::uint64_t gen_seed = 0;
  double gen_break = 0.0;
  gen->add_option("--spec", gen_spec_path, "dataset spec JSON file");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of samples")
      ->capture_default_str();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "spec seed");
  auto* gen_break_opt =
      gen->add_option("--break-probability", gen_break,
                      "chance of an image-only sheet gap per sample");

  auto* train = app.add_subcommand("train", "train one run");
  auto* ablate =
      app.add_subcommand("ablate", "train every plug location and compare");
  std::string run_config_path, run_data_dir, run_out;
  std::uint64_t run_seed = 0;
  std::size_t run_epochs = 0, run_location = 0, run_folds = 0;
  CLI::Option *seed_opt[2], *epochs_opt[2], *location_opt[2], *out_opt[2];
  const auto add_run_options = [&](CLI::App* cmd, int slot) {
    cmd->add_option("--config", run_config_path, "run config JSON file");
    cmd->add_option("--data", run_data_dir,
                    "sample directory; generated from the config when unset");
    seed_opt[slot] = cmd->add_option("--seed", run_seed, "run seed");
    epochs_opt[slot] = cmd->add_option("--epochs", run_epochs, "epoch cap");
    out_opt[slot] = cmd->add_option("--out", run_out, "output directory");
    location_opt[slot] =
        cmd->add_option("--location", run_location,
                        "plug location override; 0 disables the plug");
  };
  add_run_options(train, 0);
  add_run_options(ablate, 1);
  train->add_option("--folds", run_folds,
                    "cross-validate over this many contiguous folds");
  out_opt[1]->description("report directory; table prints either way");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string eval_checkpoint, eval_data, eval_out;
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval->add_option("--data", eval_data, "sample directory")->required();
  eval->add_option("--out", eval_out,
                   ".csv or .json report path, or a directory for both; "
                   "prints JSON when unset");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t gc_seed = 1;
  std::size_t gc_instances = 20;
  gradcheck->add_option("--seed", gc_seed, "suite seed")
      ->capture_default_str();
  gradcheck->add_option("--instances", gc_instances, "trials per family")
      ->capture_default_str();

  auto* bench =
      app.add_subcommand("bench", "affinity flop formula vs measured count");
  std::uint64_t bench_seed = 1;
  bench->add_option("--seed", bench_seed, "feature seed")
      ->capture_default_str();

  const auto run_config_for = [&](int slot) {
    RunConfig config;
    if (!run_config_path.empty())
      config = run_config_from_json(load_json(run_config_path));
    if (seed_opt[slot]->count()) config.seed = run_seed;
    if (epochs_opt[slot]->count()) config.training.epochs = run_epochs;
    if (location_opt[slot]->count()) config.network.pcam_location = run_location;
    if (out_opt[slot]->count()) config.output_dir = run_out;
    config.validate();
    return config;
  };

  gen->callback([&] {
    SynthSpec spec;
    if (!gen_spec_path.empty())
      spec = synth_spec_from_json(load_json(gen_spec_path));
    if (gen_seed_opt->count()) spec.seed = gen_seed;
    if (gen_break_opt->count()) spec.break_probability = gen_break;
    spec.validate();
    cmd_gen(spec, gen_count, gen_out);
  });
  train->callback(
      [&] { cmd_train(run_config_for(0), run_data_dir, run_folds); });
  ablate->callback([&] {
    cmd_ablate(run_config_for(1), run_data_dir,
               out_opt[1]->count() ? run_out : std::string{});
  });
  eval->callback([&] { cmd_eval(eval_checkpoint, eval_data, eval_out); });
  gradcheck->callback([&] { cmd_gradcheck(gc_seed, gc_instances); });
  bench->callback([&] { cmd_bench(bench_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
