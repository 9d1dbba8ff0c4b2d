#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "common/checks.hpp"
#include "pcam/errors.hpp"
#include "pcam/rng.hpp"
#include "pcam/train.hpp"

using namespace pcam;
using checks::close;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "pcam_train_test";
  std::filesystem::create_directories(dir);
  return dir;
}

SynthSpec tiny_spec() {
  SynthSpec spec;
  spec.ext = {8, 8, 4};
  spec.thickness = 2;
  spec.curvature = 0.5;
  spec.halo_width = 1;
  spec.seed = 3;
  return spec;
}

RunConfig tiny_run() {
  RunConfig config;
  config.network.stages = 1;
  config.network.base_channels = 2;
  config.network.pcam_location = 1;
  config.training.epochs = 4;
  config.training.batch_size = 2;
  config.training.learning_rate = 0.005;
  config.dataset = tiny_spec();
  config.dataset_count = 8;
  config.seed = 21;
  return config;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream stream(text);
  std::string line;
  while (std::getline(stream, line)) lines.push_back(line);
  return lines;
}

bool params_equal(const Network& a, const Network& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if (a.parameters()[i].values() != b.parameters()[i].values())
      return false;
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("run config JSON round trips at every level") {
  RunConfig config = tiny_run();
  config.network.leaky_slope = 0.05;
  config.training.lr_decay = 0.9;
  config.training.side_weight = 0.25;
  config.training.augment = true;
  config.training.early_stop = {0.01, 3};
  config.training.adam = {0.8, 0.9, 1e-6};
  config.dataset.break_probability = 0.25;
  config.dataset.spacing = {0.5, 0.5, 1.0};
  config.output_dir = "out/x";
  config.seed = 77;

  const Json j = run_config_json(config);
  CHECK(run_config_from_json(j) == config);

  const std::string text = canonical_json(j);
  CHECK(canonical_json(parse_json(text, "run")) == text);
  CHECK(run_config_from_json(parse_json(text, "run")) == config);

  std::vector<std::string> top;
  for (const auto& [key, value] : j.items()) top.push_back(key);
  const std::vector<std::string> want{"dataset", "dataset_count", "network",
                                      "output_dir", "seed", "training"};
  CHECK(top == want);
  std::vector<std::string> training;
  for (const auto& [key, value] : j["training"].items())
    training.push_back(key);
  const std::vector<std::string> want_training{
      "adam",   "augment",       "batch_size", "early_stop",
      "epochs", "learning_rate", "lr_decay",   "side_weight"};
  CHECK(training == want_training);
}

TEST_CASE("run config JSON rejects unknown keys and wrong types") {
  const Json base = run_config_json(tiny_run());

  Json extra = base;
  extra["epochs"] = 3;
  CHECK_THROWS_AS(run_config_from_json(extra), ConfigError);

  Json bad_training = base;
  bad_training["training"]["momentum"] = 0.9;
  CHECK_THROWS_AS(run_config_from_json(bad_training), ConfigError);

  Json bad_adam = base;
  bad_adam["training"]["adam"]["gamma"] = 0.1;
  CHECK_THROWS_AS(run_config_from_json(bad_adam), ConfigError);

  Json bad_stop = base;
  bad_stop["training"]["early_stop"]["window"] = 4;
  CHECK_THROWS_AS(run_config_from_json(bad_stop), ConfigError);

  Json bad_type = base;
  bad_type["training"]["batch_size"] = "four";
  CHECK_THROWS_AS(run_config_from_json(bad_type), ConfigError);

  CHECK_THROWS_AS(run_config_from_json(Json::array()), ConfigError);
}

TEST_CASE("run config validation pins every bound") {
  const auto rejects = [](auto mutate) {
    RunConfig config = tiny_run();
    mutate(config);
    CHECK_THROWS_AS(config.validate(), ConfigError);
  };
  rejects([](RunConfig& c) { c.training.batch_size = 0; });
  rejects([](RunConfig& c) { c.training.learning_rate = 0.0; });
  rejects([](RunConfig& c) { c.training.learning_rate = -0.1; });
  rejects([](RunConfig& c) { c.training.lr_decay = 0.0; });
  rejects([](RunConfig& c) { c.training.lr_decay = 1.5; });
  rejects([](RunConfig& c) { c.training.side_weight = -0.1; });
  rejects([](RunConfig& c) { c.training.early_stop.min_delta = -1.0; });
  rejects([](RunConfig& c) { c.training.early_stop.patience = 0; });
  rejects([](RunConfig& c) { c.training.adam.beta1 = 1.0; });
  rejects([](RunConfig& c) { c.training.adam.beta2 = -0.5; });
  rejects([](RunConfig& c) { c.training.adam.eps = 0.0; });
  rejects([](RunConfig& c) { c.dataset_count = 1; });
  rejects([](RunConfig& c) { c.output_dir.clear(); });
  rejects([](RunConfig& c) { c.network.pcam_location = 5; });
  rejects([](RunConfig& c) { c.dataset.thickness = 0; });
  CHECK_NOTHROW(tiny_run().validate());
}

TEST_CASE("adam takes the documented bias-corrected step") {
  Tensor p({2}, {1.0, -2.0});
  Adam opt({p}, {});
  // With fresh moments the corrected update is lr * g / (|g| + eps).
  opt.step({{0.5, -1.0}}, 0.1);
  CHECK(close(p.values()[0], 0.9, 1e-9, 1e-7));
  CHECK(close(p.values()[1], -1.9, 1e-9, 1e-7));
  // A repeated gradient keeps both corrected moments equal to g and g^2.
  opt.step({{0.5, -1.0}}, 0.1);
  CHECK(close(p.values()[0], 0.8, 1e-9, 1e-7));
  CHECK(close(p.values()[1], -1.8, 1e-9, 1e-7));
  CHECK(opt.steps() == 2);

  CHECK_THROWS_AS(opt.step({}, 0.1), ContractError);
  CHECK_THROWS_AS(opt.step({{1.0}}, 0.1), ContractError);
}

TEST_CASE("adam walks a quadratic to its minimum") {
  Tensor p({1}, {1.0});
  Adam opt({p}, {});
  for (std::size_t i = 0; i < 400; ++i)
    opt.step({{2.0 * p.values()[0]}}, 0.05);
  CHECK(std::abs(p.values()[0]) < 0.05);
}

TEST_CASE("validation split takes the trailing fifth") {
  CHECK(validation_count(2) == 1);
  CHECK(validation_count(5) == 1);
  CHECK(validation_count(9) == 1);
  CHECK(validation_count(10) == 2);
  CHECK(validation_count(16) == 3);
  CHECK(validation_count(100) == 20);
  CHECK_THROWS_AS(validation_count(0), DataError);
  CHECK_THROWS_AS(validation_count(1), DataError);
}

TEST_CASE("foreground masks come from labels and argmax logits") {
  Sample sample;
  sample.ext = {2, 2, 1};
  sample.image.assign(4, 0.0);
  sample.label = {0, 1, 1, 0};
  const BinaryVolume fg = label_foreground(sample);
  CHECK(fg.voxels == std::vector<std::uint8_t>{0, 1, 1, 0});

  // Ties go to the background; any later class can win the argmax.
  const Tensor logits({3, 2, 2, 1}, {0.5, 0.1, 0.2, 0.2,    // class 0
                                     0.4, 0.6, 0.1, 0.2,    // class 1
                                     0.3, 0.2, 0.9, 0.2});  // class 2
  const BinaryVolume pred = logits_foreground(logits);
  CHECK(pred.ext == VolumeExtents{2, 2, 1});
  CHECK(pred.voxels == std::vector<std::uint8_t>{0, 1, 1, 0});
}

TEST_CASE("zero epochs hand back the derived-seed initialization") {
  RunConfig config = tiny_run();
  config.training.epochs = 0;
  const std::vector<Sample> data = generate(config.dataset, 4);
  const TrainResult result = train_run(config, data);
  CHECK(result.history.empty());
  CHECK(result.best_val_dsc == 0.0);
  CHECK(result.best_epoch == 0);
  CHECK_FALSE(result.stopped_early);

  NetworkConfig expected = config.network;
  expected.seed = derive_seed(config.seed, 1);
  CHECK(result.net.config() == expected);
  CHECK(params_equal(result.net, Network{expected}));
}

TEST_CASE("training is deterministic and the loss comes down") {
  const RunConfig config = tiny_run();
  const std::vector<Sample> data = generate(config.dataset, 8);
  const TrainResult a = train_run(config, data);
  const TrainResult b = train_run(config, data);

  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].epoch == i);
    CHECK(a.history[i].lr == b.history[i].lr);
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_dsc == b.history[i].val_dsc);
  }
  CHECK(params_equal(a.net, b.net));

  REQUIRE(a.history.size() == 4);
  double lowest = a.history[0].train_loss;
  for (const EpochRow& row : a.history) {
    CHECK(std::isfinite(row.train_loss));
    CHECK(row.val_dsc >= 0.0);
    CHECK(row.val_dsc <= 1.0);
    lowest = std::min(lowest, row.train_loss);
  }
  CHECK(lowest < a.history.front().train_loss);
  CHECK(a.history[1].lr == doctest::Approx(0.005 * 0.95));

  CHECK(a.best_epoch < a.history.size());
  CHECK(a.best_val_dsc == a.history[a.best_epoch].val_dsc);
}

TEST_CASE("an unreachable improvement bar stops the run early") {
  RunConfig config = tiny_run();
  config.training.epochs = 50;
  config.training.early_stop = {1.0, 2};
  const std::vector<Sample> data = generate(config.dataset, 5);
  const TrainResult result = train_run(config, data);
  CHECK(result.stopped_early);
  CHECK(result.best_epoch == 0);
  CHECK(result.history.size() >= 2);
  CHECK(result.history.size() <= 3);
}

TEST_CASE("non-finite inputs abort with a numeric error") {
  RunConfig config = tiny_run();
  config.training.epochs = 1;
  config.training.batch_size = 1;
  std::vector<Sample> data = generate(config.dataset, 2);
  data[0].image[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_run(config, data), NumericError);
}

TEST_CASE("training refuses data it cannot split") {
  const RunConfig config = tiny_run();
  const std::vector<Sample> one = generate(config.dataset, 1);
  CHECK_THROWS_AS(train_run(config, one), DataError);
}

TEST_CASE("run outputs land on disk and read back") {
  RunConfig config = tiny_run();
  config.training.epochs = 2;
  const std::vector<Sample> data = generate(config.dataset, 4);
  const TrainResult result = train_run(config, data);

  const auto dir = temp_dir() / "run_out";
  std::filesystem::remove_all(dir);
  write_run_outputs(dir, config, result);

  const Network reloaded = load_network(dir / "checkpoint.ckpt");
  CHECK(reloaded.config() == result.net.config());
  CHECK(params_equal(reloaded, result.net));

  const std::string config_text = slurp(dir / "config.json");
  CHECK(config_text == canonical_json(run_config_json(config)) + "\n");
  CHECK(run_config_from_json(parse_json(config_text, "config")) == config);

  const auto rows = lines_of(slurp(dir / "metrics.csv"));
  REQUIRE(rows.size() == result.history.size() + 1);
  CHECK(rows[0] == "epoch,lr,train_loss,val_dsc");
  CHECK(rows[1].substr(0, 2) == "0,");
  CHECK(rows[2].substr(0, 2) == "1,");
}

TEST_CASE("evaluation reports side precision only when plugged") {
  RunConfig config = tiny_run();
  const std::vector<Sample> data = generate(config.dataset, 3);

  NetworkConfig plugged_config = config.network;
  plugged_config.seed = 5;
  const Network plugged{plugged_config};
  const EvalReport report = eval_run(plugged, data);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.volumes.per_volume.size() == 3);
  CHECK(report.volumes.dsc.counted == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(report.rows[i].metrics.id == sample_dir_name(i));
  CHECK(report.side_raw.counted + report.side_raw.missing == 3);
  CHECK(report.side_eroded.counted + report.side_eroded.missing == 3);

  NetworkConfig bare_config = plugged_config;
  bare_config.pcam_location = 0;
  const Network bare{bare_config};
  const EvalReport bare_report = eval_run(bare, data);
  for (const EvalRow& row : bare_report.rows) {
    CHECK_FALSE(row.side_raw_precision.has_value());
    CHECK_FALSE(row.side_eroded_precision.has_value());
  }
  CHECK(bare_report.side_raw.counted == 0);
  CHECK(bare_report.side_raw.missing == 3);

  const Json j = eval_json(report);
  REQUIRE(j["per_volume"].size() == 3);
  for (const Json& row : j["per_volume"]) {
    CHECK(row.contains("side_precision_raw"));
    CHECK(row.contains("side_precision_eroded"));
  }
  CHECK(j["aggregate"]["side_precision_raw"].contains("counted"));
  CHECK(j["aggregate"]["side_precision_eroded"].contains("counted"));

  std::stringstream csv;
  write_eval_csv(report, csv);
  const auto rows = lines_of(csv.str());
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] ==
        "id,dsc,voe,assd,betti0_error,precision_fg,precision_bg,"
        "side_precision_raw,side_precision_eroded");
  CHECK(rows[1].substr(0, sample_dir_name(0).size()) == sample_dir_name(0));
}

TEST_CASE("ablation sweeps every plug location") {
  RunConfig base = tiny_run();
  base.training.epochs = 2;
  const std::vector<Sample> data = generate(base.dataset, 5);
  const AblateReport report = ablate_run(base, data);

  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].location == "none");
  CHECK(report.rows[1].location == "1");
  for (const AblateRow& row : report.rows) {
    CHECK(row.dsc.counted == 1);
    CHECK(row.voe.counted == 1);
    CHECK(row.betti0_error.counted == 1);
  }

  const Json j = ablate_json(report);
  REQUIRE(j["rows"].size() == 2);
  CHECK(j["rows"][0]["location"] == "none");
  CHECK(j["rows"][1]["dsc"].contains("mean"));

  std::stringstream csv;
  write_ablate_csv(report, csv);
  const auto rows = lines_of(csv.str());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "location,dsc,voe,assd,betti0_error");
  CHECK(rows[1].substr(0, 5) == "none,");
  CHECK(rows[2].substr(0, 2) == "1,");
}

TEST_SUITE_END();
