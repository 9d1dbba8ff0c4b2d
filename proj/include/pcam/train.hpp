#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pcam/jsonio.hpp"
#include "pcam/metrics.hpp"
#include "pcam/segnet.hpp"
#include "pcam/synthdata.hpp"

namespace pcam {

// Training halts once the best validation DSC has not improved by more
// than min_delta for `patience` consecutive epochs.
struct EarlyStopConfig {
  double min_delta = 0.0001;
  std::size_t patience = 10;

  bool operator==(const EarlyStopConfig&) const = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct TrainingConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  double learning_rate = 0.01;
  double lr_decay = 0.95;     // multiplicative, per epoch
  double side_weight = 0.5;   // deep-supervision share of the total loss
  bool augment = false;       // random flips/rotations plus noise per epoch
  EarlyStopConfig early_stop;
  AdamConfig adam;

  bool operator==(const TrainingConfig&) const = default;
};

// One self-contained run: network, optimization schedule, and the dataset
// recipe. The run seed drives sample order, augmentation, and the network
// init stream, so ablation variants trained under one seed share their
// main-path weights.
struct RunConfig {
  NetworkConfig network;
  TrainingConfig training;
  SynthSpec dataset;
  std::size_t dataset_count = 16;
  std::string output_dir = "run";
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

Json run_config_json(const RunConfig& config);
RunConfig run_config_from_json(const Json& j);

// Standard Adam with bias correction. Gradients arrive as flat buffers
// matching the parameter registration order.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const AdamConfig& config);

  void step(const std::vector<std::vector<double>>& grads, double lr);
  std::uint64_t steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

struct EpochRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dsc = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<EpochRow> history;
  double best_val_dsc = 0.0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Last fifth of the samples by index, at least one.
std::size_t validation_count(std::size_t total);

BinaryVolume label_foreground(const Sample& sample);
BinaryVolume logits_foreground(const Tensor& logits);

// Deterministic full training loop over in-memory samples: the last
// validation_count(data.size()) samples are held out, the rest are
// shuffled into batches each epoch. Non-finite loss aborts with a
// numeric error.
TrainResult train_run(const RunConfig& config, const std::vector<Sample>& data);

// Same loop with an explicit trailing holdout size, for cross-validation
// drivers that rotate the folds themselves.
TrainResult train_run(const RunConfig& config, const std::vector<Sample>& data,
                      std::size_t val_count);

// checkpoint.ckpt, metrics.csv (one row per epoch), config.json.
void write_run_outputs(const std::filesystem::path& out_dir,
                       const RunConfig& config, const TrainResult& result);

struct EvalRow {
  VolumeMetrics metrics;
  // Foreground precision of the thresholded side output, raw and after one
  // erosion; absent without a plug or when the prediction is empty.
  std::optional<double> side_raw_precision;
  std::optional<double> side_eroded_precision;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  MetricsReport volumes;
  MetricStats side_raw;
  MetricStats side_eroded;
};

EvalReport eval_run(const Network& net, const std::vector<Sample>& data);
Json eval_json(const EvalReport& report);
void write_eval_csv(const EvalReport& report, std::ostream& out);

struct AblateRow {
  std::string location;  // "none" or the upsampling-layer index
  MetricStats dsc, voe, assd, betti0_error;
};

struct AblateReport {
  std::vector<AblateRow> rows;
};

// Trains every plug location (none plus each upsampling layer) under the
// shared seed and data, then scores each on the common validation split.
AblateReport ablate_run(const RunConfig& base, const std::vector<Sample>& data);
Json ablate_json(const AblateReport& report);
void write_ablate_csv(const AblateReport& report, std::ostream& out);

}  // namespace pcam
