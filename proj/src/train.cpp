#include "pcam/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <utility>

#include "pcam/errors.hpp"
#include "pcam/losses.hpp"
#include "pcam/ops.hpp"
#include "pcam/rng.hpp"
#include "pcam/serialize.hpp"

namespace pcam {

namespace {

// Seed streams carved out of the run seed.
constexpr std::uint64_t kNetworkStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAugmentBase = 1000;

void check_positive(double v, const char* what) {
  if (!std::isfinite(v) || v <= 0.0)
    throw ConfigError(std::string("run config: ") + what +
                      " must be positive and finite");
}

Tensor image_tensor(const Sample& sample) {
  return Tensor({1, sample.ext.h, sample.ext.w, sample.ext.s}, sample.image);
}

std::vector<HeadPrediction> loss_heads(const ForwardOutputs& out,
                                       double side_weight) {
  std::vector<HeadPrediction> heads;
  heads.push_back({"final", softmax(out.logits, 0), 1.0});
  if (!out.side_outputs.empty())
    heads.push_back({"side", out.side_outputs.front(), side_weight});
  return heads;
}

double validation_dsc(const Network& net, const std::vector<Sample>& data,
                      std::size_t val_begin, bool use_pcam) {
  NoGradGuard guard;
  long double sum = 0.0L;
  for (std::size_t i = val_begin; i < data.size(); ++i) {
    const ForwardOutputs out = net.forward(image_tensor(data[i]), use_pcam);
    sum += dsc(logits_foreground(out.logits), label_foreground(data[i]));
  }
  return static_cast<double>(sum /
                             static_cast<long double>(data.size() - val_begin));
}

BinaryVolume downsample_labels(const Sample& sample, VolumeExtents coarse) {
  const VolumeExtents& full = sample.ext;
  if (full.h % coarse.h != 0 || full.w % coarse.w != 0 ||
      full.s % coarse.s != 0)
    throw ContractError("downsample_labels: extents do not divide");
  const std::size_t fh = full.h / coarse.h;
  const std::size_t fw = full.w / coarse.w;
  const std::size_t fs = full.s / coarse.s;
  BinaryVolume out(coarse);
  for (std::size_t h = 0; h < coarse.h; ++h)
    for (std::size_t w = 0; w < coarse.w; ++w)
      for (std::size_t s = 0; s < coarse.s; ++s)
        out.voxels[idx3(coarse.h, coarse.w, coarse.s, h, w, s)] =
            sample.label[idx3(full.h, full.w, full.s, h * fh, w * fw,
                              s * fs)] != 0;
  return out;
}

Json training_json(const TrainingConfig& t) {
  Json adam;
  adam["beta1"] = t.adam.beta1;
  adam["beta2"] = t.adam.beta2;
  adam["eps"] = t.adam.eps;
  Json stop;
  stop["min_delta"] = t.early_stop.min_delta;
  stop["patience"] = t.early_stop.patience;
  Json j;
  j["adam"] = std::move(adam);
  j["augment"] = t.augment;
  j["batch_size"] = t.batch_size;
  j["early_stop"] = std::move(stop);
  j["epochs"] = t.epochs;
  j["learning_rate"] = t.learning_rate;
  j["lr_decay"] = t.lr_decay;
  j["side_weight"] = t.side_weight;
  return j;
}

AdamConfig adam_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("run config: adam must be an object");
  AdamConfig adam;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "beta1") {
        adam.beta1 = value.get<double>();
      } else if (key == "beta2") {
        adam.beta2 = value.get<double>();
      } else if (key == "eps") {
        adam.eps = value.get<double>();
      } else {
        throw ConfigError("run config: unknown adam key \"" + key + "\"");
      }
    } catch (const Json::exception&) {
      throw ConfigError("run config: adam key \"" + key +
                        "\" has the wrong type");
    }
  }
  return adam;
}

EarlyStopConfig early_stop_from_json(const Json& j) {
  if (!j.is_object())
    throw ConfigError("run config: early_stop must be an object");
  EarlyStopConfig stop;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "min_delta") {
        stop.min_delta = value.get<double>();
      } else if (key == "patience") {
        stop.patience = value.get<std::size_t>();
      } else {
        throw ConfigError("run config: unknown early_stop key \"" + key +
                          "\"");
      }
    } catch (const Json::exception&) {
      throw ConfigError("run config: early_stop key \"" + key +
                        "\" has the wrong type");
    }
  }
  return stop;
}

TrainingConfig training_from_json(const Json& j) {
  if (!j.is_object())
    throw ConfigError("run config: training must be an object");
  TrainingConfig t;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "adam") {
        t.adam = adam_from_json(value);
      } else if (key == "augment") {
        t.augment = value.get<bool>();
      } else if (key == "batch_size") {
        t.batch_size = value.get<std::size_t>();
      } else if (key == "early_stop") {
        t.early_stop = early_stop_from_json(value);
      } else if (key == "epochs") {
        t.epochs = value.get<std::size_t>();
      } else if (key == "learning_rate") {
        t.learning_rate = value.get<double>();
      } else if (key == "lr_decay") {
        t.lr_decay = value.get<double>();
      } else if (key == "side_weight") {
        t.side_weight = value.get<double>();
      } else {
        throw ConfigError("run config: unknown training key \"" + key + "\"");
      }
    } catch (const Json::exception&) {
      throw ConfigError("run config: training key \"" + key +
                        "\" has the wrong type");
    }
  }
  return t;
}

}  // namespace

void RunConfig::validate() const {
  network.validate();
  dataset.validate();
  if (training.batch_size == 0)
    throw ConfigError("run config: batch_size must be positive");
  check_positive(training.learning_rate, "learning_rate");
  if (!std::isfinite(training.lr_decay) || training.lr_decay <= 0.0 ||
      training.lr_decay > 1.0)
    throw ConfigError("run config: lr_decay must lie in (0, 1]");
  if (!std::isfinite(training.side_weight) || training.side_weight < 0.0)
    throw ConfigError("run config: side_weight must be non-negative");
  if (!std::isfinite(training.early_stop.min_delta) ||
      training.early_stop.min_delta < 0.0)
    throw ConfigError("run config: min_delta must be non-negative");
  if (training.early_stop.patience == 0)
    throw ConfigError("run config: patience must be positive");
  if (!std::isfinite(training.adam.beta1) || training.adam.beta1 < 0.0 ||
      training.adam.beta1 >= 1.0 || !std::isfinite(training.adam.beta2) ||
      training.adam.beta2 < 0.0 || training.adam.beta2 >= 1.0)
    throw ConfigError("run config: adam betas must lie in [0, 1)");
  check_positive(training.adam.eps, "adam eps");
  if (dataset_count < 2)
    throw ConfigError(
        "run config: dataset_count must be at least 2 for a split");
  if (output_dir.empty())
    throw ConfigError("run config: output_dir must not be empty");
}

Json run_config_json(const RunConfig& config) {
  Json j;
  j["dataset"] = synth_spec_json(config.dataset);
  j["dataset_count"] = config.dataset_count;
  j["network"] = network_config_json(config.network);
  j["output_dir"] = config.output_dir;
  j["seed"] = config.seed;
  j["training"] = training_json(config.training);
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("run config: expected an object");
  RunConfig config;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "dataset") {
        config.dataset = synth_spec_from_json(value);
      } else if (key == "dataset_count") {
        config.dataset_count = value.get<std::size_t>();
      } else if (key == "network") {
        config.network = network_config_from_json(value);
      } else if (key == "output_dir") {
        config.output_dir = value.get<std::string>();
      } else if (key == "seed") {
        config.seed = value.get<std::uint64_t>();
      } else if (key == "training") {
        config.training = training_from_json(value);
      } else {
        throw ConfigError("run config: unknown key \"" + key + "\"");
      }
    } catch (const Json::exception&) {
      throw ConfigError("run config: key \"" + key + "\" has the wrong type");
    }
  }
  config.validate();
  return config;
}

Adam::Adam(std::vector<Tensor> params, const AdamConfig& config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads, double lr) {
  if (grads.size() != params_.size())
    throw ContractError("adam: gradient list length mismatch");
  ++steps_;
  const double bias1 =
      1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bias2 =
      1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    std::vector<double>& p = params_[pi].mutable_values();
    const std::vector<double>& g = grads[pi];
    if (g.size() != p.size())
      throw ContractError("adam: gradient size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[pi][i] = config_.beta1 * m_[pi][i] + (1.0 - config_.beta1) * g[i];
      v_[pi][i] =
          config_.beta2 * v_[pi][i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m_[pi][i] / bias1;
      const double vhat = v_[pi][i] / bias2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

std::size_t validation_count(std::size_t total) {
  if (total < 2)
    throw DataError("validation_count: need at least 2 samples to split");
  return std::max<std::size_t>(1, total / 5);
}

BinaryVolume label_foreground(const Sample& sample) {
  BinaryVolume fg(sample.ext);
  for (std::size_t i = 0; i < sample.label.size(); ++i)
    fg.voxels[i] = sample.label[i] != 0;
  return fg;
}

BinaryVolume logits_foreground(const Tensor& logits) {
  const std::size_t classes = logits.extent(0);
  const VolumeExtents ext{logits.extent(1), logits.extent(2),
                          logits.extent(3)};
  const std::size_t voxels = ext.numel();
  BinaryVolume fg(ext);
  for (std::size_t v = 0; v < voxels; ++v) {
    std::size_t best = 0;
    double best_score = logits.flat(v);
    for (std::size_t c = 1; c < classes; ++c) {
      const double score = logits.flat(c * voxels + v);
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    fg.voxels[v] = best != 0;
  }
  return fg;
}

TrainResult train_run(const RunConfig& config,
                      const std::vector<Sample>& data) {
  return train_run(config, data, validation_count(data.size()));
}

TrainResult train_run(const RunConfig& config, const std::vector<Sample>& data,
                      std::size_t val_count) {
  config.validate();
  if (data.size() < 2) throw DataError("train: need at least 2 samples");
  if (val_count == 0 || val_count >= data.size())
    throw DataError("train: holdout must leave samples on both sides, got " +
                    std::to_string(val_count) + " of " +
                    std::to_string(data.size()));
  const std::size_t val_n = val_count;
  const std::size_t train_n = data.size() - val_n;

  NetworkConfig net_config = config.network;
  net_config.seed = derive_seed(config.seed, kNetworkStream);
  Network net{net_config};
  const bool use_pcam = net_config.pcam_location != 0;
  Adam optimizer(net.parameters(), config.training.adam);
  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream));

  std::vector<std::size_t> order(train_n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochRow> history;
  double best = -1.0;
  std::size_t best_epoch = 0;
  std::size_t stale = 0;
  bool stopped_early = false;

  for (std::size_t epoch = 0; epoch < config.training.epochs; ++epoch) {
    const double lr =
        config.training.learning_rate *
        std::pow(config.training.lr_decay, static_cast<double>(epoch));
    for (std::size_t i = 0; i + 1 < train_n; ++i)
      std::swap(order[i], order[i + shuffle_rng.below(train_n - i)]);

    long double loss_sum = 0.0L;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train_n;
         start += config.training.batch_size) {
      const std::size_t stop =
          std::min(train_n, start + config.training.batch_size);
      const double batch_scale = 1.0 / static_cast<double>(stop - start);
      std::vector<std::vector<double>> grads;
      for (const Tensor& p : net.parameters())
        grads.emplace_back(p.size(), 0.0);
      long double batch_loss = 0.0L;
      for (std::size_t k = start; k < stop; ++k) {
        Sample sample = data[order[k]];
        if (config.training.augment)
          sample = augment(
              sample,
              derive_seed(config.seed, kAugmentBase + epoch * data.size() +
                                           order[k]),
              config.dataset.noise_sigma);
        const Tensor target =
            one_hot(sample.label, sample.ext, net_config.num_classes);
        GradTape tape;
        const ForwardOutputs out = net.forward(image_tensor(sample), use_pcam);
        const LossReport report =
            total_loss(loss_heads(out, config.training.side_weight), target);
        const double loss = report.total.item();
        if (!std::isfinite(loss))
          throw NumericError("train: non-finite loss at epoch " +
                             std::to_string(epoch) + ", sample " +
                             std::to_string(order[k]));
        batch_loss += loss;
        tape.backward(report.total);
        for (std::size_t pi = 0; pi < net.parameters().size(); ++pi) {
          const Tensor g = tape.grad_or_zeros(net.parameters()[pi]);
          for (std::size_t i = 0; i < g.size(); ++i)
            grads[pi][i] += batch_scale * g.flat(i);
        }
      }
      optimizer.step(grads, lr);
      loss_sum += batch_loss / static_cast<long double>(stop - start);
      ++batches;
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss =
        static_cast<double>(loss_sum / static_cast<long double>(batches));
    row.val_dsc = validation_dsc(net, data, train_n, use_pcam);
    history.push_back(row);

    if (row.val_dsc > best + config.training.early_stop.min_delta) {
      best = row.val_dsc;
      best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
      if (stale >= config.training.early_stop.patience) {
        stopped_early = true;
        break;
      }
    }
  }

  return TrainResult{std::move(net), std::move(history), std::max(best, 0.0),
                     best_epoch, stopped_early};
}

void write_run_outputs(const std::filesystem::path& out_dir,
                       const RunConfig& config, const TrainResult& result) {
  std::filesystem::create_directories(out_dir);
  save_network(out_dir / "checkpoint.ckpt", result.net);
  save_canonical_json(out_dir / "config.json", run_config_json(config));
  std::ofstream csv(out_dir / "metrics.csv");
  if (!csv)
    throw DataError("write_run_outputs: cannot open metrics.csv under " +
                    out_dir.string());
  CsvWriter writer(csv, {"epoch", "lr", "train_loss", "val_dsc"});
  for (const EpochRow& row : result.history)
    writer.row({std::to_string(row.epoch), CsvWriter::num(row.lr),
                CsvWriter::num(row.train_loss), CsvWriter::num(row.val_dsc)});
  if (!csv) throw DataError("write_run_outputs: metrics.csv write failed");
}

EvalReport eval_run(const Network& net, const std::vector<Sample>& data) {
  NoGradGuard guard;
  const bool plugged = net.config().pcam_location != 0;
  EvalReport report;
  std::vector<VolumeMetrics> volumes;
  std::vector<std::optional<double>> raw, eroded;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& sample = data[i];
    const ForwardOutputs out = net.forward(image_tensor(sample), plugged);
    EvalRow row;
    row.metrics =
        evaluate_volume(sample_dir_name(i), logits_foreground(out.logits),
                        label_foreground(sample), sample.spacing);
    if (plugged) {
      const Tensor& side = out.side_outputs.front();
      const BinaryVolume side_pred = logits_foreground(side);
      const BinaryVolume gt = downsample_labels(
          sample, {side.extent(1), side.extent(2), side.extent(3)});
      row.side_raw_precision = precision(side_pred, gt);
      row.side_eroded_precision =
          precision(erode(side_pred, StructureElement::square3()), gt);
    }
    volumes.push_back(row.metrics);
    raw.push_back(row.side_raw_precision);
    eroded.push_back(row.side_eroded_precision);
    report.rows.push_back(std::move(row));
  }
  report.volumes = aggregate_metrics(std::move(volumes));
  report.side_raw = aggregate_stat(raw);
  report.side_eroded = aggregate_stat(eroded);
  return report;
}

Json eval_json(const EvalReport& report) {
  Json j = metrics_json(report.volumes);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    j["per_volume"][i]["side_precision_raw"] =
        optional_json(report.rows[i].side_raw_precision);
    j["per_volume"][i]["side_precision_eroded"] =
        optional_json(report.rows[i].side_eroded_precision);
  }
  j["aggregate"]["side_precision_raw"] = stats_json(report.side_raw);
  j["aggregate"]["side_precision_eroded"] = stats_json(report.side_eroded);
  return j;
}

void write_eval_csv(const EvalReport& report, std::ostream& out) {
  CsvWriter csv(out, {"id", "dsc", "voe", "assd", "betti0_error",
                      "precision_fg", "precision_bg", "side_precision_raw",
                      "side_precision_eroded"});
  const auto cell = [](const std::optional<double>& v) {
    return v ? CsvWriter::num(*v) : std::string();
  };
  for (const EvalRow& row : report.rows) {
    const VolumeMetrics& m = row.metrics;
    csv.row({m.id, CsvWriter::num(m.dsc), CsvWriter::num(m.voe), cell(m.assd),
             CsvWriter::num(m.betti0_error), cell(m.precision_fg),
             cell(m.precision_bg), cell(row.side_raw_precision),
             cell(row.side_eroded_precision)});
  }
}

AblateReport ablate_run(const RunConfig& base,
                        const std::vector<Sample>& data) {
  base.validate();
  const std::size_t val_n = validation_count(data.size());
  const std::vector<Sample> val(data.end() - static_cast<std::ptrdiff_t>(val_n),
                                data.end());
  AblateReport report;
  for (std::size_t loc = 0; loc <= base.network.stages; ++loc) {
    RunConfig variant = base;
    variant.network.pcam_location = loc;
    const TrainResult trained = train_run(variant, data);
    const EvalReport scored = eval_run(trained.net, val);
    AblateRow row;
    row.location = loc == 0 ? "none" : std::to_string(loc);
    row.dsc = scored.volumes.dsc;
    row.voe = scored.volumes.voe;
    row.assd = scored.volumes.assd;
    row.betti0_error = scored.volumes.betti0_error;
    report.rows.push_back(std::move(row));
  }
  return report;
}

Json ablate_json(const AblateReport& report) {
  Json rows = Json::array();
  for (const AblateRow& row : report.rows) {
    Json r;
    r["location"] = row.location;
    r["dsc"] = stats_json(row.dsc);
    r["voe"] = stats_json(row.voe);
    r["assd"] = stats_json(row.assd);
    r["betti0_error"] = stats_json(row.betti0_error);
    rows.push_back(std::move(r));
  }
  Json j;
  j["rows"] = std::move(rows);
  return j;
}

void write_ablate_csv(const AblateReport& report, std::ostream& out) {
  CsvWriter csv(out, {"location", "dsc", "voe", "assd", "betti0_error"});
  const auto cell = [](const MetricStats& s) {
    return s.counted ? CsvWriter::num(s.mean) : std::string();
  };
  for (const AblateRow& row : report.rows)
    csv.row({row.location, cell(row.dsc), cell(row.voe), cell(row.assd),
             cell(row.betti0_error)});
}

}  // namespace pcam
