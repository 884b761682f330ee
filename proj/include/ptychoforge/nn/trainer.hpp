#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ptychoforge/dataset.hpp"
#include "ptychoforge/nn/model.hpp"

namespace ptychoforge::nn {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t plateau_patience = 5;
  double lr_factor = 0.5;
  double lr = 1e-3;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;  // minibatch shuffling

  void validate() const;
};

/// Row of the loss curve. Epoch 0 is the untrained network.
struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;  // rate in effect during the epoch
};

struct TrainResult {
  ModelParams<float> best_params;
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  double seconds = 0.0;
};

using TrainProgress = std::function<void(const EpochRecord&)>;

/// Minibatch ADAM on `split.train_ids` with plateau scheduling on the
/// validation MAE. Returns the parameters of the epoch with the lowest
/// validation loss. Stops after max_epochs or once lr < min_lr.
TrainResult train(const TripletDataset& dataset, const SplitIndex& split, const TrainConfig& config,
                  ModelParams<float> initial, const TrainProgress& progress = {});

/// Mean per-sample loss over the records in `ids`.
double evaluate_mae(const ModelParams<float>& params, const TripletDataset& dataset,
                    const std::vector<std::size_t>& ids);

struct PredictResult {
  FrameStack amplitude;
  FrameStack phase;
  std::vector<double> ms_per_frame;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  std::vector<std::string> warnings;
};

/// Per-frame inference with wall-clock timing. Frames must already be
/// divided by the dataset's diff_scale; a warning is recorded otherwise.
PredictResult predict(const ModelParams<float>& params, const FrameStack& frames);

/// Nearest-rank percentile of a sample (p in [0, 100]).
double percentile(std::vector<double> values, double p);

void write_loss_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve);

}  // namespace ptychoforge::nn
