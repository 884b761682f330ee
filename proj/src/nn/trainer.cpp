#include "ptychoforge/nn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ptychoforge/errors.hpp"
#include "ptychoforge/nn/optim.hpp"
#include "ptychoforge/numerics.hpp"

namespace ptychoforge::nn {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ArgumentError("TrainConfig: batch_size must be >= 1");
  if (plateau_patience == 0) throw ArgumentError("TrainConfig: plateau_patience must be >= 1");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ArgumentError("TrainConfig: lr_factor must lie in (0, 1)");
  if (!(lr > 0.0)) throw ArgumentError("TrainConfig: lr must be positive");
  if (!(min_lr >= 0.0)) throw ArgumentError("TrainConfig: min_lr must be nonnegative");
}

namespace {

using Clock = std::chrono::steady_clock;

double sample_loss(const ModelParams<float>& params, const TripletDataset& ds, std::size_t id) {
  const auto pred = model_forward<float>(params, ds.diffraction.frame(id));
  double amp = 0.0;
  double ph = 0.0;
  const auto ta = ds.amplitude.frame(id);
  const auto tp = ds.phase.frame(id);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    amp += std::abs(static_cast<double>(pred.amplitude[i]) - ta[i]);
    ph += std::abs(static_cast<double>(pred.phase[i]) - tp[i]);
  }
  return (amp + ph) / static_cast<double>(ta.size());
}

// Per-worker scratch for the minibatch gradient.
struct WorkerState {
  ForwardCache<float> cache;
  std::vector<std::vector<float>> grads;
  std::vector<double> losses;
};

}  // namespace

double evaluate_mae(const ModelParams<float>& params, const TripletDataset& dataset,
                    const std::vector<std::size_t>& ids) {
  if (ids.empty()) throw ArgumentError("evaluate_mae: no records");
  std::vector<double> losses(ids.size());
  parallel_for(ids.size(), [&](std::size_t k) { losses[k] = sample_loss(params, dataset, ids[k]); });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(ids.size());
}

TrainResult train(const TripletDataset& dataset, const SplitIndex& split, const TrainConfig& config,
                  ModelParams<float> initial, const TrainProgress& progress) {
  config.validate();
  if (dataset.size() == 0 || split.train_ids.empty()) throw ArgumentError("train: empty training set");
  if (dataset.diffraction.height != initial.arch.input_size) {
    throw ShapeError("train: frame size does not match the architecture input");
  }
  const auto start = Clock::now();
  const auto& val_ids = split.val_ids.empty() ? split.train_ids : split.val_ids;

  ModelParams<float> params = std::move(initial);
  std::vector<std::vector<float>> param_shapes;
  for (const auto& p : params.params) param_shapes.push_back(p.values);
  AdamState<float> adam = AdamState<float>::like(param_shapes, config.lr);
  PlateauScheduler scheduler(config.plateau_patience, config.lr_factor);
  SeededRng rng(config.seed);

  TrainResult result;
  double lr = config.lr;
  EpochRecord untrained{0, evaluate_mae(params, dataset, split.train_ids), evaluate_mae(params, dataset, val_ids), lr};
  result.curve.push_back(untrained);
  result.best_params = params;
  result.best_val_mae = untrained.val_mae;
  lr = scheduler.step(untrained.val_mae, lr);
  if (progress) progress(untrained);

  const std::size_t workers = std::max<std::size_t>(1, std::min(worker_count(), config.batch_size));
  std::vector<WorkerState> states(workers);
  for (auto& s : states) s.grads = params.zeros_like();
  auto total_grads = params.zeros_like();

  for (std::size_t epoch = 1; epoch <= config.max_epochs && lr >= config.min_lr; ++epoch) {
    adam.lr = lr;
    const auto order = random_permutation(rng, split.train_ids.size());
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      // Static contiguous chunks per worker, reduced in worker order, so the
      // summation order depends only on the worker count.
      const std::size_t used = std::min(workers, count);
      parallel_for(used, [&](std::size_t w) {
        auto& st = states[w];
        for (auto& g : st.grads) std::fill(g.begin(), g.end(), 0.0f);
        st.losses.clear();
        const std::size_t lo = begin + count * w / used;
        const std::size_t hi = begin + count * (w + 1) / used;
        for (std::size_t k = lo; k < hi; ++k) {
          const std::size_t id = split.train_ids[order[k]];
          const auto pred = model_forward<float>(params, dataset.diffraction.frame(id), st.cache);
          const auto loss = mae_loss<float>(pred.amplitude, pred.phase, dataset.amplitude.frame(id),
                                            dataset.phase.frame(id));
          st.losses.push_back(loss.loss);
          model_backward<float>(params, st.cache, loss.grad_amp, loss.grad_phase, st.grads);
        }
      });
      const float inv = 1.0f / static_cast<float>(count);
      for (std::size_t i = 0; i < total_grads.size(); ++i) {
        auto& tg = total_grads[i];
        std::fill(tg.begin(), tg.end(), 0.0f);
        for (std::size_t w = 0; w < used; ++w) {
          const auto& g = states[w].grads[i];
          for (std::size_t k = 0; k < tg.size(); ++k) tg[k] += g[k];
        }
        for (auto& v : tg) v *= inv;
      }
      for (std::size_t w = 0; w < used; ++w) {
        for (double l : states[w].losses) loss_sum += l;
      }
      std::vector<std::span<float>> spans;
      for (auto& p : params.params) spans.emplace_back(p.values);
      adam_step<float>(spans, total_grads, adam);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), evaluate_mae(params, dataset, val_ids), lr};
    result.curve.push_back(rec);
    if (rec.val_mae < result.best_val_mae) {
      result.best_val_mae = rec.val_mae;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    lr = scheduler.step(rec.val_mae, lr);
    if (progress) progress(rec);
  }
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(p / 100.0 * static_cast<double>(values.size()));
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
  return values[idx];
}

PredictResult predict(const ModelParams<float>& params, const FrameStack& frames) {
  const std::size_t n = params.arch.input_size;
  if (frames.height != n || frames.width != n) throw ShapeError("predict: frame size does not match the model");
  PredictResult out;
  out.amplitude = FrameStack(frames.count, n, n);
  out.phase = FrameStack(frames.count, n, n);
  out.ms_per_frame.resize(frames.count);
  float peak = 0.0f;
  for (float v : frames.data) peak = std::max(peak, v);
  if (peak > 10.0f) {
    std::ostringstream msg;
    msg << "input frames look unnormalized (max " << peak << " >> 1); divide by the dataset diff_scale";
    out.warnings.push_back(msg.str());
  }
  ForwardCache<float> cache;
  for (std::size_t j = 0; j < frames.count; ++j) {
    const auto t0 = Clock::now();
    const auto pred = model_forward<float>(params, frames.frame(j), cache);
    out.ms_per_frame[j] = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    std::copy(pred.amplitude.begin(), pred.amplitude.end(), out.amplitude.frame(j).begin());
    std::copy(pred.phase.begin(), pred.phase.end(), out.phase.frame(j).begin());
  }
  if (frames.count > 0) {
    double sum = 0.0;
    for (double t : out.ms_per_frame) sum += t;
    out.mean_ms = sum / static_cast<double>(frames.count);
    out.p95_ms = percentile(out.ms_per_frame, 95.0);
  }
  return out;
}

void write_loss_curve_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "epoch,train_mae,val_mae,lr\n" << std::setprecision(10);
  for (const auto& r : curve) out << r.epoch << ',' << r.train_mae << ',' << r.val_mae << ',' << r.lr << '\n';
}

}  // namespace ptychoforge::nn
