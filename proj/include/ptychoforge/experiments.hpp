#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ptychoforge/dataset.hpp"
#include "ptychoforge/epie.hpp"
#include "ptychoforge/nn/model.hpp"
#include "ptychoforge/nn/trainer.hpp"
#include "ptychoforge/scan_geometry.hpp"
#include "ptychoforge/simulator.hpp"
#include "ptychoforge/stitch_metrics.hpp"

namespace ptychoforge {

struct SimulationConfig {
  Geometry geometry;
  ObjectOptions object;
  double probe_fwhm_px = 6.0;
  std::size_t scan_rows = 32;
  std::size_t scan_cols = 32;
  std::size_t step_px = 3;
  std::size_t margin_px = 49;
  // 0: smallest size holding the scan plus the margin on every side.
  std::size_t object_height = 256;
  std::size_t object_width = 256;
  std::optional<double> photon_budget;  // nullopt: noiseless
  std::uint64_t object_seed = 0;
  std::uint64_t noise_seed = 0;

  std::size_t height() const;
  std::size_t width() const;
};

enum class LabelSource { Epie, Truth };

struct ExperimentConfig {
  std::uint64_t seed = 0;  // master seed; component seeds default to values derived from it
  SimulationConfig sim;
  EpieConfig epie;
  double init_noise = 0.1;  // relative noise of the initial probe guess
  std::uint64_t epie_init_seed = 0;
  double train_fraction = 0.62;  // leading share of scan rows used for training
  LabelSource label_source = LabelSource::Epie;
  std::uint64_t split_seed = 0;
  nn::Architecture arch;
  std::uint64_t init_seed = 0;
  nn::TrainConfig train;
  std::vector<std::size_t> sparsity_factors{1, 2, 3, 4, 5};
  std::vector<std::string> train_sizes{"full", "full/2", "full/4", "full/8", "800"};
  double mask_threshold = 0.05;
  bool probe_weighted_stitch = false;
  std::size_t bench_batch = 64;
  std::size_t bench_repeats = 3;
  std::filesystem::path output_dir = "runs";

  void validate() const;
};

/// "full", "full/k" or a plain count, resolved against `full`.
/// Throws ConfigError if the result is 0 or exceeds `full`.
std::size_t resolve_train_size(const std::string& spec, std::size_t full);

using LogFn = std::function<void(const std::string&)>;

struct Scene {
  ObjectSample object;
  Probe probe;
  ScanGrid grid;
  DiffractionStack stack;
};

Scene simulate_scene(const SimulationConfig& config);

/// Contiguous row split of the scan: the first round(rows · fraction) rows
/// train, the rest are held out.
struct RegionSplit {
  std::size_t train_rows = 0;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
  ScanGrid train_grid;
  ScanGrid test_grid;
};

RegionSplit split_regions(const ScanGrid& grid, double train_fraction);

/// Uniform unit transmission, 1 + 0i everywhere.
ComplexField2D initial_object_guess(std::size_t height, std::size_t width);

struct EpieRun {
  EpieState state;
  ComplexField2D aligned;  // object estimate times the alignment scalar
  Mask2D mask;
  MetricsRecord metrics;
  double seconds = 0.0;
  double ms_per_frame = 0.0;
};

/// ePIE from the seeded initial guesses, evaluated against the simulator
/// object on the illuminated mask of `grid`.
EpieRun run_epie_evaluation(const Scene& scene, const DiffractionStack& stack, const ScanGrid& grid,
                            const ExperimentConfig& config, const EpieProgress& progress = {});

struct Labels {
  RealImage2D amplitude;
  RealImage2D phase;
  std::optional<EpieRun> epie;
};

/// Amplitude and phase images for the training region: the aligned ePIE
/// reconstruction of the training rows, or the simulator object.
Labels make_labels(const Scene& scene, const RegionSplit& regions, const ExperimentConfig& config,
                   const LogFn& log = {});

struct TrainingData {
  TripletDataset dataset;
  SplitIndex split;
};

/// Triplets for the training rows, normalized with scales taken from the
/// training split only.
TrainingData build_training_data(const Scene& scene, const RegionSplit& regions, const Labels& labels,
                                 const ExperimentConfig& config);

struct NnRun {
  nn::PredictResult prediction;
  StitchCanvas amplitude;
  StitchCanvas phase;
  Mask2D mask;
  MetricsRecord metrics;
};

/// Normalizes the frames, predicts, stitches and evaluates against the
/// simulator object on the illuminated mask of `grid`.
NnRun run_nn_evaluation(const nn::ModelParams<float>& params, const Scene& scene, const DiffractionStack& stack,
                        const ScanGrid& grid, const NormMeta& norm, const ExperimentConfig& config);

struct SizeCell {
  std::string spec;
  std::size_t train_size = 0;
  double val_mae = 0.0;
  double epoch0_val_mae = 0.0;
  double train_seconds = 0.0;
  std::size_t epochs = 0;
  std::vector<nn::EpochRecord> curve;
};

struct RunReport {
  std::vector<MetricsRow> rows;
  std::vector<SizeCell> sizes;
};

/// Writes PGM previews, curves and per-cell files when set.
struct ArtifactSink {
  std::optional<std::filesystem::path> dir;
  bool record_timing = true;  // false: timing fields written as 0
};

/// Subsamples the test region by each factor and compares ePIE and the
/// (fixed) network on the same sparse frames.
RunReport run_sparsity_sweep(const ExperimentConfig& config, const Scene& scene, const RegionSplit& regions,
                             const nn::ModelParams<float>& model, const NormMeta& norm,
                             const ArtifactSink& sink = {}, const LogFn& log = {});

/// Fresh seeded network per training size; every size is validated on the
/// same validation ids and evaluated on the full test region.
RunReport run_training_size_sweep(const ExperimentConfig& config, const Scene& scene, const RegionSplit& regions,
                                  const TrainingData& data, const ArtifactSink& sink = {}, const LogFn& log = {});

struct TimingReport {
  std::size_t frames = 0;
  double nn_mean_ms = 0.0;  // mean over repeats of the per-repeat means
  double nn_p95_ms = 0.0;
  std::vector<double> nn_repeat_means;
  double epie_total_s = 0.0;
  double epie_ms_per_frame = 0.0;
  double ratio = 0.0;  // epie_ms_per_frame / nn_mean_ms
};

/// NN inference over the stack in batches of bench_batch frames (first
/// batch of every repeat discarded as warm-up) and one full ePIE run.
TimingReport benchmark_speed(const ExperimentConfig& config, const nn::ModelParams<float>& model,
                             const Scene& scene, const NormMeta& norm, const LogFn& log = {});

inline constexpr double kLiteratureNnMs = 1.0;
inline constexpr double kLiteratureSpeedup = 300.0;

/// `method,ms_per_frame,total_s` with the measured rows followed by the
/// literature values, labeled as not reproduced.
void write_timing_csv(const std::filesystem::path& path, const TimingReport& report, bool record_timing);

}  // namespace ptychoforge
