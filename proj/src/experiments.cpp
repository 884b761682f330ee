#include "ptychoforge/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <fmt/format.h>

#include "ptychoforge/errors.hpp"
#include "ptychoforge/pgm.hpp"

namespace ptychoforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

double max_modulus(const ComplexField2D& field) {
  double m = 0.0;
  for (const auto& z : field.values()) m = std::max(m, std::abs(z));
  return m;
}

FrameStack normalized_frames(const DiffractionStack& stack, double diff_scale) {
  const std::size_t n = stack.frame_size();
  FrameStack out(stack.size(), n, n);
  for (std::size_t j = 0; j < stack.size(); ++j) out.set(j, stack.frames[j], 1.0 / diff_scale);
  return out;
}

DiffractionStack select_with_grid(const DiffractionStack& stack, const std::vector<std::size_t>& ids,
                                  const ScanGrid& grid) {
  DiffractionStack out = stack.select(ids);
  out.grid = grid;
  return out;
}

void write_previews(const std::filesystem::path& dir, const std::string& stem, const ComplexField2D& rec,
                    const ComplexField2D& truth) {
  std::filesystem::create_directories(dir);
  const double amp_hi = 1.1 * max_modulus(truth);
  RealImage2D truth_phase = phase(truth);
  double lo = 0.0;
  double hi = 0.0;
  for (double v : truth_phase.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double pad = 0.25 * std::max(hi - lo, 0.1);
  export_pgm(modulus(rec), dir / (stem + "_amp.pgm"), 0.0, amp_hi);
  export_pgm(phase(rec), dir / (stem + "_phase.pgm"), lo - pad, hi + pad);
}

}  // namespace

std::size_t SimulationConfig::height() const {
  if (object_height != 0) return object_height;
  return 2 * margin_px + (scan_rows == 0 ? 0 : (scan_rows - 1) * step_px) + geometry.frame_size;
}

std::size_t SimulationConfig::width() const {
  if (object_width != 0) return object_width;
  return 2 * margin_px + (scan_cols == 0 ? 0 : (scan_cols - 1) * step_px) + geometry.frame_size;
}

void ExperimentConfig::validate() const {
  if (sim.scan_rows == 0 || sim.scan_cols == 0) throw ConfigError("/simulation/scan", "scan needs at least one row and column");
  if (sim.step_px == 0) throw ConfigError("/simulation/scan/step_px", "step must be >= 1");
  if (!is_power_of_two(sim.geometry.frame_size) || sim.geometry.frame_size < 8) {
    throw ConfigError("/simulation/geometry/frame_size", "frame size must be a power of two >= 8");
  }
  if (sim.photon_budget && !(*sim.photon_budget > 0.0)) {
    throw ConfigError("/simulation/noise/photon_budget", "photon budget must be positive");
  }
  const auto grid = raster_positions(sim.scan_rows, sim.scan_cols, sim.step_px, sim.margin_px);
  if (grid.required_height(sim.geometry.frame_size) > sim.height() ||
      grid.required_width(sim.geometry.frame_size) > sim.width()) {
    throw ConfigError("/simulation/object", "scan windows do not fit inside the object");
  }
  try {
    epie.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError("/epie", e.what());
  }
  try {
    train.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError("/train", e.what());
  }
  try {
    arch.validate();
  } catch (const Error& e) {
    throw ConfigError("/model", e.what());
  }
  if (arch.input_size != sim.geometry.frame_size) {
    throw ConfigError("/model/input_size", "model input size must equal the frame size");
  }
  if (!(init_noise >= 0.0)) throw ConfigError("/epie/init_noise", "init_noise must be nonnegative");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("/dataset/train_fraction", "train_fraction must lie in (0, 1)");
  }
  for (std::size_t i = 0; i < sparsity_factors.size(); ++i) {
    if (sparsity_factors[i] == 0) throw ConfigError("/sweep/sparsity_factors/" + std::to_string(i), "factors must be >= 1");
  }
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
    throw ConfigError("/stitch/mask_threshold", "mask_threshold must lie in (0, 1)");
  }
  if (bench_batch == 0) throw ConfigError("/bench/batch", "batch must be >= 1");
  if (bench_repeats == 0) throw ConfigError("/bench/repeats", "repeats must be >= 1");
}

std::size_t resolve_train_size(const std::string& spec, std::size_t full) {
  std::size_t size = 0;
  try {
    if (spec == "full") {
      size = full;
    } else if (spec.rfind("full/", 0) == 0) {
      const auto div = std::stoul(spec.substr(5));
      if (div == 0) throw ConfigError("/sweep/train_sizes", "division by zero in '" + spec + "'");
      size = full / div;
    } else {
      std::size_t pos = 0;
      size = std::stoul(spec, &pos);
      if (pos != spec.size()) throw std::invalid_argument(spec);
    }
  } catch (const std::logic_error&) {
    throw ConfigError("/sweep/train_sizes", "unrecognized training size '" + spec + "'");
  }
  if (size == 0) throw ConfigError("/sweep/train_sizes", "training size '" + spec + "' resolves to 0");
  if (size > full) {
    throw ConfigError("/sweep/train_sizes", fmt::format("training size {} exceeds the {} available training triplets", size, full));
  }
  return size;
}

Scene simulate_scene(const SimulationConfig& config) {
  Scene scene;
  SeededRng object_rng(config.object_seed);
  scene.object = make_test_object(config.height(), config.width(), object_rng, config.object);
  scene.probe = make_probe(config.geometry.frame_size, config.probe_fwhm_px);
  scene.grid = raster_positions(config.scan_rows, config.scan_cols, config.step_px, config.margin_px);
  scene.grid.check_fits(config.height(), config.width(), config.geometry.frame_size);
  scene.stack = diffract(scene.object, scene.probe, scene.grid);
  if (config.photon_budget) {
    SeededRng noise_rng(config.noise_seed);
    scene.stack = add_poisson(scene.stack, *config.photon_budget, noise_rng);
  }
  return scene;
}

RegionSplit split_regions(const ScanGrid& grid, double train_fraction) {
  if (grid.rows < 2) throw ArgumentError("split_regions: need at least two scan rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ArgumentError("split_regions: fraction must lie in (0, 1)");
  RegionSplit split;
  const auto rows = static_cast<double>(grid.rows);
  split.train_rows = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(rows * train_fraction)), 1,
                                             grid.rows - 1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    (i / grid.cols < split.train_rows ? split.train_ids : split.test_ids).push_back(i);
  }
  split.train_grid = grid_rows(grid, 0, split.train_rows);
  split.test_grid = grid_rows(grid, split.train_rows, grid.rows);
  return split;
}

ComplexField2D initial_object_guess(std::size_t height, std::size_t width) {
  return ComplexField2D(height, width, Complex(1.0, 0.0));
}

EpieRun run_epie_evaluation(const Scene& scene, const DiffractionStack& stack, const ScanGrid& grid,
                            const ExperimentConfig& config, const EpieProgress& progress) {
  if (stack.size() == 0) throw ArgumentError("run_epie_evaluation: empty stack");
  const auto& truth = scene.object.transmission;
  SeededRng rng(config.epie_init_seed);
  const auto init_object = initial_object_guess(truth.height(), truth.width());
  const auto init_probe = perturb_probe(scene.probe.field, config.init_noise, rng);

  EpieRun run;
  const auto t0 = Clock::now();
  run.state = reconstruct(stack, grid, config.epie, init_object, init_probe, progress);
  run.seconds = seconds_since(t0);
  run.ms_per_frame = 1000.0 * run.seconds / static_cast<double>(stack.size());
  run.mask = illuminated_mask(scene.probe.field, grid, truth.height(), truth.width(), config.mask_threshold);
  const Complex c = alignment_scalar(run.state.object_est, truth, run.mask);
  run.aligned = run.state.object_est;
  for (auto& z : run.aligned.storage()) z *= c;
  run.metrics = evaluate_reconstruction(run.state.object_est, truth, run.mask, max_modulus(truth), true);
  return run;
}

Labels make_labels(const Scene& scene, const RegionSplit& regions, const ExperimentConfig& config, const LogFn& log) {
  Labels labels;
  if (config.label_source == LabelSource::Truth) {
    labels.amplitude = modulus(scene.object.transmission);
    labels.phase = phase(scene.object.transmission);
    return labels;
  }
  const auto train_stack = select_with_grid(scene.stack, regions.train_ids, regions.train_grid);
  emit(log, fmt::format("labels: ePIE on {} training positions, {} iterations", train_stack.size(),
                        config.epie.iterations));
  labels.epie = run_epie_evaluation(scene, train_stack, regions.train_grid, config);
  emit(log, fmt::format("labels: nmse {:.3e}, final data error {:.3e}, {:.1f} s", labels.epie->metrics.nmse_complex,
                        labels.epie->state.error_history.back(), labels.epie->seconds));
  labels.amplitude = modulus(labels.epie->aligned);
  labels.phase = phase(labels.epie->aligned);
  return labels;
}

TrainingData build_training_data(const Scene& scene, const RegionSplit& regions, const Labels& labels,
                                 const ExperimentConfig& config) {
  const auto train_stack = select_with_grid(scene.stack, regions.train_ids, regions.train_grid);
  TrainingData data;
  data.split = split_90_10(train_stack.size(), config.split_seed);
  const NormMeta norm = compute_norm(train_stack, labels.amplitude, regions.train_grid, data.split.train_ids);
  data.dataset = build_triplets(train_stack, labels.amplitude, labels.phase, regions.train_grid, norm);
  return data;
}

NnRun run_nn_evaluation(const nn::ModelParams<float>& params, const Scene& scene, const DiffractionStack& stack,
                        const ScanGrid& grid, const NormMeta& norm, const ExperimentConfig& config) {
  if (stack.size() == 0) throw ArgumentError("run_nn_evaluation: empty stack");
  const auto& truth = scene.object.transmission;
  NnRun run;
  run.prediction = nn::predict(params, normalized_frames(stack, norm.diff_scale));
  RealImage2D weights;
  if (config.probe_weighted_stitch) {
    weights = RealImage2D(scene.probe.field.height(), scene.probe.field.width());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = std::norm(scene.probe.field[i]);
  }
  const RealImage2D* w = config.probe_weighted_stitch ? &weights : nullptr;
  run.amplitude = stitch_average(run.prediction.amplitude, grid, truth.height(), truth.width(), w);
  run.phase = stitch_average(run.prediction.phase, grid, truth.height(), truth.width(), w);
  ComplexField2D rec(truth.height(), truth.width());
  for (std::size_t i = 0; i < rec.size(); ++i) {
    rec[i] = std::polar(run.amplitude.final[i] * norm.amp_scale, run.phase.final[i]);
  }
  run.mask = illuminated_mask(scene.probe.field, grid, truth.height(), truth.width(), config.mask_threshold);
  run.metrics = evaluate_reconstruction(rec, truth, run.mask, max_modulus(truth), false);
  return run;
}

namespace {

ComplexField2D nn_canvas(const NnRun& run, double amp_scale) {
  ComplexField2D rec(run.amplitude.final.height(), run.amplitude.final.width());
  for (std::size_t i = 0; i < rec.size(); ++i) rec[i] = std::polar(run.amplitude.final[i] * amp_scale, run.phase.final[i]);
  return rec;
}

}  // namespace

RunReport run_sparsity_sweep(const ExperimentConfig& config, const Scene& scene, const RegionSplit& regions,
                             const nn::ModelParams<float>& model, const NormMeta& norm, const ArtifactSink& sink,
                             const LogFn& log) {
  RunReport report;
  const auto test_stack = select_with_grid(scene.stack, regions.test_ids, regions.test_grid);
  for (const std::size_t factor : config.sparsity_factors) {
    if (factor == 0) throw ConfigError("/sweep/sparsity_factors", "factors must be >= 1");
    const auto ids = subsample_indices(regions.test_grid, factor);
    const auto grid = subsample_grid(regions.test_grid, factor);
    const auto sparse = select_with_grid(test_stack, ids, grid);

    const auto epie = run_epie_evaluation(scene, sparse, grid, config);
    const auto nn_run = run_nn_evaluation(model, scene, sparse, grid, norm, config);
    emit(log, fmt::format("sparsity f={} ({} frames): epie amp_mae {:.4f} nmse {:.3e} | nn amp_mae {:.4f} nmse {:.3e}",
                          factor, sparse.size(), epie.metrics.amp_mae, epie.metrics.nmse_complex,
                          nn_run.metrics.amp_mae, nn_run.metrics.nmse_complex));

    const double epie_ms = sink.record_timing ? epie.ms_per_frame : 0.0;
    const double nn_ms = sink.record_timing ? nn_run.prediction.mean_ms : 0.0;
    report.rows.push_back({fmt::format("sparsity_epie_f{}", factor), factor, 0, epie.metrics, epie_ms});
    report.rows.push_back({fmt::format("sparsity_nn_f{}", factor), factor, regions.train_ids.size(), nn_run.metrics, nn_ms});
    if (sink.dir) {
      write_previews(*sink.dir / "previews", fmt::format("sparsity_epie_f{}", factor), epie.aligned,
                     scene.object.transmission);
      write_previews(*sink.dir / "previews", fmt::format("sparsity_nn_f{}", factor), nn_canvas(nn_run, norm.amp_scale),
                     scene.object.transmission);
    }
  }
  return report;
}

RunReport run_training_size_sweep(const ExperimentConfig& config, const Scene& scene, const RegionSplit& regions,
                                  const TrainingData& data, const ArtifactSink& sink, const LogFn& log) {
  const std::size_t full = data.split.train_ids.size();
  std::vector<std::pair<std::string, std::size_t>> cells;
  for (const auto& spec : config.train_sizes) cells.emplace_back(spec, resolve_train_size(spec, full));

  RunReport report;
  const auto test_stack = select_with_grid(scene.stack, regions.test_ids, regions.test_grid);
  for (const auto& [spec, size] : cells) {
    SplitIndex subset = data.split;
    subset.train_ids.resize(size);
    emit(log, fmt::format("size {} ({} samples): training", spec, size));
    auto result = nn::train(data.dataset, subset, config.train, nn::init_params<float>(config.arch, config.init_seed),
                            [&](const nn::EpochRecord& r) {
                              emit(log, fmt::format("  epoch {:3d} train {:.5f} val {:.5f} lr {:.2e}", r.epoch,
                                                    r.train_mae, r.val_mae, r.lr));
                            });
    const auto nn_run = run_nn_evaluation(result.best_params, scene, test_stack, regions.test_grid, data.dataset.norm,
                                          config);
    emit(log, fmt::format("size {}: best val {:.5f} (epoch {}), test amp_mae {:.4f} nmse {:.3e}, {:.1f} s", spec,
                          result.best_val_mae, result.best_epoch, nn_run.metrics.amp_mae, nn_run.metrics.nmse_complex,
                          result.seconds));

    SizeCell cell{spec, size, result.best_val_mae, result.curve.front().val_mae, result.seconds,
                  result.curve.size() - 1, result.curve};
    if (!sink.record_timing) cell.train_seconds = 0.0;
    report.rows.push_back({fmt::format("size_nn_n{}", size), 1, size, nn_run.metrics,
                           sink.record_timing ? nn_run.prediction.mean_ms : 0.0});
    if (sink.dir) {
      std::filesystem::create_directories(*sink.dir / "curves");
      nn::write_loss_curve_csv(*sink.dir / "curves" / fmt::format("loss_n{}.csv", size), result.curve);
      write_previews(*sink.dir / "previews", fmt::format("size_nn_n{}", size),
                     nn_canvas(nn_run, data.dataset.norm.amp_scale), scene.object.transmission);
    }
    report.sizes.push_back(std::move(cell));
  }
  return report;
}

TimingReport benchmark_speed(const ExperimentConfig& config, const nn::ModelParams<float>& model, const Scene& scene,
                             const NormMeta& norm, const LogFn& log) {
  const std::size_t frames = scene.stack.size();
  if (frames == 0) throw ArgumentError("benchmark_speed: empty stack");
  if (frames < 2) throw ArgumentError("benchmark_speed: need at least two frames (the first batch is discarded)");
  const std::size_t batch = std::min(config.bench_batch, frames / 2);

  TimingReport report;
  report.frames = frames;
  const FrameStack all = normalized_frames(scene.stack, norm.diff_scale);
  std::vector<double> kept;
  for (std::size_t rep = 0; rep < config.bench_repeats; ++rep) {
    std::vector<double> times;
    for (std::size_t begin = 0; begin < frames; begin += batch) {
      std::vector<std::size_t> ids;
      for (std::size_t j = begin; j < std::min(frames, begin + batch); ++j) ids.push_back(j);
      const auto pred = nn::predict(model, all.select(ids));
      if (begin == 0) continue;  // warm-up batch
      times.insert(times.end(), pred.ms_per_frame.begin(), pred.ms_per_frame.end());
    }
    double sum = 0.0;
    for (double t : times) sum += t;
    report.nn_repeat_means.push_back(sum / static_cast<double>(times.size()));
    kept.insert(kept.end(), times.begin(), times.end());
    emit(log, fmt::format("bench: nn repeat {} mean {:.3f} ms/frame", rep, report.nn_repeat_means.back()));
  }
  double sum = 0.0;
  for (double m : report.nn_repeat_means) sum += m;
  report.nn_mean_ms = sum / static_cast<double>(report.nn_repeat_means.size());
  report.nn_p95_ms = nn::percentile(kept, 95.0);

  const auto epie = run_epie_evaluation(scene, scene.stack, scene.grid, config);
  report.epie_total_s = epie.seconds;
  report.epie_ms_per_frame = epie.ms_per_frame;
  report.ratio = report.epie_ms_per_frame / report.nn_mean_ms;
  emit(log, fmt::format("bench: epie {} iterations {:.1f} s ({:.3f} ms/frame), ratio {:.1f}", config.epie.iterations,
                        report.epie_total_s, report.epie_ms_per_frame, report.ratio));
  emit(log, fmt::format("bench: literature (V100, not reproduced): nn ~{} ms/frame, ~{}x faster than iterative",
                        kLiteratureNnMs, kLiteratureSpeedup));
  return report;
}

void write_timing_csv(const std::filesystem::path& path, const TimingReport& report, bool record_timing) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const auto t = [&](double v) { return record_timing ? v : 0.0; };
  out << "method,ms_per_frame,total_s\n" << std::setprecision(10);
  out << "nn," << t(report.nn_mean_ms) << ',' << t(report.nn_mean_ms * static_cast<double>(report.frames) / 1000.0)
      << '\n';
  out << "epie," << t(report.epie_ms_per_frame) << ',' << t(report.epie_total_s) << '\n';
  out << "literature_nn_v100_not_reproduced," << kLiteratureNnMs << ",\n";
  out << "literature_iterative_implied_300x_not_reproduced," << kLiteratureNnMs * kLiteratureSpeedup << ",\n";
}

}  // namespace ptychoforge
