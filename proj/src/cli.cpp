#include "ptychoforge/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "ptychoforge/config.hpp"
#include "ptychoforge/dataset.hpp"
#include "ptychoforge/errors.hpp"
#include "ptychoforge/experiments.hpp"
#include "ptychoforge/nn/model.hpp"
#include "ptychoforge/nn/trainer.hpp"
#include "ptychoforge/pgm.hpp"
#include "ptychoforge/stitch_metrics.hpp"
#include "ptychoforge/tensor_io.hpp"

#ifndef PTYCHOFORGE_VERSION
#define PTYCHOFORGE_VERSION "0.0.0"
#endif

namespace ptychoforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Artifact names inside the output directory.
constexpr const char* kObject = "object.ptyt";
constexpr const char* kProbe = "probe.ptyt";
constexpr const char* kStack = "stack.ptyt";
constexpr const char* kGrid = "grid.csv";
constexpr const char* kEpieObject = "epie_object.ptyt";
constexpr const char* kEpieProbe = "epie_probe.ptyt";
constexpr const char* kEpieAligned = "epie_aligned.ptyt";
constexpr const char* kEpieError = "epie_error.csv";
constexpr const char* kEpieMetrics = "epie_metrics.csv";
constexpr const char* kDataset = "dataset.ptyb";
constexpr const char* kSplit = "split.json";
constexpr const char* kNorm = "norm.json";
constexpr const char* kModel = "model.ptyb";
constexpr const char* kModelDesc = "model.json";
constexpr const char* kLossCurve = "loss_curve.csv";
constexpr const char* kPredictions = "predictions.ptyb";
constexpr const char* kPredictGrid = "predict_grid.csv";
constexpr const char* kSweepMetrics = "sweep_metrics.csv";
constexpr const char* kSweepSizes = "sweep_sizes.csv";
constexpr const char* kTiming = "timing.csv";

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir;
  std::string region;
  std::optional<std::size_t> frame;
  std::string factors;
  std::string sizes;
  std::string kind = "sparsity";
};

class MetricFailure : public Error {
 public:
  using Error::Error;
};

std::string sha256_hex(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed for " + path.string());
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

// Shared state of one stage invocation.
class Stage {
 public:
  Stage(std::string name, const Flags& flags, std::ostream& out)
      : name_(std::move(name)), flags_(flags), out_(out) {
    set_deterministic(flags.deterministic);
    config_ = load_config(flags.config, flags.seed);
    dir_ = flags.out_dir.empty() ? config_.output_dir : fs::path(flags.out_dir);
    fs::create_directories(dir_);
  }

  const ExperimentConfig& config() const { return config_; }
  ExperimentConfig& config() { return config_; }
  const fs::path& dir() const { return dir_; }
  std::ostream& out() { return out_; }
  bool timing() const { return !flags_.deterministic; }

  /// Path of an existing input; records its hash for the manifest.
  fs::path input(const std::string& name) {
    const fs::path p = dir_ / name;
    if (!fs::exists(p)) throw MissingInputError(p.string());
    inputs_.push_back(name);
    return p;
  }
  bool has(const std::string& name) const { return fs::exists(dir_ / name); }

  fs::path output(const std::string& name) {
    const fs::path p = dir_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    outputs_.push_back(name);
    return p;
  }

  void flag(const std::string& key, json value) { flags_json_[key] = std::move(value); }

  void write_manifest() {
    json inputs = json::array();
    for (const auto& n : inputs_) inputs.push_back({{"file", n}, {"sha256", sha256_hex(dir_ / n)}});
    json outputs = json::array();
    for (const auto& n : outputs_) {
      if (fs::exists(dir_ / n)) outputs.push_back({{"file", n}, {"sha256", sha256_hex(dir_ / n)}});
    }
    const auto& c = config_;
    json manifest{{"stage", name_},
                  {"version", PTYCHOFORGE_VERSION},
                  {"deterministic", flags_.deterministic},
                  {"threads", worker_count()},
                  {"flags", flags_json_.is_null() ? json::object() : flags_json_},
                  {"seeds",
                   {{"master", c.seed},
                    {"object", c.sim.object_seed},
                    {"noise", c.sim.noise_seed},
                    {"epie_shuffle", c.epie.shuffle_seed},
                    {"epie_init", c.epie_init_seed},
                    {"split", c.split_seed},
                    {"model_init", c.init_seed},
                    {"train_shuffle", c.train.seed}}},
                  {"config", config_to_json(c)},
                  {"inputs", inputs},
                  {"outputs", outputs}};
    const fs::path p = dir_ / fmt::format("manifest_{}.json", name_);
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + p.string() + " for writing");
    f << manifest.dump(2) << '\n';
  }

 private:
  std::string name_;
  Flags flags_;
  std::ostream& out_;
  ExperimentConfig config_;
  fs::path dir_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  json flags_json_;
};

void check_finite(const MetricsRecord& m, const std::string& what) {
  if (!std::isfinite(m.amp_mae) || !std::isfinite(m.phase_mae_wrapped) || !std::isfinite(m.nmse_complex)) {
    throw MetricFailure(what + ": non-finite metric");
  }
}

void write_fresh_metrics(const fs::path& path, const std::vector<MetricsRow>& rows) {
  fs::remove(path);
  append_metrics_csv(path, rows);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": malformed JSON", e.byte);
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << doc.dump(2) << '\n';
}

Scene load_scene(Stage& st, bool with_object = true) {
  Scene scene;
  if (with_object) {
    scene.object.transmission = complex_field_from(load_tensor(st.input(kObject)));
    scene.object.a_min = st.config().sim.object.a_min;
    scene.object.phi_max = st.config().sim.object.phi_max;
  }
  scene.probe.field = complex_field_from(load_tensor(st.input(kProbe)));
  scene.probe.fwhm_px = st.config().sim.probe_fwhm_px;
  scene.grid = read_grid_csv(st.input(kGrid));
  scene.stack.frames = image_stack_from(load_tensor(st.input(kStack)));
  scene.stack.grid = scene.grid;
  scene.stack.photon_budget = st.config().sim.photon_budget;
  if (scene.stack.size() != scene.grid.size()) {
    throw FormatError(fmt::format("{} holds {} frames but {} lists {} positions", kStack, scene.stack.size(), kGrid,
                                  scene.grid.size()),
                      0);
  }
  return scene;
}

struct Region {
  std::vector<std::size_t> ids;
  ScanGrid grid;
};

Region select_region(const ScanGrid& grid, const std::string& region, double train_fraction) {
  if (region == "all") {
    Region r{{}, grid};
    for (std::size_t i = 0; i < grid.size(); ++i) r.ids.push_back(i);
    return r;
  }
  const auto split = split_regions(grid, train_fraction);
  if (region == "train") return {split.train_ids, split.train_grid};
  if (region == "test") return {split.test_ids, split.test_grid};
  throw ArgumentError("--region must be all, train or test (got '" + region + "')");
}

DiffractionStack sub_stack(const DiffractionStack& stack, const Region& r) {
  auto s = stack.select(r.ids);
  s.grid = r.grid;
  return s;
}

NormMeta read_norm(Stage& st) {
  const auto doc = read_json(st.input(kNorm));
  try {
    return {doc.at("diff_scale").get<double>(), doc.at("amp_scale").get<double>()};
  } catch (const json::exception&) {
    throw FormatError(std::string(kNorm) + ": expected diff_scale and amp_scale", 0);
  }
}

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoul(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ArgumentError(flag + ": '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) throw ArgumentError(flag + ": empty list");
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
  return out;
}

double max_modulus(const ComplexField2D& f) {
  double m = 0.0;
  for (const auto& z : f.values()) m = std::max(m, std::abs(z));
  return m;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Flags& flags, std::ostream& out) {
  Stage st("simulate", flags, out);
  const auto& c = st.config();
  const Scene scene = simulate_scene(c.sim);
  save_tensor(st.output(kObject), to_tensor(scene.object.transmission));
  save_tensor(st.output(kProbe), to_tensor(scene.probe.field));
  save_tensor(st.output(kStack), to_tensor(scene.stack.frames, DType::F64));
  write_grid_csv(scene.grid, st.output(kGrid));
  st.write_manifest();
  out << fmt::format("simulate: J={} frames of {}x{}, object {}x{}, grid {}x{} step {} px, photon budget: {}\n",
                     scene.stack.size(), scene.stack.frame_size(), scene.stack.frame_size(),
                     scene.object.transmission.height(), scene.object.transmission.width(), scene.grid.rows,
                     scene.grid.cols, scene.grid.step_px,
                     c.sim.photon_budget ? fmt::format("{:g}", *c.sim.photon_budget) : std::string("noiseless"));
  out << fmt::format("simulate: wrote {}, {}, {}, {} to {}\n", kObject, kProbe, kStack, kGrid, st.dir().string());
  return kExitOk;
}

int cmd_epie(const Flags& flags, std::ostream& out) {
  Stage st("epie", flags, out);
  const std::string region_name = flags.region.empty() ? "all" : flags.region;
  st.flag("region", region_name);
  const Scene scene = load_scene(st);
  const auto region = select_region(scene.grid, region_name, st.config().train_fraction);
  const auto stack = sub_stack(scene.stack, region);
  out << fmt::format("epie: {} positions ({} region), {} iterations\n", stack.size(), region_name,
                     st.config().epie.iterations);
  const auto run = run_epie_evaluation(scene, stack, region.grid, st.config(), [&](std::size_t it, double e) {
    if ((it + 1) % 50 == 0 || it == 0) out << fmt::format("  iteration {:4d}  data error {:.3e}\n", it + 1, e);
  });
  check_finite(run.metrics, "epie");
  save_tensor(st.output(kEpieObject), to_tensor(run.state.object_est));
  save_tensor(st.output(kEpieProbe), to_tensor(run.state.probe_est));
  save_tensor(st.output(kEpieAligned), to_tensor(run.aligned));
  {
    std::ofstream f(st.output(kEpieError), std::ios::binary | std::ios::trunc);
    f << "iteration,error\n" << std::setprecision(17);
    for (std::size_t i = 0; i < run.state.error_history.size(); ++i) f << i << ',' << run.state.error_history[i] << '\n';
  }
  write_fresh_metrics(st.output(kEpieMetrics),
                      {{"epie_" + region_name, 1, 0, run.metrics, st.timing() ? run.ms_per_frame : 0.0}});
  st.write_manifest();
  out << fmt::format("epie: aligned nmse {:.3e}, amp_mae {:.4f}, phase_mae {:.4f} rad on {} px; {:.2f} s ({:.3f} ms/frame)\n",
                     run.metrics.nmse_complex, run.metrics.amp_mae, run.metrics.phase_mae_wrapped,
                     run.metrics.mask_pixels, run.seconds, run.ms_per_frame);
  return kExitOk;
}

int cmd_dataset(const Flags& flags, std::ostream& out) {
  Stage st("dataset", flags, out);
  const auto& c = st.config();
  const Scene scene = load_scene(st);
  const auto regions = split_regions(scene.grid, c.train_fraction);
  Labels labels;
  if (c.label_source == LabelSource::Epie) {
    const auto manifest = read_json(st.input("manifest_epie.json"));
    const auto region = manifest.at("flags").value("region", std::string("all"));
    if (region != "train" && region != "all") {
      throw ArgumentError("dataset: ePIE labels must cover the training rows; rerun epie with --region train");
    }
    const auto aligned = complex_field_from(load_tensor(st.input(kEpieAligned)));
    labels.amplitude = modulus(aligned);
    labels.phase = phase(aligned);
  } else {
    labels.amplitude = modulus(scene.object.transmission);
    labels.phase = phase(scene.object.transmission);
  }
  const auto data = build_training_data(scene, regions, labels, c);
  save_dataset(st.output(kDataset), data.dataset);
  write_json(st.output(kSplit), {{"seed", data.split.seed}, {"train_ids", data.split.train_ids}, {"val_ids", data.split.val_ids}});
  write_json(st.output(kNorm), {{"diff_scale", data.dataset.norm.diff_scale}, {"amp_scale", data.dataset.norm.amp_scale}});
  st.write_manifest();
  out << fmt::format("dataset: {} triplets from {} training rows ({} train / {} val), labels from {}, diff_scale {:.6g}, amp_scale {:.6g}\n",
                     data.dataset.size(), regions.train_rows, data.split.train_ids.size(), data.split.val_ids.size(),
                     c.label_source == LabelSource::Epie ? "epie" : "truth", data.dataset.norm.diff_scale,
                     data.dataset.norm.amp_scale);
  return kExitOk;
}

SplitIndex read_split(Stage& st) {
  const auto doc = read_json(st.input(kSplit));
  try {
    return {doc.at("train_ids").get<std::vector<std::size_t>>(), doc.at("val_ids").get<std::vector<std::size_t>>(),
            doc.at("seed").get<std::uint64_t>()};
  } catch (const json::exception&) {
    throw FormatError(std::string(kSplit) + ": expected seed, train_ids and val_ids", 0);
  }
}

nn::TrainResult train_and_save(Stage& st, const TripletDataset& dataset, const SplitIndex& split) {
  const auto& c = st.config();
  auto& out = st.out();
  out << fmt::format("train: {} train / {} val samples, batch {}, up to {} epochs\n", split.train_ids.size(),
                     split.val_ids.size(), c.train.batch_size, c.train.max_epochs);
  auto result = nn::train(dataset, split, c.train, nn::init_params<float>(c.arch, c.init_seed),
                          [&](const nn::EpochRecord& r) {
                            out << fmt::format("  epoch {:3d}  train {:.5f}  val {:.5f}  lr {:.2e}\n", r.epoch,
                                               r.train_mae, r.val_mae, r.lr);
                            out.flush();
                          });
  nn::save_model(st.output(kModel), st.output(kModelDesc), result.best_params);
  nn::write_loss_curve_csv(st.output(kLossCurve), result.curve);
  out << fmt::format("train: best val MAE {:.5f} at epoch {} (epoch 0: {:.5f}); {:.1f} s\n", result.best_val_mae,
                     result.best_epoch, result.curve.front().val_mae, result.seconds);
  return result;
}

int cmd_train(const Flags& flags, std::ostream& out) {
  Stage st("train", flags, out);
  const auto dataset = load_dataset(st.input(kDataset));
  const auto split = read_split(st);
  if (dataset.diffraction.height != st.config().arch.input_size) {
    throw ArgumentError("train: dataset frames do not match model.input_size");
  }
  train_and_save(st, dataset, split);
  st.write_manifest();
  return kExitOk;
}

int cmd_predict(const Flags& flags, std::ostream& out) {
  Stage st("predict", flags, out);
  const auto model = nn::load_model(st.input(kModel), st.input(kModelDesc));
  const auto norm = read_norm(st);
  const Scene scene = load_scene(st, false);
  Region region;
  if (flags.frame) {
    if (*flags.frame >= scene.grid.size()) throw ArgumentError(fmt::format("--frame {} out of range (J = {})", *flags.frame, scene.grid.size()));
    region.ids = {*flags.frame};
    region.grid.positions = {scene.grid.positions[*flags.frame]};
    region.grid.rows = region.grid.cols = 1;
    region.grid.step_px = scene.grid.step_px;
    st.flag("frame", *flags.frame);
  } else {
    const std::string name = flags.region.empty() ? "test" : flags.region;
    region = select_region(scene.grid, name, st.config().train_fraction);
    st.flag("region", name);
  }
  const auto stack = sub_stack(scene.stack, region);
  const std::size_t n = stack.frame_size();
  FrameStack frames(stack.size(), n, n);
  for (std::size_t j = 0; j < stack.size(); ++j) frames.set(j, stack.frames[j], 1.0 / norm.diff_scale);
  const auto pred = nn::predict(model, frames);
  for (const auto& w : pred.warnings) out << "warning: " << w << '\n';

  std::vector<double> ids(region.ids.begin(), region.ids.end());
  save_bundle(st.output(kPredictions),
              {{"amplitude", Tensor::from_f32({pred.amplitude.count, n, n}, pred.amplitude.data)},
               {"phase", Tensor::from_f32({pred.phase.count, n, n}, pred.phase.data)},
               {"indices", Tensor::from_f64({ids.size()}, ids)}});
  write_grid_csv(region.grid, st.output(kPredictGrid));
  RealImage2D amp0 = pred.amplitude.image(0);
  for (auto& v : amp0.storage()) v *= norm.amp_scale;
  const auto amp_pgm = st.output("pred_amp.pgm");
  const auto phase_pgm = st.output("pred_phase.pgm");
  export_pgm(amp0, amp_pgm, 0.0, 1.1 * norm.amp_scale);
  export_pgm(pred.phase.image(0), phase_pgm, -std::numbers::pi, std::numbers::pi);
  st.write_manifest();
  out << fmt::format("predict: {} frame(s), {:.3f} ms/frame (p95 {:.3f})\n", stack.size(), pred.mean_ms, pred.p95_ms);
  out << "predict: amplitude PGM " << amp_pgm.string() << '\n';
  out << "predict: phase PGM " << phase_pgm.string() << '\n';
  return kExitOk;
}

int cmd_stitch(const Flags& flags, std::ostream& out) {
  Stage st("stitch", flags, out);
  const auto& c = st.config();
  const auto bundle = load_bundle(st.input(kPredictions));
  const auto grid = read_grid_csv(st.input(kPredictGrid));
  const auto truth = complex_field_from(load_tensor(st.input(kObject)));
  const auto probe = complex_field_from(load_tensor(st.input(kProbe)));
  const auto norm = read_norm(st);

  const auto to_stack = [&](const std::string& name) {
    const auto& t = bundle_get(bundle, name);
    if (t.dtype != DType::F32 || t.dims.size() != 3) throw FormatError(name + ": expected a J x N x N f32 tensor", 0);
    FrameStack s(t.dims[0], t.dims[1], t.dims[2]);
    s.data = t.f32;
    return s;
  };
  const auto amp = to_stack("amplitude");
  const auto ph = to_stack("phase");
  RealImage2D weights;
  if (c.probe_weighted_stitch) {
    weights = RealImage2D(probe.height(), probe.width());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = std::norm(probe[i]);
  }
  const RealImage2D* w = c.probe_weighted_stitch ? &weights : nullptr;
  const auto amp_canvas = stitch_average(amp, grid, truth.height(), truth.width(), w);
  const auto phase_canvas = stitch_average(ph, grid, truth.height(), truth.width(), w);
  ComplexField2D rec(truth.height(), truth.width());
  RealImage2D amp_phys(truth.height(), truth.width());
  for (std::size_t i = 0; i < rec.size(); ++i) {
    amp_phys[i] = amp_canvas.final[i] * norm.amp_scale;
    rec[i] = std::polar(amp_phys[i], phase_canvas.final[i]);
  }
  const auto mask = illuminated_mask(probe, grid, truth.height(), truth.width(), c.mask_threshold);
  const auto metrics = evaluate_reconstruction(rec, truth, mask, max_modulus(truth), false);
  check_finite(metrics, "stitch");

  RealImage2D count(truth.height(), truth.width());
  RealImage2D mask_img(truth.height(), truth.width());
  for (std::size_t i = 0; i < count.size(); ++i) {
    count[i] = amp_canvas.count[i];
    mask_img[i] = mask[i];
  }
  save_tensor(st.output("stitched_amp.ptyt"), to_tensor(amp_phys));
  save_tensor(st.output("stitched_phase.ptyt"), to_tensor(phase_canvas.final));
  save_tensor(st.output("stitch_count.ptyt"), to_tensor(count));
  save_tensor(st.output("stitch_mask.ptyt"), to_tensor(mask_img));
  write_fresh_metrics(st.output("stitch_metrics.csv"), {{"stitch_nn", 1, 0, metrics, 0.0}});
  export_pgm(amp_phys, st.output("stitched_amp.pgm"), 0.0, 1.1 * max_modulus(truth));
  export_pgm(phase_canvas.final, st.output("stitched_phase.pgm"), -c.sim.object.phi_max - 0.5, c.sim.object.phi_max + 0.5);
  st.write_manifest();
  out << fmt::format("stitch: {} patches, amp_mae {:.4f}, phase_mae {:.4f} rad, nmse {:.3e} on {} px\n", grid.size(),
                     metrics.amp_mae, metrics.phase_mae_wrapped, metrics.nmse_complex, metrics.mask_pixels);
  return kExitOk;
}

int cmd_sweep(const Flags& flags, std::ostream& out) {
  Stage st("sweep", flags, out);
  auto& c = st.config();
  if (!flags.factors.empty()) c.sparsity_factors = parse_list(flags.factors, "--factors");
  if (!flags.sizes.empty()) c.train_sizes = split_words(flags.sizes);
  c.validate();
  if (flags.kind != "sparsity" && flags.kind != "size" && flags.kind != "both") {
    throw ArgumentError("--kind must be sparsity, size or both");
  }
  st.flag("kind", flags.kind);
  st.flag("factors", c.sparsity_factors);
  st.flag("train_sizes", c.train_sizes);

  const Scene scene = load_scene(st);
  const auto regions = split_regions(scene.grid, c.train_fraction);
  const ArtifactSink sink{st.dir(), st.timing()};
  const auto log = [&](const std::string& m) {
    out << m << '\n';
    out.flush();
  };
  std::vector<MetricsRow> rows;

  if (flags.kind == "sparsity" || flags.kind == "both") {
    nn::ModelParams<float> model;
    NormMeta norm;
    if (st.has(kModel) && st.has(kModelDesc)) {
      model = nn::load_model(st.input(kModel), st.input(kModelDesc));
      norm = read_norm(st);
    } else {
      // No model yet: train one on the full training set first.
      if (!st.has(kDataset)) throw MissingInputError((st.dir() / kModel).string());
      const auto dataset = load_dataset(st.input(kDataset));
      model = train_and_save(st, dataset, read_split(st)).best_params;
      norm = dataset.norm;
    }
    const auto report = run_sparsity_sweep(c, scene, regions, model, norm, sink, log);
    for (const auto& r : report.rows) check_finite(r.metrics, r.run_id);
    rows.insert(rows.end(), report.rows.begin(), report.rows.end());
  }
  if (flags.kind == "size" || flags.kind == "both") {
    TrainingData data{load_dataset(st.input(kDataset)), read_split(st)};
    const auto report = run_training_size_sweep(c, scene, regions, data, sink, log);
    for (const auto& r : report.rows) check_finite(r.metrics, r.run_id);
    rows.insert(rows.end(), report.rows.begin(), report.rows.end());
    std::ofstream f(st.output(kSweepSizes), std::ios::binary | std::ios::trunc);
    f << "size_spec,train_size,val_mae,epoch0_val_mae,epochs,train_s\n" << std::setprecision(10);
    for (const auto& s : report.sizes) {
      f << s.spec << ',' << s.train_size << ',' << s.val_mae << ',' << s.epoch0_val_mae << ',' << s.epochs << ','
        << s.train_seconds << '\n';
    }
  }
  write_fresh_metrics(st.output(kSweepMetrics), rows);
  st.write_manifest();
  out << fmt::format("sweep: {} metric rows written to {}\n", rows.size(), (st.dir() / kSweepMetrics).string());
  return kExitOk;
}

int cmd_bench(const Flags& flags, std::ostream& out) {
  Stage st("bench", flags, out);
  const auto model = nn::load_model(st.input(kModel), st.input(kModelDesc));
  const auto norm = read_norm(st);
  const Scene scene = load_scene(st);
  const auto report = benchmark_speed(st.config(), model, scene, norm, [&](const std::string& m) {
    out << m << '\n';
    out.flush();
  });
  write_timing_csv(st.output(kTiming), report, st.timing());
  st.write_manifest();
  out << fmt::format("bench: nn {:.3f} ms/frame (p95 {:.3f}), epie {:.3f} ms/frame amortized, ratio {:.1f}\n",
                     report.nn_mean_ms, report.nn_p95_ms, report.epie_ms_per_frame, report.ratio);
  out << fmt::format("bench: literature values (V100 GPU, not reproduced here): ~{:g} ms/frame, ~{:g}x speedup\n",
                     kLiteratureNnMs, kLiteratureSpeedup);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ptychography lab: simulation, ePIE, and a dual-head CNN for direct phase retrieval", "ptychoforge"};
  app.set_version_flag("--version", PTYCHOFORGE_VERSION);
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  std::size_t frame = 0;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON configuration file")->required();
    sub->add_option("--seed", seed, "master seed (replaces the file's `seed`)");
    sub->add_flag("--deterministic", flags.deterministic, "serial, bit-reproducible execution; timing columns written as 0");
    sub->add_option("--out", flags.out_dir, "output directory (default: config output_dir)");
  };
  auto* simulate = app.add_subcommand("simulate", "object, probe, diffraction stack and scan grid");
  auto* epie = app.add_subcommand("epie", "iterative reconstruction of the simulated scan");
  auto* dataset = app.add_subcommand("dataset", "training triplets from the training rows");
  auto* train = app.add_subcommand("train", "train the network");
  auto* predict = app.add_subcommand("predict", "per-frame network inference");
  auto* stitch = app.add_subcommand("stitch", "average predictions onto the object canvas and score them");
  auto* sweep = app.add_subcommand("sweep", "sparse-sampling and training-size studies");
  auto* bench = app.add_subcommand("bench", "inference vs ePIE timing");
  for (auto* sub : {simulate, epie, dataset, train, predict, stitch, sweep, bench}) add_common(sub);
  for (auto* sub : {epie, predict}) {
    sub->add_option("--region", flags.region, "scan rows to use: all, train or test");
  }
  predict->add_option("--frame", frame, "predict a single frame (index into the full grid)");
  sweep->add_option("--factors", flags.factors, "comma-separated subsampling factors, e.g. 1,5");
  sweep->add_option("--sizes", flags.sizes, "comma-separated training sizes, e.g. full,full/4,800");
  sweep->add_option("--kind", flags.kind, "sparsity, size or both")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) flags.seed = seed;
  }
  if (predict->parsed() && predict->count("--frame") > 0) flags.frame = frame;

  try {
    if (simulate->parsed()) return cmd_simulate(flags, out);
    if (epie->parsed()) return cmd_epie(flags, out);
    if (dataset->parsed()) return cmd_dataset(flags, out);
    if (train->parsed()) return cmd_train(flags, out);
    if (predict->parsed()) return cmd_predict(flags, out);
    if (stitch->parsed()) return cmd_stitch(flags, out);
    if (sweep->parsed()) return cmd_sweep(flags, out);
    if (bench->parsed()) return cmd_bench(flags, out);
  } catch (const MissingInputError& e) {
    err << "error: missing input file: " << e.path() << '\n';
    return kExitMissingInput;
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const MetricFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ptychoforge::cli
