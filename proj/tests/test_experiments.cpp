#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ptychoforge/experiments.hpp"

using namespace ptychoforge;

namespace {

// 16 px frames, a 10 x 8 scan and a two-level network: seconds, not minutes.
ExperimentConfig small_config() {
  ExperimentConfig c;
  c.sim.geometry.frame_size = 16;
  c.sim.probe_fwhm_px = 3.0;
  c.sim.scan_rows = 10;
  c.sim.scan_cols = 8;
  c.sim.step_px = 2;
  c.sim.margin_px = 3;
  c.sim.object_height = 0;
  c.sim.object_width = 0;
  c.sim.object.feature_min_px = 2.0;
  c.sim.object.feature_max_px = 6.0;
  c.sim.object.blur_px = 1;
  c.sim.object_seed = 1;
  c.epie.iterations = 15;
  c.epie.shuffle_seed = 2;
  c.epie_init_seed = 3;
  c.train_fraction = 0.6;
  c.split_seed = 4;
  c.arch.input_size = 16;
  c.arch.encoder_channels = {2, 4};
  c.arch.decoder_channels = {4, 2};
  c.init_seed = 5;
  c.train.batch_size = 8;
  c.train.max_epochs = 3;
  c.train.seed = 6;
  c.sparsity_factors = {1, 2};
  c.train_sizes = {"full", "full/2"};
  c.bench_batch = 4;
  c.bench_repeats = 2;
  return c;
}

}  // namespace

TEST_CASE("resolve_train_size") {
  CHECK(resolve_train_size("full", 4096) == 4096);
  CHECK(resolve_train_size("full/4", 4096) == 1024);
  CHECK(resolve_train_size("full/3", 100) == 33);
  CHECK(resolve_train_size("800", 14490) == 800);
  CHECK_THROWS_AS(resolve_train_size("800", 500), ConfigError);
  CHECK_THROWS_AS(resolve_train_size("0", 500), ConfigError);
  CHECK_THROWS_AS(resolve_train_size("full/0", 500), ConfigError);
  CHECK_THROWS_AS(resolve_train_size("half", 500), ConfigError);
  CHECK_THROWS_AS(resolve_train_size("-5", 500), ConfigError);
}

TEST_CASE("contiguous row split of the scan") {
  // 161 scan lines with the first 100 used for training.
  const auto paper = split_regions(raster_positions(161, 3, 1, 0), 0.62);
  CHECK(paper.train_rows == 100);
  CHECK(paper.test_grid.rows == 61);

  const auto grid = raster_positions(10, 4, 2, 1);
  const auto s = split_regions(grid, 0.62);
  CHECK(s.train_rows == 6);
  CHECK(s.train_ids.size() == 24);
  CHECK(s.test_ids.size() == 16);
  CHECK(s.test_ids.front() == 24);
  CHECK(s.train_grid.positions.back() == grid.positions[23]);
  CHECK(s.test_grid.positions.front() == grid.positions[24]);
  CHECK(split_regions(grid, 0.01).train_rows == 1);
  CHECK(split_regions(grid, 0.99).train_rows == 9);
  CHECK_THROWS_AS(split_regions(raster_positions(1, 4, 2, 0), 0.5), ArgumentError);
}

TEST_CASE("config validation names the offending path") {
  auto c = small_config();
  c.validate();
  c.sparsity_factors = {1, 0};
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "/sweep/sparsity_factors/1");
  }
  c = small_config();
  c.arch.input_size = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.sim.object_height = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("derived object size fits the scan with the margin") {
  const auto c = small_config();
  CHECK(c.sim.height() == 2 * 3 + 9 * 2 + 16);
  CHECK(c.sim.width() == 2 * 3 + 7 * 2 + 16);
  const auto scene = simulate_scene(c.sim);
  CHECK(scene.stack.size() == 80);
  CHECK(scene.object.transmission.height() == c.sim.height());
}

TEST_CASE("small end-to-end sweeps") {
  set_deterministic(true);
  const auto c = small_config();
  const auto scene = simulate_scene(c.sim);
  const auto regions = split_regions(scene.grid, c.train_fraction);
  const auto labels = make_labels(scene, regions, c);
  REQUIRE(labels.epie.has_value());
  const auto data = build_training_data(scene, regions, labels, c);
  CHECK(data.dataset.size() == regions.train_ids.size());
  CHECK(data.split.val_ids.size() == 5);

  const auto model = nn::init_params<float>(c.arch, c.init_seed);
  const auto dir = std::filesystem::temp_directory_path() / "ptychoforge_test_experiments";
  std::filesystem::remove_all(dir);
  ArtifactSink sink{dir, false};
  const auto a = run_sparsity_sweep(c, scene, regions, model, data.dataset.norm, sink);
  REQUIRE(a.rows.size() == 4);
  CHECK(a.rows[0].run_id == "sparsity_epie_f1");
  CHECK(a.rows[1].run_id == "sparsity_nn_f1");
  CHECK(a.rows[3].factor == 2);
  for (const auto& r : a.rows) {
    CHECK(std::isfinite(r.metrics.amp_mae));
    CHECK(r.metrics.nmse_complex >= 0.0);
    CHECK(r.metrics.nmse_complex <= 1.0);
    CHECK(r.ms_per_frame == 0.0);
  }
  CHECK(std::filesystem::exists(dir / "previews"));
  const auto b = run_sparsity_sweep(c, scene, regions, model, data.dataset.norm);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].metrics.amp_mae == b.rows[i].metrics.amp_mae);
    CHECK(a.rows[i].metrics.nmse_complex == b.rows[i].metrics.nmse_complex);
  }

  const auto sizes = run_training_size_sweep(c, scene, regions, data, sink);
  REQUIRE(sizes.sizes.size() == 2);
  CHECK(sizes.sizes[0].train_size == data.split.train_ids.size());
  CHECK(sizes.sizes[1].train_size == data.split.train_ids.size() / 2);
  CHECK(sizes.rows.size() == 2);
  CHECK(sizes.sizes[1].curve.size() == c.train.max_epochs + 1);
  CHECK(std::filesystem::exists(dir / "curves"));

  const auto timing = benchmark_speed(c, model, scene, data.dataset.norm);
  CHECK(timing.frames == scene.stack.size());
  CHECK(timing.nn_repeat_means.size() == 2);
  CHECK(timing.nn_mean_ms > 0.0);
  CHECK(timing.ratio == doctest::Approx(timing.epie_ms_per_frame / timing.nn_mean_ms));
  set_deterministic(false);
}
