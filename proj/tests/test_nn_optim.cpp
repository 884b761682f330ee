#include <doctest.h>

#include <cmath>

#include "ptychoforge/dataset.hpp"
#include "ptychoforge/nn/optim.hpp"
#include "ptychoforge/nn/trainer.hpp"

using namespace ptychoforge;
using namespace ptychoforge::nn;

TEST_CASE("ADAM first step is lr·|g|/(|g|+eps) against the gradient sign") {
  for (double g : {3.0, -0.02, 1e-9}) {
    std::vector<std::vector<double>> params{{1.0}};
    std::vector<std::vector<double>> grads{{g}};
    auto state = AdamState<double>::like(params, 1e-3);
    adam_step<double>({std::span<double>(params[0])}, grads, state);
    const double want = 1.0 - std::copysign(1e-3 * std::abs(g) / (std::abs(g) + 1e-8), g);
    CAPTURE(g);
    CHECK(params[0][0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(state.t == 1);
  }
}

TEST_CASE("ADAM second step follows the bias-corrected moments") {
  std::vector<std::vector<double>> p{{0.0, 0.0}};
  auto state = AdamState<double>::like(p, 0.01);
  const double g1[2] = {1.0, -2.0};
  const double g2[2] = {0.5, 4.0};
  adam_step<double>({std::span<double>(p[0])}, {{g1[0], g1[1]}}, state);
  adam_step<double>({std::span<double>(p[0])}, {{g2[0], g2[1]}}, state);
  for (int k = 0; k < 2; ++k) {
    // Closed form for two steps from zero state.
    double x = 0.0;
    double m = 0.0;
    double v = 0.0;
    const double gs[2] = {g1[k], g2[k]};
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1 * gs[t - 1];
      v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
      x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    CHECK(p[0][k] == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("ADAM: zero gradient leaves parameters alone; identical calls agree") {
  std::vector<std::vector<float>> a{{1.0f, -2.0f}};
  auto sa = AdamState<float>::like(a);
  adam_step<float>({std::span<float>(a[0])}, {{0.0f, 0.0f}}, sa);
  CHECK(a[0] == std::vector<float>{1.0f, -2.0f});

  std::vector<std::vector<float>> b{{0.3f}};
  std::vector<std::vector<float>> c{{0.3f}};
  auto sb = AdamState<float>::like(b);
  auto sc = AdamState<float>::like(c);
  adam_step<float>({std::span<float>(b[0])}, {{0.7f}}, sb);
  adam_step<float>({std::span<float>(c[0])}, {{0.7f}}, sc);
  CHECK(b == c);
  CHECK_THROWS_AS(adam_step<float>({std::span<float>(b[0])}, {{0.7f, 1.0f}}, sb), ArgumentError);
}

TEST_CASE("plateau scheduler") {
  const std::vector<double> falling{5, 4, 3, 2, 1, 0.5, 0.2};
  CHECK(plateau_scheduler(falling, 5, 0.5, 1e-3) == 1e-3);

  // One best epoch then five non-improving ones halve the rate exactly once.
  const std::vector<double> stall{1.0, 1.0, 1.2, 1.1, 1.0, 1.3};
  CHECK(plateau_scheduler(std::span(stall).first(5), 5, 0.5, 1e-3) == 1e-3);
  CHECK(plateau_scheduler(stall, 5, 0.5, 1e-3) == 0.0005);

  // An improvement on the fourth stalled epoch resets the count.
  const std::vector<double> rescued{1.0, 1.1, 1.1, 1.1, 0.9, 1.0, 1.0, 1.0};
  CHECK(plateau_scheduler(rescued, 5, 0.5, 1e-3) == 1e-3);

  PlateauScheduler s(2, 0.5);
  double lr = 1.0;
  double prev = lr;
  SeededRng rng(3);
  for (int i = 0; i < 200; ++i) {
    lr = s.step(rng.next_double(), lr);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(PlateauScheduler(0, 0.5), ArgumentError);
  CHECK_THROWS_AS(PlateauScheduler(5, 1.0), ArgumentError);
}

namespace {

TripletDataset tiny_dataset() {
  const auto grid = raster_positions(6, 6, 2, 1);
  SeededRng rng(4);
  ObjectOptions opt;
  opt.feature_min_px = 2.0;
  opt.feature_max_px = 5.0;
  opt.blur_px = 1;
  const auto obj = make_test_object(grid.required_height(8) + 1, grid.required_width(8) + 1, rng, opt);
  const auto stack = diffract(obj, make_probe(8, 2.0), grid);
  return build_triplets(stack, modulus(obj.transmission), phase(obj.transmission), grid);
}

}  // namespace

TEST_CASE("training: finite, improving, lr non-increasing, deterministic") {
  const auto ds = tiny_dataset();
  const auto split = split_90_10(ds.size(), 1);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 30;
  cfg.lr = 3e-3;
  cfg.seed = 2;
  std::size_t calls = 0;
  const auto init = init_params<float>(tiny_architecture(), 5);
  const auto a = train(ds, split, cfg, init, [&](const EpochRecord&) { ++calls; });
  REQUIRE(a.curve.size() == cfg.max_epochs + 1);
  CHECK(calls == a.curve.size());
  CHECK(a.curve[0].epoch == 0);
  for (std::size_t e = 1; e < a.curve.size(); ++e) {
    CHECK(std::isfinite(a.curve[e].train_mae));
    CHECK(a.curve[e].lr <= a.curve[e - 1].lr);
  }
  CHECK(a.curve.back().train_mae < a.curve[0].train_mae);
  CHECK(a.best_val_mae <= a.curve[0].val_mae);
  CHECK(evaluate_mae(a.best_params, ds, split.val_ids) == doctest::Approx(a.best_val_mae).epsilon(1e-6));
  CHECK(a.curve[0].val_mae == doctest::Approx(evaluate_mae(init, ds, split.val_ids)).epsilon(1e-6));

  const auto b = train(ds, split, cfg, init);
  REQUIRE(b.curve.size() == a.curve.size());
  for (std::size_t e = 0; e < a.curve.size(); ++e) {
    CHECK(a.curve[e].train_mae == b.curve[e].train_mae);
    CHECK(a.curve[e].val_mae == b.curve[e].val_mae);
  }
}

TEST_CASE("training stops once lr falls below min_lr") {
  // A rate this small cannot move float weights, so epoch 1 repeats the
  // epoch-0 validation loss, the patience-1 scheduler halves, and the loop ends.
  const auto ds = tiny_dataset();
  const auto split = split_90_10(ds.size(), 1);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.plateau_patience = 1;
  cfg.lr = 1e-30;
  cfg.min_lr = 0.9e-30;
  const auto r = train(ds, split, cfg, init_params<float>(tiny_architecture(), 5));
  REQUIRE(r.curve.size() == 2);
  CHECK(r.curve[1].val_mae == r.curve[0].val_mae);
  CHECK(r.best_epoch == 0);
}

TEST_CASE("predict returns one pair per frame in order, with timing") {
  const auto ds = tiny_dataset();
  const auto params = init_params<float>(tiny_architecture(), 6);
  const auto one = predict(params, ds.diffraction.select({3}));
  CHECK(one.amplitude.count == 1);
  CHECK(one.amplitude.height == 8);
  const auto all = predict(params, ds.diffraction);
  CHECK(all.amplitude.count == ds.size());
  CHECK(all.ms_per_frame.size() == ds.size());
  CHECK(all.p95_ms >= 0.0);
  CHECK(all.warnings.empty());
  const auto direct = model_forward<float>(params, ds.diffraction.frame(3));
  CHECK(std::equal(direct.amplitude.begin(), direct.amplitude.end(), all.amplitude.frame(3).begin()));
  CHECK(std::equal(direct.phase.begin(), direct.phase.end(), one.phase.frame(0).begin()));

  auto raw = ds.diffraction.select({0});
  for (auto& v : raw.data) v *= 1000.0f;
  CHECK(!predict(params, raw).warnings.empty());
}

TEST_CASE("nearest-rank percentile") {
  CHECK(percentile({5, 1, 3, 2, 4}, 50) == 3);
  CHECK(percentile({5, 1, 3, 2, 4}, 100) == 5);
  CHECK(percentile({5, 1, 3, 2, 4}, 0) == 1);
  std::vector<double> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i + 1;
  CHECK(percentile(hundred, 95) == 95);
  CHECK_THROWS_AS(percentile({}, 50), ArgumentError);
}
