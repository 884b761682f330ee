#include <doctest.h>

#include <cmath>
#include <complex>

#include "ptychoforge/epie.hpp"

using namespace ptychoforge;

namespace {

ComplexField2D random_field(std::size_t h, std::size_t w, std::uint64_t seed) {
  SeededRng rng(seed);
  ComplexField2D f(h, w);
  for (auto& z : f.storage()) z = Complex(rng.next_normal(), rng.next_normal());
  return f;
}

struct SmallScene {
  ObjectSample object;
  Probe probe;
  ScanGrid grid;
  DiffractionStack stack;
};

SmallScene small_scene() {
  SmallScene s;
  s.grid = raster_positions(6, 6, 3, 2);
  SeededRng rng(21);
  ObjectOptions opt;
  opt.blur_px = 1;
  opt.feature_min_px = 2.0;
  opt.feature_max_px = 6.0;
  s.object = make_test_object(s.grid.required_height(16) + 2, s.grid.required_width(16) + 2, rng, opt);
  s.probe = make_probe(16, 3.0);
  s.stack = diffract(s.object, s.probe, s.grid);
  return s;
}

}  // namespace

TEST_CASE("exit_wave multiplies probe and shifted object") {
  const auto obj = random_field(12, 10, 1);
  const auto probe = random_field(4, 4, 2);
  const ScanPosition pos{5, 3};
  const auto psi = exit_wave(obj, probe, pos);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const Complex want = probe(r, c) * obj(5 + r, 3 + c);
      CHECK(std::abs(psi(r, c) - want) < 1e-14);
    }
  }
  CHECK_THROWS_AS(exit_wave(obj, probe, ScanPosition{9, 0}), GeometryError);
}

TEST_CASE("modulus_project keeps phase and imposes measured modulus") {
  auto far = random_field(8, 8, 3);
  far(2, 2) = Complex(0.0, 0.0);
  RealImage2D measured(8, 8);
  SeededRng rng(4);
  for (auto& v : measured.storage()) v = 4.0 * rng.next_double();
  const auto out = modulus_project(far, measured);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i]) == doctest::Approx(std::sqrt(measured[i])));
    if (i != 2 * 8 + 2) CHECK(std::abs(std::arg(out[i]) - std::arg(far[i])) < 1e-12);
  }
  CHECK(out(2, 2).imag() == 0.0);
  CHECK(out(2, 2).real() == doctest::Approx(std::sqrt(measured(2, 2))));

  measured[5] = -1.0;
  CHECK_THROWS_AS(modulus_project(far, measured), DataError);
  CHECK_THROWS_AS(modulus_project(far, RealImage2D(4, 8)), ShapeError);
}

TEST_CASE("update_object matches a direct evaluation of the update rule") {
  const auto probe = random_field(4, 4, 5);
  const auto delta = random_field(4, 4, 6);
  const auto before = random_field(10, 9, 7);
  auto obj = before;
  const ScanPosition pos{3, 4};
  const double alpha = 0.8;
  update_object(obj, probe, pos, delta, alpha);

  double pmax = 0.0;
  for (const auto& p : probe.values()) pmax = std::max(pmax, std::norm(p));
  for (std::size_t r = 0; r < obj.height(); ++r) {
    for (std::size_t c = 0; c < obj.width(); ++c) {
      Complex want = before(r, c);
      if (r >= 3 && r < 7 && c >= 4 && c < 8) {
        want += alpha * std::conj(probe(r - 3, c - 4)) * delta(r - 3, c - 4) / pmax;
      }
      CHECK(std::abs(obj(r, c) - want) < 1e-12);
    }
  }
}

TEST_CASE("update_probe matches a direct evaluation of the update rule") {
  const auto obj = random_field(10, 9, 8);
  const auto delta = random_field(4, 4, 9);
  const auto before = random_field(4, 4, 10);
  auto probe = before;
  const ScanPosition pos{6, 1};
  const double beta = 1.3;
  update_probe(obj, probe, pos, delta, beta);
  double omax = 0.0;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) omax = std::max(omax, std::norm(obj(6 + r, 1 + c)));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const Complex want = before(r, c) + beta * std::conj(obj(6 + r, 1 + c)) * delta(r, c) / omax;
      CHECK(std::abs(probe(r, c) - want) < 1e-12);
    }
  }
}

TEST_CASE("update functions reject degenerate inputs") {
  ComplexField2D obj(8, 8, Complex(1.0, 0.0));
  ComplexField2D zero(4, 4);
  const auto delta = random_field(4, 4, 11);
  CHECK_THROWS_AS(update_object(obj, zero, ScanPosition{0, 0}, delta, 1.0), NumericError);
  ComplexField2D zobj(8, 8);
  auto probe = random_field(4, 4, 12);
  CHECK_THROWS_AS(update_probe(zobj, probe, ScanPosition{0, 0}, delta, 1.0), NumericError);
  CHECK_THROWS_AS(update_object(obj, probe, ScanPosition{0, 0}, random_field(3, 4, 1), 1.0), ShapeError);
  CHECK_THROWS_AS(update_object(obj, probe, ScanPosition{5, 0}, delta, 1.0), GeometryError);
}

TEST_CASE("data_error: zero at the truth, (s-1)² for a scaled object") {
  const auto s = small_scene();
  EpieState truth{s.object.transmission, s.probe.field, {}};
  CHECK(data_error(truth, s.stack) < 1e-24);
  // |F(sψ)| = s|Fψ|, so the error reduces to (s − 1)².
  EpieState scaled = truth;
  for (auto& z : scaled.object_est.storage()) z *= 1.1;
  CHECK(data_error(scaled, s.stack) == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("the true object and probe are a fixed point") {
  const auto s = small_scene();
  EpieConfig cfg;
  cfg.iterations = 3;
  cfg.probe_update_start = 0;
  const auto state = reconstruct(s.stack, s.grid, cfg, s.object.transmission, s.probe.field);
  REQUIRE(state.error_history.size() == 3);
  for (std::size_t i = 0; i < state.object_est.size(); ++i) {
    CHECK(std::abs(state.object_est[i] - s.object.transmission[i]) < 1e-10);
  }
  for (std::size_t i = 0; i < state.probe_est.size(); ++i) {
    CHECK(std::abs(state.probe_est[i] - s.probe.field[i]) < 1e-10);
  }
  CHECK(state.error_history.back() < 1e-20);
}

TEST_CASE("reconstruction drives the data error down and is seed-deterministic") {
  const auto s = small_scene();
  EpieConfig cfg;
  cfg.iterations = 60;
  cfg.shuffle_seed = 5;
  SeededRng rng(1);
  const auto init_probe = perturb_probe(s.probe.field, 0.1, rng);
  const ComplexField2D init_obj(s.object.transmission.height(), s.object.transmission.width(), Complex(1.0, 0.0));
  std::size_t calls = 0;
  const auto a = reconstruct(s.stack, s.grid, cfg, init_obj, init_probe, [&](std::size_t, double) { ++calls; });
  CHECK(calls == 60);
  CHECK(a.error_history.back() < 0.1 * a.error_history.front());
  for (double e : a.error_history) CHECK(std::isfinite(e));
  const auto b = reconstruct(s.stack, s.grid, cfg, init_obj, init_probe);
  CHECK(a.object_est == b.object_est);
  CHECK(a.error_history == b.error_history);
}

TEST_CASE("reconstruct validates its inputs") {
  const auto s = small_scene();
  EpieConfig cfg;
  cfg.iterations = 0;
  const auto unchanged = reconstruct(s.stack, s.grid, cfg, s.object.transmission, s.probe.field);
  CHECK(unchanged.object_est == s.object.transmission);
  CHECK(unchanged.error_history.empty());

  cfg.iterations = 1;
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(reconstruct(s.stack, s.grid, cfg, s.object.transmission, s.probe.field), ArgumentError);
  cfg.alpha = 1.0;
  CHECK_THROWS_AS(reconstruct(s.stack, s.grid, cfg, s.object.transmission, random_field(8, 8, 1)), ShapeError);
  CHECK_THROWS_AS(reconstruct(s.stack, subsample_grid(s.grid, 2), cfg, s.object.transmission, s.probe.field),
                  ShapeError);
  CHECK_THROWS_AS(reconstruct(s.stack, s.grid, cfg, ComplexField2D(20, 20), s.probe.field), GeometryError);
}

TEST_CASE("perturb_probe noise statistics") {
  const ComplexField2D ones(64, 64, Complex(1.0, 0.0));
  SeededRng rng(2);
  CHECK(perturb_probe(ones, 0.0, rng) == ones);
  const auto noisy = perturb_probe(ones, 0.2, rng);
  double var = 0.0;
  for (const auto& z : noisy.values()) var += std::norm(z - Complex(1.0, 0.0));
  var /= static_cast<double>(noisy.size());
  CHECK(var == doctest::Approx(0.04).epsilon(0.08));
}
