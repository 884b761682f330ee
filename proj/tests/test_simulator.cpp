#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ptychoforge/simulator.hpp"

using namespace ptychoforge;

TEST_CASE("measure_fwhm recovers a Gaussian width") {
  // Intensity exp(-r²/σ²) has FWHM 2σ·sqrt(ln 2).
  const double sigma = 4.0;
  ComplexField2D g(64, 64);
  for (std::size_t r = 0; r < 64; ++r) {
    for (std::size_t c = 0; c < 64; ++c) {
      const double dy = static_cast<double>(r) - 32.0;
      const double dx = static_cast<double>(c) - 32.0;
      g(r, c) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  CHECK(measure_fwhm(g) == doctest::Approx(2.0 * sigma * std::sqrt(std::log(2.0))).epsilon(0.01));
}

TEST_CASE("reference probe: 6 px FWHM in a 64 px window") {
  const auto probe = make_probe(64, 6.0);
  CHECK(probe.field.height() == 64);
  CHECK(energy(probe.field) == doctest::Approx(1.0).epsilon(1e-12));
  const double fwhm = measure_fwhm(probe.field);
  CHECK(fwhm >= 5.0);
  CHECK(fwhm <= 7.0);
  const double tail = energy_outside_radius(probe.field, 6.0);
  CHECK(tail >= 0.05);
  CHECK(tail <= 0.40);
}

TEST_CASE("probe FWHM tracks the request") {
  for (double want : {3.0, 4.0, 8.0, 12.0}) {
    CAPTURE(want);
    CHECK(std::abs(measure_fwhm(make_probe(64, want).field) - want) <= 1.0);
  }
}

TEST_CASE("make_probe validates its inputs") {
  CHECK_THROWS_AS(make_probe(64, 1.5), ArgumentError);
  CHECK_THROWS_AS(make_probe(64, 17.0), ArgumentError);
  CHECK_THROWS_AS(make_probe(48, 6.0), ArgumentError);
  CHECK_THROWS_AS(make_probe(4, 2.0), ArgumentError);
}

TEST_CASE("test object is a smoothed two-level pattern") {
  SeededRng rng(3);
  ObjectOptions opt;
  opt.blur_px = 1;
  const auto obj = make_test_object(96, 80, rng, opt);
  std::size_t etched = 0;
  for (const auto& z : obj.transmission.values()) {
    const double a = std::abs(z);
    const double p = std::arg(z);
    const bool low = std::abs(a - opt.a_min) < 1e-12 && std::abs(p - opt.phi_max) < 1e-12;
    const bool high = std::abs(a - 1.0) < 1e-12 && std::abs(p) < 1e-12;
    CHECK((low || high));
    etched += low ? 1 : 0;
  }
  const double fill = static_cast<double>(etched) / static_cast<double>(obj.transmission.size());
  CHECK(fill >= opt.fill_fraction);
  CHECK(fill < opt.fill_fraction + 0.2);

  SeededRng rng2(3);
  const auto blurred = make_test_object(96, 80, rng2);
  for (const auto& z : blurred.transmission.values()) {
    CHECK(std::abs(z) >= opt.a_min - 1e-12);
    CHECK(std::abs(z) <= 1.0 + 1e-12);
    CHECK(std::arg(z) >= -1e-12);
    CHECK(std::arg(z) <= opt.phi_max + 1e-12);
  }
}

TEST_CASE("test object is seed-determined") {
  SeededRng a(10);
  SeededRng b(10);
  SeededRng c(11);
  const auto oa = make_test_object(64, 64, a);
  CHECK(oa.transmission == make_test_object(64, 64, b).transmission);
  CHECK(!(oa.transmission == make_test_object(64, 64, c).transmission));
}

TEST_CASE("make_test_object validates options") {
  SeededRng rng(1);
  ObjectOptions bad;
  bad.a_min = 0.0;
  CHECK_THROWS_AS(make_test_object(8, 8, rng, bad), ArgumentError);
  bad = {};
  bad.phi_max = std::numbers::pi;
  CHECK_THROWS_AS(make_test_object(8, 8, rng, bad), ArgumentError);
  CHECK_THROWS_AS(make_test_object(0, 8, rng), ArgumentError);
}

TEST_CASE("diffraction conserves exit-wave energy") {
  SeededRng rng(4);
  const auto obj = make_test_object(100, 100, rng);
  const auto probe = make_probe(32, 4.0);
  const auto grid = raster_positions(4, 4, 9, 3);
  const auto stack = diffract(obj, probe, grid);
  REQUIRE(stack.size() == 16);
  for (std::size_t j = 0; j < stack.size(); ++j) {
    double direct = 0.0;
    for (std::size_t r = 0; r < 32; ++r) {
      for (std::size_t c = 0; c < 32; ++c) {
        direct += std::norm(probe.field(r, c) * obj.transmission(grid.positions[j].row + r, grid.positions[j].col + c));
      }
    }
    double total = 0.0;
    for (double v : stack.frames[j].values()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("delta object: each window selects the expected pixel") {
  // A single transmitting pixel at (r0, c0) makes the exit wave a delta at
  // (r0 - row, c0 - col), whose centered transform has flat intensity
  // |P(r0 - row, c0 - col)|² / N².
  const std::size_t n = 16;
  ObjectSample obj;
  obj.transmission = ComplexField2D(40, 40, Complex(0.0, 0.0));
  const std::size_t r0 = 20;
  const std::size_t c0 = 22;
  obj.transmission(r0, c0) = Complex(1.0, 0.0);
  const auto probe = make_probe(n, 3.0);
  const auto grid = raster_positions(3, 3, 3, 10);
  const auto stack = diffract(obj, probe, grid);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const auto& p = grid.positions[j];
    const double expected = std::norm(probe.field(r0 - p.row, c0 - p.col)) / static_cast<double>(n * n);
    for (double v : stack.frames[j].values()) CHECK(v == doctest::Approx(expected).epsilon(1e-10).scale(1e-20));
  }
}

TEST_CASE("diffract rejects windows outside the object") {
  ObjectSample obj;
  obj.transmission = ComplexField2D(20, 20, Complex(1.0, 0.0));
  const auto probe = make_probe(16, 3.0);
  CHECK_THROWS_AS(diffract(obj, probe, raster_positions(2, 2, 5, 0)), GeometryError);
}

TEST_CASE("Poisson sampler moments") {
  for (double mean : {0.3, 3.0, 9.5, 10.0, 50.0, 1000.0}) {
    SeededRng rng(static_cast<std::uint64_t>(mean * 10));
    const int n = 40000;
    double s1 = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<double>(sample_poisson(rng, mean));
      s1 += k;
      s2 += k * k;
    }
    const double m = s1 / n;
    const double var = s2 / n - m * m;
    CAPTURE(mean);
    // Standard error of the mean is sqrt(mean / n); allow 5 of them.
    CHECK(std::abs(m - mean) < 5.0 * std::sqrt(mean / n) + 1e-9);
    CHECK(var == doctest::Approx(mean).epsilon(0.05));
  }
  SeededRng rng(1);
  CHECK(sample_poisson(rng, 0.0) == 0);
  CHECK_THROWS_AS(sample_poisson(rng, -1.0), ArgumentError);
}

TEST_CASE("add_poisson scales frames to the photon budget") {
  SeededRng rng(6);
  const auto obj = make_test_object(80, 80, rng);
  const auto probe = make_probe(32, 4.0);
  const auto stack = diffract(obj, probe, raster_positions(3, 3, 4, 2));
  SeededRng noise(7);
  const auto noisy = add_poisson(stack, 1e5, noise);
  REQUIRE(noisy.photon_budget.has_value());
  for (const auto& f : noisy.frames) {
    double total = 0.0;
    for (double v : f.values()) {
      CHECK(v == std::floor(v));
      total += v;
    }
    CHECK(std::abs(total - 1e5) < 5.0 * std::sqrt(1e5));
  }
  SeededRng again(7);
  CHECK(add_poisson(stack, 1e5, again).frames == noisy.frames);
  CHECK_THROWS_AS(add_poisson(stack, 0.0, again), ArgumentError);
}
