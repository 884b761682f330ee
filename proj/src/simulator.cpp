#include "ptychoforge/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace ptychoforge {

DiffractionStack DiffractionStack::select(const std::vector<std::size_t>& indices) const {
  DiffractionStack out;
  out.photon_budget = photon_budget;
  out.grid.step_px = grid.step_px;
  out.frames.reserve(indices.size());
  out.grid.positions.reserve(indices.size());
  for (auto i : indices) {
    if (i >= frames.size()) throw ArgumentError("DiffractionStack::select: index out of range");
    out.frames.push_back(frames[i]);
    out.grid.positions.push_back(grid.positions[i]);
  }
  out.grid.rows = indices.empty() ? 0 : 1;
  out.grid.cols = indices.size();
  return out;
}

namespace {

// Separable normalized box blur with clamped edges.
RealImage2D box_blur(const RealImage2D& img, std::size_t width) {
  if (width <= 1) return img;
  const auto h = static_cast<long>(img.height());
  const auto w = static_cast<long>(img.width());
  const long lo = -static_cast<long>((width - 1) / 2);
  const long hi = lo + static_cast<long>(width) - 1;
  const double norm = 1.0 / static_cast<double>(width);
  RealImage2D tmp(img.height(), img.width());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double sum = 0.0;
      for (long d = lo; d <= hi; ++d) sum += img(r, std::clamp(c + d, 0L, w - 1));
      tmp(r, c) = sum * norm;
    }
  }
  RealImage2D out(img.height(), img.width());
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      double sum = 0.0;
      for (long d = lo; d <= hi; ++d) sum += tmp(std::clamp(r + d, 0L, h - 1), c);
      out(r, c) = sum * norm;
    }
  }
  return out;
}

}  // namespace

ObjectSample make_test_object(std::size_t height, std::size_t width, SeededRng& rng,
                              const ObjectOptions& options) {
  if (!(options.a_min > 0.0 && options.a_min <= 1.0)) {
    throw ArgumentError("make_test_object: a_min must lie in (0, 1]");
  }
  if (!(options.phi_max >= 0.0 && options.phi_max < std::numbers::pi)) {
    throw ArgumentError("make_test_object: phi_max must lie in [0, pi)");
  }
  if (height == 0 || width == 0) throw ArgumentError("make_test_object: empty object");
  if (!(options.fill_fraction >= 0.0 && options.fill_fraction < 1.0) ||
      !(options.feature_min_px > 0.0 && options.feature_min_px <= options.feature_max_px)) {
    throw ArgumentError("make_test_object: invalid feature options");
  }

  Image2D<std::uint8_t> etched(height, width, 0);
  std::size_t covered = 0;
  const auto target = static_cast<std::size_t>(options.fill_fraction * static_cast<double>(height * width));
  const double span = options.feature_max_px - options.feature_min_px;
  const std::size_t max_features = 20 * (height * width) / 16 + 16;
  for (std::size_t n = 0; covered < target && n < max_features; ++n) {
    const double cy = rng.next_double() * static_cast<double>(height);
    const double cx = rng.next_double() * static_cast<double>(width);
    const bool disk = rng.next_double() < 0.5;
    const double a = 0.5 * (options.feature_min_px + span * rng.next_double());
    const double b = disk ? a : 0.5 * (options.feature_min_px + span * rng.next_double());
    const auto r0 = static_cast<long>(std::floor(cy - b));
    const auto r1 = static_cast<long>(std::ceil(cy + b));
    const auto c0 = static_cast<long>(std::floor(cx - a));
    const auto c1 = static_cast<long>(std::ceil(cx + a));
    for (long r = std::max(r0, 0L); r <= std::min(r1, static_cast<long>(height) - 1); ++r) {
      for (long c = std::max(c0, 0L); c <= std::min(c1, static_cast<long>(width) - 1); ++c) {
        const double dy = static_cast<double>(r) + 0.5 - cy;
        const double dx = static_cast<double>(c) + 0.5 - cx;
        const bool inside = disk ? (dx * dx + dy * dy <= a * a) : (std::abs(dx) <= a && std::abs(dy) <= b);
        if (inside && !etched(r, c)) {
          etched(r, c) = 1;
          ++covered;
        }
      }
    }
  }

  RealImage2D amplitude(height, width);
  RealImage2D phase_map(height, width);
  for (std::size_t i = 0; i < amplitude.size(); ++i) {
    amplitude[i] = etched[i] ? options.a_min : 1.0;
    phase_map[i] = etched[i] ? options.phi_max : 0.0;
  }
  amplitude = box_blur(amplitude, options.blur_px);
  phase_map = box_blur(phase_map, options.blur_px);

  ObjectSample sample;
  sample.a_min = options.a_min;
  sample.phi_max = options.phi_max;
  sample.transmission = from_polar(amplitude, phase_map);
  return sample;
}

namespace {

double half_max_width_1d(const std::vector<double>& profile, std::size_t peak) {
  const double half = 0.5 * profile[peak];
  double left = 0.0;
  double right = static_cast<double>(profile.size() - 1);
  for (std::size_t i = peak; i > 0; --i) {
    if (profile[i - 1] < half) {
      const double t = (profile[i] - half) / (profile[i] - profile[i - 1]);
      left = static_cast<double>(i) - t;
      break;
    }
  }
  for (std::size_t i = peak; i + 1 < profile.size(); ++i) {
    if (profile[i + 1] < half) {
      const double t = (profile[i] - half) / (profile[i] - profile[i + 1]);
      right = static_cast<double>(i) + t;
      break;
    }
  }
  return right - left;
}

ComplexField2D aperture_probe(std::size_t n, double radius) {
  ComplexField2D aperture(n, n);
  const double c = static_cast<double>(n / 2);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t col = 0; col < n; ++col) {
      const double dy = static_cast<double>(r) - c;
      const double dx = static_cast<double>(col) - c;
      if (dx * dx + dy * dy <= radius * radius) aperture(r, col) = 1.0;
    }
  }
  ComplexField2D field = ifft2c(aperture);
  const double scale = 1.0 / std::sqrt(energy(field));
  for (auto& z : field.storage()) z *= scale;
  return field;
}

}  // namespace

double measure_fwhm(const ComplexField2D& field) {
  std::size_t peak = 0;
  for (std::size_t i = 1; i < field.size(); ++i) {
    if (std::norm(field[i]) > std::norm(field[peak])) peak = i;
  }
  const std::size_t pr = peak / field.width();
  const std::size_t pc = peak % field.width();
  std::vector<double> row(field.width());
  std::vector<double> col(field.height());
  for (std::size_t c = 0; c < field.width(); ++c) row[c] = std::norm(field(pr, c));
  for (std::size_t r = 0; r < field.height(); ++r) col[r] = std::norm(field(r, pc));
  return 0.5 * (half_max_width_1d(row, pc) + half_max_width_1d(col, pr));
}

double energy_outside_radius(const ComplexField2D& field, double radius) {
  const double cr = static_cast<double>(field.height() / 2);
  const double cc = static_cast<double>(field.width() / 2);
  double outside = 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < field.height(); ++r) {
    for (std::size_t c = 0; c < field.width(); ++c) {
      const double e = std::norm(field(r, c));
      total += e;
      const double dy = static_cast<double>(r) - cr;
      const double dx = static_cast<double>(c) - cc;
      if (dx * dx + dy * dy > radius * radius) outside += e;
    }
  }
  return total > 0.0 ? outside / total : 0.0;
}

Probe make_probe(std::size_t frame_size, double fwhm_px) {
  if (!is_power_of_two(frame_size) || frame_size < 8) {
    throw ArgumentError("make_probe: frame size must be a power of two >= 8");
  }
  if (!(fwhm_px >= 2.0)) throw ArgumentError("make_probe: fwhm_px must be >= 2");
  if (fwhm_px > static_cast<double>(frame_size) / 4.0) {
    throw ArgumentError("make_probe: fwhm_px " + std::to_string(fwhm_px) + " too large for a " +
                        std::to_string(frame_size) + " px window");
  }
  // An Airy intensity pattern has FWHM ≈ 1.029 N / D for an aperture of
  // diameter D frequency pixels. Search around that estimate on a fine radius
  // grid, since the discrete disk makes FWHM piecewise constant in radius.
  const double n = static_cast<double>(frame_size);
  const double estimate = 0.5 * 1.029 * n / fwhm_px;
  double best_radius = estimate;
  double best_err = std::numeric_limits<double>::infinity();
  for (double radius = 0.6 * estimate; radius <= 1.4 * estimate; radius += 0.01) {
    const double err = std::abs(measure_fwhm(aperture_probe(frame_size, radius)) - fwhm_px);
    if (err < best_err - 1e-12) {
      best_err = err;
      best_radius = radius;
    }
  }
  return Probe{aperture_probe(frame_size, best_radius), fwhm_px};
}

DiffractionStack diffract(const ObjectSample& object, const Probe& probe, const ScanGrid& grid) {
  const std::size_t n = probe.field.height();
  if (probe.field.width() != n) throw ShapeError("diffract: probe must be square");
  const auto& obj = object.transmission;
  grid.check_fits(obj.height(), obj.width(), n);

  DiffractionStack stack;
  stack.grid = grid;
  stack.frames.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t j) {
    const auto& pos = grid.positions[j];
    ComplexField2D exit(n, n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) exit(r, c) = probe.field(r, c) * obj(pos.row + r, pos.col + c);
    }
    std::vector<Complex> scratch;
    fft2c_inplace(exit, scratch);
    RealImage2D frame(n, n);
    for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = std::norm(exit[i]);
    stack.frames[j] = std::move(frame);
  });
  return stack;
}

std::uint64_t sample_poisson(SeededRng& rng, double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) throw ArgumentError("sample_poisson: invalid mean");
  if (mean == 0.0) return 0;
  if (mean < 10.0) {
    const double u = rng.next_double();
    double p = std::exp(-mean);
    double cdf = p;
    std::uint64_t k = 0;
    while (u > cdf && k < 1000) {
      ++k;
      p *= mean / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  while (true) {
    const double u = rng.next_double() - 0.5;
    const double v = rng.next_double();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -mean + k * loglam - std::lgamma(k + 1.0)) {
      return static_cast<std::uint64_t>(k);
    }
  }
}

DiffractionStack add_poisson(const DiffractionStack& stack, double photon_budget, SeededRng& rng) {
  if (!(photon_budget > 0.0)) throw ArgumentError("add_poisson: photon budget must be positive");
  DiffractionStack out;
  out.grid = stack.grid;
  out.photon_budget = photon_budget;
  out.frames.reserve(stack.size());
  for (const auto& frame : stack.frames) {
    double total = 0.0;
    for (double v : frame.values()) total += v;
    RealImage2D noisy(frame.height(), frame.width());
    if (total > 0.0) {
      const double scale = photon_budget / total;
      for (std::size_t i = 0; i < frame.size(); ++i) {
        noisy[i] = static_cast<double>(sample_poisson(rng, frame[i] * scale));
      }
    }
    out.frames.push_back(std::move(noisy));
  }
  return out;
}

}  // namespace ptychoforge
