#include "ptychoforge/epie.hpp"

#include <cmath>
#include <numbers>

namespace ptychoforge {

void EpieConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 2.0)) throw ArgumentError("EpieConfig: alpha must lie in (0, 2]");
  if (!(beta > 0.0 && beta <= 2.0)) throw ArgumentError("EpieConfig: beta must lie in (0, 2]");
}

namespace {

void check_window(const ComplexField2D& object, const ComplexField2D& probe, const ScanPosition& pos) {
  if (pos.row + probe.height() > object.height() || pos.col + probe.width() > object.width()) {
    throw GeometryError("probe window at (" + std::to_string(pos.row) + "," + std::to_string(pos.col) +
                        ") exceeds object bounds");
  }
}

void exit_wave_into(const ComplexField2D& object, const ComplexField2D& probe, const ScanPosition& pos,
                    ComplexField2D& out) {
  const std::size_t h = probe.height();
  const std::size_t w = probe.width();
  for (std::size_t r = 0; r < h; ++r) {
    const Complex* o = &object(pos.row + r, pos.col);
    const Complex* p = &probe(r, 0);
    Complex* dst = &out(r, 0);
    for (std::size_t c = 0; c < w; ++c) {
      const double re = p[c].real() * o[c].real() - p[c].imag() * o[c].imag();
      const double im = p[c].real() * o[c].imag() + p[c].imag() * o[c].real();
      dst[c] = Complex(re, im);
    }
  }
}

// Modulus projection against a precomputed √I.
// The modulus is taken as sqrt(re² + im²) rather than std::abs (hypot),
// which is several times slower; field values here are far from overflow.
void project_inplace(ComplexField2D& farfield, const RealImage2D& amplitude) {
  auto* f = reinterpret_cast<double*>(farfield.storage().data());
  const double* a = amplitude.storage().data();
  for (std::size_t i = 0; i < farfield.size(); ++i) {
    const double re = f[2 * i];
    const double im = f[2 * i + 1];
    const double mag = std::sqrt(re * re + im * im);
    if (mag > 0.0) {
      const double s = a[i] / mag;
      f[2 * i] = re * s;
      f[2 * i + 1] = im * s;
    } else {
      f[2 * i] = a[i];
      f[2 * i + 1] = 0.0;
    }
  }
}

// dst += step · conj(a) · b over one row of n values.
void add_conj_product(Complex* dst, const Complex* a, const Complex* b, std::size_t n, double step) {
  auto* d = reinterpret_cast<double*>(dst);
  const auto* x = reinterpret_cast<const double*>(a);
  const auto* y = reinterpret_cast<const double*>(b);
  for (std::size_t c = 0; c < 2 * n; c += 2) {
    d[c] += step * (x[c] * y[c] + x[c + 1] * y[c + 1]);
    d[c + 1] += step * (x[c] * y[c + 1] - x[c + 1] * y[c]);
  }
}

}  // namespace

ComplexField2D exit_wave(const ComplexField2D& object_est, const ComplexField2D& probe_est,
                         const ScanPosition& position) {
  check_window(object_est, probe_est, position);
  ComplexField2D out(probe_est.height(), probe_est.width());
  exit_wave_into(object_est, probe_est, position, out);
  return out;
}

ComplexField2D modulus_project(const ComplexField2D& farfield, const RealImage2D& measured) {
  if (!farfield.same_shape(measured)) throw ShapeError("modulus_project: shape mismatch");
  RealImage2D amplitude(measured.height(), measured.width());
  for (std::size_t i = 0; i < measured.size(); ++i) {
    if (!(measured[i] >= 0.0)) throw DataError("modulus_project: negative measured intensity");
    amplitude[i] = std::sqrt(measured[i]);
  }
  ComplexField2D out = farfield;
  project_inplace(out, amplitude);
  return out;
}

void update_object(ComplexField2D& object_est, const ComplexField2D& probe_est,
                   const ScanPosition& position, const ComplexField2D& delta_psi, double alpha) {
  check_window(object_est, probe_est, position);
  if (!probe_est.same_shape(delta_psi)) throw ShapeError("update_object: Δψ shape mismatch");
  double max_intensity = 0.0;
  for (const auto& p : probe_est.values()) {
    max_intensity = std::max(max_intensity, p.real() * p.real() + p.imag() * p.imag());
  }
  if (!(max_intensity > 0.0)) throw NumericError("update_object: probe is identically zero");
  const double step = alpha / max_intensity;
  for (std::size_t r = 0; r < probe_est.height(); ++r) {
    add_conj_product(&object_est(position.row + r, position.col), &probe_est(r, 0), &delta_psi(r, 0),
                     probe_est.width(), step);
  }
}

void update_probe(const ComplexField2D& object_est, ComplexField2D& probe_est,
                  const ScanPosition& position, const ComplexField2D& delta_psi, double beta) {
  check_window(object_est, probe_est, position);
  if (!probe_est.same_shape(delta_psi)) throw ShapeError("update_probe: Δψ shape mismatch");
  double max_intensity = 0.0;
  for (std::size_t r = 0; r < probe_est.height(); ++r) {
    for (std::size_t c = 0; c < probe_est.width(); ++c) {
      const Complex o = object_est(position.row + r, position.col + c);
      max_intensity = std::max(max_intensity, o.real() * o.real() + o.imag() * o.imag());
    }
  }
  if (!(max_intensity > 0.0)) throw NumericError("update_probe: object patch is identically zero");
  const double step = beta / max_intensity;
  for (std::size_t r = 0; r < probe_est.height(); ++r) {
    add_conj_product(&probe_est(r, 0), &object_est(position.row + r, position.col), &delta_psi(r, 0),
                     probe_est.width(), step);
  }
}

namespace {

double data_error_sqrt(const ComplexField2D& object, const ComplexField2D& probe,
                       const std::vector<RealImage2D>& amplitudes, const ScanGrid& grid, double total) {
  const std::size_t n = probe.height();
  std::vector<double> partial(grid.size(), 0.0);
  parallel_for(grid.size(), [&](std::size_t j) {
    ComplexField2D psi(n, probe.width());
    std::vector<Complex> scratch;
    exit_wave_into(object, probe, grid.positions[j], psi);
    fft2c_inplace(psi, scratch);
    double sum = 0.0;
    const auto* f = reinterpret_cast<const double*>(psi.storage().data());
    for (std::size_t i = 0; i < psi.size(); ++i) {
      const double d = std::sqrt(f[2 * i] * f[2 * i] + f[2 * i + 1] * f[2 * i + 1]) - amplitudes[j][i];
      sum += d * d;
    }
    partial[j] = sum;
  });
  double numerator = 0.0;
  for (double p : partial) numerator += p;
  return numerator / total;
}

std::vector<RealImage2D> sqrt_frames(const DiffractionStack& stack, double& total) {
  std::vector<RealImage2D> amplitudes;
  amplitudes.reserve(stack.size());
  total = 0.0;
  for (const auto& frame : stack.frames) {
    RealImage2D amp(frame.height(), frame.width());
    for (std::size_t i = 0; i < frame.size(); ++i) {
      if (!(frame[i] >= 0.0)) throw DataError("negative intensity in diffraction stack");
      amp[i] = std::sqrt(frame[i]);
      total += frame[i];
    }
    amplitudes.push_back(std::move(amp));
  }
  return amplitudes;
}

}  // namespace

double data_error(const EpieState& state, const DiffractionStack& stack) {
  if (stack.size() == 0) throw ArgumentError("data_error: empty stack");
  if (stack.grid.size() != stack.size()) throw ShapeError("data_error: grid/stack size mismatch");
  for (const auto& pos : stack.grid.positions) check_window(state.object_est, state.probe_est, pos);
  double total = 0.0;
  const auto amplitudes = sqrt_frames(stack, total);
  if (!(total > 0.0)) throw ArgumentError("data_error: stack has zero total intensity");
  return data_error_sqrt(state.object_est, state.probe_est, amplitudes, stack.grid, total);
}

EpieState reconstruct(const DiffractionStack& stack, const ScanGrid& grid, const EpieConfig& config,
                      const ComplexField2D& init_object, const ComplexField2D& init_probe,
                      const EpieProgress& progress) {
  config.validate();
  if (stack.size() != grid.size()) throw ShapeError("reconstruct: stack and grid sizes differ");
  if (stack.size() == 0) throw ArgumentError("reconstruct: empty stack");
  if (init_probe.height() != stack.frame_size() || init_probe.width() != stack.frame_size()) {
    throw ShapeError("reconstruct: probe shape does not match frame size");
  }
  grid.check_fits(init_object.height(), init_object.width(), init_probe.height());

  EpieState state{init_object, init_probe, {}};
  if (config.iterations == 0) return state;

  double total = 0.0;
  const auto amplitudes = sqrt_frames(stack, total);
  if (!(total > 0.0)) throw ArgumentError("reconstruct: stack has zero total intensity");

  const std::size_t n = init_probe.height();
  SeededRng rng(config.shuffle_seed);
  ComplexField2D psi(n, n);
  ComplexField2D farfield(n, n);
  ComplexField2D probe_before(n, n);
  std::vector<Complex> scratch;
  state.error_history.reserve(config.iterations);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const bool probe_active = it >= config.probe_update_start;
    for (const std::size_t j : random_permutation(rng, grid.size())) {
      const auto& pos = grid.positions[j];
      exit_wave_into(state.object_est, state.probe_est, pos, psi);
      farfield = psi;
      fft2c_inplace(farfield, scratch);
      project_inplace(farfield, amplitudes[j]);
      ifft2c_inplace(farfield, scratch);
      // farfield now holds ψ'; turn it into Δψ = ψ' − ψ.
      for (std::size_t i = 0; i < psi.size(); ++i) farfield[i] -= psi[i];
      if (probe_active) {
        // Both updates read the pre-update estimates.
        probe_before = state.probe_est;
        update_probe(state.object_est, state.probe_est, pos, farfield, config.beta);
        update_object(state.object_est, probe_before, pos, farfield, config.alpha);
      } else {
        update_object(state.object_est, state.probe_est, pos, farfield, config.alpha);
      }
    }
    const double err = data_error_sqrt(state.object_est, state.probe_est, amplitudes, grid, total);
    state.error_history.push_back(err);
    if (progress) progress(it, err);
  }
  return state;
}

ComplexField2D perturb_probe(const ComplexField2D& probe, double noise, SeededRng& rng) {
  ComplexField2D out = probe;
  for (auto& z : out.storage()) {
    const double g1 = rng.next_normal();
    const double g2 = rng.next_normal();
    z *= Complex(1.0 + noise * g1 / std::numbers::sqrt2, noise * g2 / std::numbers::sqrt2);
  }
  return out;
}

}  // namespace ptychoforge
