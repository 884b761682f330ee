#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ptychoforge/numerics.hpp"
#include "ptychoforge/scan_geometry.hpp"

namespace ptychoforge {

/// Complex transmission A(r)·exp(iφ(r)) of the synthetic test pattern.
struct ObjectSample {
  ComplexField2D transmission;
  double a_min = 1.0;
  double phi_max = 0.0;
};

struct Probe {
  ComplexField2D field;  // N_p x N_p, unit total energy
  double fwhm_px = 0.0;  // requested intensity FWHM
};

/// J far-field intensity frames aligned with `grid`.
struct DiffractionStack {
  std::vector<RealImage2D> frames;
  ScanGrid grid;
  std::optional<double> photon_budget;  // nullopt: noiseless

  std::size_t size() const noexcept { return frames.size(); }
  std::size_t frame_size() const noexcept { return frames.empty() ? 0 : frames.front().height(); }
  /// Frames (and grid entries) at the given indices, in that order.
  DiffractionStack select(const std::vector<std::size_t>& indices) const;
};

struct ObjectOptions {
  double a_min = 0.7;
  double phi_max = 1.0;
  std::size_t blur_px = 3;
  double fill_fraction = 0.4;    // target share of etched pixels
  double feature_min_px = 4.0;   // shortest feature extent
  double feature_max_px = 24.0;  // longest feature extent
};

/// Two-level etched pattern of random disks and rectangles. Etched pixels
/// take amplitude a_min and phase phi_max, the background 1 and 0; both maps
/// are then smoothed by a normalized box kernel of width blur_px.
ObjectSample make_test_object(std::size_t height, std::size_t width, SeededRng& rng,
                              const ObjectOptions& options = {});

/// Airy-like probe: centered inverse transform of a filled circular aperture
/// whose radius is chosen so the intensity FWHM matches fwhm_px.
Probe make_probe(std::size_t frame_size, double fwhm_px);

/// FWHM (pixels) of |field|² along the row and column through its maximum,
/// averaged; half-maximum crossings are linearly interpolated.
double measure_fwhm(const ComplexField2D& field);

/// Fraction of Σ|P|² lying farther than `radius` pixels from the window center.
double energy_outside_radius(const ComplexField2D& field, double radius);

/// frame_j = |fft2c(P ⊙ O[window_j])|². Frames are independent and may be
/// computed in parallel; the output order always follows the grid.
DiffractionStack diffract(const ObjectSample& object, const Probe& probe, const ScanGrid& grid);

/// Scale each frame to an expected total of photon_budget, then draw Poisson
/// counts per pixel from the seeded stream in frame order.
DiffractionStack add_poisson(const DiffractionStack& stack, double photon_budget, SeededRng& rng);

/// Poisson variate: inverse-CDF search below mean 10, otherwise Hörmann's
/// transformed rejection with squeeze (PTRS).
std::uint64_t sample_poisson(SeededRng& rng, double mean);

}  // namespace ptychoforge
