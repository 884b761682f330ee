#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace ptychoforge {

/// Far-field experiment geometry. Lengths in meters, frame size in pixels.
struct Geometry {
  double wavelength = 1.24e-10;  // tool default; no photon energy is given for the reference setup
  double detector_distance = 9.0;
  double detector_pixel = 55e-6;
  std::size_t frame_size = 64;

  /// Real-space object pixel, λz / (N_p · p_det).
  double object_pixel() const;
};

/// λz / (N_p · p_det). Throws ArgumentError on nonpositive input.
double pixel_size(double wavelength, double detector_distance, std::size_t frame_size,
                  double detector_pixel);

/// Top-left corner of a probe window, in object pixels.
struct ScanPosition {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const ScanPosition&, const ScanPosition&) = default;
};

struct ScanGrid {
  std::vector<ScanPosition> positions;  // row-major
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t step_px = 0;

  std::size_t size() const noexcept { return positions.size(); }
  /// Smallest object extent that contains every window of width `window`.
  std::size_t required_height(std::size_t window) const;
  std::size_t required_width(std::size_t window) const;
  /// Throws GeometryError if any window leaves a height x width object.
  void check_fits(std::size_t height, std::size_t width, std::size_t window) const;

  friend bool operator==(const ScanGrid&, const ScanGrid&) = default;
};

/// Row-major raster; position (i, j) = (margin + i*step, margin + j*step).
ScanGrid raster_positions(std::size_t rows, std::size_t cols, std::size_t step_px,
                          std::size_t margin_px);

/// Keep rows and columns whose index is a multiple of `factor`.
ScanGrid subsample_grid(const ScanGrid& grid, std::size_t factor);

/// Indices into `grid.positions` kept by subsample_grid(grid, factor).
std::vector<std::size_t> subsample_indices(const ScanGrid& grid, std::size_t factor);

/// Contiguous block of grid rows [row_begin, row_end) as its own grid.
ScanGrid grid_rows(const ScanGrid& grid, std::size_t row_begin, std::size_t row_end);

/// Linear overlap (w - s) / w of two windows of width w offset by s (0 if s >= w).
double overlap_fraction(double window, double step);

/// CSV with header `row_px,col_px`, one position per line, row-major.
void write_grid_csv(const ScanGrid& grid, const std::filesystem::path& path);
/// Reads positions back. rows/cols are recovered from the distinct coordinates.
ScanGrid read_grid_csv(const std::filesystem::path& path);

}  // namespace ptychoforge
