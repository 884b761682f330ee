#include "ptychoforge/scan_geometry.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ptychoforge/errors.hpp"

namespace ptychoforge {

double pixel_size(double wavelength, double detector_distance, std::size_t frame_size,
                  double detector_pixel) {
  if (!(wavelength > 0.0) || !(detector_distance > 0.0) || frame_size == 0 ||
      !(detector_pixel > 0.0)) {
    throw ArgumentError("pixel_size: all geometry inputs must be strictly positive");
  }
  return wavelength * detector_distance / (static_cast<double>(frame_size) * detector_pixel);
}

double Geometry::object_pixel() const {
  return pixel_size(wavelength, detector_distance, frame_size, detector_pixel);
}

std::size_t ScanGrid::required_height(std::size_t window) const {
  std::size_t h = 0;
  for (const auto& p : positions) h = std::max(h, p.row + window);
  return h;
}

std::size_t ScanGrid::required_width(std::size_t window) const {
  std::size_t w = 0;
  for (const auto& p : positions) w = std::max(w, p.col + window);
  return w;
}

void ScanGrid::check_fits(std::size_t height, std::size_t width, std::size_t window) const {
  for (const auto& p : positions) {
    if (p.row + window > height || p.col + window > width) {
      std::ostringstream msg;
      msg << "probe window at (" << p.row << "," << p.col << ") of size " << window
          << " exceeds object " << height << "x" << width;
      throw GeometryError(msg.str());
    }
  }
}

ScanGrid raster_positions(std::size_t rows, std::size_t cols, std::size_t step_px,
                          std::size_t margin_px) {
  if (rows == 0 || cols == 0) throw ArgumentError("raster_positions: rows and cols must be >= 1");
  ScanGrid grid;
  grid.rows = rows;
  grid.cols = cols;
  grid.step_px = step_px;
  grid.positions.reserve(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      grid.positions.push_back({margin_px + i * step_px, margin_px + j * step_px});
    }
  }
  return grid;
}

std::vector<std::size_t> subsample_indices(const ScanGrid& grid, std::size_t factor) {
  if (factor == 0) throw ArgumentError("subsample_grid: factor must be >= 1");
  if (grid.positions.size() != grid.rows * grid.cols) {
    throw ShapeError("subsample_grid: grid is not a complete rows x cols raster");
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < grid.rows; i += factor) {
    for (std::size_t j = 0; j < grid.cols; j += factor) kept.push_back(i * grid.cols + j);
  }
  return kept;
}

ScanGrid subsample_grid(const ScanGrid& grid, std::size_t factor) {
  const auto kept = subsample_indices(grid, factor);
  ScanGrid out;
  out.rows = (grid.rows + factor - 1) / factor;
  out.cols = (grid.cols + factor - 1) / factor;
  out.step_px = grid.step_px * factor;
  out.positions.reserve(kept.size());
  for (auto idx : kept) out.positions.push_back(grid.positions[idx]);
  return out;
}

ScanGrid grid_rows(const ScanGrid& grid, std::size_t row_begin, std::size_t row_end) {
  if (row_begin >= row_end || row_end > grid.rows) {
    throw ArgumentError("grid_rows: invalid row range");
  }
  ScanGrid out;
  out.rows = row_end - row_begin;
  out.cols = grid.cols;
  out.step_px = grid.step_px;
  out.positions.assign(grid.positions.begin() + static_cast<std::ptrdiff_t>(row_begin * grid.cols),
                       grid.positions.begin() + static_cast<std::ptrdiff_t>(row_end * grid.cols));
  return out;
}

double overlap_fraction(double window, double step) {
  if (!(window > 0.0) || step < 0.0) throw ArgumentError("overlap_fraction: invalid widths");
  return step >= window ? 0.0 : (window - step) / window;
}

void write_grid_csv(const ScanGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "row_px,col_px\n";
  for (const auto& p : grid.positions) out << p.row << ',' << p.col << '\n';
}

ScanGrid read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path.string());
  std::string line;
  std::getline(in, line);
  if (line != "row_px,col_px") throw DataError(path.string() + ": expected header row_px,col_px");
  ScanGrid grid;
  std::set<std::size_t> rows;
  std::set<std::size_t> cols;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    ScanPosition p;
    try {
      if (comma == std::string::npos) throw std::invalid_argument(line);
      std::size_t used_row = 0;
      std::size_t used_col = 0;
      const std::string row_text = line.substr(0, comma);
      const std::string col_text = line.substr(comma + 1);
      p = {std::stoul(row_text, &used_row), std::stoul(col_text, &used_col)};
      if (used_row != row_text.size() || used_col != col_text.size() || row_text.find('-') != std::string::npos ||
          col_text.find('-') != std::string::npos) {
        throw std::invalid_argument(line);
      }
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ": malformed line '" + line + "'");
    }
    rows.insert(p.row);
    cols.insert(p.col);
    grid.positions.push_back(p);
  }
  grid.rows = rows.size();
  grid.cols = cols.size();
  if (rows.size() > 1) grid.step_px = *std::next(rows.begin()) - *rows.begin();
  else if (cols.size() > 1) grid.step_px = *std::next(cols.begin()) - *cols.begin();
  return grid;
}

}  // namespace ptychoforge
