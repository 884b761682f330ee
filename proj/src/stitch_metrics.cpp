#include "ptychoforge/stitch_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ptychoforge/errors.hpp"

namespace ptychoforge {

Mask2D StitchCanvas::covered() const {
  Mask2D mask(count.height(), count.width(), 0);
  for (std::size_t i = 0; i < count.size(); ++i) mask[i] = count[i] > 0 ? 1 : 0;
  return mask;
}

StitchCanvas stitch_average(const FrameStack& patches, const ScanGrid& grid, std::size_t height,
                            std::size_t width, const RealImage2D* weights) {
  if (patches.count != grid.size()) throw ShapeError("stitch_average: patch count differs from grid size");
  if (patches.height != patches.width) throw ShapeError("stitch_average: patches must be square");
  const std::size_t n = patches.height;
  if (weights && (weights->height() != n || weights->width() != n)) {
    throw ShapeError("stitch_average: weight window differs from patch size");
  }
  grid.check_fits(height, width, n);

  StitchCanvas canvas{RealImage2D(height, width, 0.0), RealImage2D(height, width, 0.0),
                      Image2D<std::uint32_t>(height, width, 0), RealImage2D(height, width, 0.0)};
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const auto patch = patches.frame(j);
    const auto& pos = grid.positions[j];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double w = weights ? (*weights)(r, c) : 1.0;
        canvas.sum(pos.row + r, pos.col + c) += w * static_cast<double>(patch[r * n + c]);
        canvas.weight(pos.row + r, pos.col + c) += w;
        canvas.count(pos.row + r, pos.col + c) += 1;
      }
    }
  }
  for (std::size_t i = 0; i < canvas.final.size(); ++i) {
    if (canvas.count[i] > 0 && canvas.weight[i] > 0.0) canvas.final[i] = canvas.sum[i] / canvas.weight[i];
  }
  return canvas;
}

double wrap_phase(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  const double wrapped = r - std::numbers::pi;
  return wrapped <= -std::numbers::pi ? std::numbers::pi : wrapped;
}

namespace {

void check_mask(const Mask2D& mask, std::size_t h, std::size_t w, const char* who) {
  if (mask.height() != h || mask.width() != w) throw ShapeError(std::string(who) + ": mask shape mismatch");
  if (mask_count(mask) == 0) throw ArgumentError(std::string(who) + ": empty mask");
}

}  // namespace

double wrapped_phase_mae(const RealImage2D& pred, const RealImage2D& ref, const Mask2D& mask) {
  if (!pred.same_shape(ref)) throw ShapeError("wrapped_phase_mae: shape mismatch");
  check_mask(mask, pred.height(), pred.width(), "wrapped_phase_mae");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    sum += std::abs(wrap_phase(pred[i] - ref[i]));
    ++n;
  }
  return sum / static_cast<double>(n);
}

Complex alignment_scalar(const ComplexField2D& rec, const ComplexField2D& ref, const Mask2D& mask) {
  if (!rec.same_shape(ref)) throw ShapeError("alignment_scalar: shape mismatch");
  check_mask(mask, rec.height(), rec.width(), "alignment_scalar");
  Complex cross(0.0, 0.0);
  double rec_energy = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (!mask[i]) continue;
    cross += ref[i] * std::conj(rec[i]);
    rec_energy += std::norm(rec[i]);
  }
  return rec_energy > 0.0 ? cross / rec_energy : Complex(0.0, 0.0);
}

double aligned_complex_nmse(const ComplexField2D& rec, const ComplexField2D& ref, const Mask2D& mask) {
  if (!rec.same_shape(ref)) throw ShapeError("aligned_complex_nmse: shape mismatch");
  check_mask(mask, rec.height(), rec.width(), "aligned_complex_nmse");
  double ref_energy = 0.0;
  double rec_energy = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (!mask[i]) continue;
    ref_energy += std::norm(ref[i]);
    rec_energy += std::norm(rec[i]);
  }
  if (!(ref_energy > 0.0)) throw ArgumentError("aligned_complex_nmse: reference is zero on the mask");
  if (!(rec_energy > 0.0)) return 1.0;
  const Complex c = alignment_scalar(rec, ref, mask);
  double err = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (mask[i]) err += std::norm(c * rec[i] - ref[i]);
  }
  // The optimal c can only lower the error below that of c = 0, which is 1;
  // clamp the rounding excess.
  return std::min(1.0, err / ref_energy);
}

Mask2D illuminated_mask(const ComplexField2D& probe, const ScanGrid& grid, std::size_t height, std::size_t width,
                        double threshold_frac) {
  if (!(threshold_frac > 0.0 && threshold_frac < 1.0)) {
    throw ArgumentError("illuminated_mask: threshold_frac must lie in (0, 1)");
  }
  const std::size_t n = probe.height();
  grid.check_fits(height, width, n);
  RealImage2D acc(height, width, 0.0);
  for (const auto& pos : grid.positions) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < probe.width(); ++c) acc(pos.row + r, pos.col + c) += std::norm(probe(r, c));
    }
  }
  double peak = 0.0;
  for (double v : acc.values()) peak = std::max(peak, v);
  Mask2D mask(height, width, 0);
  if (peak <= 0.0) return mask;
  const double cut = threshold_frac * peak;
  for (std::size_t i = 0; i < acc.size(); ++i) mask[i] = acc[i] >= cut ? 1 : 0;
  return mask;
}

Mask2D window_union_mask(const ScanGrid& grid, std::size_t window, std::size_t height, std::size_t width) {
  grid.check_fits(height, width, window);
  Mask2D mask(height, width, 0);
  for (const auto& pos : grid.positions) {
    for (std::size_t r = 0; r < window; ++r) {
      for (std::size_t c = 0; c < window; ++c) mask(pos.row + r, pos.col + c) = 1;
    }
  }
  return mask;
}

std::size_t mask_count(const Mask2D& mask) {
  std::size_t n = 0;
  for (auto v : mask.values()) n += v ? 1 : 0;
  return n;
}

Mask2D mask_and(const Mask2D& a, const Mask2D& b) {
  if (!a.same_shape(b)) throw ShapeError("mask_and: shape mismatch");
  Mask2D out(a.height(), a.width(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] && b[i]) ? 1 : 0;
  return out;
}

MetricsRecord evaluate_reconstruction(const ComplexField2D& rec, const ComplexField2D& truth, const Mask2D& mask,
                                      double amp_scale, bool align) {
  if (!(amp_scale > 0.0)) throw ArgumentError("evaluate_reconstruction: amp_scale must be positive");
  ComplexField2D est = rec;
  if (align) {
    const Complex c = alignment_scalar(rec, truth, mask);
    for (auto& z : est.storage()) z *= c;
  }
  MetricsRecord m;
  m.mask_pixels = mask_count(mask);
  m.nmse_complex = aligned_complex_nmse(rec, truth, mask);
  double amp = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (mask[i]) amp += std::abs(std::abs(est[i]) - std::abs(truth[i]));
  }
  m.amp_mae = amp / static_cast<double>(m.mask_pixels) / amp_scale;
  m.phase_mae_wrapped = wrapped_phase_mae(phase(est), phase(truth), mask);
  return m;
}

void append_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  if (fresh) out << kMetricsHeader << '\n';
  out << std::setprecision(10);
  for (const auto& r : rows) {
    if (r.run_id.find_first_of(",\n") != std::string::npos) throw ArgumentError("run_id must not contain ',' or newlines");
    out << r.run_id << ',' << r.factor << ',' << r.train_size << ',' << r.metrics.amp_mae << ','
        << r.metrics.phase_mae_wrapped << ',' << r.metrics.nmse_complex << ',' << r.ms_per_frame << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError(path.string() + ": unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 7) throw DataError(path.string() + ": malformed metrics row '" + line + "'");
    MetricsRow r;
    try {
      r.run_id = cells[0];
      r.factor = std::stoul(cells[1]);
      r.train_size = std::stoul(cells[2]);
      r.metrics.amp_mae = std::stod(cells[3]);
      r.metrics.phase_mae_wrapped = std::stod(cells[4]);
      r.metrics.nmse_complex = std::stod(cells[5]);
      r.ms_per_frame = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed metrics row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace ptychoforge
