#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ptychoforge/dataset.hpp"
#include "ptychoforge/numerics.hpp"
#include "ptychoforge/scan_geometry.hpp"

namespace ptychoforge {

/// Accumulated patches. `final` is sum / weight where count > 0 and 0 on
/// uncovered pixels (see covered()).
struct StitchCanvas {
  RealImage2D sum;
  RealImage2D weight;               // equals count for uniform averaging
  Image2D<std::uint32_t> count;     // patches overlapping each pixel
  RealImage2D final;

  Mask2D covered() const;
};

/// Average of the patches over their windows. Patches are single precision
/// and accumulated in double, so the average of identical values is exact.
/// With `weights` (N_p x N_p, e.g. |P|²) each pixel is weighted accordingly.
StitchCanvas stitch_average(const FrameStack& patches, const ScanGrid& grid, std::size_t height,
                            std::size_t width, const RealImage2D* weights = nullptr);

/// Maps to (−π, π].
double wrap_phase(double radians);

/// Mean over the mask of |wrap(pred − ref)|.
double wrapped_phase_mae(const RealImage2D& pred, const RealImage2D& ref, const Mask2D& mask);

/// Least-squares scalar c minimizing Σ_mask |c·rec − ref|². Returns 0 when
/// rec vanishes on the mask.
Complex alignment_scalar(const ComplexField2D& rec, const ComplexField2D& ref, const Mask2D& mask);

/// Σ_mask|c·rec − ref|² / Σ_mask|ref|² with c from alignment_scalar; 1 if
/// rec ≡ 0 on the mask.
double aligned_complex_nmse(const ComplexField2D& rec, const ComplexField2D& ref, const Mask2D& mask);

/// Pixels where Σ_j |P(r − r_j)|² reaches threshold_frac of its maximum.
Mask2D illuminated_mask(const ComplexField2D& probe, const ScanGrid& grid, std::size_t height,
                        std::size_t width, double threshold_frac = 0.05);

/// Mask of pixels covered by at least one window (no probe weighting).
Mask2D window_union_mask(const ScanGrid& grid, std::size_t window, std::size_t height, std::size_t width);

std::size_t mask_count(const Mask2D& mask);
Mask2D mask_and(const Mask2D& a, const Mask2D& b);

struct MetricsRecord {
  double amp_mae = 0.0;  // in units of amp_scale
  double phase_mae_wrapped = 0.0;
  double nmse_complex = 0.0;
  std::size_t mask_pixels = 0;
};

/// Quality of `rec` against `truth` on the mask. With `align`, rec is first
/// multiplied by the alignment scalar (needed for ePIE output, whose global
/// phase and scale are arbitrary). nmse_complex is always aligned.
MetricsRecord evaluate_reconstruction(const ComplexField2D& rec, const ComplexField2D& truth, const Mask2D& mask,
                                      double amp_scale, bool align);

struct MetricsRow {
  std::string run_id;
  std::size_t factor = 1;
  std::size_t train_size = 0;
  MetricsRecord metrics;
  double ms_per_frame = 0.0;
};

inline constexpr const char* kMetricsHeader = "run_id,factor,train_size,amp_mae,phase_mae,nmse,ms_per_frame";

/// Appends rows, writing the header first if the file is new or empty.
void append_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace ptychoforge
