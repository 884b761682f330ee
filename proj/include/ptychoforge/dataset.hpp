#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ptychoforge/numerics.hpp"
#include "ptychoforge/scan_geometry.hpp"
#include "ptychoforge/simulator.hpp"

namespace ptychoforge {

/// J equally sized single-precision frames stored contiguously.
struct FrameStack {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  FrameStack() = default;
  FrameStack(std::size_t j, std::size_t h, std::size_t w) : count(j), height(h), width(w), data(j * h * w, 0.0f) {}

  std::size_t frame_elems() const noexcept { return height * width; }
  std::span<float> frame(std::size_t j) { return {data.data() + j * frame_elems(), frame_elems()}; }
  std::span<const float> frame(std::size_t j) const { return {data.data() + j * frame_elems(), frame_elems()}; }
  RealImage2D image(std::size_t j) const;
  void set(std::size_t j, const RealImage2D& img, double scale = 1.0);
  FrameStack select(const std::vector<std::size_t>& ids) const;
};

struct NormMeta {
  double diff_scale = 1.0;  // raw intensity = normalized * diff_scale
  double amp_scale = 1.0;   // raw amplitude = normalized * amp_scale
};

struct TripletDataset {
  FrameStack diffraction;  // normalized intensities
  FrameStack amplitude;    // normalized amplitudes
  FrameStack phase;        // radians, unscaled
  ScanGrid grid;
  NormMeta norm;

  std::size_t size() const noexcept { return diffraction.count; }
  TripletDataset select(const std::vector<std::size_t>& ids) const;
};

struct SplitIndex {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> val_ids;
  std::uint64_t seed = 0;
};

/// Copy of the N_p x N_p window whose top-left corner is `position`.
RealImage2D extract_patch(const RealImage2D& image, const ScanPosition& position, std::size_t size);

/// Scales from the records in `ids` (all records when empty): the largest
/// diffraction value and the largest amplitude under any window.
NormMeta compute_norm(const DiffractionStack& stack, const RealImage2D& amplitude_image,
                      const ScanGrid& grid, const std::vector<std::size_t>& ids = {});

/// One (frame, amplitude patch, phase patch) record per grid position.
/// Without `norm`, scales are computed over every record.
TripletDataset build_triplets(const DiffractionStack& stack, const RealImage2D& amplitude_image,
                              const RealImage2D& phase_image, const ScanGrid& grid,
                              const std::optional<NormMeta>& norm = std::nullopt);

/// Seeded permutation; the first J - round(J/10) indices train, the rest validate.
SplitIndex split_90_10(std::size_t count, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const TripletDataset& dataset);
TripletDataset load_dataset(const std::filesystem::path& path);

}  // namespace ptychoforge
