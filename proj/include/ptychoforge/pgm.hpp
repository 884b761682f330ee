#pragma once

#include <filesystem>

#include "ptychoforge/numerics.hpp"

namespace ptychoforge {

/// Binary 16-bit PGM ("P5", maxval 65535, big-endian samples). Values are
/// mapped linearly from [min, max] onto [0, 65535] and clipped.
void export_pgm(const RealImage2D& image, const std::filesystem::path& path, double min, double max);

/// Reads a 16-bit P5 file back into raw sample values (0..65535).
Image2D<std::uint16_t> read_pgm16(const std::filesystem::path& path);

}  // namespace ptychoforge
