#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ptychoforge/errors.hpp"

namespace ptychoforge {

using Complex = std::complex<double>;

/// Dense row-major 2-D array. Shape is fixed at construction.
template <typename T>
class Image2D {
 public:
  Image2D() = default;
  Image2D(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {}
  Image2D(std::size_t height, std::size_t width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_) {
      throw ShapeError("Image2D: data length does not match height*width");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
  const T& operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const auto& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

using RealImage2D = Image2D<double>;
using ComplexField2D = Image2D<Complex>;
using Mask2D = Image2D<std::uint8_t>;

/// Σ |x|² over the field.
double energy(const ComplexField2D& field);

/// Modulus and argument images of a complex field.
RealImage2D modulus(const ComplexField2D& field);
RealImage2D phase(const ComplexField2D& field);
ComplexField2D from_polar(const RealImage2D& amplitude, const RealImage2D& phase);

/// xoshiro256** (Blackman & Vigna, 2018) seeded through splitmix64.
///
/// Every derived sampler below is implemented here rather than through
/// <random> distributions, whose algorithms are implementation-defined; the
/// stream for a given seed is therefore identical on every platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double next_double();
  /// Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t next_below(std::uint64_t bound);
  /// Standard normal via the Box-Muller transform (one value per call).
  double next_normal();

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
};

/// n values uniform in [lo, hi). Throws ArgumentError unless lo < hi.
std::vector<double> rng_uniform(SeededRng& rng, std::size_t n, double lo, double hi);

/// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> random_permutation(SeededRng& rng, std::size_t n);

/// Derive an independent child seed from a parent seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag);

bool is_power_of_two(std::size_t n) noexcept;

/// Unitary, centered 2-D DFT (ifftshift -> FFT -> fftshift, scaled 1/sqrt(HW)).
/// Both dimensions must be powers of two.
ComplexField2D fft2c(const ComplexField2D& field);
ComplexField2D ifft2c(const ComplexField2D& field);

/// In-place variants used by hot loops; `scratch` is resized as needed.
void fft2c_inplace(ComplexField2D& field, std::vector<Complex>& scratch);
void ifft2c_inplace(ComplexField2D& field, std::vector<Complex>& scratch);

/// Worker count for parallel sections: PTYCHOFORGE_THREADS caps it, and
/// deterministic mode forces 1.
std::size_t worker_count();
void set_deterministic(bool on);
bool deterministic_mode();

/// Run fn(i) for i in [0, n). Each index must write only its own outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ptychoforge
