#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ptychoforge/numerics.hpp"

namespace ptychoforge {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, C64 = 2 };

/// An n-dimensional array as stored in a PTYT container.
///
/// Layout (little-endian): "PTYT", u16 version = 1, u8 dtype, u8 ndim,
/// ndim x u64 dims, row-major payload. C64 values are interleaved (re, im)
/// f32 pairs and are held in `f32` with twice the element count.
struct Tensor {
  DType dtype = DType::F64;
  std::vector<std::uint64_t> dims;  // empty: scalar
  std::vector<float> f32;           // F32 and C64 payloads
  std::vector<double> f64;          // F64 payload

  std::uint64_t element_count() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;

  static Tensor from_f32(std::vector<std::uint64_t> dims, std::vector<float> values);
  static Tensor from_f64(std::vector<std::uint64_t> dims, std::vector<double> values);
};

inline constexpr std::uint16_t kPtytVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
/// Decodes one PTYT blob starting at `offset`; advances `offset` past it.
/// `base_offset` is added to byte offsets reported in FormatError.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset,
                     std::uint64_t base_offset = 0);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

/// Ordered named tensors ("PTYB": magic, u16 version, u32 count, then records
/// of u16 name length, UTF-8 name, embedded PTYT blob).
using TensorBundle = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> encode_bundle(const TensorBundle& bundle);
TensorBundle decode_bundle(const std::vector<std::uint8_t>& bytes);
void save_bundle(const std::filesystem::path& path, const TensorBundle& bundle);
TensorBundle load_bundle(const std::filesystem::path& path);
const Tensor& bundle_get(const TensorBundle& bundle, const std::string& name);

// Conversions between library types and tensors.
Tensor to_tensor(const RealImage2D& image);
Tensor to_tensor(const ComplexField2D& field);  // stored as C64
Tensor to_tensor(const std::vector<RealImage2D>& stack, DType dtype = DType::F64);
RealImage2D real_image_from(const Tensor& tensor);
ComplexField2D complex_field_from(const Tensor& tensor);
std::vector<RealImage2D> image_stack_from(const Tensor& tensor);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace ptychoforge
