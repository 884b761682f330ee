#include "ptychoforge/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ptychoforge/errors.hpp"

namespace ptychoforge {

static_assert(std::endian::native == std::endian::little,
              "PTYT encoding assumes a little-endian host");

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor Tensor::from_f32(std::vector<std::uint64_t> dims, std::vector<float> values) {
  Tensor t;
  t.dtype = DType::F32;
  t.dims = std::move(dims);
  t.f32 = std::move(values);
  if (t.f32.size() != t.element_count()) throw ShapeError("Tensor: payload does not match dims");
  return t;
}

Tensor Tensor::from_f64(std::vector<std::uint64_t> dims, std::vector<double> values) {
  Tensor t;
  t.dtype = DType::F64;
  t.dims = std::move(dims);
  t.f64 = std::move(values);
  if (t.f64.size() != t.element_count()) throw ShapeError("Tensor: payload does not match dims");
  return t;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& bytes, std::size_t& offset, std::uint64_t base,
       const char* what) {
  if (offset > bytes.size() || bytes.size() - offset < sizeof(T)) {
    throw FormatError(std::string("truncated stream while reading ") + what, base + offset);
  }
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return value;
}

std::size_t payload_scalars(const Tensor& t) {
  return t.dtype == DType::C64 ? 2 * t.element_count() : t.element_count();
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.dims.size() > 255) throw ShapeError("PTYT supports at most 255 dimensions");
  const std::size_t scalars = payload_scalars(tensor);
  const bool is_f64 = tensor.dtype == DType::F64;
  if ((is_f64 ? tensor.f64.size() : tensor.f32.size()) != scalars) {
    throw ShapeError("encode_tensor: payload does not match dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * tensor.dims.size() + scalars * (is_f64 ? 8 : 4));
  out.insert(out.end(), {'P', 'T', 'Y', 'T'});
  put<std::uint16_t>(out, kPtytVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put<std::uint64_t>(out, d);
  const auto* payload = is_f64 ? reinterpret_cast<const std::uint8_t*>(tensor.f64.data())
                               : reinterpret_cast<const std::uint8_t*>(tensor.f32.data());
  out.insert(out.end(), payload, payload + scalars * (is_f64 ? 8 : 4));
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset,
                     std::uint64_t base_offset) {
  const std::size_t start = offset;
  if (bytes.size() < offset + 4 || std::memcmp(bytes.data() + offset, "PTYT", 4) != 0) {
    throw FormatError("bad magic: expected \"PTYT\"", base_offset + start);
  }
  offset += 4;
  const auto version_at = offset;
  const auto version = take<std::uint16_t>(bytes, offset, base_offset, "version");
  if (version != kPtytVersion) {
    throw FormatError("unsupported PTYT version " + std::to_string(version), base_offset + version_at);
  }
  const auto dtype_at = offset;
  const auto dtype = take<std::uint8_t>(bytes, offset, base_offset, "dtype");
  if (dtype > 2) throw FormatError("unknown dtype " + std::to_string(dtype), base_offset + dtype_at);
  const auto ndim = take<std::uint8_t>(bytes, offset, base_offset, "ndim");
  Tensor t;
  t.dtype = static_cast<DType>(dtype);
  for (std::uint8_t i = 0; i < ndim; ++i) t.dims.push_back(take<std::uint64_t>(bytes, offset, base_offset, "dims"));
  const std::size_t scalars = payload_scalars(t);
  const std::size_t width = t.dtype == DType::F64 ? 8 : 4;
  if ((bytes.size() - offset) / width < scalars) {
    throw FormatError("truncated payload: need " + std::to_string(scalars * width) + " bytes, have " +
                          std::to_string(bytes.size() - offset),
                      base_offset + offset);
  }
  if (t.dtype == DType::F64) {
    t.f64.resize(scalars);
    std::memcpy(t.f64.data(), bytes.data() + offset, scalars * width);
  } else {
    t.f32.resize(scalars);
    std::memcpy(t.f32.data(), bytes.data() + offset, scalars * width);
  }
  offset += scalars * width;
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError(path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_bytes(path, encode_tensor(tensor));
}

Tensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after PTYT payload", offset);
  return t;
}

std::vector<std::uint8_t> encode_bundle(const TensorBundle& bundle) {
  std::vector<std::uint8_t> out{'P', 'T', 'Y', 'B'};
  put<std::uint16_t>(out, kPtytVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.size()));
  for (const auto& [name, tensor] : bundle) {
    if (name.size() > 0xFFFF) throw ArgumentError("bundle record name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto blob = encode_tensor(tensor);
    out.insert(out.end(), blob.begin(), blob.end());
  }
  return out;
}

TensorBundle decode_bundle(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PTYB", 4) != 0) {
    throw FormatError("bad magic: expected \"PTYB\"", 0);
  }
  std::size_t offset = 4;
  const auto version = take<std::uint16_t>(bytes, offset, 0, "version");
  if (version != kPtytVersion) throw FormatError("unsupported PTYB version", 4);
  const auto count = take<std::uint32_t>(bytes, offset, 0, "record count");
  TensorBundle bundle;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = take<std::uint16_t>(bytes, offset, 0, "name length");
    if (bytes.size() - offset < len) throw FormatError("truncated record name", offset);
    std::string name(reinterpret_cast<const char*>(bytes.data() + offset), len);
    offset += len;
    bundle.emplace_back(std::move(name), decode_tensor(bytes, offset));
  }
  if (offset != bytes.size()) throw FormatError("trailing bytes after PTYB records", offset);
  return bundle;
}

void save_bundle(const std::filesystem::path& path, const TensorBundle& bundle) {
  write_file_bytes(path, encode_bundle(bundle));
}

TensorBundle load_bundle(const std::filesystem::path& path) { return decode_bundle(read_file_bytes(path)); }

const Tensor& bundle_get(const TensorBundle& bundle, const std::string& name) {
  for (const auto& [key, tensor] : bundle) {
    if (key == name) return tensor;
  }
  throw FormatError("bundle has no record named '" + name + "'", 0);
}

Tensor to_tensor(const RealImage2D& image) {
  return Tensor::from_f64({image.height(), image.width()}, image.storage());
}

Tensor to_tensor(const ComplexField2D& field) {
  Tensor t;
  t.dtype = DType::C64;
  t.dims = {field.height(), field.width()};
  t.f32.reserve(2 * field.size());
  for (const auto& z : field.values()) {
    t.f32.push_back(static_cast<float>(z.real()));
    t.f32.push_back(static_cast<float>(z.imag()));
  }
  return t;
}

Tensor to_tensor(const std::vector<RealImage2D>& stack, DType dtype) {
  const std::uint64_t h = stack.empty() ? 0 : stack.front().height();
  const std::uint64_t w = stack.empty() ? 0 : stack.front().width();
  Tensor t;
  t.dtype = dtype;
  t.dims = {stack.size(), h, w};
  for (const auto& img : stack) {
    if (img.height() != h || img.width() != w) throw ShapeError("to_tensor: ragged image stack");
    if (dtype == DType::F64) {
      t.f64.insert(t.f64.end(), img.values().begin(), img.values().end());
    } else if (dtype == DType::F32) {
      for (double v : img.values()) t.f32.push_back(static_cast<float>(v));
    } else {
      throw ArgumentError("to_tensor: real stacks must be F32 or F64");
    }
  }
  return t;
}

namespace {
double scalar_at(const Tensor& t, std::size_t i) {
  return t.dtype == DType::F64 ? t.f64[i] : static_cast<double>(t.f32[i]);
}
}  // namespace

RealImage2D real_image_from(const Tensor& tensor) {
  if (tensor.dims.size() != 2 || tensor.dtype == DType::C64) {
    throw ShapeError("real_image_from: expected a 2-D real tensor");
  }
  RealImage2D img(tensor.dims[0], tensor.dims[1]);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = scalar_at(tensor, i);
  return img;
}

ComplexField2D complex_field_from(const Tensor& tensor) {
  if (tensor.dims.size() != 2 || tensor.dtype != DType::C64) {
    throw ShapeError("complex_field_from: expected a 2-D complex tensor");
  }
  ComplexField2D field(tensor.dims[0], tensor.dims[1]);
  for (std::size_t i = 0; i < field.size(); ++i) {
    field[i] = Complex(tensor.f32[2 * i], tensor.f32[2 * i + 1]);
  }
  return field;
}

std::vector<RealImage2D> image_stack_from(const Tensor& tensor) {
  if (tensor.dims.size() != 3 || tensor.dtype == DType::C64) {
    throw ShapeError("image_stack_from: expected a 3-D real tensor");
  }
  const std::size_t j = tensor.dims[0];
  const std::size_t h = tensor.dims[1];
  const std::size_t w = tensor.dims[2];
  std::vector<RealImage2D> out;
  out.reserve(j);
  for (std::size_t k = 0; k < j; ++k) {
    RealImage2D img(h, w);
    for (std::size_t i = 0; i < h * w; ++i) img[i] = scalar_at(tensor, k * h * w + i);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace ptychoforge
