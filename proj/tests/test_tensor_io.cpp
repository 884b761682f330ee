#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>

#include "ptychoforge/tensor_io.hpp"

using namespace ptychoforge;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ptychoforge_test_tensor_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

std::uint64_t error_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    std::size_t off = 0;
    decode_tensor(bytes, off);
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

}  // namespace

TEST_CASE("PTYT golden bytes for a 2x1 f64 tensor") {
  std::vector<std::uint8_t> want{'P', 'T', 'Y', 'T', 1, 0, 1, 2};
  put<std::uint64_t>(want, 2);
  put<std::uint64_t>(want, 1);
  put<double>(want, 1.5);
  put<double>(want, -2.0);
  const auto t = Tensor::from_f64({2, 1}, {1.5, -2.0});
  CHECK(encode_tensor(t) == want);
  std::size_t off = 0;
  CHECK(decode_tensor(want, off) == t);
  CHECK(off == want.size());
}

TEST_CASE("round trips are bit-exact") {
  const double nasty[] = {0.0, -0.0, 1e-310, std::numeric_limits<double>::max(), -3.25, 0.1};
  const auto f64 = Tensor::from_f64({2, 3}, std::vector<double>(std::begin(nasty), std::end(nasty)));
  const auto f32 = Tensor::from_f32({3}, {1.0f, -0.0f, 1e-40f});
  const auto scalar = Tensor::from_f64({}, {42.0});
  for (const auto* t : {&f64, &f32, &scalar}) {
    const auto path = temp_path("rt.ptyt");
    save_tensor(path, *t);
    const auto back = load_tensor(path);
    CHECK(back == *t);
    CHECK(encode_tensor(back) == encode_tensor(*t));
  }
}

TEST_CASE("image and field conversions") {
  RealImage2D img(3, 4);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 0.25 * static_cast<double>(i) - 1.0;
  CHECK(real_image_from(to_tensor(img)) == img);

  ComplexField2D f(2, 2);
  f[0] = Complex(1.0, -1.0);
  f[3] = Complex(0.5, 2.0);
  const auto t = to_tensor(f);
  CHECK(t.dtype == DType::C64);
  CHECK(t.f32.size() == 8);
  CHECK(complex_field_from(t) == f);

  std::vector<RealImage2D> stack{img, img};
  stack[1][0] = 9.0;
  CHECK(image_stack_from(to_tensor(stack)) == stack);
  const auto narrowed = image_stack_from(to_tensor(stack, DType::F32));
  CHECK(narrowed[1][0] == 9.0);
  CHECK_THROWS_AS(real_image_from(Tensor::from_f64({4}, {1, 2, 3, 4})), ShapeError);
}

TEST_CASE("corrupt PTYT streams report byte offsets") {
  const auto good = encode_tensor(Tensor::from_f64({2}, {1.0, 2.0}));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(error_offset(bad_magic) == 0);

  auto bad_version = good;
  bad_version[4] = 7;
  CHECK(error_offset(bad_version) == 4);

  auto bad_dtype = good;
  bad_dtype[6] = 9;
  CHECK(error_offset(bad_dtype) == 6);

  // Header is 8 bytes + one u64 dim; payload starts at 16.
  auto truncated = good;
  truncated.resize(20);
  CHECK(error_offset(truncated) == 16);

  auto short_dims = good;
  short_dims.resize(10);
  CHECK(error_offset(short_dims) == 8);

  auto trailing = good;
  trailing.push_back(0);
  const auto path = temp_path("trailing.ptyt");
  write_file_bytes(path, trailing);
  CHECK_THROWS_AS(load_tensor(path), FormatError);
}

TEST_CASE("bundles keep order and names") {
  TensorBundle b{{"zeta", Tensor::from_f32({1}, {3.0f})},
                 {"alpha", Tensor::from_f64({2}, {1.0, 2.0})}};
  const auto bytes = encode_bundle(b);
  CHECK(bytes[0] == 'P');
  CHECK(bytes[3] == 'B');
  const auto back = decode_bundle(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "zeta");
  CHECK(back == b);
  CHECK(bundle_get(back, "alpha").f64[1] == 2.0);
  CHECK_THROWS_AS(bundle_get(back, "missing"), FormatError);

  const auto path = temp_path("b.ptyb");
  save_bundle(path, b);
  CHECK(load_bundle(path) == b);

  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_bundle(cut), FormatError);
  auto wrong = bytes;
  wrong[2] = 'Z';
  CHECK_THROWS_AS(decode_bundle(wrong), FormatError);
}

TEST_CASE("missing files raise MissingInputError") {
  CHECK_THROWS_AS(load_tensor(temp_path("does_not_exist.ptyt")), MissingInputError);
}
