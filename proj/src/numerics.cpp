#include "ptychoforge/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <unordered_map>

namespace ptychoforge {

double energy(const ComplexField2D& field) {
  double sum = 0.0;
  for (const auto& z : field.values()) sum += std::norm(z);
  return sum;
}

RealImage2D modulus(const ComplexField2D& field) {
  RealImage2D out(field.height(), field.width());
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = std::abs(field[i]);
  return out;
}

RealImage2D phase(const ComplexField2D& field) {
  RealImage2D out(field.height(), field.width());
  for (std::size_t i = 0; i < field.size(); ++i) out[i] = std::arg(field[i]);
  return out;
}

ComplexField2D from_polar(const RealImage2D& amplitude, const RealImage2D& phase_img) {
  if (!amplitude.same_shape(phase_img)) throw ShapeError("from_polar: shape mismatch");
  ComplexField2D out(amplitude.height(), amplitude.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::polar(amplitude[i], phase_img[i]);
  return out;
}

// ---------------------------------------------------------------------------
// RNG

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t SeededRng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double SeededRng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::next_below(std::uint64_t bound) {
  if (bound == 0) throw ArgumentError("next_below: bound must be positive");
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double SeededRng::next_normal() {
  double u1;
  do {
    u1 = next_double();
  } while (u1 <= 0.0);
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<double> rng_uniform(SeededRng& rng, std::size_t n, double lo, double hi) {
  if (!(lo < hi)) throw ArgumentError("rng_uniform: requires lo < hi");
  std::vector<double> out(n);
  const double span = hi - lo;
  for (auto& v : out) {
    v = lo + span * rng.next_double();
    // Rounding of lo + span*u can land on hi when span is huge relative to lo.
    if (v >= hi) v = std::nextafter(hi, lo);
  }
  return out;
}

std::vector<std::size_t> random_permutation(SeededRng& rng, std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  std::uint64_t x = parent ^ (tag * 0xd1b54a32d192ed03ULL);
  splitmix64(x);
  return splitmix64(x);
}

// ---------------------------------------------------------------------------
// FFT

bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

namespace {

struct FftPlan {
  std::size_t n = 0;
  std::vector<std::size_t> bitrev;
  std::vector<Complex> twiddle;  // exp(-2*pi*i*k/n), k < n/2
};

const FftPlan& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, FftPlan> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  FftPlan plan;
  plan.n = n;
  plan.bitrev.resize(n);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
    plan.bitrev[i] = r;
  }
  plan.twiddle.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    plan.twiddle[k] = Complex(std::cos(angle), std::sin(angle));
  }
  return cache.emplace(n, std::move(plan)).first->second;
}

// Radix-2 decimation-in-time along axis 0 of an h x w row-major array: every
// column is transformed at once, so the inner loop runs contiguously over w.
// inverse flips the twiddle sign; no scaling is applied here.
void fft_axis0(Complex* data, std::size_t h, std::size_t w, bool inverse) {
  const FftPlan& plan = plan_for(h);
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t j = plan.bitrev[i];
    if (i < j) std::swap_ranges(data + i * w, data + (i + 1) * w, data + j * w);
  }
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t len = 2; len <= h; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = h / len;
    for (std::size_t start = 0; start < h; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = plan.twiddle[k * stride].real();
        const double wi = sign * plan.twiddle[k * stride].imag();
        double* __restrict a = reinterpret_cast<double*>(data + (start + k) * w);
        double* __restrict b = reinterpret_cast<double*>(data + (start + k + half) * w);
        for (std::size_t c = 0; c < 2 * w; c += 2) {
          const double br = b[c] * wr - b[c + 1] * wi;
          const double bi = b[c] * wi + b[c + 1] * wr;
          b[c] = a[c] - br;
          b[c + 1] = a[c + 1] - bi;
          a[c] += br;
          a[c + 1] += bi;
        }
      }
    }
  }
}

// 8x8 tiles keep both the source rows and destination columns in cache.
void transpose(const Complex* src, Complex* dst, std::size_t h, std::size_t w) {
  constexpr std::size_t tile = 8;
  for (std::size_t r0 = 0; r0 < h; r0 += tile) {
    for (std::size_t c0 = 0; c0 < w; c0 += tile) {
      const std::size_t r1 = std::min(h, r0 + tile);
      const std::size_t c1 = std::min(w, c0 + tile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * h + r] = src[r * w + c];
      }
    }
  }
}

// Multiply by scale · (−1)^(r+c). For sizes divisible by 4 this chessboard
// modulation, applied before and after a plain DFT, is exactly the
// fftshift/ifftshift pair of the centered transform.
void modulate(Complex* data, std::size_t h, std::size_t w, double scale) {
  auto* d = reinterpret_cast<double*>(data);
  for (std::size_t r = 0; r < h; ++r) {
    double s = (r % 2 == 0) ? scale : -scale;
    double* row = d + 2 * r * w;
    for (std::size_t c = 0; c < 2 * w; c += 4) {
      row[c] *= s;
      row[c + 1] *= s;
      row[c + 2] *= -s;
      row[c + 3] *= -s;
    }
  }
}

// Circular shift by (h/2, w/2), used for the sizes 2 and 2x2 where the
// modulation identity does not hold.
void half_shift(const Complex* src, Complex* dst, std::size_t h, std::size_t w) {
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t rr = (r + h / 2) % h;
    for (std::size_t c = 0; c < w; ++c) dst[rr * w + (c + w / 2) % w] = src[r * w + c];
  }
}

void transform2d(ComplexField2D& field, std::vector<Complex>& scratch, bool inverse) {
  const std::size_t h = field.height();
  const std::size_t w = field.width();
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw ShapeError("fft2c: height and width must be powers of two, got " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  Complex* data = field.storage().data();
  scratch.resize(field.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  if (h % 4 == 0 && w % 4 == 0) {
    modulate(data, h, w, 1.0);
    fft_axis0(data, h, w, inverse);
    transpose(data, scratch.data(), h, w);
    fft_axis0(scratch.data(), w, h, inverse);
    transpose(scratch.data(), data, w, h);
    modulate(data, h, w, scale);
    return;
  }
  half_shift(data, scratch.data(), h, w);
  fft_axis0(scratch.data(), h, w, inverse);
  transpose(scratch.data(), data, h, w);
  fft_axis0(data, w, h, inverse);
  transpose(data, scratch.data(), w, h);
  half_shift(scratch.data(), data, h, w);
  for (auto& z : field.storage()) z *= scale;
}

}  // namespace

void fft2c_inplace(ComplexField2D& field, std::vector<Complex>& scratch) {
  transform2d(field, scratch, false);
}

void ifft2c_inplace(ComplexField2D& field, std::vector<Complex>& scratch) {
  transform2d(field, scratch, true);
}

ComplexField2D fft2c(const ComplexField2D& field) {
  ComplexField2D out = field;
  std::vector<Complex> scratch;
  fft2c_inplace(out, scratch);
  return out;
}

ComplexField2D ifft2c(const ComplexField2D& field) {
  ComplexField2D out = field;
  std::vector<Complex> scratch;
  ifft2c_inplace(out, scratch);
  return out;
}

// ---------------------------------------------------------------------------
// Workers

namespace {
std::atomic<bool> g_deterministic{false};
}

void set_deterministic(bool on) { g_deterministic.store(on); }
bool deterministic_mode() { return g_deterministic.load(); }

std::size_t worker_count() {
  if (deterministic_mode()) return 1;
  std::size_t n = std::max(1U, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PTYCHOFORGE_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      // Unparseable caps are ignored.
    }
  }
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace ptychoforge
