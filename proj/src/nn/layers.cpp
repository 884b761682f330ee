#include "ptychoforge/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <string>

#include "ptychoforge/errors.hpp"

namespace ptychoforge::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError(what);
}

}  // namespace

template <typename T>
void im2col(const FeatureMap<T>& in, std::size_t kernel, std::vector<T>& col) {
  const std::size_t h = in.height;
  const std::size_t w = in.width;
  const std::size_t hw = h * w;
  const auto pad = static_cast<long>(kernel / 2);
  col.resize(in.channels * kernel * kernel * hw);
  T* dst = col.data();
  for (std::size_t c = 0; c < in.channels; ++c) {
    const T* plane = in.data.data() + c * hw;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx, dst += hw) {
        const long dy = static_cast<long>(ky) - pad;
        const long dx = static_cast<long>(kx) - pad;
        // Valid output columns x satisfy 0 <= x + dx < w.
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
        for (std::size_t y = 0; y < h; ++y) {
          T* row = dst + y * w;
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h) || x1 <= x0) {
            std::fill_n(row, w, T{});
            continue;
          }
          const T* src = plane + sy * static_cast<long>(w);
          std::fill(row, row + x0, T{});
          std::memcpy(row + x0, src + x0 + dx, static_cast<std::size_t>(x1 - x0) * sizeof(T));
          std::fill(row + x1, row + w, T{});
        }
      }
    }
  }
}

template <typename T>
void col2im(std::span<const T> col, std::size_t kernel, FeatureMap<T>& out) {
  const std::size_t h = out.height;
  const std::size_t w = out.width;
  const std::size_t hw = h * w;
  const auto pad = static_cast<long>(kernel / 2);
  std::fill(out.data.begin(), out.data.end(), T{});
  const T* src = col.data();
  for (std::size_t c = 0; c < out.channels; ++c) {
    T* plane = out.data.data() + c * hw;
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx, src += hw) {
        const long dy = static_cast<long>(ky) - pad;
        const long dx = static_cast<long>(kx) - pad;
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(static_cast<long>(w), static_cast<long>(w) - dx);
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const T* row = src + y * w;
          T* target = plane + sy * static_cast<long>(w) + dx;
          for (long x = x0; x < x1; ++x) target[x] += row[x];
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const FeatureMap<T>& in, const ConvShape& shape, std::span<const T> kernel,
                    std::span<const T> bias, FeatureMap<T>& out, std::vector<T>& col) {
  require(shape.kernel % 2 == 1, "conv2d: kernel size must be odd");
  require(in.channels == shape.in_channels, "conv2d: input has " + std::to_string(in.channels) +
                                                " channels, kernel expects " + std::to_string(shape.in_channels));
  require(kernel.size() == shape.kernel_elems(), "conv2d: kernel buffer has the wrong size");
  require(bias.size() == shape.out_channels, "conv2d: bias buffer has the wrong size");
  const std::size_t hw = in.plane();
  const std::size_t kk = shape.in_channels * shape.kernel * shape.kernel;
  out.reshape(shape.out_channels, in.height, in.width);
  const T* cols = in.data.data();
  if (shape.kernel == 1) {
    col.clear();
  } else {
    im2col(in, shape.kernel, col);
    cols = col.data();
  }
  MapConstMat<T> k(kernel.data(), static_cast<Eigen::Index>(shape.out_channels), static_cast<Eigen::Index>(kk));
  MapConstMat<T> c(cols, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
  MapMat<T> o(out.data.data(), static_cast<Eigen::Index>(shape.out_channels), static_cast<Eigen::Index>(hw));
  o.noalias() = k * c;
  for (std::size_t oc = 0; oc < shape.out_channels; ++oc) o.row(static_cast<Eigen::Index>(oc)).array() += bias[oc];
}

template <typename T>
void conv2d_backward_accumulate(const FeatureMap<T>& grad_out, const FeatureMap<T>& in,
                                const std::vector<T>& col, const ConvShape& shape,
                                std::span<const T> kernel, std::span<T> grad_kernel,
                                std::span<T> grad_bias, FeatureMap<T>* grad_in) {
  require(grad_out.channels == shape.out_channels && grad_out.height == in.height && grad_out.width == in.width,
          "conv2d_backward: grad_out shape does not match forward output");
  require(in.channels == shape.in_channels, "conv2d_backward: input channel mismatch");
  require(kernel.size() == shape.kernel_elems() && grad_kernel.size() == shape.kernel_elems(),
          "conv2d_backward: kernel buffer has the wrong size");
  require(grad_bias.size() == shape.out_channels, "conv2d_backward: bias buffer has the wrong size");
  const std::size_t hw = in.plane();
  const std::size_t kk = shape.in_channels * shape.kernel * shape.kernel;
  const T* cols = shape.kernel == 1 ? in.data.data() : col.data();
  require(shape.kernel == 1 || col.size() == kk * hw, "conv2d_backward: stale im2col buffer");
  const auto rows = static_cast<Eigen::Index>(shape.out_channels);
  MapConstMat<T> g(grad_out.data.data(), rows, static_cast<Eigen::Index>(hw));
  MapConstMat<T> c(cols, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
  MapMat<T> gk(grad_kernel.data(), rows, static_cast<Eigen::Index>(kk));
  gk.noalias() += g * c.transpose();
  // Plain loop: Eigen's vectorized sum peels by pointer alignment, so its
  // summation order (and result) would depend on where the buffer landed.
  for (std::size_t oc = 0; oc < shape.out_channels; ++oc) {
    const T* row = grad_out.data.data() + oc * hw;
    T acc{};
    for (std::size_t i = 0; i < hw; ++i) acc += row[i];
    grad_bias[oc] += acc;
  }
  if (grad_in == nullptr) return;
  MapConstMat<T> k(kernel.data(), rows, static_cast<Eigen::Index>(kk));
  grad_in->reshape(in.channels, in.height, in.width);
  if (shape.kernel == 1) {
    MapMat<T> gi(grad_in->data.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
    gi.noalias() = k.transpose() * g;
    return;
  }
  thread_local std::vector<T> grad_col;
  grad_col.resize(kk * hw);
  MapMat<T> gc(grad_col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
  gc.noalias() = k.transpose() * g;
  col2im<T>(grad_col, shape.kernel, *grad_in);
}

template <typename T>
ConvGrads<T> conv2d_backward(const FeatureMap<T>& grad_out, const FeatureMap<T>& in,
                             const ConvShape& shape, std::span<const T> kernel) {
  std::vector<T> col;
  if (shape.kernel != 1) im2col(in, shape.kernel, col);
  ConvGrads<T> grads;
  grads.kernel.assign(shape.kernel_elems(), T{});
  grads.bias.assign(shape.out_channels, T{});
  conv2d_backward_accumulate<T>(grad_out, in, col, shape, kernel, grads.kernel, grads.bias, &grads.input);
  return grads;
}

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
  for (auto& v : x.data) v = v > T{} ? v : T{};
}

template <typename T>
void relu_backward_inplace(FeatureMap<T>& grad, const FeatureMap<T>& output) {
  require(grad.data.size() == output.data.size(), "relu_backward: shape mismatch");
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(output.data[i] > T{})) grad.data[i] = T{};
  }
}

template <typename T>
void maxpool2(const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<std::uint32_t>& argmax) {
  if (in.height % 2 != 0 || in.width % 2 != 0) {
    throw ShapeError("maxpool2: height and width must be even, got " + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  }
  const std::size_t oh = in.height / 2;
  const std::size_t ow = in.width / 2;
  out.reshape(in.channels, oh, ow);
  argmax.resize(out.data.size());
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = (c * in.height + 2 * y) * in.width + 2 * x;
        const std::size_t candidates[4] = {base, base + 1, base + in.width, base + in.width + 1};
        std::size_t best = candidates[0];
        for (int i = 1; i < 4; ++i) {
          if (in.data[candidates[i]] > in.data[best]) best = candidates[i];
        }
        const std::size_t o = (c * oh + y) * ow + x;
        out.data[o] = in.data[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const FeatureMap<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                       std::size_t in_height, std::size_t in_width, FeatureMap<T>& grad_in) {
  require(argmax.size() == grad_out.data.size(), "maxpool2_backward: argmax does not match grad_out");
  grad_in.reshape(grad_out.channels, in_height, in_width);
  std::fill(grad_in.data.begin(), grad_in.data.end(), T{});
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_in.data[argmax[i]] += grad_out.data[i];
}

template <typename T>
void upsample2(const FeatureMap<T>& in, FeatureMap<T>& out) {
  const std::size_t ow = 2 * in.width;
  out.reshape(in.channels, 2 * in.height, ow);
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t y = 0; y < in.height; ++y) {
      T* row0 = &out.at(c, 2 * y, 0);
      for (std::size_t x = 0; x < in.width; ++x) {
        const T v = in.at(c, y, x);
        row0[2 * x] = v;
        row0[2 * x + 1] = v;
      }
      std::copy_n(row0, ow, row0 + ow);
    }
  }
}

template <typename T>
void upsample2_backward(const FeatureMap<T>& grad_out, FeatureMap<T>& grad_in) {
  require(grad_out.height % 2 == 0 && grad_out.width % 2 == 0, "upsample2_backward: odd gradient shape");
  grad_in.reshape(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
  for (std::size_t c = 0; c < grad_in.channels; ++c) {
    for (std::size_t y = 0; y < grad_in.height; ++y) {
      for (std::size_t x = 0; x < grad_in.width; ++x) {
        grad_in.at(c, y, x) = grad_out.at(c, 2 * y, 2 * x) + grad_out.at(c, 2 * y, 2 * x + 1) +
                              grad_out.at(c, 2 * y + 1, 2 * x) + grad_out.at(c, 2 * y + 1, 2 * x + 1);
      }
    }
  }
}

#define PTYCHOFORGE_INSTANTIATE(T)                                                                       \
  template void im2col<T>(const FeatureMap<T>&, std::size_t, std::vector<T>&);                            \
  template void col2im<T>(std::span<const T>, std::size_t, FeatureMap<T>&);                               \
  template void conv2d_forward<T>(const FeatureMap<T>&, const ConvShape&, std::span<const T>,             \
                                  std::span<const T>, FeatureMap<T>&, std::vector<T>&);                   \
  template void conv2d_backward_accumulate<T>(const FeatureMap<T>&, const FeatureMap<T>&,                 \
                                              const std::vector<T>&, const ConvShape&,                    \
                                              std::span<const T>, std::span<T>, std::span<T>,             \
                                              FeatureMap<T>*);                                            \
  template ConvGrads<T> conv2d_backward<T>(const FeatureMap<T>&, const FeatureMap<T>&, const ConvShape&,  \
                                           std::span<const T>);                                           \
  template void relu_inplace<T>(FeatureMap<T>&);                                                          \
  template void relu_backward_inplace<T>(FeatureMap<T>&, const FeatureMap<T>&);                           \
  template void maxpool2<T>(const FeatureMap<T>&, FeatureMap<T>&, std::vector<std::uint32_t>&);           \
  template void maxpool2_backward<T>(const FeatureMap<T>&, const std::vector<std::uint32_t>&,             \
                                     std::size_t, std::size_t, FeatureMap<T>&);                           \
  template void upsample2<T>(const FeatureMap<T>&, FeatureMap<T>&);                                       \
  template void upsample2_backward<T>(const FeatureMap<T>&, FeatureMap<T>&);

PTYCHOFORGE_INSTANTIATE(float)
PTYCHOFORGE_INSTANTIATE(double)

#undef PTYCHOFORGE_INSTANTIATE

}  // namespace ptychoforge::nn
