#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ptychoforge::nn {

/// C x H x W activation, row-major within each channel.
template <typename T>
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t plane() const noexcept { return height * width; }
  void reshape(std::size_t c, std::size_t h, std::size_t w) {
    channels = c;
    height = h;
    width = w;
    data.resize(c * h * w);
  }
  T& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
};

/// Square kernel of odd size k, stride 1, zero padding k/2 (output keeps H x W).
struct ConvShape {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;

  std::size_t kernel_elems() const noexcept { return out_channels * in_channels * kernel * kernel; }
};

template <typename T>
struct ConvGrads {
  FeatureMap<T> input;
  std::vector<T> kernel;
  std::vector<T> bias;
};

/// Unfold `in` into a (C·k·k) x (H·W) matrix of zero-padded neighbourhoods.
template <typename T>
void im2col(const FeatureMap<T>& in, std::size_t kernel, std::vector<T>& col);

/// Accumulate a (C·k·k) x (H·W) column matrix back onto a C x H x W map.
template <typename T>
void col2im(std::span<const T> col, std::size_t kernel, FeatureMap<T>& out);

/// out = kernel ⋆ in + bias (cross-correlation). `col` receives the unfolded
/// input so the backward pass can reuse it; for 1x1 kernels it stays empty.
template <typename T>
void conv2d_forward(const FeatureMap<T>& in, const ConvShape& shape, std::span<const T> kernel,
                    std::span<const T> bias, FeatureMap<T>& out, std::vector<T>& col);

/// Accumulates ∂L/∂kernel and ∂L/∂bias into the given buffers and, when
/// `grad_in` is non-null, writes ∂L/∂input. `col` is the buffer from forward.
template <typename T>
void conv2d_backward_accumulate(const FeatureMap<T>& grad_out, const FeatureMap<T>& in,
                                const std::vector<T>& col, const ConvShape& shape,
                                std::span<const T> kernel, std::span<T> grad_kernel,
                                std::span<T> grad_bias, FeatureMap<T>* grad_in);

/// Convenience form returning fresh gradients.
template <typename T>
ConvGrads<T> conv2d_backward(const FeatureMap<T>& grad_out, const FeatureMap<T>& in,
                             const ConvShape& shape, std::span<const T> kernel);

template <typename T>
void relu_inplace(FeatureMap<T>& x);
/// grad *= (output > 0)
template <typename T>
void relu_backward_inplace(FeatureMap<T>& grad, const FeatureMap<T>& output);

/// 2x2 max pooling, stride 2. `argmax` holds, per output pixel, the flat index
/// into `in` of the winning input (first occurrence on ties).
template <typename T>
void maxpool2(const FeatureMap<T>& in, FeatureMap<T>& out, std::vector<std::uint32_t>& argmax);
template <typename T>
void maxpool2_backward(const FeatureMap<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                       std::size_t in_height, std::size_t in_width, FeatureMap<T>& grad_in);

/// Nearest-neighbour 2x upsampling and its adjoint (2x2 block sums).
template <typename T>
void upsample2(const FeatureMap<T>& in, FeatureMap<T>& out);
template <typename T>
void upsample2_backward(const FeatureMap<T>& grad_out, FeatureMap<T>& grad_in);

}  // namespace ptychoforge::nn
