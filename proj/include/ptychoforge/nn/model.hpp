#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptychoforge/nn/layers.hpp"
#include "ptychoforge/tensor_io.hpp"

namespace ptychoforge::nn {

/// One entry of the flattened layer list.
struct LayerSpec {
  std::string name;
  std::string type;  // conv | relu | maxpool2 | upsample2 | tanh_pi | identity
  ConvShape conv;    // meaningful for type == "conv"
};

/// Encoder / dual-decoder network shape.
///
/// Encoder: per entry of `encoder_channels`, `convs_per_block` x [conv k x k,
/// ReLU] followed by 2x2 max pooling. Each decoder (amplitude, phase): per
/// entry of `decoder_channels`, [2x upsample, conv k x k, ReLU], then a 1x1
/// conv to one channel. The amplitude head is linear, the phase head π·tanh.
struct Architecture {
  std::size_t input_size = 64;
  std::vector<std::size_t> encoder_channels{32, 64, 128};
  std::size_t convs_per_block = 2;
  std::vector<std::size_t> decoder_channels{64, 32, 16};
  std::size_t kernel = 3;

  void validate() const;
  std::size_t latent_size() const;
  std::vector<LayerSpec> encoder_layers() const;
  /// `head` is "amp" or "phase".
  std::vector<LayerSpec> decoder_layers(const std::string& head) const;
  std::vector<LayerSpec> conv_layers() const;
  std::size_t parameter_count() const;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Small network used by gradient checks: 8x8 input, channels 2 -> 4.
Architecture tiny_architecture();

template <typename T>
struct NamedParam {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> values;
};

/// Ordered conv weights and biases ("<layer>.weight", "<layer>.bias").
template <typename T>
struct ModelParams {
  Architecture arch;
  std::uint64_t init_seed = 0;
  std::vector<NamedParam<T>> params;

  std::size_t count() const;
  const NamedParam<T>& find(const std::string& name) const;
  NamedParam<T>& find(const std::string& name);
  /// All-zero buffers with the same layout (gradients, ADAM moments).
  std::vector<std::vector<T>> zeros_like() const;

  template <typename U>
  ModelParams<U> cast() const;
};

/// Kernels uniform in ±sqrt(6 / fan_in), biases zero.
template <typename T>
ModelParams<T> init_params(const Architecture& arch, std::uint64_t seed);

/// Set the final 1x1 layer of both heads to zero (outputs become 0).
template <typename T>
void zero_output_layers(ModelParams<T>& params);

/// Intermediate values from one forward pass, kept for backward.
template <typename T>
struct ForwardCache {
  struct Step {
    FeatureMap<T> input;
    std::vector<T> col;
    std::vector<std::uint32_t> argmax;
  };
  std::vector<Step> encoder;
  std::vector<Step> amp_decoder;
  std::vector<Step> phase_decoder;
  FeatureMap<T> latent;
  FeatureMap<T> amp;
  FeatureMap<T> phase;
};

template <typename T>
struct Prediction {
  std::vector<T> amplitude;  // input_size²
  std::vector<T> phase;      // input_size², inside (−π, π)
};

template <typename T>
Prediction<T> model_forward(const ModelParams<T>& params, std::span<const T> frame);

/// Forward pass that fills `cache` for a subsequent model_backward.
template <typename T>
Prediction<T> model_forward(const ModelParams<T>& params, std::span<const T> frame, ForwardCache<T>& cache);

/// Accumulates ∂L/∂θ into `grads` (layout of ModelParams::zeros_like).
template <typename T>
void model_backward(const ModelParams<T>& params, ForwardCache<T>& cache, std::span<const T> grad_amp,
                    std::span<const T> grad_phase, std::vector<std::vector<T>>& grads);

template <typename T>
struct LossResult {
  double loss = 0.0;
  std::vector<T> grad_amp;
  std::vector<T> grad_phase;
};

/// L = mean|Δamp| + mean|Δphase|; ∂L/∂pred = sign(Δ)/N with sign(0) = 0.
template <typename T>
LossResult<T> mae_loss(std::span<const T> pred_amp, std::span<const T> pred_phase,
                       std::span<const T> true_amp, std::span<const T> true_phase);

/// Weights as a PTYB bundle (f32 records in parameter order) plus a JSON
/// architecture descriptor next to it.
void save_model(const std::filesystem::path& bundle_path, const std::filesystem::path& descriptor_path,
                const ModelParams<float>& params);
ModelParams<float> load_model(const std::filesystem::path& bundle_path,
                              const std::filesystem::path& descriptor_path);

}  // namespace ptychoforge::nn
