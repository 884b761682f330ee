#include "ptychoforge/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "ptychoforge/errors.hpp"
#include "ptychoforge/numerics.hpp"

namespace ptychoforge::nn {

void Architecture::validate() const {
  if (encoder_channels.empty()) throw ArgumentError("Architecture: encoder needs at least one block");
  if (decoder_channels.size() != encoder_channels.size()) {
    throw ArgumentError("Architecture: decoder stages must match encoder blocks to restore the input size");
  }
  if (convs_per_block == 0) throw ArgumentError("Architecture: convs_per_block must be >= 1");
  if (kernel % 2 == 0) throw ArgumentError("Architecture: kernel size must be odd");
  const std::size_t factor = std::size_t{1} << encoder_channels.size();
  if (input_size == 0 || input_size % factor != 0) {
    throw ArgumentError("Architecture: input size must be divisible by 2^blocks");
  }
  for (auto c : encoder_channels) if (c == 0) throw ArgumentError("Architecture: zero channel count");
  for (auto c : decoder_channels) if (c == 0) throw ArgumentError("Architecture: zero channel count");
}

std::size_t Architecture::latent_size() const { return input_size >> encoder_channels.size(); }

std::vector<LayerSpec> Architecture::encoder_layers() const {
  std::vector<LayerSpec> layers;
  std::size_t channels = 1;
  for (std::size_t b = 0; b < encoder_channels.size(); ++b) {
    for (std::size_t c = 0; c < convs_per_block; ++c) {
      const std::string tag = "enc" + std::to_string(b);
      layers.push_back({tag + "_conv" + std::to_string(c), "conv", {channels, encoder_channels[b], kernel}});
      layers.push_back({tag + "_relu" + std::to_string(c), "relu", {}});
      channels = encoder_channels[b];
    }
    layers.push_back({"enc" + std::to_string(b) + "_pool", "maxpool2", {}});
  }
  return layers;
}

std::vector<LayerSpec> Architecture::decoder_layers(const std::string& head) const {
  std::vector<LayerSpec> layers;
  std::size_t channels = encoder_channels.back();
  for (std::size_t s = 0; s < decoder_channels.size(); ++s) {
    const std::string tag = head + "_dec" + std::to_string(s);
    layers.push_back({tag + "_up", "upsample2", {}});
    layers.push_back({tag + "_conv", "conv", {channels, decoder_channels[s], kernel}});
    layers.push_back({tag + "_relu", "relu", {}});
    channels = decoder_channels[s];
  }
  layers.push_back({head + "_out", "conv", {channels, 1, 1}});
  layers.push_back({head + "_act", head == "phase" ? "tanh_pi" : "identity", {}});
  return layers;
}

std::vector<LayerSpec> Architecture::conv_layers() const {
  std::vector<LayerSpec> convs;
  for (const auto& list : {encoder_layers(), decoder_layers("amp"), decoder_layers("phase")}) {
    for (const auto& l : list) {
      if (l.type == "conv") convs.push_back(l);
    }
  }
  return convs;
}

std::size_t Architecture::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : conv_layers()) n += l.conv.kernel_elems() + l.conv.out_channels;
  return n;
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& list : {encoder_layers(), decoder_layers("amp"), decoder_layers("phase")}) {
    for (const auto& l : list) {
      nlohmann::json e{{"name", l.name}, {"type", l.type}};
      if (l.type == "conv") {
        e["in"] = l.conv.in_channels;
        e["out"] = l.conv.out_channels;
        e["kernel"] = l.conv.kernel;
      }
      layers.push_back(e);
    }
  }
  return {{"input_size", input_size},
          {"encoder_channels", encoder_channels},
          {"convs_per_block", convs_per_block},
          {"decoder_channels", decoder_channels},
          {"kernel", kernel},
          {"parameter_count", parameter_count()},
          {"layers", layers}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.input_size = j.at("input_size").get<std::size_t>();
  a.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
  a.convs_per_block = j.at("convs_per_block").get<std::size_t>();
  a.decoder_channels = j.at("decoder_channels").get<std::vector<std::size_t>>();
  a.kernel = j.at("kernel").get<std::size_t>();
  a.validate();
  return a;
}

Architecture tiny_architecture() {
  Architecture a;
  a.input_size = 8;
  a.encoder_channels = {2, 4};
  a.decoder_channels = {4, 2};
  return a;
}

template <typename T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.values.size();
  return n;
}

template <typename T>
const NamedParam<T>& ModelParams<T>::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ArgumentError("model has no parameter '" + name + "'");
}

template <typename T>
NamedParam<T>& ModelParams<T>::find(const std::string& name) {
  return const_cast<NamedParam<T>&>(std::as_const(*this).find(name));
}

template <typename T>
std::vector<std::vector<T>> ModelParams<T>::zeros_like() const {
  std::vector<std::vector<T>> z;
  z.reserve(params.size());
  for (const auto& p : params) z.emplace_back(p.values.size(), T{});
  return z;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.arch = arch;
  out.init_seed = init_seed;
  for (const auto& p : params) {
    out.params.push_back({p.name, p.shape, std::vector<U>(p.values.begin(), p.values.end())});
  }
  return out;
}

template <typename T>
ModelParams<T> init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams<T> mp;
  mp.arch = arch;
  mp.init_seed = seed;
  SeededRng rng(seed);
  for (const auto& l : arch.conv_layers()) {
    const auto& s = l.conv;
    const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
    const double limit = std::sqrt(6.0 / fan_in);
    NamedParam<T> w{l.name + ".weight", {s.out_channels, s.in_channels, s.kernel, s.kernel}, {}};
    w.values.resize(s.kernel_elems());
    for (auto& v : w.values) v = static_cast<T>(-limit + 2.0 * limit * rng.next_double());
    mp.params.push_back(std::move(w));
    mp.params.push_back({l.name + ".bias", {s.out_channels}, std::vector<T>(s.out_channels, T{})});
  }
  return mp;
}

template <typename T>
void zero_output_layers(ModelParams<T>& params) {
  for (const char* head : {"amp_out", "phase_out"}) {
    for (const char* suffix : {".weight", ".bias"}) {
      auto& p = params.find(std::string(head) + suffix);
      std::fill(p.values.begin(), p.values.end(), T{});
    }
  }
}

namespace {

template <typename T>
std::size_t param_index(const ModelParams<T>& params, const std::string& name) {
  for (std::size_t i = 0; i < params.params.size(); ++i) {
    if (params.params[i].name == name) return i;
  }
  throw ArgumentError("model has no parameter '" + name + "'");
}

// Largest T strictly below π; π·tanh saturates to the rounded π otherwise.
template <typename T>
T below_pi() {
  const T p = static_cast<T>(std::numbers::pi);
  return static_cast<double>(p) < std::numbers::pi ? p : std::nextafter(p, T{0});
}

template <typename T>
FeatureMap<T> run_forward(const ModelParams<T>& params, const std::vector<LayerSpec>& layers, FeatureMap<T> current,
                          std::vector<typename ForwardCache<T>::Step>& steps) {
  steps.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    auto& step = steps[i];
    step.input = std::move(current);
    current = FeatureMap<T>{};
    if (layer.type == "conv") {
      const std::size_t w = param_index(params, layer.name + ".weight");
      conv2d_forward<T>(step.input, layer.conv, params.params[w].values, params.params[w + 1].values, current,
                        step.col);
    } else if (layer.type == "relu") {
      current = step.input;
      relu_inplace(current);
    } else if (layer.type == "maxpool2") {
      maxpool2(step.input, current, step.argmax);
    } else if (layer.type == "upsample2") {
      upsample2(step.input, current);
    } else if (layer.type == "tanh_pi") {
      current = step.input;
      const T lim = below_pi<T>();
      for (auto& v : current.data) v = std::clamp(static_cast<T>(std::numbers::pi * std::tanh(v)), -lim, lim);
    } else {
      current = step.input;
    }
  }
  return current;
}

// Walks `layers` backwards from `grad`; returns ∂L/∂(sequence input) unless
// `need_input_grad` is false.
template <typename T>
FeatureMap<T> run_backward(const ModelParams<T>& params, const std::vector<LayerSpec>& layers,
                           std::vector<typename ForwardCache<T>::Step>& steps, FeatureMap<T> grad,
                           std::vector<std::vector<T>>& grads, bool need_input_grad) {
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& layer = layers[k];
    auto& step = steps[k];
    if (layer.type == "conv") {
      const std::size_t w = param_index(params, layer.name + ".weight");
      const bool first = k == 0 && !need_input_grad;
      FeatureMap<T> grad_in;
      conv2d_backward_accumulate<T>(grad, step.input, step.col, layer.conv, params.params[w].values, grads[w],
                                    grads[w + 1], first ? nullptr : &grad_in);
      grad = std::move(grad_in);
    } else if (layer.type == "relu") {
      relu_backward_inplace(grad, step.input);
    } else if (layer.type == "maxpool2") {
      FeatureMap<T> grad_in;
      maxpool2_backward(grad, step.argmax, step.input.height, step.input.width, grad_in);
      grad = std::move(grad_in);
    } else if (layer.type == "upsample2") {
      FeatureMap<T> grad_in;
      upsample2_backward(grad, grad_in);
      grad = std::move(grad_in);
    } else if (layer.type == "tanh_pi") {
      for (std::size_t i = 0; i < grad.data.size(); ++i) {
        const T t = std::tanh(step.input.data[i]);
        grad.data[i] *= static_cast<T>(std::numbers::pi) * (T{1} - t * t);
      }
    }
  }
  return grad;
}

template <typename T>
FeatureMap<T> input_map(const Architecture& arch, std::span<const T> frame) {
  const std::size_t n = arch.input_size;
  if (frame.size() != n * n) {
    throw ShapeError("model_forward: expected a " + std::to_string(n) + "x" + std::to_string(n) + " frame, got " +
                     std::to_string(frame.size()) + " values");
  }
  FeatureMap<T> in(1, n, n);
  std::copy(frame.begin(), frame.end(), in.data.begin());
  return in;
}

}  // namespace

template <typename T>
Prediction<T> model_forward(const ModelParams<T>& params, std::span<const T> frame, ForwardCache<T>& cache) {
  const auto& arch = params.arch;
  cache.latent = run_forward(params, arch.encoder_layers(), input_map(arch, frame), cache.encoder);
  cache.amp = run_forward(params, arch.decoder_layers("amp"), cache.latent, cache.amp_decoder);
  cache.phase = run_forward(params, arch.decoder_layers("phase"), cache.latent, cache.phase_decoder);
  return {cache.amp.data, cache.phase.data};
}

template <typename T>
Prediction<T> model_forward(const ModelParams<T>& params, std::span<const T> frame) {
  ForwardCache<T> cache;
  return model_forward(params, frame, cache);
}

template <typename T>
void model_backward(const ModelParams<T>& params, ForwardCache<T>& cache, std::span<const T> grad_amp,
                    std::span<const T> grad_phase, std::vector<std::vector<T>>& grads) {
  const auto& arch = params.arch;
  const std::size_t n = arch.input_size;
  if (grad_amp.size() != n * n || grad_phase.size() != n * n) throw ShapeError("model_backward: gradient size");
  if (grads.size() != params.params.size()) throw ShapeError("model_backward: gradient layout");
  FeatureMap<T> ga(1, n, n);
  std::copy(grad_amp.begin(), grad_amp.end(), ga.data.begin());
  FeatureMap<T> gp(1, n, n);
  std::copy(grad_phase.begin(), grad_phase.end(), gp.data.begin());
  FeatureMap<T> g_latent = run_backward(params, arch.decoder_layers("amp"), cache.amp_decoder, std::move(ga), grads, true);
  const FeatureMap<T> g_phase =
      run_backward(params, arch.decoder_layers("phase"), cache.phase_decoder, std::move(gp), grads, true);
  for (std::size_t i = 0; i < g_latent.data.size(); ++i) g_latent.data[i] += g_phase.data[i];
  run_backward(params, arch.encoder_layers(), cache.encoder, std::move(g_latent), grads, false);
}

template <typename T>
LossResult<T> mae_loss(std::span<const T> pred_amp, std::span<const T> pred_phase, std::span<const T> true_amp,
                       std::span<const T> true_phase) {
  if (pred_amp.size() != true_amp.size() || pred_phase.size() != true_phase.size() || pred_amp.empty() ||
      pred_phase.empty()) {
    throw ArgumentError("mae_loss: prediction and target shapes differ");
  }
  LossResult<T> r;
  r.grad_amp.resize(pred_amp.size());
  r.grad_phase.resize(pred_phase.size());
  auto head = [](std::span<const T> pred, std::span<const T> truth, std::vector<T>& grad) {
    const T inv = T{1} / static_cast<T>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const T d = pred[i] - truth[i];
      sum += std::abs(static_cast<double>(d));
      grad[i] = d > T{} ? inv : (d < T{} ? -inv : T{});
    }
    return sum / static_cast<double>(pred.size());
  };
  r.loss = head(pred_amp, true_amp, r.grad_amp) + head(pred_phase, true_phase, r.grad_phase);
  return r;
}

void save_model(const std::filesystem::path& bundle_path, const std::filesystem::path& descriptor_path,
                const ModelParams<float>& params) {
  TensorBundle bundle;
  for (const auto& p : params.params) {
    std::vector<std::uint64_t> dims(p.shape.begin(), p.shape.end());
    bundle.emplace_back(p.name, Tensor::from_f32(std::move(dims), p.values));
  }
  save_bundle(bundle_path, bundle);
  nlohmann::json descriptor = params.arch.to_json();
  descriptor["init_seed"] = params.init_seed;
  std::ofstream out(descriptor_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + descriptor_path.string() + " for writing");
  out << descriptor.dump(2) << '\n';
}

ModelParams<float> load_model(const std::filesystem::path& bundle_path, const std::filesystem::path& descriptor_path) {
  std::ifstream in(descriptor_path);
  if (!in) throw MissingInputError(descriptor_path.string());
  const auto descriptor = nlohmann::json::parse(in);
  const auto arch = Architecture::from_json(descriptor);
  auto params = init_params<float>(arch, descriptor.value("init_seed", std::uint64_t{0}));
  const auto bundle = load_bundle(bundle_path);
  if (bundle.size() != params.params.size()) {
    throw FormatError("model bundle does not match the architecture descriptor", 0);
  }
  for (std::size_t i = 0; i < bundle.size(); ++i) {
    auto& p = params.params[i];
    const auto& [name, tensor] = bundle[i];
    std::vector<std::uint64_t> dims(p.shape.begin(), p.shape.end());
    if (name != p.name || tensor.dims != dims || tensor.dtype != DType::F32) {
      throw FormatError("model bundle record '" + name + "' does not match the descriptor", 0);
    }
    p.values = tensor.f32;
  }
  return params;
}

#define PTYCHOFORGE_INSTANTIATE(T)                                                                              \
  template struct ModelParams<T>;                                                                              \
  template ModelParams<T> init_params<T>(const Architecture&, std::uint64_t);                                  \
  template void zero_output_layers<T>(ModelParams<T>&);                                                        \
  template Prediction<T> model_forward<T>(const ModelParams<T>&, std::span<const T>);                          \
  template Prediction<T> model_forward<T>(const ModelParams<T>&, std::span<const T>, ForwardCache<T>&);        \
  template void model_backward<T>(const ModelParams<T>&, ForwardCache<T>&, std::span<const T>,                 \
                                  std::span<const T>, std::vector<std::vector<T>>&);                          \
  template LossResult<T> mae_loss<T>(std::span<const T>, std::span<const T>, std::span<const T>,                \
                                     std::span<const T>);

PTYCHOFORGE_INSTANTIATE(float)
PTYCHOFORGE_INSTANTIATE(double)
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;

#undef PTYCHOFORGE_INSTANTIATE

}  // namespace ptychoforge::nn
