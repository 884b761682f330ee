#include "ptychoforge/nn/optim.hpp"

#include <cmath>

#include "ptychoforge/errors.hpp"

namespace ptychoforge::nn {

template <typename T>
AdamState<T> AdamState<T>::like(const std::vector<std::vector<T>>& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), T{});
    s.v.emplace_back(p.size(), T{});
  }
  return s;
}

template <typename T>
void adam_step(std::vector<std::span<T>> params, const std::vector<std::vector<T>>& grads, AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ArgumentError("adam_step: parameter, gradient and moment lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size() ||
        params[i].size() != state.v[i].size()) {
      throw ArgumentError("adam_step: shape mismatch in parameter " + std::to_string(i));
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta2, t)));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    auto p = params[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      const T m_hat = m[k] * c1;
      const T v_hat = v[k] * c2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

PlateauScheduler::PlateauScheduler(std::size_t patience, double factor) : patience_(patience), factor_(factor) {
  if (patience == 0) throw ArgumentError("PlateauScheduler: patience must be >= 1");
  if (!(factor > 0.0 && factor < 1.0)) throw ArgumentError("PlateauScheduler: factor must lie in (0, 1)");
}

double PlateauScheduler::step(double val_loss, double lr) {
  if (val_loss < best_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return lr;
  }
  if (++bad_epochs_ >= patience_) {
    bad_epochs_ = 0;
    return lr * factor_;
  }
  return lr;
}

double plateau_scheduler(std::span<const double> history, std::size_t patience, double factor, double lr) {
  if (history.empty()) throw ArgumentError("plateau_scheduler: empty history");
  PlateauScheduler sched(patience, factor);
  for (double loss : history) lr = sched.step(loss, lr);
  return lr;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<std::span<float>>, const std::vector<std::vector<float>>&, AdamState<float>&);
template void adam_step<double>(std::vector<std::span<double>>, const std::vector<std::vector<double>>&,
                                AdamState<double>&);

}  // namespace ptychoforge::nn
