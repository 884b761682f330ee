#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace ptychoforge::nn {

/// ADAM moments and hyper-parameters.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState like(const std::vector<std::vector<T>>& params, double lr = 1e-3);
};

/// One bias-corrected ADAM update of every parameter buffer in place.
template <typename T>
void adam_step(std::vector<std::span<T>> params, const std::vector<std::vector<T>>& grads, AdamState<T>& state);

/// Halves (or scales by `factor`) the learning rate once the best validation
/// loss has not strictly improved for `patience` consecutive epochs, then
/// restarts the count.
class PlateauScheduler {
 public:
  PlateauScheduler(std::size_t patience, double factor);

  /// Feed one epoch's validation loss; returns the (possibly reduced) rate.
  double step(double val_loss, double lr);

  std::size_t bad_epochs() const noexcept { return bad_epochs_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
};

/// Replays `history` through a fresh scheduler starting at `lr`.
double plateau_scheduler(std::span<const double> history, std::size_t patience, double factor, double lr);

}  // namespace ptychoforge::nn
