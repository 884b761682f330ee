#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "ptychoforge/numerics.hpp"
#include "ptychoforge/scan_geometry.hpp"
#include "ptychoforge/simulator.hpp"

namespace ptychoforge {

struct EpieConfig {
  std::size_t iterations = 400;
  double alpha = 1.0;  // object step
  double beta = 1.0;   // probe step
  std::size_t probe_update_start = 5;
  std::uint64_t shuffle_seed = 0;

  /// Throws ArgumentError unless alpha, beta lie in (0, 2].
  void validate() const;
};

struct EpieState {
  ComplexField2D object_est;
  ComplexField2D probe_est;
  std::vector<double> error_history;  // one entry per completed iteration
};

/// ψ(r) = P(r) · O(r + r_j) over the probe window.
ComplexField2D exit_wave(const ComplexField2D& object_est, const ComplexField2D& probe_est,
                         const ScanPosition& position);

/// Replace the modulus of `farfield` by sqrt(measured), keeping its phase.
/// Pixels with zero modulus get phase 0.
ComplexField2D modulus_project(const ComplexField2D& farfield, const RealImage2D& measured);

/// O(r + r_j) += alpha · conj(P(r)) / max|P|² · Δψ(r), inside the window only.
void update_object(ComplexField2D& object_est, const ComplexField2D& probe_est,
                   const ScanPosition& position, const ComplexField2D& delta_psi, double alpha);

/// P(r) += beta · conj(O(r + r_j)) / max|O_patch|² · Δψ(r).
void update_probe(const ComplexField2D& object_est, ComplexField2D& probe_est,
                  const ScanPosition& position, const ComplexField2D& delta_psi, double beta);

/// E = Σ_j Σ_q (|fft2c(ψ_j)| − √I_j)² / Σ_j Σ_q I_j
double data_error(const EpieState& state, const DiffractionStack& stack);

/// Called after each iteration with (iteration index, data error).
using EpieProgress = std::function<void(std::size_t, double)>;

/// Sequential ePIE. Each iteration visits the positions in a fresh seeded
/// permutation; the probe is updated from iteration `probe_update_start` on.
EpieState reconstruct(const DiffractionStack& stack, const ScanGrid& grid, const EpieConfig& config,
                      const ComplexField2D& init_object, const ComplexField2D& init_probe,
                      const EpieProgress& progress = {});

/// Initial probe guess: P · (1 + noise · (g1 + i g2)/√2) with g1, g2 standard normal.
ComplexField2D perturb_probe(const ComplexField2D& probe, double noise, SeededRng& rng);

}  // namespace ptychoforge
