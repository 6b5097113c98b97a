#pragma once

// Loss-channel corrections of a restricted density matrix: detected fields ->
// fields at the ensemble output -> collective atomic state.
//
// With at most one photon per mode the binomial loss map on the diagonals is
// lower-triangular, so both directions are closed form.

#include "dlcz/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dlcz::inference {

using model::ConcurrenceResult;
using model::RestrictedDensityMatrix;

struct EfficiencyChain {
  double eta_path_u = 1.0;   // propagation x detection, field 2U
  double eta_path_d = 1.0;   // propagation x detection, field 2D
  double eta_readout = 1.0;  // atomic excitation -> field-2 photon

  void validate() const;
};

enum class InversionPolicy {
  strict,  // negative probabilities throw UnphysicalInversion
  clip,    // negative probabilities set to zero, |d| clamped, renormalized
  linear,  // raw inverse, no positivity; only P > 0 is required
};

struct InversionResult {
  RestrictedDensityMatrix rho;
  std::vector<std::string> clipped;  // elements changed by the clip policy
};

/// Forward loss channel; trace preserving.
RestrictedDensityMatrix apply_loss_map(const RestrictedDensityMatrix& rho, double eta_u, double eta_d);

/// Exact inverse of apply_loss_map followed by renormalization. Throws
/// UnphysicalInversion naming the first diagonal below -1e-9, or "d" when the
/// coherence exceeds sqrt(p01 p10).
RestrictedDensityMatrix invert_loss(const RestrictedDensityMatrix& rho, double eta_u, double eta_d);
InversionResult invert_loss(const RestrictedDensityMatrix& rho, double eta_u, double eta_d, InversionPolicy policy);

/// Readout treated as the same loss channel with eta_u = eta_d = eta_readout.
RestrictedDensityMatrix infer_atomic_state(const RestrictedDensityMatrix& rho_output, double eta_readout);
InversionResult infer_atomic_state(const RestrictedDensityMatrix& rho_output, double eta_readout,
                                   InversionPolicy policy);

/// C0 = (2|d| - 2 sqrt(p00 p11)) / P, with p00 p11 floored at zero so it is
/// defined for linear-policy matrices.
double concurrence_c0(const RestrictedDensityMatrix& rho);

/// Coherence |d| that gives concurrence C for the given diagonals.
double coherence_from_concurrence(double p00, double p01, double p10, double p11, double concurrence);

struct TableColumns {
  RestrictedDensityMatrix detected, output, atomic;
  ConcurrenceResult c_detected, c_output, c_atomic;
  std::vector<std::string> clipped_output, clipped_atomic;
};

/// Runs detected -> output -> atomic with one policy for both steps.
TableColumns correct_chain(const RestrictedDensityMatrix& detected, const EfficiencyChain& chain,
                           InversionPolicy policy);

struct ElementErrors {
  double p00 = 0, p01 = 0, p10 = 0, p11 = 0, d = 0;
};

struct ChainUncertainty {
  RestrictedDensityMatrix detected;
  ElementErrors sigma;
  EfficiencyChain chain;
  EfficiencyChain chain_sigma;  // absolute standard deviations
};

struct PropagationResult {
  ConcurrenceResult output;  // C0 at the central values, sigma from samples
  ConcurrenceResult atomic;
  double mean_output_c0 = 0;
  double mean_atomic_c0 = 0;
  std::uint64_t n_samples = 0;
  std::uint64_t n_unphysical = 0;
};

/// Monte Carlo propagation: every input is drawn from an independent normal
/// truncated to its valid range and pushed through correct_chain. Samples
/// the policy rejects count as unphysical; more than half unphysical throws
/// EstimationError.
PropagationResult propagate_uncertainty(const ChainUncertainty& input, InversionPolicy policy,
                                        std::uint64_t n_samples = 20'000, std::uint64_t seed = 1);

}  // namespace dlcz::inference
