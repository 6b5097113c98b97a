#pragma once

// Closed-form model of heralded single-excitation entanglement between two
// ensembles: cross-correlation, fringe visibility, the restricted two-mode
// density matrix, its concurrence, and the storage-time decay of p_c and g12.

#include <complex>
#include <optional>
#include <utility>

namespace dlcz::model {

struct ModelParams {
  double chi = 0.0;    // excitation probability per trial per ensemble
  double p_c = 0.0;    // herald-conditional field-2 detection probability
  double xi = 1.0;     // field-2 mode overlap
  double theta = 0.0;  // herald phase (rad)
  double g12 = 1.0;    // normalized field-1/field-2 cross-correlation
  int herald_sign = +1;

  void validate() const;
};

// Two-mode state restricted to at most one photon per mode with
// number-changing coherences set to zero. p_ij has i photons in mode U and j
// in mode D. Entries are unnormalized; normalization() gives P.
struct RestrictedDensityMatrix {
  double p00 = 1.0;
  double p01 = 0.0;
  double p10 = 0.0;
  double p11 = 0.0;
  std::complex<double> d{};

  double normalization() const noexcept { return p00 + p01 + p10 + p11; }
  RestrictedDensityMatrix normalized() const;
  void validate() const;
};

struct ConcurrenceResult {
  double C = 0.0;
  double C0 = 0.0;
  std::optional<double> sigma;

  static ConcurrenceResult from_unclamped(double c0, std::optional<double> sigma = std::nullopt);
};

// Exponential relaxation of p_c and g12 with storage time, anchored at tau0.
// Times are in seconds.
struct DecayModel {
  double tau0 = 0.2e-6;
  double pc0 = 0.135;
  double g0 = 30.0;
  double tau_d_pc = 13e-6;
  double tau_d_g = 13e-6;
  double g_floor = 1.0;

  void validate() const;
};

struct DecayPoint {
  double p_c;
  double g12;
};

double g12_from_chi(double chi);
double chi_from_g12(double g12);

/// Fringe visibility xi (g12-1)/(g12+1).
double visibility(double g12, double xi);

/// Diagonals and coherence of the restricted matrix in the low-excitation
/// limit: p00 = 1-p_c, p01 = p10 = p_c/2, p11 = p_c^2/g12, |d| = V p_c/2.
/// A "-" herald shifts the coherence phase by pi.
RestrictedDensityMatrix diagonals_from_model(const ModelParams& params);

/// C0 = (2|d| - 2 sqrt(p00 p11)) / P, C = max(0, C0).
ConcurrenceResult concurrence_from_rho(const RestrictedDensityMatrix& rho);

/// C0 = p_c (V - 2 sqrt((1-p_c)/g12)) with V from visibility().
ConcurrenceResult concurrence_analytic(const ModelParams& params);

/// Smallest g12 giving C0 > 0 at fixed p_c and xi.
double threshold_g12(double p_c, double xi);

DecayPoint decay_curves(const DecayModel& model, double tau);

/// Storage time where C0 crosses zero. Returns +infinity when C0 stays
/// positive for all storage times.
double separability_time(const DecayModel& model, double xi);

}  // namespace dlcz::model
