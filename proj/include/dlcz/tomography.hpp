#pragma once

// Two-step reconstruction of the restricted density matrix from click
// records: photon statistics of the separated fields give the diagonals, the
// interference fringe gives the coherence d = V (p10 + p01) / 2.

#include "dlcz/engine.hpp"
#include "dlcz/model.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dlcz::tomo {

using model::ConcurrenceResult;
using model::RestrictedDensityMatrix;

// Heralded outcome counts indexed [herald][setting][outcome], outcome bit 0 =
// D2a click, bit 1 = D2b click. Setting 0 is separate detection, setting k is
// interference at phase k-1.
struct HeraldedCounts {
  std::vector<double> phases;
  std::array<std::vector<std::array<std::uint64_t, 4>>, 2> counts;

  explicit HeraldedCounts(std::vector<double> phases_);
  std::uint64_t total() const;
};

HeraldedCounts tabulate(std::span<const engine::TrialRecord> records, std::span<const double> phases);

struct DiagonalEstimate {
  double p00 = 0, p01 = 0, p10 = 0, p11 = 0;
  double se00 = 0, se01 = 0, se10 = 0, se11 = 0;
  std::uint64_t n_heralds = 0;
};

/// Fractions of separate-readout heralds with no click, D only, U only and
/// both, with binomial standard errors. Field U is detected at D2a.
DiagonalEstimate estimate_diagonals(const HeraldedCounts& counts);
DiagonalEstimate estimate_diagonals(std::span<const engine::TrialRecord> records);

struct FringePoint {
  double phase = 0;
  double counts = 0;
  double exposure = 1;  // heralds at this phase; rate = counts / exposure
};

struct FringeFit {
  double amplitude = 0;
  double visibility = 0;
  double phase_offset = 0;
  double sigma_visibility = 0;
  double sigma_phase = 0;
};

/// Least-squares fit of rate = A (1 + V cos(phi - phi0)), linear in
/// (A, A V cos phi0, A V sin phi0). Errors come from the per-point counting
/// variance propagated through the normal equations.
FringeFit fit_fringe(std::span<const FringePoint> points);

// Per-herald, per-phase counts for the interference readout.
struct FringeData {
  struct PhaseCounts {
    std::uint64_t heralds = 0;
    std::uint64_t clicks_2a = 0;
    std::uint64_t clicks_2b = 0;
  };
  std::vector<double> phases;
  std::array<std::vector<PhaseCounts>, 2> by_herald;
};

FringeData fringe_data(const HeraldedCounts& counts);

struct VisibilityEstimate {
  double V = 0;
  double sigma = 0;
  // fits[herald][detector], detector 0 = D2a, 1 = D2b
  std::array<std::array<std::optional<FringeFit>, 2>, 2> fits;
  // phi0(D1b) - phi0(D1a), wrapped to (-pi, pi]
  std::optional<double> herald_offset;
  double herald_offset_sigma = 0;
};

/// Fits every herald/detector fringe that has data and merges the
/// visibilities by inverse-variance weighting.
VisibilityEstimate fit_visibility(const FringeData& data);

struct AssembledRho {
  RestrictedDensityMatrix rho;
  bool repaired = false;
};

/// d = V (p10 + p01) / 2, clamped to sqrt(p01 p10) when it exceeds it.
AssembledRho assemble_rho(const DiagonalEstimate& diagonals, double visibility);

struct CorrelationStats {
  double p1 = 0, p2 = 0, p12 = 0;
  double g12 = 0, p_c = 0;
  double se_p1 = 0, se_p2 = 0, se_p12 = 0, se_g12 = 0, se_p_c = 0;
  std::uint64_t n_trials = 0;
};

CorrelationStats estimate_correlations(std::uint64_t n_trials, std::uint64_t n_field1, std::uint64_t n_field2,
                                       std::uint64_t n_joint);
CorrelationStats estimate_correlations(std::uint64_t n_trials, std::span<const engine::TrialRecord> records);

struct PipelineResult {
  DiagonalEstimate diagonals;
  VisibilityEstimate visibility;
  AssembledRho assembled;
  ConcurrenceResult concurrence;
};

/// Diagonals, visibility and concurrence from one count table.
PipelineResult run_pipeline(const HeraldedCounts& counts);

struct BootstrapResult {
  ConcurrenceResult concurrence;  // point estimate from the full sample, sigma from resamples
  std::uint64_t n_resamples = 0;
  std::uint64_t failed_resamples = 0;
  bool few_heralds = false;  // fewer than 100 heralds; sigma unreliable
};

/// Resamples heralded trials with replacement and reruns the pipeline; sigma
/// is the standard deviation of C0 over resamples.
BootstrapResult bootstrap_concurrence(const HeraldedCounts& counts, std::uint64_t n_resamples, std::uint64_t seed);
BootstrapResult bootstrap_concurrence(std::span<const engine::TrialRecord> records, std::span<const double> phases,
                                      std::uint64_t n_resamples, std::uint64_t seed);

struct TomographyResult {
  PipelineResult pipeline;
  BootstrapResult bootstrap;
  double p_c_herald = 0;  // separate-readout heralds with any field-2 click
  double se_p_c_herald = 0;
};

TomographyResult analyze_entangle(const HeraldedCounts& counts, std::uint64_t n_resamples, std::uint64_t seed);

}  // namespace dlcz::tomo
