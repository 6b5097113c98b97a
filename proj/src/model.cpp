#include "dlcz/model.hpp"

#include "dlcz/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dlcz::model {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

// C0 along the decay curves.
double decayed_c0(const DecayModel& model, double xi, double tau) {
  const auto pt = decay_curves(model, tau);
  ModelParams params;
  params.p_c = pt.p_c;
  params.g12 = pt.g12;
  params.xi = xi;
  return concurrence_analytic(params).C0;
}

}  // namespace

void ModelParams::validate() const {
  if (!(chi >= 0.0 && chi < 1.0)) throw DomainError("chi must lie in [0,1)");
  if (!is_probability(p_c)) throw DomainError("p_c must lie in [0,1]");
  if (!is_probability(xi)) throw DomainError("xi must lie in [0,1]");
  if (!(g12 > 0.0)) throw DomainError("g12 must be positive");
  if (herald_sign != 1 && herald_sign != -1) throw DomainError("herald_sign must be +1 or -1");
}

RestrictedDensityMatrix RestrictedDensityMatrix::normalized() const {
  const double norm = normalization();
  if (!(norm > 0.0)) throw DomainError("restricted density matrix has zero normalization");
  return {p00 / norm, p01 / norm, p10 / norm, p11 / norm, d / norm};
}

void RestrictedDensityMatrix::validate() const {
  if (p00 < 0.0 || p01 < 0.0 || p10 < 0.0 || p11 < 0.0) throw DomainError("negative diagonal element");
  if (!(normalization() > 0.0)) throw DomainError("restricted density matrix has zero normalization");
  if (std::abs(d) > std::sqrt(p01 * p10) + 1e-12) throw DomainError("|d| exceeds sqrt(p01 p10)");
}

ConcurrenceResult ConcurrenceResult::from_unclamped(double c0, std::optional<double> sigma) {
  return {std::max(0.0, c0), c0, sigma};
}

void DecayModel::validate() const {
  if (!(tau_d_pc > 0.0 && tau_d_g > 0.0)) throw DomainError("decay constants must be positive");
  if (!(g0 > g_floor)) throw DomainError("g0 must exceed the g12 floor");
  if (!is_probability(pc0)) throw DomainError("pc0 must lie in [0,1]");
}

double g12_from_chi(double chi) {
  if (!(chi > 0.0)) throw DomainError("g12 = 1 + 1/chi needs chi > 0");
  return 1.0 + 1.0 / chi;
}

double chi_from_g12(double g12) {
  if (!(g12 > 1.0)) throw DomainError("g12 <= 1 has no corresponding excitation probability");
  return 1.0 / (g12 - 1.0);
}

double visibility(double g12, double xi) {
  if (!(g12 >= 1.0)) throw DomainError("visibility needs g12 >= 1");
  if (std::isinf(g12)) return xi;
  return xi * (g12 - 1.0) / (g12 + 1.0);
}

RestrictedDensityMatrix diagonals_from_model(const ModelParams& params) {
  params.validate();
  const double p_c = params.p_c;
  RestrictedDensityMatrix rho;
  rho.p00 = 1.0 - p_c;
  rho.p01 = p_c / 2.0;
  rho.p10 = p_c / 2.0;
  rho.p11 = p_c * p_c / params.g12;
  const double phase = params.theta + (params.herald_sign < 0 ? std::numbers::pi : 0.0);
  rho.d = std::polar(visibility(params.g12, params.xi) * p_c / 2.0, phase);
  return rho;
}

ConcurrenceResult concurrence_from_rho(const RestrictedDensityMatrix& rho) {
  const double norm = rho.normalization();
  if (!(norm > 0.0)) throw DomainError("concurrence needs P > 0");
  const double c0 = (2.0 * std::abs(rho.d) - 2.0 * std::sqrt(rho.p00 * rho.p11)) / norm;
  return ConcurrenceResult::from_unclamped(c0);
}

ConcurrenceResult concurrence_analytic(const ModelParams& params) {
  params.validate();
  const double v = visibility(params.g12, params.xi);
  const double c0 = params.p_c * (v - 2.0 * std::sqrt((1.0 - params.p_c) / params.g12));
  return ConcurrenceResult::from_unclamped(c0);
}

double threshold_g12(double p_c, double xi) {
  if (!(p_c > 0.0 && p_c < 1.0)) throw DomainError("threshold needs p_c in (0,1)");
  if (!(xi > 0.0 && xi <= 1.0)) throw DomainError("no g12 threshold: overlap must lie in (0,1]");
  // Visibility rises and the two-photon penalty falls with g, so the gap is
  // strictly increasing on g > 1 and has at most one root.
  auto gap = [&](double g) { return xi * (g - 1.0) / (g + 1.0) - 2.0 * std::sqrt((1.0 - p_c) / g); };
  double lo = 1.0;
  double hi = 1e6;
  if (gap(hi) <= 0.0) throw DomainError("parameters never yield C > 0 for g12 <= 1e6");
  while ((hi - lo) > 1e-10 * hi) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

DecayPoint decay_curves(const DecayModel& model, double tau) {
  model.validate();
  if (tau < model.tau0) throw DomainError("decay curves are defined for tau >= tau0");
  const double dt = tau - model.tau0;
  return {model.pc0 * std::exp(-dt / model.tau_d_pc),
          model.g_floor + (model.g0 - model.g_floor) * std::exp(-dt / model.tau_d_g)};
}

double separability_time(const DecayModel& model, double xi) {
  model.validate();
  const double c_start = decayed_c0(model, xi, model.tau0);
  if (!(c_start > 0.0)) throw DomainError("C0 is not positive at tau0; no separability onset to find");

  constexpr double kTolerance = 1e-9;  // 1 ns
  const double longest = std::max(model.tau_d_pc, model.tau_d_g);
  if (std::isinf(longest)) return std::numeric_limits<double>::infinity();

  double lo = model.tau0;
  double step = std::min(model.tau_d_pc, model.tau_d_g);
  double hi = lo + step;
  // Past ~40 decay constants both curves have settled on their asymptotes.
  const double horizon = model.tau0 + 40.0 * longest;
  while (decayed_c0(model, xi, hi) > 0.0) {
    lo = hi;
    if (hi >= horizon) return std::numeric_limits<double>::infinity();
    step *= 2.0;
    hi = std::min(hi + step, horizon);
  }
  while (hi - lo > kTolerance) {
    const double mid = 0.5 * (lo + hi);
    (decayed_c0(model, xi, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace dlcz::model
