#include "dlcz/inference.hpp"

#include "dlcz/engine.hpp"
#include "dlcz/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dlcz::inference {

namespace {

constexpr double kNegativeTolerance = 1e-9;
constexpr std::uint64_t kSamplesPerStream = 4096;

void check_eta(double eta, const char* name) {
  if (!(eta > 0.0 && eta <= 1.0)) throw DomainError(std::string(name) + " must lie in (0,1]");
}

RestrictedDensityMatrix raw_inverse(const RestrictedDensityMatrix& r, double u, double d) {
  RestrictedDensityMatrix out;
  out.p11 = r.p11 / (u * d);
  out.p10 = (r.p10 - u * (1.0 - d) * out.p11) / u;
  out.p01 = (r.p01 - (1.0 - u) * d * out.p11) / d;
  out.p00 = r.p00 - (1.0 - u) * out.p10 - (1.0 - d) * out.p01 - (1.0 - u) * (1.0 - d) * out.p11;
  out.d = r.d / std::sqrt(u * d);
  return out;
}

RestrictedDensityMatrix renormalize(const RestrictedDensityMatrix& r) {
  const double norm = r.normalization();
  if (!(norm > 0.0)) throw UnphysicalInversion("P", norm);
  return {r.p00 / norm, r.p01 / norm, r.p10 / norm, r.p11 / norm, r.d / norm};
}

InversionResult finish(RestrictedDensityMatrix r, InversionPolicy policy) {
  InversionResult out;
  if (policy == InversionPolicy::linear) {
    out.rho = renormalize(r);
    return out;
  }
  const std::pair<const char*, double*> diag[] = {
      {"p00", &r.p00}, {"p01", &r.p01}, {"p10", &r.p10}, {"p11", &r.p11}};
  for (auto [name, value] : diag) {
    if (*value >= 0.0) continue;
    if (policy == InversionPolicy::strict && *value < -kNegativeTolerance) throw UnphysicalInversion(name, *value);
    if (*value < -kNegativeTolerance) out.clipped.emplace_back(name);
    *value = 0.0;
  }
  const double bound = std::sqrt(r.p01 * r.p10);
  const double mag = std::abs(r.d);
  if (mag > bound * (1.0 + kNegativeTolerance) + 1e-15) {
    if (policy == InversionPolicy::strict) throw UnphysicalInversion("d", mag);
    r.d = mag > 0.0 ? r.d * (bound / mag) : r.d;
    out.clipped.emplace_back("d");
  }
  out.rho = renormalize(r);
  return out;
}

// Normal draw conditioned on [lo, hi] by rejection.
double truncated_normal(std::mt19937_64& rng, double mean, double sigma, double lo, double hi) {
  if (sigma == 0.0) return mean;
  std::normal_distribution<double> dist(mean, sigma);
  for (int attempt = 0; attempt < 100'000; ++attempt) {
    const double x = dist(rng);
    if (x >= lo && x <= hi) return x;
  }
  throw DomainError("truncated normal: valid range carries negligible probability");
}

struct Welford {
  std::uint64_t n = 0;
  double mean = 0.0, m2 = 0.0;
  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

}  // namespace

void EfficiencyChain::validate() const {
  check_eta(eta_path_u, "eta_path_U");
  check_eta(eta_path_d, "eta_path_D");
  check_eta(eta_readout, "eta_readout");
}

RestrictedDensityMatrix apply_loss_map(const RestrictedDensityMatrix& r, double u, double d) {
  check_eta(u, "eta_U");
  check_eta(d, "eta_D");
  RestrictedDensityMatrix out;
  out.p00 = r.p00 + (1.0 - u) * r.p10 + (1.0 - d) * r.p01 + (1.0 - u) * (1.0 - d) * r.p11;
  out.p10 = u * r.p10 + u * (1.0 - d) * r.p11;
  out.p01 = d * r.p01 + (1.0 - u) * d * r.p11;
  out.p11 = u * d * r.p11;
  out.d = std::sqrt(u * d) * r.d;
  return out;
}

InversionResult invert_loss(const RestrictedDensityMatrix& rho, double eta_u, double eta_d, InversionPolicy policy) {
  check_eta(eta_u, "eta_U");
  check_eta(eta_d, "eta_D");
  return finish(raw_inverse(rho, eta_u, eta_d), policy);
}

RestrictedDensityMatrix invert_loss(const RestrictedDensityMatrix& rho, double eta_u, double eta_d) {
  return invert_loss(rho, eta_u, eta_d, InversionPolicy::strict).rho;
}

InversionResult infer_atomic_state(const RestrictedDensityMatrix& rho_output, double eta_readout,
                                   InversionPolicy policy) {
  return invert_loss(rho_output, eta_readout, eta_readout, policy);
}

RestrictedDensityMatrix infer_atomic_state(const RestrictedDensityMatrix& rho_output, double eta_readout) {
  return infer_atomic_state(rho_output, eta_readout, InversionPolicy::strict).rho;
}

double concurrence_c0(const RestrictedDensityMatrix& rho) {
  const double norm = rho.normalization();
  if (!(norm > 0.0)) throw DomainError("concurrence needs P > 0");
  return (2.0 * std::abs(rho.d) - 2.0 * std::sqrt(std::max(0.0, rho.p00 * rho.p11))) / norm;
}

double coherence_from_concurrence(double p00, double p01, double p10, double p11, double concurrence) {
  const double norm = p00 + p01 + p10 + p11;
  return concurrence * norm / 2.0 + std::sqrt(std::max(0.0, p00 * p11));
}

TableColumns correct_chain(const RestrictedDensityMatrix& detected, const EfficiencyChain& chain,
                           InversionPolicy policy) {
  chain.validate();
  TableColumns t;
  t.detected = detected;
  auto out = invert_loss(detected, chain.eta_path_u, chain.eta_path_d, policy);
  auto atomic = infer_atomic_state(out.rho, chain.eta_readout, policy);
  t.output = out.rho;
  t.atomic = atomic.rho;
  t.clipped_output = std::move(out.clipped);
  t.clipped_atomic = std::move(atomic.clipped);
  t.c_detected = ConcurrenceResult::from_unclamped(concurrence_c0(t.detected));
  t.c_output = ConcurrenceResult::from_unclamped(concurrence_c0(t.output));
  t.c_atomic = ConcurrenceResult::from_unclamped(concurrence_c0(t.atomic));
  return t;
}

PropagationResult propagate_uncertainty(const ChainUncertainty& in, InversionPolicy policy, std::uint64_t n_samples,
                                        std::uint64_t seed) {
  if (n_samples < 2) throw DomainError("propagation needs at least 2 samples");
  const std::complex<double> d_phase =
      std::abs(in.detected.d) > 0.0 ? in.detected.d / std::abs(in.detected.d) : std::complex<double>(1.0);

  Welford out_stats, atomic_stats;
  PropagationResult res;
  res.n_samples = n_samples;
  std::mt19937_64 rng;
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    if (i % kSamplesPerStream == 0) rng.seed(engine::derive_seed(seed, i / kSamplesPerStream));
    RestrictedDensityMatrix r;
    r.p00 = truncated_normal(rng, in.detected.p00, in.sigma.p00, 0.0, 1.0);
    r.p01 = truncated_normal(rng, in.detected.p01, in.sigma.p01, 0.0, 1.0);
    r.p10 = truncated_normal(rng, in.detected.p10, in.sigma.p10, 0.0, 1.0);
    r.p11 = truncated_normal(rng, in.detected.p11, in.sigma.p11, 0.0, 1.0);
    r.d = d_phase * truncated_normal(rng, std::abs(in.detected.d), in.sigma.d, 0.0, 1.0);
    EfficiencyChain c;
    c.eta_path_u = truncated_normal(rng, in.chain.eta_path_u, in.chain_sigma.eta_path_u, 1e-12, 1.0);
    c.eta_path_d = truncated_normal(rng, in.chain.eta_path_d, in.chain_sigma.eta_path_d, 1e-12, 1.0);
    c.eta_readout = truncated_normal(rng, in.chain.eta_readout, in.chain_sigma.eta_readout, 1e-12, 1.0);
    try {
      const auto t = correct_chain(r, c, policy);
      out_stats.add(t.c_output.C0);
      atomic_stats.add(t.c_atomic.C0);
    } catch (const UnphysicalInversion&) {
      ++res.n_unphysical;
    }
  }
  if (2 * res.n_unphysical > n_samples) {
    throw EstimationError("uncertainty propagation: " + std::to_string(res.n_unphysical) + " of " +
                          std::to_string(n_samples) + " samples unphysical");
  }
  const auto central = correct_chain(in.detected, in.chain, policy);
  res.output = ConcurrenceResult::from_unclamped(central.c_output.C0, out_stats.stddev());
  res.atomic = ConcurrenceResult::from_unclamped(central.c_atomic.C0, atomic_stats.stddev());
  res.mean_output_c0 = out_stats.mean;
  res.mean_atomic_c0 = atomic_stats.mean;
  return res;
}

}  // namespace dlcz::inference
