#include "dlcz/tomography.hpp"

#include "dlcz/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

namespace dlcz::tomo {

namespace {

using engine::Herald;
using engine::TrialRecord;

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

double binomial_se(double p, double n) { return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0; }

// Variance of an observed rate counts/exposure.
double rate_variance(double counts, double exposure) {
  if (counts <= exposure) return counts * (exposure - counts) / (exposure * exposure * exposure);
  return counts / (exposure * exposure);
}

// Welford accumulator; exact zero spread for identical samples.
struct RunningStats {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

}  // namespace

HeraldedCounts::HeraldedCounts(std::vector<double> phases_) : phases(std::move(phases_)) {
  for (auto& h : counts) h.assign(phases.size() + 1, std::array<std::uint64_t, 4>{});
}

std::uint64_t HeraldedCounts::total() const {
  std::uint64_t n = 0;
  for (const auto& h : counts) {
    for (const auto& s : h) {
      for (auto c : s) n += c;
    }
  }
  return n;
}

HeraldedCounts tabulate(std::span<const TrialRecord> records, std::span<const double> phases) {
  HeraldedCounts out(std::vector<double>(phases.begin(), phases.end()));
  for (const auto& r : records) {
    if (r.herald == Herald::none || r.mode == 'C') continue;
    const std::size_t setting = r.mode == 'S' ? 0 : r.phase_index + 1;
    if (setting >= out.counts[0].size()) throw EstimationError("record phase index outside the phase list");
    const std::size_t outcome = (r.click_2a ? 1u : 0u) | (r.click_2b ? 2u : 0u);
    ++out.counts[static_cast<std::size_t>(r.herald)][setting][outcome];
  }
  return out;
}

DiagonalEstimate estimate_diagonals(const HeraldedCounts& counts) {
  std::array<double, 4> c{};
  for (const auto& h : counts.counts) {
    for (std::size_t o = 0; o < 4; ++o) c[o] += static_cast<double>(h[0][o]);
  }
  const double n = c[0] + c[1] + c[2] + c[3];
  if (n == 0) throw EstimationError("no heralded trials with separate readout");
  DiagonalEstimate est;
  est.n_heralds = static_cast<std::uint64_t>(n);
  est.p00 = c[0] / n;
  est.p10 = c[1] / n;
  est.p01 = c[2] / n;
  est.p11 = c[3] / n;
  est.se00 = binomial_se(est.p00, n);
  est.se10 = binomial_se(est.p10, n);
  est.se01 = binomial_se(est.p01, n);
  est.se11 = binomial_se(est.p11, n);
  return est;
}

DiagonalEstimate estimate_diagonals(std::span<const TrialRecord> records) {
  return estimate_diagonals(tabulate(records, {}));
}

FringeFit fit_fringe(std::span<const FringePoint> points) {
  std::vector<double> distinct;
  double total_counts = 0.0;
  for (const auto& p : points) {
    if (!(p.exposure > 0.0)) throw FitError("fringe point with non-positive exposure");
    total_counts += p.counts;
    const double phi = wrap_angle(p.phase);
    bool seen = false;
    for (double q : distinct) seen = seen || std::abs(wrap_angle(q - phi)) < 1e-9;
    if (!seen) distinct.push_back(phi);
  }
  if (distinct.size() < 3) throw FitError("fringe fit needs at least 3 distinct phases");
  if (!(total_counts > 0.0)) throw FitError("fringe fit needs at least one count");

  Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
  Eigen::Vector3d xty = Eigen::Vector3d::Zero();
  Eigen::Matrix3d meat = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d x(1.0, std::cos(p.phase), std::sin(p.phase));
    const double rate = p.counts / p.exposure;
    xtx += x * x.transpose();
    xty += x * rate;
    meat += rate_variance(p.counts, p.exposure) * x * x.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(xtx, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 1e-12 * eig.eigenvalues().maxCoeff()) {
    throw FitError("fringe design matrix is singular");
  }
  const Eigen::Matrix3d inv = xtx.inverse();
  const Eigen::Vector3d beta = inv * xty;
  const Eigen::Matrix3d cov = inv * meat * inv;

  const double a = beta(0);
  const double b1 = beta(1);
  const double b2 = beta(2);
  if (!(a > 0.0)) throw FitError("fringe mean rate is not positive");
  const double h = std::hypot(b1, b2);

  FringeFit fit;
  fit.amplitude = a;
  fit.visibility = std::clamp(h / a, 0.0, 1.0);
  fit.phase_offset = std::atan2(b2, b1);
  if (h > 0.0) {
    const Eigen::Vector3d gv(-h / (a * a), b1 / (a * h), b2 / (a * h));
    const Eigen::Vector3d gp(0.0, -b2 / (h * h), b1 / (h * h));
    fit.sigma_visibility = std::sqrt(std::max(0.0, gv.dot(cov * gv)));
    fit.sigma_phase = std::sqrt(std::max(0.0, gp.dot(cov * gp)));
  } else {
    fit.sigma_visibility = std::sqrt(std::max(0.0, 0.5 * (cov(1, 1) + cov(2, 2)))) / a;
    fit.sigma_phase = std::numbers::pi;
  }
  return fit;
}

FringeData fringe_data(const HeraldedCounts& counts) {
  FringeData data;
  data.phases = counts.phases;
  for (std::size_t h = 0; h < 2; ++h) {
    data.by_herald[h].resize(counts.phases.size());
    for (std::size_t k = 0; k < counts.phases.size(); ++k) {
      const auto& c = counts.counts[h][k + 1];
      auto& pc = data.by_herald[h][k];
      pc.heralds = c[0] + c[1] + c[2] + c[3];
      pc.clicks_2a = c[1] + c[3];
      pc.clicks_2b = c[2] + c[3];
    }
  }
  return data;
}

VisibilityEstimate fit_visibility(const FringeData& data) {
  VisibilityEstimate est;
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t det = 0; det < 2; ++det) {
      std::vector<FringePoint> pts;
      for (std::size_t k = 0; k < data.phases.size(); ++k) {
        const auto& pc = data.by_herald[h][k];
        if (pc.heralds == 0) continue;
        pts.push_back({data.phases[k], static_cast<double>(det == 0 ? pc.clicks_2a : pc.clicks_2b),
                       static_cast<double>(pc.heralds)});
      }
      try {
        est.fits[h][det] = fit_fringe(pts);
      } catch (const FitError&) {
        // Too few phases or no clicks for this herald/detector pair.
      }
    }
  }

  double weight_sum = 0.0;
  double weighted = 0.0;
  double exact_sum = 0.0;
  int exact_n = 0;
  for (const auto& per_herald : est.fits) {
    for (const auto& fit : per_herald) {
      if (!fit) continue;
      if (fit->sigma_visibility == 0.0) {
        exact_sum += fit->visibility;
        ++exact_n;
        continue;
      }
      const double w = 1.0 / (fit->sigma_visibility * fit->sigma_visibility);
      weight_sum += w;
      weighted += w * fit->visibility;
    }
  }
  if (exact_n > 0) {
    est.V = exact_sum / exact_n;
    est.sigma = 0.0;
  } else if (weight_sum > 0.0) {
    est.V = weighted / weight_sum;
    est.sigma = 1.0 / std::sqrt(weight_sum);
  } else {
    throw FitError("no interference fringe could be fitted");
  }

  // Offsets per detector, aligned to the first one before averaging so that
  // values straddling +-pi do not cancel.
  double off_w = 0.0;
  double off_sum = 0.0;
  std::optional<double> anchor;
  for (std::size_t det = 0; det < 2; ++det) {
    const auto& a = est.fits[0][det];
    const auto& b = est.fits[1][det];
    if (!a || !b) continue;
    double delta = wrap_angle(b->phase_offset - a->phase_offset);
    if (anchor) delta = *anchor + wrap_angle(delta - *anchor);
    else anchor = delta;
    const double var = a->sigma_phase * a->sigma_phase + b->sigma_phase * b->sigma_phase;
    const double w = var > 0.0 ? 1.0 / var : 1e300;
    off_w += w;
    off_sum += w * delta;
  }
  if (off_w > 0.0) {
    est.herald_offset = wrap_angle(off_sum / off_w);
    est.herald_offset_sigma = off_w < 1e300 ? 1.0 / std::sqrt(off_w) : 0.0;
  }
  return est;
}

AssembledRho assemble_rho(const DiagonalEstimate& diag, double visibility) {
  AssembledRho out;
  out.rho.p00 = diag.p00;
  out.rho.p01 = diag.p01;
  out.rho.p10 = diag.p10;
  out.rho.p11 = diag.p11;
  double d = visibility * (diag.p10 + diag.p01) / 2.0;
  const double bound = std::sqrt(diag.p01 * diag.p10);
  if (d > bound) {
    d = bound;
    out.repaired = true;
  }
  out.rho.d = d;
  return out;
}

CorrelationStats estimate_correlations(std::uint64_t n_trials, std::uint64_t n_field1, std::uint64_t n_field2,
                                       std::uint64_t n_joint) {
  if (n_trials == 0) throw EstimationError("no trials");
  if (n_field1 == 0 || n_field2 == 0) throw EstimationError("no detections in one field; g12 undefined");
  if (n_joint == 0) throw EstimationError("no joint detections; g12 undefined");
  if (n_joint > std::min(n_field1, n_field2)) throw EstimationError("joint count exceeds single-field counts");
  const double n = static_cast<double>(n_trials);
  CorrelationStats s;
  s.n_trials = n_trials;
  s.p1 = static_cast<double>(n_field1) / n;
  s.p2 = static_cast<double>(n_field2) / n;
  s.p12 = static_cast<double>(n_joint) / n;
  s.g12 = s.p12 / (s.p1 * s.p2);
  s.p_c = s.p12 / s.p1;
  s.se_p1 = binomial_se(s.p1, n);
  s.se_p2 = binomial_se(s.p2, n);
  s.se_p12 = binomial_se(s.p12, n);
  s.se_p_c = binomial_se(s.p_c, static_cast<double>(n_field1));

  // Delta method on ln g12 = ln q11 - ln(q11 + q10) - ln(q11 + q01) over the
  // multinomial cells (q11, q10, q01, q00).
  const double q11 = s.p12;
  const double q10 = s.p1 - s.p12;
  const double q01 = s.p2 - s.p12;
  const double g11 = 1.0 / q11 - 1.0 / s.p1 - 1.0 / s.p2;
  const double g10 = -1.0 / s.p1;
  const double g01 = -1.0 / s.p2;
  const double m1 = q11 * g11 + q10 * g10 + q01 * g01;
  const double m2 = q11 * g11 * g11 + q10 * g10 * g10 + q01 * g01 * g01;
  s.se_g12 = s.g12 * std::sqrt(std::max(0.0, (m2 - m1 * m1) / n));
  return s;
}

CorrelationStats estimate_correlations(std::uint64_t n_trials, std::span<const TrialRecord> records) {
  std::uint64_t n1 = 0, n2 = 0, n12 = 0;
  for (const auto& r : records) {
    const bool f1 = r.herald != Herald::none;
    n1 += f1;
    n2 += r.click_2a;
    n12 += (f1 && r.click_2a);
  }
  return estimate_correlations(n_trials, n1, n2, n12);
}

PipelineResult run_pipeline(const HeraldedCounts& counts) {
  PipelineResult r;
  r.diagonals = estimate_diagonals(counts);
  r.visibility = fit_visibility(fringe_data(counts));
  r.assembled = assemble_rho(r.diagonals, r.visibility.V);
  r.concurrence = model::concurrence_from_rho(r.assembled.rho);
  return r;
}

BootstrapResult bootstrap_concurrence(const HeraldedCounts& counts, std::uint64_t n_resamples, std::uint64_t seed) {
  if (n_resamples < 100) throw DomainError("bootstrap needs at least 100 resamples");
  BootstrapResult out;
  out.n_resamples = n_resamples;
  const std::uint64_t n = counts.total();
  out.few_heralds = n < 100;
  out.concurrence = run_pipeline(counts).concurrence;

  struct Cell {
    std::size_t h, s, o;
    double p;
  };
  std::vector<Cell> cells;
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t s = 0; s < counts.counts[h].size(); ++s) {
      for (std::size_t o = 0; o < 4; ++o) {
        const auto c = counts.counts[h][s][o];
        if (c > 0) cells.push_back({h, s, o, static_cast<double>(c) / static_cast<double>(n)});
      }
    }
  }

  std::mt19937_64 rng(seed);
  RunningStats stats;
  for (std::uint64_t r = 0; r < n_resamples; ++r) {
    // Multinomial draw of n heralds over the observed cells, which is the same
    // as resampling individual heralded trials with replacement.
    HeraldedCounts resample(counts.phases);
    std::uint64_t left = n;
    double mass = 1.0;
    for (std::size_t k = 0; k < cells.size() && left > 0; ++k) {
      std::uint64_t draw = left;
      if (k + 1 < cells.size()) {
        const double p = std::clamp(cells[k].p / mass, 0.0, 1.0);
        draw = std::binomial_distribution<std::uint64_t>(left, p)(rng);
      }
      resample.counts[cells[k].h][cells[k].s][cells[k].o] = draw;
      left -= draw;
      mass -= cells[k].p;
    }
    try {
      stats.add(run_pipeline(resample).concurrence.C0);
    } catch (const std::exception&) {
      ++out.failed_resamples;
    }
  }
  if (stats.n > 1) out.concurrence.sigma = stats.stddev();
  return out;
}

BootstrapResult bootstrap_concurrence(std::span<const TrialRecord> records, std::span<const double> phases,
                                      std::uint64_t n_resamples, std::uint64_t seed) {
  return bootstrap_concurrence(tabulate(records, phases), n_resamples, seed);
}

TomographyResult analyze_entangle(const HeraldedCounts& counts, std::uint64_t n_resamples, std::uint64_t seed) {
  TomographyResult out;
  out.pipeline = run_pipeline(counts);
  out.bootstrap = bootstrap_concurrence(counts, n_resamples, seed);
  out.pipeline.concurrence.sigma = out.bootstrap.concurrence.sigma;
  const auto& d = out.pipeline.diagonals;
  out.p_c_herald = 1.0 - d.p00;
  out.se_p_c_herald = d.se00;
  return out;
}

}  // namespace dlcz::tomo
