#include "dlcz/fock.hpp"

#include "dlcz/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dlcz::fock {

namespace {

Eigen::Index basis_dim(int n_modes, int n_max) {
  Eigen::Index d = 1;
  for (int k = 0; k < n_modes; ++k) d *= (n_max + 1);
  return d;
}

void check_shape(int n_modes, int n_max) {
  if (n_modes < 1 || n_modes > kMaxModes) {
    throw UsageError("FockDensity supports 1 to 4 modes, got " + std::to_string(n_modes));
  }
  if (n_max < 1) throw UsageError("photon-number cutoff must be at least 1");
}

void check_mode(const FockDensity& s, int mode) {
  if (mode < 0 || mode >= s.n_modes()) {
    throw UsageError("mode index " + std::to_string(mode) + " out of range");
  }
}

double factorial(int n) { return std::tgamma(n + 1.0); }

double binomial(int n, int k) { return factorial(n) / (factorial(k) * factorial(n - k)); }

// std::pow on complex goes through exp/log and returns NaN for 0^0.
Complex ipow(Complex base, int exponent) {
  Complex out{1.0, 0.0};
  for (int k = 0; k < exponent; ++k) out *= base;
  return out;
}

// Product of per-detector no-click probabilities for basis state `index`.
std::vector<double> no_click_table(const FockDensity& state, const DetectorLayout& layout,
                                   Eigen::Index index) {
  std::vector<int> photons(layout.detectors.size(), 0);
  for (int m = 0; m < state.n_modes(); ++m) {
    const int det = layout.mode_to_detector[static_cast<std::size_t>(m)];
    if (det >= 0) photons[static_cast<std::size_t>(det)] += state.photons_in(index, m);
  }
  std::vector<double> q(layout.detectors.size());
  for (std::size_t d = 0; d < q.size(); ++d) q[d] = layout.detectors[d].no_click(photons[d]);
  return q;
}

double pattern_weight(const std::vector<double>& no_click, std::uint32_t pattern) {
  double w = 1.0;
  for (std::size_t d = 0; d < no_click.size(); ++d) {
    w *= ((pattern >> d) & 1u) ? (1.0 - no_click[d]) : no_click[d];
  }
  return w;
}

}  // namespace

FockDensity::FockDensity(int n_modes, int n_max)
    : FockDensity(n_modes, n_max, Eigen::MatrixXcd::Zero(basis_dim(n_modes, n_max), basis_dim(n_modes, n_max))) {
  elements_(0, 0) = 1.0;
}

FockDensity::FockDensity(int n_modes, int n_max, Eigen::MatrixXcd elements, double truncation_tail)
    : n_modes_(n_modes), n_max_(n_max), elements_(std::move(elements)), truncation_tail_(truncation_tail) {
  check_shape(n_modes, n_max);
  const Eigen::Index d = basis_dim(n_modes, n_max);
  if (elements_.rows() != d || elements_.cols() != d) {
    throw UsageError("density matrix has wrong dimension for " + std::to_string(n_modes) +
                     " modes at cutoff " + std::to_string(n_max));
  }
  strides_.assign(static_cast<std::size_t>(n_modes), 1);
  for (int k = n_modes - 2; k >= 0; --k) {
    strides_[static_cast<std::size_t>(k)] = strides_[static_cast<std::size_t>(k + 1)] * (n_max + 1);
  }
}

FockDensity FockDensity::pure(int n_modes, int n_max, const Eigen::VectorXcd& amplitudes) {
  return FockDensity(n_modes, n_max, amplitudes * amplitudes.adjoint());
}

double FockDensity::trace() const { return elements_.trace().real(); }

Eigen::Index FockDensity::index_of(std::span<const int> photons) const {
  if (static_cast<int>(photons.size()) != n_modes_) throw UsageError("photon tuple has wrong length");
  Eigen::Index idx = 0;
  for (int k = 0; k < n_modes_; ++k) {
    const int n = photons[static_cast<std::size_t>(k)];
    if (n < 0 || n > n_max_) throw UsageError("photon number outside cutoff");
    idx += n * strides_[static_cast<std::size_t>(k)];
  }
  return idx;
}

std::vector<int> FockDensity::photons_of(Eigen::Index index) const {
  std::vector<int> out(static_cast<std::size_t>(n_modes_));
  for (int k = 0; k < n_modes_; ++k) out[static_cast<std::size_t>(k)] = photons_in(index, k);
  return out;
}

double FockDensity::population(std::span<const int> photons) const {
  const auto i = index_of(photons);
  return elements_(i, i).real();
}

Complex FockDensity::coherence(std::span<const int> row, std::span<const int> col) const {
  return elements_(index_of(row), index_of(col));
}

double FockDensity::hermiticity_error() const {
  return (elements_ - elements_.adjoint()).cwiseAbs().maxCoeff();
}

double FockDensity::min_eigenvalue() const {
  const Eigen::MatrixXcd h = 0.5 * (elements_ + elements_.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(h, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

FockDensity FockDensity::tensor(const FockDensity& other) const {
  if (n_max_ != other.n_max_) throw UsageError("tensor product requires equal cutoffs");
  const int modes = n_modes_ + other.n_modes_;
  check_shape(modes, n_max_);
  const Eigen::Index db = other.dim();
  Eigen::MatrixXcd out(dim() * db, dim() * db);
  for (Eigen::Index i = 0; i < dim(); ++i) {
    for (Eigen::Index j = 0; j < dim(); ++j) {
      out.block(i * db, j * db, db, db) = elements_(i, j) * other.elements_;
    }
  }
  // Tails combine as 1 - (1-a)(1-b).
  const double tail = truncation_tail_ + other.truncation_tail_ - truncation_tail_ * other.truncation_tail_;
  return FockDensity(modes, n_max_, std::move(out), tail);
}

FockDensity FockDensity::reorder(std::span<const int> order) const {
  if (static_cast<int>(order.size()) != n_modes_) throw UsageError("mode order has wrong length");
  std::vector<int> seen(static_cast<std::size_t>(n_modes_), 0);
  for (int m : order) {
    if (m < 0 || m >= n_modes_ || seen[static_cast<std::size_t>(m)]++) {
      throw UsageError("mode order is not a permutation");
    }
  }
  FockDensity out(n_modes_, n_max_, Eigen::MatrixXcd::Zero(dim(), dim()), truncation_tail_);
  std::vector<Eigen::Index> map(static_cast<std::size_t>(dim()));
  for (Eigen::Index i = 0; i < dim(); ++i) {
    Eigen::Index j = 0;
    for (int k = 0; k < n_modes_; ++k) {
      j += photons_in(i, order[static_cast<std::size_t>(k)]) * out.stride(k);
    }
    map[static_cast<std::size_t>(i)] = j;
  }
  for (Eigen::Index i = 0; i < dim(); ++i) {
    for (Eigen::Index j = 0; j < dim(); ++j) {
      out.elements_(map[static_cast<std::size_t>(i)], map[static_cast<std::size_t>(j)]) = elements_(i, j);
    }
  }
  return out;
}

FockDensity FockDensity::normalized() const {
  const double tr = trace();
  if (!(tr > 0.0)) throw DomainError("cannot normalize a state with zero trace");
  return FockDensity(n_modes_, n_max_, elements_ / tr, truncation_tail_);
}

void DetectorModel::validate() const {
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw DomainError("detector efficiency must lie in [0,1]");
  if (!(dark_mean >= 0.0)) throw DomainError("dark count mean must be non-negative");
}

double DetectorModel::no_click(int photons) const {
  return std::pow(1.0 - efficiency, photons) * std::exp(-dark_mean);
}

DetectorLayout DetectorLayout::one_per_mode(std::span<const DetectorModel> detectors) {
  DetectorLayout layout;
  layout.detectors.assign(detectors.begin(), detectors.end());
  layout.mode_to_detector.resize(detectors.size());
  std::iota(layout.mode_to_detector.begin(), layout.mode_to_detector.end(), 0);
  return layout;
}

void DetectorLayout::validate(int n_modes) const {
  if (static_cast<int>(mode_to_detector.size()) != n_modes) {
    throw UsageError("detector layout must assign every mode (use -1 for unmeasured)");
  }
  if (detectors.size() > 16) throw UsageError("at most 16 detectors");
  for (int d : mode_to_detector) {
    if (d < -1 || d >= static_cast<int>(detectors.size())) throw UsageError("detector index out of range");
  }
  for (const auto& det : detectors) {
    det.validate();
    if (det.number_resolving) {
      throw UsageError("click statistics assume threshold detectors; use photon_number_distribution");
    }
  }
}

FockDensity vacuum(int n_modes, int n_max) { return FockDensity(n_modes, n_max); }

FockDensity make_tmsv(double chi, int n_max) {
  if (!(chi >= 0.0)) throw DomainError("excitation parameter chi must be non-negative");
  if (!(chi < 1.0)) throw DomainError("chi >= 1 gives a non-normalizable two-mode squeezed state");
  if (n_max < 2) throw UsageError("two-mode squeezed vacuum needs a cutoff of at least 2");
  FockDensity shape(2, n_max);
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(shape.dim());
  for (int n = 0; n <= n_max; ++n) {
    const int tuple[2] = {n, n};
    psi(shape.index_of(tuple)) = std::sqrt((1.0 - chi) * std::pow(chi, n));
  }
  const double kept = psi.squaredNorm();
  psi /= std::sqrt(kept);
  return FockDensity(2, n_max, psi * psi.adjoint(), 1.0 - kept);
}

FockDensity apply_beamsplitter(const FockDensity& state, int mode_a, int mode_b,
                               double transmittance, double phase) {
  check_mode(state, mode_a);
  check_mode(state, mode_b);
  if (mode_a == mode_b) throw UsageError("beamsplitter needs two distinct modes");
  if (!(transmittance >= 0.0 && transmittance <= 1.0)) throw DomainError("transmittance must lie in [0,1]");

  const double t = std::sqrt(transmittance);
  const double r = std::sqrt(1.0 - transmittance);
  const Complex e = std::polar(1.0, phase);
  const int cutoff = state.n_max();
  const Eigen::Index sa = state.stride(mode_a);
  const Eigen::Index sb = state.stride(mode_b);

  std::vector<Eigen::Triplet<Complex>> triplets;
  triplets.reserve(static_cast<std::size_t>(state.dim()) * static_cast<std::size_t>(cutoff + 1));
  std::vector<Complex> out(static_cast<std::size_t>(2 * cutoff + 1));
  for (Eigen::Index col = 0; col < state.dim(); ++col) {
    const int n = state.photons_in(col, mode_a);
    const int m = state.photons_in(col, mode_b);
    const Eigen::Index base = col - n * sa - m * sb;
    std::fill(out.begin(), out.end(), Complex{});
    // Expand (t a+ - r e b+)^n (r e* a+ + t b+)^m; out[k] is the amplitude on
    // |k, n+m-k>.
    for (int i = 0; i <= n; ++i) {
      const Complex ci = binomial(n, i) * std::pow(t, i) * ipow(-r * e, n - i);
      for (int j = 0; j <= m; ++j) {
        const Complex cj = binomial(m, j) * ipow(r * std::conj(e), j) * std::pow(t, m - j);
        out[static_cast<std::size_t>(i + j)] += ci * cj;
      }
    }
    const double norm_in = std::sqrt(factorial(n) * factorial(m));
    for (int k = 0; k <= n + m; ++k) {
      const int l = n + m - k;
      if (k > cutoff || l > cutoff) continue;
      const Complex amp = out[static_cast<std::size_t>(k)] * std::sqrt(factorial(k) * factorial(l)) / norm_in;
      if (amp != Complex{}) triplets.emplace_back(base + k * sa + l * sb, col, amp);
    }
  }
  Eigen::SparseMatrix<Complex> u(state.dim(), state.dim());
  u.setFromTriplets(triplets.begin(), triplets.end());

  const Eigen::MatrixXcd left = u * state.elements();
  Eigen::MatrixXcd rho = (u * left.adjoint()).adjoint();
  const double leaked = std::max(0.0, state.trace() - rho.trace().real());
  return FockDensity(state.n_modes(), state.n_max(), std::move(rho), state.truncation_tail() + leaked);
}

FockDensity apply_loss(const FockDensity& state, int mode, double survival) {
  check_mode(state, mode);
  if (!(survival >= 0.0 && survival <= 1.0)) throw DomainError("survival must lie in [0,1]");
  const int cutoff = state.n_max();
  // kraus[n][l] = sqrt(C(n,l) eta^(n-l) (1-eta)^l): amplitude for losing l of n photons.
  std::vector<std::vector<double>> kraus(static_cast<std::size_t>(cutoff + 1));
  for (int n = 0; n <= cutoff; ++n) {
    auto& row = kraus[static_cast<std::size_t>(n)];
    row.resize(static_cast<std::size_t>(n + 1));
    for (int l = 0; l <= n; ++l) {
      row[static_cast<std::size_t>(l)] =
          std::sqrt(binomial(n, l) * std::pow(survival, n - l) * std::pow(1.0 - survival, l));
    }
  }
  const Eigen::Index s = state.stride(mode);
  const auto& in = state.elements();
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(state.dim(), state.dim());
  for (Eigen::Index j = 0; j < state.dim(); ++j) {
    const int nj = state.photons_in(j, mode);
    for (Eigen::Index i = 0; i < state.dim(); ++i) {
      const Complex v = in(i, j);
      if (v == Complex{}) continue;
      const int ni = state.photons_in(i, mode);
      const int lmax = std::min(ni, nj);
      for (int l = 0; l <= lmax; ++l) {
        rho(i - l * s, j - l * s) +=
            kraus[static_cast<std::size_t>(ni)][static_cast<std::size_t>(l)] *
            kraus[static_cast<std::size_t>(nj)][static_cast<std::size_t>(l)] * v;
      }
    }
  }
  return FockDensity(state.n_modes(), state.n_max(), std::move(rho), state.truncation_tail());
}

FockDensity apply_phase(const FockDensity& state, int mode, double phi) {
  check_mode(state, mode);
  Eigen::VectorXcd diag(state.dim());
  for (Eigen::Index i = 0; i < state.dim(); ++i) diag(i) = std::polar(1.0, phi * state.photons_in(i, mode));
  Eigen::MatrixXcd rho = diag.asDiagonal() * state.elements() * diag.conjugate().asDiagonal();
  return FockDensity(state.n_modes(), state.n_max(), std::move(rho), state.truncation_tail());
}

std::vector<ClickPattern> click_distribution(const FockDensity& state,
                                             std::span<const DetectorModel> detectors) {
  if (static_cast<int>(detectors.size()) != state.n_modes()) {
    throw UsageError("click_distribution needs one detector per mode");
  }
  return click_distribution(state, DetectorLayout::one_per_mode(detectors));
}

std::vector<ClickPattern> click_distribution(const FockDensity& state, const DetectorLayout& layout) {
  layout.validate(state.n_modes());
  const std::uint32_t n_patterns = 1u << layout.detectors.size();
  std::vector<ClickPattern> out(n_patterns);
  for (std::uint32_t p = 0; p < n_patterns; ++p) out[p].clicks = p;
  for (Eigen::Index i = 0; i < state.dim(); ++i) {
    const double pop = state.elements()(i, i).real();
    if (pop == 0.0) continue;
    const auto q = no_click_table(state, layout, i);
    for (std::uint32_t p = 0; p < n_patterns; ++p) out[p].probability += pop * pattern_weight(q, p);
  }
  return out;
}

FockDensity condition_on_pattern(const FockDensity& state, const DetectorLayout& layout,
                                 std::uint32_t pattern, std::span<const int> keep_modes) {
  layout.validate(state.n_modes());
  if (pattern >= (1u << layout.detectors.size())) throw UsageError("click pattern has bits for missing detectors");
  if (keep_modes.empty()) throw UsageError("conditioning must keep at least one mode");
  std::vector<bool> kept(static_cast<std::size_t>(state.n_modes()), false);
  for (int m : keep_modes) {
    check_mode(state, m);
    if (kept[static_cast<std::size_t>(m)]) throw UsageError("kept modes must be distinct");
    if (layout.mode_to_detector[static_cast<std::size_t>(m)] >= 0) {
      throw UsageError("kept mode " + std::to_string(m) + " is measured by a detector");
    }
    kept[static_cast<std::size_t>(m)] = true;
  }

  const int n_keep = static_cast<int>(keep_modes.size());
  FockDensity shape(n_keep, state.n_max());
  // Kept-subsystem index and traced-subsystem key for every basis state.
  std::vector<Eigen::Index> kept_index(static_cast<std::size_t>(state.dim()));
  std::vector<Eigen::Index> traced_key(static_cast<std::size_t>(state.dim()));
  std::vector<double> weight(static_cast<std::size_t>(state.dim()));
  for (Eigen::Index i = 0; i < state.dim(); ++i) {
    Eigen::Index ki = 0;
    for (int k = 0; k < n_keep; ++k) ki += state.photons_in(i, keep_modes[static_cast<std::size_t>(k)]) * shape.stride(k);
    Eigen::Index key = 0;
    for (int m = 0; m < state.n_modes(); ++m) {
      if (!kept[static_cast<std::size_t>(m)]) key = key * (state.n_max() + 1) + state.photons_in(i, m);
    }
    kept_index[static_cast<std::size_t>(i)] = ki;
    traced_key[static_cast<std::size_t>(i)] = key;
    weight[static_cast<std::size_t>(i)] = pattern_weight(no_click_table(state, layout, i), pattern);
  }

  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(shape.dim(), shape.dim());
  for (Eigen::Index j = 0; j < state.dim(); ++j) {
    for (Eigen::Index i = 0; i < state.dim(); ++i) {
      if (traced_key[static_cast<std::size_t>(i)] != traced_key[static_cast<std::size_t>(j)]) continue;
      // The POVM element is diagonal and depends only on traced modes, so
      // both sides carry the same weight.
      rho(kept_index[static_cast<std::size_t>(i)], kept_index[static_cast<std::size_t>(j)]) +=
          weight[static_cast<std::size_t>(i)] * state.elements()(i, j);
    }
  }
  const double p = rho.trace().real();
  if (!(p > 0.0)) throw ConditioningError("click pattern has zero probability");
  return FockDensity(n_keep, state.n_max(), rho / p, 0.0);
}

std::vector<double> photon_number_distribution(const FockDensity& state, int mode) {
  check_mode(state, mode);
  std::vector<double> out(static_cast<std::size_t>(state.n_max() + 1), 0.0);
  for (Eigen::Index i = 0; i < state.dim(); ++i) {
    out[static_cast<std::size_t>(state.photons_in(i, mode))] += state.elements()(i, i).real();
  }
  return out;
}

double fidelity(const FockDensity& state, const Eigen::VectorXcd& target) {
  if (target.size() != state.dim()) throw UsageError("target vector has wrong dimension");
  const Eigen::VectorXcd t = target.normalized();
  return (t.adjoint() * state.elements() * t)(0, 0).real() / state.trace();
}

}  // namespace dlcz::fock
