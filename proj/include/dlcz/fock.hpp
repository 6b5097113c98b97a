#pragma once

// Few-mode optical states in a truncated photon-number basis.
//
// A FockDensity holds the density operator of 1 to 4 modes, each cut off at
// n_max photons. Basis states are photon-number tuples in lexicographic order
// with mode 0 as the most significant digit. All channels are pure functions
// that return a new state.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace dlcz::fock {

using Complex = std::complex<double>;

inline constexpr int kMaxModes = 4;
inline constexpr int kDefaultCutoff = 3;

class FockDensity {
 public:
  /// Vacuum on n_modes modes.
  FockDensity(int n_modes, int n_max);
  /// Takes ownership of a dense matrix over the product basis. truncation_tail
  /// is the population already lost to the cutoff.
  FockDensity(int n_modes, int n_max, Eigen::MatrixXcd elements, double truncation_tail = 0.0);

  static FockDensity pure(int n_modes, int n_max, const Eigen::VectorXcd& amplitudes);

  int n_modes() const noexcept { return n_modes_; }
  int n_max() const noexcept { return n_max_; }
  Eigen::Index dim() const noexcept { return elements_.rows(); }
  const Eigen::MatrixXcd& elements() const noexcept { return elements_; }

  double trace() const;
  // Population dropped by the cutoff: the tail removed when the state was
  // built plus any leakage from channels that pushed photons past n_max.
  double truncation_tail() const noexcept { return truncation_tail_; }

  Eigen::Index index_of(std::span<const int> photons) const;
  std::vector<int> photons_of(Eigen::Index index) const;
  int photons_in(Eigen::Index index, int mode) const noexcept {
    return static_cast<int>((index / strides_[static_cast<std::size_t>(mode)]) % (n_max_ + 1));
  }
  Eigen::Index stride(int mode) const noexcept { return strides_[static_cast<std::size_t>(mode)]; }

  double population(std::span<const int> photons) const;
  Complex coherence(std::span<const int> row, std::span<const int> col) const;

  double hermiticity_error() const;
  double min_eigenvalue() const;

  /// Modes of `other` are appended after the modes of this state.
  FockDensity tensor(const FockDensity& other) const;
  /// New mode k is old mode order[k].
  FockDensity reorder(std::span<const int> order) const;
  FockDensity normalized() const;

 private:
  int n_modes_;
  int n_max_;
  Eigen::MatrixXcd elements_;
  double truncation_tail_;
  std::vector<Eigen::Index> strides_;
};

struct DetectorModel {
  double efficiency = 1.0;
  double dark_mean = 0.0;  // mean Poisson background counts per gate
  bool number_resolving = false;

  void validate() const;
  // Probability of no click given n photons on the detector.
  double no_click(int photons) const;
};

struct ClickPattern {
  std::uint32_t clicks = 0;  // bit k set when detector k clicked
  double probability = 0.0;
};

// Routes modes onto threshold detectors. Several modes may share a detector
// (orthogonal spatial or temporal modes on one diode); -1 leaves a mode
// unmeasured.
struct DetectorLayout {
  std::vector<DetectorModel> detectors;
  std::vector<int> mode_to_detector;

  static DetectorLayout one_per_mode(std::span<const DetectorModel> detectors);
  void validate(int n_modes) const;
};

FockDensity vacuum(int n_modes, int n_max = kDefaultCutoff);

/// Two-mode squeezed vacuum with amplitude chi^(n/2) on |n,n>, renormalized
/// inside the cutoff. The removed tail chi^(n_max+1) is kept as
/// truncation_tail().
FockDensity make_tmsv(double chi, int n_max = kDefaultCutoff);

/// Mixes two modes: a+ -> t a+ - r e^{i phase} b+, b+ -> r e^{-i phase} a+ + t b+
/// with t = sqrt(transmittance). Conserves total photon number; amplitude that
/// would land above n_max in either output is dropped and added to the tail.
FockDensity apply_beamsplitter(const FockDensity& state, int mode_a, int mode_b,
                               double transmittance, double phase);

/// Pure-loss channel keeping each photon with probability `survival`.
FockDensity apply_loss(const FockDensity& state, int mode, double survival);

/// |n> -> e^{i phi n} |n> on one mode.
FockDensity apply_phase(const FockDensity& state, int mode, double phi);

std::vector<ClickPattern> click_distribution(const FockDensity& state,
                                             std::span<const DetectorModel> detectors);
std::vector<ClickPattern> click_distribution(const FockDensity& state,
                                             const DetectorLayout& layout);

/// Post-measurement state of `keep_modes` given the click pattern, with every
/// other mode traced out. Kept modes must be unmeasured in the layout.
FockDensity condition_on_pattern(const FockDensity& state, const DetectorLayout& layout,
                                 std::uint32_t pattern, std::span<const int> keep_modes);

/// Marginal photon-number distribution of one mode (what an ideal
/// number-resolving detector would record).
std::vector<double> photon_number_distribution(const FockDensity& state, int mode);

double fidelity(const FockDensity& state, const Eigen::VectorXcd& target);

}  // namespace dlcz::fock
