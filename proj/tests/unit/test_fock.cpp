#include "dlcz/errors.hpp"
#include "dlcz/fock.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

using namespace dlcz;
using namespace dlcz::fock;

namespace {

constexpr double kPi = std::numbers::pi;

FockDensity basis_state(int n_modes, int n_max, std::vector<int> photons) {
  FockDensity probe(n_modes, n_max);
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(probe.dim());
  v(probe.index_of(photons)) = 1.0;
  return FockDensity::pure(n_modes, n_max, v);
}

FockDensity random_state(std::mt19937_64& rng, int n_modes, int n_max) {
  std::normal_distribution<double> g;
  const Eigen::Index dim = static_cast<Eigen::Index>(std::pow(n_max + 1, n_modes));
  Eigen::MatrixXcd a(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) a(i, j) = Complex(g(rng), g(rng));
  }
  Eigen::MatrixXcd rho = a * a.adjoint();
  rho /= rho.trace().real();
  return FockDensity(n_modes, n_max, rho);
}

double click_sum(const std::vector<ClickPattern>& patterns) {
  double s = 0;
  for (const auto& p : patterns) s += p.probability;
  return s;
}

double click_prob(const std::vector<ClickPattern>& patterns, std::uint32_t mask) {
  for (const auto& p : patterns) {
    if (p.clicks == mask) return p.probability;
  }
  return 0.0;
}

// Modes [1U, 1D, 2U, 2D] after the write step, with theta on 1U and the
// field-1 modes mixed on a 50/50 beamsplitter.
FockDensity heralding_state(double chi, double theta) {
  const auto pair = make_tmsv(chi);
  const std::array<int, 4> order{0, 2, 1, 3};
  auto s = pair.tensor(pair).reorder(order);
  s = apply_phase(s, 0, theta);
  return apply_beamsplitter(s, 0, 1, 0.5, 0.0);
}

DetectorLayout herald_layout() {
  DetectorLayout layout;
  layout.detectors = {DetectorModel{}, DetectorModel{}};
  layout.mode_to_detector = {0, 1, -1, -1};
  return layout;
}

Eigen::VectorXcd bell(Complex relative) {
  FockDensity probe(2, kDefaultCutoff);
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(probe.dim());
  const std::array<int, 2> n01{0, 1}, n10{1, 0};
  v(probe.index_of(n01)) = 1.0 / std::sqrt(2.0);
  v(probe.index_of(n10)) = relative / std::sqrt(2.0);
  return v;
}

}  // namespace

TEST_CASE("tmsv populations and coherences") {
  SUBCASE("chi = 0 is vacuum") {
    const auto s = make_tmsv(0.0);
    const std::array<int, 2> zero{0, 0};
    CHECK(s.population(zero) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.truncation_tail() == 0.0);
  }
  SUBCASE("amplitude ratio") {
    const auto s = make_tmsv(0.5, 4);
    const std::array<int, 2> n00{0, 0}, n11{1, 1};
    CHECK(s.population(n11) / s.population(n00) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("mean photon number per arm") {
    const double chi = 0.0169;
    const auto dist = photon_number_distribution(make_tmsv(chi), 0);
    double mean = 0;
    for (std::size_t n = 0; n < dist.size(); ++n) mean += static_cast<double>(n) * dist[n];
    CHECK(mean == doctest::Approx(chi / (1 - chi)).epsilon(1e-5));
  }
  SUBCASE("coherences follow (1-chi) chi^((n+m)/2) up to the cutoff renormalization") {
    const double chi = 0.2;
    const auto s = make_tmsv(chi);
    const double kept = 1.0 - std::pow(chi, 4);
    const std::array<int, 2> n11{1, 1}, n22{2, 2};
    CHECK(std::abs(s.coherence(n11, n22)) == doctest::Approx((1 - chi) * std::pow(chi, 1.5) / kept).epsilon(1e-12));
    CHECK(s.truncation_tail() == doctest::Approx(std::pow(chi, 4)).epsilon(1e-12));
  }
  SUBCASE("domain errors") {
    CHECK_THROWS_AS(make_tmsv(1.0), DomainError);
    CHECK_THROWS_AS(make_tmsv(-0.1), DomainError);
    CHECK_THROWS_AS(make_tmsv(0.1, 1), UsageError);
  }
}

TEST_CASE("beamsplitter") {
  const std::array<DetectorModel, 2> ideal{};
  SUBCASE("single photon splits evenly") {
    const auto out = apply_beamsplitter(basis_state(2, 3, {1, 0}), 0, 1, 0.5, 0.0);
    const auto clicks = click_distribution(out, ideal);
    CHECK(click_prob(clicks, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(click_prob(clicks, 2) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("Hong-Ou-Mandel") {
    const auto out = apply_beamsplitter(basis_state(2, 3, {1, 1}), 0, 1, 0.5, 0.7);
    CHECK(std::abs(click_prob(click_distribution(out, ideal), 3)) <= 1e-12);
    CHECK(out.truncation_tail() <= 1e-15);
  }
  SUBCASE("unit transmittance keeps populations") {
    std::mt19937_64 rng(3);
    const auto s = random_state(rng, 2, 3);
    const auto out = apply_beamsplitter(s, 0, 1, 1.0, 0.4);
    CHECK((out.elements().diagonal() - s.elements().diagonal()).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("leakage above the cutoff is reported") {
    const auto out = apply_beamsplitter(basis_state(2, 3, {3, 3}), 0, 1, 0.5, 0.0);
    CHECK(out.truncation_tail() > 0.0);
    CHECK(out.trace() + out.truncation_tail() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("usage errors") {
    const auto s = vacuum(2);
    CHECK_THROWS_AS(apply_beamsplitter(s, 1, 1, 0.5, 0.0), UsageError);
    CHECK_THROWS_AS(apply_beamsplitter(s, 0, 2, 0.5, 0.0), UsageError);
  }
}

TEST_CASE("loss channel") {
  SUBCASE("single photon") {
    const auto out = apply_loss(basis_state(1, 3, {1}), 0, 0.3);
    const auto p = photon_number_distribution(out, 0);
    CHECK(p[1] == doctest::Approx(0.3));
    CHECK(p[0] == doctest::Approx(0.7));
  }
  SUBCASE("binomial on two photons") {
    const auto p = photon_number_distribution(apply_loss(basis_state(1, 3, {2}), 0, 0.5), 0);
    CHECK(p[2] == doctest::Approx(0.25));
    CHECK(p[1] == doctest::Approx(0.5));
    CHECK(p[0] == doctest::Approx(0.25));
  }
  SUBCASE("zero survival empties the mode") {
    const auto p = photon_number_distribution(apply_loss(basis_state(2, 3, {3, 1}), 0, 0.0), 0);
    CHECK(p[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("phase shifter") {
  std::mt19937_64 rng(5);
  const auto s = random_state(rng, 2, 3);
  CHECK((apply_phase(s, 1, 0.0).elements() - s.elements()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((apply_phase(s, 1, 2 * kPi).elements() - s.elements()).cwiseAbs().maxCoeff() <= 1e-12);

  const std::array<int, 2> n01{0, 1}, n10{1, 0};
  const auto flipped = apply_phase(FockDensity::pure(2, 3, bell(1.0)), 0, kPi);
  CHECK(flipped.coherence(n01, n10).real() == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("click distribution") {
  const std::array<DetectorModel, 1> ideal{};
  CHECK(click_prob(click_distribution(vacuum(1), ideal), 0) == doctest::Approx(1.0));
  const std::array<DetectorModel, 1> lossy{DetectorModel{0.3, 0.0, false}};
  CHECK(click_prob(click_distribution(basis_state(1, 3, {1}), lossy), 1) == doctest::Approx(0.3));
  const std::array<DetectorModel, 1> dark{DetectorModel{1.0, 0.01, false}};
  CHECK(click_prob(click_distribution(vacuum(1), dark), 1) == doctest::Approx(1 - std::exp(-0.01)).epsilon(1e-12));

  DetectorLayout bad;
  bad.detectors = {DetectorModel{1.0, 0.0, true}};
  bad.mode_to_detector = {0};
  CHECK_THROWS(click_distribution(vacuum(1), bad));
}

TEST_CASE("channel contracts on random states") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 120; ++k) {
    const auto s = random_state(rng, 2, 3);
    const double t = u(rng), phi = 2 * kPi * u(rng), e1 = u(rng), e2 = u(rng);

    // Number-conserving mixing of a state already inside the cutoff can only
    // leak into the tail; trace plus tail stays 1.
    const auto bs = apply_beamsplitter(s, 0, 1, t, phi);
    CHECK(bs.hermiticity_error() <= 1e-12);
    CHECK(std::abs(bs.trace() + bs.truncation_tail() - 1.0) <= 1e-12);

    const auto lost = apply_loss(s, 1, e1);
    CHECK(std::abs(lost.trace() - 1.0) <= 1e-12);
    CHECK(lost.hermiticity_error() <= 1e-12);
    CHECK(lost.min_eigenvalue() >= -1e-9);

    const auto twice = apply_loss(apply_loss(s, 0, e1), 0, e2);
    const auto once = apply_loss(s, 0, e1 * e2);
    CHECK((twice.elements() - once.elements()).cwiseAbs().maxCoeff() <= 1e-12);

    const std::array<DetectorModel, 2> dets{DetectorModel{u(rng), 0.1 * u(rng), false},
                                            DetectorModel{u(rng), 0.1 * u(rng), false}};
    CHECK(std::abs(click_sum(click_distribution(s, dets)) - 1.0) <= 1e-9);
  }
}

TEST_CASE("heralded conditioning gives the two Bell states") {
  const std::array<int, 2> keep{2, 3};
  const auto layout = herald_layout();

  const auto s0 = heralding_state(1e-4, 0.0);
  const auto plus = condition_on_pattern(s0, layout, 0b01, keep);
  CHECK(fidelity(plus, bell(1.0)) >= 0.999);
  const auto minus = condition_on_pattern(s0, layout, 0b10, keep);
  CHECK(fidelity(minus, bell(-1.0)) >= 0.999);

  const auto sq = heralding_state(1e-4, kPi / 2);
  CHECK(fidelity(condition_on_pattern(sq, layout, 0b01, keep), bell(Complex(0, 1))) >= 0.999);

  CHECK(std::abs(plus.trace() - 1.0) <= 1e-12);
}

TEST_CASE("conditioning on an impossible pattern fails") {
  const std::array<int, 2> keep{2, 3};
  CHECK_THROWS_AS(condition_on_pattern(heralding_state(0.0, 0.0), herald_layout(), 0b01, keep), ConditioningError);
}

TEST_CASE("tensor and reorder") {
  const auto a = basis_state(1, 3, {1});
  const auto b = basis_state(1, 3, {2});
  const auto ab = a.tensor(b);
  const std::array<int, 2> n12{1, 2}, n21{2, 1};
  CHECK(ab.population(n12) == doctest::Approx(1.0));
  const std::array<int, 2> swap{1, 0};
  CHECK(ab.reorder(swap).population(n21) == doctest::Approx(1.0));
}
