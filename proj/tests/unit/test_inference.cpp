#include "dlcz/errors.hpp"
#include "dlcz/inference.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

using namespace dlcz;
using namespace dlcz::inference;

namespace {

RestrictedDensityMatrix detected_column() {
  RestrictedDensityMatrix r;
  r.p00 = 0.864;
  r.p10 = 6.47e-2;
  r.p01 = 7.07e-2;
  r.p11 = 2.8e-4;
  r.d = coherence_from_concurrence(r.p00, r.p01, r.p10, r.p11, 0.092);
  return r;
}

// Path efficiencies from the ratio of detected to output single-photon
// probabilities.
EfficiencyChain table_chain() { return {0.0647 / 0.22, 0.0707 / 0.24, 0.45}; }

ChainUncertainty table_uncertainty(double scale = 1.0) {
  ChainUncertainty u;
  u.detected = detected_column();
  u.sigma = {1e-3 * scale, 2e-4 * scale, 2e-4 * scale, 2e-5 * scale, 1e-3 * scale};
  u.chain = table_chain();
  u.chain_sigma = {0.053471 * scale, 0.049097 * scale, 0.10 * scale};
  return u;
}

RestrictedDensityMatrix random_physical(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> e(1.0);
  double w[4];
  double sum = 0;
  for (double& x : w) sum += (x = e(rng));
  RestrictedDensityMatrix r{w[0] / sum, w[1] / sum, w[2] / sum, w[3] / sum, 0.0};
  r.d = std::polar(u(rng) * std::sqrt(r.p01 * r.p10), 2 * std::numbers::pi * u(rng));
  return r;
}

double max_diff(const RestrictedDensityMatrix& a, const RestrictedDensityMatrix& b) {
  return std::max({std::abs(a.p00 - b.p00), std::abs(a.p01 - b.p01), std::abs(a.p10 - b.p10),
                   std::abs(a.p11 - b.p11), std::abs(a.d - b.d)});
}

}  // namespace

TEST_CASE("reference detected column") {
  const auto r = detected_column();
  CHECK(std::abs(r.d) == doctest::Approx(0.0615).epsilon(0.01));
  CHECK(concurrence_c0(r) == doctest::Approx(0.092).epsilon(1e-12));
}

TEST_CASE("table chain through the ensemble output") {
  const auto c = table_chain();
  const auto out = invert_loss(detected_column(), c.eta_path_u, c.eta_path_d);
  CHECK(out.p10 == doctest::Approx(0.22).epsilon(0.1));
  CHECK(out.p01 == doctest::Approx(0.24).epsilon(0.1));
  CHECK(out.p11 == doctest::Approx(3e-3).epsilon(0.2));
  const double cout = concurrence_c0(out);
  CHECK(cout >= 0.25);
  CHECK(cout <= 0.45);
}

TEST_CASE("atomic state needs a policy") {
  const auto c = table_chain();
  const auto out = invert_loss(detected_column(), c.eta_path_u, c.eta_path_d);
  try {
    infer_atomic_state(out, c.eta_readout);
    FAIL("strict inversion should fail");
  } catch (const UnphysicalInversion& e) {
    CHECK(e.element() == "p00");
    CHECK(e.value() < 0);
  }

  const auto clipped = infer_atomic_state(out, c.eta_readout, InversionPolicy::clip);
  REQUIRE_FALSE(clipped.clipped.empty());
  CHECK(clipped.clipped.front() == "p00");
  const double ca = concurrence_c0(clipped.rho);
  CHECK(ca >= 0.6);
  CHECK(ca <= 1.0);
  CHECK(clipped.rho.normalization() == doctest::Approx(1.0).epsilon(1e-12));

  const auto lin = infer_atomic_state(out, c.eta_readout, InversionPolicy::linear);
  CHECK(lin.clipped.empty());
  CHECK(lin.rho.p00 < 0);
  CHECK(lin.rho.normalization() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("correct_chain runs both steps") {
  const auto cols = correct_chain(detected_column(), table_chain(), InversionPolicy::clip);
  CHECK(cols.c_detected.C == doctest::Approx(0.092).epsilon(1e-9));
  CHECK(cols.c_output.C >= 0.25);
  CHECK(cols.c_output.C <= 0.45);
  CHECK(cols.c_atomic.C >= 0.6);
  CHECK(cols.c_atomic.C <= 1.0);
  CHECK(cols.clipped_output.empty());
  CHECK_FALSE(cols.clipped_atomic.empty());
  CHECK_THROWS_AS(correct_chain(detected_column(), table_chain(), InversionPolicy::strict), UnphysicalInversion);
}

TEST_CASE("unit efficiency is the identity") {
  std::mt19937_64 rng(1);
  const auto r = random_physical(rng);
  CHECK(max_diff(invert_loss(r, 1.0, 1.0), r) <= 1e-15);
  CHECK(max_diff(infer_atomic_state(r, 1.0), r) <= 1e-15);
  CHECK(max_diff(apply_loss_map(r, 1.0, 1.0), r) <= 1e-15);
}

TEST_CASE("forward and inverse loss round trip") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> eta(0.05, 1.0);
  for (int k = 0; k < 100; ++k) {
    const auto r = random_physical(rng);
    const double eu = eta(rng), ed = eta(rng);
    const auto lossy = apply_loss_map(r, eu, ed);
    CHECK(lossy.normalization() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(max_diff(invert_loss(lossy, eu, ed), r) <= 1e-10);
    // Undoing loss never lowers a positive concurrence.
    if (concurrence_c0(lossy) > 0) CHECK(concurrence_c0(invert_loss(lossy, eu, ed)) >= concurrence_c0(lossy));
  }

  RestrictedDensityMatrix bell{0.0, 0.5, 0.5, 0.0, 0.5};
  const auto atomic = infer_atomic_state(apply_loss_map(bell, 0.45, 0.45), 0.45);
  CHECK(max_diff(atomic, bell) <= 1e-10);
  CHECK(concurrence_c0(apply_loss_map(bell, 0.45, 0.45)) == doctest::Approx(0.45));
}

TEST_CASE("inversion outputs are normalized") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto r = random_physical(rng);
    for (auto policy : {InversionPolicy::clip, InversionPolicy::linear}) {
      CHECK(std::abs(invert_loss(r, 0.3, 0.6, policy).rho.normalization() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("clip policy bounds the coherence") {
  RestrictedDensityMatrix r{0.9, 0.04, 0.04, 0.02, 0.04};
  const auto res = invert_loss(r, 0.5, 0.5, InversionPolicy::clip);
  CHECK(std::abs(res.rho.d) <= std::sqrt(res.rho.p01 * res.rho.p10) * (1 + 1e-12));
  CHECK(res.rho.p00 >= 0);
  CHECK_NOTHROW(res.rho.validate());
}

TEST_CASE("efficiency validation") {
  CHECK_THROWS_AS(invert_loss(detected_column(), 0.0, 0.5), DomainError);
  CHECK_THROWS_AS(invert_loss(detected_column(), 0.5, 1.5), DomainError);
  CHECK_THROWS_AS((EfficiencyChain{0.5, 0.5, 0.0}.validate()), DomainError);
}

TEST_CASE("propagation with zero input errors") {
  auto u = table_uncertainty(0.0);
  const auto p = propagate_uncertainty(u, InversionPolicy::linear, 2000, 4);
  REQUIRE(p.output.sigma.has_value());
  CHECK(*p.output.sigma == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(*p.atomic.sigma == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.n_unphysical == 0);
}

TEST_CASE("propagation of the table errors") {
  const auto p = propagate_uncertainty(table_uncertainty(), InversionPolicy::linear);
  REQUIRE(p.atomic.sigma.has_value());
  CHECK(*p.atomic.sigma >= 0.15);
  CHECK(*p.atomic.sigma <= 0.6);
  CHECK(*p.output.sigma > 0.01);
  CHECK(p.n_samples == 20000);

  // Deterministic for a given seed.
  const auto again = propagate_uncertainty(table_uncertainty(), InversionPolicy::linear);
  CHECK(*again.atomic.sigma == *p.atomic.sigma);
}

TEST_CASE("small errors propagate linearly") {
  const auto a = propagate_uncertainty(table_uncertainty(0.1), InversionPolicy::linear, 20000, 5);
  const auto b = propagate_uncertainty(table_uncertainty(0.05), InversionPolicy::linear, 20000, 5);
  CHECK(*a.output.sigma / *b.output.sigma == doctest::Approx(2.0).epsilon(0.1));
  CHECK(*a.atomic.sigma / *b.atomic.sigma == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("mostly unphysical samples abort propagation") {
  CHECK_THROWS_AS(propagate_uncertainty(table_uncertainty(), InversionPolicy::strict, 1000, 6), EstimationError);
}
