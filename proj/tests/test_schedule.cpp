#include <cmath>

#include "doctest.h"
#include "memdiff/schedule.hpp"

using namespace memdiff;

namespace {
const DiffusionSchedule& sched() {
  static DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  return s;
}
}  // namespace

TEST_CASE("schedule endpoints and monotonicity") {
  const auto& s = sched();
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == 0.02);  // exact: the linear ramp ends on the endpoint
  CHECK(s.abar(0) == 1.0);
  CHECK(s.abar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));
  for (int64_t t = 2; t <= 1000; ++t) CHECK(s.beta(t) > s.beta(t - 1));
  for (int64_t t = 1; t <= 1000; ++t) CHECK(s.abar(t) < s.abar(t - 1));
  CHECK(s.abar(1000) > 0.0);
  CHECK(s.abar(1000) < 1.0);
  // cumulative signal level at the far end of the ramp
  CHECK(s.abar(1000) == doctest::Approx(4.0e-5).epsilon(0.10));
}

TEST_CASE("schedule construction contract") {
  CHECK_THROWS_AS(make_schedule(1000, 0.02, 1e-4), ContractError);
  CHECK_THROWS_AS(make_schedule(1000, 0.0, 0.02), ContractError);
  CHECK_THROWS_AS(make_schedule(1000, 1e-4, 1.0), ContractError);
  CHECK_THROWS_AS(make_schedule(1, 1e-4, 0.02), ContractError);
}

TEST_CASE("q_sample boundaries and linearity") {
  SeededRng rng(17);
  Tensor z0 = Tensor::randn({2, 3}, rng), eps = Tensor::randn({2, 3}, rng);
  const auto& s = sched();

  Tensor at0 = q_sample(z0, 0, eps, s);
  for (int64_t i = 0; i < z0.numel(); ++i) CHECK(at0[i] == z0[i]);

  Tensor noiseless = q_sample(z0, 600, Tensor::zeros({2, 3}), s);
  double root_a = std::sqrt(s.abar(600));
  for (int64_t i = 0; i < z0.numel(); ++i)
    CHECK(noiseless[i] == doctest::Approx(z0[i] * root_a).epsilon(1e-15));

  CHECK_THROWS_AS(q_sample(z0, 1001, eps, s), ContractError);
  CHECK_THROWS_AS(q_sample(z0, -1, eps, s), ContractError);
  CHECK_THROWS_AS(q_sample(z0, 7, Tensor::zeros({2, 2}), s), ShapeError);
}

TEST_CASE("q_sample noise variance matches 1 - abar") {
  const auto& s = sched();
  SeededRng rng(19);
  int64_t t = 400;
  Tensor z0 = Tensor::zeros({10000});
  Tensor eps = Tensor::randn({10000}, rng);
  Tensor zt = q_sample(z0, t, eps, s);
  double var = 0;
  for (double v : zt.data) var += v * v;
  var /= double(zt.numel());
  CHECK(var == doctest::Approx(1.0 - s.abar(t)).epsilon(0.05));
}

TEST_CASE("v parameterization roundtrips to 1e-12") {
  const auto& s = sched();
  SeededRng rng(23);
  for (int64_t t : {1, 3, 250, 777, 1000}) {
    Tensor z0 = Tensor::randn({4, 5}, rng), eps = Tensor::randn({4, 5}, rng);
    Tensor zt = q_sample(z0, t, eps, s);
    Tensor v = v_target(z0, eps, t, s);
    Tensor z0r = z0_from_v(zt, v, t, s);
    Tensor epsr = eps_from_v(zt, v, t, s);
    for (int64_t i = 0; i < z0.numel(); ++i) {
      CHECK(std::abs(z0r[i] - z0[i]) < 1e-12);
      CHECK(std::abs(epsr[i] - eps[i]) < 1e-12);
    }
  }
}

TEST_CASE("v-space loss equals z0-space loss rescaled by 1/(1-abar)") {
  const auto& s = sched();
  SeededRng rng(29);
  for (int64_t t : {50, 500, 950}) {
    Tensor z0 = Tensor::randn({3, 4}, rng), eps = Tensor::randn({3, 4}, rng);
    Tensor zt = q_sample(z0, t, eps, s);
    Tensor v_tgt = v_target(z0, eps, t, s);
    Tensor v_pred = Tensor::randn({3, 4}, rng);
    Tensor z0_pred = z0_from_v(zt, v_pred, t, s);

    Tensor dv = sub(v_pred, v_tgt), dz = sub(z0_pred, z0);
    double lv = 0, lz = 0;
    for (int64_t i = 0; i < dv.numel(); ++i) {
      lv += dv[i] * dv[i];
      lz += dz[i] * dz[i];
    }
    CHECK(lv == doctest::Approx(lz / (1.0 - s.abar(t))).epsilon(1e-12));
  }
}

TEST_CASE("phi is monotone and anchored at zero") {
  const auto& s = sched();
  CHECK(s.phi(0) == 0.0);
  for (int64_t t = 1; t <= 1000; ++t) CHECK(s.phi(t) > s.phi(t - 1));
  CHECK(s.phi(1000) < 1.5707963267948966);
}
