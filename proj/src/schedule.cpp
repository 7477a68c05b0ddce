#include "memdiff/schedule.hpp"

#include <cmath>

namespace memdiff {

double DiffusionSchedule::beta(int64_t t) const {
  check_t(t, 1);
  return betas[size_t(t - 1)];
}

double DiffusionSchedule::abar(int64_t t) const {
  check_t(t, 0);
  return alpha_bar[size_t(t)];
}

double DiffusionSchedule::phi(int64_t t) const {
  return std::asin(std::sqrt(1.0 - abar(t)));
}

void DiffusionSchedule::check_t(int64_t t, int64_t lo) const {
  if (t < lo || t > T)
    throw ContractError(strfmt("timestep %lld outside [%lld, %lld]", (long long)t,
                               (long long)lo, (long long)T));
}

DiffusionSchedule make_schedule(int64_t T, double beta0, double betaT) {
  if (T < 2) throw ContractError("schedule needs T >= 2");
  if (!(0.0 < beta0 && beta0 < betaT && betaT < 1.0))
    throw ContractError(strfmt("schedule needs 0 < beta0 < betaT < 1, got %g and %g",
                               beta0, betaT));
  DiffusionSchedule s;
  s.T = T;
  s.betas.resize(size_t(T));
  s.alpha_bar.resize(size_t(T) + 1);
  s.alpha_bar[0] = 1.0;
  for (int64_t t = 1; t <= T; ++t) {
    double u = double(t - 1) / double(T - 1);
    s.betas[size_t(t - 1)] = beta0 * (1.0 - u) + betaT * u;
    s.alpha_bar[size_t(t)] = s.alpha_bar[size_t(t - 1)] * (1.0 - s.betas[size_t(t - 1)]);
  }
  return s;
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

}  // namespace

Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const DiffusionSchedule& s) {
  check_same(z0, eps, "q_sample");
  s.check_t(t, 0);
  double a = s.abar(t);
  return add(mul(z0, std::sqrt(a)), mul(eps, std::sqrt(1.0 - a)));
}

Tensor v_target(const Tensor& z0, const Tensor& eps, int64_t t, const DiffusionSchedule& s) {
  check_same(z0, eps, "v_target");
  s.check_t(t, 0);
  double a = s.abar(t);
  return sub(mul(eps, std::sqrt(a)), mul(z0, std::sqrt(1.0 - a)));
}

Tensor z0_from_v(const Tensor& zt, const Tensor& v, int64_t t, const DiffusionSchedule& s) {
  check_same(zt, v, "z0_from_v");
  s.check_t(t, 0);
  double a = s.abar(t);
  return sub(mul(zt, std::sqrt(a)), mul(v, std::sqrt(1.0 - a)));
}

Tensor eps_from_v(const Tensor& zt, const Tensor& v, int64_t t, const DiffusionSchedule& s) {
  check_same(zt, v, "eps_from_v");
  s.check_t(t, 0);
  double a = s.abar(t);
  return add(mul(zt, std::sqrt(1.0 - a)), mul(v, std::sqrt(a)));
}

}  // namespace memdiff
