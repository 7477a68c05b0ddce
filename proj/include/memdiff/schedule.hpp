#pragma once

#include <vector>

#include "memdiff/tensor.hpp"

namespace memdiff {

// Linear beta schedule with cumulative signal levels. abar(0) is defined as 1
// (the identity boundary), abar(t) = prod_{s<=t} (1 - beta_s) for t in [1, T].
struct DiffusionSchedule {
  int64_t T = 0;
  std::vector<double> betas;      // betas[t-1] is beta_t, t in [1, T]
  std::vector<double> alpha_bar;  // alpha_bar[t], t in [0, T]

  double beta(int64_t t) const;  // t in [1, T]
  double abar(int64_t t) const;  // t in [0, T]
  // angle phi(t) = asin(sqrt(1 - abar(t))); monotone time variable in [0, pi/2)
  double phi(int64_t t) const;
  void check_t(int64_t t, int64_t lo) const;
};

DiffusionSchedule make_schedule(int64_t T, double beta0, double betaT);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t in [1, T] (t = 0 allowed as identity)
Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const DiffusionSchedule& s);

// v = sqrt(abar_t) eps - sqrt(1 - abar_t) z0
Tensor v_target(const Tensor& z0, const Tensor& eps, int64_t t, const DiffusionSchedule& s);

// the three parameterizations are mutually consistent given z_t
Tensor z0_from_v(const Tensor& zt, const Tensor& v, int64_t t, const DiffusionSchedule& s);
Tensor eps_from_v(const Tensor& zt, const Tensor& v, int64_t t, const DiffusionSchedule& s);

}  // namespace memdiff
