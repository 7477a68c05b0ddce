#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memdiff/common.hpp"
#include "memdiff/rng.hpp"

namespace memdiff {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);
void check_shape_valid(const Shape& s);

// Dense row-major f64 tensor with value semantics. All layout decisions live
// here; ops are free functions so the autograd layer can wrap them uniformly.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor randn(const Shape& s, SeededRng& rng);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor from(const Shape& s, std::vector<double> d);

  int rank() const { return int(shape.size()); }
  int64_t numel() const { return int64_t(data.size()); }
  int64_t extent(int axis) const { return shape[size_t(axis)]; }

  double& operator[](int64_t i) { return data[size_t(i)]; }
  double operator[](int64_t i) const { return data[size_t(i)]; }

  int64_t stride(int axis) const;

  template <class... I>
  double& at(I... idx) {
    return data[size_t(flat_index({int64_t(idx)...}))];
  }
  template <class... I>
  double at(I... idx) const {
    return data[size_t(flat_index({int64_t(idx)...}))];
  }
  int64_t flat_index(std::initializer_list<int64_t> idx) const;

  bool all_finite() const;
};

// elementwise with right-aligned broadcasting
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor neg(const Tensor& a);

// sums grad-style over broadcast dims so the result has shape `target`
Tensor reduce_to(const Tensor& a, const Shape& target);

// (..., n, k) x (..., k, m) -> (..., n, m); batch dims broadcast
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, const Shape& s);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor transpose_last2(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<int64_t>& sizes);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);

Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& a);  // last axis, variance epsilon 1e-6, no affine
Tensor gelu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

double sum(const Tensor& a);
double mean(const Tensor& a);

constexpr double kLayerNormEps = 1e-6;

// out[i] = in[index[i]]; the workhorse behind patchify-style reorderings.
// index must be a permutation of [0, numel) for the gradient to be exact.
Tensor take(const Tensor& a, const Shape& out_shape, const std::vector<int64_t>& index);

}  // namespace memdiff
