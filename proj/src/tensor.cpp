#include "memdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace memdiff {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

void check_shape_valid(const Shape& s) {
  if (s.empty()) throw ShapeError("empty shape");
  for (int64_t e : s)
    if (e < 1) throw ShapeError("nonpositive extent in shape " + shape_str(s));
}

Tensor Tensor::zeros(const Shape& s) {
  check_shape_valid(s);
  return Tensor(s, std::vector<double>(size_t(shape_numel(s)), 0.0));
}

Tensor Tensor::full(const Shape& s, double v) {
  check_shape_valid(s);
  return Tensor(s, std::vector<double>(size_t(shape_numel(s)), v));
}

Tensor Tensor::randn(const Shape& s, SeededRng& rng) {
  check_shape_valid(s);
  Tensor t = zeros(s);
  for (double& v : t.data) v = rng.normal();
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> d) {
  check_shape_valid(s);
  if (shape_numel(s) != int64_t(d.size()))
    throw ShapeError(strfmt("data length %zu does not fill shape %s", d.size(),
                            shape_str(s).c_str()));
  return Tensor(s, std::move(d));
}

int64_t Tensor::stride(int axis) const {
  int64_t st = 1;
  for (int i = rank() - 1; i > axis; --i) st *= shape[size_t(i)];
  return st;
}

int64_t Tensor::flat_index(std::initializer_list<int64_t> idx) const {
  int64_t flat = 0, i = 0;
  for (int64_t v : idx) flat = flat * shape[size_t(i++)] + v;
  return flat;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// true when b's shape is a suffix of `out` so it repeats as a contiguous block
bool suffix_aligned(const Shape& out, const Shape& b) {
  if (b.size() > out.size()) return false;
  for (size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != out[out.size() - 1 - i]) return false;
  return true;
}

template <class F>
Tensor binary_op(const Tensor& a, const Tensor& b, F f) {
  if (a.shape == b.shape) {
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape, b.shape);
  Tensor out = Tensor::zeros(os);
  if (b.numel() == 1 && a.shape == os) {
    double bv = b[0];
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(a[i], bv);
    return out;
  }
  if (a.numel() == 1 && b.shape == os) {
    double av = a[0];
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(av, b[i]);
    return out;
  }
  if (a.shape == os && suffix_aligned(os, b.shape)) {
    int64_t block = b.numel();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(a[i], b[i % block]);
    return out;
  }
  if (b.shape == os && suffix_aligned(os, a.shape)) {
    int64_t block = a.numel();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(a[i % block], b[i]);
    return out;
  }
  // general path: decompose the output index
  size_t r = os.size();
  std::vector<int64_t> sa(r, 0), sb(r, 0);
  {
    int64_t st = 1;
    for (int i = int(a.shape.size()) - 1; i >= 0; --i) {
      size_t o = r - a.shape.size() + size_t(i);
      sa[o] = a.shape[size_t(i)] == 1 ? 0 : st;
      st *= a.shape[size_t(i)];
    }
    st = 1;
    for (int i = int(b.shape.size()) - 1; i >= 0; --i) {
      size_t o = r - b.shape.size() + size_t(i);
      sb[o] = b.shape[size_t(i)] == 1 ? 0 : st;
      st *= b.shape[size_t(i)];
    }
  }
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = f(a[ia], b[ib]);
    for (int d = int(r) - 1; d >= 0; --d) {
      idx[size_t(d)]++;
      ia += sa[size_t(d)];
      ib += sb[size_t(d)];
      if (idx[size_t(d)] < os[size_t(d)]) break;
      ia -= sa[size_t(d)] * os[size_t(d)];
      ib -= sb[size_t(d)] * os[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, [](double x, double y) { return x * y; });
}
Tensor add(const Tensor& a, double b) {
  Tensor out = a;
  for (double& v : out.data) v += b;
  return out;
}
Tensor mul(const Tensor& a, double b) {
  Tensor out = a;
  for (double& v : out.data) v *= b;
  return out;
}
Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor reduce_to(const Tensor& a, const Shape& target) {
  if (a.shape == target) return a;
  if (shape_numel(target) == 1) {
    double s = 0;
    for (double v : a.data) s += v;
    Tensor out = Tensor::zeros(target);
    out.data.assign(out.data.size(), s);
    return out;
  }
  if (suffix_aligned(a.shape, target)) {
    Tensor out = Tensor::zeros(target);
    int64_t block = out.numel();
    for (int64_t i = 0; i < a.numel(); ++i) out[i % block] += a[i];
    return out;
  }
  // general: target broadcast against a.shape must reproduce a.shape
  size_t r = a.shape.size();
  std::vector<int64_t> st(r, 0);
  {
    int64_t s = 1;
    for (int i = int(target.size()) - 1; i >= 0; --i) {
      size_t o = r - target.size() + size_t(i);
      if (target[size_t(i)] != 1 && target[size_t(i)] != a.shape[o])
        throw ShapeError("cannot reduce " + shape_str(a.shape) + " to " + shape_str(target));
      st[o] = target[size_t(i)] == 1 ? 0 : s;
      s *= target[size_t(i)];
    }
  }
  Tensor out = Tensor::zeros(target);
  std::vector<int64_t> idx(r, 0);
  int64_t it = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    out[it] += a[i];
    for (int d = int(r) - 1; d >= 0; --d) {
      idx[size_t(d)]++;
      it += st[size_t(d)];
      if (idx[size_t(d)] < a.shape[size_t(d)]) break;
      it -= st[size_t(d)] * a.shape[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
  return out;
}

namespace {

// C[n,m] += A[n,k] * B[k,m], contiguous blocks
void mm_kernel(const double* A, const double* B, double* C, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i) {
    const double* a = A + i * k;
    double* c = C + i * m;
    for (int64_t p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + p * m;
      for (int64_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  int64_t n = a.shape[size_t(a.rank() - 2)], k = a.shape[size_t(a.rank() - 1)];
  int64_t k2 = b.shape[size_t(b.rank() - 2)], m = b.shape[size_t(b.rank() - 1)];
  if (k != k2)
    throw ShapeError("matmul contraction mismatch: " + shape_str(a.shape) + " x " +
                     shape_str(b.shape));
  Shape ab(a.shape.begin(), a.shape.end() - 2), bb(b.shape.begin(), b.shape.end() - 2);
  Shape batch = broadcast_shape(ab.empty() ? Shape{1} : ab, bb.empty() ? Shape{1} : bb);
  if (ab.empty() && bb.empty()) batch.clear();
  Shape os = batch;
  os.push_back(n);
  os.push_back(m);
  Tensor out = Tensor::zeros(os);

  int64_t nb = batch.empty() ? 1 : shape_numel(batch);
  size_t rb = batch.size();
  std::vector<int64_t> sa(rb, 0), sb(rb, 0);
  {
    int64_t s = 1;
    for (int i = int(ab.size()) - 1; i >= 0; --i) {
      size_t o = rb - ab.size() + size_t(i);
      sa[o] = ab[size_t(i)] == 1 ? 0 : s;
      s *= ab[size_t(i)];
    }
    s = 1;
    for (int i = int(bb.size()) - 1; i >= 0; --i) {
      size_t o = rb - bb.size() + size_t(i);
      sb[o] = bb[size_t(i)] == 1 ? 0 : s;
      s *= bb[size_t(i)];
    }
  }
  std::vector<int64_t> idx(rb, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t bi = 0; bi < nb; ++bi) {
    mm_kernel(a.data.data() + ia * n * k, b.data.data() + ib * k * m,
              out.data.data() + bi * n * m, n, k, m);
    for (int d = int(rb) - 1; d >= 0; --d) {
      idx[size_t(d)]++;
      ia += sa[size_t(d)];
      ib += sb[size_t(d)];
      if (idx[size_t(d)] < batch[size_t(d)]) break;
      ia -= sa[size_t(d)] * batch[size_t(d)];
      ib -= sb[size_t(d)] * batch[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
  return out;
}

Tensor reshape(const Tensor& a, const Shape& s) {
  check_shape_valid(s);
  if (shape_numel(s) != a.numel())
    throw ShapeError("reshape " + shape_str(a.shape) + " to " + shape_str(s) +
                     " changes element count");
  return Tensor(s, a.data);
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  if (int(perm.size()) != a.rank())
    throw ShapeError(strfmt("permute order of length %zu on rank-%d tensor", perm.size(),
                            a.rank()));
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= a.rank() || seen[size_t(p)])
      throw ShapeError("permute order is not a permutation");
    seen[size_t(p)] = true;
  }
  int r = a.rank();
  Shape os(size_t(r), 0);
  for (int i = 0; i < r; ++i) os[size_t(i)] = a.shape[size_t(perm[size_t(i)])];
  Tensor out = Tensor::zeros(os);
  std::vector<int64_t> out_stride_of_in(size_t(r), 0);
  for (int i = 0; i < r; ++i) out_stride_of_in[size_t(perm[size_t(i)])] = out.stride(i);
  std::vector<int64_t> idx(size_t(r), 0);
  int64_t oi = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    out[oi] = a[i];
    for (int d = r - 1; d >= 0; --d) {
      idx[size_t(d)]++;
      oi += out_stride_of_in[size_t(d)];
      if (idx[size_t(d)] < a.shape[size_t(d)]) break;
      oi -= out_stride_of_in[size_t(d)] * a.shape[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
  return out;
}

Tensor transpose_last2(const Tensor& a) {
  std::vector<int> perm(size_t(a.rank()));
  for (int i = 0; i < a.rank(); ++i) perm[size_t(i)] = i;
  std::swap(perm[size_t(a.rank() - 2)], perm[size_t(a.rank() - 1)]);
  return permute(a, perm);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape;
  if (axis < 0 || axis >= int(s0.size())) throw ShapeError("concat axis out of range");
  int64_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != int(s0.size()))
      throw ShapeError("concat rank mismatch: " + shape_str(s0) + " vs " + shape_str(p.shape));
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.shape[size_t(i)] != s0[size_t(i)])
        throw ShapeError("concat shape mismatch: " + shape_str(s0) + " vs " +
                         shape_str(p.shape));
    total += p.shape[size_t(axis)];
  }
  Shape os = s0;
  os[size_t(axis)] = total;
  Tensor out = Tensor::zeros(os);
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[size_t(i)];
  int64_t inner = 1;
  for (int i = axis + 1; i < int(s0.size()); ++i) inner *= s0[size_t(i)];
  int64_t at = 0;
  for (const Tensor& p : parts) {
    int64_t pe = p.shape[size_t(axis)];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data.data() + (o * total + at) * inner,
                  p.data.data() + o * pe * inner, size_t(pe * inner) * sizeof(double));
    at += pe;
  }
  return out;
}

std::vector<Tensor> split(const Tensor& a, int axis, const std::vector<int64_t>& sizes) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("split axis out of range");
  int64_t total = 0;
  for (int64_t s : sizes) {
    if (s < 1) throw ShapeError("split size < 1");
    total += s;
  }
  if (total != a.shape[size_t(axis)])
    throw ShapeError(strfmt("split sizes sum to %lld but axis extent is %lld",
                            (long long)total, (long long)a.shape[size_t(axis)]));
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape[size_t(i)];
  int64_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape[size_t(i)];
  std::vector<Tensor> out;
  int64_t at = 0;
  for (int64_t s : sizes) {
    Shape ps = a.shape;
    ps[size_t(axis)] = s;
    Tensor p = Tensor::zeros(ps);
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(p.data.data() + o * s * inner,
                  a.data.data() + (o * a.shape[size_t(axis)] + at) * inner,
                  size_t(s * inner) * sizeof(double));
    at += s;
    out.push_back(std::move(p));
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("slice axis out of range");
  if (start < 0 || len < 1 || start + len > a.shape[size_t(axis)])
    throw ShapeError(strfmt("slice [%lld,%lld) outside extent %lld", (long long)start,
                            (long long)(start + len), (long long)a.shape[size_t(axis)]));
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape[size_t(i)];
  int64_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape[size_t(i)];
  Shape os = a.shape;
  os[size_t(axis)] = len;
  Tensor out = Tensor::zeros(os);
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data.data() + o * len * inner,
                a.data.data() + (o * a.shape[size_t(axis)] + start) * inner,
                size_t(len * inner) * sizeof(double));
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax axis out of range");
  int64_t e = a.shape[size_t(axis)];
  int64_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape[size_t(i)];
  int64_t outer = a.numel() / (e * inner);
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * e * inner + in;
      double mx = a[base];
      for (int64_t i = 1; i < e; ++i) mx = std::max(mx, a[base + i * inner]);
      double z = 0;
      for (int64_t i = 0; i < e; ++i) {
        double v = std::exp(a[base + i * inner] - mx);
        out[base + i * inner] = v;
        z += v;
      }
      for (int64_t i = 0; i < e; ++i) out[base + i * inner] /= z;
    }
  return out;
}

Tensor layer_norm(const Tensor& a) {
  int64_t e = a.shape[size_t(a.rank() - 1)];
  int64_t rows = a.numel() / e;
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data.data() + r * e;
    double* y = out.data.data() + r * e;
    double m = 0;
    for (int64_t i = 0; i < e; ++i) m += x[i];
    m /= double(e);
    double var = 0;
    for (int64_t i = 0; i < e; ++i) var += (x[i] - m) * (x[i] - m);
    var /= double(e);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int64_t i = 0; i < e; ++i) y[i] = (x[i] - m) * inv;
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244));
  return out;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor out = a;
  for (double& v : out.data) v = std::min(hi, std::max(lo, v));
  return out;
}

double sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data) s += v;
  return s;
}

double mean(const Tensor& a) { return sum(a) / double(a.numel()); }

Tensor take(const Tensor& a, const Shape& out_shape, const std::vector<int64_t>& index) {
  if (shape_numel(out_shape) != int64_t(index.size()))
    throw ShapeError("take: index length does not fill " + shape_str(out_shape));
  Tensor out = Tensor::zeros(out_shape);
  for (size_t i = 0; i < index.size(); ++i) out[int64_t(i)] = a[index[i]];
  return out;
}

}  // namespace memdiff
