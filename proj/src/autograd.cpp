#include "memdiff/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace memdiff {

namespace {

std::atomic<int64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

void accum(const NodePtr& n, const Tensor& g) {
  if (!n->requires_grad) return;
  if (!n->has_grad())
    n->grad = Tensor::zeros(n->value.shape);
  for (int64_t i = 0; i < g.numel(); ++i) n->grad[i] += g[i];
}

Value make(Tensor out, std::vector<NodePtr> parents,
           std::function<void(const Tensor&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool need = false;
  if (g_grad_enabled)
    for (const NodePtr& p : parents)
      if (p->requires_grad) need = true;
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Value(n);
}

Tensor sum_axis_keep(const Tensor& a, int axis) {
  int64_t e = a.shape[size_t(axis)];
  int64_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.shape[size_t(i)];
  int64_t outer = a.numel() / (e * inner);
  Shape os = a.shape;
  os[size_t(axis)] = 1;
  Tensor out = Tensor::zeros(os);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < e; ++i)
      for (int64_t in = 0; in < inner; ++in)
        out[o * inner + in] += a[(o * e + i) * inner + in];
  return out;
}

void add_into_slice(Tensor& dst, const Tensor& src, int axis, int64_t start) {
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= dst.shape[size_t(i)];
  int64_t inner = 1;
  for (int i = axis + 1; i < dst.rank(); ++i) inner *= dst.shape[size_t(i)];
  int64_t de = dst.shape[size_t(axis)], se = src.shape[size_t(axis)];
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < se * inner; ++i)
      dst[(o * de + start) * inner + i] += src[o * se * inner + i];
}

}  // namespace

const Tensor& Value::grad() const {
  if (!n->has_grad())
    throw ContractError("gradient requested before backward reached this node");
  return n->grad;
}

Value leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Value(n);
}

Value constant(Tensor v) { return leaf(std::move(v), false); }

Value detach(const Value& v) { return constant(v.val()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Value add(const Value& a, const Value& b) {
  NodePtr an = a.n, bn = b.n;
  return make(add(a.val(), b.val()), {an, bn}, [an, bn](const Tensor& g) {
    accum(an, reduce_to(g, an->value.shape));
    accum(bn, reduce_to(g, bn->value.shape));
  });
}

Value add(const Value& a, double b) {
  NodePtr an = a.n;
  return make(add(a.val(), b), {an}, [an](const Tensor& g) { accum(an, g); });
}

Value sub(const Value& a, const Value& b) {
  NodePtr an = a.n, bn = b.n;
  return make(sub(a.val(), b.val()), {an, bn}, [an, bn](const Tensor& g) {
    accum(an, reduce_to(g, an->value.shape));
    accum(bn, reduce_to(neg(g), bn->value.shape));
  });
}

Value mul(const Value& a, const Value& b) {
  NodePtr an = a.n, bn = b.n;
  return make(mul(a.val(), b.val()), {an, bn}, [an, bn](const Tensor& g) {
    accum(an, reduce_to(mul(g, bn->value), an->value.shape));
    accum(bn, reduce_to(mul(g, an->value), bn->value.shape));
  });
}

Value mul(const Value& a, double b) {
  NodePtr an = a.n;
  return make(mul(a.val(), b), {an}, [an, b](const Tensor& g) { accum(an, mul(g, b)); });
}

Value neg(const Value& a) { return mul(a, -1.0); }

Value matmul(const Value& a, const Value& b) {
  NodePtr an = a.n, bn = b.n;
  return make(matmul(a.val(), b.val()), {an, bn}, [an, bn](const Tensor& g) {
    accum(an, reduce_to(matmul(g, transpose_last2(bn->value)), an->value.shape));
    accum(bn, reduce_to(matmul(transpose_last2(an->value), g), bn->value.shape));
  });
}

Value reshape(const Value& a, const Shape& s) {
  NodePtr an = a.n;
  return make(reshape(a.val(), s), {an},
              [an](const Tensor& g) { accum(an, reshape(g, an->value.shape)); });
}

Value permute(const Value& a, const std::vector<int>& perm) {
  NodePtr an = a.n;
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[size_t(perm[i])] = int(i);
  return make(permute(a.val(), perm), {an},
              [an, inv](const Tensor& g) { accum(an, permute(g, inv)); });
}

Value transpose_last2(const Value& a) {
  std::vector<int> perm(size_t(a.val().rank()));
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
  std::swap(perm[perm.size() - 2], perm[perm.size() - 1]);
  return permute(a, perm);
}

Value concat(const std::vector<Value>& parts, int axis) {
  std::vector<Tensor> vs;
  std::vector<NodePtr> ps;
  std::vector<int64_t> sizes;
  for (const Value& p : parts) {
    vs.push_back(p.val());
    ps.push_back(p.n);
    sizes.push_back(p.val().shape[size_t(axis)]);
  }
  return make(concat(vs, axis), ps, [ps, sizes, axis](const Tensor& g) {
    std::vector<Tensor> gs = split(g, axis, sizes);
    for (size_t i = 0; i < ps.size(); ++i) accum(ps[i], gs[i]);
  });
}

std::vector<Value> split(const Value& a, int axis, const std::vector<int64_t>& sizes) {
  NodePtr an = a.n;
  std::vector<Tensor> vs = split(a.val(), axis, sizes);
  std::vector<Value> out;
  int64_t off = 0;
  for (Tensor& v : vs) {
    int64_t start = off;
    off += v.shape[size_t(axis)];
    out.push_back(make(std::move(v), {an}, [an, axis, start](const Tensor& g) {
      if (!an->requires_grad) return;
      Tensor full = Tensor::zeros(an->value.shape);
      add_into_slice(full, g, axis, start);
      accum(an, full);
    }));
  }
  return out;
}

Value slice(const Value& a, int axis, int64_t start, int64_t len) {
  NodePtr an = a.n;
  return make(slice(a.val(), axis, start, len), {an},
              [an, axis, start](const Tensor& g) {
                if (!an->requires_grad) return;
                Tensor full = Tensor::zeros(an->value.shape);
                add_into_slice(full, g, axis, start);
                accum(an, full);
              });
}

Value softmax(const Value& a, int axis) {
  NodePtr an = a.n;
  Tensor y = softmax(a.val(), axis);
  auto yk = std::make_shared<Tensor>(y);
  return make(std::move(y), {an}, [an, yk, axis](const Tensor& g) {
    Tensor gy = mul(g, *yk);
    Tensor s = sum_axis_keep(gy, axis);
    accum(an, mul(sub(g, s), *yk));
  });
}

Value layer_norm(const Value& a) {
  NodePtr an = a.n;
  const Tensor& x = a.val();
  int64_t e = x.shape[size_t(x.rank() - 1)];
  int64_t rows = x.numel() / e;
  Tensor y = Tensor::zeros(x.shape);
  auto inv = std::make_shared<std::vector<double>>(size_t(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xp = x.data.data() + r * e;
    double* yp = y.data.data() + r * e;
    double m = 0;
    for (int64_t i = 0; i < e; ++i) m += xp[i];
    m /= double(e);
    double var = 0;
    for (int64_t i = 0; i < e; ++i) var += (xp[i] - m) * (xp[i] - m);
    var /= double(e);
    double iv = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv)[size_t(r)] = iv;
    for (int64_t i = 0; i < e; ++i) yp[i] = (xp[i] - m) * iv;
  }
  auto yk = std::make_shared<Tensor>(y);
  return make(std::move(y), {an}, [an, yk, inv, e, rows](const Tensor& g) {
    // dx = (g - mean(g) - y * mean(g*y)) * inv_std, per row
    Tensor dx = Tensor::zeros(yk->shape);
    for (int64_t r = 0; r < rows; ++r) {
      const double* gp = g.data.data() + r * e;
      const double* yp = yk->data.data() + r * e;
      double* dp = dx.data.data() + r * e;
      double mg = 0, mgy = 0;
      for (int64_t i = 0; i < e; ++i) {
        mg += gp[i];
        mgy += gp[i] * yp[i];
      }
      mg /= double(e);
      mgy /= double(e);
      double iv = (*inv)[size_t(r)];
      for (int64_t i = 0; i < e; ++i) dp[i] = (gp[i] - mg - yp[i] * mgy) * iv;
    }
    accum(an, dx);
  });
}

Value gelu(const Value& a) {
  NodePtr an = a.n;
  return make(gelu(a.val()), {an}, [an](const Tensor& g) {
    const Tensor& x = an->value;
    Tensor dx = Tensor::zeros(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
      double v = x[i];
      double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
      double pdf = std::exp(-0.5 * v * v) * 0.3989422804014326779;
      dx[i] = g[i] * (cdf + v * pdf);
    }
    accum(an, dx);
  });
}

Value sum(const Value& a) {
  NodePtr an = a.n;
  return make(Tensor::scalar(sum(a.val())), {an}, [an](const Tensor& g) {
    accum(an, Tensor::full(an->value.shape, g[0]));
  });
}

Value mean(const Value& a) {
  NodePtr an = a.n;
  double n = double(a.numel());
  return make(Tensor::scalar(mean(a.val())), {an}, [an, n](const Tensor& g) {
    accum(an, Tensor::full(an->value.shape, g[0] / n));
  });
}

Value take(const Value& a, const Shape& out_shape,
           std::shared_ptr<std::vector<int64_t>> index) {
  NodePtr an = a.n;
  return make(take(a.val(), out_shape, *index), {an}, [an, index](const Tensor& g) {
    if (!an->requires_grad) return;
    Tensor full = Tensor::zeros(an->value.shape);
    for (size_t i = 0; i < index->size(); ++i) full[(*index)[i]] += g[int64_t(i)];
    accum(an, full);
  });
}

Value mse(const Value& a, const Value& b) {
  Value d = sub(a, b);
  return mean(mul(d, d));
}

void backward(const Value& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  // collect the reachable grad-requiring subgraph
  std::vector<NodePtr> order;
  std::unordered_set<Node*> seen;
  std::vector<NodePtr> stack{loss.n};
  seen.insert(loss.n.get());
  while (!stack.empty()) {
    NodePtr n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const NodePtr& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
  }
  std::sort(order.begin(), order.end(),
            [](const NodePtr& a, const NodePtr& b) { return a->id > b->id; });
  accum(loss.n, Tensor::full(loss.val().shape, 1.0));
  if (!loss.n->requires_grad) return;
  for (const NodePtr& n : order)
    if (n->backprop && n->has_grad()) n->backprop(n->grad);
}

void zero_grad(const std::vector<NodePtr>& params) {
  for (const NodePtr& p : params) p->grad = Tensor();
}

double finite_diff_check(const std::function<Value(const Value&)>& f, const Tensor& x,
                         double h) {
  Value vx = leaf(x, true);
  Value y = f(vx);
  if (y.numel() != 1) throw ContractError("finite_diff_check needs a scalar function");
  backward(y);
  Tensor ad = vx.n->has_grad() ? vx.n->grad : Tensor::zeros(x.shape);
  double worst = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    double fp, fm;
    {
      NoGradGuard ng;
      fp = f(constant(xp)).val()[0];
      fm = f(constant(xm)).val()[0];
    }
    double cd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(cd - ad[i]) / (std::abs(ad[i]) + 1e-8));
  }
  return worst;
}

double finite_diff_check_params(const std::function<Value()>& loss_fn,
                                const std::vector<std::pair<NodePtr, int64_t>>& coords,
                                double h) {
  Value loss = loss_fn();
  backward(loss);
  double worst = 0;
  for (const auto& [node, i] : coords) {
    double ad = node->has_grad() ? node->grad[i] : 0.0;
    double keep = node->value[i];
    double fp, fm;
    {
      NoGradGuard ng;
      node->value[i] = keep + h;
      fp = loss_fn().val()[0];
      node->value[i] = keep - h;
      fm = loss_fn().val()[0];
      node->value[i] = keep;
    }
    double cd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(cd - ad) / (std::abs(ad) + 1e-8));
  }
  return worst;
}

}  // namespace memdiff
