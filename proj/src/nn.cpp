#include "memdiff/nn.hpp"

#include <cmath>

namespace memdiff {

Value Params::add(const std::string& name, Tensor init) {
  for (const auto& [n, _] : items)
    if (n == name) throw ContractError("duplicate parameter name " + name);
  Value v = leaf(std::move(init), true);
  items.emplace_back(name, v.n);
  return v;
}

NodePtr Params::find(const std::string& name) const {
  for (const auto& [n, p] : items)
    if (n == name) return p;
  return nullptr;
}

std::vector<NodePtr> Params::nodes() const {
  std::vector<NodePtr> out;
  out.reserve(items.size());
  for (const auto& [_, p] : items) out.push_back(p);
  return out;
}

int64_t Params::scalar_count() const {
  int64_t n = 0;
  for (const auto& [_, p] : items) n += p->value.numel();
  return n;
}

Linear::Linear(Params& p, const std::string& name, int64_t in, int64_t out, SeededRng& rng,
               bool zero_init) {
  Tensor w = zero_init ? Tensor::zeros({in, out})
                       : mul(Tensor::randn({in, out}, rng), 1.0 / std::sqrt(double(in)));
  W = p.add(name + ".w", std::move(w));
  b = p.add(name + ".b", Tensor::zeros({out}));
}

LayerNorm::LayerNorm(Params& p, const std::string& name, int64_t dim) {
  gain = p.add(name + ".g", Tensor::full({dim}, 1.0));
  bias = p.add(name + ".b", Tensor::zeros({dim}));
}

Value LayerNorm::operator()(const Value& x) const {
  return layer_norm(x, gain, bias);
}

Value layer_norm(const Value& x, const Value& gain, const Value& bias) {
  return add(mul(layer_norm(x), gain), bias);
}

Mlp::Mlp(Params& p, const std::string& name, int64_t dim, int64_t hidden, SeededRng& rng,
         bool zero_out)
    : fc1(p, name + ".fc1", dim, hidden, rng),
      fc2(p, name + ".fc2", hidden, dim, rng, zero_out) {}

Value attention_core(const Value& q, const Value& k, const Value& v, const Value& bias) {
  int64_t dh = q.shape().back();
  Value scores = mul(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(double(dh)));
  if (bias.defined()) scores = add(scores, bias);
  return matmul(softmax(scores, int(scores.shape().size()) - 1), v);
}

Tensor sinusoid_embedding(double t, int64_t dim) {
  Tensor e = Tensor::zeros({dim});
  int64_t half = dim / 2;
  for (int64_t k = 0; k < half; ++k) {
    double w = std::exp(-std::log(10000.0) * double(k) / double(half));
    e[k] = std::sin(t * w);
    e[half + k] = std::cos(t * w);
  }
  return e;
}

AdamW::AdamW(const std::vector<NodePtr>& params, double wd) : weight_decay(wd) {
  for (const NodePtr& p : params) {
    m.push_back(Tensor::zeros(p->value.shape));
    v.push_back(Tensor::zeros(p->value.shape));
  }
}

void AdamW::step(const std::vector<NodePtr>& params, double lr) {
  if (params.size() != m.size())
    throw ContractError("optimizer state does not match parameter list");
  ++t;
  double c1 = 1.0 - std::pow(beta1, double(t));
  double c2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Node& p = *params[i];
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      double g = p.has_grad() ? p.grad[j] : 0.0;
      double& mj = m[i][j];
      double& vj = v[i][j];
      mj = beta1 * mj + (1.0 - beta1) * g;
      vj = beta2 * vj + (1.0 - beta2) * g * g;
      double update = (mj / c1) / (std::sqrt(vj / c2) + eps);
      p.value[j] -= lr * update + lr * weight_decay * p.value[j];
    }
  }
}

double cosine_lr(double peak, int64_t step, int64_t total) {
  double s = total > 0 ? double(std::min(step, total)) / double(total) : 1.0;
  return peak * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.141592653589793238 * s)));
}

}  // namespace memdiff
