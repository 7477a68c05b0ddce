#pragma once

#include <string>
#include <vector>

#include "memdiff/autograd.hpp"

namespace memdiff {

// Ordered parameter registry. Construction order is the canonical order for
// the optimizer and the checkpoint, so identical configs enumerate
// identically.
struct Params {
  std::vector<std::pair<std::string, NodePtr>> items;

  Value add(const std::string& name, Tensor init);
  NodePtr find(const std::string& name) const;
  std::vector<NodePtr> nodes() const;
  int64_t scalar_count() const;
};

struct Linear {
  Value W, b;  // W is (in, out); y = x W + b

  Linear() = default;
  Linear(Params& p, const std::string& name, int64_t in, int64_t out, SeededRng& rng,
         bool zero_init = false);
  Value operator()(const Value& x) const { return add(matmul(x, W), b); }
};

struct LayerNorm {
  Value gain, bias;

  LayerNorm() = default;
  LayerNorm(Params& p, const std::string& name, int64_t dim);
  Value operator()(const Value& x) const;
};

Value layer_norm(const Value& x, const Value& gain, const Value& bias);

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(Params& p, const std::string& name, int64_t dim, int64_t hidden, SeededRng& rng,
      bool zero_out = false);
  Value operator()(const Value& x) const { return fc2(gelu(fc1(x))); }
};

// softmax(q k^T / sqrt(dh) + bias) v over the last two axes; leading axes are
// batch. bias may be undefined or any shape broadcastable onto the scores.
Value attention_core(const Value& q, const Value& k, const Value& v, const Value& bias);

// classic [sin(t w_k), cos(t w_k)] embedding, w_k log-spaced down to 1/10000
Tensor sinusoid_embedding(double t, int64_t dim);

struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  int64_t t = 0;
  std::vector<Tensor> m, v;

  AdamW() = default;
  AdamW(const std::vector<NodePtr>& params, double wd);
  void step(const std::vector<NodePtr>& params, double lr);
};

// peak at step 0, cosine decay to 0.1*peak at step `total`
double cosine_lr(double peak, int64_t step, int64_t total);

}  // namespace memdiff
