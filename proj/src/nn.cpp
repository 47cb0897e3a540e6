#include "mistere/nn.hpp"

#include <cmath>

namespace mistere::nn {

bool position_valid(const Mask& mask, std::size_t t) {
  return mask.empty() || mask[t];
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform(std::move(shape),
                 std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Linear Linear::create(ParameterSet& params, const std::string& prefix,
                      std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = params.add(prefix + ".w", xavier_uniform({in, out}, in, out, rng));
  l.bias = params.add(prefix + ".b", Tensor({out}, 0.0));
  return l;
}

Value Linear::operator()(const Value& x) const {
  return add_bias(matmul(x, weight), bias);
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& prefix,
                            std::size_t dim) {
  return {params.add(prefix + ".gain", Tensor({dim}, 1.0)),
          params.add(prefix + ".bias", Tensor({dim}, 0.0))};
}

GruCell GruCell::create(ParameterSet& params, const std::string& prefix,
                        std::size_t input, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  GruCell c;
  c.w_ih = params.add(prefix + ".w_ih", uniform({input, 3 * hidden}, bound, rng));
  c.w_hh = params.add(prefix + ".w_hh", uniform({hidden, 3 * hidden}, bound, rng));
  c.b = params.add(prefix + ".b", uniform({3 * hidden}, bound, rng));
  return c;
}

Value GruCell::run(const Value& x, const Mask& mask, bool reverse,
                   const std::optional<Value>& h0) const {
  const std::size_t t_len = x.rows();
  const std::size_t h_dim = hidden();
  if (x.cols() != w_ih.rows()) {
    throw ShapeError("GRU input has " + std::to_string(x.cols()) +
                     " features, expected " + std::to_string(w_ih.rows()));
  }
  // Input contributions for every step at once: T x 3H.
  const Value x_proj = add_bias(matmul(x, w_ih), b);
  const Value w_h_zr = slice_cols(w_hh, 0, 2 * h_dim);
  const Value w_h_n = slice_cols(w_hh, 2 * h_dim, h_dim);

  Value h = h0 ? *h0 : Value::constant(Tensor({1, h_dim}, 0.0));
  std::vector<Value> states(t_len);
  for (std::size_t step = 0; step < t_len; ++step) {
    const std::size_t t = reverse ? t_len - 1 - step : step;
    if (position_valid(mask, t)) {
      const Value a = slice_rows(x_proj, t, 1);
      const Value zr = sigmoid(add(slice_cols(a, 0, 2 * h_dim), matmul(h, w_h_zr)));
      const Value z = slice_cols(zr, 0, h_dim);
      const Value r = slice_cols(zr, h_dim, h_dim);
      const Value n = tanh(add(slice_cols(a, 2 * h_dim, h_dim), matmul(mul(r, h), w_h_n)));
      // (1 - z) * n + z * h  ==  n + z * (h - n)
      h = add(n, mul(z, sub(h, n)));
    }
    states[t] = h;
  }
  return concat(states, 0);
}

BiGru BiGru::create(ParameterSet& params, const std::string& prefix,
                    std::size_t input, std::size_t hidden, std::size_t layers,
                    Rng& rng) {
  if (layers == 0 || hidden == 0) throw std::invalid_argument("BiGru: layers and hidden must be >= 1");
  BiGru g;
  std::size_t in = input;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    g.forward.push_back(GruCell::create(params, lp + ".fwd", in, hidden, rng));
    g.backward.push_back(GruCell::create(params, lp + ".bwd", in, hidden, rng));
    in = 2 * hidden;
  }
  return g;
}

Value BiGru::operator()(const Value& x, const Mask& mask) const {
  Value h = x;
  for (std::size_t l = 0; l < forward.size(); ++l) {
    const std::vector<Value> parts{forward[l].run(h, mask, false),
                                   backward[l].run(h, mask, true)};
    h = concat(parts, 1);
  }
  return h;
}

MultiHeadAttention MultiHeadAttention::create(ParameterSet& params,
                                              const std::string& prefix,
                                              std::size_t dim, std::size_t heads,
                                              Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention dim " + std::to_string(dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.q = Linear::create(params, prefix + ".q", dim, dim, rng);
  m.k = Linear::create(params, prefix + ".k", dim, dim, rng);
  m.v = Linear::create(params, prefix + ".v", dim, dim, rng);
  m.out = Linear::create(params, prefix + ".out", dim, dim, rng);
  m.heads = heads;
  return m;
}

Value MultiHeadAttention::operator()(const Value& query, const Value& key_value,
                                     const Mask& key_mask) const {
  return out(multi_head_attention(q(query), k(key_value), v(key_value), heads, key_mask));
}

Value multi_head_attention(const Value& q, const Value& k, const Value& v,
                           std::size_t heads, const Mask& key_mask) {
  const std::size_t dim = q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("attention dim " + std::to_string(dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.cols() != dim || v.cols() != dim || k.rows() != v.rows()) {
    throw ShapeError("attention: query/key/value shapes disagree");
  }
  const std::size_t tq = q.rows(), tk = k.rows();
  if (!key_mask.empty() && key_mask.size() != tk) {
    throw ShapeError("attention: key mask length differs from key count");
  }
  const std::size_t dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::optional<Value> bias;
  if (!key_mask.empty()) {
    Tensor b({tq, tk}, 0.0);
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < tk; ++j)
        if (!key_mask[j]) b[i * tk + j] = -1e30;
    bias = Value::constant(std::move(b));
  }

  std::vector<Value> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Value qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Value kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Value vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    Value scores = affine(matmul(qh, transpose(kh)), scale);
    if (bias) scores = add(scores, *bias);
    outputs.push_back(matmul(softmax(scores), vh));
  }
  return heads == 1 ? outputs.front() : concat(outputs, 1);
}

}  // namespace mistere::nn
