#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mistere/ops.hpp"

// Parameterized building blocks. Each block registers its parameters in a
// ParameterSet under a caller-supplied prefix and keeps handles to them.

namespace mistere::nn {

/// Per-position validity; an empty mask means every position is valid.
using Mask = std::vector<bool>;

bool position_valid(const Mask& mask, std::size_t t);

/// Xavier/Glorot uniform initialization for a fan_in x fan_out matrix.
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor uniform(Shape shape, double bound, Rng& rng);

struct Linear {
  Value weight;  // in x out
  Value bias;    // out

  static Linear create(ParameterSet& params, const std::string& prefix,
                       std::size_t in, std::size_t out, Rng& rng);
  Value operator()(const Value& x) const;
  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

struct LayerNorm {
  Value gain;
  Value bias;

  static LayerNorm create(ParameterSet& params, const std::string& prefix,
                          std::size_t dim);
  Value operator()(const Value& x) const { return layer_norm(x, gain, bias); }
};

/// One direction of a GRU layer.
///
/// Gates, with [a, b] denoting concatenation:
///   z = sigmoid(W_z [x, h] + b_z)
///   r = sigmoid(W_r [x, h] + b_r)
///   n = tanh(W_n [x, r * h] + b_n)
///   h' = (1 - z) * n + z * h
/// Weights are stored split by input: w_ih (D x 3H, columns z|r|n),
/// w_hh (H x 3H) and a single bias b (3H).
struct GruCell {
  Value w_ih;
  Value w_hh;
  Value b;

  static GruCell create(ParameterSet& params, const std::string& prefix,
                        std::size_t input, std::size_t hidden, Rng& rng);
  std::size_t hidden() const { return w_hh.rows(); }

  /// Runs over x (T x D) in forward or reverse time order and returns the
  /// hidden states in time order (T x H). Steps whose mask entry is false
  /// leave the hidden state unchanged. `h0` defaults to zeros.
  Value run(const Value& x, const Mask& mask, bool reverse,
            const std::optional<Value>& h0 = std::nullopt) const;
};

/// Stacked bidirectional GRU; output is T x 2H with [forward | backward].
struct BiGru {
  std::vector<GruCell> forward;
  std::vector<GruCell> backward;

  static BiGru create(ParameterSet& params, const std::string& prefix,
                      std::size_t input, std::size_t hidden, std::size_t layers,
                      Rng& rng);
  Value operator()(const Value& x, const Mask& mask) const;
  std::size_t output_dim() const { return 2 * forward.front().hidden(); }
};

/// Standard multi-head scaled dot-product attention with an output
/// projection. Keys whose mask entry is false receive an additive -1e30
/// score before the softmax.
struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterSet& params, const std::string& prefix,
                                   std::size_t dim, std::size_t heads, Rng& rng);
  Value operator()(const Value& query, const Value& key_value,
                   const Mask& key_mask) const;
};

/// Attention core on already-projected inputs, exposed for testing.
Value multi_head_attention(const Value& q, const Value& k, const Value& v,
                           std::size_t heads, const Mask& key_mask);

}  // namespace mistere::nn
