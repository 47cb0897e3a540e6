#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mistere/rng.hpp"
#include "mistere/value.hpp"

// Differentiable operations over rank-2 values (rank-1 values are treated as a
// single row). Every op checks its operand shapes and throws ShapeError on a
// mismatch; every op output is checked for NaN/Inf by Value::from_op.

namespace mistere {

/// Per-forward-pass settings shared by stochastic ops.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

// Linear algebra
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);

// Elementwise, identical shapes
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
/// scale * x + shift
Value affine(const Value& x, double scale, double shift = 0.0);

// Broadcasting
/// x[N x D] + b (b holds D elements, broadcast over rows)
Value add_bias(const Value& x, const Value& b);
/// x[N x C] with row i multiplied by s[i] (s is N x 1)
Value scale_rows(const Value& x, const Value& s);

// Structure
/// axis 0 stacks rows, axis 1 joins columns.
Value concat(std::span<const Value> parts, int axis);
Value slice_rows(const Value& x, std::size_t start, std::size_t count);
Value slice_cols(const Value& x, std::size_t start, std::size_t count);
/// Rows picked by index (repeats allowed).
Value select_rows(const Value& x, std::span<const std::size_t> rows);
/// out[i] = x[i, index[i]], shape N x 1.
Value gather(const Value& x, std::span<const std::size_t> index);
Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

// Nonlinearities
Value tanh(const Value& x);
Value sigmoid(const Value& x);
Value relu(const Value& x);
Value exp(const Value& x);
/// Natural log; inputs must be positive.
Value log(const Value& x);
/// max(x, lo); gradient is zero where the floor is active.
Value clamp_min(const Value& x, double lo);
/// x^p for x >= 0.
Value pow_scalar(const Value& x, double p);

// Normalization and probability
/// Row-wise softmax along the last axis, max-subtracted.
Value softmax(const Value& x);
Value log_softmax(const Value& x);
/// Row-wise layer normalization with learned gain and bias (D elements each).
Value layer_norm(const Value& x, const Value& gain, const Value& bias,
                 double eps = 1e-5);
/// Rows scaled to unit Euclidean norm; a zero row throws NumericalError.
Value l2_normalize(const Value& x);

// Reductions (scalar results of shape {1})
Value sum(const Value& x);
Value mean(const Value& x);

/// Inverted dropout. Identity unless ctx.training and p > 0.
Value dropout(const Value& x, double p, const ForwardContext& ctx);

/// Same-length 1-D convolution over time.
///
/// x is T x Din, w is k x Din x Dout, b holds Dout elements. k must be odd;
/// the sequence is zero-padded by (k-1)/2 on both sides.
Value conv1d_same(const Value& x, const Value& w, const Value& b);

/// Convex combination of three equally shaped N x C expert matrices with
/// per-row weights beta (N x 3). Each output is clamped into the
/// [min, max] range of its three inputs, which is exact arithmetic for a
/// convex combination and removes rounding drift; the backward pass is
/// that of the plain weighted sum.
Value convex_combine(const Value& e0, const Value& e1, const Value& e2,
                     const Value& beta);

}  // namespace mistere
