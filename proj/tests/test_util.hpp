#pragma once

#include <functional>

#include <gtest/gtest.h>

#include "mistere/ops.hpp"
#include "mistere/rng.hpp"
#include "oracles.hpp"

namespace testutil {

inline mistere::Tensor random_tensor(mistere::Shape shape, mistere::Rng& rng, double scale = 1.0) {
  mistere::Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Max relative error between the analytic gradient of `f` (a scalar) at x0
/// and central finite differences, using the same rule as the gradient check.
inline void expect_gradient_matches(const std::function<mistere::Value(const mistere::Value&)>& f,
                                    mistere::Tensor x0, double rel_tol = 1e-6) {
  mistere::Value x = mistere::Value::parameter(std::move(x0));
  mistere::backward(f(x));
  const mistere::Tensor analytic = x.grad();
  const auto numeric = oracle::finite_difference(
      [&] { return f(x).value().item(); }, x.mutable_value().data());
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    if (std::abs(a) < 1e-4) {
      EXPECT_NEAR(a, n, 1e-7) << "element " << i;
    } else {
      EXPECT_LE(std::abs(a - n) / std::max(std::abs(a), std::abs(n)), rel_tol) << "element " << i;
    }
  }
}

/// Sum of x weighted by fixed pseudo-random coefficients, so that every
/// output element gets a distinct upstream gradient.
inline mistere::Value weighted_sum(const mistere::Value& x, std::uint64_t seed = 99) {
  mistere::Rng rng(seed);
  mistere::Tensor w(x.shape());
  for (double& v : w.data()) v = rng.uniform() * 2.0 - 1.0;
  return mistere::sum(mistere::mul(x, mistere::Value::constant(std::move(w))));
}

}  // namespace testutil
