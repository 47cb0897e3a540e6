#include "mistere/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mistere/kernels.hpp"

namespace mistere {

namespace {

Tensor like(const Tensor& t, double fill = 0.0) { return Tensor(t.shape(), fill); }

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

/// Elementwise unary op helper: f gives the value, df(x, y) the derivative.
template <class F, class DF>
Value unary(const char* name, const Value& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out = like(xv);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Value::from_op(name, std::move(out), {x}, [df](Node& self) {
    Node& a = *self.parents[0];
    if (!a.requires_grad) return;
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += self.grad[i] * df(a.value[i], self.value[i]);
    }
  });
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ " +
                             shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
  Tensor out(matrix_shape(m, n));
  kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n);
  return Value::from_op("matmul", std::move(out), {a, b},
                        [m, k, n](Node& self) {
                          Node& pa = *self.parents[0];
                          Node& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            // dA = G * B^T
                            kernels::matmul_a_bt_acc(self.grad.data(), pb.value.data(),
                                                     pa.grad_buffer().data(), m, n, k);
                          }
                          if (pb.requires_grad) {
                            // dB = A^T * G
                            kernels::matmul_at_b_acc(pa.value.data(), self.grad.data(),
                                                     pb.grad_buffer().data(), m, k, n);
                          }
                        });
}

Value transpose(const Value& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out(matrix_shape(c, r));
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Value::from_op("transpose", std::move(out), {a}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Value add(const Value& a, const Value& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Value::from_op("add", std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    accumulate_grad(*self.parents[1], self.grad);
  });
}

Value sub(const Value& a, const Value& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return Value::from_op("sub", std::move(out), {a, b}, [](Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    Node& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    Tensor& g = pb.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

Value mul(const Value& a, const Value& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Value::from_op("mul", std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Value affine(const Value& x, double scale, double shift) {
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
  return Value::from_op("affine", std::move(out), {x}, [scale](Node& self) {
    Node& p = *self.parents[0];
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  });
}

Value add_bias(const Value& x, const Value& b) {
  const std::size_t n = x.rows(), d = x.cols();
  require(b.value().size() == d, "add_bias: bias has " +
                                     std::to_string(b.value().size()) +
                                     " elements, expected " + std::to_string(d));
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += b.value()[j];
  return Value::from_op("add_bias", std::move(out), {x, b}, [n, d](Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    Node& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    Tensor& g = pb.grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
  });
}

Value scale_rows(const Value& x, const Value& s) {
  const std::size_t n = x.rows(), c = x.cols();
  require(s.value().size() == n, "scale_rows: need one scale per row");
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= s.value()[i];
  return Value::from_op("scale_rows", std::move(out), {x, s}, [n, c](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    if (px.requires_grad) {
      Tensor& g = px.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
          g[i * c + j] += self.grad[i * c + j] * ps.value[i];
    }
    if (ps.requires_grad) {
      Tensor& g = ps.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j)
          acc += self.grad[i * c + j] * px.value[i * c + j];
        g[i] += acc;
      }
    }
  });
}

Value concat(std::span<const Value> parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
  std::vector<Value> inputs(parts.begin(), parts.end());
  if (axis == 0) {
    const std::size_t c = parts[0].cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
      require(p.cols() == c, "concat(axis=0): column counts differ");
      rows += p.rows();
    }
    Tensor out(matrix_shape(rows, c));
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.value().data().begin(), p.value().data().end(),
                out.data().begin() + static_cast<std::ptrdiff_t>(off));
      off += p.value().size();
    }
    return Value::from_op("concat_rows", std::move(out), std::move(inputs),
                          [](Node& self) {
                            std::size_t off = 0;
                            for (auto& p : self.parents) {
                              const std::size_t len = p->value.size();
                              if (p->requires_grad) {
                                Tensor& g = p->grad_buffer();
                                for (std::size_t i = 0; i < len; ++i)
                                  g[i] += self.grad[off + i];
                              }
                              off += len;
                            }
                          });
  }
  const std::size_t r = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat(axis=1): row counts differ");
    cols += p.cols();
  }
  Tensor out(matrix_shape(r, cols));
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * cols + coff + j] = p.value()[i * pc + j];
    coff += pc;
  }
  return Value::from_op("concat_cols", std::move(out), std::move(inputs),
                        [r, cols](Node& self) {
                          std::size_t coff = 0;
                          for (auto& p : self.parents) {
                            const std::size_t pc = p->value.cols();
                            if (p->requires_grad) {
                              Tensor& g = p->grad_buffer();
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < pc; ++j)
                                  g[i * pc + j] += self.grad[i * cols + coff + j];
                            }
                            coff += pc;
                          }
                        });
}

Value slice_rows(const Value& x, std::size_t start, std::size_t count) {
  const std::size_t c = x.cols();
  require(start + count <= x.rows() && count > 0, "slice_rows: out of range");
  const auto first = x.value().data().begin() + static_cast<std::ptrdiff_t>(start * c);
  Tensor out(matrix_shape(count, c),
             std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * c)));
  return Value::from_op("slice_rows", std::move(out), {x},
                        [start, c](Node& self) {
                          Tensor& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            g[start * c + i] += self.grad[i];
                        });
}

Value slice_cols(const Value& x, std::size_t start, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  require(start + count <= c && count > 0, "slice_cols: out of range");
  Tensor out(matrix_shape(r, count));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.value()[i * c + start + j];
  return Value::from_op("slice_cols", std::move(out), {x},
                        [r, c, start, count](Node& self) {
                          Tensor& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < count; ++j)
                              g[i * c + start + j] += self.grad[i * count + j];
                        });
}

Value select_rows(const Value& x, std::span<const std::size_t> rows) {
  const std::size_t c = x.cols();
  require(!rows.empty(), "select_rows: empty selection");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out(matrix_shape(idx.size(), c));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < x.rows(), "select_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.value()[idx[i] * c + j];
  }
  return Value::from_op("select_rows", std::move(out), {x},
                        [idx = std::move(idx), c](Node& self) {
                          Tensor& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            for (std::size_t j = 0; j < c; ++j)
                              g[idx[i] * c + j] += self.grad[i * c + j];
                        });
}

Value gather(const Value& x, std::span<const std::size_t> index) {
  const std::size_t n = x.rows(), c = x.cols();
  require(index.size() == n, "gather: need one index per row");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(matrix_shape(n, 1));
  for (std::size_t i = 0; i < n; ++i) {
    require(idx[i] < c, "gather: index out of range");
    out[i] = x.value()[i * c + idx[i]];
  }
  return Value::from_op("gather", std::move(out), {x},
                        [idx = std::move(idx), c](Node& self) {
                          Tensor& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            g[i * c + idx[i]] += self.grad[i];
                        });
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor out(matrix_shape(labels.size(), classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < classes, "one_hot: label out of range");
    out[i * classes + labels[i]] = 1.0;
  }
  return out;
}

Value tanh(const Value& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Value sigmoid(const Value& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Value relu(const Value& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Value exp(const Value& x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Value log(const Value& x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Value clamp_min(const Value& x, double lo) {
  return unary("clamp_min", x, [lo](double v) { return v < lo ? lo : v; },
               [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

Value pow_scalar(const Value& x, double p) {
  return unary(
      "pow", x, [p](double v) { return p == 0.0 ? 1.0 : std::pow(v, p); },
      [p](double v, double) {
        if (p == 0.0) return 0.0;
        if (v == 0.0) return p == 1.0 ? 1.0 : (p > 1.0 ? 0.0 : HUGE_VAL);
        return p * std::pow(v, p - 1.0);
      });
}

Value softmax(const Value& x) {
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= z;
  }
  return Value::from_op("softmax", std::move(out), {x}, [n, c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

Value log_softmax(const Value& x) {
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lz;
  }
  return Value::from_op("log_softmax", std::move(out), {x}, [n, c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        g[i * c + j] += self.grad[i * c + j] - std::exp(self.value[i * c + j]) * gs;
    }
  });
}

Value layer_norm(const Value& x, const Value& gain, const Value& bias, double eps) {
  const std::size_t n = x.rows(), d = x.cols();
  require(gain.value().size() == d && bias.value().size() == d,
          "layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  Tensor xhat = x.value();
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = xhat.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - mu) * inv_std[i];
  }
  Tensor out(xhat.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = xhat[i * d + j] * gain.value()[j] + bias.value()[j];
  return Value::from_op(
      "layer_norm", std::move(out), {x, gain, bias},
      [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad || pb.requires_grad) {
          Tensor& gg = pg.grad_buffer();
          Tensor& gb = pb.grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += self.grad[i * d + j] * xhat[i * d + j];
              gb[j] += self.grad[i * d + j];
            }
        }
        if (!px.requires_grad) return;
        Tensor& gx = px.grad_buffer();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_dy = 0.0, mean_dy_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dy = self.grad[i * d + j] * pg.value[j];
            mean_dy += dy;
            mean_dy_xhat += dy * xhat[i * d + j];
          }
          mean_dy *= inv_d;
          mean_dy_xhat *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dy = self.grad[i * d + j] * pg.value[j];
            gx[i * d + j] += inv_std[i] * (dy - mean_dy - xhat[i * d + j] * mean_dy_xhat);
          }
        }
      });
}

Value l2_normalize(const Value& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out = x.value();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += out[i * d + j] * out[i * d + j];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) {
      throw NumericalError("l2_normalize: row " + std::to_string(i) + " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= norms[i];
  }
  return Value::from_op("l2_normalize", std::move(out), {x},
                        [n, d, norms = std::move(norms)](Node& self) {
                          Tensor& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < n; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < d; ++j)
                              dot += self.grad[i * d + j] * self.value[i * d + j];
                            for (std::size_t j = 0; j < d; ++j)
                              g[i * d + j] +=
                                  (self.grad[i * d + j] - self.value[i * d + j] * dot) / norms[i];
                          }
                        });
}

Value sum(const Value& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Value::from_op("sum", Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

Value mean(const Value& x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Value dropout(const Value& x, double p, const ForwardContext& ctx) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!ctx.training || p == 0.0) return x;
  if (ctx.rng == nullptr) throw std::invalid_argument("dropout: training requires an Rng");
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask = like(x.value());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = ctx.rng->uniform() < p ? 0.0 : keep_scale;
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Value::from_op("dropout", std::move(out), {x},
                        [mask = std::move(mask)](Node& self) {
                          Tensor& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i)
                            g[i] += self.grad[i] * mask[i];
                        });
}

Value conv1d_same(const Value& x, const Value& w, const Value& b) {
  require(w.value().rank() == 3, "conv1d_same: weight must be k x Din x Dout");
  const std::size_t k = w.shape()[0], din = w.shape()[1], dout = w.shape()[2];
  if (k % 2 == 0) throw std::invalid_argument("conv1d_same: kernel size must be odd");
  const std::size_t t_len = x.rows();
  require(x.cols() == din, "conv1d_same: input has " + std::to_string(x.cols()) +
                               " channels, weight expects " + std::to_string(din));
  require(b.value().size() == dout, "conv1d_same: bias size mismatch");
  const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const auto tl = static_cast<std::ptrdiff_t>(t_len);

  // For tap j, output rows [t0, t1) read input rows [t0 + j - pad, t1 + j - pad).
  struct Tap {
    std::size_t out_begin, in_begin, count;
  };
  std::vector<Tap> taps(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(tl, tl - shift);
    taps[j] = {static_cast<std::size_t>(t0), static_cast<std::size_t>(t0 + shift),
               t1 > t0 ? static_cast<std::size_t>(t1 - t0) : 0};
  }

  Tensor out(matrix_shape(t_len, dout));
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t o = 0; o < dout; ++o) out[t * dout + o] = b.value()[o];
  std::vector<double> tmp;
  const auto xd = x.value().data();
  const auto wd = w.value().data();
  for (std::size_t j = 0; j < k; ++j) {
    const Tap& tap = taps[j];
    if (tap.count == 0) continue;
    tmp.assign(tap.count * dout, 0.0);
    kernels::matmul(xd.subspan(tap.in_begin * din, tap.count * din),
                    wd.subspan(j * din * dout, din * dout), tmp, tap.count, din, dout);
    for (std::size_t i = 0; i < tmp.size(); ++i) out[tap.out_begin * dout + i] += tmp[i];
  }

  return Value::from_op(
      "conv1d_same", std::move(out), {x, w, b},
      [taps = std::move(taps), din, dout, t_len](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto gd = std::span<const double>(self.grad.data());
        if (pb.requires_grad) {
          Tensor& gb = pb.grad_buffer();
          for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t o = 0; o < dout; ++o) gb[o] += gd[t * dout + o];
        }
        for (std::size_t j = 0; j < taps.size(); ++j) {
          const Tap& tap = taps[j];
          if (tap.count == 0) continue;
          const auto g_block = gd.subspan(tap.out_begin * dout, tap.count * dout);
          if (pw.requires_grad) {
            kernels::matmul_at_b_acc(
                std::span<const double>(px.value.data()).subspan(tap.in_begin * din, tap.count * din),
                g_block, pw.grad_buffer().data().subspan(j * din * dout, din * dout),
                tap.count, din, dout);
          }
          if (px.requires_grad) {
            kernels::matmul_a_bt_acc(
                g_block,
                std::span<const double>(pw.value.data()).subspan(j * din * dout, din * dout),
                px.grad_buffer().data().subspan(tap.in_begin * din, tap.count * din),
                tap.count, dout, din);
          }
        }
      });
}

Value convex_combine(const Value& e0, const Value& e1, const Value& e2,
                     const Value& beta) {
  require_same_shape(e0.value(), e1.value(), "convex_combine");
  require_same_shape(e0.value(), e2.value(), "convex_combine");
  const std::size_t n = e0.rows(), c = e0.cols();
  require(beta.rows() == n && beta.cols() == 3, "convex_combine: beta must be N x 3");
  const Tensor& b = beta.value();
  Tensor out(matrix_shape(n, c));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double a0 = e0.value()[i * c + j];
      const double a1 = e1.value()[i * c + j];
      const double a2 = e2.value()[i * c + j];
      const double v = b[i * 3] * a0 + b[i * 3 + 1] * a1 + b[i * 3 + 2] * a2;
      out[i * c + j] = std::clamp(v, std::min({a0, a1, a2}), std::max({a0, a1, a2}));
    }
  }
  return Value::from_op("convex_combine", std::move(out), {e0, e1, e2, beta},
                        [n, c](Node& self) {
                          Node& pbeta = *self.parents[3];
                          for (std::size_t e = 0; e < 3; ++e) {
                            Node& pe = *self.parents[e];
                            if (pe.requires_grad) {
                              Tensor& g = pe.grad_buffer();
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                  g[i * c + j] += pbeta.value[i * 3 + e] * self.grad[i * c + j];
                            }
                            if (pbeta.requires_grad) {
                              Tensor& gb = pbeta.grad_buffer();
                              for (std::size_t i = 0; i < n; ++i) {
                                double acc = 0.0;
                                for (std::size_t j = 0; j < c; ++j)
                                  acc += self.grad[i * c + j] * pe.value[i * c + j];
                                gb[i * 3 + e] += acc;
                              }
                            }
                          }
                        });
}

}  // namespace mistere
