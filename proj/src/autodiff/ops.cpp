#include "nff/autodiff/ops.hpp"

#include <cmath>
#include <memory>

#include "conv_impl.hpp"
#include "nff/simd/kernels.hpp"

namespace nff::ad {
namespace {

template <typename T>
void require_same(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) contract_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void accumulate(Graph<T>& g, std::size_t id, const Tensor<T>& delta) {
  if (!g.requires_grad(id)) return;
  auto& dst = g.grad_of(id);
  simd::axpy(T(1), delta.data(), dst.data(), dst.size());
}

// y = f(x); dy/dx = df(x, y)
template <typename T, typename F, typename DF>
Var<T> unary(const char* name, Var<T> x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return x.graph().record(name, std::move(out), {x}, [xi, df](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    const auto& xv = g.value(xi);
    const auto& yv = g.value(self);
    auto& gx = g.grad_of(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

// Splits a shape around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) contract_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
void require_nhwc(const char* op, const Var<T>& x) {
  if (x.shape().size() != 4) contract_fail(op, "expected NHWC tensor, got " + shape_str(x.shape()));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same("add", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record("add", std::move(out), {a, b}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    accumulate(g, ai, gy);
    accumulate(g, bi, gy);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same("sub", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record("sub", std::move(out), {a, b}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    accumulate(g, ai, gy);
    if (g.requires_grad(bi)) {
      auto& gb = g.grad_of(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same("mul", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record("mul", std::move(out), {a, b}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    if (g.requires_grad(ai)) {
      auto& ga = g.grad_of(ai);
      const auto& bv = g.value(bi);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bi)) {
      auto& gb = g.grad_of(bi);
      const auto& av = g.value(ai);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  require_same("div", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record("div", std::move(out), {a, b}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    const auto& bv = g.value(bi);
    if (g.requires_grad(ai)) {
      auto& ga = g.grad_of(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] / bv[i];
    }
    if (g.requires_grad(bi)) {
      auto& gb = g.grad_of(bi);
      const auto& yv = g.value(self);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i] * yv[i] / bv[i];
    }
  });
}

template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  require_same("maximum", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], b.value()[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record("maximum", std::move(out), {a, b}, [ai, bi](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    const auto& av = g.value(ai);
    const auto& bv = g.value(bi);
    const bool da = g.requires_grad(ai), db = g.requires_grad(bi);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (av[i] >= bv[i]) {
        if (da) g.grad_of(ai)[i] += gy[i];
      } else if (db) {
        g.grad_of(bi)[i] += gy[i];
      }
    }
  });
}

template <typename T>
Var<T> neg(Var<T> x) {
  return scale(x, T(-1));
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  return unary<T>("scale", x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary<T>("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> x) {
  for (T v : x.value().values()) {
    if (!(v > T(0))) contract_fail("log", "non-positive input " + std::to_string(double(v)));
  }
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> sin(Var<T> x) {
  return unary<T>("sin", x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Var<T> cos(Var<T> x) {
  return unary<T>("cos", x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    contract_fail("matmul", "incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  detail::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data(), false);
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record("matmul", std::move(out), {a, b}, [ai, bi, m, n, k](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    if (g.requires_grad(ai)) {
      detail::gemm_nt(m, k, n, gy.data(), g.value(bi).data(), g.grad_of(ai).data(), true);
    }
    if (g.requires_grad(bi)) {
      detail::gemm_tn(k, n, m, g.value(ai).data(), gy.data(), g.grad_of(bi).data(), true);
    }
  });
}

template <typename T>
Var<T> bias_add(Var<T> x, Var<T> b) {
  const auto& xs = x.shape();
  if (b.shape().size() != 1 || xs.back() != b.shape()[0]) {
    contract_fail("bias_add", "bias " + shape_str(b.shape()) + " does not match last axis of " + shape_str(xs));
  }
  const std::size_t c = b.shape()[0];
  Tensor<T> out = x.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  const std::size_t xi = x.id(), bi = b.id();
  return x.graph().record("bias_add", std::move(out), {x, b}, [xi, bi, c](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    accumulate(g, xi, gy);
    if (g.requires_grad(bi)) {
      auto& gb = g.grad_of(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % c] += gy[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x, std::size_t axis) {
  const auto sp = split_axis("sum", x.shape(), axis);
  Shape os = x.shape();
  os.erase(os.begin() + long(axis));
  if (os.empty()) os = {1};
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.n; ++j) {
      const T* src = xv.data() + (o * sp.n + j) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const std::size_t xi = x.id();
  return x.graph().record("sum", std::move(out), {x}, [xi, sp](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(xi);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.n; ++j) {
        T* dst = gx.data() + (o * sp.n + j) * sp.inner;
        const T* src = gy.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> mean(Var<T> x, std::size_t axis) {
  const std::size_t n = split_axis("mean", x.shape(), axis).n;
  return scale(sum(x, axis), T(1) / T(n));
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  T s = 0;
  for (T v : x.value().values()) s += v;
  const std::size_t xi = x.id();
  return x.graph().record("sum_all", Tensor<T>({1}, std::vector<T>{s}), {x}, [xi](Graph<T>& g, std::size_t self) {
    const T gy = g.grad_of(self)[0];
    auto& gx = g.grad_of(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
  });
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  return scale(sum_all(x), T(1) / T(x.size()));
}

template <typename T>
Var<T> cumprod(Var<T> x, std::size_t axis, bool exclusive) {
  const auto sp = split_axis("cumprod", x.shape(), axis);
  const auto& xv = x.value();
  // Log-space when every factor is safely positive; otherwise plain running products.
  bool log_space = true;
  for (T v : xv.values()) log_space = log_space && v > T(1e-12);

  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
      if (log_space) {
        T acc = 0;
        for (std::size_t j = 0; j < sp.n; ++j) {
          if (exclusive) {
            out[at(j)] = std::exp(acc);
            acc += std::log(xv[at(j)]);
          } else {
            acc += std::log(xv[at(j)]);
            out[at(j)] = std::exp(acc);
          }
        }
      } else {
        T acc = 1;
        for (std::size_t j = 0; j < sp.n; ++j) {
          if (exclusive) {
            out[at(j)] = acc;
            acc *= xv[at(j)];
          } else {
            acc *= xv[at(j)];
            out[at(j)] = acc;
          }
        }
      }
    }
  }
  const std::size_t xi = x.id();
  return x.graph().record("cumprod", std::move(out), {x}, [xi, sp, exclusive, log_space](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    const auto& yv = g.value(self);
    const auto& xv = g.value(xi);
    auto& gx = g.grad_of(xi);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
        if (log_space) {
          // dL/dx_k = (sum over outputs containing x_k of g_j y_j) / x_k
          T suffix = 0;
          for (std::size_t k = sp.n; k-- > 0;) {
            if (!exclusive) suffix += gy[at(k)] * yv[at(k)];
            gx[at(k)] += suffix / xv[at(k)];
            if (exclusive) suffix += gy[at(k)] * yv[at(k)];
          }
        } else {
          // Division-free: dL/dx_k = prefix(k) * S_k with S_k accumulated from the back.
          T s = 0;
          for (std::size_t k = sp.n; k-- > 0;) {
            T prefix;
            if (exclusive) {
              prefix = yv[at(k)];
              gx[at(k)] += prefix * s;
              s = gy[at(k)] + xv[at(k)] * s;
            } else {
              s = gy[at(k)] + (k + 1 < sp.n ? xv[at(k + 1)] * s : T(0));
              prefix = k > 0 ? yv[at(k - 1)] : T(1);
              gx[at(k)] += prefix * s;
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) contract_fail("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  std::vector<AxisSplit> splits;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) contract_fail("concat", "rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != s0[d]) contract_fail("concat", "shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    }
    splits.push_back(split_axis("concat", s, axis));
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  Tensor<T> out(os);
  const std::size_t outer = splits[0].outer, inner = splits[0].inner;
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    const std::size_t n = splits[p].n;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * n * inner, n * inner, out.data() + (o * total + off) * inner);
    }
    ids.push_back(parts[p].id());
    offsets.push_back(off);
    off += n;
  }
  return parts[0].graph().record(
      "concat", std::move(out), parts, [ids, offsets, splits, outer, inner, total](Graph<T>& g, std::size_t self) {
        const auto& gy = g.grad_of(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!g.requires_grad(ids[p])) continue;
          auto& gx = g.grad_of(ids[p]);
          const std::size_t n = splits[p].n;
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = gy.data() + (o * total + offsets[p]) * inner;
            T* dst = gx.data() + o * n * inner;
            for (std::size_t i = 0; i < n * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    contract_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out = x.value();
  out.reshape(std::move(shape));
  const std::size_t xi = x.id();
  return x.graph().record("reshape", std::move(out), {x}, [xi](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Var<T> repeat_last(Var<T> x, std::size_t n) {
  if (x.shape().back() != 1) contract_fail("repeat_last", "last axis must be 1, got " + shape_str(x.shape()));
  Shape os = x.shape();
  os.back() = n;
  Tensor<T> out(os);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < xv.size(); ++r) std::fill_n(out.data() + r * n, n, xv[r]);
  const std::size_t xi = x.id();
  return x.graph().record("repeat_last", std::move(out), {x}, [xi, n](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(xi);
    for (std::size_t r = 0; r < gx.size(); ++r) {
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) s += gy[r * n + j];
      gx[r] += s;
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> rows) {
  if (x.shape().size() != 2) contract_fail("gather_rows", "expected 2-D input, got " + shape_str(x.shape()));
  if (rows.empty()) contract_fail("gather_rows", "empty row set");
  const std::size_t r_in = x.shape()[0], c = x.shape()[1];
  Tensor<T> out({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= r_in) contract_fail("gather_rows", "row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(x.value().data() + rows[r] * c, c, out.data() + r * c);
  }
  const std::size_t xi = x.id();
  return x.graph().record("gather_rows", std::move(out), {x},
                          [xi, rows = std::move(rows), c](Graph<T>& g, std::size_t self) {
                            const auto& gy = g.grad_of(self);
                            auto& gx = g.grad_of(xi);
                            for (std::size_t r = 0; r < rows.size(); ++r) {
                              for (std::size_t j = 0; j < c; ++j) gx[rows[r] * c + j] += gy[r * c + j];
                            }
                          });
}

template <typename T>
Var<T> scatter_rows(Var<T> x, std::vector<std::size_t> rows, std::size_t total_rows) {
  if (x.shape().size() != 2 || x.shape()[0] != rows.size()) {
    contract_fail("scatter_rows", "input " + shape_str(x.shape()) + " does not match " + std::to_string(rows.size()) + " rows");
  }
  const std::size_t c = x.shape()[1];
  Tensor<T> out({total_rows, c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= total_rows) contract_fail("scatter_rows", "row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(x.value().data() + r * c, c, out.data() + rows[r] * c);
  }
  const std::size_t xi = x.id();
  return x.graph().record("scatter_rows", std::move(out), {x},
                          [xi, rows = std::move(rows), c](Graph<T>& g, std::size_t self) {
                            const auto& gy = g.grad_of(self);
                            auto& gx = g.grad_of(xi);
                            for (std::size_t r = 0; r < rows.size(); ++r) {
                              for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += gy[rows[r] * c + j];
                            }
                          });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride) {
  require_nhwc("conv2d", x);
  if (stride != 1 && stride != 2) contract_fail("conv2d", "stride must be 1 or 2");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != xs[3]) {
    contract_fail("conv2d", "weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  const std::size_t cout = ws[3];
  if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != cout)) {
    contract_fail("conv2d", "bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) + " channels");
  }
  detail::ConvGeom geo{xs[0], xs[1], xs[2], xs[3], detail::conv_out(xs[1], stride), detail::conv_out(xs[2], stride),
                       stride};
  auto cols = std::make_shared<std::vector<T>>(geo.rows() * geo.patch());
  detail::im2col(x.value().data(), geo, cols->data());
  Tensor<T> out({geo.n, geo.ho, geo.wo, cout});
  detail::gemm_nn(geo.rows(), cout, geo.patch(), cols->data(), weight.value().data(), out.data(), false);
  if (bias.valid()) {
    const auto& bv = bias.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % cout];
  }
  // The patches are only needed again for the weight gradient.
  if (!weight.requires_grad()) cols.reset();
  std::vector<Var<T>> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  const std::size_t xi = x.id(), wi = weight.id();
  const long bi = bias.valid() ? long(bias.id()) : -1;
  return x.graph().record("conv2d", std::move(out), inputs, [=](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    if (g.requires_grad(xi)) {
      std::vector<T> dcols(geo.rows() * geo.patch());
      detail::gemm_nt(geo.rows(), geo.patch(), cout, gy.data(), g.value(wi).data(), dcols.data(), false);
      detail::col2im_add(dcols.data(), geo, g.grad_of(xi).data());
    }
    if (g.requires_grad(wi)) {
      detail::gemm_tn(geo.patch(), cout, geo.rows(), cols->data(), gy.data(), g.grad_of(wi).data(), true);
    }
    if (bi >= 0 && g.requires_grad(std::size_t(bi))) {
      auto& gb = g.grad_of(std::size_t(bi));
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % cout] += gy[i];
    }
  });
}

template <typename T>
Var<T> conv2d_transpose(Var<T> gin, Var<T> weight, std::size_t stride, std::size_t out_h, std::size_t out_w) {
  require_nhwc("conv2d_transpose", gin);
  const auto& gs = gin.shape();
  const auto& ws = weight.shape();
  if (ws.size() != 4 || ws[0] != 3 || ws[1] != 3 || ws[3] != gs[3]) {
    contract_fail("conv2d_transpose", "weight " + shape_str(ws) + " incompatible with input " + shape_str(gs));
  }
  if (detail::conv_out(out_h, stride) != gs[1] || detail::conv_out(out_w, stride) != gs[2]) {
    contract_fail("conv2d_transpose", "output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                          " inconsistent with input " + shape_str(gs));
  }
  const std::size_t cin = ws[2], cout = ws[3];
  detail::ConvGeom geo{gs[0], out_h, out_w, cin, gs[1], gs[2], stride};
  std::vector<T> cols(geo.rows() * geo.patch());
  detail::gemm_nt(geo.rows(), geo.patch(), cout, gin.value().data(), weight.value().data(), cols.data(), false);
  Tensor<T> out({geo.n, out_h, out_w, cin});
  detail::col2im_add(cols.data(), geo, out.data());
  const std::size_t gi = gin.id(), wi = weight.id();
  return gin.graph().record("conv2d_transpose", std::move(out), {gin, weight}, [=](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    std::vector<T> dcols(geo.rows() * geo.patch());
    detail::im2col(gy.data(), geo, dcols.data());
    if (g.requires_grad(gi)) {
      detail::gemm_nn(geo.rows(), cout, geo.patch(), dcols.data(), g.value(wi).data(), g.grad_of(gi).data(), true);
    }
    if (g.requires_grad(wi)) {
      detail::gemm_tn(geo.patch(), cout, geo.rows(), dcols.data(), g.value(gi).data(), g.grad_of(wi).data(), true);
    }
  });
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  require_nhwc("upsample_nearest2x", x);
  const auto s = x.shape();
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
  Tensor<T> out({n, 2 * h, 2 * w, c});
  const auto& xv = x.value();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        std::copy_n(xv.data() + ((b * h + y / 2) * w + xx / 2) * c, c, out.data() + ((b * 2 * h + y) * 2 * w + xx) * c);
  const std::size_t xi = x.id();
  return x.graph().record("upsample_nearest2x", std::move(out), {x}, [=](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(xi);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) {
          const T* src = gy.data() + ((b * 2 * h + y) * 2 * w + xx) * c;
          T* dst = gx.data() + ((b * h + y / 2) * w + xx / 2) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
  });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

// Output index o samples input coordinate (o + 0.5) / 2 - 0.5, clamped at the borders.
std::vector<Tap> bilinear_taps(std::size_t in) {
  std::vector<Tap> taps(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    const double src = (double(o) + 0.5) / 2.0 - 0.5;
    const double fl = std::floor(src);
    const double frac = src - fl;
    const long a = long(fl), b = a + 1;
    auto clamp = [in](long v) { return std::size_t(std::clamp<long>(v, 0, long(in) - 1)); };
    taps[o] = Tap{clamp(a), clamp(b), 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear2x(Var<T> x) {
  require_nhwc("upsample_bilinear2x", x);
  const auto s = x.shape();
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
  const auto ty = bilinear_taps(h);
  const auto tx = bilinear_taps(w);
  Tensor<T> out({n, 2 * h, 2 * w, c});
  const auto& xv = x.value();
  auto px = [&](std::size_t b, std::size_t y, std::size_t xx) { return ((b * h + y) * w + xx) * c; };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        T* dst = out.data() + ((b * 2 * h + y) * 2 * w + xx) * c;
        const Tap& a = ty[y];
        const Tap& bb = tx[xx];
        const T w00 = T(a.w0 * bb.w0), w01 = T(a.w0 * bb.w1), w10 = T(a.w1 * bb.w0), w11 = T(a.w1 * bb.w1);
        const T* p00 = xv.data() + px(b, a.i0, bb.i0);
        const T* p01 = xv.data() + px(b, a.i0, bb.i1);
        const T* p10 = xv.data() + px(b, a.i1, bb.i0);
        const T* p11 = xv.data() + px(b, a.i1, bb.i1);
        for (std::size_t k = 0; k < c; ++k) dst[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
      }
  const std::size_t xi = x.id();
  return x.graph().record("upsample_bilinear2x", std::move(out), {x}, [=](Graph<T>& g, std::size_t self) {
    const auto& gy = g.grad_of(self);
    auto& gx = g.grad_of(xi);
    auto pxi = [&](std::size_t b, std::size_t y, std::size_t xx) { return ((b * h + y) * w + xx) * c; };
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) {
          const T* src = gy.data() + ((b * 2 * h + y) * 2 * w + xx) * c;
          const Tap& a = ty[y];
          const Tap& bb = tx[xx];
          const T w00 = T(a.w0 * bb.w0), w01 = T(a.w0 * bb.w1), w10 = T(a.w1 * bb.w0), w11 = T(a.w1 * bb.w1);
          T* p00 = gx.data() + pxi(b, a.i0, bb.i0);
          T* p01 = gx.data() + pxi(b, a.i0, bb.i1);
          T* p10 = gx.data() + pxi(b, a.i1, bb.i0);
          T* p11 = gx.data() + pxi(b, a.i1, bb.i1);
          for (std::size_t k = 0; k < c; ++k) {
            p00[k] += w00 * src[k];
            p01[k] += w01 * src[k];
            p10[k] += w10 * src[k];
            p11[k] += w11 * src[k];
          }
        }
  });
}

#define NFF_INSTANTIATE_OPS(T)                                                                           \
  template Var<T> add(Var<T>, Var<T>);                                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                                   \
  template Var<T> div(Var<T>, Var<T>);                                                                   \
  template Var<T> maximum(Var<T>, Var<T>);                                                               \
  template Var<T> neg(Var<T>);                                                                           \
  template Var<T> scale(Var<T>, T);                                                                      \
  template Var<T> add_scalar(Var<T>, T);                                                                 \
  template Var<T> square(Var<T>);                                                                        \
  template Var<T> exp(Var<T>);                                                                           \
  template Var<T> log(Var<T>);                                                                           \
  template Var<T> sin(Var<T>);                                                                           \
  template Var<T> cos(Var<T>);                                                                           \
  template Var<T> sigmoid(Var<T>);                                                                       \
  template Var<T> relu(Var<T>);                                                                          \
  template Var<T> leaky_relu(Var<T>, T);                                                                 \
  template Var<T> softplus(Var<T>);                                                                      \
  template Var<T> matmul(Var<T>, Var<T>);                                                                \
  template Var<T> bias_add(Var<T>, Var<T>);                                                              \
  template Var<T> sum(Var<T>, std::size_t);                                                              \
  template Var<T> mean(Var<T>, std::size_t);                                                             \
  template Var<T> sum_all(Var<T>);                                                                       \
  template Var<T> mean_all(Var<T>);                                                                      \
  template Var<T> cumprod(Var<T>, std::size_t, bool);                                                    \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                       \
  template Var<T> reshape(Var<T>, Shape);                                                                \
  template Var<T> repeat_last(Var<T>, std::size_t);                                                      \
  template Var<T> gather_rows(Var<T>, std::vector<std::size_t>);                                         \
  template Var<T> scatter_rows(Var<T>, std::vector<std::size_t>, std::size_t);                           \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t);                                           \
  template Var<T> conv2d_transpose(Var<T>, Var<T>, std::size_t, std::size_t, std::size_t);               \
  template Var<T> upsample_nearest2x(Var<T>);                                                            \
  template Var<T> upsample_bilinear2x(Var<T>);

NFF_INSTANTIATE_OPS(float)
NFF_INSTANTIATE_OPS(double)

}  // namespace nff::ad
