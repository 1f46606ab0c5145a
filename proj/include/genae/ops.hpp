#pragma once

// Elementwise, shape, reduction and matrix ops over Tensor<T>.

#include <Eigen/Core>

#include <cmath>
#include <random>

#include "genae/tensor.hpp"

namespace genae {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// ---------------------------------------------------------------------------
// Construction

template <class T>
Tensor<T> zeros(Shape s, bool requires_grad = false) {
  return Tensor<T>(std::move(s), T(0), requires_grad);
}

template <class T>
Tensor<T> full(Shape s, T v) {
  return Tensor<T>(std::move(s), v, false);
}

template <class T, class Rng>
Tensor<T> randn(Shape s, Rng& rng, T stddev = T(1), bool requires_grad = false) {
  std::normal_distribution<double> nd(0.0, static_cast<double>(stddev));
  std::vector<T> v(numel(s));
  for (auto& x : v) x = static_cast<T>(nd(rng));
  return Tensor<T>(std::move(s), std::move(v), requires_grad);
}

template <class T, class Rng>
Tensor<T> rand_uniform(Shape s, Rng& rng, T lo, T hi, bool requires_grad = false) {
  std::uniform_real_distribution<double> ud(static_cast<double>(lo), static_cast<double>(hi));
  std::vector<T> v(numel(s));
  for (auto& x : v) x = static_cast<T>(ud(rng));
  return Tensor<T>(std::move(s), std::move(v), requires_grad);
}

template <class T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.detach();
}

// ---------------------------------------------------------------------------
// Broadcasting binary ops (trailing-dimension rule)

namespace detail {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;  // per-dim strides into a and b (0 = broadcast)
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    p.out[i] = std::max(pa[i], pb[i]);
  }
  std::size_t ma = 1, mb = 1;
  for (std::size_t i = r; i-- > 0;) {
    p.sa[i] = pa[i] == 1 ? 0 : ma;
    p.sb[i] = pb[i] == 1 ? 0 : mb;
    ma *= pa[i];
    mb *= pb[i];
  }
  return p;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t r = p.out.size();
  if (r == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = p.out[r - 1];
  const std::size_t ia = p.sa[r - 1], ib = p.sb[r - 1];
  const std::size_t outer = numel(p.out) / std::max<std::size_t>(inner, 1);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0, o = 0;
  for (std::size_t k = 0; k < outer; ++k) {
    for (std::size_t j = 0; j < inner; ++j) fn(o + j, oa + j * ia, ob + j * ib);
    o += inner;
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.sa[d] * idx[d];
      ob -= p.sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

template <class T, class F, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA dfa, DB dfb) {
  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
    return make_op<T>(a.shape(), std::move(out), {a, b}, name, [dfa, dfb](Node<T>& self) {
      const T* xa = parent_data(self, 0);
      const T* xb = parent_data(self, 1);
      const T* g = self.grad.data();
      const std::size_t m = self.data.size();
      if (T* ga = parent_grad(self, 0))
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[i] * dfa(xa[i], xb[i], self.data[i]);
      if (T* gb = parent_grad(self, 1))
        for (std::size_t i = 0; i < m; ++i) gb[i] += g[i] * dfb(xa[i], xb[i], self.data[i]);
    });
  }
  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<T> out(numel(plan.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(pa[ia], pb[ib]); });
  return make_op<T>(plan.out, std::move(out), {a, b}, name, [plan, dfa, dfb](Node<T>& self) {
    const T* xa = parent_data(self, 0);
    const T* xb = parent_data(self, 1);
    const T* g = self.grad.data();
    const T* y = self.data.data();
    if (T* ga = parent_grad(self, 0))
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        ga[ia] += g[o] * dfa(xa[ia], xb[ib], y[o]);
      });
    if (T* gb = parent_grad(self, 1))
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gb[ib] += g[o] * dfb(xa[ia], xb[ib], y[o]);
      });
  });
}

template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D df, int saved = 0) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
  return make_op<T>(x.shape(), std::move(out), {x}, name, [df](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const T* xv = parent_data(self, 0);
    const T* g = self.grad.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += g[i] * df(xv[i], self.data[i]);
  }, saved);
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
                        [](T, T, T) { return T(1); });
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
                        [](T, T, T) { return T(-1); });
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
                        [](T x, T, T) { return x; });
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
                        [](T x, T y, T) { return -x / (y * y); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Unary ops

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}
template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
template <class T>
Tensor<T> neg(const Tensor<T>& x) { return scale(x, T(-1)); }
template <class T>
Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}
template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}
template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(x, "abs", [](T v) { return std::abs(v); },
                       [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}
template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                       [](T v, T) { return v > T(0) ? T(1) : T(0); });
}
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary(x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
                       [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}
// tanh-approximation GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      x, "gelu",
      [](T v) {
        const double u = c * (v + 0.044715 * v * v * v);
        return static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
      },
      [](T v, T) {
        const double u = c * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
        return static_cast<T>(0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      });
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double)

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0;
  for (T v : x.data()) s += v;
  return make_op<T>(Shape{}, {static_cast<T>(s)}, {x}, "sum", [](Node<T>& self) {
    if (T* gx = parent_grad(self, 0)) {
      const T g = self.grad[0];
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  double s = 0;
  for (T v : x.data()) s += v;
  return make_op<T>(Shape{}, {static_cast<T>(s / static_cast<double>(n))}, {x}, "mean", [n](Node<T>& self) {
    if (T* gx = parent_grad(self, 0)) {
      const T g = self.grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

// Frobenius norm; gradient is zero at the origin.
template <class T>
Tensor<T> norm(const Tensor<T>& x) {
  double s = 0;
  for (T v : x.data()) s += static_cast<double>(v) * v;
  const T nv = static_cast<T>(std::sqrt(s));
  return make_op<T>(Shape{}, {nv}, {x}, "norm", [](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    const T nrm = self.data[0];
    if (!gx || nrm == T(0)) return;
    const T* xv = parent_data(self, 0);
    const T g = self.grad[0] / nrm;
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) gx[i] += g * xv[i];
  });
}

// mean(|a - b|)
template <class T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("l1: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(abs(sub(a, b)));
}

// mean((a - b)^2)
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
  if (numel(s) != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(s));
  return make_op<T>(std::move(s), x.values(), {x}, "reshape", [](Node<T>& self) {
    if (T* gx = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(m * n);
  MatMap<T>(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)) =
      ConstMatMap<T>(x.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).transpose();
  return make_op<T>(Shape{n, m}, std::move(out), {x}, "transpose", [m, n](Node<T>& self) {
    if (T* gx = parent_grad(self, 0))
      MatMap<T>(gx, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) +=
          ConstMatMap<T>(self.grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)).transpose();
  });
}

// Concatenate rank-2 tensors along dim 0 (rows) or dim 1 (columns).
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t dim) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts)
    if (p.rank() != 2) throw std::invalid_argument("concat: rank-2 tensors required");
  const std::size_t rows0 = parts[0].dim(0), cols0 = parts[0].dim(1);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if ((dim == 0 && p.dim(1) != cols0) || (dim == 1 && p.dim(0) != rows0))
      throw std::invalid_argument("concat: mismatched extents");
    total += p.dim(dim);
  }
  Shape out_shape = dim == 0 ? Shape{total, cols0} : Shape{rows0, total};
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    if (dim == 0) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(off * cols0));
    } else {
      const std::size_t c = p.dim(1);
      for (std::size_t r = 0; r < rows0; ++r)
        std::copy_n(p.data().data() + r * c, c, out.data() + r * total + off);
    }
    off += p.dim(dim);
  }
  return make_op<T>(out_shape, std::move(out), parts, "concat", [dim, offsets, total, cols0, rows0](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      T* gp = parent_grad(self, i);
      if (!gp) continue;
      const Shape& ps = self.parents[i]->shape;
      if (dim == 0) {
        const T* src = self.grad.data() + offsets[i] * cols0;
        for (std::size_t k = 0; k < ps[0] * ps[1]; ++k) gp[k] += src[k];
      } else {
        for (std::size_t r = 0; r < rows0; ++r)
          for (std::size_t c = 0; c < ps[1]; ++c) gp[r * ps[1] + c] += self.grad[r * total + offsets[i] + c];
      }
    }
  });
}

// Contiguous sub-range [start, start+len) along one dim of a rank-1 or rank-2 tensor.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t dim, std::size_t start, std::size_t len) {
  if (x.rank() == 1) {
    if (dim != 0 || start + len > x.dim(0)) throw std::invalid_argument("slice: out of range");
    std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(start),
                       x.data().begin() + static_cast<std::ptrdiff_t>(start + len));
    return make_op<T>(Shape{len}, std::move(out), {x}, "slice", [start, len](Node<T>& self) {
      if (T* gx = parent_grad(self, 0))
        for (std::size_t i = 0; i < len; ++i) gx[start + i] += self.grad[i];
    });
  }
  if (x.rank() != 2 || dim > 1 || start + len > x.dim(dim))
    throw std::invalid_argument("slice: out of range for " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t orows = dim == 0 ? len : rows, ocols = dim == 1 ? len : cols;
  std::vector<T> out(orows * ocols);
  const std::size_t r0 = dim == 0 ? start : 0, c0 = dim == 1 ? start : 0;
  for (std::size_t r = 0; r < orows; ++r)
    std::copy_n(x.data().data() + (r + r0) * cols + c0, ocols, out.data() + r * ocols);
  return make_op<T>(Shape{orows, ocols}, std::move(out), {x}, "slice", [=](Node<T>& self) {
    if (T* gx = parent_grad(self, 0))
      for (std::size_t r = 0; r < orows; ++r)
        for (std::size_t c = 0; c < ocols; ++c) gx[(r + r0) * cols + c0 + c] += self.grad[r * ocols + c];
  });
}

// Rows of a [N, D] table selected by index; gradient scatter-adds into the table.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<std::size_t> idx) {
  if (table.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 table required");
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<T> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(table.data().data() + idx[i] * d, d, out.data() + i * d);
  }
  const std::size_t rows = idx.size();
  return make_op<T>(Shape{rows, d}, std::move(out), {table}, "gather_rows", [idx = std::move(idx), d](Node<T>& self) {
    if (T* gt = parent_grad(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += self.grad[i * d + j];
  });
}

// ---------------------------------------------------------------------------
// Matrix products

// C[m,n] (+)= op(A) op(B) on raw row-major buffers, with MAC accounting.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate,
          bool trans_a = false, bool trans_b = false) {
  using Idx = Eigen::Index;
  const Idx M = static_cast<Idx>(m), K = static_cast<Idx>(k), N = static_cast<Idx>(n);
  MatMap<T> C(c, M, N);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (!trans_a && !trans_b) run(ConstMatMap<T>(a, M, K), ConstMatMap<T>(b, K, N));
  if (!trans_a && trans_b) run(ConstMatMap<T>(a, M, K), ConstMatMap<T>(b, N, K).transpose());
  if (trans_a && !trans_b) run(ConstMatMap<T>(a, K, M).transpose(), ConstMatMap<T>(b, K, N));
  if (trans_a && trans_b) run(ConstMatMap<T>(a, K, M).transpose(), ConstMatMap<T>(b, N, K).transpose());
  count_macs(static_cast<std::uint64_t>(m) * k * n);
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_op<T>(Shape{m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node<T>& self) {
    const T* g = self.grad.data();
    detail::NoCount guard;
    if (T* ga = parent_grad(self, 0)) gemm(g, parent_data(self, 1), ga, m, n, k, true, false, true);
    if (T* gb = parent_grad(self, 1)) gemm(parent_data(self, 0), g, gb, k, m, n, true, true, false);
  });
}

// x[T, in] . W[in, out] + b[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  auto y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

// Inverted dropout; identity when p == 0 or not training.
template <class T, class Rng>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng* rng) {
  if (p <= T(0) || rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  std::vector<T> mask(x.numel());
  const T s = T(1) / (T(1) - p);
  for (auto& m : mask) m = keep(*rng) ? s : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace genae
