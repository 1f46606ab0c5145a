#pragma once

// Sequence ops on [T, D] tensors: normalization, rotary positions and blocked
// (non-overlapping window) multi-head attention.

#include <cmath>
#include <limits>

#include "genae/ops.hpp"

namespace genae {

// Layer norm over the last dim without affine parameters.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  if (x.rank() != 2) throw std::invalid_argument("layer_norm: [T, D] tensor required");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  std::vector<T> out(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    double m = 0, v = 0;
    for (std::size_t j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= static_cast<double>(d);
    inv_std[r] = static_cast<T>(1.0 / std::sqrt(v + eps));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<T>((xr[j] - m) * inv_std[r]);
  }
  return make_op<T>(x.shape(), std::move(out), {x}, "layer_norm", [rows, d, inv_std](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T mg = 0, mgy = 0;
      for (std::size_t j = 0; j < d; ++j) {
        mg += g[j];
        mgy += g[j] * y[j];
      }
      mg /= static_cast<T>(d);
      mgy /= static_cast<T>(d);
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv_std[r] * (g[j] - mg - y[j] * mgy);
    }
  }, 1);
}

// Per-head L2 normalization of [T, heads * head_dim]: y = x / (||x|| + eps).
template <class T>
Tensor<T> head_l2norm(const Tensor<T>& x, std::size_t heads, T eps = T(1e-6)) {
  if (x.rank() != 2 || x.dim(1) % heads != 0) throw std::invalid_argument("head_l2norm: dim not divisible by heads");
  const std::size_t rows = x.dim(0), d = x.dim(1), hd = d / heads;
  std::vector<T> out(x.numel()), norms(rows * heads);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < heads; ++h) {
      const T* xs = x.data().data() + r * d + h * hd;
      double s = 0;
      for (std::size_t j = 0; j < hd; ++j) s += static_cast<double>(xs[j]) * xs[j];
      norms[r * heads + h] = static_cast<T>(std::sqrt(s));
      const T n = norms[r * heads + h] + eps;
      for (std::size_t j = 0; j < hd; ++j) out[r * d + h * hd + j] = xs[j] / n;
    }
  return make_op<T>(x.shape(), std::move(out), {x}, "head_l2norm", [rows, d, hd, heads, eps, norms](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t o = r * d + h * hd;
        const T* g = self.grad.data() + o;
        const T* xv = parent_data(self, 0) + o;
        const T s = norms[r * heads + h];
        const T n = s + eps;
        T dot = 0;
        for (std::size_t j = 0; j < hd; ++j) dot += g[j] * xv[j];
        const T c = s > T(0) ? dot / (n * n * s) : T(0);
        for (std::size_t j = 0; j < hd; ++j) gx[o + j] += g[j] / n - xv[j] * c;
      }
  });
}

// Rotary position embedding on [T, heads * head_dim]; pairs (i, i + head_dim/2)
// rotate by pos * base^(-2i/head_dim) with absolute positions offset + t.
template <class T>
Tensor<T> rope(const Tensor<T>& x, std::size_t heads, double base = 10000.0, std::size_t offset = 0) {
  if (x.rank() != 2 || x.dim(1) % heads != 0) throw std::invalid_argument("rope: dim not divisible by heads");
  const std::size_t rows = x.dim(0), d = x.dim(1), hd = d / heads, half = hd / 2;
  if (hd % 2 != 0) throw std::invalid_argument("rope: head dim must be even");
  std::vector<T> cs(rows * half), sn(rows * half);
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t i = 0; i < half; ++i) {
      const double ang = static_cast<double>(t + offset) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      cs[t * half + i] = static_cast<T>(std::cos(ang));
      sn[t * half + i] = static_cast<T>(std::sin(ang));
    }
  auto rotate = [=](const T* in, T* out, bool inverse, bool accumulate) {
    for (std::size_t t = 0; t < rows; ++t)
      for (std::size_t h = 0; h < heads; ++h) {
        const T* a = in + t * d + h * hd;
        T* o = out + t * d + h * hd;
        for (std::size_t i = 0; i < half; ++i) {
          const T c = cs[t * half + i];
          const T s = inverse ? -sn[t * half + i] : sn[t * half + i];
          const T u = a[i] * c - a[i + half] * s;
          const T v = a[i] * s + a[i + half] * c;
          if (accumulate) {
            o[i] += u;
            o[i + half] += v;
          } else {
            o[i] = u;
            o[i + half] = v;
          }
        }
      }
  };
  std::vector<T> out(x.numel());
  rotate(x.data().data(), out.data(), false, false);
  return make_op<T>(x.shape(), std::move(out), {x}, "rope", [rotate](Node<T>& self) {
    if (T* gx = parent_grad(self, 0)) rotate(self.grad.data(), gx, true, true);
  });
}

// softmax(q k^T / sqrt(head_dim)) v inside non-overlapping windows of `window`
// frames; the last window may be partial. q, k, v: [T, heads * head_dim].
template <class T>
Tensor<T> window_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                           std::size_t window) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument("window_attention: q, k, v must share a [T, D] shape");
  if (q.dim(1) % heads != 0 || window == 0) throw std::invalid_argument("window_attention: bad heads/window");
  const std::size_t rows = q.dim(0), d = q.dim(1), hd = d / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
  const std::size_t nwin = (rows + window - 1) / window;
  // Attention probabilities per (window, head): w x w, stored densely.
  std::vector<T> probs(nwin * heads * window * window, T(0));
  std::vector<T> out(rows * d, T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  std::uint64_t macs = 0;
  for (std::size_t wi = 0; wi < nwin; ++wi) {
    const std::size_t t0 = wi * window, w = std::min(window, rows - t0);
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (wi * heads + h) * window * window;
      for (std::size_t i = 0; i < w; ++i) {
        const T* qi = qd + (t0 + i) * d + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < w; ++j) {
          const T* kj = kd + (t0 + j) * d + h * hd;
          T s = 0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          p[i * window + j] = s * scale;
          mx = std::max(mx, p[i * window + j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < w; ++j) {
          p[i * window + j] = std::exp(p[i * window + j] - mx);
          z += p[i * window + j];
        }
        T* oi = out.data() + (t0 + i) * d + h * hd;
        for (std::size_t j = 0; j < w; ++j) {
          p[i * window + j] /= z;
          const T* vj = vd + (t0 + j) * d + h * hd;
          const T pij = p[i * window + j];
          for (std::size_t c = 0; c < hd; ++c) oi[c] += pij * vj[c];
        }
      }
      macs += 2ull * w * w * hd;
    }
  }
  count_macs(macs);
  if (!grad_enabled() || !(q.requires_grad() || k.requires_grad() || v.requires_grad())) probs.clear();
  return make_op<T>(q.shape(), std::move(out), {q, k, v}, "window_attention",
                    [=, probs = std::move(probs)](Node<T>& self) {
                      const T* qv = parent_data(self, 0);
                      const T* kv = parent_data(self, 1);
                      const T* vv = parent_data(self, 2);
                      T* gq = parent_grad(self, 0);
                      T* gk = parent_grad(self, 1);
                      T* gv = parent_grad(self, 2);
                      const T* go = self.grad.data();
                      std::vector<T> dp(window);
                      for (std::size_t wi = 0; wi < nwin; ++wi) {
                        const std::size_t t0 = wi * window, w = std::min(window, rows - t0);
                        for (std::size_t h = 0; h < heads; ++h) {
                          const T* p = probs.data() + (wi * heads + h) * window * window;
                          for (std::size_t i = 0; i < w; ++i) {
                            const T* goi = go + (t0 + i) * d + h * hd;
                            T rowdot = 0;
                            for (std::size_t j = 0; j < w; ++j) {
                              const T* vj = vv + (t0 + j) * d + h * hd;
                              T s = 0;
                              for (std::size_t c = 0; c < hd; ++c) s += goi[c] * vj[c];
                              dp[j] = s;
                              rowdot += s * p[i * window + j];
                              if (gv) {
                                T* gvj = gv + (t0 + j) * d + h * hd;
                                const T pij = p[i * window + j];
                                for (std::size_t c = 0; c < hd; ++c) gvj[c] += pij * goi[c];
                              }
                            }
                            for (std::size_t j = 0; j < w; ++j) {
                              const T ds = p[i * window + j] * (dp[j] - rowdot) * scale;
                              if (gq) {
                                T* gqi = gq + (t0 + i) * d + h * hd;
                                const T* kj = kv + (t0 + j) * d + h * hd;
                                for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                              }
                              if (gk) {
                                T* gkj = gk + (t0 + j) * d + h * hd;
                                const T* qi = qv + (t0 + i) * d + h * hd;
                                for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                              }
                            }
                          }
                        }
                      }
                    },
                    1);
}

// Attention probabilities for inspection (no tape): [windows, heads, w, w] flattened.
template <class T>
std::vector<T> window_attention_probs(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads, std::size_t window) {
  const std::size_t rows = q.dim(0), d = q.dim(1), hd = d / heads;
  const T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
  const std::size_t nwin = (rows + window - 1) / window;
  std::vector<T> probs(nwin * heads * window * window, T(0));
  for (std::size_t wi = 0; wi < nwin; ++wi) {
    const std::size_t t0 = wi * window, w = std::min(window, rows - t0);
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (wi * heads + h) * window * window;
      for (std::size_t i = 0; i < w; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < w; ++j) {
          T s = 0;
          for (std::size_t c = 0; c < hd; ++c) s += q.data()[(t0 + i) * d + h * hd + c] * k.data()[(t0 + j) * d + h * hd + c];
          p[i * window + j] = s * scale;
          mx = std::max(mx, p[i * window + j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < w; ++j) z += (p[i * window + j] = std::exp(p[i * window + j] - mx));
        for (std::size_t j = 0; j < w; ++j) p[i * window + j] /= z;
      }
    }
  }
  return probs;
}

}  // namespace genae
