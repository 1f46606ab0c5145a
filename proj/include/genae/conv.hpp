#pragma once

// 1-D convolution kernels on channel-major [C, L] tensors.

#include <algorithm>

#include "genae/ops.hpp"

namespace genae {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  std::size_t groups = 1;  // 1 (dense) or C_in == C_out (depthwise)
};

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, const ConvGeometry& g) {
  const std::size_t span = g.dilation * (kernel - 1) + 1;
  const std::size_t padded = length + g.pad_left + g.pad_right;
  if (padded < span) return 0;
  return (padded - span) / g.stride + 1;
}

namespace detail {

// Output positions per im2col tile; keeps the column buffer around 1M values.
inline std::size_t conv_tile(std::size_t rows, std::size_t total) {
  const std::size_t t = std::max<std::size_t>(64, (std::size_t{1} << 20) / std::max<std::size_t>(rows, 1));
  return std::min(t, std::max<std::size_t>(total, 1));
}

template <class T>
void im2col(const T* x, std::size_t cin, std::size_t len, std::size_t kernel, const ConvGeometry& g,
            std::size_t t0, std::size_t nt, T* col) {
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const T* xc = x + ci * len;
    for (std::size_t k = 0; k < kernel; ++k) {
      T* row = col + (ci * kernel + k) * nt;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k * g.dilation) - static_cast<std::ptrdiff_t>(g.pad_left);
      for (std::size_t j = 0; j < nt; ++j) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>((t0 + j) * g.stride) + off;
        row[j] = (p >= 0 && p < static_cast<std::ptrdiff_t>(len)) ? xc[p] : T(0);
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t cin, std::size_t len, std::size_t kernel, const ConvGeometry& g,
            std::size_t t0, std::size_t nt, T* dx) {
  for (std::size_t ci = 0; ci < cin; ++ci) {
    T* dxc = dx + ci * len;
    for (std::size_t k = 0; k < kernel; ++k) {
      const T* row = col + (ci * kernel + k) * nt;
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k * g.dilation) - static_cast<std::ptrdiff_t>(g.pad_left);
      for (std::size_t j = 0; j < nt; ++j) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>((t0 + j) * g.stride) + off;
        if (p >= 0 && p < static_cast<std::ptrdiff_t>(len)) dxc[p] += row[j];
      }
    }
  }
}

}  // namespace detail

// x[C_in, L] * w[C_out, C_in / groups, K] (+ b[C_out]) -> [C_out, L']
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeometry& g) {
  if (x.rank() != 2 || w.rank() != 3) throw std::invalid_argument("conv1d: expected x[C,L] and w[Co,Ci,K]");
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = w.dim(0), kernel = w.dim(2);
  const bool depthwise = g.groups != 1;
  if (depthwise && (g.groups != cin || cout != cin || w.dim(1) != 1))
    throw std::invalid_argument("conv1d: only dense or depthwise grouping is supported");
  if (!depthwise && w.dim(1) != cin)
    throw std::invalid_argument("conv1d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                                std::to_string(cin));
  if (b.defined() && b.numel() != cout) throw std::invalid_argument("conv1d: bias size mismatch");
  if (g.stride == 0 || g.dilation == 0) throw std::invalid_argument("conv1d: stride and dilation must be >= 1");
  const std::size_t lout = conv_output_length(len, kernel, g);
  if (lout == 0)
    throw std::invalid_argument("conv1d: input length " + std::to_string(len) + " shorter than receptive field");

  std::vector<T> out(cout * lout, T(0));
  const T* xd = x.data().data();
  const T* wd = w.data().data();

  if (depthwise) {
    for (std::size_t c = 0; c < cin; ++c) {
      const T* xc = xd + c * len;
      const T* wc = wd + c * kernel;
      T* oc = out.data() + c * lout;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k * g.dilation) - static_cast<std::ptrdiff_t>(g.pad_left);
        const T wk = wc[k];
        for (std::size_t t = 0; t < lout; ++t) {
          const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * g.stride) + off;
          if (p >= 0 && p < static_cast<std::ptrdiff_t>(len)) oc[t] += wk * xc[p];
        }
      }
    }
    count_macs(static_cast<std::uint64_t>(cin) * kernel * lout);
  } else {
    const std::size_t rows = cin * kernel;
    const std::size_t tile = detail::conv_tile(rows, lout);
    std::vector<T> col(rows * tile), tmp(cout * tile);
    for (std::size_t t0 = 0; t0 < lout; t0 += tile) {
      const std::size_t nt = std::min(tile, lout - t0);
      detail::im2col(xd, cin, len, kernel, g, t0, nt, col.data());
      gemm(wd, col.data(), tmp.data(), cout, rows, nt, false);
      for (std::size_t co = 0; co < cout; ++co) std::copy_n(tmp.data() + co * nt, nt, out.data() + co * lout + t0);
    }
  }
  if (b.defined()) {
    const T* bd = b.data().data();
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t t = 0; t < lout; ++t) out[co * lout + t] += bd[co];
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op<T>(Shape{cout, lout}, std::move(out), inputs, "conv1d",
                    [=](Node<T>& self) {
                      detail::NoCount nc;
                      const T* gy = self.grad.data();
                      const T* xv = parent_data(self, 0);
                      const T* wv = parent_data(self, 1);
                      T* gx = parent_grad(self, 0);
                      T* gw = parent_grad(self, 1);
                      if (self.parents.size() > 2)
                        if (T* gb = parent_grad(self, 2))
                          for (std::size_t co = 0; co < cout; ++co) {
                            T s = 0;
                            for (std::size_t t = 0; t < lout; ++t) s += gy[co * lout + t];
                            gb[co] += s;
                          }
                      if (depthwise) {
                        for (std::size_t c = 0; c < cin; ++c) {
                          const T* gc = gy + c * lout;
                          for (std::size_t k = 0; k < kernel; ++k) {
                            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k * g.dilation) -
                                                       static_cast<std::ptrdiff_t>(g.pad_left);
                            T acc = 0;
                            for (std::size_t t = 0; t < lout; ++t) {
                              const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * g.stride) + off;
                              if (p < 0 || p >= static_cast<std::ptrdiff_t>(len)) continue;
                              if (gx) gx[c * len + p] += wv[c * kernel + k] * gc[t];
                              acc += xv[c * len + p] * gc[t];
                            }
                            if (gw) gw[c * kernel + k] += acc;
                          }
                        }
                        return;
                      }
                      const std::size_t rows = cin * kernel;
                      const std::size_t tile = detail::conv_tile(rows, lout);
                      std::vector<T> col(rows * tile), gtile(cout * tile), dcol(rows * tile);
                      for (std::size_t t0 = 0; t0 < lout; t0 += tile) {
                        const std::size_t nt = std::min(tile, lout - t0);
                        for (std::size_t co = 0; co < cout; ++co)
                          std::copy_n(gy + co * lout + t0, nt, gtile.data() + co * nt);
                        if (gw) {
                          detail::im2col(xv, cin, len, kernel, g, t0, nt, col.data());
                          gemm(gtile.data(), col.data(), gw, cout, nt, rows, true, false, true);
                        }
                        if (gx) {
                          gemm(wv, gtile.data(), dcol.data(), rows, cout, nt, false, true, false);
                          detail::col2im(dcol.data(), cin, len, kernel, g, t0, nt, gx);
                        }
                      }
                    });
}

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
  return conv1d(x, w, Tensor<T>{}, g);
}

// x[C_in, L] with w[C_in, C_out, K]; output length (L-1)*stride + K - crop_left - crop_right.
template <class T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                           std::size_t crop_left, std::size_t crop_right) {
  if (x.rank() != 2 || w.rank() != 3 || w.dim(0) != x.dim(0))
    throw std::invalid_argument("conv_transpose1d: expected x[C,L] and w[C,Co,K] with matching C");
  const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(1), kernel = w.dim(2);
  if (len == 0) throw std::invalid_argument("conv_transpose1d: empty input");
  const std::size_t full = (len - 1) * stride + kernel;
  if (crop_left + crop_right >= full) throw std::invalid_argument("conv_transpose1d: crop exceeds output");
  const std::size_t lout = full - crop_left - crop_right;
  if (b.defined() && b.numel() != cout) throw std::invalid_argument("conv_transpose1d: bias size mismatch");

  const std::size_t rows = cout * kernel;
  const std::size_t tile = detail::conv_tile(rows, len);
  std::vector<T> out(cout * lout, T(0));
  std::vector<T> xt(cin * tile), cols(rows * tile);
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  for (std::size_t t0 = 0; t0 < len; t0 += tile) {
    const std::size_t nt = std::min(tile, len - t0);
    for (std::size_t ci = 0; ci < cin; ++ci) std::copy_n(xd + ci * len + t0, nt, xt.data() + ci * nt);
    gemm(wd, xt.data(), cols.data(), rows, cin, nt, false, true, false);
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t k = 0; k < kernel; ++k) {
        const T* row = cols.data() + (co * kernel + k) * nt;
        T* oc = out.data() + co * lout;
        for (std::size_t j = 0; j < nt; ++j) {
          const std::ptrdiff_t p = static_cast<std::ptrdiff_t>((t0 + j) * stride + k) - static_cast<std::ptrdiff_t>(crop_left);
          if (p >= 0 && p < static_cast<std::ptrdiff_t>(lout)) oc[p] += row[j];
        }
      }
  }
  if (b.defined())
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t t = 0; t < lout; ++t) out[co * lout + t] += b.data()[co];

  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op<T>(Shape{cout, lout}, std::move(out), inputs, "conv_transpose1d", [=](Node<T>& self) {
    detail::NoCount nc;
    const T* gy = self.grad.data();
    const T* xv = parent_data(self, 0);
    const T* wv = parent_data(self, 1);
    T* gx = parent_grad(self, 0);
    T* gw = parent_grad(self, 1);
    if (self.parents.size() > 2)
      if (T* gb = parent_grad(self, 2))
        for (std::size_t co = 0; co < cout; ++co) {
          T s = 0;
          for (std::size_t t = 0; t < lout; ++t) s += gy[co * lout + t];
          gb[co] += s;
        }
    std::vector<T> dcols(rows * tile), xt2(cin * tile), dxt(cin * tile);
    for (std::size_t t0 = 0; t0 < len; t0 += tile) {
      const std::size_t nt = std::min(tile, len - t0);
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t k = 0; k < kernel; ++k) {
          T* row = dcols.data() + (co * kernel + k) * nt;
          for (std::size_t j = 0; j < nt; ++j) {
            const std::ptrdiff_t p =
                static_cast<std::ptrdiff_t>((t0 + j) * stride + k) - static_cast<std::ptrdiff_t>(crop_left);
            row[j] = (p >= 0 && p < static_cast<std::ptrdiff_t>(lout)) ? gy[co * lout + p] : T(0);
          }
        }
      if (gx) {
        gemm(wv, dcols.data(), dxt.data(), cin, rows, nt, false);
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t j = 0; j < nt; ++j) gx[ci * len + t0 + j] += dxt[ci * nt + j];
      }
      if (gw) {
        for (std::size_t ci = 0; ci < cin; ++ci) std::copy_n(xv + ci * len + t0, nt, xt2.data() + ci * nt);
        gemm(xt2.data(), dcols.data(), gw, cin, nt, rows, true, false, true);
      }
    }
  });
}

// w[i, ...] = g[i] * v[i, ...] / ||v[i, ...]||
template <class T>
Tensor<T> weight_norm(const Tensor<T>& v, const Tensor<T>& g) {
  const std::size_t rows = v.dim(0);
  if (g.numel() != rows) throw std::invalid_argument("weight_norm: gain size mismatch");
  const std::size_t per = v.numel() / rows;
  std::vector<T> out(v.numel()), norms(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < per; ++j) s += static_cast<double>(v.data()[i * per + j]) * v.data()[i * per + j];
    norms[i] = static_cast<T>(std::sqrt(std::max(s, 1e-24)));
    const T f = g.data()[i] / norms[i];
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] = f * v.data()[i * per + j];
  }
  return make_op<T>(v.shape(), std::move(out), {v, g}, "weight_norm", [rows, per, norms](Node<T>& self) {
    const T* vv = parent_data(self, 0);
    const T* gv = parent_data(self, 1);
    T* dv = parent_grad(self, 0);
    T* dg = parent_grad(self, 1);
    for (std::size_t i = 0; i < rows; ++i) {
      const T* gw = self.grad.data() + i * per;
      const T* vi = vv + i * per;
      T proj = 0;  // <dw, v_hat>
      for (std::size_t j = 0; j < per; ++j) proj += gw[j] * vi[j];
      proj /= norms[i];
      if (dg) dg[i] += proj;
      if (dv) {
        const T f = gv[i] / norms[i];
        for (std::size_t j = 0; j < per; ++j) dv[i * per + j] += f * (gw[j] - proj * vi[j] / norms[i]);
      }
    }
  }, 1);
}

}  // namespace genae
