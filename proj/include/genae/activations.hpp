#pragma once

// Periodic activations for audio and the encoder's ELU.
//
// SnakeLite replaces sin^2 in Snake with the degree-8 Taylor polynomial of
// sin^2 evaluated on the argument wrapped into (-pi/2, pi/2]. Because sin^2 is
// pi-periodic the wrap is exact, so the approximation error is bounded by the
// polynomial's error on that half-period, divided by beta.

#include <cmath>
#include <numbers>

#include "genae/ops.hpp"

namespace genae {

enum class Activation { snake, snakelite, elu, identity };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::snake: return "snake";
    case Activation::snakelite: return "snakelite";
    case Activation::elu: return "elu";
    case Activation::identity: return "identity";
  }
  return "?";
}

namespace act {

// beta*x - pi*round(beta*x/pi), with ties rounded down so the result is in (-pi/2, pi/2].
inline double wrap_value(double x, double beta) {
  const double u = beta * x;
  const double n = std::ceil(u / std::numbers::pi - 0.5);
  return u - std::numbers::pi * n;
}

inline double p8(double z) {
  const double z2 = z * z;
  return z2 * (1.0 + z2 * (-1.0 / 3.0 + z2 * (2.0 / 45.0 - z2 / 315.0)));
}

inline double p8_deriv(double z) {
  const double z2 = z * z;
  return z * (2.0 + z2 * (-4.0 / 3.0 + z2 * (12.0 / 45.0 - 8.0 * z2 / 315.0)));
}

inline double snakelite_value(double x, double beta) { return x + p8(wrap_value(x, beta)) / beta; }

inline double snake_value(double x, double beta) {
  const double s = std::sin(beta * x);
  return x + s * s / beta;
}

}  // namespace act

namespace detail {

// Resolves the beta for element i of x: scalar beta, or one per row of a [C, L] tensor.
struct BetaIndex {
  std::size_t per_row;  // 0 => scalar beta
  std::size_t operator()(std::size_t i) const { return per_row ? i / per_row : 0; }
};

template <class T>
BetaIndex beta_index(const Tensor<T>& x, const Tensor<T>& beta) {
  if (beta.numel() == 1) return {0};
  if (x.rank() >= 1 && beta.numel() == x.dim(0)) return {x.numel() / x.dim(0)};
  throw std::invalid_argument("activation: beta must be scalar or one value per channel");
}

}  // namespace detail

// x + sin^2(beta x) / beta. Saves sin(beta x) and cos(beta x) for backward.
template <class T>
Tensor<T> snake(const Tensor<T>& x, const Tensor<T>& beta) {
  const auto bi = detail::beta_index(x, beta);
  const std::size_t n = x.numel();
  std::vector<T> out(n), sn(n), cs(n);
  const T* xd = x.data().data();
  const T* bd = beta.data().data();
  const bool keep = grad_enabled() && (x.requires_grad() || beta.requires_grad());
  for (std::size_t i = 0; i < n; ++i) {
    const T b = bd[bi(i)];
    sn[i] = std::sin(b * xd[i]);
    if (keep) cs[i] = std::cos(b * xd[i]);
    out[i] = xd[i] + sn[i] * sn[i] / b;
  }
  if (!keep) {
    sn.clear();
    cs.clear();
  }
  return make_op<T>(x.shape(), std::move(out), {x, beta}, "snake",
                    [bi, sn = std::move(sn), cs = std::move(cs)](Node<T>& self) {
                      const T* xv = parent_data(self, 0);
                      const T* bv = parent_data(self, 1);
                      T* gx = parent_grad(self, 0);
                      T* gb = parent_grad(self, 1);
                      for (std::size_t i = 0; i < self.data.size(); ++i) {
                        const T b = bv[bi(i)];
                        const T g = self.grad[i];
                        const T s2 = T(2) * sn[i] * cs[i];  // sin(2 b x)
                        if (gx) gx[i] += g * (T(1) + s2);
                        if (gb) gb[bi(i)] += g * (xv[i] * s2 / b - sn[i] * sn[i] / (b * b));
                      }
                    },
                    2);
}

// beta x wrapped into (-pi/2, pi/2]; the round() is treated as locally constant.
template <class T>
Tensor<T> wrap(const Tensor<T>& x, const Tensor<T>& beta) {
  const auto bi = detail::beta_index(x, beta);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(act::wrap_value(x.data()[i], beta.data()[bi(i)]));
  return make_op<T>(x.shape(), std::move(out), {x, beta}, "wrap", [bi](Node<T>& self) {
    const T* xv = parent_data(self, 0);
    const T* bv = parent_data(self, 1);
    T* gx = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      if (gx) gx[i] += self.grad[i] * bv[bi(i)];
      if (gb) gb[bi(i)] += self.grad[i] * xv[i];
    }
  });
}

// x + P8(wrap(x, beta)) / beta. Saves only the wrapped argument.
template <class T>
Tensor<T> snakelite(const Tensor<T>& x, const Tensor<T>& beta) {
  const auto bi = detail::beta_index(x, beta);
  const std::size_t n = x.numel();
  std::vector<T> out(n), wrapped(n);
  const T* xd = x.data().data();
  const T* bd = beta.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double b = bd[bi(i)];
    const double a = act::wrap_value(xd[i], b);
    wrapped[i] = static_cast<T>(a);
    out[i] = static_cast<T>(xd[i] + act::p8(a) / b);
  }
  if (!grad_enabled() || !(x.requires_grad() || beta.requires_grad())) wrapped.clear();
  return make_op<T>(x.shape(), std::move(out), {x, beta}, "snakelite",
                    [bi, wrapped = std::move(wrapped)](Node<T>& self) {
                      const T* xv = parent_data(self, 0);
                      const T* bv = parent_data(self, 1);
                      T* gx = parent_grad(self, 0);
                      T* gb = parent_grad(self, 1);
                      for (std::size_t i = 0; i < self.data.size(); ++i) {
                        const double b = bv[bi(i)];
                        const double a = wrapped[i];
                        const double dp = act::p8_deriv(a);
                        const double g = self.grad[i];
                        if (gx) gx[i] += static_cast<T>(g * (1.0 + dp));
                        if (gb) gb[bi(i)] += static_cast<T>(g * (dp * xv[i] / b - act::p8(a) / (b * b)));
                      }
                    },
                    1);
}

// ELU with alpha = 1.
template <class T>
Tensor<T> elu(const Tensor<T>& x) {
  return detail::unary(x, "elu", [](T v) { return v > T(0) ? v : std::expm1(v); },
                       [](T v, T y) { return v > T(0) ? T(1) : y + T(1); });
}

}  // namespace genae
