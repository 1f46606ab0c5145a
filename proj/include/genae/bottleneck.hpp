#pragma once

// Latent bottlenecks: a reparameterized Gaussian with a KL-target controller,
// and residual vector quantization inside a post-hoc wrapper around a frozen
// continuous model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <limits>
#include <vector>

#include "genae/config.hpp"
#include "genae/layers.hpp"

namespace genae {

// ---------------------------------------------------------------------------
// KL bottleneck

template <class T>
struct KlSample {
  Tensor<T> z;   // [frames, dim]
  Tensor<T> kl;  // scalar: nats per frame, summed over dims and averaged over frames
};

// params = mean || log-variance, [frames, 2 * dim]. With rng == nullptr the
// sample is the mean (evaluation).
template <class T>
KlSample<T> kl_sample(const Tensor<T>& params, Rng* rng) {
  if (params.rank() != 2 || params.dim(1) % 2 != 0)
    throw std::invalid_argument("kl_sample: expected [frames, 2 * dim] parameters");
  for (T v : params.data())
    if (!std::isfinite(v)) throw NumericError("kl_sample: non-finite bottleneck parameters");
  const std::size_t frames = params.dim(0), dim = params.dim(1) / 2;
  auto mu = slice(params, 1, 0, dim);
  auto logvar = slice(params, 1, dim, dim);
  KlSample<T> out;
  if (rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<T> eps(frames * dim);
    for (auto& e : eps) e = static_cast<T>(nd(*rng));
    out.z = add(mu, mul(exp(scale(logvar, T(0.5))), Tensor<T>(Shape{frames, dim}, std::move(eps))));
  } else {
    out.z = mu;
  }
  auto terms = sub(add(square(mu), exp(logvar)), add_scalar(logvar, T(1)));
  out.kl = scale(sum(terms), static_cast<T>(0.5 / static_cast<double>(frames)));
  return out;
}

// Multiplicative controller on the KL weight:
//   ema <- a * ema + (1 - a) * kl,  beta <- beta * exp(eta * clamp((ema - target) / target, -1, 1))
// The clamp bounds each step to a factor of exp(eta) while the KL is far
// from target.
struct KlController {
  double target = 15.0;
  double beta = 1.0;
  double running_kl = 0.0;
  double eta = 0.01;
  double ema = 0.9;
  double beta_min = 1e-6, beta_max = 1e2;
  bool initialized = false;

  void step(double measured_kl) {
    if (!(measured_kl >= 0) || !std::isfinite(measured_kl))
      throw NumericError("kl controller: measured KL must be finite and >= 0");
    running_kl = initialized ? ema * running_kl + (1 - ema) * measured_kl : measured_kl;
    initialized = true;
    beta = std::clamp(beta * std::exp(eta * std::clamp((running_kl - target) / target, -1.0, 1.0)), beta_min, beta_max);
  }
};

// ---------------------------------------------------------------------------
// Residual vector quantization

inline constexpr double kCommitmentWeight = 0.25;

inline double rvq_bitrate(double frame_rate, std::size_t n_codebooks, std::size_t entries) {
  return frame_rate * static_cast<double>(n_codebooks) * std::log2(static_cast<double>(entries));
}

// Entry 0 of every book is the zero vector and is never trained or re-seeded,
// so each stage can always leave the residual unchanged: residual norms are
// non-increasing across stages.
template <class T>
struct RvqCodebooks {
  std::size_t n_codebooks = 16, entries = 1024, dim = 16;
  std::vector<Tensor<T>> tables;                     // [entries, dim] each
  std::vector<std::vector<std::uint64_t>> usage;     // lifetime usage counts
  std::vector<std::vector<std::uint32_t>> idle;      // consecutive batches without use

  RvqCodebooks() = default;
  RvqCodebooks(std::size_t books, std::size_t n_entries, std::size_t d, Rng& rng, double init_std = 1.0)
      : n_codebooks(books), entries(n_entries), dim(d) {
    if (books == 0 || n_entries < 2 || d == 0) throw ConfigError("rvq: need >= 1 book, >= 2 entries, dim >= 1");
    if (n_entries > 65536) throw ConfigError("rvq: entries must fit in 16-bit codes");
    for (std::size_t b = 0; b < books; ++b) {
      // Later stages see smaller residuals; shrink their initial scale.
      tables.push_back(detail::init_normal<T>(Shape{entries, dim}, rng, init_std / std::sqrt(1.0 + b)));
      usage.emplace_back(entries, 0);
      idle.emplace_back(entries, 0);
    }
    pin_zero();
  }

  void pin_zero() {
    for (auto& t : tables) std::fill_n(t.values().begin(), dim, T(0));
  }

  void params(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t b = 0; b < tables.size(); ++b)
      out.push_back({detail::join(prefix, "book" + std::to_string(b)), tables[b]});
  }
};

// Index of the nearest entry to each row of r [rows, dim] (ties to the lower index).
template <class T>
std::vector<std::size_t> nearest_codes(const T* r, std::size_t rows, const Tensor<T>& table) {
  const std::size_t n = table.dim(0), d = table.dim(1);
  const T* e = table.data().data();
  std::vector<T> enorm(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(e[j * d + k]) * e[j * d + k];
    enorm[j] = static_cast<T>(s);
  }
  std::vector<T> dots(rows * n);
  {
    detail::NoCount nc;
    gemm(r, e, dots.data(), rows, d, n, false, false, true);
  }
  std::vector<std::size_t> idx(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    T best = std::numeric_limits<T>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T score = enorm[j] - 2 * dots[i * n + j];  // ||r - e||^2 - ||r||^2
      if (score < best) {
        best = score;
        arg = j;
      }
    }
    idx[i] = arg;
  }
  return idx;
}

// Identity in the backward pass: values of zq, gradient routed to z unchanged.
template <class T>
Tensor<T> straight_through(const Tensor<T>& z, std::vector<T> zq_values) {
  return make_op<T>(z.shape(), std::move(zq_values), {z}, "straight_through", [](Node<T>& self) {
    if (T* gz = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gz[i] += self.grad[i];
  });
}

template <class T>
struct RvqResult {
  Tensor<T> z_q;                         // straight-through quantized latents [frames, dim]
  Tensor<T> aux_loss;                    // codebook + commitment
  std::vector<std::uint16_t> codes;      // [frames, stages] row-major
  std::vector<double> residual_norms;    // ||r_i|| (Frobenius over the batch), i = 0..stages
  std::vector<std::vector<T>> residuals; // detached residual entering each stage
  std::size_t stages = 0;
};

// Quantizes z [frames, dim] with the first `stages` books (all when 0).
template <class T>
RvqResult<T> rvq_quantize(const Tensor<T>& z, const RvqCodebooks<T>& books, std::size_t stages = 0) {
  if (z.rank() != 2 || z.dim(1) != books.dim)
    throw std::invalid_argument("rvq: expected [frames, " + std::to_string(books.dim) + "] input, got " +
                                shape_str(z.shape()));
  if (stages == 0 || stages > books.n_codebooks) stages = books.n_codebooks;
  const std::size_t frames = z.dim(0), dim = books.dim;
  RvqResult<T> out;
  out.stages = stages;
  out.codes.assign(frames * stages, 0);
  std::vector<T> residual(z.data().begin(), z.data().end());
  std::vector<T> zq(frames * dim, T(0));
  auto frob = [](const std::vector<T>& v) {
    double s = 0;
    for (T x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
  };
  out.residual_norms.push_back(frob(residual));
  Tensor<T> aux = Tensor<T>::scalar(T(0));
  Tensor<T> consumed;  // running sum of detached chosen entries
  for (std::size_t s = 0; s < stages; ++s) {
    const auto& table = books.tables[s];
    out.residuals.push_back(residual);
    auto idx = nearest_codes(residual.data(), frames, table);
    for (std::size_t i = 0; i < frames; ++i) out.codes[i * stages + s] = static_cast<std::uint16_t>(idx[i]);
    auto chosen = gather_rows(table, idx);  // grads flow to the codebook
    // Residual with grad to z: z - sum of previous (detached) entries.
    auto r = consumed.defined() ? sub(z, consumed) : z;
    auto codebook_term = mse(chosen, Tensor<T>(Shape{frames, dim}, residual));
    auto commit_term = mse(r, chosen.detach());
    aux = add(aux, add(codebook_term, scale(commit_term, static_cast<T>(kCommitmentWeight))));
    const T* cv = chosen.data().data();
    for (std::size_t i = 0; i < frames * dim; ++i) {
      zq[i] += cv[i];
      residual[i] -= cv[i];
    }
    consumed = Tensor<T>(Shape{frames, dim}, zq);
    out.residual_norms.push_back(frob(residual));
  }
  out.z_q = straight_through(z, std::move(zq));
  out.aux_loss = aux;
  return out;
}

// Sum of the selected entries for codes [frames, stages].
template <class T>
Tensor<T> rvq_dequantize(const std::vector<std::uint16_t>& codes, std::size_t frames, const RvqCodebooks<T>& books) {
  if (frames == 0 || codes.size() % frames != 0) throw FormatError("rvq: code array does not match frame count");
  const std::size_t stages = codes.size() / frames;
  if (stages > books.n_codebooks) throw IncompatibleError("rvq: more code stages than codebooks");
  std::vector<T> out(frames * books.dim, T(0));
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t s = 0; s < stages; ++s) {
      const std::size_t c = codes[i * stages + s];
      if (c >= books.entries) throw FormatError("rvq: code " + std::to_string(c) + " out of range");
      const T* e = books.tables[s].data().data() + c * books.dim;
      for (std::size_t k = 0; k < books.dim; ++k) out[i * books.dim + k] += e[k];
    }
  return Tensor<T>(Shape{frames, books.dim}, std::move(out));
}

// exp(entropy) of the code distribution of one stage.
inline double code_perplexity(const std::vector<std::uint16_t>& codes, std::size_t stages, std::size_t stage,
                              std::size_t entries) {
  std::vector<double> count(entries, 0.0);
  const std::size_t frames = codes.size() / stages;
  for (std::size_t i = 0; i < frames; ++i) count[codes[i * stages + stage]] += 1;
  double h = 0;
  for (double c : count)
    if (c > 0) {
      const double p = c / static_cast<double>(frames);
      h -= p * std::log(p);
    }
  return std::exp(h);
}

// Updates usage statistics from one batch and re-seeds entries idle for
// `dead_after` consecutive batches with randomly chosen residuals from the
// batch. Returns the number of re-seeded entries.
template <class T>
std::size_t codebook_maintenance(RvqCodebooks<T>& books, const RvqResult<T>& batch, Rng& rng,
                                 std::uint32_t dead_after = 8) {
  std::size_t reseeded = 0;
  const std::size_t frames = batch.codes.size() / std::max<std::size_t>(batch.stages, 1);
  for (std::size_t s = 0; s < batch.stages; ++s) {
    std::vector<bool> used(books.entries, false);
    for (std::size_t i = 0; i < frames; ++i) {
      const std::size_t c = batch.codes[i * batch.stages + s];
      used[c] = true;
      ++books.usage[s][c];
    }
    std::uniform_int_distribution<std::size_t> pick(0, frames - 1);
    for (std::size_t e = 1; e < books.entries; ++e) {
      books.idle[s][e] = used[e] ? 0 : books.idle[s][e] + 1;
      if (books.idle[s][e] < dead_after) continue;
      const std::size_t src = pick(rng);
      auto& tv = books.tables[s].values();
      std::copy_n(batch.residuals[s].begin() + static_cast<std::ptrdiff_t>(src * books.dim), books.dim,
                  tv.begin() + static_cast<std::ptrdiff_t>(e * books.dim));
      books.idle[s][e] = 0;
      ++reseeded;
    }
  }
  return reseeded;
}

// ---------------------------------------------------------------------------
// Re-Bottleneck wrapper: latent -> attention encoder -> inner RVQ -> attention
// decoder -> latent, trained while the backbone stays frozen.

struct ReBottleneckConfig {
  std::size_t latent_dim = 64;
  AttnSpec attn{8, 512, 2048, 8, 16, 64, 0.0, true};
  std::size_t n_codebooks = 16, entries = 1024, code_dim = 16;
  std::uint64_t seed = 1;

  static ReBottleneckConfig toy() {
    ReBottleneckConfig c;
    c.attn = AttnSpec{2, 64, 128, 4, 16, 16, 0.0, true};
    c.entries = 256;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ReBottleneckConfig& c) {
  j = {{"latent_dim", c.latent_dim}, {"attn", c.attn},         {"n_codebooks", c.n_codebooks},
       {"entries", c.entries},       {"code_dim", c.code_dim}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, ReBottleneckConfig& c) {
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("attn").get_to(c.attn);
  j.at("n_codebooks").get_to(c.n_codebooks);
  j.at("entries").get_to(c.entries);
  j.at("code_dim").get_to(c.code_dim);
  j.at("seed").get_to(c.seed);
}

template <class T>
class ReBottleneck {
 public:
  explicit ReBottleneck(ReBottleneckConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.attn.validate();
    in_ = Linear<T>(cfg_.latent_dim, cfg_.attn.dim, rng_);
    enc_ = AttnStack<T>(cfg_.attn, rng_);
    to_inner_ = Linear<T>(cfg_.attn.dim, cfg_.code_dim, rng_);
    books_ = RvqCodebooks<T>(cfg_.n_codebooks, cfg_.entries, cfg_.code_dim, rng_, 1.0);
    from_inner_ = Linear<T>(cfg_.code_dim, cfg_.attn.dim, rng_);
    dec_ = AttnStack<T>(cfg_.attn, rng_);
    out_ = Linear<T>(cfg_.attn.dim, cfg_.latent_dim, rng_);
    cond_ = Tensor<T>(Shape{1, cfg_.attn.cond_dim}, T(0));
  }

  const ReBottleneckConfig& config() const { return cfg_; }
  RvqCodebooks<T>& books() { return books_; }
  const RvqCodebooks<T>& books() const { return books_; }

  struct Output {
    Tensor<T> latent;  // [frames, latent_dim]
    RvqResult<T> rvq;
  };

  Tensor<T> inner(const Tensor<T>& latent) const { return to_inner_(enc_(in_(latent), cond_, nullptr)); }
  Tensor<T> outer(const Tensor<T>& zq) const { return out_(dec_(from_inner_(zq), cond_, nullptr)); }

  Output operator()(const Tensor<T>& latent, std::size_t stages = 0) const {
    Output o;
    o.rvq = rvq_quantize(inner(latent), books_, stages);
    o.latent = outer(o.rvq.z_q);
    return o;
  }

  std::vector<std::uint16_t> tokenize(const Tensor<T>& latent) const {
    NoGradGuard ng;
    return rvq_quantize(inner(latent), books_).codes;
  }

  Tensor<T> detokenize(const std::vector<std::uint16_t>& codes, std::size_t frames) const {
    NoGradGuard ng;
    return outer(rvq_dequantize(codes, frames, books_));
  }

  ParamList<T> parameters(bool include_books = true) const {
    ParamList<T> ps;
    in_.params(ps, "rb.in");
    enc_.params(ps, "rb.enc");
    to_inner_.params(ps, "rb.to_inner");
    from_inner_.params(ps, "rb.from_inner");
    dec_.params(ps, "rb.dec");
    out_.params(ps, "rb.out");
    if (include_books) books_.params(ps, "rb.rvq");
    return ps;
  }

 private:
  ReBottleneckConfig cfg_;
  Rng rng_;
  Linear<T> in_, to_inner_, from_inner_, out_;
  AttnStack<T> enc_, dec_;
  RvqCodebooks<T> books_;
  Tensor<T> cond_;
};

}  // namespace genae
