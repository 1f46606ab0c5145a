#pragma once

// Parameterized building blocks. Every layer owns its tensors and reports
// them through params() under a stable dotted name.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "genae/activations.hpp"
#include "genae/attention_ops.hpp"
#include "genae/conv.hpp"
#include "genae/errors.hpp"

namespace genae {

using Rng = std::mt19937_64;

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

template <class T>
std::size_t param_count(const ParamList<T>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.tensor.numel();
  return n;
}

// FNV-1a over names, shapes and raw float bytes.
template <class T>
std::uint64_t param_checksum(const ParamList<T>& ps) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : ps) {
    mix(p.name.data(), p.name.size());
    for (auto e : p.tensor.shape()) mix(&e, sizeof e);
    mix(p.tensor.data().data(), p.tensor.numel() * sizeof(T));
  }
  return h;
}

namespace detail {

template <class T>
Tensor<T> init_normal(Shape s, Rng& rng, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  std::vector<T> v(numel(s));
  for (auto& x : v) x = static_cast<T>(nd(rng));
  return Tensor<T>(std::move(s), std::move(v), true);
}

template <class T>
Tensor<T> param_zeros(Shape s) {
  return Tensor<T>(std::move(s), T(0), true);
}

// Per-row L2 norms, the natural initial gain for weight normalization.
template <class T>
Tensor<T> row_norms(const Tensor<T>& v) {
  const std::size_t rows = v.dim(0), per = v.numel() / rows;
  std::vector<T> g(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < per; ++j) s += static_cast<double>(v.data()[i * per + j]) * v.data()[i * per + j];
    g[i] = static_cast<T>(std::sqrt(s));
  }
  return Tensor<T>(Shape{rows}, std::move(g), true);
}

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear: x[T, in] -> [T, out]

template <class T>
struct Linear {
  Tensor<T> w, b;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true, double stddev = -1)
      : w(detail::init_normal<T>(Shape{in, out}, rng, stddev < 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : stddev)) {
    if (bias) b = detail::param_zeros<T>(Shape{out});
  }

  std::size_t in_dim() const { return w.dim(0); }
  std::size_t out_dim() const { return w.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }
  void params(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({detail::join(prefix, "w"), w});
    if (b.defined()) out.push_back({detail::join(prefix, "b"), b});
  }
};

// ---------------------------------------------------------------------------
// Convolutions

struct Conv1dSpec {
  std::size_t c_in = 1, c_out = 1, kernel = 1, stride = 1, dilation = 1;
  bool separable = false;
  bool transposed = false;
  bool weight_norm = true;

  // Stride-1 conv with "same" output length.
  static Conv1dSpec same(std::size_t cin, std::size_t cout, std::size_t k, std::size_t d = 1, bool sep = false) {
    return {cin, cout, k, 1, d, sep, false, true};
  }
  // Rate-changing conv with K = 2r.
  static Conv1dSpec down(std::size_t cin, std::size_t cout, std::size_t r, bool sep = false) {
    return {cin, cout, 2 * r, r, 1, sep, false, true};
  }
  static Conv1dSpec up(std::size_t cin, std::size_t cout, std::size_t r) { return {cin, cout, 2 * r, r, 1, false, true, true}; }

  void validate() const {
    if (stride == 0 || dilation == 0 || kernel == 0 || c_in == 0 || c_out == 0)
      throw ConfigError("conv: channels, kernel, stride and dilation must be >= 1");
    if (separable && transposed) throw ConfigError("conv: separable transposed convolutions are not supported");
  }

  // Padding: stride 1 pads d(K-1) split floor/ceil; stride r with K = 2r pads
  // r split floor/ceil, so L' = L / r exactly when r divides L.
  ConvGeometry geometry() const {
    ConvGeometry g;
    g.stride = stride;
    g.dilation = dilation;
    const std::size_t total = stride == 1 ? dilation * (kernel - 1) : kernel - stride;
    g.pad_left = total / 2;
    g.pad_right = total - total / 2;
    return g;
  }

  std::size_t output_length(std::size_t len) const {
    if (transposed) return len * stride;  // (L-1) r + 2r - r
    return conv_output_length(len, kernel, geometry());
  }

  // Multiply-accumulates per output position.
  std::uint64_t macs_per_position() const {
    if (separable) return static_cast<std::uint64_t>(c_in) * kernel + static_cast<std::uint64_t>(c_in) * c_out;
    return static_cast<std::uint64_t>(c_in) * c_out * kernel;
  }
};

template <class T>
struct Conv1d {
  Conv1dSpec spec;
  // Dense: v[Co, Ci, K], g[Co]. Separable: depthwise v/g [Ci, 1, K] then pointwise pv/pg [Co, Ci, 1].
  Tensor<T> v, g, pv, pg, b;

  Conv1d() = default;
  Conv1d(Conv1dSpec s, Rng& rng) : spec(s) {
    spec.validate();
    if (spec.transposed) throw ConfigError("Conv1d: use ConvTranspose1d for transposed convolutions");
    if (spec.separable) {
      v = detail::init_normal<T>(Shape{spec.c_in, 1, spec.kernel}, rng, 1.0 / std::sqrt(static_cast<double>(spec.kernel)));
      pv = detail::init_normal<T>(Shape{spec.c_out, spec.c_in, 1}, rng, 1.0 / std::sqrt(static_cast<double>(spec.c_in)));
      if (spec.weight_norm) {
        g = detail::row_norms(v);
        pg = detail::row_norms(pv);
      }
    } else {
      v = detail::init_normal<T>(Shape{spec.c_out, spec.c_in, spec.kernel}, rng,
                                 1.0 / std::sqrt(static_cast<double>(spec.c_in * spec.kernel)));
      if (spec.weight_norm) g = detail::row_norms(v);
    }
    b = detail::param_zeros<T>(Shape{spec.c_out});
  }

  Tensor<T> weight() const { return spec.weight_norm ? weight_norm(v, g) : v; }
  Tensor<T> pointwise_weight() const { return spec.weight_norm ? weight_norm(pv, pg) : pv; }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.dim(0) != spec.c_in)
      throw std::invalid_argument("conv1d: expected " + std::to_string(spec.c_in) + " channels, got " +
                                  std::to_string(x.dim(0)));
    auto geo = spec.geometry();
    if (!spec.separable) return conv1d(x, weight(), b, geo);
    geo.groups = spec.c_in;
    auto h = conv1d(x, weight(), geo);
    return conv1d(h, pointwise_weight(), b, ConvGeometry{});
  }

  void params(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({detail::join(prefix, "v"), v});
    if (g.defined()) out.push_back({detail::join(prefix, "g"), g});
    if (pv.defined()) out.push_back({detail::join(prefix, "pv"), pv});
    if (pg.defined()) out.push_back({detail::join(prefix, "pg"), pg});
    out.push_back({detail::join(prefix, "b"), b});
  }
};

template <class T>
struct ConvTranspose1d {
  Conv1dSpec spec;
  Tensor<T> v, g, b;  // v[Ci, Co, K]

  ConvTranspose1d() = default;
  ConvTranspose1d(Conv1dSpec s, Rng& rng) : spec(s) {
    spec.validate();
    if (!spec.transposed) throw ConfigError("ConvTranspose1d: spec is not transposed");
    v = detail::init_normal<T>(Shape{spec.c_in, spec.c_out, spec.kernel}, rng,
                               1.0 / std::sqrt(static_cast<double>(spec.c_in * spec.kernel / spec.stride)));
    if (spec.weight_norm) g = detail::row_norms(v);
    b = detail::param_zeros<T>(Shape{spec.c_out});
  }

  std::size_t crop_left() const { return (spec.kernel - spec.stride) / 2; }
  std::size_t crop_right() const { return (spec.kernel - spec.stride) - crop_left(); }

  Tensor<T> weight() const { return spec.weight_norm ? weight_norm(v, g) : v; }
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose1d(x, weight(), b, spec.stride, crop_left(), crop_right());
  }

  void params(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({detail::join(prefix, "v"), v});
    if (g.defined()) out.push_back({detail::join(prefix, "g"), g});
    out.push_back({detail::join(prefix, "b"), b});
  }
};

// ---------------------------------------------------------------------------
// Activation with per-channel beta = exp(log_beta) for the periodic variants.

template <class T>
struct ActivationLayer {
  Activation kind = Activation::identity;
  Tensor<T> log_beta;

  ActivationLayer() = default;
  ActivationLayer(Activation k, std::size_t channels) : kind(k) {
    if (kind == Activation::snake || kind == Activation::snakelite) log_beta = detail::param_zeros<T>(Shape{channels});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    switch (kind) {
      case Activation::snake: return snake(x, exp(log_beta));
      case Activation::snakelite: return snakelite(x, exp(log_beta));
      case Activation::elu: return elu(x);
      case Activation::identity: return x;
    }
    return x;
  }
  void params(ParamList<T>& out, const std::string& prefix) const {
    if (log_beta.defined()) out.push_back({detail::join(prefix, "log_beta"), log_beta});
  }
};

// ---------------------------------------------------------------------------
// Residual units on [C, L]

// Initial gain of each residual branch. With unit gain every residual unit
// doubles the signal variance, and a stack of nine saturates the output tanh.
inline constexpr double kResidualBranchInitGain = 0.3;

namespace detail {
template <class T>
void scale_gain(Tensor<T>& g, double f) {
  for (auto& v : g.values()) v = static_cast<T>(v * f);
}
}  // namespace detail

// y = x + conv_{K,d}(act(x)); dense dilated conv (TCN unit).
template <class T>
struct TcnUnit {
  ActivationLayer<T> act;
  Conv1d<T> conv;

  TcnUnit() = default;
  TcnUnit(std::size_t channels, std::size_t kernel, std::size_t dilation, Activation a, Rng& rng)
      : act(a, channels), conv(Conv1dSpec::same(channels, channels, kernel, dilation), rng) {
    detail::scale_gain(conv.g, kResidualBranchInitGain);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, conv(act(x))); }
  void params(ParamList<T>& out, const std::string& prefix) const {
    act.params(out, detail::join(prefix, "act"));
    conv.params(out, detail::join(prefix, "conv"));
  }
};

// Per-channel K-tap dilated conv, stride 1, "same" length.
template <class T>
struct DepthwiseConv1d {
  std::size_t channels = 0, kernel = 1, dilation = 1;
  Tensor<T> v, g, b;  // v[C, 1, K]

  DepthwiseConv1d() = default;
  DepthwiseConv1d(std::size_t c, std::size_t k, std::size_t d, Rng& rng)
      : channels(c), kernel(k), dilation(d),
        v(detail::init_normal<T>(Shape{c, 1, k}, rng, 1.0 / std::sqrt(static_cast<double>(k)))),
        g(detail::row_norms(v)),
        b(detail::param_zeros<T>(Shape{c})) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto geo = Conv1dSpec::same(channels, channels, kernel, dilation).geometry();
    geo.groups = channels;
    return conv1d(x, weight_norm(v, g), b, geo);
  }
  void params(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({detail::join(prefix, "v"), v});
    out.push_back({detail::join(prefix, "g"), g});
    out.push_back({detail::join(prefix, "b"), b});
  }
};

// y = x + pointwise(act(depthwise_{K,d}(x))).
template <class T>
struct DwpwUnit {
  DepthwiseConv1d<T> dw;
  ActivationLayer<T> act;
  Conv1d<T> pw;

  DwpwUnit() = default;
  DwpwUnit(std::size_t channels, std::size_t kernel, std::size_t dilation, Activation a, Rng& rng)
      : dw(channels, kernel, dilation, rng), act(a, channels), pw(Conv1dSpec::same(channels, channels, 1), rng) {
    detail::scale_gain(pw.g, kResidualBranchInitGain);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, pw(act(dw(x)))); }
  void params(ParamList<T>& out, const std::string& prefix) const {
    dw.params(out, detail::join(prefix, "dw"));
    act.params(out, detail::join(prefix, "act"));
    pw.params(out, detail::join(prefix, "pw"));
  }
};

// Multiply-accumulates per position of one residual unit.
inline std::uint64_t unit_macs_per_position(std::size_t channels, std::size_t kernel, bool separable) {
  const std::uint64_t c = channels;
  return separable ? c * kernel + c * c : c * c * kernel;
}

// Receptive field of a stride-1 stack of dilated K-tap convs.
inline std::size_t receptive_field(std::size_t kernel, const std::vector<std::size_t>& dilations) {
  std::size_t rf = 1;
  for (auto d : dilations) rf += d * (kernel - 1);
  return rf;
}

// ---------------------------------------------------------------------------
// Attention

struct AttnSpec {
  std::size_t depth = 0, dim = 0, ffn = 0, heads = 1, window = 16, cond_dim = 64;
  double dropout = 0.0;
  bool rope = true;

  bool enabled() const { return depth > 0; }
  void validate() const {
    if (!enabled()) return;
    if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("attention: dim must be a multiple of heads");
    if (window == 0) throw ConfigError("attention: window must be >= 1");
    if (ffn == 0) throw ConfigError("attention: ffn width must be >= 1");
  }
};

// Pre-norm transformer block with AdaLN modulation from a condition vector:
//   h = LN(x) (1 + scale) + shift before attention and before the FFN.
template <class T>
struct AttnBlock {
  AttnSpec spec;
  Linear<T> mod;  // cond -> [shift1, scale1, shift2, scale2]
  Linear<T> qkv, proj, ff1, ff2;
  Tensor<T> q_gain;

  AttnBlock() = default;
  AttnBlock(const AttnSpec& s, Rng& rng, double adaln_init_std = 0.0)
      : spec(s),
        mod(s.cond_dim, 4 * s.dim, rng, true, adaln_init_std),
        qkv(s.dim, 3 * s.dim, rng),
        proj(s.dim, s.dim, rng),
        ff1(s.dim, s.ffn, rng),
        ff2(s.ffn, s.dim, rng) {
    q_gain = Tensor<T>(Shape{1, s.dim}, static_cast<T>(std::sqrt(static_cast<double>(s.dim / s.heads))), true);
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& cond, Rng* dropout_rng) const {
    const std::size_t d = spec.dim;
    const auto m = mod(cond);  // [1, 4d]
    auto modulate = [&](const Tensor<T>& h, std::size_t i) {
      return add(mul(h, add_scalar(slice(m, 1, (2 * i + 1) * d, d), T(1))), slice(m, 1, 2 * i * d, d));
    };
    const T p = static_cast<T>(spec.dropout);

    auto h = modulate(layer_norm(x), 0);
    auto qkv_out = qkv(h);
    auto q = mul(head_l2norm(slice(qkv_out, 1, 0, d), spec.heads), q_gain);
    auto k = head_l2norm(slice(qkv_out, 1, d, d), spec.heads);
    auto v = slice(qkv_out, 1, 2 * d, d);
    if (spec.rope) {
      q = rope(q, spec.heads);
      k = rope(k, spec.heads);
    }
    auto a = proj(window_attention(q, k, v, spec.heads, spec.window));
    auto x1 = add(x, dropout(a, p, dropout_rng));

    auto h2 = modulate(layer_norm(x1), 1);
    auto f = ff2(gelu(ff1(h2)));
    return add(x1, dropout(f, p, dropout_rng));
  }

  void params(ParamList<T>& out, const std::string& prefix) const {
    mod.params(out, detail::join(prefix, "adaln"));
    qkv.params(out, detail::join(prefix, "qkv"));
    out.push_back({detail::join(prefix, "q_gain"), q_gain});
    proj.params(out, detail::join(prefix, "proj"));
    ff1.params(out, detail::join(prefix, "ff1"));
    ff2.params(out, detail::join(prefix, "ff2"));
  }
};

template <class T>
struct AttnStack {
  AttnSpec spec;
  std::vector<AttnBlock<T>> blocks;

  AttnStack() = default;
  AttnStack(const AttnSpec& s, Rng& rng, double adaln_init_std = 0.0) : spec(s) {
    spec.validate();
    for (std::size_t i = 0; i < s.depth; ++i) blocks.emplace_back(s, rng, adaln_init_std);
  }

  bool enabled() const { return !blocks.empty(); }
  Tensor<T> operator()(Tensor<T> x, const Tensor<T>& cond, Rng* dropout_rng) const {
    for (const auto& b : blocks) x = b(x, cond, dropout_rng);
    return x;
  }
  void params(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].params(out, detail::join(prefix, std::to_string(i)));
  }
};

// ---------------------------------------------------------------------------
// Channel-format conditioning

enum class FormatToken : std::uint8_t { mid = 0, side = 1, left = 2, right = 3 };
inline constexpr std::size_t kFormatCount = 4;

inline const char* format_name(FormatToken f) {
  switch (f) {
    case FormatToken::mid: return "mid";
    case FormatToken::side: return "side";
    case FormatToken::left: return "left";
    case FormatToken::right: return "right";
  }
  return "?";
}

inline FormatToken parse_format_token(const std::string& s) {
  if (s == "mid" || s == "mono") return FormatToken::mid;
  if (s == "side") return FormatToken::side;
  if (s == "left") return FormatToken::left;
  if (s == "right") return FormatToken::right;
  throw ConfigError("unknown format token '" + s + "'");
}

template <class T>
struct FormatEmbedding {
  Tensor<T> table;  // [4, cond_dim]

  FormatEmbedding() = default;
  FormatEmbedding(std::size_t cond_dim, Rng& rng) : table(detail::init_normal<T>(Shape{kFormatCount, cond_dim}, rng, 1.0)) {}

  Tensor<T> operator()(FormatToken f) const { return gather_rows(table, {static_cast<std::size_t>(f)}); }
  void params(ParamList<T>& out, const std::string& prefix) const { out.push_back({detail::join(prefix, "table"), table}); }
};

}  // namespace genae
