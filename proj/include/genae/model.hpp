#pragma once

// The autoencoder graph: strided convolutional encoder with optional mel
// fusion, attention stacks around the final rate change on both sides, and a
// transposed-convolution decoder with a mel prediction head.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "genae/config.hpp"

namespace genae {

inline constexpr const char* kAttnPreFinal = "pre_final_downsample";
inline constexpr const char* kAttnPostFinal = "post_final_downsample";
inline constexpr const char* kAttnPostBottleneck = "post_bottleneck";
inline constexpr const char* kAttnPostFirstUp = "post_first_upsample";

struct AttentionPlacement {
  std::string position;
  std::size_t depth = 0;
  std::size_t dim = 0;
};

inline constexpr double kLatentHeadInitStd = 0.01;
inline constexpr double kOutputInitGain = 0.1;

template <class T>
struct EncoderOutput {
  Tensor<T> params;     // [frames, latent_params]
  Tensor<T> mel_true;   // [frames * final_downsample, n_mels] (undefined without mel features)
  Tensor<T> fusion_mel; // auxiliary prediction from the fused features
  std::size_t padded_length = 0;
};

template <class T>
struct DecoderOutput {
  Tensor<T> audio;     // [1, frames * total_stride]
  Tensor<T> mel_pred;  // [frames * final_downsample, n_mels]
};

template <class T>
class GenAE {
 public:
  explicit GenAE(ModelConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    cfg_.enc_attn.dropout = cfg_.dropout;
    cfg_.dec_attn.dropout = cfg_.dropout;
    build_encoder();
    build_decoder();
    if (cfg_.mel_fusion || cfg_.mel_head) mel_.emplace(cfg_.mel);
  }

  const ModelConfig& config() const { return cfg_; }

  void set_training(bool on, std::uint64_t dropout_seed = 0) {
    training_ = on;
    dropout_rng_.seed(dropout_seed ^ 0x9e3779b97f4a7c15ull);
  }
  bool training() const { return training_; }

  // ---- encoder ------------------------------------------------------------

  // x: one channel. Zero-padded on the right to a multiple of the total stride.
  EncoderOutput<T> encode(std::span<const float> x, FormatToken f) const {
    if (x.empty()) throw std::invalid_argument("encode: empty input");
    const std::size_t frames = cfg_.frames_for(x.size());
    const std::size_t padded = cfg_.decoded_length(frames);
    std::vector<T> buf(padded, T(0));
    std::copy(x.begin(), x.end(), buf.begin());
    EncoderOutput<T> out;
    out.padded_length = padded;
    if (mel_) out.mel_true = (*mel_).template operator()<T>(std::span<const T>(buf));
    Tensor<T> wav(Shape{1, padded}, std::move(buf));
    const auto cond = condition(f);

    auto h = stem_(wav);
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
      const auto& b = enc_blocks_[i];
      if (cfg_.early_downsample) {
        h = b.down(b.act(h));
        for (const auto& u : b.units) h = u(h);
      } else {
        for (const auto& u : b.units) h = u(h);
        h = b.down(b.act(h));
      }
    }
    if (cfg_.mel_fusion) {
      h = fuse_(concat<T>({h, transpose(out.mel_true)}, 0));
      out.fusion_mel = fusion_head_(transpose(h));
    }
    if (pre_final_.enabled()) {
      auto t = pre_final_(enc_in_(transpose(h)), cond, dropout_rng());
      h = transpose(t);
    }
    h = final_down_(final_act_(h));
    auto t = transpose(h);
    if (post_final_.enabled()) t = post_final_(t, cond, dropout_rng());
    out.params = latent_head_(t);
    return out;
  }

  // ---- decoder ------------------------------------------------------------

  DecoderOutput<T> decode(const Tensor<T>& z, FormatToken f) const {
    if (z.rank() != 2 || z.dim(1) != cfg_.latent_dim)
      throw std::invalid_argument("decode: expected [frames, " + std::to_string(cfg_.latent_dim) + "] latents, got " +
                                  shape_str(z.shape()));
    const auto cond = condition(f);
    DecoderOutput<T> out;
    auto t = dec_in_(z);
    if (post_bottleneck_.enabled()) t = post_bottleneck_(t, cond, dropout_rng());
    auto h = first_up_(transpose(t));
    t = transpose(h);
    if (post_first_up_.enabled()) t = post_first_up_(t, cond, dropout_rng());
    if (cfg_.mel_head) out.mel_pred = mel_head_(t);
    h = transpose(t);
    for (const auto& s : dec_stages_) {
      h = s.up(s.act(h));
      for (const auto& u : s.units) h = u(h);
    }
    out.audio = tanh(out_conv_(out_act_(h)));
    return out;
  }

  // ---- introspection ----------------------------------------------------------

  ParamList<T> parameters() const {
    ParamList<T> ps;
    if (cfg_.format_conditioning) format_.params(ps, "format");
    stem_.params(ps, "enc.stem");
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
      const std::string p = "enc.block" + std::to_string(i);
      enc_blocks_[i].act.params(ps, p + ".act");
      enc_blocks_[i].down.params(ps, p + ".down");
      for (std::size_t u = 0; u < enc_blocks_[i].units.size(); ++u)
        enc_blocks_[i].units[u].params(ps, p + ".unit" + std::to_string(u));
    }
    if (cfg_.mel_fusion) {
      fuse_.params(ps, "enc.fuse");
      fusion_head_.params(ps, "enc.fusion_head");
    }
    if (pre_final_.enabled()) {
      enc_in_.params(ps, "enc.attn_in");
      pre_final_.params(ps, std::string("enc.") + kAttnPreFinal);
    }
    final_act_.params(ps, "enc.final_act");
    final_down_.params(ps, "enc.final_down");
    if (post_final_.enabled()) post_final_.params(ps, std::string("enc.") + kAttnPostFinal);
    latent_head_.params(ps, "enc.latent_head");

    dec_in_.params(ps, "dec.in");
    if (post_bottleneck_.enabled()) post_bottleneck_.params(ps, std::string("dec.") + kAttnPostBottleneck);
    first_up_.params(ps, "dec.first_up");
    if (post_first_up_.enabled()) post_first_up_.params(ps, std::string("dec.") + kAttnPostFirstUp);
    if (cfg_.mel_head) mel_head_.params(ps, "dec.mel_head");
    for (std::size_t i = 0; i < dec_stages_.size(); ++i) {
      const std::string p = "dec.stage" + std::to_string(i);
      dec_stages_[i].act.params(ps, p + ".act");
      dec_stages_[i].up.params(ps, p + ".up");
      for (std::size_t u = 0; u < dec_stages_[i].units.size(); ++u)
        dec_stages_[i].units[u].params(ps, p + ".unit" + std::to_string(u));
    }
    out_act_.params(ps, "dec.out_act");
    out_conv_.params(ps, "dec.out_conv");
    return ps;
  }

  ParamList<T> encoder_parameters() const { return filter_params("enc."); }
  ParamList<T> decoder_parameters() const { return filter_params("dec."); }

  std::vector<AttentionPlacement> attention_stacks() const {
    std::vector<AttentionPlacement> out;
    auto add = [&](const char* pos, const AttnStack<T>& s) {
      if (s.enabled()) out.push_back({pos, s.blocks.size(), s.spec.dim});
    };
    add(kAttnPreFinal, pre_final_);
    add(kAttnPostFinal, post_final_);
    add(kAttnPostBottleneck, post_bottleneck_);
    add(kAttnPostFirstUp, post_first_up_);
    return out;
  }

 private:
  Rng* dropout_rng() const { return training_ ? &dropout_rng_ : nullptr; }

  Tensor<T> condition(FormatToken f) const {
    if (cfg_.format_conditioning) return format_(f);
    return Tensor<T>(Shape{1, cfg_.cond_dim}, T(0));
  }

  ParamList<T> filter_params(const std::string& prefix) const {
    ParamList<T> out;
    for (auto& p : parameters())
      if (p.name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
  }

  void build_encoder() {
    if (cfg_.format_conditioning) format_ = FormatEmbedding<T>(cfg_.cond_dim, rng_);
    stem_ = Conv1d<T>(Conv1dSpec::same(1, cfg_.stem_channels, cfg_.kernel), rng_);
    std::size_t c = cfg_.stem_channels;
    for (std::size_t i = 0; i < cfg_.encoder_strides.size(); ++i) {
      const std::size_t co = cfg_.encoder_channels[i];
      const std::size_t unit_width = cfg_.early_downsample ? co : c;
      EncBlockImpl b;
      b.act = ActivationLayer<T>(cfg_.encoder_activation, c);
      b.down = Conv1d<T>(Conv1dSpec::down(c, co, cfg_.encoder_strides[i], cfg_.separable), rng_);
      for (auto d : cfg_.dilations) b.units.push_back(EncUnit(unit_width, cfg_.kernel, d, cfg_, rng_));
      enc_blocks_.push_back(std::move(b));
      c = co;
    }
    if (cfg_.mel_fusion) {
      fuse_ = Conv1d<T>(Conv1dSpec::same(c + cfg_.mel.n_mels, c, 1), rng_);
      fusion_head_ = Linear<T>(c, cfg_.mel.n_mels, rng_);
    }
    std::size_t w = c;
    if (cfg_.enc_attn.enabled()) {
      enc_in_ = Linear<T>(c, cfg_.enc_attn.dim, rng_);
      pre_final_ = AttnStack<T>(cfg_.enc_attn, rng_, cfg_.adaln_init_std);
      w = cfg_.enc_attn.dim;
    }
    const std::size_t wf = cfg_.encoder_final_width();
    final_act_ = ActivationLayer<T>(cfg_.enc_attn.enabled() ? Activation::identity : cfg_.encoder_activation, w);
    final_down_ = Conv1d<T>(Conv1dSpec::down(w, wf, cfg_.final_downsample, cfg_.separable), rng_);
    if (cfg_.enc_attn.enabled()) post_final_ = AttnStack<T>(cfg_.enc_attn, rng_, cfg_.adaln_init_std);
    // Small init keeps the initial posterior near the prior.
    latent_head_ = Linear<T>(wf, cfg_.latent_params(), rng_, true, kLatentHeadInitStd);
  }

  void build_decoder() {
    const std::size_t w = cfg_.decoder_trunk_width();
    dec_in_ = Linear<T>(cfg_.latent_dim, w, rng_);
    if (cfg_.dec_attn.enabled()) post_bottleneck_ = AttnStack<T>(cfg_.dec_attn, rng_, cfg_.adaln_init_std);
    first_up_ = ConvTranspose1d<T>(Conv1dSpec::up(w, w, cfg_.final_downsample), rng_);
    if (cfg_.dec_attn.enabled()) post_first_up_ = AttnStack<T>(cfg_.dec_attn, rng_, cfg_.adaln_init_std);
    if (cfg_.mel_head) mel_head_ = Linear<T>(w, cfg_.mel.n_mels, rng_);
    std::size_t c = w;
    for (std::size_t i = 0; i < cfg_.decoder_upsample.size(); ++i) {
      const std::size_t co = cfg_.decoder_channels[i];
      DecStage s;
      s.act = ActivationLayer<T>(cfg_.decoder_activation, c);
      s.up = ConvTranspose1d<T>(Conv1dSpec::up(c, co, cfg_.decoder_upsample[i]), rng_);
      for (auto d : cfg_.dilations) s.units.emplace_back(co, cfg_.kernel, d, cfg_.decoder_activation, rng_);
      dec_stages_.push_back(std::move(s));
      c = co;
    }
    out_act_ = ActivationLayer<T>(cfg_.decoder_activation, c);
    out_conv_ = Conv1d<T>(Conv1dSpec::same(c, 1, cfg_.kernel), rng_);
    // Quiet initial output keeps the final tanh out of saturation.
    detail::scale_gain(out_conv_.g, kOutputInitGain);
  }

  // Encoder residual unit: DWPW when the trunk is separable, dense otherwise.
  struct EncUnit {
    bool separable = false;
    DwpwUnit<T> dwpw;
    TcnUnit<T> dense;
    EncUnit(std::size_t c, std::size_t k, std::size_t d, const ModelConfig& cfg, Rng& rng) : separable(cfg.separable) {
      if (separable)
        dwpw = DwpwUnit<T>(c, k, d, cfg.encoder_activation, rng);
      else
        dense = TcnUnit<T>(c, k, d, cfg.encoder_activation, rng);
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return separable ? dwpw(x) : dense(x); }
    void params(ParamList<T>& out, const std::string& prefix) const {
      if (separable)
        dwpw.params(out, prefix);
      else
        dense.params(out, prefix);
    }
  };

  struct EncBlockImpl {
    ActivationLayer<T> act;
    Conv1d<T> down;
    std::vector<EncUnit> units;
  };

  struct DecStage {
    ActivationLayer<T> act;
    ConvTranspose1d<T> up;
    std::vector<TcnUnit<T>> units;
  };

  ModelConfig cfg_;
  Rng rng_;
  mutable Rng dropout_rng_{0};
  bool training_ = false;
  std::optional<MelSpectrogram> mel_;

  FormatEmbedding<T> format_;
  Conv1d<T> stem_;
  std::vector<EncBlockImpl> enc_blocks_;
  Conv1d<T> fuse_;
  Linear<T> fusion_head_;
  Linear<T> enc_in_;
  AttnStack<T> pre_final_;
  ActivationLayer<T> final_act_;
  Conv1d<T> final_down_;
  AttnStack<T> post_final_;
  Linear<T> latent_head_;

  Linear<T> dec_in_;
  AttnStack<T> post_bottleneck_;
  ConvTranspose1d<T> first_up_;
  AttnStack<T> post_first_up_;
  Linear<T> mel_head_;
  std::vector<DecStage> dec_stages_;
  ActivationLayer<T> out_act_;
  Conv1d<T> out_conv_;
};

// Confirms the four attention stacks sit at the four bottleneck positions.
template <class T>
std::vector<AttentionPlacement> attention_placement_audit(const GenAE<T>& model) {
  const auto stacks = model.attention_stacks();
  const char* expected[] = {kAttnPreFinal, kAttnPostFinal, kAttnPostBottleneck, kAttnPostFirstUp};
  if (stacks.size() != 4)
    throw ConfigError("attention audit: expected 4 attention stacks, found " + std::to_string(stacks.size()));
  for (std::size_t i = 0; i < 4; ++i)
    if (stacks[i].position != expected[i] || stacks[i].depth == 0)
      throw ConfigError(std::string("attention audit: missing stack at ") + expected[i]);
  return stacks;
}

}  // namespace genae
