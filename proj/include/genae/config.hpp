#pragma once

// Hyperparameter records for the model and its named variants.

#include <json.hpp>
#include <numeric>
#include <string>
#include <vector>

#include "genae/dsp.hpp"
#include "genae/layers.hpp"

namespace genae {

enum class BottleneckKind { kl, plain };

struct ModelConfig {
  std::string name = "custom";
  int sample_rate = kSampleRate;

  // Encoder trunk
  Activation encoder_activation = Activation::elu;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> encoder_channels{32, 64};
  std::vector<std::size_t> encoder_strides{16, 15};
  bool early_downsample = true;
  bool separable = true;
  std::size_t final_downsample = 14;
  std::size_t final_channels = 0;  // width after the final downsample without attention; 0 keeps the trunk width
  std::vector<std::size_t> dilations{1, 3, 9};
  std::size_t kernel = 7;

  // Mel features
  MelConfig mel{};
  bool mel_fusion = true;
  bool mel_head = true;

  // Attention stacks (depth 0 disables)
  AttnSpec enc_attn{3, 512, 2048, 8, 16, 64, 0.05, true};
  AttnSpec dec_attn{6, 768, 3072, 12, 16, 64, 0.05, true};

  // Bottleneck
  std::size_t latent_dim = 64;
  BottleneckKind bottleneck = BottleneckKind::kl;

  // Decoder trunk
  Activation decoder_activation = Activation::snakelite;
  std::size_t decoder_width = 768;  // width entering the first upsample
  std::vector<std::size_t> decoder_upsample{15, 8, 2};
  std::vector<std::size_t> decoder_channels{384, 192, 96};

  double dropout = 0.05;
  std::size_t cond_dim = 64;
  bool format_conditioning = true;
  double adaln_init_std = 0.0;  // 0 gives identity modulation at init
  std::uint64_t seed = 0;

  std::size_t encoder_stride_product() const {
    return std::accumulate(encoder_strides.begin(), encoder_strides.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t decoder_stride_product() const {
    return std::accumulate(decoder_upsample.begin(), decoder_upsample.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t total_stride() const { return encoder_stride_product() * final_downsample; }
  double latent_rate() const { return static_cast<double>(sample_rate) / static_cast<double>(total_stride()); }
  std::size_t latent_params() const { return bottleneck == BottleneckKind::kl ? 2 * latent_dim : latent_dim; }

  // Frame-count law: T = ceil(L / total_stride).
  std::size_t frames_for(std::size_t samples) const { return (samples + total_stride() - 1) / total_stride(); }
  std::size_t decoded_length(std::size_t frames) const { return frames * total_stride(); }

  std::size_t encoder_trunk_width() const { return encoder_channels.empty() ? stem_channels : encoder_channels.back(); }
  std::size_t encoder_final_width() const {
    if (enc_attn.enabled()) return enc_attn.dim;
    return final_channels ? final_channels : encoder_trunk_width();
  }
  std::size_t decoder_trunk_width() const { return dec_attn.enabled() ? dec_attn.dim : decoder_width; }

  void validate() const {
    if (sample_rate != kSampleRate) throw ConfigError("model: only 44100 Hz is supported");
    if (encoder_strides.empty() || encoder_strides.size() != encoder_channels.size())
      throw ConfigError("model: encoder_strides and encoder_channels must have equal nonzero length");
    if (decoder_upsample.empty() || decoder_upsample.size() != decoder_channels.size())
      throw ConfigError("model: decoder_upsample and decoder_channels must have equal nonzero length");
    for (auto s : encoder_strides)
      if (s < 2) throw ConfigError("model: encoder strides must be >= 2");
    for (auto s : decoder_upsample)
      if (s < 2) throw ConfigError("model: decoder upsample factors must be >= 2");
    if (final_downsample < 2) throw ConfigError("model: final_downsample must be >= 2");
    if (decoder_stride_product() * final_downsample != total_stride())
      throw ConfigError("model: decoder upsampling " + std::to_string(decoder_stride_product() * final_downsample) +
                        " does not invert encoder stride " + std::to_string(total_stride()));
    if (mel_fusion && mel.hop != encoder_stride_product())
      throw ConfigError("model: mel hop " + std::to_string(mel.hop) + " misaligned with encoder stride " +
                        std::to_string(encoder_stride_product()) + " at the fusion point");
    if (mel_head && mel.hop != decoder_stride_product())
      throw ConfigError("model: mel hop " + std::to_string(mel.hop) + " misaligned with decoder stride " +
                        std::to_string(decoder_stride_product()) + " at the mel head");
    if (mel_fusion || mel_head) mel.validate();
    if (enc_attn.enabled() != dec_attn.enabled())
      throw ConfigError("model: attention must be enabled in both encoder and decoder or neither");
    enc_attn.validate();
    dec_attn.validate();
    if (enc_attn.enabled() && (enc_attn.cond_dim != cond_dim || dec_attn.cond_dim != cond_dim))
      throw ConfigError("model: attention cond_dim must equal the format embedding width");
    if (latent_dim == 0 || kernel == 0 || stem_channels == 0) throw ConfigError("model: zero-sized dimension");
  }

  // 13.125 Hz variant.
  static ModelConfig low_rate() {
    ModelConfig c;
    c.name = "genae-13.125hz";
    return c;
  }

  // 36.75 Hz variant.
  static ModelConfig high_rate() {
    ModelConfig c;
    c.name = "genae-36.75hz";
    c.encoder_strides = {15, 10};
    c.final_downsample = 8;
    c.mel.hop = 150;
    c.enc_attn.depth = 2;
    c.dec_attn.depth = 4;
    c.decoder_upsample = {15, 5, 2};
    return c;
  }

  // Same strides as the 13.125 Hz variant with widths sized for CPU training.
  static ModelConfig toy() {
    ModelConfig c;
    c.name = "genae-toy";
    c.stem_channels = 8;
    c.encoder_channels = {16, 32};
    c.enc_attn = AttnSpec{1, 64, 128, 4, 16, 32, 0.05, true};
    c.dec_attn = AttnSpec{1, 96, 192, 4, 16, 32, 0.05, true};
    c.cond_dim = 32;
    c.decoder_width = 96;
    c.decoder_channels = {32, 16, 8};
    return c;
  }

  static ModelConfig by_name(const std::string& n) {
    if (n == "13.125" || n == "low" || n == "genae-13.125hz") return low_rate();
    if (n == "36.75" || n == "high" || n == "genae-36.75hz") return high_rate();
    if (n == "toy" || n == "genae-toy") return toy();
    throw ConfigError("unknown model variant '" + n + "'");
  }
};

// ---------------------------------------------------------------------------
// JSON

inline Activation parse_activation(const std::string& s) {
  if (s == "snake") return Activation::snake;
  if (s == "snakelite") return Activation::snakelite;
  if (s == "elu") return Activation::elu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

inline void to_json(nlohmann::json& j, const MelConfig& m) {
  j = {{"n_mels", m.n_mels}, {"window", m.window}, {"hop", m.hop},
       {"sample_rate", m.sample_rate}, {"fmin", m.fmin}, {"fmax", m.fmax}};
}
inline void from_json(const nlohmann::json& j, MelConfig& m) {
  j.at("n_mels").get_to(m.n_mels);
  j.at("window").get_to(m.window);
  j.at("hop").get_to(m.hop);
  j.at("sample_rate").get_to(m.sample_rate);
  j.at("fmin").get_to(m.fmin);
  j.at("fmax").get_to(m.fmax);
}

inline void to_json(nlohmann::json& j, const AttnSpec& a) {
  j = {{"depth", a.depth}, {"dim", a.dim},           {"ffn", a.ffn},         {"heads", a.heads},
       {"window", a.window}, {"cond_dim", a.cond_dim}, {"dropout", a.dropout}, {"rope", a.rope}};
}
inline void from_json(const nlohmann::json& j, AttnSpec& a) {
  j.at("depth").get_to(a.depth);
  j.at("dim").get_to(a.dim);
  j.at("ffn").get_to(a.ffn);
  j.at("heads").get_to(a.heads);
  j.at("window").get_to(a.window);
  j.at("cond_dim").get_to(a.cond_dim);
  j.at("dropout").get_to(a.dropout);
  j.at("rope").get_to(a.rope);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"name", c.name},
       {"sample_rate", c.sample_rate},
       {"encoder_activation", activation_name(c.encoder_activation)},
       {"stem_channels", c.stem_channels},
       {"encoder_channels", c.encoder_channels},
       {"encoder_strides", c.encoder_strides},
       {"early_downsample", c.early_downsample},
       {"separable", c.separable},
       {"final_downsample", c.final_downsample},
       {"final_channels", c.final_channels},
       {"dilations", c.dilations},
       {"kernel", c.kernel},
       {"mel", c.mel},
       {"mel_fusion", c.mel_fusion},
       {"mel_head", c.mel_head},
       {"enc_attn", c.enc_attn},
       {"dec_attn", c.dec_attn},
       {"latent_dim", c.latent_dim},
       {"bottleneck", c.bottleneck == BottleneckKind::kl ? "kl" : "plain"},
       {"decoder_activation", activation_name(c.decoder_activation)},
       {"decoder_width", c.decoder_width},
       {"decoder_upsample", c.decoder_upsample},
       {"decoder_channels", c.decoder_channels},
       {"dropout", c.dropout},
       {"cond_dim", c.cond_dim},
       {"format_conditioning", c.format_conditioning},
       {"adaln_init_std", c.adaln_init_std},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("name").get_to(c.name);
  j.at("sample_rate").get_to(c.sample_rate);
  c.encoder_activation = parse_activation(j.at("encoder_activation").get<std::string>());
  j.at("stem_channels").get_to(c.stem_channels);
  j.at("encoder_channels").get_to(c.encoder_channels);
  j.at("encoder_strides").get_to(c.encoder_strides);
  j.at("early_downsample").get_to(c.early_downsample);
  j.at("separable").get_to(c.separable);
  j.at("final_downsample").get_to(c.final_downsample);
  j.at("final_channels").get_to(c.final_channels);
  j.at("dilations").get_to(c.dilations);
  j.at("kernel").get_to(c.kernel);
  j.at("mel").get_to(c.mel);
  j.at("mel_fusion").get_to(c.mel_fusion);
  j.at("mel_head").get_to(c.mel_head);
  j.at("enc_attn").get_to(c.enc_attn);
  j.at("dec_attn").get_to(c.dec_attn);
  j.at("latent_dim").get_to(c.latent_dim);
  c.bottleneck = j.at("bottleneck").get<std::string>() == "kl" ? BottleneckKind::kl : BottleneckKind::plain;
  c.decoder_activation = parse_activation(j.at("decoder_activation").get<std::string>());
  j.at("decoder_width").get_to(c.decoder_width);
  j.at("decoder_upsample").get_to(c.decoder_upsample);
  j.at("decoder_channels").get_to(c.decoder_channels);
  j.at("dropout").get_to(c.dropout);
  j.at("cond_dim").get_to(c.cond_dim);
  j.at("format_conditioning").get_to(c.format_conditioning);
  j.at("adaln_init_std").get_to(c.adaln_init_std);
  j.at("seed").get_to(c.seed);
}

}  // namespace genae
