#pragma once

// Analytic multiply-accumulate counts over the model graph, the real-time
// factor benchmark over the architecture ladder, and the context-capacity
// estimator.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "genae/model.hpp"

namespace genae {

// ---------------------------------------------------------------------------
// Analytic costs. Each entry mirrors one counted op in the forward pass:
// dense conv L'·Ci·Co·K, separable L'·(Ci·K + Ci·Co), transposed L·Ci·Co·K,
// linear T·in·out, windowed attention 2·Σw²·hd per head.

struct LayerCost {
  std::string name;
  std::string kind;       // conv, separable, depthwise, transposed, linear, attention
  std::size_t length = 0; // output positions
  std::size_t width = 0;  // output channels
  std::uint64_t macs = 0;
  bool encoder = true;
};

struct CostReport {
  std::size_t samples = 0;
  std::size_t frames = 0;
  std::vector<LayerCost> layers;

  std::uint64_t encoder_macs() const {
    std::uint64_t s = 0;
    for (const auto& l : layers)
      if (l.encoder) s += l.macs;
    return s;
  }
  std::uint64_t decoder_macs() const {
    std::uint64_t s = 0;
    for (const auto& l : layers)
      if (!l.encoder) s += l.macs;
    return s;
  }
  std::uint64_t total_macs() const { return encoder_macs() + decoder_macs(); }

  // Bytes to hold every layer output at once at the given precision.
  std::uint64_t activation_bytes(std::size_t bytes_per_value, bool encoder_side) const {
    std::uint64_t s = 0;
    for (const auto& l : layers)
      if (l.encoder == encoder_side) s += static_cast<std::uint64_t>(l.length) * l.width * bytes_per_value;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"samples", samples},           {"frames", frames},
                        {"encoder_macs", encoder_macs()}, {"decoder_macs", decoder_macs()},
                        {"total_macs", total_macs()}};
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers)
      j["layers"].push_back({{"name", l.name}, {"kind", l.kind}, {"length", l.length}, {"width", l.width},
                             {"macs", l.macs}, {"side", l.encoder ? "encoder" : "decoder"}});
    return j;
  }
};

inline std::uint64_t conv_macs(const Conv1dSpec& s, std::size_t len_in) {
  if (s.transposed) return static_cast<std::uint64_t>(len_in) * s.c_in * s.c_out * s.kernel;
  return static_cast<std::uint64_t>(s.output_length(len_in)) * s.macs_per_position();
}

inline std::uint64_t attention_core_macs(std::size_t frames, const AttnSpec& a) {
  std::uint64_t s = 0;
  for (std::size_t t0 = 0; t0 < frames; t0 += a.window) {
    const std::uint64_t w = std::min(a.window, frames - t0);
    s += 2 * w * w * (a.dim / a.heads) * a.heads;
  }
  return s;
}

namespace detail {

struct CostBuilder {
  CostReport& rep;
  bool encoder = true;

  void conv(const std::string& name, const Conv1dSpec& s, std::size_t len_in) {
    const std::size_t lout = s.output_length(len_in);
    rep.layers.push_back({name, s.transposed ? "transposed" : (s.separable ? "separable" : "conv"), lout, s.c_out,
                          conv_macs(s, len_in), encoder});
  }
  void depthwise(const std::string& name, std::size_t c, std::size_t k, std::size_t len) {
    rep.layers.push_back({name, "depthwise", len, c, static_cast<std::uint64_t>(c) * k * len, encoder});
  }
  void linear(const std::string& name, std::size_t rows, std::size_t in, std::size_t out) {
    rep.layers.push_back({name, "linear", rows, out, static_cast<std::uint64_t>(rows) * in * out, encoder});
  }
  void attention(const std::string& name, const AttnSpec& a, std::size_t frames) {
    for (std::size_t i = 0; i < a.depth; ++i) {
      const std::string p = name + "." + std::to_string(i);
      linear(p + ".adaln", 1, a.cond_dim, 4 * a.dim);
      linear(p + ".qkv", frames, a.dim, 3 * a.dim);
      rep.layers.push_back({p + ".attn", "attention", frames, a.dim, attention_core_macs(frames, a), encoder});
      linear(p + ".proj", frames, a.dim, a.dim);
      linear(p + ".ff1", frames, a.dim, a.ffn);
      linear(p + ".ff2", frames, a.ffn, a.dim);
    }
  }
  void residual_unit(const std::string& name, std::size_t c, std::size_t k, std::size_t d, bool separable,
                     std::size_t len) {
    if (separable) {
      depthwise(name + ".dw", c, k, len);
      conv(name + ".pw", Conv1dSpec::same(c, c, 1), len);
    } else {
      conv(name + ".conv", Conv1dSpec::same(c, c, k, d), len);
    }
  }
};

}  // namespace detail

// Costs of encoding `samples` samples (padded to whole frames) and decoding
// the resulting frames.
inline CostReport flops(const ModelConfig& cfg, std::size_t samples) {
  cfg.validate();
  CostReport rep;
  rep.samples = samples;
  rep.frames = cfg.frames_for(samples);
  std::size_t len = cfg.decoded_length(rep.frames);
  detail::CostBuilder b{rep, true};

  b.conv("enc.stem", Conv1dSpec::same(1, cfg.stem_channels, cfg.kernel), len);
  std::size_t c = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.encoder_strides.size(); ++i) {
    const std::string p = "enc.block" + std::to_string(i);
    const std::size_t co = cfg.encoder_channels[i], r = cfg.encoder_strides[i];
    const auto down = Conv1dSpec::down(c, co, r, cfg.separable);
    if (cfg.early_downsample) {
      b.conv(p + ".down", down, len);
      len = down.output_length(len);
      for (std::size_t u = 0; u < cfg.dilations.size(); ++u)
        b.residual_unit(p + ".unit" + std::to_string(u), co, cfg.kernel, cfg.dilations[u], cfg.separable, len);
    } else {
      for (std::size_t u = 0; u < cfg.dilations.size(); ++u)
        b.residual_unit(p + ".unit" + std::to_string(u), c, cfg.kernel, cfg.dilations[u], cfg.separable, len);
      b.conv(p + ".down", down, len);
      len = down.output_length(len);
    }
    c = co;
  }
  if (cfg.mel_fusion) {
    b.conv("enc.fuse", Conv1dSpec::same(c + cfg.mel.n_mels, c, 1), len);
    b.linear("enc.fusion_head", len, c, cfg.mel.n_mels);
  }
  std::size_t w = c;
  if (cfg.enc_attn.enabled()) {
    b.linear("enc.attn_in", len, c, cfg.enc_attn.dim);
    b.attention("enc." + std::string(kAttnPreFinal), cfg.enc_attn, len);
    w = cfg.enc_attn.dim;
  }
  const std::size_t wf = cfg.encoder_final_width();
  const auto fin = Conv1dSpec::down(w, wf, cfg.final_downsample, cfg.separable);
  b.conv("enc.final_down", fin, len);
  len = fin.output_length(len);
  if (cfg.enc_attn.enabled()) b.attention("enc." + std::string(kAttnPostFinal), cfg.enc_attn, len);
  b.linear("enc.latent_head", len, wf, cfg.latent_params());

  b.encoder = false;
  const std::size_t t = len;
  const std::size_t dw = cfg.decoder_trunk_width();
  b.linear("dec.in", t, cfg.latent_dim, dw);
  if (cfg.dec_attn.enabled()) b.attention("dec." + std::string(kAttnPostBottleneck), cfg.dec_attn, t);
  const auto first = Conv1dSpec::up(dw, dw, cfg.final_downsample);
  b.conv("dec.first_up", first, t);
  len = first.output_length(t);
  if (cfg.dec_attn.enabled()) b.attention("dec." + std::string(kAttnPostFirstUp), cfg.dec_attn, len);
  if (cfg.mel_head) b.linear("dec.mel_head", len, dw, cfg.mel.n_mels);
  c = dw;
  for (std::size_t i = 0; i < cfg.decoder_upsample.size(); ++i) {
    const std::string p = "dec.stage" + std::to_string(i);
    const std::size_t co = cfg.decoder_channels[i];
    const auto up = Conv1dSpec::up(c, co, cfg.decoder_upsample[i]);
    b.conv(p + ".up", up, len);
    len = up.output_length(len);
    for (std::size_t u = 0; u < cfg.dilations.size(); ++u)
      b.residual_unit(p + ".unit" + std::to_string(u), co, cfg.kernel, cfg.dilations[u], false, len);
    c = co;
  }
  b.conv("dec.out", Conv1dSpec::same(c, 1, cfg.kernel), len);
  return rep;
}

// Encoder and decoder MACs per second of audio.
struct CostPerSecond {
  double encoder = 0, decoder = 0;
};

inline CostPerSecond flops_per_second(const ModelConfig& cfg, double seconds = 60.0) {
  const auto n = static_cast<std::size_t>(seconds * cfg.sample_rate);
  const auto r = flops(cfg, n);
  return {static_cast<double>(r.encoder_macs()) / seconds, static_cast<double>(r.decoder_macs()) / seconds};
}

// ---------------------------------------------------------------------------
// Architecture ladder: each step adds one change to the previous config.

struct LadderStep {
  std::string name;
  ModelConfig config;
  bool speed_step = false;  // one of the four encoder-speed changes
};

inline std::vector<LadderStep> ablation_ladder() {
  std::vector<LadderStep> out;
  ModelConfig c;
  c.name = "base";
  c.encoder_activation = Activation::snake;
  c.decoder_activation = Activation::snake;
  c.stem_channels = 16;
  c.encoder_strides = {2, 4, 5, 6};
  c.encoder_channels = {32, 32, 64, 64};
  c.early_downsample = false;
  c.separable = false;
  c.final_downsample = 14;
  c.final_channels = 64;
  c.mel_fusion = false;
  c.mel_head = false;
  c.enc_attn.depth = 0;
  c.dec_attn.depth = 0;
  c.format_conditioning = false;
  c.decoder_width = 128;
  c.decoder_upsample = {15, 8, 2};
  c.decoder_channels = {64, 32, 16};
  c.dropout = 0;
  out.push_back({"Base", c, false});
  c.encoder_activation = Activation::elu;
  c.decoder_activation = Activation::snakelite;
  c.name = "efficient_activations";
  out.push_back({"+Efficient activations", c, true});
  c.early_downsample = true;
  c.name = "early_downsampling";
  out.push_back({"+Early downsampling", c, true});
  c.separable = true;
  c.name = "separable";
  out.push_back({"+Separable convolutions", c, true});
  c.encoder_strides = {16, 15};
  c.encoder_channels = {32, 64};
  c.name = "aggressive_downsampling";
  out.push_back({"+Aggressive downsampling", c, true});
  c.mel_fusion = true;
  c.mel_head = true;
  c.name = "mel_fusion";
  out.push_back({"+Mel fusion", c, false});
  c.enc_attn = AttnSpec{1, 64, 128, 4, 16, 32, 0.0, true};
  c.dec_attn = AttnSpec{1, 128, 256, 4, 16, 32, 0.0, true};
  c.cond_dim = 32;
  c.format_conditioning = true;
  c.name = "attention_format";
  out.push_back({"+Attention/format", c, false});
  return out;
}

struct RtfStats {
  std::vector<double> seconds;  // wall time per repetition
  double audio_seconds = 0;
  double median_rtf = 0, q1_rtf = 0, q3_rtf = 0;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const double f = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
}

inline RtfStats summarize_rtf(std::vector<double> seconds, double audio_seconds) {
  RtfStats s;
  s.audio_seconds = audio_seconds;
  s.seconds = seconds;
  std::vector<double> rtf;
  for (double t : seconds) rtf.push_back(audio_seconds / std::max(t, 1e-12));
  s.median_rtf = quantile(rtf, 0.5);
  s.q1_rtf = quantile(rtf, 0.25);
  s.q3_rtf = quantile(rtf, 0.75);
  return s;
}

inline constexpr std::size_t kMinBenchReps = 5;

// Times `run` (which processes audio_seconds of audio) after `warmup`
// untimed calls.
inline RtfStats time_rtf(const std::function<void()>& run, double audio_seconds, std::size_t reps,
                         std::size_t warmup = 1) {
  if (reps < kMinBenchReps)
    throw ConfigError("bench: at least " + std::to_string(kMinBenchReps) + " repetitions required, got " +
                      std::to_string(reps));
  for (std::size_t i = 0; i < warmup; ++i) run();
  std::vector<double> secs;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return summarize_rtf(std::move(secs), audio_seconds);
}

struct BenchResult {
  std::string name;
  RtfStats encode, decode;
};

// Encodes and decodes every channel of every clip, channel by channel.
inline BenchResult rtf_bench(const LadderStep& step, const std::vector<AudioBuffer>& clips, std::size_t reps,
                             bool with_decode = true) {
  GenAE<float> model(step.config);
  NoGradGuard ng;
  double audio_seconds = 0;
  for (const auto& c : clips) audio_seconds += c.seconds();
  std::vector<Tensor<float>> latents;
  auto encode_all = [&] {
    latents.clear();
    for (const auto& c : clips)
      for (std::size_t ch = 0; ch < c.num_channels(); ++ch) {
        const FormatToken f = ch == 0 ? FormatToken::left : FormatToken::right;
        latents.push_back(slice(model.encode(c.channels[ch], f).params, 1, 0, step.config.latent_dim));
      }
  };
  BenchResult r;
  r.name = step.name;
  r.encode = time_rtf(encode_all, audio_seconds, reps);
  if (with_decode) {
    auto decode_all = [&] {
      for (std::size_t i = 0; i < latents.size(); ++i) (void)model.decode(latents[i], FormatToken::left);
    };
    r.decode = time_rtf(decode_all, audio_seconds, reps);
  }
  return r;
}

// Reference ceiling: copying the audio once.
inline RtfStats copy_pipeline_rtf(const std::vector<AudioBuffer>& clips, std::size_t reps) {
  double audio_seconds = 0;
  for (const auto& c : clips) audio_seconds += c.seconds();
  std::vector<float> sink;
  return time_rtf(
      [&] {
        for (const auto& c : clips)
          for (const auto& ch : c.channels) sink.assign(ch.begin(), ch.end());
      },
      audio_seconds, reps);
}

// ---------------------------------------------------------------------------
// Context capacity

enum class ModelClass { lm, diffusion };

inline ModelClass parse_model_class(const std::string& s) {
  if (s == "lm") return ModelClass::lm;
  if (s == "diffusion") return ModelClass::diffusion;
  throw ConfigError("unknown model class '" + s + "' (expected lm or diffusion)");
}

struct ContextModel {
  double gpu_bytes = 40e9;
  double activation_fraction = 0.8;
  std::size_t batch = 8;
  std::size_t bytes_per_value = 2;
  std::size_t lm_layers = 24, lm_dim = 2048;
  std::size_t diffusion_layers = 24, diffusion_dim = 1024;
  // Token budgets fitted from one anchor row per class: 86 Hz for 127 s
  // (lm) and 21.5 Hz for 106 s (diffusion).
  double lm_tokens = 10922;
  double diffusion_tokens = 2279;

  double budget_bytes() const { return gpu_bytes * activation_fraction; }

  // Fitted estimate: seconds = tokens / rate.
  double context_seconds(double rate_hz, ModelClass c) const {
    if (!(rate_hz > 0)) throw ConfigError("context: latent rate must be positive");
    return (c == ModelClass::lm ? lm_tokens : diffusion_tokens) / rate_hz;
  }

  // Keys and values for every layer, every token, every batch item.
  double kv_bytes_per_token(ModelClass c) const {
    const double layers = static_cast<double>(c == ModelClass::lm ? lm_layers : diffusion_layers);
    const double dim = static_cast<double>(c == ModelClass::lm ? lm_dim : diffusion_dim);
    return 2.0 * layers * dim * static_cast<double>(bytes_per_value) * static_cast<double>(batch);
  }

  double first_principles_seconds(double rate_hz, ModelClass c) const {
    if (!(rate_hz > 0)) throw ConfigError("context: latent rate must be positive");
    return budget_bytes() / kv_bytes_per_token(c) / rate_hz;
  }
};

}  // namespace genae
