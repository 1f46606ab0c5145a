#pragma once

// Command-line front end: subcommands over the WAV, latent, token and
// checkpoint formats. Kept in a header so tests can drive it in-process.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "genae/bottleneck.hpp"
#include "genae/io.hpp"
#include "genae/metrics.hpp"
#include "genae/model.hpp"
#include "genae/perfmodel.hpp"
#include "genae/training.hpp"

namespace genae::cli {

inline constexpr const char* kCheckpointDirEnv = "GENAE_CHECKPOINT_DIR";

// Channel layouts accepted by --format.
enum class Layout { automatic, mono, left, right, mid, side, stereo, midside };

inline Layout parse_layout(const std::string& s) {
  static const std::map<std::string, Layout> names = {
      {"auto", Layout::automatic}, {"mono", Layout::mono}, {"left", Layout::left},     {"right", Layout::right},
      {"mid", Layout::mid},        {"side", Layout::side}, {"stereo", Layout::stereo}, {"midside", Layout::midside}};
  auto it = names.find(s);
  if (it == names.end()) throw ConfigError("unknown format '" + s + "'");
  return it->second;
}

inline const std::vector<std::string>& layout_names() {
  static const std::vector<std::string> v{"auto", "mono", "left", "right", "mid", "side", "stereo", "midside"};
  return v;
}

struct Stream {
  std::vector<float> audio;
  FormatToken format;
};

// Splits a buffer into per-channel passes with their format tokens. auto
// maps one channel to mono and two to stereo.
inline std::vector<Stream> plan_streams(const AudioBuffer& a, Layout layout) {
  a.validate();
  const std::size_t ch = a.num_channels();
  if (ch > 2) throw FormatError("input has " + std::to_string(ch) + " channels; 1 or 2 supported");
  if (layout == Layout::automatic) layout = ch == 1 ? Layout::mono : Layout::stereo;
  auto need_stereo = [&](const char* what) {
    if (ch != 2) throw ConfigError(std::string("--format ") + what + " needs stereo input");
  };
  std::vector<float> m, s;
  if (ch == 2) lr_to_ms(a.channels[0], a.channels[1], m, s);
  switch (layout) {
    case Layout::mono:
      return {{ch == 1 ? a.channels[0] : m, FormatToken::mid}};
    case Layout::left:
      need_stereo("left");
      return {{a.channels[0], FormatToken::left}};
    case Layout::right:
      need_stereo("right");
      return {{a.channels[1], FormatToken::right}};
    case Layout::mid:
      need_stereo("mid");
      return {{m, FormatToken::mid}};
    case Layout::side:
      need_stereo("side");
      return {{s, FormatToken::side}};
    case Layout::stereo:
      need_stereo("stereo");
      return {{a.channels[0], FormatToken::left}, {a.channels[1], FormatToken::right}};
    case Layout::midside:
      need_stereo("midside");
      return {{m, FormatToken::mid}, {s, FormatToken::side}};
    case Layout::automatic:
      break;
  }
  throw std::logic_error("unreachable layout");
}

// Arranges decoded streams for output. stereo converts an M/S pair to L/R,
// midside converts an L/R pair to M/S; auto keeps L/R and converts M/S.
inline AudioBuffer arrange_output(std::vector<Stream> streams, Layout layout) {
  AudioBuffer out;
  out.sample_rate = kSampleRate;
  auto is = [&](FormatToken a, FormatToken b) {
    return streams.size() == 2 && streams[0].format == a && streams[1].format == b;
  };
  const bool lr = is(FormatToken::left, FormatToken::right);
  const bool ms = is(FormatToken::mid, FormatToken::side);
  if (layout == Layout::automatic) layout = streams.size() == 1 ? Layout::mono : Layout::stereo;
  std::vector<float> a, b;
  if (layout == Layout::stereo && ms) {
    ms_to_lr(streams[0].audio, streams[1].audio, a, b);
    out.channels = {std::move(a), std::move(b)};
  } else if (layout == Layout::midside && lr) {
    lr_to_ms(streams[0].audio, streams[1].audio, a, b);
    out.channels = {std::move(a), std::move(b)};
  } else if ((layout == Layout::stereo && lr) || (layout == Layout::midside && ms) ||
             (layout != Layout::stereo && layout != Layout::midside && streams.size() == 1)) {
    for (auto& s : streams) out.channels.push_back(std::move(s.audio));
  } else {
    throw ConfigError("cannot arrange the stored channel streams as the requested --format");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model loading

struct Loaded {
  std::unique_ptr<GenAE<float>> model;
  std::unique_ptr<ReBottleneck<float>> rb;
  std::string source;  // checkpoint path or "untrained"
};

inline ReBottleneckConfig default_rebottleneck(const ModelConfig& m) {
  auto c = m.name == ModelConfig::toy().name ? ReBottleneckConfig::toy() : ReBottleneckConfig{};
  c.latent_dim = m.latent_dim;
  return c;
}

inline std::string variant_file(const std::string& variant) {
  return ModelConfig::by_name(variant).name + ".genck";
}

inline nlohmann::json model_record(const GenAE<float>& m, const ReBottleneck<float>* rb, nlohmann::json meta) {
  nlohmann::json j = {{"model", m.config()}, {"meta", std::move(meta)}};
  if (rb) j["rebottleneck"] = rb->config();
  return j;
}

inline ParamList<float> all_params(const GenAE<float>& m, const ReBottleneck<float>* rb) {
  auto ps = m.parameters();
  if (rb)
    for (auto& p : rb->parameters()) ps.push_back(p);
  return ps;
}

// Resolves the checkpoint: explicit path, then <dir>/<variant>.genck, else
// an untrained model seeded from `seed`.
inline Loaded load_model(const std::string& checkpoint, const std::string& dir, const std::string& variant,
                         std::uint64_t seed, bool need_rb, std::ostream& err) {
  std::filesystem::path path = checkpoint;
  if (path.empty() && !dir.empty() && !variant.empty()) {
    auto cand = std::filesystem::path(dir) / variant_file(variant);
    if (std::filesystem::exists(cand)) path = cand;
  }
  Loaded l;
  if (path.empty()) {
    auto cfg = ModelConfig::by_name(variant.empty() ? "13.125" : variant);
    cfg.seed = seed;
    l.model = std::make_unique<GenAE<float>>(cfg);
    if (need_rb) {
      auto rc = default_rebottleneck(cfg);
      rc.seed = seed + 1;
      l.rb = std::make_unique<ReBottleneck<float>>(rc);
    }
    l.source = "untrained";
    err << "note: no checkpoint given; using untrained " << cfg.name << " weights (seed " << seed << ")\n";
    return l;
  }
  auto ck = read_checkpoint(path);
  if (!ck.record.contains("model")) throw IncompatibleError(path.string() + ": checkpoint has no model record");
  ModelConfig cfg;
  try {
    cfg = ck.record.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleError(path.string() + ": unreadable model record: " + e.what());
  }
  if (!variant.empty()) {
    const auto want = ModelConfig::by_name(variant);
    if (want.total_stride() != cfg.total_stride() || want.latent_dim != cfg.latent_dim)
      throw IncompatibleError(path.string() + ": checkpoint is " + cfg.name + " (" + std::to_string(cfg.latent_rate()) +
                              " Hz), requested " + want.name + " (" + std::to_string(want.latent_rate()) + " Hz)");
  }
  l.model = std::make_unique<GenAE<float>>(cfg);
  load_params(ck, l.model->parameters(), path.string());
  if (ck.record.contains("rebottleneck")) {
    l.rb = std::make_unique<ReBottleneck<float>>(ck.record["rebottleneck"].get<ReBottleneckConfig>());
    load_params(ck, l.rb->parameters(), path.string());
  } else if (need_rb) {
    throw IncompatibleError(path.string() + ": checkpoint has no Re-Bottleneck; train one with train-toy");
  }
  l.source = path.string();
  return l;
}

inline Tensor<float> latent_mean(const GenAE<float>& m, std::span<const float> x, FormatToken f) {
  NoGradGuard ng;
  return kl_sample(m.encode(x, f).params, nullptr).z;
}

inline std::vector<float> decode_crop(const GenAE<float>& m, const Tensor<float>& z, FormatToken f, std::size_t len) {
  NoGradGuard ng;
  const auto audio = m.decode(z, f).audio;
  const auto a = audio.data();
  if (len > a.size()) throw FormatError("stored original length exceeds decoded length");
  return std::vector<float>(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(len));
}

inline std::string file_magic(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "'");
  char buf[5] = {};
  in.read(buf, 5);
  return std::string(buf, static_cast<std::size_t>(in.gcount()));
}

// ---------------------------------------------------------------------------
// Application

struct Options {
  std::string input, output, checkpoint, checkpoint_dir, variant, format = "auto", latent = "kl", log, report;
  std::uint64_t seed = 0;
  bool bf16 = false, float_wav = false, lr_only = false, ablation = false, json = false, vq = false;
  std::size_t steps = TrainConfig::toy().steps, batch = TrainConfig::toy().batch,
              adversarial_start = TrainConfig::toy().adversarial_start, rb_steps = 100, reps = kMinBenchReps, count = 8;
  std::string precision = "both", model_class = "lm";
  double rate_hz = 0, seconds = 60, clips = 2;
  std::vector<std::string> inputs;
};

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err), app_("GenAE audio autoencoder tools", "genae") {
    app_.require_subcommand(1);
    app_.option_defaults()->always_capture_default();
    app_.set_help_all_flag("--help-all", "Print help for every subcommand");
    build();
  }

  CLI::App& app() { return app_; }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
      dispatch();
      return 0;
    } catch (const CLI::CallForHelp& e) {
      return print_parse(e);
    } catch (const CLI::CallForAllHelp& e) {
      return print_parse(e);
    } catch (const CLI::ParseError& e) {
      app_.exit(e, out_, err_);
      return static_cast<int>(ErrorCode::usage);
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return static_cast<int>(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
      err_ << "error: " << e.what() << '\n';
      return static_cast<int>(ErrorCode::format);
    } catch (const std::invalid_argument& e) {
      err_ << "error: " << e.what() << '\n';
      return static_cast<int>(ErrorCode::usage);
    } catch (const std::exception& e) {
      err_ << "internal error: " << e.what() << '\n';
      return 1;
    }
  }

 private:
  int print_parse(const CLI::ParseError& e) {
    app_.exit(e, out_, err_);
    return 0;
  }

  void common_model(CLI::App* s, bool with_input_format) {
    s->add_option("--checkpoint,-c", o_.checkpoint, "Checkpoint file (.genck)");
    s->add_option("--checkpoint-dir", o_.checkpoint_dir, "Directory searched for <variant>.genck")
        ->envname(kCheckpointDirEnv);
    s->add_option("--rate,-r", o_.variant, "Model variant: 13.125, 36.75 or toy")
        ->check(CLI::IsMember({"13.125", "36.75", "toy"}));
    s->add_option("--seed", o_.seed, "Seed for untrained weights");
    s->add_flag("--bf16", o_.bf16, "Round every op output to bfloat16");
    if (with_input_format)
      s->add_option("--format,-f", o_.format, "Channel format")->check(CLI::IsMember(layout_names()), "FORMAT");
  }

  void build() {
    auto* enc = app_.add_subcommand("encode", "Encode a 44.1 kHz WAV to latents (.genal) or tokens (.genat)");
    enc->add_option("input", o_.input, "Input WAV")->required();
    enc->add_option("--output,-o", o_.output, "Output container")->required();
    enc->add_option("--latent", o_.latent, "Latent mode: kl (continuous) or vq (tokens)")
        ->check(CLI::IsMember({"kl", "vq"}));
    common_model(enc, true);
    enc->callback([this] { cmd_ = "encode"; });

    auto* dec = app_.add_subcommand("decode", "Decode a .genal or .genat container to WAV");
    dec->add_option("input", o_.input, "Input container")->required();
    dec->add_option("--output,-o", o_.output, "Output WAV")->required();
    dec->add_flag("--float", o_.float_wav, "Write 32-bit float WAV instead of 16-bit PCM");
    common_model(dec, true);
    dec->callback([this] { cmd_ = "decode"; });

    auto* tok = app_.add_subcommand("tokenize", "Quantize a .genal latent file to a .genat token file");
    tok->add_option("input", o_.input, "Input latent file")->required();
    tok->add_option("--output,-o", o_.output, "Output token file")->required();
    common_model(tok, false);
    tok->callback([this] { cmd_ = "tokenize"; });

    auto* det = app_.add_subcommand("detokenize", "Map a .genat token file back to a .genal latent file");
    det->add_option("input", o_.input, "Input token file")->required();
    det->add_option("--output,-o", o_.output, "Output latent file")->required();
    common_model(det, false);
    det->callback([this] { cmd_ = "detokenize"; });

    auto* tr = app_.add_subcommand("train-toy", "Train the toy model on synthetic stereo data");
    tr->add_option("--output,-o", o_.output, "Checkpoint to write (default <checkpoint-dir>/genae-toy.genck)");
    tr->add_option("--checkpoint-dir", o_.checkpoint_dir, "Default checkpoint directory")->envname(kCheckpointDirEnv);
    tr->add_option("--steps", o_.steps, "Autoencoder steps")->check(CLI::PositiveNumber);
    tr->add_option("--batch", o_.batch, "Format samples per step")->check(CLI::PositiveNumber);
    tr->add_option("--adversarial-start", o_.adversarial_start, "Step at which adversarial terms switch on");
    tr->add_option("--rebottleneck-steps", o_.rb_steps, "Re-Bottleneck steps after the autoencoder stage");
    tr->add_option("--seed", o_.seed, "Training seed");
    tr->add_option("--log", o_.log, "NDJSON training log");
    tr->add_flag("--lr-only", o_.lr_only, "Train on left/right channels only (ablation)");
    tr->callback([this] { cmd_ = "train-toy"; });

    auto* ev = app_.add_subcommand("eval", "SI-SDR, multi-resolution STFT and mel L1, plus L/R vs M/S mel columns");
    ev->add_option("inputs", o_.inputs, "WAV files (default: a synthetic stereo set)");
    ev->add_option("--count", o_.count, "Synthetic examples when no WAV is given");
    ev->add_option("--precision", o_.precision, "float32, bf16 or both")->check(CLI::IsMember({"float32", "bf16", "both"}));
    ev->add_option("--report", o_.report, "Write the JSON report here");
    ev->add_flag("--vq", o_.vq, "Route latents through the Re-Bottleneck quantizer");
    common_model(ev, false);
    ev->callback([this] { cmd_ = "eval"; });

    auto* be = app_.add_subcommand("bench", "Encode/decode real-time factor over the architecture ladder");
    be->add_option("--reps", o_.reps, "Measured repetitions (at least 5)");
    be->add_option("--seconds", o_.seconds, "Clip length in seconds")->check(CLI::PositiveNumber);
    be->add_option("--clips", o_.clips, "Number of stereo clips")->check(CLI::PositiveNumber);
    be->add_flag("--ablation", o_.ablation, "Run every ladder step (default: Base and the final step)");
    be->add_option("--report", o_.report, "Write the JSON results here");
    be->add_option("--seed", o_.seed, "Seed for the synthetic clips");
    be->callback([this] { cmd_ = "bench"; });

    auto* fl = app_.add_subcommand("flops", "Analytic multiply-accumulate counts");
    fl->add_option("--rate,-r", o_.variant, "Model variant (default: both full-size variants)")
        ->check(CLI::IsMember({"13.125", "36.75", "toy"}));
    fl->add_option("--seconds", o_.seconds, "Audio length in seconds")->check(CLI::PositiveNumber);
    fl->add_flag("--json", o_.json, "Print per-layer JSON instead of the table");
    fl->callback([this] { cmd_ = "flops"; });

    auto* cx = app_.add_subcommand("context", "Context capacity of a downstream model at a latent rate");
    cx->add_option("--class", o_.model_class, "lm or diffusion");
    cx->add_option("--rate", o_.rate_hz, "Latent rate in Hz (default: print the table)");
    cx->callback([this] { cmd_ = "context"; });
  }

  void dispatch() {
    if (cmd_ == "encode") return encode();
    if (cmd_ == "decode") return decode();
    if (cmd_ == "tokenize") return tokenize();
    if (cmd_ == "detokenize") return detokenize();
    if (cmd_ == "train-toy") return train();
    if (cmd_ == "eval") return eval();
    if (cmd_ == "bench") return bench();
    if (cmd_ == "flops") return flops_cmd();
    if (cmd_ == "context") return context();
  }

  Loaded load(bool need_rb) {
    return load_model(o_.checkpoint, o_.checkpoint_dir, o_.variant, o_.seed, need_rb, err_);
  }

  void encode() {
    const bool vq = o_.latent == "vq";
    auto audio = read_wav(o_.input);
    if (audio.sample_rate != kSampleRate)
      throw FormatError(o_.input + ": sample rate " + std::to_string(audio.sample_rate) + " Hz, expected " +
                        std::to_string(kSampleRate));
    const auto streams = plan_streams(audio, parse_layout(o_.format));
    auto l = load(vq);
    Bf16Guard bf(o_.bf16);
    const auto& cfg = l.model->config();
    const std::size_t frames = cfg.frames_for(audio.length());
    LatentFile lf{cfg.latent_rate(), static_cast<std::uint32_t>(cfg.latent_dim), {}, audio.length(), frames, {}};
    TokenFile tf;
    if (vq) {
      const auto& rc = l.rb->config();
      tf = TokenFile{cfg.latent_rate(), static_cast<std::uint16_t>(rc.n_codebooks),
                     static_cast<std::uint16_t>(rc.entries), {}, audio.length(), frames, {}};
    }
    for (const auto& s : streams) {
      auto z = latent_mean(*l.model, s.audio, s.format);
      if (vq) {
        tf.formats.push_back(s.format);
        tf.channels.push_back(l.rb->tokenize(z));
      } else {
        lf.formats.push_back(s.format);
        const auto d = z.data();
        lf.channels.emplace_back(d.begin(), d.end());
      }
    }
    nlohmann::json summary = {{"frames", frames}, {"rate_hz", cfg.latent_rate()}, {"streams", streams.size()},
                              {"samples", audio.length()}, {"latent", o_.latent}};
    if (vq) {
      write_tokens(o_.output, tf);
      summary["bitrate_bps"] = rvq_bitrate(cfg.latent_rate(), tf.n_codebooks, tf.entries) * streams.size();
    } else {
      write_latents(o_.output, lf);
    }
    out_ << summary.dump() << '\n';
  }

  void decode() {
    const auto magic = file_magic(o_.input);
    const bool vq = magic == "GENAT";
    if (!vq && magic != "GENAL")
      throw FormatError(o_.input + ": bad magic (expected GENAL or GENAT container)");
    auto l = load(vq);
    Bf16Guard bf(o_.bf16);
    const auto& cfg = l.model->config();
    std::vector<Stream> streams;
    if (vq) {
      const auto tf = read_tokens(o_.input);
      check_rate(tf.rate, cfg);
      if (tf.n_codebooks != l.rb->config().n_codebooks || tf.entries != l.rb->config().entries)
        throw IncompatibleError(o_.input + ": token layout does not match the checkpoint's quantizer");
      for (std::size_t c = 0; c < tf.channels.size(); ++c) {
        auto z = l.rb->detokenize(tf.channels[c], tf.frames);
        streams.push_back({decode_crop(*l.model, z, tf.formats[c], tf.original_length), tf.formats[c]});
      }
    } else {
      const auto lf = read_latents(o_.input);
      check_rate(lf.rate, cfg);
      if (lf.dim != cfg.latent_dim) throw IncompatibleError(o_.input + ": latent width does not match the checkpoint");
      for (std::size_t c = 0; c < lf.channels.size(); ++c) {
        Tensor<float> z(Shape{lf.frames, lf.dim}, lf.channels[c]);
        streams.push_back({decode_crop(*l.model, z, lf.formats[c], lf.original_length), lf.formats[c]});
      }
    }
    const auto audio = arrange_output(std::move(streams), parse_layout(o_.format));
    write_wav(o_.output, audio, o_.float_wav ? WavEncoding::float32 : WavEncoding::pcm16);
    out_ << nlohmann::json{{"samples", audio.length()}, {"channels", audio.num_channels()}}.dump() << '\n';
  }

  void check_rate(double rate, const ModelConfig& cfg) const {
    if (std::abs(rate - cfg.latent_rate()) > 1e-9)
      throw IncompatibleError(o_.input + ": container rate " + std::to_string(rate) + " Hz, checkpoint rate " +
                              std::to_string(cfg.latent_rate()) + " Hz");
  }

  void tokenize() {
    auto l = load(true);
    const auto lf = read_latents(o_.input);
    check_rate(lf.rate, l.model->config());
    if (lf.dim != l.rb->config().latent_dim) throw IncompatibleError(o_.input + ": latent width does not match");
    const auto& rc = l.rb->config();
    TokenFile tf{lf.rate, static_cast<std::uint16_t>(rc.n_codebooks), static_cast<std::uint16_t>(rc.entries),
                 lf.formats, lf.original_length, lf.frames, {}};
    for (const auto& c : lf.channels) tf.channels.push_back(l.rb->tokenize(Tensor<float>(Shape{lf.frames, lf.dim}, c)));
    write_tokens(o_.output, tf);
    out_ << nlohmann::json{{"frames", tf.frames}, {"bitrate_bps", rvq_bitrate(tf.rate, tf.n_codebooks, tf.entries) *
                                                                      tf.channels.size()}}
                .dump()
         << '\n';
  }

  void detokenize() {
    auto l = load(true);
    const auto tf = read_tokens(o_.input);
    check_rate(tf.rate, l.model->config());
    LatentFile lf{tf.rate, static_cast<std::uint32_t>(l.rb->config().latent_dim), tf.formats, tf.original_length,
                  tf.frames, {}};
    for (const auto& c : tf.channels) {
      const auto z = l.rb->detokenize(c, tf.frames);
      const auto d = z.data();
      lf.channels.emplace_back(d.begin(), d.end());
    }
    write_latents(o_.output, lf);
    out_ << nlohmann::json{{"frames", lf.frames}}.dump() << '\n';
  }

  void train() {
    auto cfg = TrainConfig::toy();
    cfg.steps = o_.steps;
    cfg.batch = o_.batch;
    cfg.adversarial_start = o_.adversarial_start;
    cfg.seed = o_.seed;
    cfg.lr_only = o_.lr_only;
    cfg.log_path = o_.log;
    std::filesystem::path out = o_.output;
    if (out.empty()) out = std::filesystem::path(o_.checkpoint_dir.empty() ? "." : o_.checkpoint_dir) / variant_file("toy");
    cfg.checkpoint_path = out.string() + ".ae";
    auto mc = ModelConfig::toy();
    mc.seed = o_.seed;
    GenAE<float> model(mc);
    ToyTrainer trainer(model, cfg);
    const auto res = trainer.run();
    std::filesystem::remove(cfg.checkpoint_path);
    nlohmann::json meta = {{"steps", cfg.steps}, {"seed", cfg.seed}, {"beta", res.final_beta},
                           {"lr_only", cfg.lr_only}, {"heldout_mel_before", res.heldout_mel_before},
                           {"heldout_mel_after", res.heldout_mel_after}};
    std::unique_ptr<ReBottleneck<float>> rb;
    if (o_.rb_steps) {
      auto rc = default_rebottleneck(mc);
      rc.seed = o_.seed + 1;
      rb = std::make_unique<ReBottleneck<float>>(rc);
      auto rcfg = ReBottleneckTrainConfig::toy();
      rcfg.steps = o_.rb_steps;
      rcfg.seed = o_.seed;
      const auto rr = rebottleneck_train(model, *rb, rcfg);
      meta["rebottleneck_final_loss"] = rr.loss.back();
    }
    write_checkpoint(out, model_record(model, rb.get(), meta), all_params(model, rb.get()));
    meta["checkpoint"] = out.string();
    out_ << meta.dump() << '\n';
  }

  void eval() {
    auto l = load(o_.vq);
    std::vector<AudioBuffer> set;
    if (o_.inputs.empty()) {
      SynthConfig sc;
      sc.length = l.model->config().total_stride() * 4;
      set = synth_dataset(o_.count, o_.seed + 1000, sc);
    } else {
      for (const auto& p : o_.inputs) set.push_back(read_wav(p));
    }
    bool stereo = true;
    for (const auto& a : set) stereo = stereo && a.num_channels() == 2;
    LatentTransform tf;
    if (o_.vq) {
      const auto* rb = l.rb.get();
      tf = [rb](const Tensor<float>& z) { return rb->detokenize(rb->tokenize(z), z.dim(0)); };
    }
    nlohmann::json j = {{"schema_version", EvalReport::kSchemaVersion}, {"checkpoint", l.source}, {"reports", nlohmann::json::array()}};
    for (bool bf : {false, true}) {
      if ((bf && o_.precision == "float32") || (!bf && o_.precision == "bf16")) continue;
      auto rep = evaluate(*l.model, set, bf, stereo, tf);
      out_ << rep.table();
      j["reports"].push_back(rep.to_json());
      if (rep.has_format_columns) out_ << (bf ? "bf16" : "float32") << "\tms/lr\t" << rep.ms_mel / rep.lr_mel << '\n';
    }
    if (!o_.report.empty()) io::atomic_write_text(o_.report, j.dump(2) + "\n");
  }

  void bench() {
    if (o_.reps < kMinBenchReps)
      throw ConfigError("bench: at least " + std::to_string(kMinBenchReps) + " repetitions required, got " +
                        std::to_string(o_.reps));
    SynthConfig sc;
    sc.length = static_cast<std::size_t>(o_.seconds * kSampleRate);
    const auto clips = synth_dataset(static_cast<std::size_t>(o_.clips), o_.seed + 2000, sc);
    auto ladder = ablation_ladder();
    if (!o_.ablation) ladder = {ladder.front(), ladder.back()};
    nlohmann::json j = nlohmann::json::array();
    out_ << "variant\tencode_rtf_median\tencode_rtf_q1\tencode_rtf_q3\tdecode_rtf_median\tencoder_gmacs_per_s\n";
    const auto copy = copy_pipeline_rtf(clips, o_.reps);
    out_ << "copy\t" << copy.median_rtf << "\t" << copy.q1_rtf << "\t" << copy.q3_rtf << "\t-\t0\n";
    for (const auto& step : ladder) {
      const auto r = rtf_bench(step, clips, o_.reps);
      const auto f = flops_per_second(step.config);
      out_ << step.name << '\t' << r.encode.median_rtf << '\t' << r.encode.q1_rtf << '\t' << r.encode.q3_rtf << '\t'
           << r.decode.median_rtf << '\t' << f.encoder / 1e9 << '\n';
      j.push_back({{"variant", step.name},
                   {"encode", {{"median", r.encode.median_rtf}, {"q1", r.encode.q1_rtf}, {"q3", r.encode.q3_rtf}}},
                   {"decode", {{"median", r.decode.median_rtf}, {"q1", r.decode.q1_rtf}, {"q3", r.decode.q3_rtf}}},
                   {"encoder_macs_per_s", f.encoder},
                   {"decoder_macs_per_s", f.decoder}});
    }
    if (!o_.report.empty())
      io::atomic_write_text(o_.report, nlohmann::json{{"reps", o_.reps}, {"results", j}}.dump(2) + "\n");
  }

  void flops_cmd() {
    std::vector<std::string> variants = {"13.125", "36.75"};
    if (!o_.variant.empty()) variants = {o_.variant};
    const auto n = static_cast<std::size_t>(o_.seconds * kSampleRate);
    if (o_.json) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& v : variants) j[v] = flops(ModelConfig::by_name(v), n).to_json();
      out_ << j.dump(2) << '\n';
      return;
    }
    out_ << "variant\trate_hz\tframes\tencoder_macs\tdecoder_macs\tencoder_macs_per_s\tdecoder_macs_per_s\n";
    for (const auto& v : variants) {
      const auto cfg = ModelConfig::by_name(v);
      const auto r = flops(cfg, n);
      out_ << cfg.name << '\t' << cfg.latent_rate() << '\t' << r.frames << '\t' << r.encoder_macs() << '\t'
           << r.decoder_macs() << '\t' << r.encoder_macs() / o_.seconds << '\t' << r.decoder_macs() / o_.seconds
           << '\n';
    }
  }

  void context() {
    const ContextModel cm;
    const auto cls = parse_model_class(o_.model_class);
    if (o_.rate_hz > 0) {
      out_ << std::fixed << std::setprecision(1) << cm.context_seconds(o_.rate_hz, cls) << " s (first-principles "
           << cm.first_principles_seconds(o_.rate_hz, cls) << " s)\n";
      return;
    }
    if (o_.rate_hz < 0) throw ConfigError("context: latent rate must be positive");
    out_ << "class\trate_hz\tcontext_s\tfirst_principles_s\n" << std::fixed << std::setprecision(1);
    for (double r : {ModelConfig::low_rate().latent_rate(), ModelConfig::high_rate().latent_rate()})
      for (auto c : {ModelClass::lm, ModelClass::diffusion})
        out_ << (c == ModelClass::lm ? "lm" : "diffusion") << '\t' << std::setprecision(3) << r << '\t'
             << std::setprecision(1) << cm.context_seconds(r, c) << '\t' << cm.first_principles_seconds(r, c) << '\n';
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_;
  Options o_;
  std::string cmd_;
};

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App a(out, err);
  return a.run(argc, argv);
}

}  // namespace genae::cli
