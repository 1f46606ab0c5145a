#pragma once

// Toy-scale training: synthetic stereo data, multi-format augmentation, the
// autoencoder loop with KL control and an STFT discriminator, and the
// Re-Bottleneck stage trained against a frozen backbone.

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "genae/bottleneck.hpp"
#include "genae/io.hpp"
#include "genae/losses.hpp"
#include "genae/metrics.hpp"
#include "genae/model.hpp"
#include "genae/optim.hpp"

namespace genae {

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t length = 13440;  // samples per example
  int sample_rate = kSampleRate;
  std::size_t min_tones = 3, max_tones = 8;
  double f0_min = 55.0, f0_max = 3520.0;
  double peak = 0.9;
};

// Sums of decaying harmonic tones with AM/FM, panned and delayed differently
// into L and R, peak-normalized.
inline AudioBuffer synth_example(Rng& rng, const SynthConfig& c = {}) {
  std::uniform_int_distribution<std::size_t> ntones(c.min_tones, c.max_tones);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double sr = c.sample_rate;
  const std::size_t n = c.length;
  std::vector<double> l(n, 0.0), r(n, 0.0);
  const std::size_t tones = ntones(rng);
  for (std::size_t k = 0; k < tones; ++k) {
    const double f0 = c.f0_min * std::pow(c.f0_max / c.f0_min, u01(rng));
    const std::size_t harmonics = 1 + static_cast<std::size_t>(u01(rng) * 6);
    const double tilt = uni(0.5, 1.5);
    const double am_rate = uni(0.5, 8.0), am_depth = uni(0.0, 0.5), am_phase = uni(0, 2 * std::numbers::pi);
    const double fm_rate = uni(0.5, 6.0), fm_depth = uni(0.0, 0.01);
    const double tau = uni(0.1, 1.5);
    const double amp = uni(0.3, 1.0);
    const std::size_t onset = static_cast<std::size_t>(u01(rng) * 0.5 * static_cast<double>(n));
    const double pan = u01(rng);
    const double gl = std::cos(pan * std::numbers::pi / 2), gr = std::sin(pan * std::numbers::pi / 2);
    const std::size_t dl = static_cast<std::size_t>(u01(rng) * 24), dr = static_cast<std::size_t>(u01(rng) * 24);
    std::vector<double> h(harmonics);
    for (auto& ph : h) ph = uni(0, 2 * std::numbers::pi);
    std::vector<double> tone(n, 0.0);
    double phase = 0;
    for (std::size_t i = onset; i < n; ++i) {
      const double t = static_cast<double>(i - onset) / sr;
      const double f = f0 * (1.0 + fm_depth * std::sin(2 * std::numbers::pi * fm_rate * t));
      phase += 2 * std::numbers::pi * f / sr;
      double v = 0;
      for (std::size_t m = 0; m < harmonics; ++m) {
        if (f0 * static_cast<double>(m + 1) >= 0.45 * sr) break;
        v += std::sin(static_cast<double>(m + 1) * phase + h[m]) / std::pow(static_cast<double>(m + 1), tilt);
      }
      const double env = std::exp(-t / tau) * (1.0 + am_depth * std::sin(2 * std::numbers::pi * am_rate * t + am_phase));
      tone[i] = amp * env * v;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= dl) l[i] += gl * tone[i - dl];
      if (i >= dr) r[i] += gr * tone[i - dr];
    }
  }
  double pk = 0;
  for (std::size_t i = 0; i < n; ++i) pk = std::max({pk, std::abs(l[i]), std::abs(r[i])});
  const double g = pk > 0 ? c.peak / pk : 0.0;
  AudioBuffer a;
  a.sample_rate = c.sample_rate;
  a.channels.assign(2, std::vector<float>(n));
  for (std::size_t i = 0; i < n; ++i) {
    // Round toward zero so the float peak never exceeds the target.
    a.channels[0][i] = static_cast<float>(l[i] * g * (1 - 1e-7));
    a.channels[1][i] = static_cast<float>(r[i] * g * (1 - 1e-7));
  }
  return a;
}

inline std::vector<AudioBuffer> synth_dataset(std::size_t count, std::uint64_t seed, const SynthConfig& c = {}) {
  Rng rng(seed);
  std::vector<AudioBuffer> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_example(rng, c));
  return out;
}

// ---------------------------------------------------------------------------
// Multi-format augmentation

enum class FormatBranch { single = 0, mono = 1, mid_side = 2 };

struct FormatSample {
  std::vector<float> audio;  // one channel
  FormatToken format = FormatToken::mid;
  std::size_t source = 0;    // index of the stereo example
  double gain_db = 0;
};

struct AugmentResult {
  FormatBranch branch = FormatBranch::single;
  std::vector<FormatSample> samples;  // one, or two for the mid/side branch
};

// Picks single channel, mono, or mid/side with equal probability, then
// applies one level gain to everything emitted. With lr_only set, only the
// single-channel branch is used (the L/R-only ablation).
inline AugmentResult format_augment(const AudioBuffer& stereo, Rng& rng, std::size_t source = 0,
                                    bool lr_only = false) {
  if (stereo.num_channels() != 2)
    throw std::invalid_argument("format_augment: stereo input required, got " +
                                std::to_string(stereo.num_channels()) + " channel(s)");
  std::uniform_int_distribution<int> three(0, 2), two(0, 1);
  AugmentResult out;
  out.branch = lr_only ? FormatBranch::single : static_cast<FormatBranch>(three(rng));
  const auto& l = stereo.channels[0];
  const auto& r = stereo.channels[1];
  switch (out.branch) {
    case FormatBranch::single: {
      const bool right = two(rng) == 1;
      out.samples.push_back({right ? r : l, right ? FormatToken::right : FormatToken::left, source, 0});
      break;
    }
    case FormatBranch::mono: {
      std::vector<float> m, s;
      lr_to_ms(l, r, m, s);
      out.samples.push_back({std::move(m), FormatToken::mid, source, 0});
      break;
    }
    case FormatBranch::mid_side: {
      std::vector<float> m, s;
      lr_to_ms(l, r, m, s);
      out.samples.push_back({std::move(m), FormatToken::mid, source, 0});
      out.samples.push_back({std::move(s), FormatToken::side, source, 0});
      break;
    }
  }
  const double gain_db = draw_level_gain_db(rng);
  const float g = static_cast<float>(std::pow(10.0, gain_db / 20.0));
  for (auto& s : out.samples) {
    s.gain_db = gain_db;
    for (auto& v : s.audio) v *= g;
  }
  return out;
}

// Deterministic stream of format samples: examples drawn uniformly from the
// pool, augmented, and queued in submission order.
class FormatStream {
 public:
  FormatStream(const std::vector<AudioBuffer>& pool, std::uint64_t seed, bool lr_only)
      : pool_(&pool), rng_(seed), lr_only_(lr_only) {
    if (pool.empty()) throw std::invalid_argument("format stream: empty dataset");
  }

  FormatSample next() {
    if (queue_.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, pool_->size() - 1);
      const std::size_t i = pick(rng_);
      for (auto& s : format_augment((*pool_)[i], rng_, i, lr_only_).samples) queue_.push_back(std::move(s));
    }
    auto s = std::move(queue_.front());
    queue_.pop_front();
    return s;
  }

 private:
  const std::vector<AudioBuffer>* pool_;
  Rng rng_;
  bool lr_only_;
  std::deque<FormatSample> queue_;
};

// ---------------------------------------------------------------------------
// Autoencoder training

struct TrainConfig {
  OptimConfig optim;
  OptimConfig disc_optim;
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t segment = 13440;
  std::size_t dataset_size = 256;
  std::size_t heldout_size = 8;
  std::size_t adversarial_start = 0;  // step at which adversarial terms switch on
  bool lr_only = false;               // L/R-only ablation
  double kl_target = 15.0;
  double kl_eta = 0.01;
  double initial_beta = 1.0;
  LossWeights weights;
  std::uint64_t seed = 0;
  std::string log_path;         // NDJSON training log (optional)
  std::string checkpoint_path;  // final / last-good checkpoint (optional)

  // Defaults sized for a single-CPU run.
  static TrainConfig toy() {
    TrainConfig c;
    c.optim.lr = 1e-3;
    c.optim.warmup_steps = 100;
    c.optim.decay = 0.999;
    c.disc_optim = c.optim;
    c.disc_optim.lr = 1e-4;
    return c;
  }

  void validate() const {
    optim.validate();
    disc_optim.validate();
    weights.validate();
    if (steps == 0 || batch == 0 || segment == 0 || dataset_size == 0)
      throw ConfigError("train: steps, batch, segment and dataset size must be positive");
    if (!(kl_target > 0) || !(kl_eta > 0) || !(initial_beta > 0)) throw ConfigError("train: KL settings must be positive");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"mel_reconstruction", w.mel_reconstruction}, {"mel_fusion", w.mel_fusion},
       {"discriminator", w.discriminator},           {"feature_matching", w.feature_matching},
       {"mrstft", w.mrstft},                         {"kl", w.kl}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
  j.at("mel_reconstruction").get_to(w.mel_reconstruction);
  j.at("mel_fusion").get_to(w.mel_fusion);
  j.at("discriminator").get_to(w.discriminator);
  j.at("feature_matching").get_to(w.feature_matching);
  j.at("mrstft").get_to(w.mrstft);
  j.at("kl").get_to(w.kl);
}

struct StepRecord {
  std::size_t step = 0;
  double lr = 0;
  std::map<std::string, double> losses;  // unweighted components
  double total = 0;
  double disc_loss = 0;
  double grad_norm = 0;  // before clipping
  double beta = 0;
  double kl = 0;
  double wall_ms = 0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"step", step}, {"lr", lr}, {"total", total}, {"grad_norm", grad_norm},
                        {"beta", beta}, {"kl", kl}, {"disc_loss", disc_loss}, {"wall_ms", wall_ms}};
    for (const auto& [k, v] : losses) j[k] = v;
    return j;
  }
};

struct TrainResult {
  std::vector<StepRecord> log;
  double heldout_mel_before = 0, heldout_mel_after = 0;
  double final_beta = 0;
  double max_grad_norm = 0;
};

// Mean mel L1 between held-out channels and their reconstructions (one pass
// per channel with the left/right token).
inline double heldout_mel_l1(const GenAE<float>& model, const std::vector<AudioBuffer>& set) {
  const MelSpectrogram mel(model.config().mel);
  double s = 0;
  std::size_t n = 0;
  for (const auto& ex : set)
    for (std::size_t c = 0; c < ex.num_channels(); ++c) {
      const FormatToken f = c == 0 ? FormatToken::left : FormatToken::right;
      s += mel_distance(ex.channels[c], reconstruct(model, ex.channels[c], f), mel);
      ++n;
    }
  return s / static_cast<double>(n);
}

inline nlohmann::json checkpoint_record(const GenAE<float>& model, const TrainConfig& cfg, std::size_t step,
                                        double beta) {
  return {{"model", model.config()},
          {"loss_weights", cfg.weights},
          {"meta", {{"step", step}, {"seed", cfg.seed}, {"beta", beta}, {"kl_target", cfg.kl_target}}}};
}

class ToyTrainer {
 public:
  ToyTrainer(GenAE<float>& model, TrainConfig cfg)
      : model_(model),
        cfg_(std::move(cfg)),
        disc_(DiscriminatorConfig{kDiscriminatorWindows, 32, 3, cfg_.seed + 7}),
        gen_opt_(model.parameters(), cfg_.optim),
        disc_opt_(disc_.parameters(), cfg_.disc_optim),
        rng_(cfg_.seed * 0x9e3779b97f4a7c15ull + 11) {
    cfg_.validate();
    if (cfg_.segment % model.config().total_stride() != 0)
      throw ConfigError("train: segment must be a multiple of the total stride (" +
                        std::to_string(model.config().total_stride()) + ")");
    controller_.target = cfg_.kl_target;
    controller_.eta = cfg_.kl_eta;
    controller_.beta = cfg_.initial_beta;
    SynthConfig sc;
    sc.length = cfg_.segment;
    train_set_ = synth_dataset(cfg_.dataset_size, cfg_.seed * 2 + 1, sc);
    heldout_ = synth_dataset(cfg_.heldout_size, cfg_.seed * 2 + 2, sc);
    stream_.emplace(train_set_, cfg_.seed * 2 + 3, cfg_.lr_only);
  }

  const std::vector<AudioBuffer>& heldout() const { return heldout_; }
  const KlController& controller() const { return controller_; }
  const StftDiscriminator<float>& discriminator() const { return disc_; }
  std::size_t step_index() const { return step_; }

  // One optimization step on a batch of format samples.
  StepRecord step() {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = step_;
    rec.lr = lr_schedule(step_, cfg_.optim);
    rec.beta = controller_.beta;
    const bool adversarial = step_ >= cfg_.adversarial_start;
    model_.set_training(true, cfg_.seed * 1000003 + step_);
    const float inv_b = 1.0f / static_cast<float>(cfg_.batch);

    LossComponents<float> comp;
    Tensor<float> disc_loss;
    auto acc = [&](Tensor<float>& dst, const Tensor<float>& v) {
      dst = dst.defined() ? add(dst, scale(v, inv_b)) : scale(v, inv_b);
    };
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
      auto s = stream_->next();
      auto enc = model_.encode(s.audio, s.format);
      auto ks = kl_sample(enc.params, &rng_);
      auto dec = model_.decode(ks.z, s.format);
      Tensor<float> x(Shape{1, s.audio.size()}, s.audio);
      acc(comp.mrstft, mrstft_loss(x, dec.audio));
      acc(comp.mel_reconstruction, mel_l1(enc.mel_true, dec.mel_pred));
      if (enc.fusion_mel.defined()) acc(comp.mel_fusion, mel_l1(enc.mel_true, enc.fusion_mel));
      acc(comp.kl, ks.kl);
      if (adversarial) {
        auto adv = discriminator_losses(x, dec.audio, disc_);
        acc(comp.adversarial, adv.adv);
        acc(comp.feature_matching, adv.fm);
        acc(disc_loss, adv.disc_loss);
      }
    }
    auto weights = cfg_.weights;
    weights.kl = controller_.beta;
    TotalLoss<float> tl;
    try {
      tl = total_loss(comp, weights);
    } catch (const NumericError& e) {
      abort_with_checkpoint(e.what());
    }
    rec.losses = tl.breakdown;
    rec.total = tl.total.item();
    rec.kl = tl.breakdown.at("kl");

    const auto gen_params = gen_opt_.params();
    zero_grads(gen_params);
    tl.total.backward();
    rec.grad_norm = clip_grad_norm(gen_params, cfg_.optim.clip_norm);
    if (!std::isfinite(rec.grad_norm)) abort_with_checkpoint("generator gradient norm is not finite");
    gen_opt_.step(rec.lr);

    const auto disc_params = disc_opt_.params();
    zero_grads(disc_params);
    if (adversarial) {
      rec.disc_loss = disc_loss.item();
      if (!std::isfinite(rec.disc_loss)) abort_with_checkpoint("discriminator loss is not finite");
      disc_loss.backward();
      clip_grad_norm(disc_params, cfg_.disc_optim.clip_norm);
      disc_opt_.step(lr_schedule(step_ - cfg_.adversarial_start, cfg_.disc_optim));
    }
    controller_.step(rec.kl);
    model_.set_training(false);
    ++step_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  void save_checkpoint(const std::string& path) const {
    write_checkpoint(path, checkpoint_record(model_, cfg_, step_, controller_.beta), model_.parameters());
  }

  TrainResult run() {
    TrainResult res;
    std::optional<std::ofstream> log;
    if (!cfg_.log_path.empty()) {
      log.emplace(cfg_.log_path, std::ios::trunc);
      if (!*log) throw FormatError("cannot open training log '" + cfg_.log_path + "'");
    }
    res.heldout_mel_before = heldout_mel_l1(model_, heldout_);
    while (step_ < cfg_.steps) {
      auto rec = step();
      res.max_grad_norm = std::max(res.max_grad_norm, rec.grad_norm);
      if (log) *log << rec.to_json().dump() << '\n' << std::flush;
      res.log.push_back(std::move(rec));
    }
    res.heldout_mel_after = heldout_mel_l1(model_, heldout_);
    res.final_beta = controller_.beta;
    if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path);
    return res;
  }

 private:
  // Parameters are still those of the last completed step, so they are the
  // last good state.
  [[noreturn]] void abort_with_checkpoint(const std::string& why) {
    model_.set_training(false);
    std::string where;
    if (!cfg_.checkpoint_path.empty()) {
      const std::string p = cfg_.checkpoint_path + ".last-good";
      save_checkpoint(p);
      where = "; last good checkpoint written to " + p;
    }
    throw NumericError("training step " + std::to_string(step_) + ": " + why + where);
  }

  GenAE<float>& model_;
  TrainConfig cfg_;
  StftDiscriminator<float> disc_;
  AdamW<float> gen_opt_, disc_opt_;
  KlController controller_;
  Rng rng_;
  std::vector<AudioBuffer> train_set_, heldout_;
  std::optional<FormatStream> stream_;
  std::size_t step_ = 0;
};

inline TrainResult train_toy(GenAE<float>& model, const TrainConfig& cfg) { return ToyTrainer(model, cfg).run(); }

// Mean of a per-step field over steps [from, to).
inline double window_mean(const std::vector<StepRecord>& log, std::size_t from, std::size_t to,
                          const std::function<double(const StepRecord&)>& field) {
  to = std::min(to, log.size());
  if (from >= to) throw std::invalid_argument("window_mean: empty window");
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += field(log[i]);
  return s / static_cast<double>(to - from);
}

// ---------------------------------------------------------------------------
// Re-Bottleneck stage: the backbone only produces detached latents.

struct ReBottleneckTrainConfig {
  OptimConfig optim;
  std::size_t steps = 100;
  std::size_t batch = 4;
  std::size_t segment = 13440 * 4;
  std::size_t dataset_size = 64;
  std::size_t checksum_every = 10;
  std::uint32_t dead_after = 8;
  std::uint64_t seed = 0;

  static ReBottleneckTrainConfig toy() {
    ReBottleneckTrainConfig c;
    c.optim.lr = 1e-3;
    c.optim.warmup_steps = 10;
    return c;
  }
};

struct ReBottleneckTrainResult {
  std::vector<double> loss;  // per step: latent L2 + quantizer aux
  std::uint64_t backbone_checksum_before = 0, backbone_checksum_after = 0;
  std::size_t reseeded = 0;
};

inline ReBottleneckTrainResult rebottleneck_train(const GenAE<float>& backbone, ReBottleneck<float>& rb,
                                                  const ReBottleneckTrainConfig& cfg) {
  cfg.optim.validate();
  if (rb.config().latent_dim != backbone.config().latent_dim)
    throw IncompatibleError("re-bottleneck latent width " + std::to_string(rb.config().latent_dim) +
                            " does not match backbone latent width " + std::to_string(backbone.config().latent_dim));
  const auto backbone_params = backbone.parameters();
  // Stale grads from backbone training would mask a leak check below.
  zero_grads(backbone_params);
  ReBottleneckTrainResult res;
  res.backbone_checksum_before = param_checksum(backbone_params);
  SynthConfig sc;
  sc.length = cfg.segment;
  const auto pool = synth_dataset(cfg.dataset_size, cfg.seed * 2 + 101, sc);
  FormatStream stream(pool, cfg.seed * 2 + 102, false);
  Rng rng(cfg.seed + 103);
  const auto params = rb.parameters();
  AdamW<float> opt(params, cfg.optim);
  auto verify_frozen = [&](std::size_t step) {
    if (param_checksum(backbone_params) != res.backbone_checksum_before)
      throw std::logic_error("re-bottleneck step " + std::to_string(step) + ": backbone parameters changed");
  };
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor<float>> latents;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      auto s = stream.next();
      NoGradGuard ng;
      latents.push_back(kl_sample(backbone.encode(s.audio, s.format).params, nullptr).z.detach());
    }
    auto z = concat<float>(latents, 0);
    auto out = rb(z);
    auto loss = add(mse(out.latent, z), out.rvq.aux_loss);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw NumericError("re-bottleneck step " + std::to_string(step) + ": loss is not finite");
    zero_grads(params);
    loss.backward();
    for (const auto& p : backbone_params)
      if (p.tensor.has_grad())
        for (float g : p.tensor.grad())
          if (g != 0.0f) throw std::logic_error("re-bottleneck: gradient reached backbone parameter '" + p.name + "'");
    clip_grad_norm(params, cfg.optim.clip_norm);
    opt.step(lr_schedule(step, cfg.optim));
    rb.books().pin_zero();
    res.reseeded += codebook_maintenance(rb.books(), out.rvq, rng, cfg.dead_after);
    res.loss.push_back(lv);
    if ((step + 1) % cfg.checksum_every == 0) verify_frozen(step);
  }
  verify_frozen(cfg.steps);
  res.backbone_checksum_after = param_checksum(backbone_params);
  return res;
}

}  // namespace genae
