#pragma once

// Evaluation: SI-SDR, multi-resolution STFT distance, mel L1, and the
// L/R versus M/S format consistency report.

#include <cmath>
#include <functional>
#include <json.hpp>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "genae/bottleneck.hpp"
#include "genae/losses.hpp"
#include "genae/model.hpp"

namespace genae {

inline constexpr double kSiSdrCapDb = 100.0;

// 10 log10(|a ref|^2 / |a ref - est|^2), a = <est, ref> / |ref|^2, capped.
template <class Sample>
double si_sdr(std::span<const Sample> ref, std::span<const Sample> est) {
  if (ref.size() != est.size()) throw std::invalid_argument("si_sdr: length mismatch");
  double rr = 0, er = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += static_cast<double>(ref[i]) * ref[i];
    er += static_cast<double>(est[i]) * ref[i];
  }
  if (!(rr > 0)) throw std::invalid_argument("si_sdr: reference is all zeros");
  const double a = er / rr;
  double sig = 0, err = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = a * ref[i];
    sig += t * t;
    err += (t - est[i]) * (t - est[i]);
  }
  if (!(err > 0)) return kSiSdrCapDb;
  if (!(sig > 0)) return -kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(sig / err), -kSiSdrCapDb, kSiSdrCapDb);
}

inline double si_sdr(const std::vector<float>& ref, const std::vector<float>& est) {
  return si_sdr(std::span<const float>(ref), std::span<const float>(est));
}

// Mean absolute difference of log-mel spectrograms.
inline double mel_distance(std::span<const float> ref, std::span<const float> est, const MelSpectrogram& mel) {
  if (ref.size() != est.size()) throw std::invalid_argument("mel_distance: length mismatch");
  return mel_l1(mel.operator()<double>(ref), mel.operator()<double>(est)).item();
}

inline double mrstft_distance(std::span<const float> ref, std::span<const float> est) {
  if (ref.size() != est.size()) throw std::invalid_argument("mrstft_distance: length mismatch");
  using Td = Tensor<double>;
  const std::size_t n = ref.size();
  Td a(Shape{1, n}, std::vector<double>(ref.begin(), ref.end()));
  Td b(Shape{1, n}, std::vector<double>(est.begin(), est.end()));
  NoGradGuard ng;
  return mrstft_loss(a, b).item();
}

// Optional transform applied to the latent means before decoding (e.g. a
// Re-Bottleneck quantize/dequantize round trip).
using LatentTransform = std::function<Tensor<float>(const Tensor<float>&)>;

// Encodes one channel, decodes the latent mean, and crops to the input length.
inline std::vector<float> reconstruct(const GenAE<float>& model, std::span<const float> x, FormatToken f,
                                      const LatentTransform& transform = {}) {
  NoGradGuard ng;
  auto enc = model.encode(x, f);
  auto z = kl_sample(enc.params, nullptr).z;
  if (transform) z = transform(z);
  auto dec = model.decode(z, f);
  const auto& a = dec.audio.data();
  return std::vector<float>(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(x.size()));
}

struct TrackMetrics {
  double si_sdr = 0, mrstft = 0, mel_l1 = 0;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;
  bool bf16 = false;
  std::vector<TrackMetrics> tracks;
  TrackMetrics aggregate;  // mean over tracks
  double lr_mel = 0, ms_mel = 0;
  bool has_format_columns = false;

  void finalize() {
    aggregate = {};
    for (const auto& t : tracks) {
      aggregate.si_sdr += t.si_sdr;
      aggregate.mrstft += t.mrstft;
      aggregate.mel_l1 += t.mel_l1;
    }
    const double n = static_cast<double>(std::max<std::size_t>(tracks.size(), 1));
    aggregate.si_sdr /= n;
    aggregate.mrstft /= n;
    aggregate.mel_l1 /= n;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"schema_version", kSchemaVersion},
                        {"precision", bf16 ? "bf16" : "float32"},
                        {"track_count", tracks.size()},
                        {"aggregate", {{"si_sdr", aggregate.si_sdr}, {"mrstft", aggregate.mrstft}, {"mel_l1", aggregate.mel_l1}}}};
    j["tracks"] = nlohmann::json::array();
    for (const auto& t : tracks) j["tracks"].push_back({{"si_sdr", t.si_sdr}, {"mrstft", t.mrstft}, {"mel_l1", t.mel_l1}});
    if (has_format_columns) {
      j["lr_mel"] = lr_mel;
      j["ms_mel"] = ms_mel;
    }
    return j;
  }

  std::string table() const {
    std::ostringstream os;
    os << "precision\ttrack\tsi_sdr_db\tmrstft\tmel_l1\n";
    const char* p = bf16 ? "bf16" : "float32";
    for (std::size_t i = 0; i < tracks.size(); ++i)
      os << p << '\t' << i << '\t' << tracks[i].si_sdr << '\t' << tracks[i].mrstft << '\t' << tracks[i].mel_l1 << '\n';
    os << p << "\tmean\t" << aggregate.si_sdr << '\t' << aggregate.mrstft << '\t' << aggregate.mel_l1 << '\n';
    if (has_format_columns) os << p << "\tlr_mel\t" << lr_mel << "\n" << p << "\tms_mel\t" << ms_mel << '\n';
    return os.str();
  }
};

struct FormatConsistency {
  double lr_mel = 0, ms_mel = 0;
  double ratio() const { return ms_mel / lr_mel; }
};

// lr_mel: L and R reconstructed with the left/right tokens. ms_mel: M and S
// reconstructed with the mid/side tokens, converted back to L/R, and scored
// against the same L and R references, so both columns share one target.
inline FormatConsistency format_consistency_eval(const GenAE<float>& model, const std::vector<AudioBuffer>& set,
                                                 const LatentTransform& transform = {}) {
  if (set.empty()) throw std::invalid_argument("format_consistency_eval: empty evaluation set");
  const MelSpectrogram mel(model.config().mel);
  FormatConsistency out;
  for (const auto& ex : set) {
    if (ex.num_channels() != 2) throw std::invalid_argument("format_consistency_eval: stereo examples required");
    const auto& l = ex.channels[0];
    const auto& r = ex.channels[1];
    auto lh = reconstruct(model, l, FormatToken::left, transform);
    auto rh = reconstruct(model, r, FormatToken::right, transform);
    out.lr_mel += 0.5 * (mel_distance(l, lh, mel) + mel_distance(r, rh, mel));
    std::vector<float> m, s, l2, r2;
    lr_to_ms(l, r, m, s);
    auto mh = reconstruct(model, m, FormatToken::mid, transform);
    auto sh = reconstruct(model, s, FormatToken::side, transform);
    ms_to_lr(mh, sh, l2, r2);
    out.ms_mel += 0.5 * (mel_distance(l, l2, mel) + mel_distance(r, r2, mel));
  }
  out.lr_mel /= static_cast<double>(set.size());
  out.ms_mel /= static_cast<double>(set.size());
  return out;
}

// Per-channel metrics over a stereo set using the left/right tokens; with
// bf16 set, every op output in the model is rounded to bfloat16 and so are
// the metric inputs.
inline EvalReport evaluate(const GenAE<float>& model, const std::vector<AudioBuffer>& set, bool bf16,
                           bool format_columns = true, const LatentTransform& transform = {}) {
  EvalReport rep;
  rep.bf16 = bf16;
  const MelSpectrogram mel(model.config().mel);
  Bf16Guard guard(bf16);
  for (const auto& ex : set)
    for (std::size_t c = 0; c < ex.num_channels(); ++c) {
      const auto& x = ex.channels[c];
      const FormatToken f = ex.num_channels() == 1 ? FormatToken::mid : (c == 0 ? FormatToken::left : FormatToken::right);
      auto ref = x;
      auto est = reconstruct(model, x, f, transform);
      if (bf16) {
        for (auto& v : ref) v = round_bf16(v);
        for (auto& v : est) v = round_bf16(v);
      }
      TrackMetrics t;
      t.si_sdr = si_sdr(ref, est);
      t.mrstft = mrstft_distance(ref, est);
      t.mel_l1 = mel_distance(ref, est, mel);
      rep.tracks.push_back(t);
    }
  rep.finalize();
  if (format_columns) {
    auto fc = format_consistency_eval(model, set, transform);
    rep.lr_mel = fc.lr_mel;
    rep.ms_mel = fc.ms_mel;
    rep.has_format_columns = true;
  }
  return rep;
}

}  // namespace genae
