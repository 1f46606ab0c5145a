#pragma once

// Training objectives: multi-resolution STFT distance, mel L1, a small
// multi-window STFT discriminator, and the weighted aggregate.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "genae/dsp.hpp"
#include "genae/layers.hpp"

namespace genae {

// Window sets for the two loss families. Each set, and their union, is
// pairwise coprime.
inline const std::vector<std::size_t> kReconstructionWindows{2048, 1023, 511};
inline const std::vector<std::size_t> kDiscriminatorWindows{1025, 509, 247};

inline std::vector<std::size_t> all_loss_windows() {
  auto w = kReconstructionWindows;
  w.insert(w.end(), kDiscriminatorWindows.begin(), kDiscriminatorWindows.end());
  return w;
}

struct LossWeights {
  double mel_reconstruction = 10.0;
  double mel_fusion = 5.0;
  double discriminator = 1.0;
  double feature_matching = 5.0;
  double mrstft = 1.0;
  double kl = 1.0;  // overwritten by the KL controller during training

  void validate() const {
    for (double w : {mel_reconstruction, mel_fusion, discriminator, feature_matching, mrstft, kl})
      if (!(w >= 0)) throw ConfigError("loss weights must be >= 0");
  }
};

// ---------------------------------------------------------------------------

// Sum over resolutions of mean |log(eps+|X|) - log(eps+|Xh|)| + ||X|-|Xh||_F / ||X||_F.
// x is the reference (no gradient needed), xh the estimate; both single-channel.
template <class T>
Tensor<T> mrstft_loss(const Tensor<T>& x, const Tensor<T>& xh, const std::vector<StftConfig>& resolutions) {
  if (x.numel() != xh.numel())
    throw std::invalid_argument("mrstft: length mismatch " + std::to_string(x.numel()) + " vs " +
                                std::to_string(xh.numel()));
  std::vector<std::size_t> sizes;
  for (const auto& r : resolutions) sizes.push_back(r.window_size);
  if (!pairwise_coprime(sizes)) throw ConfigError("mrstft: window sizes must be pairwise coprime");
  const auto xt = x.detach();
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (const auto& cfg : resolutions) {
    const auto mx = stft_magnitude(xt, cfg);
    const auto mh = stft_magnitude(xh, cfg);
    const T eps = static_cast<T>(kLogFloor);
    auto log_term = l1_mean(log(add_scalar(mx, eps)), log(add_scalar(mh, eps)));
    double ref = 0;
    for (T v : mx.data()) ref += static_cast<double>(v) * v;
    auto sc = scale(norm(sub(mx, mh)), static_cast<T>(1.0 / std::max(std::sqrt(ref), kLogFloor)));
    total = add(total, add(log_term, sc));
  }
  return total;
}

template <class T>
Tensor<T> mrstft_loss(const Tensor<T>& x, const Tensor<T>& xh) {
  return mrstft_loss(x, xh, coprime_windows(kReconstructionWindows));
}

template <class T>
Tensor<T> mel_l1(const Tensor<T>& mel_true, const Tensor<T>& mel_pred) {
  if (mel_true.shape() != mel_pred.shape())
    throw std::invalid_argument("mel_l1: shape mismatch " + shape_str(mel_true.shape()) + " vs " +
                                shape_str(mel_pred.shape()));
  return l1_mean(mel_true, mel_pred);
}

// ---------------------------------------------------------------------------
// Discriminator: per resolution, 1-D convs over time with frequency bins as
// input channels, applied to the log-magnitude spectrogram.

struct DiscriminatorConfig {
  std::vector<std::size_t> windows = kDiscriminatorWindows;
  std::size_t channels = 32;
  std::size_t kernel = 3;
  std::uint64_t seed = 7;
};

template <class T>
struct DiscriminatorOutput {
  std::vector<std::vector<Tensor<T>>> features;  // per resolution, per layer (last is the logits)
  const Tensor<T>& logits(std::size_t r) const { return features[r].back(); }
};

template <class T>
class StftDiscriminator {
 public:
  explicit StftDiscriminator(DiscriminatorConfig cfg = {}) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    resolutions_ = coprime_windows(cfg_.windows);
    for (const auto& r : resolutions_) {
      Head h;
      const std::size_t c = cfg_.channels, k = cfg_.kernel;
      h.convs.emplace_back(Conv1dSpec::same(r.bins(), c, k), rng_);
      h.convs.emplace_back(Conv1dSpec::same(c, c, k, 2), rng_);
      h.convs.emplace_back(Conv1dSpec::same(c, c, k, 4), rng_);
      h.convs.emplace_back(Conv1dSpec::same(c, 1, k), rng_);
      heads_.push_back(std::move(h));
    }
  }

  const std::vector<StftConfig>& resolutions() const { return resolutions_; }

  DiscriminatorOutput<T> operator()(const Tensor<T>& x) const {
    DiscriminatorOutput<T> out;
    for (std::size_t r = 0; r < resolutions_.size(); ++r) {
      auto h = transpose(log(add_scalar(stft_magnitude(x, resolutions_[r]), static_cast<T>(kLogFloor))));
      std::vector<Tensor<T>> feats;
      const auto& convs = heads_[r].convs;
      for (std::size_t i = 0; i < convs.size(); ++i) {
        h = convs[i](h);
        if (i + 1 < convs.size()) h = leaky_relu(h, T(0.2));
        feats.push_back(h);
      }
      out.features.push_back(std::move(feats));
    }
    return out;
  }

  ParamList<T> parameters() const {
    ParamList<T> ps;
    for (std::size_t r = 0; r < heads_.size(); ++r)
      for (std::size_t i = 0; i < heads_[r].convs.size(); ++i)
        heads_[r].convs[i].params(ps, "disc.res" + std::to_string(r) + ".conv" + std::to_string(i));
    return ps;
  }

 private:
  struct Head {
    std::vector<Conv1d<T>> convs;
  };
  DiscriminatorConfig cfg_;
  Rng rng_;
  std::vector<StftConfig> resolutions_;
  std::vector<Head> heads_;
};

template <class T>
struct AdversarialLosses {
  Tensor<T> adv;        // generator hinge loss
  Tensor<T> fm;         // feature matching
  Tensor<T> disc_loss;  // discriminator hinge loss (on detached estimate)
};

// Generator-side losses flow through xh (and also reach the discriminator's
// parameters, so callers zero those grads before the discriminator update).
// The discriminator loss sees a detached estimate.
template <class T>
AdversarialLosses<T> discriminator_losses(const Tensor<T>& x, const Tensor<T>& xh, const StftDiscriminator<T>& disc,
                                          bool with_disc_loss = true) {
  const auto real = disc(x.detach());
  const auto fake = disc(xh);
  const T nres = static_cast<T>(real.features.size());
  AdversarialLosses<T> out;
  out.adv = Tensor<T>::scalar(T(0));
  out.fm = Tensor<T>::scalar(T(0));
  for (std::size_t r = 0; r < real.features.size(); ++r) {
    out.adv = add(out.adv, scale(mean(fake.logits(r)), T(-1) / nres));
    for (std::size_t l = 0; l < real.features[r].size(); ++l) {
      // Relative to the real feature magnitude so fm stays bounded as features grow.
      const auto& rf = real.features[r][l];
      double mag = 0;
      for (T v : rf.data()) mag += std::abs(static_cast<double>(v));
      mag = mag / static_cast<double>(std::max<std::size_t>(rf.numel(), 1)) + 1e-8;
      out.fm = add(out.fm, scale(l1_mean(fake.features[r][l], rf.detach()), static_cast<T>(1.0 / (mag * nres))));
    }
  }
  if (with_disc_loss) {
    const auto fake_d = disc(xh.detach());
    out.disc_loss = Tensor<T>::scalar(T(0));
    for (std::size_t r = 0; r < real.features.size(); ++r) {
      auto lr = mean(relu(add_scalar(neg(real.logits(r)), T(1))));
      auto lf = mean(relu(add_scalar(fake_d.logits(r), T(1))));
      out.disc_loss = add(out.disc_loss, scale(add(lr, lf), T(1) / nres));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <class T>
struct LossComponents {
  Tensor<T> mrstft, mel_reconstruction, mel_fusion, adversarial, feature_matching, kl;
};

template <class T>
struct TotalLoss {
  Tensor<T> total;
  std::map<std::string, double> breakdown;  // unweighted component values
};

// Weighted sum of the defined components. Any non-finite component aborts
// with a diagnostic naming it.
template <class T>
TotalLoss<T> total_loss(const LossComponents<T>& c, const LossWeights& w) {
  w.validate();
  TotalLoss<T> out;
  out.total = Tensor<T>::scalar(T(0));
  auto term = [&](const char* name, const Tensor<T>& v, double weight) {
    if (!v.defined()) return;
    const double val = v.item();
    if (!std::isfinite(val)) throw NumericError(std::string("loss component '") + name + "' is not finite");
    out.breakdown[name] = val;
    out.total = add(out.total, scale(v, static_cast<T>(weight)));
  };
  term("mrstft", c.mrstft, w.mrstft);
  term("mel_reconstruction", c.mel_reconstruction, w.mel_reconstruction);
  term("mel_fusion", c.mel_fusion, w.mel_fusion);
  term("adversarial", c.adversarial, w.discriminator);
  term("feature_matching", c.feature_matching, w.feature_matching);
  term("kl", c.kl, w.kl);
  return out;
}

}  // namespace genae
