// wavssl/augment.hpp
//
// Stochastic waveform augmentation: per-method Bernoulli gating, additive
// noise at a target SNR, pitch shift (resample + WSOLA time stretch), and
// synthetic room reverberation. Every draw comes from an explicit Rng, so a
// plan is a pure function of (rng state, config, corpus size).

// Copyright 2026  The wavssl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "wavssl/audio.hpp"
#include "wavssl/rng.hpp"
#include "wavssl/tensor.hpp"

namespace wavssl {

struct AugmentationConfig {
  double apply_prob = 0.5;   // per-method gating probability
  double snr_low = 10.0;     // dB
  double snr_high = 15.0;    // dB
  double pitch_sigma = 50.0; // cents (1/100 semitone)
  double room_sigma = 60.0;  // room-scale units
  std::string noise_manifest;

  void validate() const {
    if (apply_prob < 0.0 || apply_prob > 1.0)
      throw ContractError("augment: apply_prob must be in [0,1]");
    if (snr_low > snr_high) throw ContractError("augment: snr_low must be <= snr_high");
    if (pitch_sigma < 0.0) throw ContractError("augment: pitch_sigma must be >= 0");
    if (room_sigma < 0.0) throw ContractError("augment: room_sigma must be >= 0");
  }
};

struct AdditivePlan {
  std::size_t noise_index = 0;
  std::uint64_t noise_offset = 0;  // reduced modulo the clip length at apply time
  double snr_db = 0.0;
};

struct PitchPlan {
  double shift_cents = 0.0;
};

struct ReverbPlan {
  double room_scale = 0.0;  // in [0, 100]
  std::uint64_t rir_seed = 0;
};

/// One sampled realization of the augmentation scheme for one example.
struct AugmentationPlan {
  std::optional<AdditivePlan> additive;
  std::optional<PitchPlan> pitch;
  std::optional<ReverbPlan> reverb;
};

struct RoomImpulseResponse {
  std::vector<double> taps;  // taps[0] == 1 (direct path)
  std::uint32_t sample_rate = 16000;
};

/// Draws one plan. Each method is gated independently with probability p;
/// the draw order (additive, pitch, reverb; gate before parameters) is fixed.
inline AugmentationPlan sample_plan(Rng& rng, const AugmentationConfig& config,
                                    std::size_t noise_corpus_size) {
  config.validate();
  AugmentationPlan plan;
  if (rng.bernoulli(config.apply_prob)) {
    if (noise_corpus_size == 0) {
      throw ContractError("augment: additive augmentation selected but the noise corpus is empty");
    }
    AdditivePlan a;
    a.noise_index = static_cast<std::size_t>(rng.below(noise_corpus_size));
    a.noise_offset = rng.next_u64();
    a.snr_db = rng.uniform(config.snr_low, config.snr_high);
    plan.additive = a;
  }
  if (rng.bernoulli(config.apply_prob)) {
    plan.pitch = PitchPlan{rng.normal(0.0, config.pitch_sigma)};
  }
  if (rng.bernoulli(config.apply_prob)) {
    ReverbPlan r;
    r.room_scale = std::min(std::abs(rng.normal(0.0, config.room_sigma)), 100.0);
    r.rir_seed = rng.next_u64();
    plan.reverb = r;
  }
  return plan;
}

/// Loops `noise` starting at `offset` until `length` samples are produced.
inline AudioBuffer tile_noise(const AudioBuffer& noise, std::uint64_t offset, std::size_t length) {
  if (noise.samples.empty()) throw ContractError("tile_noise: empty noise clip");
  AudioBuffer out;
  out.sample_rate = noise.sample_rate;
  out.samples.resize(length);
  const std::size_t n = noise.samples.size();
  std::size_t pos = static_cast<std::size_t>(offset % n);
  for (std::size_t i = 0; i < length; ++i) {
    out.samples[i] = noise.samples[pos];
    if (++pos == n) pos = 0;
  }
  return out;
}

struct MixResult {
  AudioBuffer audio;
  double gain = 0.0;
  bool silent_clean = false;  // clean signal below the RMS floor; returned unchanged
};

/// clean + g * noise with g = (rms(clean)/rms(noise)) * 10^(-snr_db/20).
/// `noise` must already be tiled to the clean length at the same rate.
inline MixResult mix_additive(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db) {
  if (clean.sample_rate != noise.sample_rate) {
    throw ContractError("mix_additive: sample rates differ (" + std::to_string(clean.sample_rate) +
                        " vs " + std::to_string(noise.sample_rate) + ")");
  }
  if (clean.samples.size() != noise.samples.size()) {
    throw ContractError("mix_additive: noise must be tiled to the clean length");
  }
  const double rms_clean = clean.rms();
  MixResult res;
  if (rms_clean < 1e-8) {
    res.audio = clean;
    res.silent_clean = true;
    return res;
  }
  const double rms_noise = noise.rms();
  if (rms_noise < 1e-8) {
    throw ContractError("mix_additive: silent noise segment (rms < 1e-8)");
  }
  const double gain = rms_clean / rms_noise * std::pow(10.0, -snr_db / 20.0);
  res.audio.sample_rate = clean.sample_rate;
  res.audio.samples.resize(clean.samples.size());
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    res.audio.samples[i] = clean.samples[i] + gain * noise.samples[i];
  }
  res.gain = gain;
  return res;
}

namespace detail {

/// WSOLA time stretch of `in` to exactly `out_len` samples: 25 ms Hann
/// windows at 50% hop, cross-correlation alignment within +-5 ms.
inline std::vector<double> wsola_stretch(const std::vector<double>& in, std::size_t out_len,
                                         std::uint32_t rate) {
  const std::size_t w = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(0.025 * rate)));
  const std::size_t hop = w / 2;
  const std::ptrdiff_t tol = static_cast<std::ptrdiff_t>(std::lround(0.005 * rate));
  if (in.size() <= w + 1 || out_len <= w + 1) {
    // too short for overlap-add; fall back to linear interpolation
    std::vector<double> out(out_len, 0.0);
    if (in.size() >= 2 && out_len >= 1) {
      for (std::size_t i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * (in.size() - 1) / std::max<std::size_t>(out_len - 1, 1);
        const std::size_t k = std::min(static_cast<std::size_t>(pos), in.size() - 2);
        const double f = pos - static_cast<double>(k);
        out[i] = in[k] * (1.0 - f) + in[k + 1] * f;
      }
    } else if (!in.empty()) {
      std::fill(out.begin(), out.end(), in[0]);
    }
    return out;
  }

  std::vector<double> window(w);
  for (std::size_t i = 0; i < w; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(w));

  const double ratio = static_cast<double>(in.size()) / static_cast<double>(out_len);
  std::vector<double> acc(out_len + w, 0.0), wsum(out_len + w, 0.0);
  const auto max_start = static_cast<std::ptrdiff_t>(in.size() - w);

  std::ptrdiff_t prev = 0;
  for (std::size_t s = 0;; s += hop) {
    std::ptrdiff_t a;
    if (s == 0) {
      a = 0;
    } else {
      const auto nominal = static_cast<std::ptrdiff_t>(std::llround(s * ratio));
      // reference: the natural continuation of the previously copied frame
      const std::ptrdiff_t ref = std::clamp<std::ptrdiff_t>(prev + static_cast<std::ptrdiff_t>(hop), 0, max_start);
      const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(nominal - tol, 0, max_start);
      const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(nominal + tol, 0, max_start);
      double best_score = -1e300;
      a = lo;
      for (std::ptrdiff_t cand = lo; cand <= hi; ++cand) {
        double corr = 0.0, energy = 1e-12;
        for (std::size_t i = 0; i < w; i += 2) {  // stride 2: adequate and twice as fast
          const double xi = in[static_cast<std::size_t>(cand) + i];
          corr += xi * in[static_cast<std::size_t>(ref) + i];
          energy += xi * xi;
        }
        const double score = corr / std::sqrt(energy);
        if (score > best_score) {
          best_score = score;
          a = cand;
        }
      }
    }
    for (std::size_t i = 0; i < w; ++i) {
      acc[s + i] += in[static_cast<std::size_t>(a) + i] * window[i];
      wsum[s + i] += window[i];
    }
    prev = a;
    if (s + hop + w > out_len) break;
  }

  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = wsum[i] > 1e-9 ? acc[i] / wsum[i] : 0.0;
  return out;
}

}  // namespace detail

/// Shifts the pitch by `shift_cents` while preserving duration: resample by
/// 2^(-cents/1200), reinterpret at the original rate (scales frequencies by
/// 2^(cents/1200)), then WSOLA-stretch back to the original length.
inline AudioBuffer pitch_shift(const AudioBuffer& audio, double shift_cents) {
  if (std::abs(shift_cents) > 1200.0) {
    std::cerr << "[wavssl] warning: pitch shift " << shift_cents << " cents clamped to one octave\n";
    shift_cents = std::clamp(shift_cents, -1200.0, 1200.0);
  }
  if (shift_cents == 0.0 || audio.samples.empty()) return audio;
  const double factor = std::pow(2.0, shift_cents / 1200.0);
  const auto inter_rate =
      static_cast<std::uint32_t>(std::llround(static_cast<double>(audio.sample_rate) / factor));
  AudioBuffer shifted = resample(audio, inter_rate);
  shifted.sample_rate = audio.sample_rate;  // reinterpret: frequencies scale by `factor`
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples = detail::wsola_stretch(shifted.samples, audio.samples.size(), audio.sample_rate);
  return out;
}

/// Synthesizes a room impulse response as a unit direct tap followed by
/// exponentially decaying Gaussian noise. RT60 = (room_scale/100) * 0.8 s;
/// the tail is scaled so the direct-to-reverberant energy ratio equals
/// 20*(1 - room_scale/100) + 3 dB; taps stop where the envelope passes -60 dB.
inline RoomImpulseResponse synthesize_rir(double room_scale, std::uint64_t rir_seed,
                                          std::uint32_t sample_rate) {
  if (room_scale < 0.0 || room_scale > 100.0) {
    throw ContractError("synthesize_rir: room_scale must be in [0,100]");
  }
  RoomImpulseResponse rir;
  rir.sample_rate = sample_rate;
  rir.taps.assign(1, 1.0);
  const double rt60 = room_scale / 100.0 * 0.8;
  const std::size_t tail_len = static_cast<std::size_t>(std::llround(rt60 * sample_rate));
  if (tail_len == 0) return rir;  // identity filter

  const double tau = rt60 / std::log(1000.0);
  Rng rng(rir_seed);
  std::vector<double> tail(tail_len);
  double tail_energy = 0.0;
  for (std::size_t i = 0; i < tail_len; ++i) {
    const double t = static_cast<double>(i + 1) / sample_rate;
    tail[i] = rng.normal() * std::exp(-t / tau);
    tail_energy += tail[i] * tail[i];
  }
  const double drr_db = 20.0 * (1.0 - room_scale / 100.0) + 3.0;
  const double target_energy = std::pow(10.0, -drr_db / 10.0);  // direct energy is 1
  const double scale = tail_energy > 0.0 ? std::sqrt(target_energy / tail_energy) : 0.0;
  rir.taps.resize(1 + tail_len);
  for (std::size_t i = 0; i < tail_len; ++i) rir.taps[1 + i] = tail[i] * scale;
  return rir;
}

/// Full convolution with the RIR, truncated to the input length. The result
/// is peak-normalized only when it exceeds the [-1, 1] range.
inline AudioBuffer apply_reverb(const AudioBuffer& audio, const RoomImpulseResponse& rir) {
  if (audio.sample_rate != rir.sample_rate) {
    throw ContractError("apply_reverb: sample rates differ");
  }
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.assign(audio.samples.size(), 0.0);
  const std::size_t n = audio.samples.size();
  for (std::size_t k = 0; k < rir.taps.size(); ++k) {
    const double h = rir.taps[k];
    if (h == 0.0) continue;
    for (std::size_t i = k; i < n; ++i) out.samples[i] += h * audio.samples[i - k];
  }
  double peak = 0.0;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0) {
    for (double& s : out.samples) s /= peak;
  }
  return out;
}

/// Trims or zero-pads to exactly `length` samples.
inline AudioBuffer fix_length(AudioBuffer buffer, std::size_t length) {
  buffer.samples.resize(length, 0.0);
  return buffer;
}

/// Applies one plan. Order: pitch, reverb, then additive noise (so the SNR is
/// measured against the already-processed signal). Silent noise offsets are
/// re-drawn deterministically from the plan's offset.
inline AudioBuffer apply_plan(const AudioBuffer& audio, const AugmentationPlan& plan,
                              const std::vector<AudioBuffer>& noise_corpus) {
  AudioBuffer x = audio;
  const std::size_t len = audio.samples.size();
  if (plan.pitch) x = pitch_shift(x, plan.pitch->shift_cents);
  if (plan.reverb) {
    x = apply_reverb(x, synthesize_rir(plan.reverb->room_scale, plan.reverb->rir_seed, x.sample_rate));
  }
  if (plan.additive) {
    if (plan.additive->noise_index >= noise_corpus.size()) {
      throw ContractError("apply_plan: noise index out of range");
    }
    const AudioBuffer& clip = noise_corpus[plan.additive->noise_index];
    std::uint64_t offset = plan.additive->noise_offset;
    AudioBuffer tiled;
    bool found = false;
    for (int attempt = 0; attempt < 16 && !found; ++attempt) {
      tiled = tile_noise(clip, offset, x.samples.size());
      if (tiled.rms() >= 1e-8) {
        found = true;
      } else {
        offset = mix64(offset + 1);
      }
    }
    if (found) {
      x = mix_additive(x, tiled, plan.additive->snr_db).audio;
    }
    // a fully silent clip contributes nothing; leave the signal as-is
  }
  return fix_length(std::move(x), len);
}

struct AugmentPair {
  AudioBuffer source;
  AudioBuffer target;
  AugmentationPlan source_plan;
  AugmentationPlan target_plan;
};

/// Duplicates the input and applies independently sampled plans to the source
/// (context path) and target (quantized-target path). Both outputs are fixed
/// to exactly the input length so frame alignment is preserved.
inline AugmentPair augment_pair(const AudioBuffer& audio,
                                const std::vector<AudioBuffer>& noise_corpus, Rng& rng,
                                const AugmentationConfig& config) {
  AugmentPair pair;
  pair.source_plan = sample_plan(rng, config, noise_corpus.size());
  pair.target_plan = sample_plan(rng, config, noise_corpus.size());
  pair.source = apply_plan(audio, pair.source_plan, noise_corpus);
  pair.target = apply_plan(audio, pair.target_plan, noise_corpus);
  return pair;
}

/// Loads every WAV named by a manifest into memory.
inline std::vector<AudioBuffer> load_corpus(const std::string& manifest_path, bool strict = false) {
  std::vector<AudioBuffer> corpus;
  for (const auto& entry : load_manifest(manifest_path, strict)) {
    corpus.push_back(read_wav(entry.path));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Empirical statistics over sampled plans (used by the CLI and acceptance).
// ---------------------------------------------------------------------------

struct AugmentStats {
  std::size_t trials = 0;
  double additive_rate = 0.0;
  double pitch_rate = 0.0;
  double reverb_rate = 0.0;
  double snr_ks_statistic = 0.0;  // against Uniform(snr_low, snr_high)
  double pitch_mean = 0.0;
  double pitch_std = 0.0;
  double room_scale_max = 0.0;
};

inline AugmentStats compute_augment_stats(const AugmentationConfig& config, std::size_t trials,
                                          std::uint64_t seed, std::size_t noise_corpus_size = 1) {
  Rng rng(seed);
  AugmentStats st;
  st.trials = trials;
  std::vector<double> snrs, cents;
  std::size_t n_add = 0, n_pitch = 0, n_rev = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    const AugmentationPlan plan = sample_plan(rng, config, noise_corpus_size);
    if (plan.additive) {
      ++n_add;
      snrs.push_back(plan.additive->snr_db);
    }
    if (plan.pitch) {
      ++n_pitch;
      cents.push_back(plan.pitch->shift_cents);
    }
    if (plan.reverb) {
      ++n_rev;
      st.room_scale_max = std::max(st.room_scale_max, plan.reverb->room_scale);
    }
  }
  st.additive_rate = static_cast<double>(n_add) / trials;
  st.pitch_rate = static_cast<double>(n_pitch) / trials;
  st.reverb_rate = static_cast<double>(n_rev) / trials;

  if (!snrs.empty()) {
    std::sort(snrs.begin(), snrs.end());
    const double span = config.snr_high - config.snr_low;
    double d = 0.0;
    for (std::size_t i = 0; i < snrs.size(); ++i) {
      const double f = span > 0.0 ? (snrs[i] - config.snr_low) / span
                                  : (snrs[i] >= config.snr_low ? 1.0 : 0.0);
      const double lo = static_cast<double>(i) / snrs.size();
      const double hi = static_cast<double>(i + 1) / snrs.size();
      d = std::max({d, std::abs(f - lo), std::abs(f - hi)});
    }
    st.snr_ks_statistic = d;
  }
  if (!cents.empty()) {
    double mean = 0.0;
    for (double c : cents) mean += c;
    mean /= static_cast<double>(cents.size());
    double var = 0.0;
    for (double c : cents) var += (c - mean) * (c - mean);
    var /= static_cast<double>(cents.size() > 1 ? cents.size() - 1 : 1);
    st.pitch_mean = mean;
    st.pitch_std = std::sqrt(var);
  }
  return st;
}

}  // namespace wavssl
