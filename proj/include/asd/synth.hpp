// SPDX-License-Identifier: Apache-2.0
//
// Procedural audiovisual clips with exact ground truth. A clip shows one
// cartoon face (oval, eyes, mouth rectangle) in a frame. The four kinds are
// the positive case and three hard negatives:
//
//   SPEAKING           mouth aperture follows the speech envelope
//   SILENT_MOTION      same mouth dynamics, near-silent audio
//   OFFSCREEN_SPEECH   closed mouth, speech from someone else
//   STATIC_WITH_MUSIC  closed mouth, tonal music
//
// SPEAKING and SILENT_MOTION draw their mouth trajectories from the same
// distribution, so no single frame separates them without the audio.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "asd/errors.hpp"
#include "asd/labels.hpp"
#include "asd/media.hpp"
#include "asd/speech.hpp"

namespace asd {

enum class ClipKind { Speaking, SilentMotion, OffscreenSpeech, StaticWithMusic };
enum class FaceSizeClass { Small, Medium, Large };

inline constexpr std::array<ClipKind, 4> kAllClipKinds = {ClipKind::Speaking, ClipKind::SilentMotion,
                                                         ClipKind::OffscreenSpeech, ClipKind::StaticWithMusic};

inline std::string to_string(ClipKind k) {
  switch (k) {
    case ClipKind::Speaking: return "SPEAKING";
    case ClipKind::SilentMotion: return "SILENT_MOTION";
    case ClipKind::OffscreenSpeech: return "OFFSCREEN_SPEECH";
    case ClipKind::StaticWithMusic: return "STATIC_WITH_MUSIC";
  }
  return "SPEAKING";
}

inline std::string to_string(FaceSizeClass f) {
  switch (f) {
    case FaceSizeClass::Small: return "SMALL";
    case FaceSizeClass::Medium: return "MEDIUM";
    case FaceSizeClass::Large: return "LARGE";
  }
  return "MEDIUM";
}

struct ClipSpec {
  ClipKind kind = ClipKind::Speaking;
  double duration = 2.0;
  std::uint64_t seed = 0;
  double noise_level = 0.0;
  FaceSizeClass face_size = FaceSizeClass::Medium;

  void validate() const {
    if (!(duration >= 1.0 && duration <= 10.0)) throw ValidationError("clip duration must lie in [1, 10] s");
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) throw ValidationError("noise level must lie in [0, 1]");
  }
};

inline constexpr int kSynthFrameWidth = 224;
inline constexpr int kSynthFrameHeight = 180;
inline constexpr double kSynthFrameRate = 20.0;
inline constexpr int kSynthSampleRate = 16000;
inline constexpr double kSpeechAmplitude = 0.25;  ///< RMS of speech at envelope 1
inline constexpr double kSpeechGate = 0.2;         ///< fraction of the envelope peak
inline constexpr double kSpeechGateRms = kSpeechGate * kSpeechAmplitude;
inline constexpr double kSilentRms = 0.002;

inline int face_width_px(FaceSizeClass f) {
  switch (f) {
    case FaceSizeClass::Small: return 48;
    case FaceSizeClass::Medium: return 88;
    case FaceSizeClass::Large: return 136;
  }
  return 88;
}

struct SyntheticClip {
  ClipSpec spec;
  std::string video_id;
  std::string track_id;
  std::vector<double> timestamps;
  std::vector<BoundingBox> boxes;
  std::vector<double> aperture;  ///< mouth opening in [0,1] per frame
  std::vector<SpeakLabel> labels;
  std::vector<RgbImage> frames;  ///< empty unless rendered
  Waveform audio;
  std::vector<SpeechSegment> speech;

  std::vector<LabeledFrame> labeled_frames() const {
    std::vector<LabeledFrame> out;
    for (std::size_t j = 0; j < timestamps.size(); ++j)
      out.push_back({video_id, timestamps[j], boxes[j], labels[j], track_id});
    return out;
  }

  FaceTrack face_track() const {
    FaceTrack t{track_id, video_id, {}, kSynthFrameRate};
    for (std::size_t j = 0; j < timestamps.size(); ++j) t.frames.push_back({timestamps[j], boxes[j], true});
    return t;
  }
};

namespace detail {

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : eng_(seed * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  double normal() {
    // Box-Muller; avoids implementation-defined std::normal_distribution.
    const double u1 = std::max(uniform(), 1e-300), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
  }
  std::uint64_t next() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

/// Smooth envelope in [0,1] with peak exactly 1, sampled at `rate` Hz.
struct Envelope {
  std::array<double, 3> freq{}, phase{}, amp{};
  double lo = 0, hi = 1;

  static Envelope draw(SynthRng& rng, double duration) {
    Envelope e;
    for (int k = 0; k < 3; ++k) {
      e.freq[k] = rng.uniform(0.6, 2.4);
      e.phase[k] = rng.uniform(0, 2 * std::numbers::pi);
      e.amp[k] = rng.uniform(0.5, 1.0);
    }
    // Normalize over a fine grid spanning the clip.
    e.lo = 1e300;
    e.hi = -1e300;
    const int n = static_cast<int>(duration * 1000) + 1;
    for (int i = 0; i <= n; ++i) {
      const double v = e.raw(duration * i / n);
      e.lo = std::min(e.lo, v);
      e.hi = std::max(e.hi, v);
    }
    return e;
  }

  double raw(double t) const {
    double v = 0;
    for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(2 * std::numbers::pi * freq[k] * t + phase[k]);
    return v;
  }

  double operator()(double t) const { return std::clamp((raw(t) - lo) / (hi - lo), 0.0, 1.0); }
};

struct SpeechCarrier {
  double f0 = 150, vibrato_rate = 5, vibrato_depth = 0.02;
  std::vector<double> phase, weight;
  double norm = 1;

  static SpeechCarrier draw(SynthRng& rng) {
    SpeechCarrier c;
    c.f0 = rng.uniform(110, 220);
    c.vibrato_rate = rng.uniform(3, 6);
    c.vibrato_depth = rng.uniform(0.01, 0.03);
    double power = 0;
    for (int k = 1; k * c.f0 * 1.05 < 3800; ++k) {
      c.phase.push_back(rng.uniform(0, 2 * std::numbers::pi));
      // Two broad formant-like bumps over a 1/k tilt.
      const double f = k * c.f0;
      const double w = (1.0 / k) * (1.0 + 1.5 * std::exp(-std::pow((f - 700) / 300, 2)) +
                                    0.8 * std::exp(-std::pow((f - 1800) / 400, 2)));
      c.weight.push_back(w);
      power += 0.5 * w * w;
    }
    c.norm = 1.0 / std::sqrt(power);
    return c;
  }

  /// Unit-RMS harmonic signal; `cycles` is the integrated f0 phase in cycles.
  double sample(double cycles) const {
    double v = 0;
    for (std::size_t k = 0; k < weight.size(); ++k)
      v += weight[k] * std::sin(2 * std::numbers::pi * (k + 1) * cycles + phase[k]);
    return v * norm;
  }
};

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace detail

/// Builds one clip. Pixels are rendered only when `render` is set; labels,
/// boxes, apertures, audio and speech segments are always produced.
inline SyntheticClip generate_clip(const ClipSpec& spec, const std::string& video_id, bool render = true) {
  spec.validate();
  using detail::SynthRng;
  SynthRng rng(spec.seed);
  SyntheticClip clip;
  clip.spec = spec;
  clip.video_id = video_id;
  clip.track_id = video_id + "_t1";

  const int n_frames = static_cast<int>(std::lround(spec.duration * kSynthFrameRate));
  const double clip_len = n_frames / kSynthFrameRate;

  // Draw every random quantity up front in a fixed order so media and
  // labels are a pure function of the seed.
  const auto mouth_env = detail::Envelope::draw(rng, clip_len);
  const auto other_env = detail::Envelope::draw(rng, clip_len);
  const auto carrier = detail::SpeechCarrier::draw(rng);
  const bool moving_mouth = spec.kind == ClipKind::Speaking || spec.kind == ClipKind::SilentMotion;

  const int fw = face_width_px(spec.face_size);
  const int fh = static_cast<int>(std::lround(fw * 1.15));
  const double drift_amp_x = rng.uniform(0, 4), drift_amp_y = rng.uniform(0, 3);
  const double drift_rate = rng.uniform(0.2, 0.6), drift_phase = rng.uniform(0, 2 * std::numbers::pi);
  const double cx = rng.uniform(fw / 2.0 + 6, kSynthFrameWidth - fw / 2.0 - 6);
  const double cy = rng.uniform(fh / 2.0 + 4, kSynthFrameHeight - fh / 2.0 - 4);
  const std::array<double, 3> skin = {rng.uniform(0.55, 0.95), rng.uniform(0.45, 0.75), rng.uniform(0.35, 0.6)};
  const std::array<double, 3> bg = {rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
  const double bg_fx = rng.uniform(0.01, 0.06), bg_fy = rng.uniform(0.01, 0.06), bg_ph = rng.uniform(0, 6.28);
  const std::uint64_t noise_seed = rng.next();

  // Geometry and labels.
  for (int j = 0; j < n_frames; ++j) {
    const double t = j / kSynthFrameRate;
    clip.timestamps.push_back(t);
    const double dx = drift_amp_x * std::sin(2 * std::numbers::pi * drift_rate * t + drift_phase);
    const double dy = drift_amp_y * std::cos(2 * std::numbers::pi * drift_rate * t + drift_phase);
    const double x1 = std::round(cx + dx - fw / 2.0), y1 = std::round(cy + dy - fh / 2.0);
    clip.boxes.push_back({x1 / kSynthFrameWidth, y1 / kSynthFrameHeight, (x1 + fw) / kSynthFrameWidth,
                          (y1 + fh) / kSynthFrameHeight});
    const double a = moving_mouth ? mouth_env(t) : 0.0;
    clip.aperture.push_back(a);
    const bool voiced = spec.kind == ClipKind::Speaking && a > kSpeechGate;
    clip.labels.push_back(voiced ? SpeakLabel::SpeakingAudible : SpeakLabel::NotSpeaking);
  }

  // Audio.
  SynthRng audio_rng(noise_seed ^ 0xA5A5A5A5ull);
  const int n_samples = static_cast<int>(std::lround(clip_len * kSynthSampleRate));
  clip.audio.sample_rate = kSynthSampleRate;
  clip.audio.samples.resize(n_samples);
  std::array<double, 3> chord{};
  double cycles = 0;
  for (int i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / kSynthSampleRate;
    double s = 0;
    switch (spec.kind) {
      case ClipKind::Speaking:
      case ClipKind::OffscreenSpeech: {
        const double f = carrier.f0 * (1 + carrier.vibrato_depth * std::sin(2 * std::numbers::pi * carrier.vibrato_rate * t));
        cycles += f / kSynthSampleRate;
        const double env = spec.kind == ClipKind::Speaking ? mouth_env(t) : other_env(t);
        s = kSpeechAmplitude * env * carrier.sample(cycles);
        break;
      }
      case ClipKind::SilentMotion: s = kSilentRms * audio_rng.normal(); break;
      case ClipKind::StaticWithMusic: {
        const int bar = static_cast<int>(t / 0.5);
        if (i == 0 || static_cast<int>((i - 1) / (0.5 * kSynthSampleRate)) != bar) {
          const double root = 220.0 * std::pow(2.0, std::floor(audio_rng.uniform(0, 12)) / 12.0);
          chord = {root, root * std::pow(2.0, 4.0 / 12), root * std::pow(2.0, 7.0 / 12)};
        }
        for (double f : chord) s += std::sin(2 * std::numbers::pi * f * t);
        s *= 0.12;
        break;
      }
    }
    s += 0.02 * spec.noise_level * audio_rng.normal();
    clip.audio.samples[i] = static_cast<float>(s);
  }

  // Speech activity on the clip clock.
  const SpeechCondition speech_cond =
      spec.noise_level >= 0.5 ? SpeechCondition::SpeechWithNoise : SpeechCondition::Clean;
  if (spec.kind == ClipKind::Speaking || spec.kind == ClipKind::OffscreenSpeech) {
    const auto& env = spec.kind == ClipKind::Speaking ? mouth_env : other_env;
    const int steps = static_cast<int>(std::lround(clip_len * 100));
    bool cur = env(0) > kSpeechGate;
    double seg_start = 0;
    for (int k = 1; k <= steps; ++k) {
      const double t = k / 100.0;
      const bool v = k < steps ? env(t) > kSpeechGate : !cur;
      if (v != cur || k == steps) {
        clip.speech.push_back({video_id, seg_start, k == steps ? clip_len : t,
                               cur ? speech_cond : SpeechCondition::NoSpeech});
        seg_start = t;
        cur = v;
      }
    }
  } else {
    clip.speech.push_back({video_id, 0.0, clip_len, SpeechCondition::NoSpeech});
  }

  if (!render) return clip;

  // Pixels.
  SynthRng pix_rng(noise_seed);
  const double sigma = 0.08 * spec.noise_level;
  for (int j = 0; j < n_frames; ++j) {
    RgbImage img(kSynthFrameWidth, kSynthFrameHeight);
    const BoundingBox& b = clip.boxes[j];
    const double bx1 = b.x1 * kSynthFrameWidth, by1 = b.y1 * kSynthFrameHeight;
    const double ocx = bx1 + fw / 2.0, ocy = by1 + fh / 2.0;
    const double mouth_w = 0.4 * fw, mouth_h = (0.03 + 0.22 * clip.aperture[j]) * fh;
    const double mcx = ocx, mcy = by1 + 0.72 * fh;
    for (int y = 0; y < kSynthFrameHeight; ++y)
      for (int x = 0; x < kSynthFrameWidth; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double tex = 0.08 * std::sin(bg_fx * px * 6.28 + bg_ph) * std::cos(bg_fy * py * 6.28);
        std::array<double, 3> c = {bg[0] + tex, bg[1] + tex, bg[2] + tex};
        const double ex = (px - ocx) / (fw / 2.0), ey = (py - ocy) / (fh / 2.0);
        if (ex * ex + ey * ey <= 1.0) {
          c = skin;
          for (double eyex : {0.33, 0.67}) {
            const double qx = (px - (bx1 + eyex * fw)) / (0.07 * fw), qy = (py - (by1 + 0.4 * fh)) / (0.05 * fh);
            if (qx * qx + qy * qy <= 1.0) c = {0.08, 0.06, 0.05};
          }
          if (std::fabs(px - mcx) <= mouth_w / 2 && std::fabs(py - mcy) <= mouth_h / 2) c = {0.35, 0.05, 0.06};
        }
        float* dst = img.at(x, y);
        for (int k = 0; k < 3; ++k) dst[k] = detail::clamp01(c[k] + (sigma > 0 ? sigma * pix_rng.normal() : 0.0));
      }
    clip.frames.push_back(std::move(img));
  }
  return clip;
}

/// A balanced corpus description: n clips of each kind with derived seeds.
struct CorpusPlan {
  struct Entry {
    std::string video_id;
    ClipSpec spec;
  };
  std::vector<Entry> clips;
};

struct CorpusOptions {
  double min_duration = 1.0;
  double max_duration = 3.0;
  double noise_level = 0.0;
  std::string prefix = "syn";
};

/// Interleaves kinds (SPEAKING, SILENT_MOTION, ...) so any prefix stays
/// roughly balanced. Durations are whole frames in [min, max].
inline CorpusPlan plan_corpus(int n_per_kind, std::uint64_t seed, const CorpusOptions& opt = {}) {
  if (n_per_kind < 1) throw ValidationError("need at least one clip per kind");
  if (!(opt.min_duration >= 1.0 && opt.max_duration <= 10.0 && opt.min_duration <= opt.max_duration))
    throw ValidationError("corpus durations must satisfy 1 <= min <= max <= 10");
  detail::SynthRng rng(seed);
  CorpusPlan plan;
  for (int i = 0; i < n_per_kind; ++i)
    for (ClipKind k : kAllClipKinds) {
      ClipSpec s;
      s.kind = k;
      const double d = rng.uniform(opt.min_duration, opt.max_duration);
      s.duration = std::clamp(std::round(d * kSynthFrameRate) / kSynthFrameRate, opt.min_duration, opt.max_duration);
      s.seed = rng.next();
      s.noise_level = opt.noise_level;
      s.face_size = static_cast<FaceSizeClass>(rng.next() % 3);
      char id[64];
      std::snprintf(id, sizeof id, "%s%llu_%04d", opt.prefix.c_str(), static_cast<unsigned long long>(seed),
                    static_cast<int>(plan.clips.size()));
      plan.clips.push_back({id, s});
    }
  return plan;
}

}  // namespace asd
