// SPDX-License-Identifier: Apache-2.0
//
// Model inputs: grayscale face thumbnails, causal face stacks, log-mel
// spectrograms over the preceding half second of audio, and fixed-length
// training windows cut from featurized tracks.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "asd/errors.hpp"
#include "asd/labels.hpp"
#include "asd/media.hpp"

namespace asd {

inline constexpr int kFaceSize = 128;
inline constexpr int kSampleRate = 16000;
inline constexpr int kMelBins = 64;
inline constexpr int kMelFrames = 48;
inline constexpr int kMelWindowSamples = 400;  // 25 ms
inline constexpr int kMelHopSamples = 160;     // 10 ms
inline constexpr int kMelContextSamples = 8000;  // 0.5 s
inline constexpr double kMelLowHz = 125.0;
inline constexpr double kMelHighHz = 7500.0;
inline constexpr double kLogFloor = 1e-3;
inline constexpr int kWindowFrames = 60;
inline constexpr int kWindowStrideFrames = 40;

// ------------------------------------------------------------------ faces

/// Crops `box` out of `frame`, squashes it to size x size with bilinear
/// sampling, and converts to luma.
inline GrayImage crop_face(const RgbImage& frame, const BoundingBox& box, int size = kFaceSize) {
  const int x0 = static_cast<int>(std::lround(box.x1 * frame.width));
  const int x1 = static_cast<int>(std::lround(box.x2 * frame.width));
  const int y0 = static_cast<int>(std::lround(box.y1 * frame.height));
  const int y1 = static_cast<int>(std::lround(box.y2 * frame.height));
  const int cx0 = std::clamp(x0, 0, frame.width), cx1 = std::clamp(x1, 0, frame.width);
  const int cy0 = std::clamp(y0, 0, frame.height), cy1 = std::clamp(y1, 0, frame.height);
  if (cx1 <= cx0 || cy1 <= cy0) throw ValidationError("degenerate face box after pixel rounding");
  const int cw = cx1 - cx0, ch = cy1 - cy0;

  GrayImage gray(cw, ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      const float* p = frame.at(cx0 + x, cy0 + y);
      gray.at(x, y) = luma(p[0], p[1], p[2]);
    }

  GrayImage out(size, size);
  const double sx = static_cast<double>(cw) / size, sy = static_cast<double>(ch) / size;
  for (int v = 0; v < size; ++v) {
    const double fy = std::clamp((v + 0.5) * sy - 0.5, 0.0, ch - 1.0);
    const int iy = std::min(static_cast<int>(fy), ch - 1), iy1 = std::min(iy + 1, ch - 1);
    const float wy = static_cast<float>(fy - iy);
    for (int u = 0; u < size; ++u) {
      const double fx = std::clamp((u + 0.5) * sx - 0.5, 0.0, cw - 1.0);
      const int ix = std::min(static_cast<int>(fx), cw - 1), ix1 = std::min(ix + 1, cw - 1);
      const float wx = static_cast<float>(fx - ix);
      const float top = gray.at(ix, iy) * (1 - wx) + gray.at(ix1, iy) * wx;
      const float bot = gray.at(ix, iy1) * (1 - wx) + gray.at(ix1, iy1) * wx;
      out.at(u, v) = std::clamp(top * (1 - wy) + bot * wy, 0.f, 1.f);
    }
  }
  return out;
}

/// M thumbnails ending at the anchor frame, interleaved HWC for the model.
struct FaceStack {
  int size = kFaceSize;
  int depth = 1;
  double anchor_time = 0;
  std::vector<float> data;  // (y * size + x) * depth + m, oldest frame first

  float at(int x, int y, int m) const { return data[(static_cast<std::size_t>(y) * size + x) * depth + m]; }
};

inline void interleave_stack(std::span<const GrayImage* const> frames, std::vector<float>& out) {
  const int depth = static_cast<int>(frames.size());
  const int size = frames.front()->width;
  out.resize(static_cast<std::size_t>(size) * size * depth);
  for (int m = 0; m < depth; ++m) {
    const float* src = frames[m]->data.data();
    for (std::size_t p = 0, n = static_cast<std::size_t>(size) * size; p < n; ++p) out[p * depth + m] = src[p];
  }
}

/// Stacks crops[j-M+1 .. j]; indices before the track start repeat crops[0].
inline FaceStack make_face_stack(std::span<const GrayImage> crops, std::ptrdiff_t j, int depth,
                                 double anchor_time = 0) {
  if (depth < 1) throw ValidationError("stack depth M must be >= 1");
  if (j < 0 || j >= static_cast<std::ptrdiff_t>(crops.size())) throw ValidationError("frame index outside track");
  std::vector<const GrayImage*> sel(depth);
  for (int m = 0; m < depth; ++m) sel[m] = &crops[std::max<std::ptrdiff_t>(0, j - depth + 1 + m)];
  FaceStack st;
  st.size = crops[j].width;
  st.depth = depth;
  st.anchor_time = anchor_time;
  interleave_stack(sel, st.data);
  return st;
}

// ------------------------------------------------------------------ audio

/// 64 x 48 log-mel energies, row = mel bin, column = time frame (oldest first).
struct MelFeature {
  double anchor_time = 0;
  std::vector<float> data = std::vector<float>(static_cast<std::size_t>(kMelBins) * kMelFrames, 0.f);

  float at(int bin, int frame) const { return data[static_cast<std::size_t>(bin) * kMelFrames + frame]; }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Hann-windowed magnitude DFT followed by triangular mel filters.
class MelFilterbank {
 public:
  static constexpr int kBinsFft = kMelWindowSamples / 2 + 1;

  MelFilterbank() {
    window_.resize(kMelWindowSamples);
    for (int n = 0; n < kMelWindowSamples; ++n)
      window_[n] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * n / kMelWindowSamples);
    cos_.resize(static_cast<std::size_t>(kBinsFft) * kMelWindowSamples);
    sin_.resize(cos_.size());
    for (int k = 0; k < kBinsFft; ++k)
      for (int n = 0; n < kMelWindowSamples; ++n) {
        const double a = 2 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * n) % kMelWindowSamples) /
                         kMelWindowSamples;
        cos_[static_cast<std::size_t>(k) * kMelWindowSamples + n] = std::cos(a) * window_[n];
        sin_[static_cast<std::size_t>(k) * kMelWindowSamples + n] = std::sin(a) * window_[n];
      }
    const double lo = hz_to_mel(kMelLowHz), hi = hz_to_mel(kMelHighHz);
    centers_.resize(kMelBins);
    weights_.assign(static_cast<std::size_t>(kMelBins) * kBinsFft, 0.0);
    for (int m = 0; m < kMelBins; ++m) {
      const double f_lo = mel_to_hz(lo + (hi - lo) * m / (kMelBins + 1));
      const double f_c = mel_to_hz(lo + (hi - lo) * (m + 1) / (kMelBins + 1));
      const double f_hi = mel_to_hz(lo + (hi - lo) * (m + 2) / (kMelBins + 1));
      centers_[m] = f_c;
      for (int k = 0; k < kBinsFft; ++k) {
        const double f = static_cast<double>(k) * kSampleRate / kMelWindowSamples;
        double w = 0;
        if (f > f_lo && f <= f_c) w = (f - f_lo) / (f_c - f_lo);
        else if (f > f_c && f < f_hi) w = (f_hi - f) / (f_hi - f_c);
        weights_[static_cast<std::size_t>(m) * kBinsFft + k] = w;
      }
    }
  }

  static const MelFilterbank& instance() {
    static const MelFilterbank fb;
    return fb;
  }

  const std::vector<double>& center_frequencies() const { return centers_; }

  /// Log-mel column for the 400 samples starting at `frame`.
  void column(const float* frame, float* out_bins, std::size_t out_stride) const {
    double mag[kBinsFft];
    for (int k = 0; k < kBinsFft; ++k) {
      const double* c = cos_.data() + static_cast<std::size_t>(k) * kMelWindowSamples;
      const double* s = sin_.data() + static_cast<std::size_t>(k) * kMelWindowSamples;
      double re = 0, im = 0;
      for (int n = 0; n < kMelWindowSamples; ++n) {
        re += c[n] * frame[n];
        im -= s[n] * frame[n];
      }
      mag[k] = std::sqrt(re * re + im * im);
    }
    for (int m = 0; m < kMelBins; ++m) {
      const double* w = weights_.data() + static_cast<std::size_t>(m) * kBinsFft;
      double e = 0;
      for (int k = 0; k < kBinsFft; ++k) e += w[k] * mag[k];
      out_bins[m * out_stride] = static_cast<float>(std::log(e + kLogFloor));
    }
  }

 private:
  std::vector<double> window_, cos_, sin_, weights_, centers_;
};

/// Log-mel spectrogram of half a second of 16 kHz audio. Shorter input is
/// zero-padded on the left; longer input keeps its most recent 8000 samples.
inline MelFeature mel_spectrogram(std::span<const float> samples, int sample_rate = kSampleRate,
                                  double anchor_time = 0) {
  if (sample_rate != kSampleRate)
    throw ValidationError("sample rate " + std::to_string(sample_rate) + " Hz unsupported; resample to 16000 Hz");
  std::vector<float> buf(kMelContextSamples, 0.f);
  const std::size_t n = std::min<std::size_t>(samples.size(), kMelContextSamples);
  std::copy(samples.end() - static_cast<std::ptrdiff_t>(n), samples.end(), buf.end() - static_cast<std::ptrdiff_t>(n));
  MelFeature mf;
  mf.anchor_time = anchor_time;
  const auto& fb = MelFilterbank::instance();
  for (int t = 0; t < kMelFrames; ++t) fb.column(buf.data() + t * kMelHopSamples, mf.data.data() + t, kMelFrames);
  return mf;
}

/// Computes mel features for many anchors of one waveform, sharing columns
/// whose analysis frames coincide. Output equals per-anchor mel_spectrogram.
inline std::vector<MelFeature> mel_features_at(const Waveform& wav, std::span<const double> anchor_times) {
  if (wav.sample_rate != kSampleRate)
    throw ValidationError("sample rate " + std::to_string(wav.sample_rate) + " Hz unsupported; resample to 16000 Hz");
  const auto& fb = MelFilterbank::instance();
  std::map<long, std::vector<float>> cache;
  std::vector<float> frame(kMelWindowSamples);
  auto column_at = [&](long start) -> const std::vector<float>& {
    auto it = cache.find(start);
    if (it != cache.end()) return it->second;
    for (int i = 0; i < kMelWindowSamples; ++i) {
      const long s = start + i;
      frame[i] = (s >= 0 && s < static_cast<long>(wav.samples.size())) ? wav.samples[s] : 0.f;
    }
    std::vector<float> col(kMelBins);
    fb.column(frame.data(), col.data(), 1);
    return cache.emplace(start, std::move(col)).first->second;
  };
  std::vector<MelFeature> out;
  out.reserve(anchor_times.size());
  for (double t : anchor_times) {
    const long anchor = std::lround(t * kSampleRate);
    MelFeature mf;
    mf.anchor_time = t;
    for (int k = 0; k < kMelFrames; ++k) {
      const auto& col = column_at(anchor - kMelContextSamples + static_cast<long>(k) * kMelHopSamples);
      for (int m = 0; m < kMelBins; ++m) mf.data[static_cast<std::size_t>(m) * kMelFrames + k] = col[m];
    }
    out.push_back(std::move(mf));
  }
  return out;
}

/// Mel feature of digital silence: every entry is log(floor).
inline MelFeature silent_mel(double anchor_time = 0) {
  MelFeature mf;
  mf.anchor_time = anchor_time;
  std::fill(mf.data.begin(), mf.data.end(), static_cast<float>(std::log(kLogFloor)));
  return mf;
}

// ---------------------------------------------------------------- windows

/// A featurized track: one crop, mel feature and label per frame.
struct TrackFeatures {
  std::string track_id;
  std::string video_id;
  double frame_rate = kDefaultFrameRate;
  std::vector<double> timestamps;
  std::vector<BoundingBox> boxes;
  std::vector<double> face_widths_px;
  std::vector<GrayImage> crops;
  std::vector<MelFeature> mels;
  std::vector<SpeakLabel> labels;

  std::size_t size() const { return timestamps.size(); }
  double duration() const { return static_cast<double>(size()) / frame_rate; }
};

enum class TargetPolicy {
  Audible,      ///< positive iff SPEAKING_AUDIBLE
  AnySpeaking,  ///< SPEAKING_NOT_AUDIBLE also positive (visual-only studies)
};

inline double target_of(SpeakLabel l, TargetPolicy policy) {
  if (l == SpeakLabel::SpeakingAudible) return 1.0;
  if (l == SpeakLabel::SpeakingNotAudible && policy == TargetPolicy::AnySpeaking) return 1.0;
  return 0.0;
}

/// Featurizes a track against its media: crops every frame, computes a mel
/// feature anchored at each frame, and attaches labels from `timeline`.
/// `frame_at(timestamp)` returns the decoded video frame for a timestamp.
template <class FrameLookup>
TrackFeatures featurize_track(const FaceTrack& track, const LabelTimeline& timeline, FrameLookup&& frame_at,
                              const Waveform& audio) {
  TrackFeatures tf;
  tf.track_id = track.track_id;
  tf.video_id = track.video_id;
  tf.frame_rate = track.frame_rate;
  for (const auto& f : track.frames) {
    tf.timestamps.push_back(f.timestamp);
    tf.boxes.push_back(f.box);
    const RgbImage& frame = frame_at(f.timestamp);
    tf.face_widths_px.push_back(f.box.width() * frame.width);
    tf.crops.push_back(crop_face(frame, f.box));
    tf.labels.push_back(timeline.label_at(f.timestamp).value_or(SpeakLabel::NotSpeaking));
  }
  tf.mels = mel_features_at(audio, tf.timestamps);
  return tf;
}

/// One training/eval unit of 60 frames. Frames past the end of a short
/// track repeat its last crop, carry silent audio, and are masked out.
struct ExampleWindow {
  std::shared_ptr<const TrackFeatures> track;
  std::string track_id;
  int start_frame = 0;
  int valid_frames = 0;
  double start_time = 0;
  std::vector<double> targets = std::vector<double>(kWindowFrames, 0.0);
  std::vector<double> mask = std::vector<double>(kWindowFrames, 0.0);

  int frame_count() const { return kWindowFrames; }

  /// Track frame index used for window position j (edge-clamped).
  std::size_t track_index(int j) const {
    return static_cast<std::size_t>(start_frame + std::min(j, valid_frames - 1));
  }

  FaceStack face_stack(int j, int depth) const {
    const std::size_t idx = track_index(j);
    return make_face_stack(track->crops, static_cast<std::ptrdiff_t>(idx), depth, anchor_time(j));
  }

  double anchor_time(int j) const {
    if (j < valid_frames) return track->timestamps[start_frame + j];
    return track->timestamps[track_index(j)] + (j - valid_frames + 1) / track->frame_rate;
  }

  MelFeature mel(int j) const {
    if (j < valid_frames) return track->mels[start_frame + j];
    return silent_mel(anchor_time(j));
  }
};

/// Cuts a featurized track into 3 s windows with 1 s overlap (stride 40
/// frames). Trailing remainders shorter than the stride are dropped; a track
/// shorter than one window yields a single padded window.
inline std::vector<ExampleWindow> window_examples(std::shared_ptr<const TrackFeatures> track,
                                                  TargetPolicy policy = TargetPolicy::Audible,
                                                  int window = kWindowFrames, int stride = kWindowStrideFrames) {
  if (!track) throw ValidationError("null track");
  if (track->duration() < 1.0 - 1e-9)
    throw ValidationError("track " + track->track_id + " is shorter than 1 s; run the track pipeline first");
  const int n = static_cast<int>(track->size());
  std::vector<int> starts;
  if (n <= window) starts.push_back(0);
  else
    for (int s = 0; s + window <= n; s += stride) starts.push_back(s);
  std::vector<ExampleWindow> out;
  for (int s : starts) {
    ExampleWindow w;
    w.track = track;
    w.track_id = track->track_id;
    w.start_frame = s;
    w.valid_frames = std::min(window, n - s);
    w.start_time = track->timestamps[s];
    w.targets.assign(window, 0.0);
    w.mask.assign(window, 0.0);
    for (int j = 0; j < w.valid_frames; ++j) {
      w.targets[j] = target_of(track->labels[s + j], policy);
      w.mask[j] = 1.0;
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace asd
