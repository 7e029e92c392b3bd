// SPDX-License-Identifier: Apache-2.0
//
// Model inputs from featurized tracks, per-track scoring with recurrent
// state carried across the whole track, and the prediction file format:
//
//   video_id,timestamp,x1,y1,x2,y2,predicted_label,track_id,score
#pragma once

#include <algorithm>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "asd/checkpoint.hpp"
#include "asd/features.hpp"
#include "asd/labels.hpp"
#include "asd/metrics.hpp"
#include "asd/model.hpp"

namespace asd {

/// Owns the stacked face crops and mel features behind a FrameInput span.
struct InputBuffer {
  std::vector<FaceStack> stacks;
  std::vector<MelFeature> mels;
  std::vector<FrameInput> frames;
};

inline void check_modalities(const ModelSpec& spec, const TrackFeatures& t) {
  if (uses_visual(spec.modalities) && t.crops.size() != t.size())
    throw ValidationError("spec " + spec.variant() + " needs face crops, track " + t.track_id + " has none");
  if (uses_audio(spec.modalities) && t.mels.size() != t.size())
    throw ValidationError("spec " + spec.variant() + " needs audio features, track " + t.track_id + " has none");
  if (uses_visual(spec.modalities) && spec.visual_size != kFaceSize)
    throw ValidationError("spec visual size does not match the face crop size");
  if (uses_audio(spec.modalities) && (spec.mel_bins != kMelBins || spec.mel_frames != kMelFrames))
    throw ValidationError("spec mel shape does not match the audio features");
}

/// Inputs for window positions [0, count). Only the modalities the spec uses
/// are materialized.
inline void window_inputs(const ModelSpec& spec, const ExampleWindow& w, int count, InputBuffer& buf) {
  check_modalities(spec, *w.track);
  const bool vis = uses_visual(spec.modalities), aud = uses_audio(spec.modalities);
  buf.stacks.resize(vis ? count : 0);
  buf.mels.resize(aud ? count : 0);
  buf.frames.assign(w.frame_count(), FrameInput{});
  for (int j = 0; j < count; ++j) {
    if (vis) {
      buf.stacks[j] = w.face_stack(j, spec.stack_depth);
      buf.frames[j].visual = buf.stacks[j].data;
    }
    if (aud) {
      buf.mels[j] = w.mel(j);
      buf.frames[j].audio = buf.mels[j].data;
    }
  }
}

inline void track_inputs(const ModelSpec& spec, const TrackFeatures& t, std::size_t begin, std::size_t end,
                         InputBuffer& buf) {
  check_modalities(spec, t);
  const bool vis = uses_visual(spec.modalities), aud = uses_audio(spec.modalities);
  const std::size_t n = end - begin;
  buf.stacks.resize(vis ? n : 0);
  buf.mels.resize(aud ? n : 0);
  buf.frames.assign(n, FrameInput{});
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = begin + k;
    if (vis) {
      buf.stacks[k] = make_face_stack(t.crops, static_cast<std::ptrdiff_t>(j), spec.stack_depth, t.timestamps[j]);
      buf.frames[k].visual = buf.stacks[k].data;
    }
    if (aud) {
      buf.mels[k] = t.mels[j];
      buf.frames[k].audio = buf.mels[k].data;
    }
  }
}

/// A scoring-ready model: float parameters converted once from a checkpoint.
class Scorer {
 public:
  explicit Scorer(const Checkpoint& ck) : model_(ck.spec), params_(ck.params.begin(), ck.params.end()) {
    if (params_.size() != model_.parameter_count()) throw ValidationError("checkpoint does not match its spec");
  }

  const ModelSpec& spec() const { return model_.spec(); }

  /// One fused speaking probability per frame. Recurrent state runs across
  /// the whole track; frames are processed in chunks of `chunk` to bound
  /// memory, which does not change the result.
  std::vector<double> score(const TrackFeatures& t, std::size_t chunk = 64) const {
    if (chunk == 0) throw ValidationError("chunk size must be positive");
    std::vector<double> out;
    out.reserve(t.size());
    auto state = model_.zero_state();
    InputBuffer buf;
    for (std::size_t b = 0; b < t.size(); b += chunk) {
      const std::size_t e = std::min(t.size(), b + chunk);
      track_inputs(model_.spec(), t, b, e, buf);
      for (const auto& p : model_.score_sequence(params_, buf.frames, &state)) out.push_back(p.fused.speak);
    }
    return out;
  }

  std::vector<ScoredFrame> score_frames(const TrackFeatures& t) const {
    const auto s = score(t);
    std::vector<ScoredFrame> out;
    for (std::size_t j = 0; j < t.size(); ++j) {
      ScoredFrame f;
      f.video_id = t.video_id;
      f.track_id = t.track_id;
      f.timestamp = t.timestamps[j];
      f.box = t.boxes[j];
      f.score = s[j];
      f.label = t.labels.empty() ? SpeakLabel::NotSpeaking : t.labels[j];
      if (j < t.face_widths_px.size()) f.face_width_px = t.face_widths_px[j];
      out.push_back(std::move(f));
    }
    return out;
  }

 private:
  AsdModel<float> model_;
  std::vector<float> params_;
};

inline std::vector<double> score_track(const Checkpoint& ck, const TrackFeatures& t) { return Scorer(ck).score(t); }

// ------------------------------------------------------- prediction files

inline std::string format_prediction_line(const ScoredFrame& f, double threshold = 0.5) {
  return f.video_id + "," + detail::fixed6(f.timestamp) + "," + detail::fixed6(f.box.x1) + "," +
         detail::fixed6(f.box.y1) + "," + detail::fixed6(f.box.x2) + "," + detail::fixed6(f.box.y2) + "," +
         std::string(to_string(f.score >= threshold ? SpeakLabel::SpeakingAudible : SpeakLabel::NotSpeaking)) + "," +
         f.track_id + "," + detail::fixed6(f.score);
}

inline void write_predictions(std::ostream& out, std::span<const ScoredFrame> frames, double threshold = 0.5) {
  for (const auto& f : frames) out << format_prediction_line(f, threshold) << '\n';
}

/// The ground-truth label field is not part of the file; parsed frames carry
/// NOT_SPEAKING and are matched to truth by (video, track, timestamp).
inline std::vector<ScoredFrame> parse_predictions(std::istream& in) {
  std::vector<ScoredFrame> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto f = detail::split_fields(t);
    if (f.size() != 9) throw ParseError("expected 9 fields, got " + std::to_string(f.size()), line_no);
    ScoredFrame s;
    auto real = [&](std::string_view v, const char* name) {
      const auto r = detail::parse_real(v);
      if (!r) throw ParseError(std::string("bad ") + name + " '" + std::string(v) + "'", line_no);
      return *r;
    };
    s.video_id = std::string(detail::trim(f[0]));
    s.timestamp = real(f[1], "timestamp");
    s.box = {real(f[2], "x1"), real(f[3], "y1"), real(f[4], "x2"), real(f[5], "y2")};
    if (!parse_speak_label(detail::trim(f[6])))
      throw ParseError("unknown label '" + std::string(f[6]) + "'", line_no);
    s.track_id = std::string(detail::trim(f[7]));
    s.score = real(f[8], "score");
    if (!(s.score >= 0 && s.score <= 1)) throw ParseError("score outside [0,1]", line_no);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace asd
