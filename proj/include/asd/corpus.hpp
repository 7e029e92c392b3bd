// SPDX-License-Identifier: Apache-2.0
//
// Media directories on disk and the synthetic corpus container.
//
//   <dir>/manifest.json            frame rate, sample rate, per-clip metadata
//   <dir>/labels.csv               label CSV for every track
//   <dir>/speech.csv               speech-activity segments
//   <dir>/clips/<video_id>/frames.ppm   concatenated P6 frames, frame i at
//                                       start_time + i / frame_rate
//   <dir>/clips/<video_id>/audio.wav    16-bit PCM mono
//
// Only clips/ is required to read media; without a manifest every video is
// assumed to start at 0 s at the default frame rate.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "asd/errors.hpp"
#include "asd/features.hpp"
#include "asd/labels.hpp"
#include "asd/media.hpp"
#include "asd/speech.hpp"
#include "asd/synth.hpp"

namespace asd {

/// Decoded media for one video.
struct VideoMedia {
  std::string video_id;
  double frame_rate = kDefaultFrameRate;
  double start_time = 0;
  std::vector<RgbImage> frames;
  Waveform audio;

  /// Frame shown at `t`; errors when `t` is more than half a frame period
  /// away from any decoded frame.
  const RgbImage& frame_at(double t) const {
    const double pos = (t - start_time) * frame_rate;
    const long idx = std::lround(pos);
    if (idx < 0 || idx >= static_cast<long>(frames.size()) || std::fabs(pos - idx) > 0.5 + 1e-6)
      throw NotFoundError("video " + video_id + " has no frame at t=" + detail::fixed6(t));
    return frames[static_cast<std::size_t>(idx)];
  }
};

class MediaDirectory {
 public:
  explicit MediaDirectory(std::filesystem::path root) : root_(std::move(root)) {
    if (!std::filesystem::is_directory(root_ / "clips"))
      throw NotFoundError("media directory " + root_.string() + " has no clips/ subdirectory");
    const auto manifest = root_ / "manifest.json";
    if (std::filesystem::exists(manifest)) {
      std::ifstream in(manifest);
      try {
        const auto j = nlohmann::json::parse(in);
        default_rate_ = j.value("frame_rate", kDefaultFrameRate);
        for (const auto& c : j.value("clips", nlohmann::json::array()))
          start_[c.at("video_id").get<std::string>()] = c.value("start_time", 0.0);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad manifest " + manifest.string() + ": " + e.what());
      }
    }
  }

  const std::filesystem::path& root() const { return root_; }
  double frame_rate() const { return default_rate_; }

  bool has_video(const std::string& id) const { return std::filesystem::is_directory(root_ / "clips" / id); }

  VideoMedia load(const std::string& id, bool with_frames = true, bool with_audio = true) const {
    const auto dir = root_ / "clips" / id;
    if (!std::filesystem::is_directory(dir)) throw NotFoundError("no media for video " + id);
    VideoMedia m;
    m.video_id = id;
    m.frame_rate = default_rate_;
    if (auto it = start_.find(id); it != start_.end()) m.start_time = it->second;
    if (with_frames) m.frames = read_ppm_file((dir / "frames.ppm").string());
    if (with_audio) m.audio = read_wav_file((dir / "audio.wav").string());
    return m;
  }

 private:
  std::filesystem::path root_;
  double default_rate_ = kDefaultFrameRate;
  std::map<std::string, double> start_;
};

/// Featurizes one track against decoded media.
inline TrackFeatures featurize_track(const FaceTrack& track, const LabelTimeline& timeline, const VideoMedia& media) {
  return featurize_track(track, timeline, [&](double t) -> const RgbImage& { return media.frame_at(t); },
                         media.audio);
}

/// Featurizes a rendered synthetic clip directly from memory.
inline TrackFeatures featurize_clip(const SyntheticClip& clip) {
  if (clip.frames.size() != clip.timestamps.size()) throw ValidationError("clip " + clip.video_id + " is not rendered");
  const auto frames = clip.labeled_frames();
  const auto timeline = timeline_from_frames(frames, kSynthFrameRate);
  auto tf = featurize_track(
      clip.face_track(), timeline,
      [&](double t) -> const RgbImage& { return clip.frames[static_cast<std::size_t>(std::lround(t * kSynthFrameRate))]; },
      clip.audio);
  return tf;
}

inline FaceTrack face_track_of(const LabeledTrack& t, double frame_rate) {
  FaceTrack f{t.track_id, t.video_id, {}, frame_rate};
  for (const auto& lf : t.frames) f.frames.push_back({lf.timestamp, lf.box, true});
  return f;
}

/// Featurizes labeled tracks against a media directory, decoding each video
/// once. Up to `jobs` videos are processed at a time; the output keeps the
/// input track order.
inline std::vector<std::shared_ptr<const TrackFeatures>> featurize_corpus(std::span<const LabeledTrack> tracks,
                                                                         const MediaDirectory& media, int jobs = 1,
                                                                         bool with_frames = true,
                                                                         bool with_audio = true) {
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < tracks.size(); ++i) by_video[tracks[i].video_id].push_back(i);
  std::vector<const std::pair<const std::string, std::vector<std::size_t>>*> work;
  for (const auto& kv : by_video) work.push_back(&kv);

  std::vector<std::shared_ptr<const TrackFeatures>> out(tracks.size());
  auto run = [&](std::size_t w) {
    const auto& [video, idx] = *work[w];
    const VideoMedia m = media.load(video, with_frames, with_audio);
    for (std::size_t i : idx) {
      const auto face = face_track_of(tracks[i], m.frame_rate);
      const auto timeline = timeline_from_frames(tracks[i].frames, m.frame_rate);
      auto tf = std::make_shared<TrackFeatures>();
      tf->track_id = face.track_id;
      tf->video_id = face.video_id;
      tf->frame_rate = face.frame_rate;
      for (const auto& f : face.frames) {
        tf->timestamps.push_back(f.timestamp);
        tf->boxes.push_back(f.box);
        tf->labels.push_back(timeline.label_at(f.timestamp).value_or(SpeakLabel::NotSpeaking));
        if (with_frames) {
          const RgbImage& img = m.frame_at(f.timestamp);
          tf->face_widths_px.push_back(f.box.width() * img.width);
          tf->crops.push_back(crop_face(img, f.box));
        }
      }
      if (with_audio) tf->mels = mel_features_at(m.audio, tf->timestamps);
      out[i] = std::move(tf);
    }
  };

  const std::size_t n_jobs = std::min(static_cast<std::size_t>(std::max(1, jobs)), std::max<std::size_t>(1, work.size()));
  if (n_jobs == 1) {
    for (std::size_t w = 0; w < work.size(); ++w) run(w);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errs(n_jobs);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t w; (w = next++) < work.size();) run(w);
      } catch (...) {
        errs[t] = std::current_exception();
        next = work.size();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

// ------------------------------------------------------- synthetic corpus

inline nlohmann::json clip_manifest_entry(const std::string& video_id, const ClipSpec& s, std::size_t n_frames) {
  return {{"video_id", video_id},
          {"kind", to_string(s.kind)},
          {"duration", s.duration},
          {"seed", s.seed},
          {"noise_level", s.noise_level},
          {"face_size", to_string(s.face_size)},
          {"frames", n_frames},
          {"width", kSynthFrameWidth},
          {"height", kSynthFrameHeight},
          {"start_time", 0.0}};
}

/// Renders every clip of `plan` into `dir` one at a time.
inline void write_corpus(const std::filesystem::path& dir, const CorpusPlan& plan) {
  std::filesystem::create_directories(dir / "clips");
  std::ofstream labels(dir / "labels.csv"), speech(dir / "speech.csv");
  if (!labels || !speech) throw Error("cannot write corpus files in " + dir.string());
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& e : plan.clips) {
    const auto clip = generate_clip(e.spec, e.video_id, true);
    const auto cdir = dir / "clips" / e.video_id;
    std::filesystem::create_directories(cdir);
    {
      std::ofstream f(cdir / "frames.ppm", std::ios::binary);
      for (const auto& img : clip.frames) write_ppm(f, img);
      if (!f) throw Error("cannot write frames for " + e.video_id);
    }
    {
      std::ofstream f(cdir / "audio.wav", std::ios::binary);
      write_wav(f, clip.audio);
      if (!f) throw Error("cannot write audio for " + e.video_id);
    }
    for (const auto& lf : clip.labeled_frames()) labels << format_label_line(lf) << '\n';
    write_speech_csv(speech, clip.speech);
    clips.push_back(clip_manifest_entry(e.video_id, e.spec, clip.frames.size()));
  }
  nlohmann::json manifest = {{"frame_rate", kSynthFrameRate}, {"sample_rate", kSynthSampleRate}, {"clips", clips}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace asd
