// SPDX-License-Identifier: Apache-2.0
//
// Raw face detections to labeling-ready tracks: short gaps are filled with
// Nadaraya-Watson (Gaussian kernel) estimates of the box corners, long gaps
// split the track, and the result is held to 1-10 s.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "asd/errors.hpp"
#include "asd/labels.hpp"

namespace asd {

struct Detection {
  double timestamp = 0;
  BoundingBox box;
};

struct RawDetectionTrack {
  std::string track_id;
  std::string video_id;
  std::vector<Detection> detections;
};

struct GapFillConfig {
  double max_gap = 0.2;       ///< seconds; gaps strictly shorter are filled
  double kernel_sigma = 0.1;  ///< seconds
  double frame_rate = kDefaultFrameRate;

  void validate() const {
    if (!(max_gap > 0)) throw ValidationError("max_gap must be > 0");
    if (!(kernel_sigma > 0)) throw ValidationError("kernel_sigma must be > 0");
    if (!(frame_rate > 0)) throw ValidationError("frame_rate must be > 0");
  }
};

struct LengthBounds {
  double min_len = 1.0;
  double max_len = 10.0;
};

namespace detail {

/// Tolerated deviation of a detection interval from a whole number of frame
/// periods, as a fraction of the period.
inline constexpr double kGridTolerance = 0.25;

inline std::string piece_id(const std::string& base, char tag, std::size_t k, std::size_t n) {
  return n <= 1 ? base : base + "_" + tag + std::to_string(k + 1);
}

/// Kernel-weighted average of the detected corners within +-3 sigma of t.
/// Falls back to the midpoint of the bracketing detections when the window
/// holds no detection (only possible with sigma far below the gap length).
inline BoundingBox kernel_box(std::span<const Detection> det, std::size_t left, double t, double sigma) {
  double w_sum = 0, x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  const double reach = 3 * sigma;
  auto add = [&](const Detection& d) {
    const double u = (t - d.timestamp) / sigma;
    const double w = std::exp(-0.5 * u * u);
    w_sum += w;
    x1 += w * d.box.x1;
    y1 += w * d.box.y1;
    x2 += w * d.box.x2;
    y2 += w * d.box.y2;
  };
  for (std::size_t i = left + 1; i-- > 0;) {
    if (t - det[i].timestamp > reach) break;
    add(det[i]);
  }
  for (std::size_t i = left + 1; i < det.size(); ++i) {
    if (det[i].timestamp - t > reach) break;
    add(det[i]);
  }
  if (w_sum <= 0) {
    const auto& a = det[left].box;
    const auto& b = det[left + 1].box;
    return {(a.x1 + b.x1) / 2, (a.y1 + b.y1) / 2, (a.x2 + b.x2) / 2, (a.y2 + b.y2) / 2};
  }
  return {x1 / w_sum, y1 / w_sum, x2 / w_sum, y2 / w_sum};
}

}  // namespace detail

/// Fills gaps shorter than `max_gap` and splits at longer ones. A gap is the
/// span of missing frames: (missing frame count) / frame_rate. Detected
/// frames pass through untouched; filled frames carry detected=false.
inline std::vector<FaceTrack> fill_track_gaps(const RawDetectionTrack& track, const GapFillConfig& cfg = {}) {
  cfg.validate();
  const auto& det = track.detections;
  if (det.empty()) throw ValidationError("track " + track.track_id + " has no detections");
  const double period = 1.0 / cfg.frame_rate;
  for (std::size_t i = 1; i < det.size(); ++i) {
    const double steps = (det[i].timestamp - det[i - 1].timestamp) / period;
    if (!(steps > 0.5)) throw ValidationError("track " + track.track_id + ": timestamps not strictly increasing");
    if (std::fabs(steps - std::round(steps)) > detail::kGridTolerance)
      throw ValidationError("track " + track.track_id + ": detection at t=" + detail::fixed6(det[i].timestamp) +
                            " is off the " + detail::fixed6(cfg.frame_rate) + " Hz frame grid");
  }

  // Split into runs whose internal gaps are all fillable.
  std::vector<std::pair<std::size_t, std::size_t>> runs;  // [begin, end)
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= det.size(); ++i) {
    bool cut = i == det.size();
    if (!cut) {
      const long missing = std::lround((det[i].timestamp - det[i - 1].timestamp) / period) - 1;
      cut = static_cast<double>(missing) * period >= cfg.max_gap - 1e-9;
    }
    if (cut) {
      runs.emplace_back(begin, i);
      begin = i;
    }
  }

  std::vector<FaceTrack> out;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto [b, e] = runs[r];
    const std::span<const Detection> run(det.data() + b, e - b);
    FaceTrack ft;
    ft.track_id = detail::piece_id(track.track_id, 'p', r, runs.size());
    ft.video_id = track.video_id;
    ft.frame_rate = cfg.frame_rate;
    for (std::size_t i = 0; i < run.size(); ++i) {
      ft.frames.push_back({run[i].timestamp, run[i].box, true});
      if (i + 1 == run.size()) break;
      const long missing = std::lround((run[i + 1].timestamp - run[i].timestamp) / period) - 1;
      for (long k = 1; k <= missing; ++k) {
        const double t = run[i].timestamp + static_cast<double>(k) * period;
        ft.frames.push_back({t, detail::kernel_box(run, i, t, cfg.kernel_sigma), false});
      }
    }
    out.push_back(std::move(ft));
  }
  return out;
}

/// Frame ranges [begin, end) for a track of n frames, each between min and
/// max frames long. An over-length track is cut into max-size chunks; a
/// remainder below the minimum is balanced against the chunk before it.
inline std::vector<std::pair<std::size_t, std::size_t>> length_chunks(std::size_t n, std::size_t min_frames,
                                                                      std::size_t max_frames) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (n < min_frames || max_frames == 0) return out;
  if (n <= max_frames) return {{0, n}};
  std::size_t pos = 0;
  while (n - pos > max_frames) {
    out.emplace_back(pos, pos + max_frames);
    pos += max_frames;
  }
  const std::size_t rem = n - pos;
  if (rem >= min_frames) {
    out.emplace_back(pos, n);
  } else {
    const std::size_t start = out.back().first;
    const std::size_t total = n - start;
    const std::size_t first = (total + 1) / 2;
    out.back() = {start, start + first};
    out.emplace_back(start + first, n);
  }
  return out;
}

/// Drops tracks shorter than min_len and splits those longer than max_len.
/// Durations are frame count / frame rate.
inline std::vector<FaceTrack> enforce_length_bounds(std::span<const FaceTrack> tracks, LengthBounds bounds = {}) {
  if (!(bounds.min_len > 0 && bounds.max_len >= 2 * bounds.min_len))
    throw ValidationError("length bounds need 0 < min_len and max_len >= 2 * min_len");
  std::vector<FaceTrack> out;
  for (const auto& t : tracks) {
    const auto min_frames = static_cast<std::size_t>(std::ceil(bounds.min_len * t.frame_rate - 1e-9));
    const auto max_frames = static_cast<std::size_t>(std::floor(bounds.max_len * t.frame_rate + 1e-9));
    const auto chunks = length_chunks(t.frames.size(), min_frames, max_frames);
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      FaceTrack piece;
      piece.track_id = detail::piece_id(t.track_id, 'c', c, chunks.size());
      piece.video_id = t.video_id;
      piece.frame_rate = t.frame_rate;
      piece.frames.assign(t.frames.begin() + static_cast<std::ptrdiff_t>(chunks[c].first),
                          t.frames.begin() + static_cast<std::ptrdiff_t>(chunks[c].second));
      out.push_back(std::move(piece));
    }
  }
  return out;
}

/// Gap filling followed by length bounds for every raw track.
inline std::vector<FaceTrack> run_track_pipeline(std::span<const RawDetectionTrack> raw, const GapFillConfig& cfg = {},
                                                 LengthBounds bounds = {}) {
  std::vector<FaceTrack> filled;
  for (const auto& r : raw)
    for (auto& t : fill_track_gaps(r, cfg)) filled.push_back(std::move(t));
  return enforce_length_bounds(filled, bounds);
}

/// Groups label-CSV records into raw detection tracks (labels ignored).
inline std::vector<RawDetectionTrack> raw_tracks_from_labels(std::span<const LabeledTrack> tracks) {
  std::vector<RawDetectionTrack> out;
  for (const auto& lt : tracks) {
    RawDetectionTrack r{lt.track_id, lt.video_id, {}};
    for (const auto& f : lt.frames) r.detections.push_back({f.timestamp, f.box});
    out.push_back(std::move(r));
  }
  return out;
}

/// Pipeline output as label-CSV records with a NOT_SPEAKING placeholder.
inline std::vector<LabeledFrame> tracks_to_frames(std::span<const FaceTrack> tracks) {
  std::vector<LabeledFrame> out;
  for (const auto& t : tracks)
    for (const auto& f : t.frames) out.push_back({t.video_id, f.timestamp, f.box, SpeakLabel::NotSpeaking, t.track_id});
  return out;
}

}  // namespace asd
