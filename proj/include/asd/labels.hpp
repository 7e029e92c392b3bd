// SPDX-License-Identifier: Apache-2.0
//
// Tracks, dense labels, and the eight-field label CSV that every other part of
// the toolkit reads and writes:
//
//   video_id,timestamp,x1,y1,x2,y2,label,track_id
//
// No header line. Reals are fixed-point with six decimals. Coordinates are
// normalized to the frame size, (x1, y1) top left and (x2, y2) bottom right.
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "asd/errors.hpp"

namespace asd {

inline constexpr double kDefaultFrameRate = 20.0;
inline constexpr double kCoordinateClampTolerance = 1e-6;
inline constexpr double kTimestampSpacingTolerance = 1e-6;

enum class SpeakLabel { NotSpeaking = 0, SpeakingAudible = 1, SpeakingNotAudible = 2 };

inline constexpr std::array<SpeakLabel, 3> kAllSpeakLabels = {
    SpeakLabel::NotSpeaking, SpeakLabel::SpeakingAudible, SpeakLabel::SpeakingNotAudible};

inline std::string_view to_string(SpeakLabel label) {
  switch (label) {
    case SpeakLabel::NotSpeaking: return "NOT_SPEAKING";
    case SpeakLabel::SpeakingAudible: return "SPEAKING_AUDIBLE";
    case SpeakLabel::SpeakingNotAudible: return "SPEAKING_NOT_AUDIBLE";
  }
  return "NOT_SPEAKING";
}

inline std::optional<SpeakLabel> parse_speak_label(std::string_view s) {
  for (SpeakLabel l : kAllSpeakLabels)
    if (to_string(l) == s) return l;
  return std::nullopt;
}

struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return 0 <= x1 && x1 < x2 && x2 <= 1 && 0 <= y1 && y1 < y2 && y2 <= 1; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline double intersection_over_union(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct LabeledFrame {
  std::string video_id;
  double timestamp = 0;
  BoundingBox box;
  SpeakLabel label = SpeakLabel::NotSpeaking;
  std::string track_id;

  friend bool operator==(const LabeledFrame&, const LabeledFrame&) = default;
};

/// All frames of one track_id, in file order.
struct LabeledTrack {
  std::string track_id;
  std::string video_id;
  std::vector<LabeledFrame> frames;
};

struct TrackFrame {
  double timestamp = 0;
  BoundingBox box;
  bool detected = true;

  friend bool operator==(const TrackFrame&, const TrackFrame&) = default;
};

/// A gap-free face track on a uniform frame grid.
struct FaceTrack {
  std::string track_id;
  std::string video_id;
  std::vector<TrackFrame> frames;
  double frame_rate = kDefaultFrameRate;

  double period() const { return 1.0 / frame_rate; }
  /// Frame count times the frame period; each frame owns one period of time.
  double duration() const { return static_cast<double>(frames.size()) / frame_rate; }
  double start_time() const { return frames.empty() ? 0.0 : frames.front().timestamp - 0.5 * period(); }
  double end_time() const { return frames.empty() ? 0.0 : frames.back().timestamp + 0.5 * period(); }
};

struct LabelSegment {
  double start = 0;
  double end = 0;
  SpeakLabel label = SpeakLabel::NotSpeaking;

  double duration() const { return end - start; }
  friend bool operator==(const LabelSegment&, const LabelSegment&) = default;
};

struct LabelTimeline {
  std::string track_id;
  std::vector<LabelSegment> segments;

  double start() const { return segments.empty() ? 0.0 : segments.front().start; }
  double end() const { return segments.empty() ? 0.0 : segments.back().end; }
  double duration() const {
    double d = 0;
    for (const auto& s : segments) d += s.duration();
    return d;
  }

  /// Half-open lookup [start, end); the final segment is closed on the right.
  std::optional<SpeakLabel> label_at(double t) const {
    if (segments.empty() || t < segments.front().start || t > segments.back().end) return std::nullopt;
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](double v, const LabelSegment& s) { return v < s.start; });
    if (it == segments.begin()) return std::nullopt;
    --it;
    if (t < it->end || std::next(it) == segments.end()) return it->label;
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string fixed6(double v) {
  char buf[64];
  // Avoid "-0.000000" for tiny negatives produced by arithmetic.
  if (std::fabs(v) < 5e-7) v = 0.0;
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline double clamp_unit(double v, std::size_t line, const char* name) {
  if (v < 0) {
    if (v < -kCoordinateClampTolerance)
      throw ValidationError("line " + std::to_string(line) + ": coordinate " + name + "=" +
                            fixed6(v) + " outside [0,1]");
    return 0.0;
  }
  if (v > 1) {
    if (v > 1 + kCoordinateClampTolerance)
      throw ValidationError("line " + std::to_string(line) + ": coordinate " + name + "=" +
                            fixed6(v) + " outside [0,1]");
    return 1.0;
  }
  return v;
}

inline std::string describe(const LabeledFrame& f) {
  return f.video_id + "," + fixed6(f.timestamp) + "," + fixed6(f.box.x1) + "," + fixed6(f.box.y1) +
         "," + fixed6(f.box.x2) + "," + fixed6(f.box.y2) + "," + std::string(to_string(f.label)) +
         "," + f.track_id;
}

}  // namespace detail

/// Throws ValidationError naming the record when a frame breaks an invariant.
inline void validate_frame(const LabeledFrame& f) {
  if (f.video_id.empty()) throw ValidationError("empty video_id in record: " + detail::describe(f));
  if (f.track_id.empty()) throw ValidationError("empty track_id in record: " + detail::describe(f));
  if (!(f.timestamp >= 0)) throw ValidationError("negative timestamp in record: " + detail::describe(f));
  if (!f.box.valid()) throw ValidationError("invalid bounding box in record: " + detail::describe(f));
}

/// Parses a label CSV. Tracks are returned in order of first appearance and
/// frames within a track keep file order, which must be strictly increasing
/// in time.
inline std::vector<LabeledTrack> parse_label_csv(std::istream& in) {
  std::vector<LabeledTrack> tracks;
  std::map<std::string, std::size_t, std::less<>> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    const auto fields = detail::split_fields(view);
    if (fields.size() != 8)
      throw ParseError("expected 8 fields, found " + std::to_string(fields.size()), line_no);
    LabeledFrame f;
    f.video_id = std::string(detail::trim(fields[0]));
    double nums[5];
    static constexpr const char* kNames[5] = {"timestamp", "x1", "y1", "x2", "y2"};
    for (int k = 0; k < 5; ++k) {
      auto v = detail::parse_real(fields[1 + k]);
      if (!v) throw ParseError(std::string("non-numeric ") + kNames[k] + " '" + std::string(fields[1 + k]) + "'", line_no);
      nums[k] = *v;
    }
    f.timestamp = nums[0];
    f.box = {detail::clamp_unit(nums[1], line_no, "x1"), detail::clamp_unit(nums[2], line_no, "y1"),
             detail::clamp_unit(nums[3], line_no, "x2"), detail::clamp_unit(nums[4], line_no, "y2")};
    auto label = parse_speak_label(detail::trim(fields[6]));
    if (!label) throw ParseError("unknown label '" + std::string(fields[6]) + "'", line_no);
    f.label = *label;
    f.track_id = std::string(detail::trim(fields[7]));
    try {
      validate_frame(f);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }

    auto [it, inserted] = index.try_emplace(f.track_id, tracks.size());
    if (inserted) tracks.push_back({f.track_id, f.video_id, {}});
    LabeledTrack& track = tracks[it->second];
    if (track.video_id != f.video_id)
      throw ValidationError("line " + std::to_string(line_no) + ": track " + f.track_id +
                            " spans videos " + track.video_id + " and " + f.video_id);
    if (!track.frames.empty() && !(f.timestamp > track.frames.back().timestamp))
      throw ValidationError("line " + std::to_string(line_no) +
                            ": timestamps not strictly increasing within track: " + detail::describe(f));
    track.frames.push_back(std::move(f));
  }
  return tracks;
}

inline std::vector<LabeledTrack> parse_label_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_label_csv(in);
}

inline std::vector<LabeledFrame> flatten(const std::vector<LabeledTrack>& tracks) {
  std::vector<LabeledFrame> out;
  for (const auto& t : tracks) out.insert(out.end(), t.frames.begin(), t.frames.end());
  return out;
}

inline std::string format_label_line(const LabeledFrame& f) { return detail::describe(f); }

/// Canonical serialization: sorted by (video_id, track_id, timestamp).
/// Every frame is validated before anything is written.
inline std::string serialize_labels(std::span<const LabeledFrame> frames) {
  for (const auto& f : frames) validate_frame(f);
  std::vector<const LabeledFrame*> order;
  order.reserve(frames.size());
  for (const auto& f : frames) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(), [](const LabeledFrame* a, const LabeledFrame* b) {
    return std::tie(a->video_id, a->track_id, a->timestamp) <
           std::tie(b->video_id, b->track_id, b->timestamp);
  });
  std::string out;
  out.reserve(frames.size() * 80);
  for (const auto* f : order) {
    out += detail::describe(*f);
    out += '\n';
  }
  return out;
}

/// Maximal runs of equal labels become segments. Boundaries sit midway
/// between adjacent frames; the ends extend half a period past the first and
/// last frame, so every frame owns exactly one period.
inline LabelTimeline timeline_from_frames(std::span<const LabeledFrame> frames,
                                          double frame_rate = kDefaultFrameRate) {
  LabelTimeline tl;
  if (frames.empty()) return tl;
  tl.track_id = frames.front().track_id;
  const double period = 1.0 / frame_rate;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const double dt = frames[i].timestamp - frames[i - 1].timestamp;
    if (std::fabs(dt - period) > kTimestampSpacingTolerance + 1e-12)
      throw ValidationError("non-uniform frame spacing in track " + tl.track_id + " at t=" +
                            detail::fixed6(frames[i].timestamp) + " (dt=" + detail::fixed6(dt) + ")");
  }
  const double t0 = frames.front().timestamp;
  // Boundaries are placed on the ideal grid so durations are exact multiples of the period.
  auto boundary = [&](std::size_t i) { return t0 + (static_cast<double>(i) - 0.5) * period; };
  std::size_t run_start = 0;
  for (std::size_t i = 1; i <= frames.size(); ++i) {
    if (i == frames.size() || frames[i].label != frames[run_start].label) {
      tl.segments.push_back({boundary(run_start), boundary(i), frames[run_start].label});
      run_start = i;
    }
  }
  return tl;
}

enum class CoverageProblem { None, Empty, Inverted, Gap, Overlap, OutOfBounds };

struct CoverageIssue {
  CoverageProblem problem = CoverageProblem::None;
  double from = 0;
  double to = 0;

  explicit operator bool() const { return problem != CoverageProblem::None; }
};

inline std::string_view to_string(CoverageProblem p) {
  switch (p) {
    case CoverageProblem::None: return "none";
    case CoverageProblem::Empty: return "empty";
    case CoverageProblem::Inverted: return "inverted";
    case CoverageProblem::Gap: return "gap";
    case CoverageProblem::Overlap: return "overlap";
    case CoverageProblem::OutOfBounds: return "out_of_bounds";
  }
  return "none";
}

/// Checks that ordered segments tile [start, end] exactly (within tol).
/// Returns the first offending interval.
inline CoverageIssue check_coverage(std::span<const LabelSegment> segs, double start, double end,
                                    double tol = 1e-6) {
  if (segs.empty()) return {CoverageProblem::Empty, start, end};
  for (const auto& s : segs)
    if (!(s.end > s.start)) return {CoverageProblem::Inverted, s.start, s.end};
  if (segs.front().start > start + tol) return {CoverageProblem::Gap, start, segs.front().start};
  if (segs.front().start < start - tol) return {CoverageProblem::OutOfBounds, segs.front().start, start};
  for (std::size_t i = 1; i < segs.size(); ++i) {
    const double prev_end = segs[i - 1].end, cur = segs[i].start;
    if (cur > prev_end + tol) return {CoverageProblem::Gap, prev_end, cur};
    if (cur < prev_end - tol) return {CoverageProblem::Overlap, cur, prev_end};
  }
  if (segs.back().end < end - tol) return {CoverageProblem::Gap, segs.back().end, end};
  if (segs.back().end > end + tol) return {CoverageProblem::OutOfBounds, end, segs.back().end};
  return {};
}

}  // namespace asd
