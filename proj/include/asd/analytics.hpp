// SPDX-License-Identifier: Apache-2.0
//
// Corpus statistics over label timelines: per-label segment totals, face
// concurrency, face widths, inter-rater agreement, speech/speaker overlap,
// action co-occurrence and simultaneous-speaker instants.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "asd/errors.hpp"
#include "asd/labels.hpp"
#include "asd/speech.hpp"

namespace asd {

inline constexpr std::array<SpeakLabel, 3> kAllLabels = {SpeakLabel::NotSpeaking, SpeakLabel::SpeakingAudible,
                                                       SpeakLabel::SpeakingNotAudible};

/// A label timeline tagged with the video whose clock it uses.
struct TrackTimeline {
  std::string video_id;
  LabelTimeline timeline;
};

inline std::vector<TrackTimeline> timelines_from_tracks(std::span<const LabeledTrack> tracks,
                                                        double frame_rate = kDefaultFrameRate) {
  std::vector<TrackTimeline> out;
  for (const auto& t : tracks) out.push_back({t.video_id, timeline_from_frames(t.frames, frame_rate)});
  return out;
}

// -------------------------------------------------------------- histogram

/// Bin i covers [edges[i], edges[i+1]); the last bin is open above. Values
/// below edges[0] land in bin 0.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;

  explicit Histogram(std::vector<double> e = {0.0}) : edges(std::move(e)), counts(edges.size(), 0) {
    if (edges.empty() || !std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      throw ValidationError("histogram edges must be strictly increasing");
  }

  void add(double v) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    const std::size_t i = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
    ++counts[i];
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  static Histogram linear(double width, int bins) {
    std::vector<double> e;
    for (int i = 0; i < bins; ++i) e.push_back(width * i);
    return Histogram(std::move(e));
  }

  /// 0 followed by first * ratio^k for k in [0, n).
  static Histogram log_spaced(double first, double ratio, int n) {
    std::vector<double> e{0.0};
    double v = first;
    for (int i = 0; i < n; ++i, v *= ratio) e.push_back(v);
    return Histogram(std::move(e));
  }
};

inline Histogram default_duration_histogram() { return Histogram::log_spaced(0.05, 2.0, 9); }
inline Histogram default_width_histogram() { return Histogram::linear(20.0, 50); }

// ------------------------------------------------------------- segments

struct LabelStats {
  double total_seconds = 0;
  std::size_t segment_count = 0;
  Histogram durations = default_duration_histogram();

  double total_hours() const { return total_seconds / 3600.0; }
  double mean_duration() const { return segment_count ? total_seconds / static_cast<double>(segment_count) : 0.0; }
};

struct SegmentStats {
  std::map<SpeakLabel, LabelStats> per_label;

  const LabelStats& at(SpeakLabel l) const { return per_label.at(l); }
};

/// Adjacent segments with the same label count as one segment.
inline SegmentStats segment_statistics(std::span<const LabelTimeline> timelines,
                                       const Histogram& bins = default_duration_histogram()) {
  SegmentStats s;
  for (auto l : kAllLabels) {
    s.per_label[l].durations = bins;
    std::fill(s.per_label[l].durations.counts.begin(), s.per_label[l].durations.counts.end(), 0);
  }
  for (const auto& tl : timelines) {
    for (std::size_t i = 0; i < tl.segments.size();) {
      std::size_t j = i;
      double d = 0;
      while (j < tl.segments.size() && tl.segments[j].label == tl.segments[i].label) d += tl.segments[j++].duration();
      auto& ls = s.per_label[tl.segments[i].label];
      ls.total_seconds += d;
      ++ls.segment_count;
      ls.durations.add(d);
      i = j;
    }
  }
  return s;
}

// ----------------------------------------------------------- concurrency

struct Interval {
  double start = 0;
  double end = 0;
};

namespace detail {

/// Sweep over interval endpoints: duration covered by exactly k intervals.
inline std::map<int, double> sweep_counts(std::span<const Interval> iv) {
  std::vector<std::pair<double, int>> ev;
  for (const auto& i : iv) {
    if (!(i.end > i.start)) continue;
    ev.emplace_back(i.start, +1);
    ev.emplace_back(i.end, -1);
  }
  std::sort(ev.begin(), ev.end());
  std::map<int, double> out;
  int active = 0;
  for (std::size_t k = 0; k < ev.size(); ++k) {
    active += ev[k].second;
    if (k + 1 < ev.size() && active > 0) {
      const double d = ev[k + 1].first - ev[k].first;
      if (d > 0) out[active] += d;
    }
  }
  return out;
}

}  // namespace detail

/// Total time by number of simultaneously present tracks; videos are swept
/// independently and their profiles added.
inline std::map<int, double> concurrency_profile(std::span<const FaceTrack> tracks) {
  std::map<std::string, std::vector<Interval>> by_video;
  for (const auto& t : tracks)
    if (!t.frames.empty()) by_video[t.video_id].push_back({t.start_time(), t.end_time()});
  std::map<int, double> out;
  for (const auto& [v, iv] : by_video)
    for (const auto& [k, d] : detail::sweep_counts(iv)) out[k] += d;
  return out;
}

inline std::map<int, double> concurrency_profile(std::span<const Interval> intervals) {
  return detail::sweep_counts(intervals);
}

inline Histogram face_width_histogram(std::span<const FaceTrack> tracks, double frame_width_px,
                                      const Histogram& bins = default_width_histogram()) {
  if (!(frame_width_px > 0)) throw ValidationError("frame width must be positive");
  Histogram h = bins;
  std::fill(h.counts.begin(), h.counts.end(), 0);
  for (const auto& t : tracks)
    for (const auto& f : t.frames) h.add(f.box.width() * frame_width_px);
  return h;
}

// ------------------------------------------------------------- agreement

/// counts[i][j]: raters who put item i in category j.
struct RatingMatrix {
  std::vector<std::vector<int>> counts;

  int raters() const {
    if (counts.empty()) return 0;
    int n = 0;
    for (int c : counts.front()) n += c;
    return n;
  }
};

/// Builds a rating matrix from per-rater label sequences over the same items.
inline RatingMatrix rating_matrix(std::span<const std::vector<SpeakLabel>> per_rater) {
  RatingMatrix m;
  if (per_rater.empty()) return m;
  const std::size_t items = per_rater.front().size();
  for (const auto& r : per_rater)
    if (r.size() != items) throw ValidationError("raters labeled different numbers of items");
  m.counts.assign(items, std::vector<int>(kAllLabels.size(), 0));
  for (const auto& r : per_rater)
    for (std::size_t i = 0; i < items; ++i) ++m.counts[i][static_cast<std::size_t>(r[i])];
  return m;
}

/// Fleiss' kappa. With every rating in a single category the chance term is
/// 1 and the ratio is 0/0; that case is defined as 1.
inline double fleiss_kappa(const RatingMatrix& m) {
  if (m.counts.size() < 2) throw ValidationError("kappa needs at least two items");
  const std::size_t k = m.counts.front().size();
  if (k < 1) throw ValidationError("kappa needs at least one category");
  const int n = m.raters();
  if (n < 2) throw ValidationError("kappa needs at least two raters per item");
  std::vector<double> col(k, 0.0);
  double p_bar = 0;
  for (const auto& row : m.counts) {
    if (row.size() != k) throw ValidationError("rating rows differ in category count");
    long sum = 0, sq = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] < 0) throw ValidationError("negative rating count");
      sum += row[j];
      sq += static_cast<long>(row[j]) * row[j];
      col[j] += row[j];
    }
    if (sum != n) throw ValidationError("every item needs the same number of raters");
    p_bar += static_cast<double>(sq - n) / (static_cast<double>(n) * (n - 1));
  }
  const double items = static_cast<double>(m.counts.size());
  p_bar /= items;
  double p_e = 0;
  for (double c : col) {
    const double p = c / (items * n);
    p_e += p * p;
  }
  if (std::fabs(1.0 - p_e) < 1e-15) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

// --------------------------------------------------------------- overlap

struct OverlapReport {
  double speech_without_speaker = 0;
  double speaker_without_speech = 0;
  double speech_with_speaker = 0;
  double neither = 0;
  /// Speech time split by condition: {with speaker, without speaker}.
  std::map<SpeechCondition, std::pair<double, double>> by_condition;

  double total() const { return speech_without_speaker + speaker_without_speech + speech_with_speaker + neither; }

  OverlapReport& operator+=(const OverlapReport& o) {
    speech_without_speaker += o.speech_without_speaker;
    speaker_without_speech += o.speaker_without_speech;
    speech_with_speaker += o.speech_with_speaker;
    neither += o.neither;
    for (const auto& [c, p] : o.by_condition) {
      by_condition[c].first += p.first;
      by_condition[c].second += p.second;
    }
    return *this;
  }
};

/// Speaker = some face SPEAKING_AUDIBLE; speech = any speech condition.
/// Everything must belong to `video_id`; speech segments may not overlap.
inline OverlapReport speech_overlap_report(const std::string& video_id, std::span<const TrackTimeline> speakers,
                                           std::span<const SpeechSegment> speech, double span_start,
                                           double span_end) {
  if (!(span_end >= span_start)) throw ValidationError("analysis span is inverted");
  for (const auto& t : speakers)
    if (t.video_id != video_id)
      throw ValidationError("timeline of track " + t.timeline.track_id + " belongs to video " + t.video_id +
                            ", not " + video_id);
  for (const auto& s : speech)
    if (s.video_id != video_id)
      throw ValidationError("speech segment of video " + s.video_id + " passed for video " + video_id);

  std::vector<SpeechSegment> sp(speech.begin(), speech.end());
  std::sort(sp.begin(), sp.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < sp.size(); ++i)
    if (sp[i].start < sp[i - 1].end - 1e-9)
      throw ValidationError("overlapping speech segments in video " + video_id);

  std::vector<Interval> talking;
  for (const auto& t : speakers)
    for (const auto& s : t.timeline.segments)
      if (s.label == SpeakLabel::SpeakingAudible) talking.push_back({s.start, s.end});

  std::vector<double> cuts{span_start, span_end};
  for (const auto& s : sp) cuts.insert(cuts.end(), {s.start, s.end});
  for (const auto& i : talking) cuts.insert(cuts.end(), {i.start, i.end});
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  OverlapReport r;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = std::max(cuts[i], span_start), b = std::min(cuts[i + 1], span_end);
    if (!(b > a)) continue;
    const double mid = 0.5 * (a + b), d = b - a;
    std::optional<SpeechCondition> cond;
    for (const auto& s : sp)
      if (mid >= s.start && mid < s.end && is_speech(s.condition)) cond = s.condition;
    const bool speaker =
        std::any_of(talking.begin(), talking.end(), [&](const auto& iv) { return mid >= iv.start && mid < iv.end; });
    if (cond && speaker) r.speech_with_speaker += d;
    else if (cond) r.speech_without_speaker += d;
    else if (speaker) r.speaker_without_speech += d;
    else r.neither += d;
    if (cond) (speaker ? r.by_condition[*cond].first : r.by_condition[*cond].second) += d;
  }
  return r;
}

// ----------------------------------------------------- action labels

struct ActionPoint {
  std::string track_id;
  double timestamp = 0;
  std::string action;
};

struct ActionRow {
  std::map<SpeakLabel, std::size_t> counts;
  std::size_t resolved = 0;
  std::size_t unresolved = 0;

  double percent(SpeakLabel l) const {
    if (resolved == 0) return 0;
    auto it = counts.find(l);
    return it == counts.end() ? 0.0 : 100.0 * static_cast<double>(it->second) / static_cast<double>(resolved);
  }
};

/// Per action, the distribution of speaking labels at its points. Points
/// whose track is unknown or whose time lies outside the track are counted
/// as unresolved and left out of the percentages.
inline std::map<std::string, ActionRow> action_cooccurrence(std::span<const ActionPoint> points,
                                                            std::span<const LabelTimeline> timelines) {
  std::map<std::string, const LabelTimeline*> by_track;
  for (const auto& t : timelines) by_track[t.track_id] = &t;
  std::map<std::string, ActionRow> out;
  for (const auto& p : points) {
    auto& row = out[p.action];
    auto it = by_track.find(p.track_id);
    const auto label = it == by_track.end() ? std::nullopt : it->second->label_at(p.timestamp);
    if (!label) {
      ++row.unresolved;
      continue;
    }
    ++row.counts[*label];
    ++row.resolved;
  }
  return out;
}

/// Action CSV: track_id,timestamp,action
inline std::vector<ActionPoint> parse_action_csv(std::istream& in) {
  std::vector<ActionPoint> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto f = detail::split_fields(t);
    if (f.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(f.size()), line_no);
    const auto ts = detail::parse_real(f[1]);
    if (!ts) throw ParseError("bad timestamp", line_no);
    out.push_back({std::string(detail::trim(f[0])), *ts, std::string(detail::trim(f[2]))});
  }
  return out;
}

// ------------------------------------------------- simultaneous speakers

struct SpeakerOverlap {
  std::string video_id;
  double start = 0;
  double end = 0;
  int peak = 0;
};

/// Maximal intervals where at least two faces of one video are
/// SPEAKING_AUDIBLE, with the largest count reached inside each.
inline std::vector<SpeakerOverlap> overlapping_speaker_instants(std::span<const TrackTimeline> timelines) {
  std::map<std::string, std::vector<std::pair<double, int>>> ev;
  for (const auto& t : timelines)
    for (const auto& s : t.timeline.segments)
      if (s.label == SpeakLabel::SpeakingAudible && s.end > s.start) {
        ev[t.video_id].emplace_back(s.start, +1);
        ev[t.video_id].emplace_back(s.end, -1);
      }
  std::vector<SpeakerOverlap> out;
  for (auto& [video, e] : ev) {
    std::sort(e.begin(), e.end());
    int active = 0;
    std::optional<SpeakerOverlap> cur;
    for (std::size_t k = 0; k < e.size();) {
      const double t = e[k].first;
      while (k < e.size() && e[k].first == t) active += e[k++].second;
      if (active >= 2) {
        if (!cur) cur = SpeakerOverlap{video, t, t, active};
        cur->peak = std::max(cur->peak, active);
      } else if (cur) {
        cur->end = t;
        out.push_back(*cur);
        cur.reset();
      }
    }
  }
  return out;
}

}  // namespace asd
