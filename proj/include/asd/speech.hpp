// SPDX-License-Identifier: Apache-2.0
//
// Speech-activity labels: per-video segments tagged with a sound condition.
// CSV layout, one segment per line:
//
//   video_id,start,end,condition
#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asd/errors.hpp"
#include "asd/labels.hpp"

namespace asd {

enum class SpeechCondition { NoSpeech, Clean, SpeechWithMusic, SpeechWithNoise };

inline std::string to_string(SpeechCondition c) {
  switch (c) {
    case SpeechCondition::NoSpeech: return "NO_SPEECH";
    case SpeechCondition::Clean: return "CLEAN";
    case SpeechCondition::SpeechWithMusic: return "SPEECH_WITH_MUSIC";
    case SpeechCondition::SpeechWithNoise: return "SPEECH_WITH_NOISE";
  }
  return "NO_SPEECH";
}

inline std::optional<SpeechCondition> parse_speech_condition(std::string_view s) {
  if (s == "NO_SPEECH") return SpeechCondition::NoSpeech;
  if (s == "CLEAN" || s == "CLEAN_SPEECH") return SpeechCondition::Clean;
  if (s == "SPEECH_WITH_MUSIC") return SpeechCondition::SpeechWithMusic;
  if (s == "SPEECH_WITH_NOISE") return SpeechCondition::SpeechWithNoise;
  return std::nullopt;
}

struct SpeechSegment {
  std::string video_id;
  double start = 0;
  double end = 0;
  SpeechCondition condition = SpeechCondition::NoSpeech;
};

inline bool is_speech(SpeechCondition c) { return c != SpeechCondition::NoSpeech; }

inline std::vector<SpeechSegment> parse_speech_csv(std::istream& in) {
  std::vector<SpeechSegment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto f = detail::split_fields(t);
    if (f.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(f.size()), line_no);
    const auto start = detail::parse_real(f[1]), end = detail::parse_real(f[2]);
    if (!start || !end) throw ParseError("bad segment time", line_no);
    if (!(*end > *start) || *start < 0) throw ParseError("segment end must follow its start", line_no);
    const auto cond = parse_speech_condition(detail::trim(f[3]));
    if (!cond) throw ParseError("unknown speech condition '" + std::string(f[3]) + "'", line_no);
    out.push_back({std::string(detail::trim(f[0])), *start, *end, *cond});
  }
  return out;
}

inline void write_speech_csv(std::ostream& out, std::span<const SpeechSegment> segs) {
  for (const auto& s : segs)
    out << s.video_id << ',' << detail::fixed6(s.start) << ',' << detail::fixed6(s.end) << ',' << to_string(s.condition)
        << '\n';
}

/// Lookup of the sound condition at a video time. Times outside every
/// segment map to NO_SPEECH.
class SpeechIndex {
 public:
  SpeechIndex() = default;
  explicit SpeechIndex(std::span<const SpeechSegment> segs) {
    for (const auto& s : segs) by_video_[s.video_id].push_back(s);
    for (auto& [v, list] : by_video_)
      std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  }

  bool has_video(const std::string& video) const { return by_video_.count(video) > 0; }

  SpeechCondition at(const std::string& video, double t) const {
    auto it = by_video_.find(video);
    if (it == by_video_.end()) return SpeechCondition::NoSpeech;
    const auto& list = it->second;
    auto p = std::upper_bound(list.begin(), list.end(), t, [](double v, const auto& s) { return v < s.start; });
    while (p != list.begin()) {
      --p;
      if (t < p->end || (t == p->end && std::next(p) == list.end())) return p->condition;
      if (p->end <= t) break;
    }
    return SpeechCondition::NoSpeech;
  }

  const std::vector<SpeechSegment>* segments(const std::string& video) const {
    auto it = by_video_.find(video);
    return it == by_video_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, std::vector<SpeechSegment>> by_video_;
};

}  // namespace asd
