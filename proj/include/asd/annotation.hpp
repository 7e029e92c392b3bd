// SPDX-License-Identifier: Apache-2.0
//
// Rating-task store. Each task is one face track; raters submit full label
// timelines under optimistic versioning. Accepted submissions go to an
// append-only journal and are fsync'd before the call returns; a snapshot
// periodically folds the journal so startup stays fast.
//
//   <dir>/tasks.json      task definitions (written once at creation)
//   <dir>/snapshot.json   all submissions up to journal sequence `seq`
//   <dir>/journal.log     one JSON submission per line, seq > snapshot seq
#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asd/analytics.hpp"
#include "asd/errors.hpp"
#include "asd/labels.hpp"
#include "asd/media.hpp"

namespace asd {

enum class TaskStatus { Unrated, Partial, Complete };

inline std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Unrated: return "UNRATED";
    case TaskStatus::Partial: return "PARTIAL";
    case TaskStatus::Complete: return "COMPLETE";
  }
  return "UNRATED";
}

inline std::optional<TaskStatus> parse_task_status(std::string_view s) {
  if (s == "UNRATED") return TaskStatus::Unrated;
  if (s == "PARTIAL") return TaskStatus::Partial;
  if (s == "COMPLETE") return TaskStatus::Complete;
  return std::nullopt;
}

inline constexpr double kEnvelopeRate = 100.0;  ///< samples per second

struct MediaRef {
  std::string frames;  ///< path or URL of the frame sequence
  std::string audio;   ///< path or URL of the waveform
};

struct AnnotationTask {
  std::string task_id;
  FaceTrack track;
  MediaRef media;
  std::vector<float> envelope;  ///< RMS at kEnvelopeRate from track start

  double start() const { return track.start_time(); }
  double end() const { return track.end_time(); }
};

/// Windowed RMS: sample k covers [start + k/rate, start + (k+1)/rate).
/// Samples outside the waveform count as silence.
inline std::vector<float> rms_envelope(const Waveform& w, double start, double end, double rate = kEnvelopeRate) {
  const auto n = static_cast<std::size_t>(std::ceil((end - start) * rate - 1e-9));
  std::vector<float> out(n, 0.f);
  for (std::size_t k = 0; k < n; ++k) {
    const long a = std::lround((start + static_cast<double>(k) / rate) * w.sample_rate);
    const long b = std::lround((start + static_cast<double>(k + 1) / rate) * w.sample_rate);
    double acc = 0;
    for (long i = a; i < b; ++i)
      if (i >= 0 && i < static_cast<long>(w.samples.size())) acc += static_cast<double>(w.samples[i]) * w.samples[i];
    out[k] = b > a ? static_cast<float>(std::sqrt(acc / static_cast<double>(b - a))) : 0.f;
  }
  return out;
}

struct Submission {
  std::string task_id;
  std::string rater_id;
  int version = 0;
  std::vector<LabelSegment> segments;
};

struct TaskSummary {
  std::string task_id;
  std::string track_id;
  std::string video_id;
  TaskStatus status = TaskStatus::Unrated;
  std::map<std::string, int> rater_versions;
  double start = 0;
  double end = 0;
};

namespace detail {

inline nlohmann::json segments_to_json(std::span<const LabelSegment> segs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : segs) a.push_back({{"start", s.start}, {"end", s.end}, {"label", std::string(to_string(s.label))}});
  return a;
}

inline std::vector<LabelSegment> segments_from_json(const nlohmann::json& a) {
  if (!a.is_array()) throw ValidationError("segments must be an array");
  std::vector<LabelSegment> out;
  for (const auto& s : a) {
    if (!s.is_object() || !s.contains("start") || !s.contains("end") || !s.contains("label"))
      throw ValidationError("each segment needs start, end and label");
    if (!s["start"].is_number() || !s["end"].is_number() || !s["label"].is_string())
      throw ValidationError("segment start/end must be numbers and label a string");
    const auto label = parse_speak_label(s["label"].get<std::string>());
    if (!label) throw ValidationError("unknown label '" + s["label"].get<std::string>() + "'");
    out.push_back({s["start"].get<double>(), s["end"].get<double>(), *label});
  }
  return out;
}

inline nlohmann::json submission_to_json(const Submission& s, std::uint64_t seq) {
  return {{"seq", seq},
          {"task", s.task_id},
          {"rater", s.rater_id},
          {"version", s.version},
          {"segments", segments_to_json(s.segments)}};
}

inline Submission submission_from_json(const nlohmann::json& j) {
  return {j.at("task").get<std::string>(), j.at("rater").get<std::string>(), j.at("version").get<int>(),
          segments_from_json(j.at("segments"))};
}

inline nlohmann::json task_to_json(const AnnotationTask& t) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : t.track.frames)
    frames.push_back({{"t", f.timestamp}, {"x1", f.box.x1}, {"y1", f.box.y1}, {"x2", f.box.x2}, {"y2", f.box.y2},
                      {"detected", f.detected}});
  return {{"task_id", t.task_id},       {"track_id", t.track.track_id}, {"video_id", t.track.video_id},
          {"frame_rate", t.track.frame_rate}, {"frames", frames},        {"media_frames", t.media.frames},
          {"media_audio", t.media.audio}, {"envelope", t.envelope}};
}

inline AnnotationTask task_from_json(const nlohmann::json& j) {
  AnnotationTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.track.track_id = j.at("track_id").get<std::string>();
  t.track.video_id = j.at("video_id").get<std::string>();
  t.track.frame_rate = j.at("frame_rate").get<double>();
  for (const auto& f : j.at("frames"))
    t.track.frames.push_back({f.at("t").get<double>(),
                              {f.at("x1").get<double>(), f.at("y1").get<double>(), f.at("x2").get<double>(),
                               f.at("y2").get<double>()},
                              f.value("detected", true)});
  t.media = {j.value("media_frames", ""), j.value("media_audio", "")};
  t.envelope = j.value("envelope", std::vector<float>{});
  return t;
}

/// Writes a file durably: temp file, fsync, rename, fsync the directory.
inline void write_file_durably(const std::filesystem::path& path, const std::string& data) {
  const auto tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error("cannot write " + tmp);
  std::size_t off = 0;
  while (off < data.size()) {
    const auto w = ::write(fd, data.data() + off, data.size() - off);
    if (w <= 0) {
      ::close(fd);
      throw Error("write failed for " + tmp);
    }
    off += static_cast<std::size_t>(w);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw Error("fsync failed for " + tmp);
  }
  ::close(fd);
  std::filesystem::rename(tmp, path);
  const int dfd = ::open(path.parent_path().c_str(), O_RDONLY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

}  // namespace detail

/// Thread-safe task store. Reads work on immutable per-task state that
/// writers replace atomically, so readers never wait on journal I/O.
class AnnotationStore {
 public:
  /// Initializes a new store directory from task definitions.
  static void create(const std::filesystem::path& dir, std::span<const AnnotationTask> tasks) {
    std::filesystem::create_directories(dir);
    if (std::filesystem::exists(dir / "tasks.json")) throw ConflictError("store already exists in " + dir.string(), 0);
    std::map<std::string, bool> seen;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tasks) {
      if (t.track.frames.empty()) throw ValidationError("task " + t.task_id + " has no frames");
      if (!seen.emplace(t.task_id, true).second) throw ValidationError("duplicate task id " + t.task_id);
      arr.push_back(detail::task_to_json(t));
    }
    detail::write_file_durably(dir / "tasks.json", arr.dump());
  }

  explicit AnnotationStore(std::filesystem::path dir, std::size_t snapshot_every = 256)
      : dir_(std::move(dir)), snapshot_every_(snapshot_every) {
    std::ifstream in(dir_ / "tasks.json");
    if (!in) throw NotFoundError("no task store in " + dir_.string());
    try {
      for (const auto& j : nlohmann::json::parse(in)) {
        auto t = std::make_shared<Entry>();
        t->task = detail::task_from_json(j);
        t->state = std::make_shared<const RaterState>();
        order_.push_back(t->task.task_id);
        tasks_.emplace(t->task.task_id, std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("corrupt tasks.json: ") + e.what());
    }
    std::sort(order_.begin(), order_.end());
    recover();
    journal_fd_ = ::open((dir_ / "journal.log").c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (journal_fd_ < 0) throw Error("cannot open journal in " + dir_.string());
  }

  ~AnnotationStore() {
    if (journal_fd_ >= 0) ::close(journal_fd_);
  }

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  std::vector<TaskSummary> list_tasks(std::optional<TaskStatus> filter = std::nullopt) const {
    std::vector<TaskSummary> out;
    for (const auto& id : order_) {
      auto s = summary(id);
      if (!filter || s.status == *filter) out.push_back(std::move(s));
    }
    return out;
  }

  TaskSummary summary(const std::string& task_id) const {
    const Entry& e = entry(task_id);
    const auto st = load(e);
    TaskSummary s{e.task.task_id, e.task.track.track_id, e.task.track.video_id, status_of(*st), {},
                  e.task.start(), e.task.end()};
    for (const auto& [r, subs] : st->history) s.rater_versions[r] = subs.back().version;
    return s;
  }

  const AnnotationTask& task(const std::string& task_id) const { return entry(task_id).task; }

  /// Latest accepted timeline per rater.
  std::map<std::string, Submission> latest(const std::string& task_id) const {
    const auto st = load(entry(task_id));
    std::map<std::string, Submission> out;
    for (const auto& [r, subs] : st->history) out[r] = subs.back();
    return out;
  }

  /// Every accepted submission of a rater, oldest first.
  std::vector<Submission> history(const std::string& task_id, const std::string& rater) const {
    const auto st = load(entry(task_id));
    auto it = st->history.find(rater);
    return it == st->history.end() ? std::vector<Submission>{} : it->second;
  }

  int current_version(const std::string& task_id, const std::string& rater) const {
    const auto st = load(entry(task_id));
    auto it = st->history.find(rater);
    return it == st->history.end() ? 0 : it->second.back().version;
  }

  /// Accepts a full-coverage timeline at exactly current version + 1. The
  /// submission is on disk before this returns.
  int put_segments(Submission sub) {
    Entry& e = entry(sub.task_id);
    if (sub.rater_id.empty()) throw ValidationError("rater id must not be empty");
    if (sub.rater_id.find_first_of(",\n\r") != std::string::npos) throw ValidationError("rater id has invalid characters");
    std::sort(sub.segments.begin(), sub.segments.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
    if (const auto issue = check_coverage(sub.segments, e.task.start(), e.task.end()))
      throw ValidationError(std::string(to_string(issue.problem)) + " in [" + detail::fixed6(issue.from) + ", " +
                            detail::fixed6(issue.to) + "] for task " + sub.task_id);
    std::lock_guard<std::mutex> w(write_mu_);
    const auto st = load(e);
    const auto it = st->history.find(sub.rater_id);
    const int current = it == st->history.end() ? 0 : it->second.back().version;
    if (sub.version != current + 1)
      throw ConflictError("version " + std::to_string(sub.version) + " is stale for rater " + sub.rater_id +
                              " on task " + sub.task_id + "; current is " + std::to_string(current),
                          current);
    append_journal(detail::submission_to_json(sub, ++seq_).dump() + "\n");
    auto next = std::make_shared<RaterState>(*st);
    next->history[sub.rater_id].push_back(sub);
    store(e, std::move(next));
    if (snapshot_every_ > 0 && ++since_snapshot_ >= snapshot_every_) snapshot_locked();
    return sub.version;
  }

  void snapshot() {
    std::lock_guard<std::mutex> w(write_mu_);
    snapshot_locked();
  }

  /// Majority label per frame over the latest timeline of every rater; any
  /// tie resolves to NOT_SPEAKING.
  std::vector<LabeledFrame> export_frames(std::span<const std::string> task_ids) const {
    std::vector<std::string> incomplete;
    std::vector<LabeledFrame> out;
    for (const auto& id : resolve_ids(task_ids)) {
      const Entry& e = entry(id);
      const auto st = load(e);
      if (status_of(*st) != TaskStatus::Complete) {
        incomplete.push_back(id);
        continue;
      }
      const auto labels = per_rater_labels(e, *st);
      for (std::size_t f = 0; f < e.task.track.frames.size(); ++f) {
        std::array<int, 3> votes{};
        for (const auto& r : labels) ++votes[static_cast<std::size_t>(r[f])];
        const int top = *std::max_element(votes.begin(), votes.end());
        int n_top = 0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < votes.size(); ++k)
          if (votes[k] == top) {
            ++n_top;
            arg = k;
          }
        const SpeakLabel label = n_top == 1 ? static_cast<SpeakLabel>(arg) : SpeakLabel::NotSpeaking;
        const auto& tf = e.task.track.frames[f];
        out.push_back({e.task.track.video_id, tf.timestamp, tf.box, label, e.task.track.track_id});
      }
    }
    if (!incomplete.empty()) {
      std::string msg = "tasks not complete:";
      for (const auto& id : incomplete) msg += " " + id;
      throw ValidationError(msg);
    }
    return out;
  }

  std::string export_csv(std::span<const std::string> task_ids) const { return serialize_labels(export_frames(task_ids)); }

  struct Agreement {
    double kappa = 0;
    std::size_t items = 0;
    int raters = 0;
  };

  /// Fleiss' kappa with frames as items. All selected tasks need the same
  /// rater count, at least two.
  Agreement agreement(std::span<const std::string> task_ids) const {
    RatingMatrix m;
    int n = -1;
    for (const auto& id : resolve_ids(task_ids)) {
      const Entry& e = entry(id);
      const auto st = load(e);
      const int raters = static_cast<int>(st->history.size());
      if (n >= 0 && raters != n)
        throw ValidationError("uneven rater counts: task " + id + " has " + std::to_string(raters) + ", expected " +
                              std::to_string(n));
      n = raters;
      if (n < 2) throw ValidationError("agreement needs at least two raters; task " + id + " has " + std::to_string(n));
      const auto labels = per_rater_labels(e, *st);
      const auto part = rating_matrix(labels);
      m.counts.insert(m.counts.end(), part.counts.begin(), part.counts.end());
    }
    if (n < 0) throw ValidationError("no tasks selected");
    return {fleiss_kappa(m), m.counts.size(), n};
  }

  std::size_t size() const { return order_.size(); }

 private:
  struct RaterState {
    std::map<std::string, std::vector<Submission>> history;
  };
  struct Entry {
    AnnotationTask task;
    mutable std::mutex ptr_mu;  // guards only the pointer swap
    std::shared_ptr<const RaterState> state;
  };

  static TaskStatus status_of(const RaterState& st) {
    // Accepted timelines always cover the whole track, so a task with any
    // rating is complete; PARTIAL exists for clients that track drafts.
    return st.history.empty() ? TaskStatus::Unrated : TaskStatus::Complete;
  }

  Entry& entry(const std::string& id) const {
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw NotFoundError("no task " + id);
    return *it->second;
  }

  static std::shared_ptr<const RaterState> load(const Entry& e) {
    std::lock_guard<std::mutex> g(e.ptr_mu);
    return e.state;
  }

  static void store(Entry& e, std::shared_ptr<const RaterState> s) {
    std::lock_guard<std::mutex> g(e.ptr_mu);
    e.state = std::move(s);
  }

  std::vector<std::string> resolve_ids(std::span<const std::string> ids) const {
    if (ids.empty()) return order_;
    for (const auto& id : ids) entry(id);
    return {ids.begin(), ids.end()};
  }

  static std::vector<std::vector<SpeakLabel>> per_rater_labels(const Entry& e, const RaterState& st) {
    std::vector<std::vector<SpeakLabel>> out;
    for (const auto& [r, subs] : st.history) {
      LabelTimeline tl{e.task.track.track_id, subs.back().segments};
      std::vector<SpeakLabel> labels;
      for (const auto& f : e.task.track.frames) labels.push_back(tl.label_at(f.timestamp).value_or(SpeakLabel::NotSpeaking));
      out.push_back(std::move(labels));
    }
    return out;
  }

  void apply(const Submission& s) {
    auto it = tasks_.find(s.task_id);
    if (it == tasks_.end()) throw ParseError("journal references unknown task " + s.task_id);
    auto next = std::make_shared<RaterState>(*it->second->state);
    auto& h = next->history[s.rater_id];
    const int expect = h.empty() ? 1 : h.back().version + 1;
    if (s.version != expect) throw ParseError("journal version gap for " + s.task_id + "/" + s.rater_id);
    h.push_back(s);
    it->second->state = std::move(next);
  }

  void recover() {
    std::uint64_t snap_seq = 0;
    if (std::ifstream in(dir_ / "snapshot.json"); in) {
      try {
        const auto j = nlohmann::json::parse(in);
        snap_seq = j.at("seq").get<std::uint64_t>();
        for (const auto& s : j.at("submissions")) apply(detail::submission_from_json(s));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("corrupt snapshot: ") + e.what());
      }
    }
    seq_ = snap_seq;
    std::ifstream jin(dir_ / "journal.log");
    std::string line;
    std::size_t valid_bytes = 0, pos = 0;
    while (std::getline(jin, line)) {
      const bool complete = !jin.eof();
      pos += line.size() + (complete ? 1 : 0);
      if (!complete) break;  // torn tail: never acknowledged
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        break;
      }
      valid_bytes = pos;
      const auto seq = j.at("seq").get<std::uint64_t>();
      if (seq <= snap_seq) continue;
      apply(detail::submission_from_json(j));
      seq_ = seq;
    }
    // Drop anything after the last complete record so new appends stay parseable.
    if (std::filesystem::exists(dir_ / "journal.log") && std::filesystem::file_size(dir_ / "journal.log") != valid_bytes)
      std::filesystem::resize_file(dir_ / "journal.log", valid_bytes);
  }

  void append_journal(const std::string& line) {
    std::size_t off = 0;
    while (off < line.size()) {
      const auto w = ::write(journal_fd_, line.data() + off, line.size() - off);
      if (w <= 0) throw Error("journal write failed");
      off += static_cast<std::size_t>(w);
    }
    if (::fsync(journal_fd_) != 0) throw Error("journal fsync failed");
  }

  void snapshot_locked() {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& id : order_) {
      const auto st = load(entry(id));
      for (const auto& [r, h] : st->history)
        for (const auto& s : h) subs.push_back(detail::submission_to_json(s, 0));
    }
    detail::write_file_durably(dir_ / "snapshot.json", nlohmann::json{{"seq", seq_}, {"submissions", subs}}.dump());
    if (::ftruncate(journal_fd_, 0) != 0) throw Error("journal truncate failed");
    ::fsync(journal_fd_);
    since_snapshot_ = 0;
  }

  std::filesystem::path dir_;
  std::size_t snapshot_every_;
  std::map<std::string, std::shared_ptr<Entry>> tasks_;
  std::vector<std::string> order_;
  std::mutex write_mu_;
  int journal_fd_ = -1;
  std::uint64_t seq_ = 0;
  std::size_t since_snapshot_ = 0;
};

/// One task per track, with media paths under `media_root` and envelopes
/// computed from the audio when it is available.
inline std::vector<AnnotationTask> tasks_from_tracks(std::span<const FaceTrack> tracks,
                                                     const std::filesystem::path& media_root = {}) {
  std::vector<AnnotationTask> out;
  std::map<std::string, Waveform> audio;
  for (const auto& t : tracks) {
    AnnotationTask task;
    task.task_id = t.track_id;
    task.track = t;
    const auto clip = media_root / "clips" / t.video_id;
    task.media = {(clip / "frames.ppm").string(), (clip / "audio.wav").string()};
    auto it = audio.find(t.video_id);
    if (it == audio.end() && !media_root.empty() && std::filesystem::exists(clip / "audio.wav"))
      it = audio.emplace(t.video_id, read_wav_file((clip / "audio.wav").string())).first;
    task.envelope = it != audio.end() ? rms_envelope(it->second, task.start(), task.end())
                                      : rms_envelope(Waveform{}, task.start(), task.end());
    out.push_back(std::move(task));
  }
  return out;
}

}  // namespace asd
