// SPDX-License-Identifier: Apache-2.0
//
// Frame-level evaluation: auROC, balanced accuracy, bucketed breakdowns by
// sound condition and face size, and detection-style mean average precision.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "asd/errors.hpp"
#include "asd/labels.hpp"
#include "asd/synth.hpp"

namespace asd {

struct ScoredFrame {
  std::string video_id;
  std::string track_id;
  double timestamp = 0;
  BoundingBox box;
  double score = 0.5;
  SpeakLabel label = SpeakLabel::NotSpeaking;
  std::optional<SpeechCondition> condition;
  std::optional<double> face_width_px;
};

/// Which labels count as positive. The default follows the audibility-based
/// task definition; the flag exists for visual-only analyses.
struct PositivePolicy {
  bool not_audible_is_positive = false;
  bool operator()(SpeakLabel l) const {
    return l == SpeakLabel::SpeakingAudible || (not_audible_is_positive && l == SpeakLabel::SpeakingNotAudible);
  }
};

namespace detail {

inline void require_both_classes(std::span<const std::uint8_t> positive, const char* what) {
  const auto pos = std::count(positive.begin(), positive.end(), std::uint8_t{1});
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(positive.size()))
    throw ValidationError(std::string(what) + " is undefined without both positive and negative frames");
}

inline std::vector<std::uint8_t> positives_of(std::span<const ScoredFrame> frames, PositivePolicy policy) {
  std::vector<std::uint8_t> out(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out[i] = policy(frames[i].label);
  return out;
}

inline std::vector<double> scores_of(std::span<const ScoredFrame> frames) {
  std::vector<double> out(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out[i] = frames[i].score;
  return out;
}

}  // namespace detail

/// Mann-Whitney statistic P(s+ > s-) + P(s+ == s-)/2 via one sort.
inline double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ValidationError("scores and labels differ in length");
  detail::require_both_classes(positive, "auROC");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Rank sum of positives with average ranks across ties.
  double rank_sum = 0;
  double n_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive[idx[k]]) {
        rank_sum += avg_rank;
        n_pos += 1;
      }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

inline double roc_auc(std::span<const ScoredFrame> frames, PositivePolicy policy = {}) {
  const auto pos = detail::positives_of(frames, policy);
  const auto sc = detail::scores_of(frames);
  return roc_auc(sc, pos);
}

struct RocPoint {
  double threshold = 0;
  double false_positive_rate = 0;
  double true_positive_rate = 0;
};

/// ROC curve with one point per distinct score (predict positive iff
/// score >= threshold), from (0,0) to (1,1).
inline std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ValidationError("scores and labels differ in length");
  detail::require_both_classes(positive, "ROC curve");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  const double n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), std::uint8_t{1}));
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (positive[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    out.push_back({scores[idx[i]], fp / n_neg, tp / n_pos});
    i = j;
  }
  return out;
}

/// (TPR + TNR) / 2, predicting positive iff score >= threshold.
inline double balanced_accuracy(std::span<const double> scores, std::span<const std::uint8_t> positive,
                                double threshold = 0.5) {
  if (scores.size() != positive.size()) throw ValidationError("scores and labels differ in length");
  detail::require_both_classes(positive, "balanced accuracy");
  double tp = 0, tn = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (positive[i]) {
      np += 1;
      tp += pred;
    } else {
      nn += 1;
      tn += !pred;
    }
  }
  return 0.5 * (tp / np + tn / nn);
}

inline double balanced_accuracy(std::span<const ScoredFrame> frames, double threshold = 0.5,
                                PositivePolicy policy = {}) {
  const auto pos = detail::positives_of(frames, policy);
  return balanced_accuracy(detail::scores_of(frames), pos, threshold);
}

// ---------------------------------------------------------------- buckets

enum class Bucketing { NoiseCondition, FaceSize };

/// Face-width classes in pixels: [0,64), [64,128), [128,inf).
inline std::string size_bucket(double width_px) {
  if (width_px < 64.0) return "small";
  if (width_px < 128.0) return "medium";
  return "large";
}

/// Sound-condition classes. Frames outside any speech segment land in
/// "no_speech" so bucket counts always sum to the total.
inline std::string condition_bucket(SpeechCondition c) {
  switch (c) {
    case SpeechCondition::Clean: return "clean";
    case SpeechCondition::SpeechWithNoise: return "noise";
    case SpeechCondition::SpeechWithMusic: return "music";
    case SpeechCondition::NoSpeech: return "no_speech";
  }
  return "no_speech";
}

struct BucketResult {
  std::string bucket;
  std::size_t frames = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::optional<double> balanced_accuracy;  ///< empty when one class is absent
};

inline std::vector<BucketResult> bucketed_metrics(std::span<const ScoredFrame> frames, Bucketing by,
                                                  double threshold = 0.5, PositivePolicy policy = {}) {
  const std::vector<std::string> order = by == Bucketing::FaceSize
                                             ? std::vector<std::string>{"small", "medium", "large"}
                                             : std::vector<std::string>{"clean", "noise", "music", "no_speech"};
  std::map<std::string, std::pair<std::vector<double>, std::vector<std::uint8_t>>> groups;
  for (const auto& f : frames) {
    std::string key;
    if (by == Bucketing::FaceSize) {
      if (!f.face_width_px) throw ValidationError("frame at " + f.video_id + " t=" + detail::fixed6(f.timestamp) + " has no face width");
      key = size_bucket(*f.face_width_px);
    } else {
      if (!f.condition)
        throw ValidationError("frame at " + f.video_id + " t=" + detail::fixed6(f.timestamp) + " has no sound condition");
      key = condition_bucket(*f.condition);
    }
    groups[key].first.push_back(f.score);
    groups[key].second.push_back(policy(f.label));
  }
  std::vector<BucketResult> out;
  for (const auto& name : order) {
    auto it = groups.find(name);
    if (it == groups.end()) continue;
    const auto& [sc, pos] = it->second;
    BucketResult r;
    r.bucket = name;
    r.frames = sc.size();
    r.positives = static_cast<std::size_t>(std::count(pos.begin(), pos.end(), 1));
    r.negatives = r.frames - r.positives;
    if (r.positives > 0 && r.negatives > 0)
      r.balanced_accuracy = balanced_accuracy(
          sc, pos, threshold);
    out.push_back(r);
  }
  return out;
}

// -------------------------------------------------------------------- mAP

inline constexpr double kMapIouThreshold = 0.5;
inline constexpr double kMapTimeTolerance = 1.0 / 40.0;

/// Average precision with all-points interpolation over a ranked list of
/// hit/miss flags, given the number of ground-truth positives.
inline double average_precision(std::span<const std::uint8_t> ranked_hits, std::size_t n_positive) {
  if (n_positive == 0) throw ValidationError("average precision needs at least one positive");
  std::vector<double> prec, rec;
  double tp = 0;
  for (std::size_t i = 0; i < ranked_hits.size(); ++i) {
    tp += ranked_hits[i];
    prec.push_back(tp / static_cast<double>(i + 1));
    rec.push_back(tp / static_cast<double>(n_positive));
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0, prev_rec = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - prev_rec) * prec[i];
    prev_rec = rec[i];
  }
  return ap;
}

/// Detection-style AP for the speaking class. Each prediction is snapped to
/// the nearest ground-truth timestamp of its video (error beyond 1/40 s),
/// then predictions are matched greedily in descending score order to the
/// unmatched ground-truth box of highest IoU >= 0.5. A match to a positive
/// box is a hit; anything else is a false positive.
inline double activitynet_map(std::span<const LabeledFrame> truth, std::span<const ScoredFrame> predictions,
                              PositivePolicy policy = {}) {
  std::map<std::string, std::vector<double>> grid;  // video -> sorted timestamps
  for (const auto& g : truth) grid[g.video_id].push_back(g.timestamp);
  for (auto& [v, ts] : grid) {
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  }
  auto snap = [&](const std::string& video, double t) -> std::pair<std::string, std::size_t> {
    auto it = grid.find(video);
    if (it == grid.end()) throw ValidationError("prediction for video " + video + " has no ground truth");
    const auto& ts = it->second;
    auto p = std::lower_bound(ts.begin(), ts.end(), t);
    std::size_t best = p == ts.end() ? ts.size() - 1 : static_cast<std::size_t>(p - ts.begin());
    if (best > 0 && std::fabs(ts[best - 1] - t) <= std::fabs(ts[best] - t)) --best;
    if (std::fabs(ts[best] - t) > kMapTimeTolerance + 1e-9)
      throw ValidationError("prediction at " + video + " t=" + detail::fixed6(t) + " is off the ground-truth time grid");
    return {video, best};
  };
  std::map<std::pair<std::string, std::size_t>, std::vector<std::size_t>> gt_at;
  std::size_t n_positive = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    gt_at[snap(truth[i].video_id, truth[i].timestamp)].push_back(i);
    n_positive += policy(truth[i].label);
  }
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return predictions[a].score > predictions[b].score; });
  std::vector<char> used(truth.size(), 0);
  std::vector<std::uint8_t> hits;
  for (std::size_t k : order) {
    const auto& p = predictions[k];
    const auto& cands = gt_at[snap(p.video_id, p.timestamp)];
    double best_iou = kMapIouThreshold;
    std::optional<std::size_t> best;
    for (std::size_t g : cands) {
      if (used[g]) continue;
      const double iou = intersection_over_union(p.box, truth[g].box);
      if (iou >= best_iou && (!best || iou > best_iou)) {
        best_iou = iou;
        best = g;
      }
    }
    bool hit = false;
    if (best) {
      used[*best] = 1;
      hit = policy(truth[*best].label);
    }
    hits.push_back(hit);
  }
  return average_precision(hits, n_positive);
}

// ----------------------------------------------------------------- report

struct EvalReport {
  double auroc = 0;
  double balanced_accuracy = 0;
  std::size_t frames = 0;
  std::vector<RocPoint> roc;
  std::vector<BucketResult> buckets;
  std::optional<double> map;
};

inline EvalReport evaluate(std::span<const ScoredFrame> frames, std::optional<Bucketing> by = std::nullopt,
                           double threshold = 0.5, PositivePolicy policy = {}) {
  EvalReport r;
  r.frames = frames.size();
  r.auroc = roc_auc(frames, policy);
  r.balanced_accuracy = balanced_accuracy(frames, threshold, policy);
  const auto pos = detail::positives_of(frames, policy);
  r.roc = roc_points(detail::scores_of(frames), pos);
  if (by) r.buckets = bucketed_metrics(frames, *by, threshold, policy);
  return r;
}

}  // namespace asd
