// SPDX-License-Identifier: Apache-2.0
//
// Adagrad training over example windows and the model-variant matrix.
// Training runs in single precision; checkpoints store the exact values.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "asd/checkpoint.hpp"
#include "asd/errors.hpp"
#include "asd/features.hpp"
#include "asd/metrics.hpp"
#include "asd/model.hpp"
#include "asd/scoring.hpp"

namespace asd {

struct TrainConfig {
  double learning_rate = 0x1p-6;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double accumulator_epsilon = 1e-7;
  ModelSpec spec;
  double validation_fraction = 0.1;  ///< by track hash
  int jobs = 1;

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be > 0");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(accumulator_epsilon >= 0)) throw ValidationError("accumulator epsilon must be >= 0");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
      throw ValidationError("validation fraction must lie in [0, 1)");
    if (jobs < 1) throw ValidationError("jobs must be >= 1");
    spec.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"seed", c.seed},
          {"accumulator_epsilon", c.accumulator_epsilon}, {"validation_fraction", c.validation_fraction},
          {"jobs", c.jobs},                   {"spec", spec_to_json(c.spec)}};
}

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.accumulator_epsilon = j.value("accumulator_epsilon", c.accumulator_epsilon);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("spec")) c.spec = spec_from_json(j.at("spec"));
    else if (j.contains("variant")) c.spec = ModelSpec::from_variant(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

struct EpochRecord {
  int epoch = 0;
  double total = 0;  ///< mean per window
  double fused = 0;
  double audio_aux = 0;
  double visual_aux = 0;
  std::optional<double> validation_auroc;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

inline nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    nlohmann::json r = {{"epoch", e.epoch},         {"total", e.total},
                        {"fused", e.fused},         {"audio_aux", e.audio_aux},
                        {"visual_aux", e.visual_aux}, {"seconds", e.seconds}};
    r["validation_auroc"] = e.validation_auroc ? nlohmann::json(*e.validation_auroc) : nlohmann::json(nullptr);
    arr.push_back(r);
  }
  return {{"epochs", arr}};
}

// ---------------------------------------------------------------- Adagrad

/// acc += g^2; w -= lr * g / (sqrt(acc) + eps). A non-finite gradient
/// aborts the update and names the parameter it belongs to.
template <class T>
void adagrad_step(std::span<T> params, std::span<const T> grads, std::span<T> acc, double lr, double eps,
                  const nn::ParamLayout* layout = nullptr) {
  if (params.size() != grads.size() || params.size() != acc.size())
    throw ValidationError("parameter, gradient and accumulator sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      std::string name = "index " + std::to_string(i);
      if (layout)
        for (const auto& e : layout->entries())
          if (i >= e.offset && i < e.offset + e.size) name = e.name + "[" + std::to_string(i - e.offset) + "]";
      throw Error("non-finite gradient for parameter " + name);
    }
  const T tlr = static_cast<T>(lr), teps = static_cast<T>(eps);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const T g = grads[i];
    acc[i] += g * g;
    params[i] -= tlr * g / (std::sqrt(acc[i]) + teps);
  }
}

inline void adagrad_step(std::span<double> params, std::span<const double> grads, std::span<double> acc,
                         const TrainConfig& cfg) {
  adagrad_step<double>(params, grads, acc, cfg.learning_rate, cfg.accumulator_epsilon);
}

// ----------------------------------------------------------------- splits

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// True when the track belongs to the validation split.
inline bool is_validation_track(std::string_view track_id, double fraction) {
  return static_cast<double>(fnv1a64(track_id) % 10000) < fraction * 10000.0;
}

/// Fisher-Yates permutation of [0, n) that depends only on (seed, epoch, n).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1)));
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const std::size_t j = std::min(i - 1, static_cast<std::size_t>(u * static_cast<double>(i)));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

// ------------------------------------------------------------------ train

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
  std::size_t train_windows = 0;
  std::size_t validation_tracks = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

/// Last masked frame + 1: frames beyond it are never evaluated.
inline int evaluated_frames(const ExampleWindow& w) {
  int n = 0;
  for (int j = 0; j < static_cast<int>(w.mask.size()); ++j)
    if (w.mask[j] != 0) n = j + 1;
  return n;
}

}  // namespace detail

/// Validation auROC over whole tracks (recurrent state carried per track).
/// Empty when the tracks hold only one class.
inline std::optional<double> validation_auroc(const Checkpoint& ck,
                                              std::span<const std::shared_ptr<const TrackFeatures>> tracks) {
  if (tracks.empty()) return std::nullopt;
  const Scorer scorer(ck);
  std::vector<ScoredFrame> frames;
  for (const auto& t : tracks)
    for (auto& f : scorer.score_frames(*t)) frames.push_back(std::move(f));
  std::size_t pos = 0;
  for (const auto& f : frames) pos += f.label == SpeakLabel::SpeakingAudible;
  if (pos == 0 || pos == frames.size()) return std::nullopt;
  return roc_auc(frames);
}

inline TrainResult train(std::span<const ExampleWindow> corpus, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  for (const auto& w : corpus) {
    if (!w.track) throw ValidationError("window without track features");
    check_modalities(cfg.spec, *w.track);
  }

  std::vector<std::size_t> train_idx;
  std::vector<std::shared_ptr<const TrackFeatures>> val_tracks;
  std::set<std::string> seen_val;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (is_validation_track(corpus[i].track_id, cfg.validation_fraction)) {
      if (seen_val.insert(corpus[i].track_id).second) val_tracks.push_back(corpus[i].track);
    } else {
      train_idx.push_back(i);
    }
  }
  if (train_idx.empty()) throw ValidationError("every track fell into the validation split");

  const AsdModel<float> model(cfg.spec);
  const auto init = model.init_parameters(cfg.seed);
  std::vector<float> params(init.begin(), init.end());
  std::vector<float> acc(params.size(), 0.f), batch_grad(params.size());

  const int jobs = std::max(1, cfg.jobs);
  // Activations live in one workspace per job; gradients get one buffer per
  // batch position so the reduction order never depends on `jobs`.
  struct Worker {
    typename AsdModel<float>::Workspace ws;
    InputBuffer buf;
  };
  const std::size_t max_batch = std::min<std::size_t>(cfg.batch_size, train_idx.size());
  std::vector<Worker> workers(jobs);
  std::vector<std::vector<float>> grads(max_batch);
  std::vector<LossTerms> losses(max_batch);

  TrainResult result;
  result.train_windows = train_idx.size();
  result.validation_tracks = val_tracks.size();

  auto run_window = [&](const ExampleWindow& w, Worker& wk, std::size_t k) {
    const int n = detail::evaluated_frames(w);
    window_inputs(cfg.spec, w, n, wk.buf);
    grads[k].assign(params.size(), 0.f);
    losses[k] = model.window_loss(params, wk.buf.frames, w.targets, w.mask, grads[k], wk.ws);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto perm = epoch_permutation(train_idx.size(), cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t b = 0; b < perm.size(); b += cfg.batch_size) {
      const std::size_t bn = std::min<std::size_t>(cfg.batch_size, perm.size() - b);
      auto window_of = [&](std::size_t k) -> const ExampleWindow& { return corpus[train_idx[perm[b + k]]]; };
      if (jobs == 1) {
        for (std::size_t k = 0; k < bn; ++k) run_window(window_of(k), workers[0], k);
      } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errs(jobs);
        for (int t = 0; t < jobs; ++t)
          pool.emplace_back([&, t] {
            try {
              for (std::size_t k = t; k < bn; k += jobs) run_window(window_of(k), workers[t], k);
            } catch (...) {
              errs[t] = std::current_exception();
            }
          });
        for (auto& th : pool) th.join();
        for (auto& e : errs)
          if (e) std::rethrow_exception(e);
      }
      // Fixed-order reduction keeps results identical for any job count.
      std::fill(batch_grad.begin(), batch_grad.end(), 0.f);
      for (std::size_t k = 0; k < bn; ++k) {
        const auto& g = grads[k];
        for (std::size_t i = 0; i < g.size(); ++i) batch_grad[i] += g[i];
        rec.total += losses[k].total;
        rec.fused += losses[k].fused;
        rec.audio_aux += losses[k].audio_aux;
        rec.visual_aux += losses[k].visual_aux;
      }
      const float inv = 1.f / static_cast<float>(bn);
      for (auto& g : batch_grad) g *= inv;
      adagrad_step<float>(params, batch_grad, acc, cfg.learning_rate, cfg.accumulator_epsilon, &model.layout());
    }
    const double nw = static_cast<double>(perm.size());
    rec.total /= nw;
    rec.fused /= nw;
    rec.audio_aux /= nw;
    rec.visual_aux /= nw;
    result.checkpoint = {cfg.spec, std::vector<double>(params.begin(), params.end())};
    rec.validation_auroc = validation_auroc(result.checkpoint, val_tracks);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

// --------------------------------------------------------- variant matrix

struct VariantResult {
  std::string variant;
  Checkpoint checkpoint;
  std::optional<double> validation_auroc;
  TrainHistory history;
};

inline std::vector<VariantResult> build_variant_matrix(std::span<const ExampleWindow> corpus, const TrainConfig& base,
                                                       std::span<const std::string> variants,
                                                       const std::function<void(const std::string&, const EpochRecord&)>&
                                                           on_epoch = {}) {
  if (variants.empty()) throw ValidationError("no variants requested");
  std::vector<VariantResult> out;
  for (const auto& v : variants) {
    TrainConfig cfg = base;
    cfg.spec = ModelSpec::from_variant(v, base.spec);
    auto r = train(corpus, cfg, on_epoch ? EpochCallback([&](const EpochRecord& e) { on_epoch(cfg.spec.variant(), e); })
                                         : EpochCallback{});
    out.push_back({cfg.spec.variant(), std::move(r.checkpoint),
                   r.history.epochs.empty() ? std::nullopt : r.history.epochs.back().validation_auroc,
                   std::move(r.history)});
  }
  return out;
}

inline nlohmann::json to_json(std::span<const VariantResult> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"variant", r.variant},
                   {"parameters", r.checkpoint.params.size()},
                   {"validation_auroc", r.validation_auroc ? nlohmann::json(*r.validation_auroc) : nlohmann::json()}});
  return arr;
}

}  // namespace asd
