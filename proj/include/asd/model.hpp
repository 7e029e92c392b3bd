// SPDX-License-Identifier: Apache-2.0
//
// Two-tower audiovisual speaker model. Each tower is a depthwise-separable
// CNN producing a fixed-size embedding; embeddings are concatenated and fed
// to either a static MLP head or two stacked GRUs. Two-tower variants also
// carry one auxiliary classifier per tower.
#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "asd/errors.hpp"
#include "asd/nn.hpp"

namespace asd {

enum class Modalities { A, V, AV, VV };
enum class HeadType { Static, Gru };
enum class TowerKind { Visual, Audio };

inline std::string to_string(Modalities m) {
  switch (m) {
    case Modalities::A: return "A";
    case Modalities::V: return "V";
    case Modalities::AV: return "AV";
    case Modalities::VV: return "VV";
  }
  return "AV";
}

inline std::string to_string(HeadType h) { return h == HeadType::Static ? "STATIC" : "GRU"; }

inline bool uses_visual(Modalities m) { return m != Modalities::A; }
inline bool uses_audio(Modalities m) { return m == Modalities::A || m == Modalities::AV; }

struct TowerDims {
  int stem_channels = 32;
  int block_channels = 64;
  std::vector<int> block_strides = {1, 2, 2, 2, 2, 2};
  int embedding_dim = 128;

  friend bool operator==(const TowerDims&, const TowerDims&) = default;
};

/// Architecture and loss configuration. The defaults are the full-size
/// network; the dimension fields exist so tests can build miniatures.
struct ModelSpec {
  Modalities modalities = Modalities::AV;
  HeadType head = HeadType::Gru;
  int stack_depth = 2;

  TowerDims tower;
  int fusion_hidden = 128;
  int aux_hidden = 128;
  int gru_units = 100;

  int visual_size = 128;
  int mel_bins = 64;
  int mel_frames = 48;

  double aux_weight_audio = 0.4;
  double aux_weight_visual = 0.4;
  double l2_weight = 1e-5;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

  /// Variant name such as "AV-GRU-f2".
  std::string variant() const {
    return to_string(modalities) + "-" + to_string(head) + "-f" + std::to_string(stack_depth);
  }

  void validate() const {
    if (stack_depth < 1) throw ValidationError("stack depth M must be >= 1");
    if (tower.block_strides.empty()) throw ValidationError("tower needs at least one block");
    if (tower.stem_channels < 1 || tower.block_channels < 1 || tower.embedding_dim < 1 ||
        fusion_hidden < 1 || aux_hidden < 1 || gru_units < 1)
      throw ValidationError("layer widths must be positive");
    if (visual_size < 1 || mel_bins < 1 || mel_frames < 1) throw ValidationError("input sizes must be positive");
    if (l2_weight < 0 || aux_weight_audio < 0 || aux_weight_visual < 0)
      throw ValidationError("loss weights must be non-negative");
  }

  /// Parses "<A|V|AV|VV>-<STATIC|GRU>-f<M>" (case-insensitive) over a base spec.
  static ModelSpec from_variant(const std::string& name) { return from_variant(name, ModelSpec()); }

  static ModelSpec from_variant(const std::string& name, ModelSpec base) {
    std::string up;
    for (char ch : name) up += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    const auto d1 = up.find('-');
    const auto d2 = d1 == std::string::npos ? d1 : up.find('-', d1 + 1);
    if (d2 == std::string::npos) throw ValidationError("bad variant '" + name + "', expected e.g. AV-GRU-f2");
    const std::string mod = up.substr(0, d1), head = up.substr(d1 + 1, d2 - d1 - 1), frames = up.substr(d2 + 1);
    if (mod == "A") base.modalities = Modalities::A;
    else if (mod == "V") base.modalities = Modalities::V;
    else if (mod == "AV") base.modalities = Modalities::AV;
    else if (mod == "VV") base.modalities = Modalities::VV;
    else throw ValidationError("bad modality in variant '" + name + "'");
    if (head == "STATIC") base.head = HeadType::Static;
    else if (head == "GRU") base.head = HeadType::Gru;
    else throw ValidationError("bad head in variant '" + name + "'");
    if (frames.size() < 2 || frames[0] != 'F') throw ValidationError("bad frame count in variant '" + name + "'");
    try {
      base.stack_depth = std::stoi(frames.substr(1));
    } catch (const std::exception&) {
      throw ValidationError("bad frame count in variant '" + name + "'");
    }
    base.validate();
    return base;
  }
};

struct ProbPair {
  double speak = 0.5;
  double not_speak = 0.5;
};

/// Per-frame output: fused stream plus one auxiliary stream per tower for
/// two-tower variants.
struct Prediction {
  ProbPair fused;
  std::optional<ProbPair> audio_aux;
  std::optional<ProbPair> visual_aux;
  std::optional<ProbPair> visual2_aux;
};

/// Features of one time step, as float views owned by the caller.
/// `visual` is HWC (size x size x M), `audio` is mel_bins x mel_frames.
struct FrameInput {
  std::span<const float> visual;
  std::span<const float> audio;
};

/// Recurrent head state: layer-1 and layer-2 hidden vectors.
template <class T>
struct GruState {
  std::vector<T> h1, h2;
};

struct LossTerms {
  double total = 0;
  double fused = 0;      ///< cross entropy of the fused stream, without the L2 term
  double audio_aux = 0;
  double visual_aux = 0;  ///< sum over visual towers for VV
  double l2 = 0;          ///< lambda * ||w||^2
};

inline constexpr double kProbabilityClamp = 1e-7;

inline double binary_cross_entropy(double p, double y) {
  p = std::min(std::max(p, kProbabilityClamp), 1.0 - kProbabilityClamp);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

/// Masked cross entropy of one stream of speaking probabilities.
inline double masked_cross_entropy(std::span<const double> p_speak, std::span<const double> targets,
                                   std::span<const double> mask) {
  if (p_speak.size() != targets.size() || mask.size() != targets.size())
    throw ValidationError("prediction, target and mask lengths differ");
  double s = 0;
  for (std::size_t j = 0; j < targets.size(); ++j)
    if (mask[j] != 0) s += mask[j] * binary_cross_entropy(p_speak[j], targets[j]);
  return s;
}

/// Combined objective: CE(fused) + lambda ||w||^2 + la CE(audio) + lv CE(visual).
/// Absent auxiliary streams contribute zero.
inline LossTerms compute_loss(std::span<const double> fused, std::span<const double> audio_aux,
                              std::span<const double> visual_aux, std::span<const double> targets,
                              std::span<const double> mask, double weights_squared_norm,
                              const ModelSpec& spec) {
  LossTerms t;
  t.fused = masked_cross_entropy(fused, targets, mask);
  if (!audio_aux.empty()) t.audio_aux = masked_cross_entropy(audio_aux, targets, mask);
  if (!visual_aux.empty()) t.visual_aux = masked_cross_entropy(visual_aux, targets, mask);
  t.l2 = spec.l2_weight * weights_squared_norm;
  t.total = t.fused + t.l2 + spec.aux_weight_audio * t.audio_aux + spec.aux_weight_visual * t.visual_aux;
  return t;
}

namespace detail {

/// Deterministic uniform in [0, 1) from a 64-bit engine (53-bit mantissa).
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Embedding CNN: 3x3/s2 stem, depthwise-separable blocks, global average
/// pool, linear projection. ReLU after every convolution.
struct Tower {
  TowerKind kind = TowerKind::Visual;
  std::string prefix;
  nn::Shape3 input;
  nn::Conv3x3 stem;
  std::vector<nn::Depthwise3x3> dw;
  std::vector<nn::Pointwise> pw;
  nn::Dense fc;

  nn::Shape3 final_shape() const { return pw.back().out; }

  /// Spatial (h, w) after the stem and after each block.
  std::vector<std::pair<int, int>> spatial_trace() const {
    std::vector<std::pair<int, int>> t{{input.h, input.w}, {stem.out.h, stem.out.w}};
    for (const auto& p : pw) t.push_back({p.out.h, p.out.w});
    return t;
  }
};

template <class T>
struct TowerCache {
  std::vector<T> input, cols, stem_out, pooled, emb;
  std::vector<std::vector<T>> dw_out, pw_out;
};

template <class T>
class AsdModel {
 public:
  explicit AsdModel(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    build();
  }

  const ModelSpec& spec() const { return spec_; }
  const nn::ParamLayout& layout() const { return layout_; }
  std::size_t parameter_count() const { return layout_.total(); }
  const std::vector<Tower>& towers() const { return towers_; }
  int fused_dim() const { return fused_dim_; }
  bool two_tower() const { return towers_.size() == 2; }

  /// Uniform fan-in scaled weights, zero biases. ReLU-fed kernels use
  /// sqrt(6/fan_in), the rest sqrt(3/fan_in).
  std::vector<T> init_parameters(std::uint64_t seed) const {
    std::vector<T> p(layout_.total(), T(0));
    std::mt19937_64 rng(seed);
    for (const auto& e : layout_.entries()) {
      if (e.bias) continue;
      const double scale = relu_fed(e.name) ? 6.0 : 3.0;
      const double a = std::sqrt(scale / e.fan_in);
      for (std::size_t i = 0; i < e.size; ++i) p[e.offset + i] = T((2.0 * detail::unit_uniform(rng) - 1.0) * a);
    }
    return p;
  }

  // ---------------------------------------------------------------- towers

  void tower_forward(int t, std::span<const T> params, std::span<const float> input,
                     TowerCache<T>& c) const {
    const Tower& tw = towers_[t];
    if (input.size() != tw.input.size())
      throw ValidationError(tw.prefix + " input has " + std::to_string(input.size()) + " values, expected " +
                            std::to_string(tw.input.size()) + " (" + std::to_string(tw.input.h) + "x" +
                            std::to_string(tw.input.w) + "x" + std::to_string(tw.input.c) + ")");
    c.input.assign(input.begin(), input.end());
    c.stem_out.resize(tw.stem.out.size());
    tw.stem.forward<T>(params, c.input, c.cols, c.stem_out);
    c.dw_out.resize(tw.dw.size());
    c.pw_out.resize(tw.pw.size());
    std::span<const T> x = c.stem_out;
    for (std::size_t i = 0; i < tw.dw.size(); ++i) {
      c.dw_out[i].resize(tw.dw[i].out.size());
      tw.dw[i].forward<T>(params, x, c.dw_out[i]);
      c.pw_out[i].resize(tw.pw[i].out.size());
      tw.pw[i].forward<T>(params, c.dw_out[i], c.pw_out[i]);
      x = c.pw_out[i];
    }
    const nn::Shape3 fs = tw.final_shape();
    nn::ConstMatMap<T> last(c.pw_out.back().data(), fs.h * fs.w, fs.c);
    c.pooled.resize(fs.c);
    nn::VecMap<T>(c.pooled.data(), fs.c) = last.colwise().mean();
    c.emb.resize(tw.fc.out);
    tw.fc.forward<T>(params, c.pooled, c.emb);
  }

  void tower_backward(int t, std::span<const T> params, const TowerCache<T>& c, std::span<const T> demb,
                      std::span<T> grads, std::vector<T>& g1, std::vector<T>& g2) const {
    const Tower& tw = towers_[t];
    const nn::Shape3 fs = tw.final_shape();
    std::vector<T> dpool(fs.c);
    tw.fc.backward<T>(params, c.pooled, demb, dpool, grads);
    // g1 holds the gradient w.r.t. the current block output.
    g1.assign(fs.size(), T(0));
    const T inv = T(1) / T(fs.h * fs.w);
    for (int p = 0; p < fs.h * fs.w; ++p)
      for (int ch = 0; ch < fs.c; ++ch) g1[static_cast<std::size_t>(p) * fs.c + ch] = dpool[ch] * inv;
    for (std::size_t k = tw.dw.size(); k-- > 0;) {
      nn::relu_backward<T>(c.pw_out[k], g1);
      g2.resize(tw.pw[k].in.size());
      tw.pw[k].backward<T>(params, c.dw_out[k], g1, g2, grads);
      nn::relu_backward<T>(c.dw_out[k], g2);
      const std::vector<T>& block_in = k == 0 ? c.stem_out : c.pw_out[k - 1];
      g1.resize(tw.dw[k].in.size());
      tw.dw[k].backward<T>(params, block_in, g2, g1, grads);
    }
    nn::relu_backward<T>(c.stem_out, g1);
    tw.stem.backward<T>(c.cols, g1, grads);
  }

  /// Embedding for one tower, no caching beyond a scratch cache.
  std::vector<T> embed(int t, std::span<const T> params, std::span<const float> input) const {
    TowerCache<T> c;
    tower_forward(t, params, input, c);
    return c.emb;
  }

  std::span<const float> tower_input(int t, const FrameInput& f) const {
    return towers_[t].kind == TowerKind::Visual ? f.visual : f.audio;
  }

  // ----------------------------------------------------------------- heads

  /// Static head: FC -> ReLU -> FC(2) -> softmax.
  ProbPair predict_static(std::span<const T> params, std::span<const T> fused) const {
    check_fused(fused.size());
    std::vector<T> hid(spec_.fusion_hidden), logit(2);
    static_fc1_.forward<T>(params, fused, hid);
    for (auto& v : hid) v = nn::relu(v);
    static_fc2_.forward<T>(params, hid, logit);
    return to_probs(logit);
  }

  GruState<T> zero_state() const {
    return {std::vector<T>(spec_.gru_units, T(0)), std::vector<T>(spec_.gru_units, T(0))};
  }

  /// Runs the recurrent head over a sequence, carrying `state` in and out.
  std::vector<ProbPair> predict_recurrent(std::span<const T> params, const std::vector<std::vector<T>>& fused,
                                          GruState<T>& state) const {
    if (spec_.head != HeadType::Gru) throw ValidationError("predict_recurrent on a static-head model");
    if (fused.empty()) throw ValidationError("empty input sequence");
    if (state.h1.size() != static_cast<std::size_t>(spec_.gru_units) ||
        state.h2.size() != static_cast<std::size_t>(spec_.gru_units))
      throw ValidationError("GRU state has dimension " + std::to_string(state.h1.size()) + "/" +
                            std::to_string(state.h2.size()) + ", expected " + std::to_string(spec_.gru_units));
    std::vector<ProbPair> out;
    nn::GruCell::Step<T> s1, s2;
    std::vector<T> logit(2);
    for (const auto& x : fused) {
      check_fused(x.size());
      gru1_.forward<T>(params, x, state.h1, s1);
      gru2_.forward<T>(params, s1.h, state.h2, s2);
      state.h1 = s1.h;
      state.h2 = s2.h;
      gru_out_.forward<T>(params, s2.h, logit);
      out.push_back(to_probs(logit));
    }
    return out;
  }

  ProbPair predict_aux(int t, std::span<const T> params, std::span<const T> emb) const {
    std::vector<T> hid(spec_.aux_hidden), logit(2);
    aux_fc1_[t].forward<T>(params, emb, hid);
    for (auto& v : hid) v = nn::relu(v);
    aux_fc2_[t].forward<T>(params, hid, logit);
    return to_probs(logit);
  }

  // --------------------------------------------------------------- windows

  struct Workspace {
    std::vector<std::vector<TowerCache<T>>> caches;  // [tower][frame]
    std::vector<T> g1, g2;
  };

  /// Streams every frame through towers and head, carrying GRU state.
  /// Used for scoring: no gradient bookkeeping beyond one frame.
  std::vector<Prediction> score_sequence(std::span<const T> params, std::span<const FrameInput> frames,
                                         GruState<T>* state = nullptr) const {
    std::vector<Prediction> out;
    out.reserve(frames.size());
    GruState<T> local = zero_state();
    GruState<T>& st = state ? *state : local;
    TowerCache<T> cache;
    for (const auto& f : frames) {
      std::vector<T> fused;
      Prediction pred;
      for (int t = 0; t < static_cast<int>(towers_.size()); ++t) {
        tower_forward(t, params, tower_input(t, f), cache);
        fused.insert(fused.end(), cache.emb.begin(), cache.emb.end());
        if (two_tower()) assign_aux(pred, t, predict_aux(t, params, cache.emb));
      }
      if (spec_.head == HeadType::Static) {
        pred.fused = predict_static(params, fused);
      } else {
        pred.fused = predict_recurrent(params, {fused}, st).front();
      }
      out.push_back(pred);
    }
    return out;
  }

  /// Loss of one window (GRU state starts at zero) and, when `grads` is
  /// nonempty, accumulation of its gradient. Frames after the last unmasked
  /// one are not evaluated: they cannot influence any unmasked output.
  LossTerms window_loss(std::span<const T> params, std::span<const FrameInput> frames,
                        std::span<const double> targets, std::span<const double> mask, std::span<T> grads,
                        Workspace& ws, std::vector<Prediction>* preds_out = nullptr) const {
    if (targets.size() != frames.size() || mask.size() != frames.size())
      throw ValidationError("frames, targets and mask must have equal length");
    if (!grads.empty() && grads.size() != params.size()) throw ValidationError("gradient buffer size mismatch");
    std::size_t n = 0;
    for (std::size_t j = 0; j < mask.size(); ++j)
      if (mask[j] != 0) n = j + 1;
    const bool want_grad = !grads.empty();
    const int nt = static_cast<int>(towers_.size());

    if (ws.caches.size() < static_cast<std::size_t>(nt)) ws.caches.resize(nt);
    for (auto& per : ws.caches)
      if (per.size() < n) per.resize(n);
    std::vector<std::vector<T>> fused(n);
    for (std::size_t j = 0; j < n; ++j) {
      for (int t = 0; t < nt; ++t) {
        tower_forward(t, params, tower_input(t, frames[j]), ws.caches[t][j]);
        fused[j].insert(fused[j].end(), ws.caches[t][j].emb.begin(), ws.caches[t][j].emb.end());
      }
    }

    LossTerms loss;
    std::vector<Prediction> preds(n);
    std::vector<std::vector<T>> dfused(n, std::vector<T>(fused_dim_, T(0)));
    std::vector<std::vector<T>> demb(static_cast<std::size_t>(nt) * n);

    // Auxiliary heads.
    if (two_tower()) {
      for (int t = 0; t < nt; ++t) {
        const double w = aux_weight(t);
        for (std::size_t j = 0; j < n; ++j) {
          const auto& emb = ws.caches[t][j].emb;
          std::vector<T> pre(spec_.aux_hidden), hid(spec_.aux_hidden), logit(2);
          aux_fc1_[t].forward<T>(params, emb, pre);
          for (int i = 0; i < spec_.aux_hidden; ++i) hid[i] = nn::relu(pre[i]);
          aux_fc2_[t].forward<T>(params, hid, logit);
          const ProbPair pp = to_probs(logit);
          assign_aux(preds[j], t, pp);
          const double ce = mask[j] != 0 ? mask[j] * ce_from_logits(logit, targets[j]) : 0.0;
          if (towers_[t].kind == TowerKind::Audio) loss.audio_aux += ce;
          else loss.visual_aux += ce;
          auto& de = demb[t * n + j];
          de.assign(emb.size(), T(0));
          if (want_grad && mask[j] != 0) {
            const auto g = ce_logit_grad(logit, targets[j]);
            std::vector<T> dlogit{T(w * mask[j] * g[0]), T(w * mask[j] * g[1])}, dhid(spec_.aux_hidden);
            aux_fc2_[t].backward<T>(params, hid, dlogit, dhid, grads);
            for (int i = 0; i < spec_.aux_hidden; ++i)
              if (!(hid[i] > T(0))) dhid[i] = T(0);
            aux_fc1_[t].backward<T>(params, emb, dhid, de, grads);
          }
        }
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) demb[j].assign(towers_[0].fc.out, T(0));
    }

    // Fused head.
    if (spec_.head == HeadType::Static) {
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<T> hid(spec_.fusion_hidden), logit(2);
        static_fc1_.forward<T>(params, fused[j], hid);
        for (auto& v : hid) v = nn::relu(v);
        static_fc2_.forward<T>(params, hid, logit);
        preds[j].fused = to_probs(logit);
        if (mask[j] != 0) loss.fused += mask[j] * ce_from_logits(logit, targets[j]);
        if (want_grad && mask[j] != 0) {
          const auto g = ce_logit_grad(logit, targets[j]);
          std::vector<T> dlogit{T(mask[j] * g[0]), T(mask[j] * g[1])}, dhid(spec_.fusion_hidden);
          static_fc2_.backward<T>(params, hid, dlogit, dhid, grads);
          for (int i = 0; i < spec_.fusion_hidden; ++i)
            if (!(hid[i] > T(0))) dhid[i] = T(0);
          static_fc1_.backward<T>(params, fused[j], dhid, dfused[j], grads);
        }
      }
    } else if (n > 0) {
      const int u = spec_.gru_units;
      std::vector<typename nn::GruCell::template Step<T>> s1(n), s2(n);
      std::vector<std::vector<T>> logits(n, std::vector<T>(2));
      std::vector<T> h1(u, T(0)), h2(u, T(0));
      for (std::size_t j = 0; j < n; ++j) {
        gru1_.forward<T>(params, fused[j], h1, s1[j]);
        gru2_.forward<T>(params, s1[j].h, h2, s2[j]);
        h1 = s1[j].h;
        h2 = s2[j].h;
        gru_out_.forward<T>(params, s2[j].h, logits[j]);
        preds[j].fused = to_probs(logits[j]);
        if (mask[j] != 0) loss.fused += mask[j] * ce_from_logits(logits[j], targets[j]);
      }
      if (want_grad) {
        std::vector<T> dh1(u, T(0)), dh2(u, T(0)), tmp(u), dx2(u), dprev(u);
        for (std::size_t j = n; j-- > 0;) {
          if (mask[j] != 0) {
            const auto g = ce_logit_grad(logits[j], targets[j]);
            std::vector<T> dlogit{T(mask[j] * g[0]), T(mask[j] * g[1])};
            gru_out_.backward<T>(params, s2[j].h, dlogit, tmp, grads);
            for (int i = 0; i < u; ++i) dh2[i] += tmp[i];
          }
          gru2_.backward<T>(params, s2[j], dh2, dx2, dprev, grads);
          dh2 = dprev;
          for (int i = 0; i < u; ++i) dh1[i] += dx2[i];
          gru1_.backward<T>(params, s1[j], dh1, dfused[j], dprev, grads);
          dh1 = dprev;
        }
      }
    }

    if (want_grad) {
      std::size_t off = 0;
      for (int t = 0; t < nt; ++t) {
        const int d = towers_[t].fc.out;
        for (std::size_t j = 0; j < n; ++j) {
          auto& de = demb[t * n + j];
          for (int i = 0; i < d; ++i) de[i] += dfused[j][off + i];
          tower_backward(t, params, ws.caches[t][j], de, grads, ws.g1, ws.g2);
        }
        off += d;
      }
    }

    double sq = 0;
    for (const T& w : params) sq += static_cast<double>(w) * static_cast<double>(w);
    loss.l2 = spec_.l2_weight * sq;
    if (want_grad && spec_.l2_weight != 0)
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] += T(2.0 * spec_.l2_weight) * params[i];
    loss.total = loss.fused + loss.l2 + spec_.aux_weight_audio * loss.audio_aux +
                 spec_.aux_weight_visual * loss.visual_aux;
    if (preds_out) *preds_out = std::move(preds);
    return loss;
  }

 private:
  static ProbPair to_probs(const std::vector<T>& logit) {
    auto [a, b] = nn::softmax2<double>(static_cast<double>(logit[0]), static_cast<double>(logit[1]));
    return {a, b};
  }

  /// Cross entropy from logits (index 0 = speaking). Equal to the clamped
  /// probability form whenever p lies inside the clamp range.
  static double ce_from_logits(const std::vector<T>& logit, double y) {
    const double z0 = static_cast<double>(logit[0]), z1 = static_cast<double>(logit[1]);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    const double log_p = std::max(z0 - lse, std::log(kProbabilityClamp));
    const double log_q = std::max(z1 - lse, std::log(kProbabilityClamp));
    return -(y * log_p + (1.0 - y) * log_q);
  }

  /// Gradient of ce_from_logits w.r.t. both logits. A clamped log term is
  /// constant and contributes nothing.
  static std::array<double, 2> ce_logit_grad(const std::vector<T>& logit, double y) {
    const double z0 = static_cast<double>(logit[0]), z1 = static_cast<double>(logit[1]);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    const double p = std::exp(z0 - lse), q = std::exp(z1 - lse);
    const double floor = std::log(kProbabilityClamp);
    const double wp = z0 - lse > floor ? y : 0.0, wq = z1 - lse > floor ? 1.0 - y : 0.0;
    return {-(wp * (1 - p) - wq * p), -(-wp * q + wq * (1 - q))};
  }

  double aux_weight(int t) const {
    return towers_[t].kind == TowerKind::Audio ? spec_.aux_weight_audio : spec_.aux_weight_visual;
  }

  void assign_aux(Prediction& p, int t, ProbPair pp) const {
    if (towers_[t].kind == TowerKind::Audio) p.audio_aux = pp;
    else if (t == 0) p.visual_aux = pp;
    else p.visual2_aux = pp;
  }

  void check_fused(std::size_t n) const {
    if (n != static_cast<std::size_t>(fused_dim_))
      throw ValidationError("fused input has dimension " + std::to_string(n) + ", expected " +
                            std::to_string(fused_dim_));
  }

  static bool relu_fed(const std::string& name) {
    // Everything inside the towers and the first layer of each MLP head feeds a ReLU.
    return name.find("/fc/") == std::string::npos && name.find("fc2") == std::string::npos &&
           name.find("gru") == std::string::npos;
  }

  Tower make_tower(TowerKind kind, const std::string& prefix, nn::Shape3 in) {
    Tower tw;
    tw.kind = kind;
    tw.prefix = prefix;
    tw.input = in;
    const auto& d = spec_.tower;
    tw.stem.in = in;
    tw.stem.stride = 2;
    tw.stem.out = {nn::same_out(in.h, 2), nn::same_out(in.w, 2), d.stem_channels};
    tw.stem.kernel = layout_.add(prefix + "/stem/kernel", {3, 3, in.c, d.stem_channels}, 9 * in.c, false);
    tw.stem.bias = layout_.add(prefix + "/stem/bias", {d.stem_channels}, 1, true);
    nn::Shape3 cur = tw.stem.out;
    for (std::size_t b = 0; b < d.block_strides.size(); ++b) {
      const int s = d.block_strides[b];
      const std::string bp = prefix + "/block" + std::to_string(b + 1);
      nn::Depthwise3x3 dw;
      dw.in = cur;
      dw.stride = s;
      dw.out = {nn::same_out(cur.h, s), nn::same_out(cur.w, s), cur.c};
      dw.kernel = layout_.add(bp + "/dw/kernel", {3, 3, cur.c}, 9, false);
      dw.bias = layout_.add(bp + "/dw/bias", {cur.c}, 1, true);
      nn::Pointwise pw;
      pw.in = dw.out;
      pw.out = {dw.out.h, dw.out.w, d.block_channels};
      pw.kernel = layout_.add(bp + "/pw/kernel", {cur.c, d.block_channels}, cur.c, false);
      pw.bias = layout_.add(bp + "/pw/bias", {d.block_channels}, 1, true);
      cur = pw.out;
      tw.dw.push_back(dw);
      tw.pw.push_back(pw);
    }
    tw.fc.in = cur.c;
    tw.fc.out = d.embedding_dim;
    tw.fc.kernel = layout_.add(prefix + "/fc/kernel", {cur.c, d.embedding_dim}, cur.c, false);
    tw.fc.bias = layout_.add(prefix + "/fc/bias", {d.embedding_dim}, 1, true);
    return tw;
  }

  nn::Dense make_dense(const std::string& name, int in, int out) {
    nn::Dense d;
    d.in = in;
    d.out = out;
    d.kernel = layout_.add(name + "/kernel", {in, out}, in, false);
    d.bias = layout_.add(name + "/bias", {out}, 1, true);
    return d;
  }

  nn::GruCell make_gru(const std::string& name, int in, int units) {
    nn::GruCell g;
    g.in = in;
    g.units = units;
    g.kernel = layout_.add(name + "/kernel", {in, 3 * units}, in, false);
    g.recurrent = layout_.add(name + "/recurrent", {units, 3 * units}, units, false);
    g.bias = layout_.add(name + "/bias", {3 * units}, 1, true);
    return g;
  }

  void build() {
    const nn::Shape3 vis{spec_.visual_size, spec_.visual_size, spec_.stack_depth};
    const nn::Shape3 aud{spec_.mel_bins, spec_.mel_frames, 1};
    switch (spec_.modalities) {
      case Modalities::V: towers_.push_back(make_tower(TowerKind::Visual, "visual", vis)); break;
      case Modalities::A: towers_.push_back(make_tower(TowerKind::Audio, "audio", aud)); break;
      case Modalities::AV:
        towers_.push_back(make_tower(TowerKind::Visual, "visual", vis));
        towers_.push_back(make_tower(TowerKind::Audio, "audio", aud));
        break;
      case Modalities::VV:
        towers_.push_back(make_tower(TowerKind::Visual, "visual", vis));
        towers_.push_back(make_tower(TowerKind::Visual, "visual2", vis));
        break;
    }
    fused_dim_ = 0;
    for (const auto& t : towers_) fused_dim_ += t.fc.out;
    if (spec_.head == HeadType::Static) {
      static_fc1_ = make_dense("head/fc1", fused_dim_, spec_.fusion_hidden);
      static_fc2_ = make_dense("head/fc2", spec_.fusion_hidden, 2);
    } else {
      gru1_ = make_gru("head/gru1", fused_dim_, spec_.gru_units);
      gru2_ = make_gru("head/gru2", spec_.gru_units, spec_.gru_units);
      gru_out_ = make_dense("head/out_fc2", spec_.gru_units, 2);
    }
    if (two_tower()) {
      for (const auto& t : towers_) {
        aux_fc1_.push_back(make_dense("aux_" + t.prefix + "/fc1", t.fc.out, spec_.aux_hidden));
        aux_fc2_.push_back(make_dense("aux_" + t.prefix + "/fc2", spec_.aux_hidden, 2));
      }
    }
  }

  ModelSpec spec_;
  nn::ParamLayout layout_;
  std::vector<Tower> towers_;
  int fused_dim_ = 0;
  nn::Dense static_fc1_, static_fc2_, gru_out_;
  nn::GruCell gru1_, gru2_;
  std::vector<nn::Dense> aux_fc1_, aux_fc2_;
};

}  // namespace asd
