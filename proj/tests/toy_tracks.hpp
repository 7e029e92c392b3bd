// SPDX-License-Identifier: Apache-2.0
//
// Tiny full-resolution tracks whose features carry the label directly, and
// narrow networks that train on them in well under a second per epoch.
#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "asd/features.hpp"
#include "asd/model.hpp"

namespace asd::testing {

inline ModelSpec small_spec(const std::string& variant) {
  ModelSpec base;
  base.tower.stem_channels = 3;
  base.tower.block_channels = 4;
  base.tower.embedding_dim = 4;
  base.fusion_hidden = 6;
  base.aux_hidden = 4;
  base.gru_units = 4;
  base.l2_weight = 1e-4;
  return ModelSpec::from_variant(variant, base);
}

/// Speaking in alternating blocks of `block` frames. Crops are brighter and
/// mel energy is higher while speaking.
inline std::shared_ptr<TrackFeatures> toy_track(const std::string& id, int n, std::uint64_t seed, int block = 10,
                                                bool with_visual = true, bool with_audio = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.f, 0.05f);
  auto t = std::make_shared<TrackFeatures>();
  t->track_id = id;
  t->video_id = id + "_vid";
  t->frame_rate = kDefaultFrameRate;
  for (int j = 0; j < n; ++j) {
    const bool speak = (j / block) % 2 == ((seed & 1) ? 1 : 0);
    const double ts = j / kDefaultFrameRate;
    t->timestamps.push_back(ts);
    t->boxes.push_back({0.2, 0.2, 0.6, 0.7});
    t->face_widths_px.push_back(100.0);
    t->labels.push_back(speak ? SpeakLabel::SpeakingAudible : SpeakLabel::NotSpeaking);
    if (with_visual) {
      GrayImage g(kFaceSize, kFaceSize, speak ? 0.7f : 0.3f);
      for (auto& v : g.data) v += noise(rng);
      t->crops.push_back(std::move(g));
    }
    if (with_audio) {
      MelFeature m;
      m.anchor_time = ts;
      for (auto& v : m.data) v = (speak ? 1.f : -1.f) + noise(rng);
      t->mels.push_back(std::move(m));
    }
  }
  return t;
}

inline std::vector<ExampleWindow> toy_windows(int tracks, int frames, std::uint64_t seed, bool with_visual = true,
                                              bool with_audio = true) {
  std::vector<ExampleWindow> out;
  for (int i = 0; i < tracks; ++i) {
    auto t = toy_track("trk" + std::to_string(i), frames, seed + static_cast<std::uint64_t>(i), 10, with_visual,
                       with_audio);
    for (auto& w : window_examples(t)) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace asd::testing
