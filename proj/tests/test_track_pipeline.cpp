// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "asd/track_pipeline.hpp"

using namespace asd;

namespace {

BoundingBox box_at(double t) { return {0.1 + 0.2 * t, 0.2, 0.3 + 0.2 * t, 0.5 + 0.1 * t}; }

RawDetectionTrack raw(const std::vector<int>& frame_indices, double t0 = 0.0) {
  RawDetectionTrack r{"trk", "vid", {}};
  for (int i : frame_indices) {
    const double t = t0 + 0.05 * i;
    r.detections.push_back({t, box_at(t)});
  }
  return r;
}

std::vector<int> range(int b, int e) {
  std::vector<int> v;
  for (int i = b; i < e; ++i) v.push_back(i);
  return v;
}

// Independent Nadaraya-Watson estimate over every detection in +-3 sigma.
double nw(const RawDetectionTrack& r, double t, double sigma, double BoundingBox::*corner) {
  double num = 0, den = 0;
  for (const auto& d : r.detections) {
    const double dt = t - d.timestamp;
    if (std::fabs(dt) > 3 * sigma) continue;
    const double w = std::exp(-dt * dt / (2 * sigma * sigma));
    num += w * (d.box.*corner);
    den += w;
  }
  return num / den;
}

}  // namespace

TEST(GapFill, ShortGapFilledWithKernelAverage) {
  const auto r = raw({0, 1, 4});  // missing 0.10 and 0.15
  const auto out = fill_track_gaps(r);
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].frames.size(), 5u);
  EXPECT_EQ(out[0].track_id, "trk");
  for (int k : {2, 3}) {
    const auto& f = out[0].frames[static_cast<std::size_t>(k)];
    EXPECT_FALSE(f.detected);
    EXPECT_NEAR(f.timestamp, 0.05 * k, 1e-12);
    EXPECT_NEAR(f.box.x1, nw(r, f.timestamp, 0.1, &BoundingBox::x1), 1e-12);
    EXPECT_NEAR(f.box.y1, nw(r, f.timestamp, 0.1, &BoundingBox::y1), 1e-12);
    EXPECT_NEAR(f.box.x2, nw(r, f.timestamp, 0.1, &BoundingBox::x2), 1e-12);
    EXPECT_NEAR(f.box.y2, nw(r, f.timestamp, 0.1, &BoundingBox::y2), 1e-12);
  }
  EXPECT_TRUE(out[0].frames[4].detected);
}

TEST(GapFill, LongGapSplitsTrack) {
  const auto out = fill_track_gaps(raw({0, 1, 2, 8, 9}));  // 5 missing frames = 0.25 s
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].frames.size(), 3u);
  EXPECT_EQ(out[1].frames.size(), 2u);
  EXPECT_NE(out[0].track_id, out[1].track_id);
}

TEST(GapFill, GapAtThresholdSplits) {
  EXPECT_EQ(fill_track_gaps(raw({0, 5})).size(), 2u);  // 4 missing = 0.20 s
  EXPECT_EQ(fill_track_gaps(raw({0, 4})).size(), 1u);  // 3 missing = 0.15 s
}

TEST(GapFill, GaplessTrackUnchanged) {
  const auto r = raw(range(0, 30), 3.0);
  const auto out = fill_track_gaps(r);
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].frames.size(), r.detections.size());
  for (std::size_t i = 0; i < r.detections.size(); ++i) {
    EXPECT_EQ(out[0].frames[i].timestamp, r.detections[i].timestamp);
    EXPECT_EQ(out[0].frames[i].box, r.detections[i].box);
    EXPECT_TRUE(out[0].frames[i].detected);
  }
}

TEST(GapFill, Errors) {
  EXPECT_THROW(fill_track_gaps(RawDetectionTrack{"t", "v", {}}), ValidationError);
  GapFillConfig bad;
  bad.kernel_sigma = 0;
  EXPECT_THROW(fill_track_gaps(raw({0, 1}), bad), ValidationError);
  auto r = raw({0, 1});
  r.detections[1].timestamp = 0.0;
  EXPECT_THROW(fill_track_gaps(r), ValidationError);
}

TEST(GapFill, FilledCornersInsideNeighbourHull) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 0.4);
  for (int rep = 0; rep < 200; ++rep) {
    RawDetectionTrack r{"t", "v", {}};
    int idx = 0;
    for (int k = 0; k < 20; ++k) {
      const double a = u(rng), b = u(rng);
      r.detections.push_back({0.05 * idx, {a, b, a + 0.3 + u(rng), b + 0.3 + u(rng)}});
      idx += 1 + static_cast<int>(rng() % 4);
    }
    for (const auto& t : fill_track_gaps(r)) {
      for (const auto& f : t.frames) {
        if (f.detected) continue;
        double lo = 1, hi = 0;
        for (const auto& d : r.detections)
          if (std::fabs(d.timestamp - f.timestamp) <= 0.3 + 1e-9) {
            lo = std::min(lo, d.box.x1);
            hi = std::max(hi, d.box.x1);
          }
        EXPECT_GE(f.box.x1, lo - 1e-12);
        EXPECT_LE(f.box.x1, hi + 1e-12);
      }
    }
  }
}

TEST(LengthBounds, DropsKeepsAndSplits) {
  std::vector<FaceTrack> in(3);
  const std::size_t sizes[3] = {16, 200, 460};  // 0.8 s, 10 s, 23 s
  for (int k = 0; k < 3; ++k) {
    in[k].track_id = "t" + std::to_string(k);
    in[k].video_id = "v";
    for (std::size_t i = 0; i < sizes[k]; ++i) in[k].frames.push_back({0.05 * static_cast<double>(i), box_at(0), true});
  }
  const auto out = enforce_length_bounds(in);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].track_id, "t1");
  EXPECT_NEAR(out[0].duration(), 10.0, 1e-9);
  EXPECT_NEAR(out[1].duration(), 10.0, 1e-9);
  EXPECT_NEAR(out[2].duration(), 10.0, 1e-9);
  EXPECT_NEAR(out[3].duration(), 3.0, 1e-9);
}

TEST(LengthBounds, ExhaustiveChunking) {
  for (std::size_t n = 1; n <= 600; ++n) {
    const auto chunks = length_chunks(n, 20, 200);
    if (n < 20) {
      EXPECT_TRUE(chunks.empty());
      continue;
    }
    ASSERT_FALSE(chunks.empty()) << n;
    EXPECT_EQ(chunks.front().first, 0u);
    EXPECT_EQ(chunks.back().second, n);
    EXPECT_EQ(chunks.size(), (n + 199) / 200) << n;
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const auto len = chunks[c].second - chunks[c].first;
      EXPECT_GE(len, 20u) << n;
      EXPECT_LE(len, 200u) << n;
      if (c) {
        EXPECT_EQ(chunks[c].first, chunks[c - 1].second);
      }
    }
  }
}

TEST(LengthBounds, RejectsIncompatibleBounds) {
  std::vector<FaceTrack> none;
  EXPECT_THROW(enforce_length_bounds(none, {1.0, 1.5}), ValidationError);
}

TEST(Pipeline, RoundTripThroughLabelCsv) {
  const std::string csv =
      "v,0.000000,0.1,0.1,0.3,0.3,SPEAKING_AUDIBLE,a\n"
      "v,0.050000,0.1,0.1,0.3,0.3,SPEAKING_AUDIBLE,a\n";
  const auto raws = raw_tracks_from_labels(parse_label_csv(csv));
  ASSERT_EQ(raws.size(), 1u);
  EXPECT_EQ(raws[0].detections.size(), 2u);
  GapFillConfig cfg;
  const auto tracks = run_track_pipeline(raws, cfg, {0.1, 10});
  const auto frames = tracks_to_frames(tracks);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0].label, SpeakLabel::NotSpeaking);
  EXPECT_NO_THROW(parse_label_csv(serialize_labels(frames)));
}
