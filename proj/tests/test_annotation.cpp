// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "annotation_fixture.hpp"
#include "asd/annotation.hpp"
#include "support.hpp"

using namespace asd;
using asd::testing::make_tasks;
using asd::testing::timeline_for;
using asd::testing::uniform_timeline;

namespace {

constexpr auto NS = SpeakLabel::NotSpeaking;
constexpr auto SA = SpeakLabel::SpeakingAudible;
constexpr auto SN = SpeakLabel::SpeakingNotAudible;

struct StoreFixture : ::testing::Test {
  asd::testing::TempDir dir;
  std::vector<AnnotationTask> tasks = make_tasks(3);
  void SetUp() override { AnnotationStore::create(dir.path(), tasks); }
  Submission sub(int task, const std::string& rater, int version, SpeakLabel l = NS) const {
    return {tasks[task].task_id, rater, version, uniform_timeline(tasks[task], l)};
  }
};

}  // namespace

TEST_F(StoreFixture, StartsUnrated) {
  AnnotationStore s(dir.path());
  EXPECT_EQ(s.size(), 3u);
  const auto all = s.list_tasks();
  ASSERT_EQ(all.size(), 3u);
  for (const auto& t : all) EXPECT_EQ(t.status, TaskStatus::Unrated);
  EXPECT_EQ(s.list_tasks(TaskStatus::Complete).size(), 0u);
  EXPECT_DOUBLE_EQ(all[1].start, 1.0);
  EXPECT_DOUBLE_EQ(all[1].end, 2.0);
  EXPECT_EQ(s.task("task2").track.frames.size(), 20u);
  EXPECT_THROW(s.task("nope"), NotFoundError);
  EXPECT_THROW(AnnotationStore::create(dir.path(), tasks), ConflictError);
}

TEST(AnnotationStoreSetup, Errors) {
  asd::testing::TempDir dir;
  EXPECT_THROW(AnnotationStore{dir.path() / "missing"}, NotFoundError);
  auto tasks = make_tasks(2);
  tasks[1].task_id = tasks[0].task_id;
  EXPECT_THROW(AnnotationStore::create(dir / "a", tasks), ValidationError);
  tasks = make_tasks(1);
  tasks[0].track.frames.clear();
  EXPECT_THROW(AnnotationStore::create(dir / "b", tasks), ValidationError);
}

TEST_F(StoreFixture, OptimisticVersions) {
  AnnotationStore s(dir.path());
  EXPECT_EQ(s.put_segments(sub(0, "ann", 1)), 1);
  EXPECT_EQ(s.summary("task0").status, TaskStatus::Complete);
  try {
    s.put_segments(sub(0, "ann", 1, SA));
    FAIL();
  } catch (const ConflictError& e) {
    EXPECT_EQ(e.current_version(), 1);
  }
  EXPECT_THROW(s.put_segments(sub(0, "ann", 3)), ConflictError);
  EXPECT_THROW(s.put_segments(sub(0, "ann", 0)), ConflictError);
  EXPECT_EQ(s.put_segments(sub(0, "ann", 2, SA)), 2);
  EXPECT_EQ(s.put_segments(sub(0, "bob", 1)), 1);
  EXPECT_EQ(s.current_version("task0", "ann"), 2);
  EXPECT_EQ(s.current_version("task0", "zed"), 0);
  EXPECT_EQ(s.history("task0", "ann").size(), 2u);
  EXPECT_EQ(s.latest("task0").at("ann").segments[0].label, SA);
  EXPECT_EQ(s.summary("task0").rater_versions, (std::map<std::string, int>{{"ann", 2}, {"bob", 1}}));
  EXPECT_EQ(s.list_tasks(TaskStatus::Unrated).size(), 2u);
}

TEST_F(StoreFixture, CoverageIsEnforced) {
  AnnotationStore s(dir.path());
  const auto& t = tasks[0];
  auto put = [&](std::vector<LabelSegment> segs) { return s.put_segments({"task0", "ann", 1, std::move(segs)}); };
  EXPECT_THROW(put({}), ValidationError);
  EXPECT_THROW(put({{t.start(), t.end() - 0.1, NS}}), ValidationError);
  EXPECT_THROW(put({{t.start() + 0.1, t.end(), NS}}), ValidationError);
  EXPECT_THROW(put({{t.start(), 0.5, NS}, {0.4, t.end(), SA}}), ValidationError);
  EXPECT_THROW(put({{t.start(), 0.5, NS}, {0.55, t.end(), SA}}), ValidationError);
  EXPECT_THROW(put({{t.start() - 0.5, t.end(), NS}}), ValidationError);
  EXPECT_THROW(put({{t.start(), t.end() + 0.5, NS}}), ValidationError);
  EXPECT_THROW(put({{0.5, 0.5, NS}, {t.start(), t.end(), NS}}), ValidationError);
  EXPECT_THROW(s.put_segments({"task0", "", 1, uniform_timeline(t, NS)}), ValidationError);
  EXPECT_THROW(s.put_segments({"task0", "a,b", 1, uniform_timeline(t, NS)}), ValidationError);
  EXPECT_THROW(s.put_segments({"nope", "ann", 1, uniform_timeline(t, NS)}), NotFoundError);
  EXPECT_EQ(s.current_version("task0", "ann"), 0);
  // Out-of-order segments are accepted and stored sorted.
  EXPECT_EQ(put({{0.5, t.end(), SA}, {t.start(), 0.5, NS}}), 1);
  EXPECT_EQ(s.latest("task0").at("ann").segments[0].label, NS);
}

TEST_F(StoreFixture, RestartRecoversEveryAcknowledgedWrite) {
  {
    AnnotationStore s(dir.path(), 0);
    s.put_segments(sub(0, "ann", 1));
    s.put_segments(sub(0, "ann", 2, SA));
    s.put_segments(sub(1, "bob", 1, SN));
  }
  {
    AnnotationStore s(dir.path(), 0);
    EXPECT_EQ(s.current_version("task0", "ann"), 2);
    EXPECT_EQ(s.history("task0", "ann").size(), 2u);
    EXPECT_EQ(s.latest("task1").at("bob").segments[0].label, SN);
    EXPECT_THROW(s.put_segments(sub(0, "ann", 2)), ConflictError);
    s.put_segments(sub(0, "ann", 3));
  }
  AnnotationStore s(dir.path());
  EXPECT_EQ(s.current_version("task0", "ann"), 3);
}

TEST_F(StoreFixture, SnapshotsFoldTheJournal) {
  {
    AnnotationStore s(dir.path(), 2);
    for (int v = 1; v <= 5; ++v) s.put_segments(sub(v % 3, "r" + std::to_string(v), 1));
    s.put_segments(sub(0, "x", 1));
    s.put_segments(sub(0, "x", 2, SA));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "snapshot.json"));
  AnnotationStore s(dir.path(), 2);
  for (int v = 1; v <= 5; ++v) EXPECT_EQ(s.current_version(tasks[v % 3].task_id, "r" + std::to_string(v)), 1);
  EXPECT_EQ(s.current_version("task0", "x"), 2);
  s.snapshot();
  EXPECT_EQ(std::filesystem::file_size(dir / "journal.log"), 0u);
  AnnotationStore again(dir.path());
  EXPECT_EQ(again.current_version("task0", "x"), 2);
}

TEST_F(StoreFixture, TornJournalTailIsDropped) {
  {
    AnnotationStore s(dir.path(), 0);
    s.put_segments(sub(0, "ann", 1));
    s.put_segments(sub(1, "ann", 1));
  }
  const auto size = std::filesystem::file_size(dir / "journal.log");
  {
    std::ofstream j(dir / "journal.log", std::ios::app);
    j << R"({"seq":3,"task_id":"task2","rater_id":"ann","vers)";
  }
  {
    AnnotationStore s(dir.path(), 0);
    EXPECT_EQ(s.current_version("task0", "ann"), 1);
    EXPECT_EQ(s.current_version("task1", "ann"), 1);
    EXPECT_EQ(s.current_version("task2", "ann"), 0);
    EXPECT_EQ(std::filesystem::file_size(dir / "journal.log"), size);
    s.put_segments(sub(2, "ann", 1));
  }
  AnnotationStore s(dir.path());
  EXPECT_EQ(s.current_version("task2", "ann"), 1);
}

TEST_F(StoreFixture, ExportTakesMajorityAndTiesGoToNotSpeaking) {
  AnnotationStore s(dir.path());
  const auto& t = tasks[0];
  std::vector<SpeakLabel> a(20, SA), b(20, SA), c(20, NS);
  for (int j = 10; j < 20; ++j) {
    a[j] = SN;  // three distinct labels: tie
    b[j] = SA;
    c[j] = NS;
  }
  s.put_segments({"task0", "a", 1, timeline_for(t, a)});
  s.put_segments({"task0", "b", 1, timeline_for(t, b)});
  s.put_segments({"task0", "c", 1, timeline_for(t, c)});
  const std::vector<std::string> ids{"task0"};
  const auto frames = s.export_frames(ids);
  ASSERT_EQ(frames.size(), 20u);
  for (int j = 0; j < 20; ++j) {
    EXPECT_EQ(frames[j].label, j < 10 ? SA : NS) << j;
    EXPECT_EQ(frames[j].timestamp, t.track.frames[j].timestamp);
    EXPECT_EQ(frames[j].track_id, "task0");
  }
  const auto parsed = parse_label_csv(s.export_csv(ids));
  ASSERT_EQ(parsed.size(), 1u);
  EXPECT_EQ(parsed[0].frames.size(), 20u);

  // Two raters disagreeing everywhere: every frame ties.
  s.put_segments({"task1", "a", 1, uniform_timeline(tasks[1], SA)});
  s.put_segments({"task1", "b", 1, uniform_timeline(tasks[1], SN)});
  for (const auto& f : s.export_frames(std::vector<std::string>{"task1"})) EXPECT_EQ(f.label, NS);

  EXPECT_THROW(s.export_frames({}), ValidationError);
  EXPECT_THROW(s.export_frames(std::vector<std::string>{"task9"}), NotFoundError);
}

TEST_F(StoreFixture, ExportUsesLatestVersion) {
  AnnotationStore s(dir.path());
  s.put_segments(sub(0, "a", 1, SA));
  s.put_segments(sub(0, "a", 2, NS));
  for (const auto& f : s.export_frames(std::vector<std::string>{"task0"})) EXPECT_EQ(f.label, NS);
}

TEST_F(StoreFixture, Agreement) {
  AnnotationStore s(dir.path());
  const std::vector<std::string> ids{"task0", "task1"};
  EXPECT_THROW(s.agreement(ids), ValidationError);
  std::vector<SpeakLabel> lab(20, NS);
  for (int j = 5; j < 12; ++j) lab[j] = SA;
  for (int i : {0, 1})
    for (const char* r : {"a", "b"}) s.put_segments({tasks[i].task_id, r, 1, timeline_for(tasks[i], lab)});
  const auto ag = s.agreement(ids);
  EXPECT_DOUBLE_EQ(ag.kappa, 1.0);
  EXPECT_EQ(ag.items, 40u);
  EXPECT_EQ(ag.raters, 2);
  s.put_segments({"task1", "c", 1, timeline_for(tasks[1], lab)});
  EXPECT_THROW(s.agreement(ids), ValidationError);
}

TEST_F(StoreFixture, ConcurrentWritersGetOneAcceptPerVersion) {
  AnnotationStore s(dir.path(), 7);
  constexpr int kThreads = 8, kVersions = 6;
  std::atomic<int> accepted{0}, conflicts{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < kThreads; ++t)
    pool.emplace_back([&, t] {
      for (int v = 1; v <= kVersions; ++v) {
        for (;;) {
          try {
            s.put_segments(sub(0, "shared", v, t % 2 ? SA : NS));
            ++accepted;
            break;
          } catch (const ConflictError& e) {
            ++conflicts;
            if (e.current_version() >= v) break;
          }
        }
        // Readers never see a torn state.
        const auto l = s.latest("task0");
        if (l.count("shared")) {
          EXPECT_FALSE(l.at("shared").segments.empty());
        }
      }
    });
  for (auto& th : pool) th.join();
  EXPECT_EQ(accepted.load(), kVersions);
  EXPECT_EQ(s.current_version("task0", "shared"), kVersions);
  const auto h = s.history("task0", "shared");
  for (int v = 0; v < kVersions; ++v) EXPECT_EQ(h[v].version, v + 1);
}

TEST(Envelope, WindowedRms) {
  Waveform w;
  w.sample_rate = 1000;
  for (int i = 0; i < 1000; ++i) w.samples.push_back(i % 2 ? 0.5f : -0.5f);
  const auto e = rms_envelope(w, 0.5, 1.25);
  ASSERT_EQ(e.size(), 75u);
  for (std::size_t k = 0; k < 50; ++k) EXPECT_NEAR(e[k], 0.5f, 1e-6);
  for (std::size_t k = 50; k < 75; ++k) EXPECT_EQ(e[k], 0.f);
  EXPECT_EQ(rms_envelope(w, -0.1, 0.0).size(), 10u);
}

TEST(Envelope, TasksFromTracks) {
  auto tasks = make_tasks(2);
  std::vector<FaceTrack> tracks{tasks[0].track, tasks[1].track};
  const auto out = tasks_from_tracks(tracks);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].task_id, "task1");
  EXPECT_EQ(out[1].envelope.size(), 100u);
}
