// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails.
//
//   asd_acceptance [--only name,...] [--label-stats labels.csv] [--list]
//
// The real-data label check runs only with --label-stats (or ASD_LABEL_STATS_FILE).
#include <fcntl.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <netinet/in.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "asd/analytics.hpp"
#include "asd/corpus.hpp"
#include "asd/features.hpp"
#include "asd/metrics.hpp"
#include "asd/model.hpp"
#include "asd/track_pipeline.hpp"
#include "asd/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <CLI11.hpp>

// After Eigen: httplib pulls in resolv.h and its _res macro.
#include "annotation_fixture.hpp"

using namespace asd;
using namespace asd::testing;
using nlohmann::json;

namespace {

struct Outcome {
  enum Kind { Pass, Fail, Skip } kind = Fail;
  std::string detail;
};

Outcome fail(std::string d) { return {Outcome::Fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(d)}; }

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ end to end

std::vector<std::shared_ptr<const TrackFeatures>> synthetic_features(int per_kind, std::uint64_t seed) {
  CorpusOptions o;
  o.min_duration = 1.0;
  o.max_duration = 2.0;
  const auto plan = plan_corpus(per_kind, seed, o);
  std::vector<std::shared_ptr<const TrackFeatures>> out;
  for (const auto& e : plan.clips)
    out.push_back(std::make_shared<TrackFeatures>(featurize_clip(generate_clip(e.spec, e.video_id, true))));
  return out;
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_tracks = synthetic_features(100, 11);
  const auto test_tracks = synthetic_features(25, 977);
  std::vector<ExampleWindow> windows;
  for (const auto& t : train_tracks)
    for (auto& w : window_examples(t)) windows.push_back(std::move(w));
  std::fprintf(stderr, "  e2e: %zu train tracks, %zu test tracks, %zu windows, featurized in %.0f s\n",
               train_tracks.size(), test_tracks.size(), windows.size(), seconds_since(t0));

  std::map<std::string, double> auc;
  for (const std::string v : {"AV-GRU-f2", "V-GRU-f2"}) {
    TrainConfig cfg;
    cfg.spec = ModelSpec::from_variant(v);
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 5;
    cfg.validation_fraction = 0.0;
    cfg.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const auto r = train(windows, cfg, [&](const EpochRecord& e) {
      std::fprintf(stderr, "  e2e: %s epoch %d loss %.3f (%.0f s)\n", v.c_str(), e.epoch, e.total, e.seconds);
    });
    const auto a = validation_auroc(r.checkpoint, test_tracks);
    if (!a) return fail(v + " held-out auROC undefined");
    auc[v] = *a;
  }
  const double elapsed = seconds_since(t0);
  const double av = auc["AV-GRU-f2"], vis = auc["V-GRU-f2"];
  const bool ok = train_tracks.size() >= 400 && av >= 0.90 && av - vis >= 0.05 && elapsed <= 20 * 60;
  return verdict(ok, std::to_string(train_tracks.size()) + " tracks, AV auROC " + num(av) + ", V auROC " + num(vis) +
                         ", gap " + num(av - vis) + ", " + num(elapsed, 0) + " s (need AV>=0.90, gap>=0.05, <=1200 s)");
}

// -------------------------------------------------------------- gradients

Outcome gradients() {
  const std::vector<std::pair<Modalities, HeadType>> kinds = {
      {Modalities::A, HeadType::Static}, {Modalities::V, HeadType::Static}, {Modalities::AV, HeadType::Static},
      {Modalities::VV, HeadType::Static}, {Modalities::A, HeadType::Gru},   {Modalities::V, HeadType::Gru},
      {Modalities::AV, HeadType::Gru},    {Modalities::VV, HeadType::Gru}};
  double worst = 0;
  std::size_t max_params = 0;
  std::string where;
  int seeds = 0;
  for (int s = 0; s < 24; ++s) {
    const auto [m, h] = kinds[static_cast<std::size_t>(s) % kinds.size()];
    const auto spec = mini_spec(m, h);
    const auto r = gradient_check(spec, 1000 + static_cast<std::uint64_t>(s));
    max_params = std::max(max_params, r.parameters);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = spec.variant() + " " + r.worst;
    }
    ++seeds;
  }
  const bool ok = seeds >= 20 && max_params <= 5000 && worst <= 1e-3;
  return verdict(ok, std::to_string(seeds) + " seeds, <=" + std::to_string(max_params) +
                         " params, step 1e-4, max rel error " + sci(worst) + " at " + where + " (need <=1e-3)");
}

// ---------------------------------------------------------------- metrics

Outcome metrics() {
  std::mt19937_64 rng(2024);
  double auc_err = 0;
  for (int i = 0; i < 500; ++i) {
    const auto f = random_binary_fixture(rng, 500);
    auc_err = std::max(auc_err, std::fabs(roc_auc(f.scores, f.positive) - brute_auc(f.scores, f.positive)));
  }
  int map_mismatch = 0;
  for (int i = 0; i < 50; ++i) {
    const auto f = random_map_fixture(rng, 20);
    if (activitynet_map(f.truth, f.predictions) != brute_map(f)) ++map_mismatch;
  }
  int ba_mismatch = 0;
  for (int i = 0; i < 100; ++i) {
    const auto f = random_binary_fixture(rng, 200);
    if (balanced_accuracy(f.scores, f.positive) != hand_balanced_accuracy(f, 0.5)) ++ba_mismatch;
  }
  const bool ok = auc_err <= 1e-9 && map_mismatch == 0 && ba_mismatch == 0;
  return verdict(ok, "auROC max error " + sci(auc_err) + " over 500, mAP mismatches " + std::to_string(map_mismatch) +
                         "/50, balanced accuracy mismatches " + std::to_string(ba_mismatch) + "/100");
}

// ------------------------------------------------------------------ kappa

Outcome kappa() {
  const double perfect = fleiss_kappa(RatingMatrix{{{3, 0, 0}, {0, 3, 0}, {0, 0, 3}}});
  const double hand = fleiss_kappa(RatingMatrix{{{3, 0}, {2, 1}}});
  std::mt19937_64 rng(77);
  double perm_err = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int raters = 2 + static_cast<int>(rng() % 5), items = 2 + static_cast<int>(rng() % 30);
    RatingMatrix m;
    for (int i = 0; i < items; ++i) {
      std::vector<int> row(3, 0);
      for (int r = 0; r < raters; ++r) ++row[rng() % 3];
      m.counts.push_back(row);
    }
    // Item order and category order.
    RatingMatrix p = m;
    std::shuffle(p.counts.begin(), p.counts.end(), rng);
    std::vector<std::size_t> perm = {0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto& row : p.counts) {
      const auto orig = row;
      for (std::size_t j = 0; j < 3; ++j) row[perm[j]] = orig[j];
    }
    perm_err = std::max(perm_err, std::fabs(fleiss_kappa(m) - fleiss_kappa(p)));
  }
  const bool ok = perfect == 1.0 && std::fabs(hand + 0.2) <= 1e-12 && perm_err <= 1e-12;
  return verdict(ok, "perfect " + num(perfect, 12) + ", (3,0)/(2,1) " + num(hand, 12) +
                         ", permutation max diff " + sci(perm_err) + " over 100");
}

// ---------------------------------------------------------- featurization

Outcome featurization() {
  const bool window_ok = kMelContextSamples == 8000 && kSampleRate == 16000;
  const auto silence = mel_spectrogram(std::vector<float>(8000, 0.f));
  bool shape_ok = silence.data.size() == 64u * 48u && kMelBins == 64 && kMelFrames == 48;
  bool floor_ok = true;
  for (float v : silence.data) floor_ok = floor_ok && v == silence.data.front();

  // 66 points evenly spaced on the mel scale over 125-7500 Hz; the 64
  // interior ones are the filter centers.
  auto mel = [](double hz) { return 2595.0 * std::log10(1 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1); };
  int nearest = 0;
  double best = 1e9;
  for (int b = 0; b < 64; ++b) {
    const double c = hz(mel(125) + (mel(7500) - mel(125)) * (b + 1) / 65.0);
    if (std::fabs(c - 1000) < best) best = std::fabs(c - 1000), nearest = b;
  }
  std::vector<float> tone(8000);
  for (std::size_t i = 0; i < tone.size(); ++i)
    tone[i] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 16000.0));
  const auto m = mel_spectrogram(tone);
  int concentrated = 0;
  for (int t = 0; t < kMelFrames; ++t) {
    int arg = 0;
    for (int b = 1; b < kMelBins; ++b)
      if (m.at(b, t) > m.at(arg, t)) arg = b;
    concentrated += arg == nearest;
  }
  const bool ok = window_ok && shape_ok && floor_ok && concentrated == kMelFrames;
  return verdict(ok, "0.5 s -> " + std::to_string(kMelBins) + "x" + std::to_string(kMelFrames) + ", silence floor " +
                         num(silence.data.front(), 4) + (floor_ok ? " uniform" : " NOT uniform") + ", 1 kHz peak in bin " +
                         std::to_string(nearest) + " for " + std::to_string(concentrated) + "/48 frames");
}

// --------------------------------------------------------------- pipeline

RawDetectionTrack random_raw(std::mt19937_64& rng, int id) {
  std::uniform_real_distribution<double> u(0, 1);
  char name[16];
  std::snprintf(name, sizeof name, "r%04d", id);
  RawDetectionTrack r{name, "vid" + std::to_string(id % 7), {}};
  const int start = static_cast<int>(rng() % 100);
  const int len = 1 + static_cast<int>(rng() % 400);
  const double p_drop = u(rng) < 0.3 ? 0.0 : 0.3 * u(rng);
  double x = 0.1 + 0.5 * u(rng), y = 0.1 + 0.4 * u(rng);
  for (int i = 0; i < len; ++i) {
    // Occasional long outages.
    if (u(rng) < 0.01) i += 2 + static_cast<int>(rng() % 10);
    if (u(rng) < p_drop) continue;
    x = std::clamp(x + 0.01 * (u(rng) - 0.5), 0.0, 0.6);
    y = std::clamp(y + 0.01 * (u(rng) - 0.5), 0.0, 0.5);
    r.detections.push_back({(start + i) * 0.05, {x, y, x + 0.2 + 0.1 * u(rng), y + 0.3 + 0.1 * u(rng)}});
  }
  if (r.detections.empty()) r.detections.push_back({start * 0.05, {0.1, 0.1, 0.3, 0.4}});
  return r;
}

Outcome pipeline() {
  std::mt19937_64 rng(4242);
  std::vector<RawDetectionTrack> raw;
  for (int i = 0; i < 1000; ++i) raw.push_back(random_raw(rng, i));
  const GapFillConfig cfg;
  const LengthBounds bounds{1.0, 10.0};
  const auto tracks = run_track_pipeline(raw, cfg, bounds);

  std::map<std::string, const RawDetectionTrack*> by_id;
  for (const auto& r : raw) by_id[r.track_id] = &r;
  int bad_len = 0, gaps = 0, changed = 0;
  std::size_t detected = 0;
  for (const auto& t : tracks) {
    if (t.duration() < 1.0 - 1e-9 || t.duration() > 10.0 + 1e-9) ++bad_len;
    for (std::size_t j = 1; j < t.frames.size(); ++j)
      if (std::fabs(t.frames[j].timestamp - t.frames[j - 1].timestamp - 0.05) > 1e-6) ++gaps;
    const auto* src = by_id.at(t.track_id.substr(0, 5));
    for (const auto& f : t.frames) {
      if (!f.detected) continue;
      ++detected;
      const auto it = std::find_if(src->detections.begin(), src->detections.end(),
                                   [&](const Detection& d) { return d.timestamp == f.timestamp; });
      if (it == src->detections.end() || std::memcmp(&it->box, &f.box, sizeof f.box) != 0) ++changed;
    }
  }
  const auto csv1 = serialize_labels(tracks_to_frames(tracks));
  const auto csv2 = serialize_labels(tracks_to_frames(run_track_pipeline(raw, cfg, bounds)));
  const bool ok = !tracks.empty() && bad_len == 0 && gaps == 0 && changed == 0 && csv1 == csv2;
  return verdict(ok, "1000 raw -> " + std::to_string(tracks.size()) + " tracks, out of [1,10] s " +
                         std::to_string(bad_len) + ", residual gaps " + std::to_string(gaps) + ", altered boxes " +
                         std::to_string(changed) + "/" + std::to_string(detected) + ", reruns " +
                         (csv1 == csv2 ? "identical" : "DIFFER"));
}

// ------------------------------------------------------------------- loss

Outcome loss_identities() {
  double uniform_err = 0;
  int reduce_mismatch = 0, checked = 0;
  double recompute_err = 0;
  for (int seed = 0; seed < 5; ++seed) {
    ModelSpec s = ModelSpec::from_variant("AV-GRU-f2");
    s.l2_weight = 0;
    AsdModel<double> m(s);
    const std::vector<double> zero(m.parameter_count(), 0.0);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const int n = 4 + seed * 3;
    auto fs = random_frames(s, n, rng);
    std::vector<double> y(static_cast<std::size_t>(n)), mask(static_cast<std::size_t>(n), 1.0);
    for (auto& v : y) v = static_cast<double>(rng() % 2);
    mask[0] = 0;
    typename AsdModel<double>::Workspace ws;
    const auto l = m.window_loss(zero, fs.inputs, y, mask, {}, ws);
    uniform_err = std::max(uniform_err, std::fabs(l.total - 1.8 * (n - 1) * std::numbers::ln2));
  }
  for (auto mod : {Modalities::AV, Modalities::VV})
    for (auto head : {HeadType::Static, HeadType::Gru})
      for (double l2 : {0.0, 1e-3}) {
        ModelSpec s = mini_spec(mod, head);
        s.aux_weight_audio = s.aux_weight_visual = 0;
        s.l2_weight = l2;
        AsdModel<double> m(s);
        const auto p = m.init_parameters(31);
        std::mt19937_64 rng(9);
        auto fs = random_frames(s, 6, rng);
        std::vector<double> y = {1, 0, 1, 1, 0, 0}, mask(6, 1.0);
        typename AsdModel<double>::Workspace ws;
        std::vector<Prediction> preds;
        const auto l = m.window_loss(p, fs.inputs, y, mask, {}, ws, &preds);
        double sq = 0;
        for (double w : p) sq += w * w;
        std::vector<double> fused;
        for (const auto& pr : preds) fused.push_back(pr.fused.speak);
        ++checked;
        // The identity itself is checked bitwise; the fused term against a
        // recomputation from the emitted probabilities to 1e-12.
        if (l.total != l.fused + l2 * sq) ++reduce_mismatch;
        recompute_err = std::max(recompute_err, std::fabs(l.fused - masked_cross_entropy(fused, y, mask)));
      }
  const bool ok = uniform_err <= 1e-9 && reduce_mismatch == 0 && recompute_err <= 1e-12;
  return verdict(ok, "uniform 1.8 N ln2 max error " + sci(uniform_err) + ", zero aux weights reduce to fused loss in " +
                         std::to_string(checked - reduce_mismatch) + "/" + std::to_string(checked) +
                         " cases bitwise, fused term recomputation error " + sci(recompute_err));
}

// -------------------------------------------------------------- real data

Outcome label_statistics(const std::string& path) {
  if (path.empty()) return {Outcome::Skip, "no released label file supplied (--label-stats or ASD_LABEL_STATS_FILE)"};
  std::ifstream in(path);
  if (!in) return fail("cannot open " + path);
  const auto tracks = parse_label_csv(in);
  std::vector<LabelTimeline> tl;
  for (const auto& t : tracks) tl.push_back(timeline_from_frames(t.frames, kDefaultFrameRate));
  const auto s = segment_statistics(tl);
  struct Row {
    SpeakLabel l;
    double hours;
    double segments;
    double mean;
  };
  const Row rows[] = {{SpeakLabel::NotSpeaking, 28.10, 58171, 1.74},
                      {SpeakLabel::SpeakingAudible, 9.46, 30623, 1.11},
                      {SpeakLabel::SpeakingNotAudible, 0.35, 1547, 0.83}};
  bool ok = true;
  std::string d;
  auto within = [](double got, double want) { return std::fabs(got - want) <= 0.005 * want; };
  for (const auto& r : rows) {
    const auto& st = s.at(r.l);
    ok = ok && within(st.total_hours(), r.hours) && within(static_cast<double>(st.segment_count), r.segments) &&
         within(st.mean_duration(), r.mean);
    d += std::string(to_string(r.l)) + " " + num(st.total_hours(), 2) + " h/" + std::to_string(st.segment_count) +
         "/" + num(st.mean_duration(), 2) + " s; ";
  }
  return verdict(ok, d + "tolerance 0.5%");
}

// ---------------------------------------------------------------- service

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  a.sin_port = 0;
  ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  ::close(fd);
  return ntohs(a.sin_port);
}

pid_t spawn_server(const std::string& dir, int port) {
  const pid_t pid = ::fork();
  if (pid == 0) {
    const std::string p = std::to_string(port);
    const int devnull = ::open("/dev/null", O_WRONLY);
    ::dup2(devnull, 2);
    ::execl(ASD_CLI_PATH, ASD_CLI_PATH, "serve", "--out", dir.c_str(), "--port", p.c_str(), "--snapshot-every", "50",
            static_cast<char*>(nullptr));
    ::_exit(127);
  }
  return pid;
}

bool wait_ready(int port) {
  for (int i = 0; i < 200; ++i) {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(0, 100000);
    if (auto r = c.Get("/tasks"); r && r->status == 200) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  return false;
}

Outcome service() {
  TempDir dir("accept-svc");
  const auto tasks = make_tasks(1);
  AnnotationStore::create(dir.path(), tasks);
  const auto& task = tasks[0];
  const std::vector<std::string> raters = {"ra", "rb", "rc", "rd"};
  const int port = free_port();
  pid_t pid = spawn_server(dir.path().string(), port);
  if (!wait_ready(port)) return fail("server did not start");

  struct Ack {
    std::string rater;
    int version;
    std::string body;
  };
  std::mutex mu;
  std::vector<Ack> acks;
  std::atomic<int> n_acks{0}, n_conflicts{0}, n_reads{0}, n_transport{0};
  std::atomic<bool> stop{false};
  constexpr int kClients = 100, kKillAt = 150, kTarget = 400;

  std::vector<std::thread> clients;
  for (int c = 0; c < kClients; ++c)
    clients.emplace_back([&, c] {
      std::mt19937_64 rng(static_cast<std::uint64_t>(c) * 7919 + 1);
      httplib::Client cl("127.0.0.1", port);
      cl.set_connection_timeout(1);
      cl.set_read_timeout(5);
      while (!stop) {
        const auto& rater = raters[rng() % raters.size()];
        auto r = cl.Get("/tasks/" + task.task_id);
        if (!r || r->status != 200) {
          ++n_transport;
          std::this_thread::sleep_for(std::chrono::milliseconds(10));
          continue;
        }
        ++n_reads;
        if (rng() % 3 == 0) continue;  // read-only round
        const auto j = json::parse(r->body);
        const int version = j["ratings"].contains(rater) ? j["ratings"][rater]["version"].get<int>() : 0;
        std::vector<SpeakLabel> labels;
        for (std::size_t k = 0; k < task.track.frames.size(); ++k)
          labels.push_back(rng() % 2 ? SpeakLabel::SpeakingAudible : SpeakLabel::NotSpeaking);
        const auto body = put_body(version + 1, timeline_for(task, labels));
        auto w = cl.Put("/tasks/" + task.task_id + "/raters/" + rater + "/segments", body, "application/json");
        if (!w) {
          ++n_transport;
          continue;
        }
        if (w->status == 200) {
          std::lock_guard<std::mutex> g(mu);
          acks.push_back({rater, json::parse(w->body)["version"].get<int>(), body});
          if (++n_acks >= kTarget) stop = true;
        } else if (w->status == 409) {
          ++n_conflicts;
        }
      }
    });

  // Forced restart: SIGKILL while clients are writing, then bring it back.
  while (n_acks < kKillAt && !stop) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  const int acks_at_kill = n_acks;
  pid = spawn_server(dir.path().string(), port);
  const bool restarted = wait_ready(port);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::minutes(3);
  while (!stop && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  stop = true;
  for (auto& t : clients) t.join();

  httplib::Client cl("127.0.0.1", port);
  auto exp = cl.Get("/export");
  ::kill(pid, SIGTERM);
  ::waitpid(pid, nullptr, 0);

  // Every acknowledged write must be on disk, once per version slot.
  AnnotationStore store(dir.path());
  std::map<std::pair<std::string, int>, int> slot_acks;
  int lost = 0, duplicate_slots = 0, non_contiguous = 0;
  for (const auto& a : acks)
    if (++slot_acks[{a.rater, a.version}] > 1) ++duplicate_slots;
  for (const auto& r : raters) {
    const auto hist = store.history(task.task_id, r);
    for (std::size_t i = 0; i < hist.size(); ++i)
      if (hist[i].version != static_cast<int>(i) + 1) ++non_contiguous;
  }
  for (const auto& a : acks) {
    const auto hist = store.history(task.task_id, a.rater);
    const auto want = json::parse(a.body)["segments"];
    if (a.version < 1 || a.version > static_cast<int>(hist.size()) ||
        detail::segments_to_json(hist[static_cast<std::size_t>(a.version - 1)].segments) != want)
      ++lost;
  }
  bool export_ok = false;
  std::string export_note = "export failed";
  if (exp && exp->status == 200) {
    try {
      const auto parsed = parse_label_csv(exp->body);
      export_ok = parsed.size() == 1 && parsed[0].frames.size() == task.track.frames.size();
      for (const auto& t : parsed) timeline_from_frames(t.frames, kDefaultFrameRate);
      export_note = "export " + std::to_string(parsed.size()) + " track(s) valid";
    } catch (const std::exception& e) {
      export_ok = false;
      export_note = std::string("export invalid: ") + e.what();
    }
  }
  const bool ok = restarted && n_acks >= kTarget && acks_at_kill < kTarget && lost == 0 && duplicate_slots == 0 &&
                  non_contiguous == 0 && export_ok;
  return verdict(ok, std::to_string(kClients) + " clients, " + std::to_string(n_acks.load()) + " acks (" +
                         std::to_string(acks_at_kill) + " before SIGKILL), " + std::to_string(n_conflicts.load()) +
                         " conflicts, " + std::to_string(n_reads.load()) + " reads, duplicate slots " +
                         std::to_string(duplicate_slots) + ", lost acks " + std::to_string(lost) + ", " + export_note);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  std::string label_stats_path;
  bool list = false;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--label-stats", label_stats_path, "Released label CSV for the label statistics check");
  app.add_flag("--list", list, "List criteria and exit");
  CLI11_PARSE(app, argc, argv);
  if (label_stats_path.empty())
    if (const char* env = std::getenv("ASD_LABEL_STATS_FILE")) label_stats_path = env;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"synthetic_end_to_end", end_to_end},
      {"gradient_check", gradients},
      {"metric_oracles", metrics},
      {"fleiss_kappa", kappa},
      {"featurization", featurization},
      {"pipeline_properties", pipeline},
      {"loss_identities", loss_identities},
      {"label_statistics", [&] { return label_statistics(label_stats_path); }},
      {"service_concurrency_restart", service},
  };
  if (list) {
    for (const auto& [name, fn] : criteria) std::printf("%s\n", name.c_str());
    return 0;
  }
  const std::set<std::string> wanted(only.begin(), only.end());
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.kind == Outcome::Pass ? "PASS" : o.kind == Outcome::Skip ? "SKIP" : "FAIL";
    failures += o.kind == Outcome::Fail;
    std::printf("%s %-28s %s [%.1f s]\n", tag, name.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
