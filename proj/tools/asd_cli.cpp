// SPDX-License-Identifier: Apache-2.0
//
// asd_cli: command-line front end for labels, tracks, analytics, features,
// synthetic data, training, scoring, evaluation and the rating service.
//
// Exit codes: 0 success, 1 operation failure, 2 usage error.

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "asd/analytics.hpp"
#include "asd/checkpoint.hpp"
#include "asd/corpus.hpp"
#include "asd/labels.hpp"
#include "asd/metrics.hpp"
#include "asd/scoring.hpp"
#include "asd/speech.hpp"
#include "asd/synth.hpp"
#include "asd/track_pipeline.hpp"
#include "asd/trainer.hpp"

// httplib pulls in resolv.h, whose _res macro breaks Eigen if Eigen comes later.
#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "asd/annotation.hpp"
#include "asd/annotation_http.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace asd;

// ------------------------------------------------------------------ I/O

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  return in;
}

std::vector<LabeledTrack> read_labels(const std::string& path) {
  auto in = open_in(path);
  return parse_label_csv(in);
}

std::vector<SpeechSegment> read_speech(const std::string& path) {
  auto in = open_in(path);
  return parse_speech_csv(in);
}

/// "-" writes to stdout.
void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string frame_key(const std::string& video, const std::string& track, double t) {
  return video + "," + track + "," + detail::fixed6(t);
}

std::vector<LabelTimeline> timelines_of(const std::vector<LabeledTrack>& tracks, double frame_rate) {
  std::vector<LabelTimeline> out;
  for (const auto& t : tracks) out.push_back(timeline_from_frames(t.frames, frame_rate));
  return out;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

json histogram_json(const Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

// ------------------------------------------------------------- options

struct Options {
  std::string labels, speech_labels, media_dir, out, config, checkpoint, variant, predictions, actions, bucket;
  std::vector<std::string> rater_labels;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
  double threshold = 0.5;
  double frame_rate = kDefaultFrameRate;
  double frame_width = 0;
  // tracks
  double max_gap = 0.2, sigma = 0.1, min_len = 1.0, max_len = 10.0;
  // synth
  int n = 8;
  double min_duration = 1.0, max_duration = 3.0, noise = 0.0;
  // train
  int epochs = 0;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t snapshot_every = 256;
};

// ---------------------------------------------------------- subcommands

int cmd_validate(const Options& o) {
  const auto tracks = read_labels(o.labels);
  std::size_t frames = 0;
  std::set<std::string> videos;
  for (const auto& t : tracks) {
    frames += t.frames.size();
    videos.insert(t.video_id);
  }
  std::cout << "ok: " << tracks.size() << " tracks, " << frames << " frames, " << videos.size() << " videos\n";
  if (!o.speech_labels.empty()) std::cout << "ok: " << read_speech(o.speech_labels).size() << " speech segments\n";
  return 0;
}

int cmd_tracks(const Options& o) {
  const auto labeled = read_labels(o.labels);
  const auto raw = raw_tracks_from_labels(labeled);
  GapFillConfig cfg;
  cfg.max_gap = o.max_gap;
  cfg.kernel_sigma = o.sigma;
  cfg.frame_rate = o.frame_rate;
  const auto tracks = run_track_pipeline(raw, cfg, {o.min_len, o.max_len});
  write_text(o.out, serialize_labels(tracks_to_frames(tracks)));
  std::cerr << raw.size() << " raw tracks -> " << tracks.size() << " tracks\n";
  return 0;
}

int cmd_stats(const Options& o) {
  const auto tracks = read_labels(o.labels);
  const auto timelines = timelines_of(tracks, o.frame_rate);
  const auto stats = segment_statistics(timelines);
  std::vector<FaceTrack> faces;
  for (const auto& t : tracks) faces.push_back(face_track_of(t, o.frame_rate));
  const auto conc = concurrency_profile(faces);
  std::vector<TrackTimeline> tagged;
  for (std::size_t i = 0; i < tracks.size(); ++i) tagged.push_back({tracks[i].video_id, timelines[i]});
  const auto simultaneous = overlapping_speaker_instants(tagged);

  std::cout << std::left << std::setw(22) << "label" << std::right << std::setw(10) << "hours" << std::setw(10)
            << "segments" << std::setw(12) << "mean_s" << "\n";
  json j = {{"labels", json::object()}};
  for (auto l : kAllLabels) {
    const auto& s = stats.at(l);
    std::cout << std::left << std::setw(22) << to_string(l) << std::right << std::setw(10) << fmt(s.total_hours())
              << std::setw(10) << s.segment_count << std::setw(12) << fmt(s.mean_duration(), 2) << "\n";
    j["labels"][std::string(to_string(l))] = {{"hours", s.total_hours()},
                                               {"seconds", s.total_seconds},
                                               {"segments", s.segment_count},
                                               {"mean_duration", s.mean_duration()},
                                               {"histogram", histogram_json(s.durations)}};
  }
  std::cout << "\nfaces_on_screen  seconds\n";
  json cj = json::object();
  for (const auto& [k, sec] : conc) {
    std::cout << std::setw(15) << k << "  " << fmt(sec, 2) << "\n";
    cj[std::to_string(k)] = sec;
  }
  j["concurrency"] = cj;
  double sim = 0;
  for (const auto& s : simultaneous) sim += s.end - s.start;
  std::cout << "\nsimultaneous speakers: " << simultaneous.size() << " intervals, " << fmt(sim, 2) << " s\n";
  j["simultaneous_speakers"] = {{"intervals", simultaneous.size()}, {"seconds", sim}};
  if (o.frame_width > 0) j["face_widths_px"] = histogram_json(face_width_histogram(faces, o.frame_width));
  if (!o.out.empty()) write_json(o.out, j);
  return 0;
}

int cmd_kappa(const Options& o) {
  if (o.rater_labels.size() < 2) throw ValidationError("kappa needs at least two --labels files, one per rater");
  std::vector<std::map<std::string, SpeakLabel>> raters;
  for (const auto& path : o.rater_labels) {
    std::map<std::string, SpeakLabel> m;
    for (const auto& t : read_labels(path))
      for (const auto& f : t.frames) m[frame_key(f.video_id, f.track_id, f.timestamp)] = f.label;
    raters.push_back(std::move(m));
  }
  std::vector<std::vector<SpeakLabel>> seqs(raters.size());
  for (const auto& [key, l] : raters[0]) {
    for (std::size_t r = 0; r < raters.size(); ++r) {
      auto it = raters[r].find(key);
      if (it == raters[r].end()) throw ValidationError(o.rater_labels[r] + " has no rating for frame " + key);
      seqs[r].push_back(it->second);
    }
  }
  for (std::size_t r = 1; r < raters.size(); ++r)
    if (raters[r].size() != raters[0].size())
      throw ValidationError(o.rater_labels[r] + " rates frames missing from " + o.rater_labels[0]);
  const double k = fleiss_kappa(rating_matrix(seqs));
  std::cout << "fleiss_kappa " << fmt(k, 4) << "  items " << seqs[0].size() << "  raters " << raters.size() << "\n";
  if (!o.out.empty()) write_json(o.out, {{"kappa", k}, {"items", seqs[0].size()}, {"raters", raters.size()}});
  return 0;
}

int cmd_overlap(const Options& o) {
  const auto tracks = read_labels(o.labels);
  const auto speech = read_speech(o.speech_labels);
  std::map<std::string, std::vector<TrackTimeline>> by_video;
  std::map<std::string, std::vector<SpeechSegment>> sp_by_video;
  std::map<std::string, std::pair<double, double>> span;
  auto widen = [&](const std::string& v, double a, double b) {
    auto [it, fresh] = span.try_emplace(v, a, b);
    if (!fresh) it->second = {std::min(it->second.first, a), std::max(it->second.second, b)};
  };
  for (const auto& t : tracks) {
    auto tl = timeline_from_frames(t.frames, o.frame_rate);
    widen(t.video_id, tl.start(), tl.end());
    by_video[t.video_id].push_back({t.video_id, std::move(tl)});
  }
  for (const auto& s : speech) {
    widen(s.video_id, s.start, s.end);
    sp_by_video[s.video_id].push_back(s);
  }
  OverlapReport total;
  for (const auto& [v, sp] : span) total += speech_overlap_report(v, by_video[v], sp_by_video[v], sp.first, sp.second);
  const double speech_total = total.speech_with_speaker + total.speech_without_speaker;
  std::cout << "speech with visible speaker     " << fmt(total.speech_with_speaker, 2) << " s\n"
            << "speech without visible speaker  " << fmt(total.speech_without_speaker, 2) << " s\n"
            << "visible speaker without speech  " << fmt(total.speaker_without_speech, 2) << " s\n"
            << "neither                         " << fmt(total.neither, 2) << " s\n";
  if (speech_total > 0)
    std::cout << "speech with speaker fraction    " << fmt(total.speech_with_speaker / speech_total, 4) << "\n";
  json bc = json::object();
  for (const auto& [c, p] : total.by_condition) bc[to_string(c)] = {{"with_speaker", p.first}, {"without_speaker", p.second}};
  if (!o.out.empty())
    write_json(o.out, {{"speech_with_speaker", total.speech_with_speaker},
                       {"speech_without_speaker", total.speech_without_speaker},
                       {"speaker_without_speech", total.speaker_without_speech},
                       {"neither", total.neither},
                       {"by_condition", bc}});
  return 0;
}

int cmd_cooccur(const Options& o) {
  const auto timelines = timelines_of(read_labels(o.labels), o.frame_rate);
  auto in = open_in(o.actions);
  const auto points = parse_action_csv(in);
  const auto rows = action_cooccurrence(points, timelines);
  std::cout << std::left << std::setw(24) << "action" << std::right << std::setw(10) << "points" << std::setw(10)
            << "NS%" << std::setw(10) << "SA%" << std::setw(10) << "SNA%" << std::setw(12) << "unresolved" << "\n";
  json j = json::object();
  for (const auto& [a, r] : rows) {
    std::cout << std::left << std::setw(24) << a << std::right << std::setw(10) << r.resolved << std::setw(10)
              << fmt(r.percent(SpeakLabel::NotSpeaking), 1) << std::setw(10)
              << fmt(r.percent(SpeakLabel::SpeakingAudible), 1) << std::setw(10)
              << fmt(r.percent(SpeakLabel::SpeakingNotAudible), 1) << std::setw(12) << r.unresolved << "\n";
    json pct = json::object();
    for (auto l : kAllLabels) pct[std::string(to_string(l))] = r.percent(l);
    j[a] = {{"resolved", r.resolved}, {"unresolved", r.unresolved}, {"percent", pct}};
  }
  if (!o.out.empty()) write_json(o.out, j);
  return 0;
}

int cmd_featurize(const Options& o) {
  const auto tracks = read_labels(o.labels);
  const MediaDirectory media(o.media_dir);
  const auto feats = featurize_corpus(tracks, media, o.jobs);
  json arr = json::array();
  std::size_t frames = 0, windows = 0;
  for (const auto& f : feats) {
    double crop_mean = 0, mel_mean = 0;
    for (const auto& c : f->crops)
      for (float v : c.data) crop_mean += v;
    for (const auto& m : f->mels)
      for (float v : m.data) mel_mean += v;
    crop_mean /= std::max<double>(1.0, static_cast<double>(f->size()) * kFaceSize * kFaceSize);
    mel_mean /= std::max<double>(1.0, static_cast<double>(f->size()) * kMelBins * kMelFrames);
    const std::size_t w = f->duration() >= 1.0 - 1e-9 ? window_examples(f).size() : 0;
    frames += f->size();
    windows += w;
    arr.push_back({{"track_id", f->track_id}, {"video_id", f->video_id}, {"frames", f->size()},
                   {"windows", w}, {"crop_mean", crop_mean}, {"mel_mean", mel_mean}});
  }
  std::cout << feats.size() << " tracks, " << frames << " frames, " << windows << " windows; crops " << kFaceSize
            << "x" << kFaceSize << ", mel " << kMelBins << "x" << kMelFrames << "\n";
  if (!o.out.empty())
    write_json(o.out, {{"face_size", kFaceSize}, {"mel_bins", kMelBins}, {"mel_frames", kMelFrames},
                       {"window_frames", kWindowFrames}, {"window_stride", kWindowStrideFrames}, {"tracks", arr}});
  return 0;
}

int cmd_synth(const Options& o) {
  CorpusOptions c;
  c.min_duration = o.min_duration;
  c.max_duration = o.max_duration;
  c.noise_level = o.noise;
  const auto plan = plan_corpus(o.n, o.seed, c);
  write_corpus(o.out, plan);
  std::cout << plan.clips.size() << " clips written to " << o.out << "\n";
  return 0;
}

std::vector<std::shared_ptr<const TrackFeatures>> load_features(const Options& o, const ModelSpec& spec) {
  const auto tracks = read_labels(o.labels);
  const MediaDirectory media(o.media_dir);
  return featurize_corpus(tracks, media, o.jobs, uses_visual(spec.modalities), uses_audio(spec.modalities));
}

int cmd_train(const Options& o) {
  TrainConfig cfg;
  if (!o.config.empty()) {
    auto in = open_in(o.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError("bad config " + o.config + ": " + e.what());
    }
    cfg = train_config_from_json(j);
  }
  if (o.seed_set) cfg.seed = o.seed;
  if (o.epochs > 0) cfg.epochs = o.epochs;
  cfg.jobs = o.jobs;
  std::vector<std::string> variants;
  if (!o.variant.empty()) {
    for (auto f : detail::split_fields(o.variant))
      if (!detail::trim(f).empty()) variants.emplace_back(detail::trim(f));
    cfg.spec = ModelSpec::from_variant(variants.front(), cfg.spec);
  }
  cfg.validate();

  // Features for the union of modalities any requested variant needs.
  ModelSpec need = cfg.spec;
  for (const auto& v : variants) {
    const auto s = ModelSpec::from_variant(v, cfg.spec);
    if (uses_audio(s.modalities) && !uses_audio(need.modalities)) need.modalities = Modalities::AV;
    if (uses_visual(s.modalities) && !uses_visual(need.modalities)) need.modalities = Modalities::AV;
  }
  const auto tracks = load_features(o, need);
  std::vector<ExampleWindow> windows;
  for (const auto& t : tracks)
    for (auto& w : window_examples(t)) windows.push_back(std::move(w));
  std::cerr << tracks.size() << " tracks, " << windows.size() << " windows\n";

  auto report = [](const std::string& v, const EpochRecord& e) {
    std::cerr << v << " epoch " << e.epoch << " loss " << fmt(e.total, 4) << " fused " << fmt(e.fused, 4);
    if (e.validation_auroc) std::cerr << " val_auroc " << fmt(*e.validation_auroc, 4);
    std::cerr << " (" << fmt(e.seconds, 1) << " s)\n";
  };

  if (variants.size() <= 1) {
    const auto r = train(windows, cfg, [&](const EpochRecord& e) { report(cfg.spec.variant(), e); });
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_checkpoint(o.out, r.checkpoint);
    write_json(o.out + ".history.json", to_json(r.history));
    std::cout << "wrote " << o.out << " (" << r.checkpoint.params.size() << " parameters)\n";
    return 0;
  }
  const auto rows = build_variant_matrix(windows, cfg, variants, report);
  fs::create_directories(o.out);
  for (const auto& r : rows) {
    save_checkpoint((fs::path(o.out) / (r.variant + ".ckpt")).string(), r.checkpoint);
    write_json((fs::path(o.out) / (r.variant + ".history.json")).string(), to_json(r.history));
    std::cout << std::left << std::setw(14) << r.variant << " params " << r.checkpoint.params.size() << " val_auroc "
              << (r.validation_auroc ? fmt(*r.validation_auroc, 4) : std::string("n/a")) << "\n";
  }
  write_json((fs::path(o.out) / "matrix.json").string(), to_json(std::span<const VariantResult>(rows)));
  return 0;
}

int cmd_score(const Options& o) {
  const auto ck = load_checkpoint(o.checkpoint);
  const Scorer scorer(ck);
  const auto tracks = load_features(o, ck.spec);
  std::ostringstream out;
  std::size_t n = 0;
  for (const auto& t : tracks) {
    const auto frames = scorer.score_frames(*t);
    write_predictions(out, frames, o.threshold);
    n += frames.size();
  }
  write_text(o.out, out.str());
  std::cerr << "scored " << n << " frames in " << tracks.size() << " tracks\n";
  return 0;
}

/// Predictions joined with ground truth by (video, track, timestamp).
std::vector<ScoredFrame> joined_predictions(const Options& o, std::vector<LabeledFrame>* truth_out = nullptr) {
  const auto truth_tracks = read_labels(o.labels);
  auto in = open_in(o.predictions);
  auto preds = parse_predictions(in);
  std::map<std::string, SpeakLabel> truth;
  for (const auto& t : truth_tracks)
    for (const auto& f : t.frames) {
      truth[frame_key(f.video_id, f.track_id, f.timestamp)] = f.label;
      if (truth_out) truth_out->push_back(f);
    }
  std::map<std::string, double> widths;
  if (!o.media_dir.empty()) {
    const auto manifest = fs::path(o.media_dir) / "manifest.json";
    auto min = open_in(manifest.string());
    for (const auto& c : json::parse(min).value("clips", json::array()))
      widths[c.at("video_id").get<std::string>()] = c.value("width", 0.0);
  }
  std::optional<SpeechIndex> speech;
  if (!o.speech_labels.empty()) speech.emplace(read_speech(o.speech_labels));
  for (auto& p : preds) {
    auto it = truth.find(frame_key(p.video_id, p.track_id, p.timestamp));
    if (it == truth.end())
      throw ValidationError("prediction " + frame_key(p.video_id, p.track_id, p.timestamp) + " has no ground truth");
    p.label = it->second;
    if (speech) p.condition = speech->at(p.video_id, p.timestamp);
    double fw = o.frame_width;
    if (auto w = widths.find(p.video_id); w != widths.end() && w->second > 0) fw = w->second;
    if (fw > 0) p.face_width_px = p.box.width() * fw;
  }
  return preds;
}

int cmd_eval(const Options& o) {
  std::optional<Bucketing> by;
  if (o.bucket == "noise") by = Bucketing::NoiseCondition;
  else if (o.bucket == "size") by = Bucketing::FaceSize;
  const auto preds = joined_predictions(o);
  const auto r = evaluate(preds, by, o.threshold);
  std::cout << "frames " << r.frames << "\nauroc " << fmt(r.auroc, 4) << "\nbalanced_accuracy "
            << fmt(r.balanced_accuracy, 4) << "\n";
  json buckets = json::array();
  if (by) {
    std::cout << "\n" << std::left << std::setw(12) << "bucket" << std::right << std::setw(9) << "frames"
              << std::setw(9) << "pos" << std::setw(9) << "neg" << std::setw(8) << "BA" << "\n";
    for (const auto& b : r.buckets) {
      std::cout << std::left << std::setw(12) << b.bucket << std::right << std::setw(9) << b.frames << std::setw(9)
                << b.positives << std::setw(9) << b.negatives << std::setw(8)
                << (b.balanced_accuracy ? fmt(*b.balanced_accuracy, 3) : std::string("-")) << "\n";
      buckets.push_back({{"bucket", b.bucket}, {"frames", b.frames}, {"positives", b.positives},
                         {"negatives", b.negatives},
                         {"balanced_accuracy", b.balanced_accuracy ? json(*b.balanced_accuracy) : json()}});
    }
  }
  if (!o.out.empty()) {
    json roc = json::array();
    for (const auto& p : r.roc) roc.push_back({p.threshold, p.false_positive_rate, p.true_positive_rate});
    write_json(o.out, {{"frames", r.frames}, {"auroc", r.auroc}, {"balanced_accuracy", r.balanced_accuracy},
                       {"threshold", o.threshold}, {"buckets", buckets}, {"roc", roc}});
  }
  return 0;
}

int cmd_map(const Options& o) {
  std::vector<LabeledFrame> truth;
  const auto preds = joined_predictions(o, &truth);
  const double m = activitynet_map(truth, preds);
  std::cout << "map " << fmt(m, 4) << "\n";
  if (!o.out.empty()) write_json(o.out, {{"map", m}, {"predictions", preds.size()}, {"ground_truth", truth.size()}});
  return 0;
}

httplib::Server* g_server = nullptr;
extern "C" void stop_server(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const Options& o) {
  const fs::path dir = o.out;
  if (!fs::exists(dir / "tasks.json")) {
    if (o.labels.empty()) throw ValidationError("store " + dir.string() + " does not exist; pass --labels to create it");
    std::vector<FaceTrack> faces;
    for (const auto& t : read_labels(o.labels)) faces.push_back(face_track_of(t, o.frame_rate));
    AnnotationStore::create(dir, tasks_from_tracks(faces, o.media_dir.empty() ? fs::path() : fs::path(o.media_dir)));
  }
  AnnotationStore store(dir, o.snapshot_every);
  httplib::Server srv;
  register_annotation_routes(srv, store);
  if (!srv.bind_to_port(o.host, o.port)) throw Error("cannot listen on " + o.host + ":" + std::to_string(o.port));
  g_server = &srv;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cerr << "serving " << store.size() << " tasks on http://" << o.host << ":" << o.port << "\n";
  srv.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active speaker detection toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  Options o;

  auto labels = [&](CLI::App* c, bool required = true) {
    auto* opt = c->add_option("--labels", o.labels, "Label CSV (video_id,timestamp,x1,y1,x2,y2,label,track_id)");
    if (required) opt->required();
    return opt;
  };
  auto frame_rate = [&](CLI::App* c) {
    c->add_option("--frame-rate", o.frame_rate, "Frame rate of the label grid")->check(CLI::PositiveNumber);
  };
  auto out = [&](CLI::App* c, const std::string& what, bool required) {
    auto* opt = c->add_option("--out", o.out, what);
    if (required) opt->required();
  };
  auto jobs = [&](CLI::App* c) { c->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber); };
  auto seed = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { o.seed = s, o.seed_set = true; }, "Random seed")
        ->default_str("0");
  };

  std::map<CLI::App*, std::function<int(const Options&)>> handlers;

  auto* validate = app.add_subcommand("validate", "Parse and validate a label CSV");
  labels(validate);
  validate->add_option("--speech-labels", o.speech_labels, "Speech-activity CSV to validate as well");
  handlers[validate] = cmd_validate;

  auto* tracks = app.add_subcommand("tracks", "Fill detection gaps and enforce track length bounds");
  labels(tracks)->description("Raw detections as label CSV (labels ignored)");
  out(tracks, "Output label CSV with NOT_SPEAKING placeholders", true);
  frame_rate(tracks);
  tracks->add_option("--max-gap", o.max_gap, "Gaps strictly shorter than this (s) are filled");
  tracks->add_option("--sigma", o.sigma, "Gaussian kernel width (s)");
  tracks->add_option("--min-len", o.min_len, "Shortest kept track (s)");
  tracks->add_option("--max-len", o.max_len, "Longest track before splitting (s)");
  handlers[tracks] = cmd_tracks;

  auto* stats = app.add_subcommand("stats", "Label statistics, face concurrency and durations");
  labels(stats);
  frame_rate(stats);
  stats->add_option("--frame-width", o.frame_width, "Frame width in pixels for the face width histogram (0 = skip)");
  out(stats, "JSON report", false);
  handlers[stats] = cmd_stats;

  auto* kappa = app.add_subcommand("kappa", "Fleiss' kappa over per-rater label CSVs");
  kappa->add_option("--labels", o.rater_labels, "One label CSV per rater (repeat the flag)")->required();
  out(kappa, "JSON report", false);
  handlers[kappa] = cmd_kappa;

  auto* overlap = app.add_subcommand("overlap", "Speech activity versus visible speakers");
  labels(overlap);
  overlap->add_option("--speech-labels", o.speech_labels, "Speech-activity CSV (video_id,start,end,condition)")
      ->required();
  frame_rate(overlap);
  out(overlap, "JSON report", false);
  handlers[overlap] = cmd_overlap;

  auto* cooccur = app.add_subcommand("cooccur", "Speaking labels at action annotations");
  labels(cooccur);
  cooccur->add_option("--actions", o.actions, "Action CSV (track_id,timestamp,action)")->required();
  frame_rate(cooccur);
  out(cooccur, "JSON report", false);
  handlers[cooccur] = cmd_cooccur;

  auto* featurize = app.add_subcommand("featurize", "Face crops and mel features for every track");
  labels(featurize);
  featurize->add_option("--media-dir", o.media_dir, "Media directory with clips/")->required();
  out(featurize, "JSON summary", false);
  jobs(featurize);
  handlers[featurize] = cmd_featurize;

  auto* synth = app.add_subcommand("synth", "Render a synthetic corpus");
  synth->add_option("--n", o.n, "Clips per kind")->check(CLI::PositiveNumber);
  seed(synth);
  out(synth, "Output directory", true);
  synth->add_option("--min-duration", o.min_duration, "Shortest clip (s)");
  synth->add_option("--max-duration", o.max_duration, "Longest clip (s)");
  synth->add_option("--noise", o.noise, "Noise level in [0,1]");
  handlers[synth] = cmd_synth;

  auto* train = app.add_subcommand("train", "Train one variant, or a matrix of comma-separated variants");
  labels(train);
  train->add_option("--media-dir", o.media_dir, "Media directory with clips/")->required();
  train->add_option("--config", o.config, "Training config JSON");
  train->add_option("--variant", o.variant, "Variant such as AV-GRU-f2; a comma list trains a matrix");
  seed(train);
  jobs(train);
  train->add_option("--epochs", o.epochs, "Override the configured epoch count (0 = keep)");
  out(train, "Checkpoint path, or output directory for a matrix", true);
  handlers[train] = cmd_train;

  auto* score = app.add_subcommand("score", "Write per-frame speaking scores");
  score->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  labels(score);
  score->add_option("--media-dir", o.media_dir, "Media directory with clips/")->required();
  score->add_option("--threshold", o.threshold, "Score at or above which the predicted label is SPEAKING_AUDIBLE");
  jobs(score);
  out(score, "Prediction CSV ('-' for stdout)", true);
  handlers[score] = cmd_score;

  auto* eval = app.add_subcommand("eval", "auROC, balanced accuracy and buckets");
  labels(eval)->description("Ground-truth label CSV");
  eval->add_option("--predictions", o.predictions, "Prediction CSV")->required();
  eval->add_option("--bucket", o.bucket, "Bucket by noise condition or face size")
      ->check(CLI::IsMember({"noise", "size"}));
  eval->add_option("--speech-labels", o.speech_labels, "Speech-activity CSV for --bucket noise");
  eval->add_option("--media-dir", o.media_dir, "Media directory whose manifest gives frame widths");
  eval->add_option("--frame-width", o.frame_width, "Frame width in pixels for --bucket size");
  eval->add_option("--threshold", o.threshold, "Decision threshold for balanced accuracy");
  out(eval, "JSON report with ROC points", false);
  handlers[eval] = cmd_eval;

  auto* map = app.add_subcommand("map", "Detection-style mean average precision");
  labels(map)->description("Ground-truth label CSV");
  map->add_option("--predictions", o.predictions, "Prediction CSV")->required();
  out(map, "JSON report", false);
  handlers[map] = cmd_map;

  auto* serve = app.add_subcommand("serve", "Run the rating-task HTTP service");
  labels(serve, false)->description("Tracks to create the store from when it does not exist yet");
  serve->add_option("--media-dir", o.media_dir, "Media directory for task media and waveform envelopes");
  out(serve, "Store directory", true);
  serve->add_option("--host", o.host, "Listen address");
  serve->add_option("--port", o.port, "Listen port")->check(CLI::Range(1, 65535));
  serve->add_option("--snapshot-every", o.snapshot_every, "Journal records between snapshots");
  frame_rate(serve);
  handlers[serve] = cmd_serve;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (auto* sub : app.get_subcommands()) return handlers.at(sub)(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
