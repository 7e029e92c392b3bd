// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "asd/model.hpp"
#include "gradcheck.hpp"

using namespace asd;
using asd::testing::mini_spec;
using asd::testing::random_frames;

namespace {

// Layer-by-layer count for one tower with the full-size widths.
std::size_t tower_params(int in_channels) {
  std::size_t n = 3 * 3 * in_channels * 32 + 32;
  int c = 32;
  for (int b = 0; b < 6; ++b) {
    n += 3 * 3 * c + c;    // depthwise
    n += c * 64 + 64;      // pointwise
    c = 64;
  }
  return n + 64 * 128 + 128;
}

std::size_t gru_params(int in, int u) { return static_cast<std::size_t>(in) * 3 * u + u * 3 * u + 3 * u; }

void set(std::vector<double>& p, const nn::ParamLayout& l, const std::string& name, std::vector<double> v) {
  const auto& e = l.find(name);
  ASSERT_EQ(e.size, v.size()) << name;
  std::copy(v.begin(), v.end(), p.begin() + static_cast<std::ptrdiff_t>(e.offset));
}

}  // namespace

TEST(ModelSpec, VariantNames) {
  const auto s = ModelSpec::from_variant("av-gru-f5");
  EXPECT_EQ(s.modalities, Modalities::AV);
  EXPECT_EQ(s.head, HeadType::Gru);
  EXPECT_EQ(s.stack_depth, 5);
  EXPECT_EQ(s.variant(), "AV-GRU-f5");
  EXPECT_EQ(ModelSpec::from_variant("VV-STATIC-f1").modalities, Modalities::VV);
  EXPECT_THROW(ModelSpec::from_variant("AV-LSTM-f2"), ValidationError);
  EXPECT_THROW(ModelSpec::from_variant("AV-GRU-f0"), ValidationError);
  EXPECT_THROW(ModelSpec::from_variant("AVGRU"), ValidationError);
  EXPECT_DOUBLE_EQ(s.aux_weight_audio, 0.4);
  EXPECT_DOUBLE_EQ(s.aux_weight_visual, 0.4);
  EXPECT_EQ(s.tower.embedding_dim, 128);
  EXPECT_EQ(s.gru_units, 100);
}

TEST(ModelParams, ClosedFormCounts) {
  EXPECT_EQ(AsdModel<double>(ModelSpec::from_variant("V-STATIC-f1")).parameter_count(),
            tower_params(1) + (128 * 128 + 128) + (128 * 2 + 2));
  const std::size_t av_gru = tower_params(2) + tower_params(1) + gru_params(256, 100) + gru_params(100, 100) +
                             (100 * 2 + 2) + 2 * ((128 * 128 + 128) + (128 * 2 + 2));
  EXPECT_EQ(AsdModel<double>(ModelSpec::from_variant("AV-GRU-f2")).parameter_count(), av_gru);
  EXPECT_EQ(AsdModel<double>(ModelSpec::from_variant("A-GRU-f1")).parameter_count(),
            tower_params(1) + gru_params(128, 100) + gru_params(100, 100) + 202);
}

TEST(ModelParams, LayoutIsContiguous) {
  AsdModel<float> m(ModelSpec::from_variant("VV-GRU-f3"));
  std::size_t off = 0;
  for (const auto& e : m.layout().entries()) {
    EXPECT_EQ(e.offset, off) << e.name;
    off += e.size;
  }
  EXPECT_EQ(off, m.parameter_count());
  EXPECT_EQ(m.init_parameters(4), m.init_parameters(4));
  EXPECT_NE(m.init_parameters(4), m.init_parameters(5));
}

TEST(Towers, SpatialTraces) {
  AsdModel<float> m(ModelSpec::from_variant("AV-STATIC-f1"));
  ASSERT_EQ(m.towers().size(), 2u);
  const std::vector<std::pair<int, int>> visual = {{128, 128}, {64, 64}, {64, 64}, {32, 32},
                                                   {16, 16},   {8, 8},   {4, 4},   {2, 2}};
  EXPECT_EQ(m.towers()[0].spatial_trace(), visual);
  // Ceiling division of 64 x 48 under the stride list.
  std::vector<std::pair<int, int>> audio = {{64, 48}};
  int h = 64, w = 48;
  for (int s : {2, 1, 2, 2, 2, 2, 2}) {
    h = (h + s - 1) / s;
    w = (w + s - 1) / s;
    audio.push_back({h, w});
  }
  EXPECT_EQ(m.towers()[1].spatial_trace(), audio);
  EXPECT_EQ(audio.back(), (std::pair<int, int>{1, 1}));
}

TEST(Towers, EmbeddingShapeAndZeroParameters) {
  AsdModel<float> m(ModelSpec::from_variant("AV-STATIC-f2"));
  std::vector<float> zeros(m.parameter_count(), 0.f);
  std::vector<float> vis(128 * 128 * 2, 0.7f), aud(64 * 48, -3.f);
  EXPECT_EQ(m.embed(0, zeros, vis), std::vector<float>(128, 0.f));
  EXPECT_EQ(m.embed(1, zeros, aud), std::vector<float>(128, 0.f));
  const auto p = m.init_parameters(1);
  EXPECT_EQ(m.embed(0, p, vis).size(), 128u);
  EXPECT_EQ(m.embed(1, p, aud).size(), 128u);
}

TEST(StaticHead, ZeroAndHandComputed) {
  ModelSpec s = mini_spec(Modalities::V, HeadType::Static);
  s.tower.embedding_dim = 1;
  s.fusion_hidden = 2;
  AsdModel<double> m(s);
  std::vector<double> p(m.parameter_count(), 0.0);
  const double x = 0.8;
  auto pp = m.predict_static(p, std::vector<double>{x});
  EXPECT_DOUBLE_EQ(pp.speak, 0.5);
  set(p, m.layout(), "head/fc1/kernel", {1.0, -2.0});
  set(p, m.layout(), "head/fc1/bias", {0.1, 0.5});
  set(p, m.layout(), "head/fc2/kernel", {2.0, -1.0, 3.0, 0.5});
  set(p, m.layout(), "head/fc2/bias", {0.0, 0.2});
  // hidden = relu(0.9, -1.1) = (0.9, 0); logits = (1.8, -0.9 + 0.2)
  const double z0 = 1.8, z1 = -0.7;
  pp = m.predict_static(p, std::vector<double>{x});
  EXPECT_NEAR(pp.speak, std::exp(z0) / (std::exp(z0) + std::exp(z1)), 1e-12);
  EXPECT_NEAR(pp.speak + pp.not_speak, 1.0, 1e-12);
  EXPECT_THROW(m.predict_static(p, std::vector<double>{1, 2}), ValidationError);
}

TEST(RecurrentHead, ZeroAlgebraAndChaining) {
  ModelSpec s = mini_spec(Modalities::AV, HeadType::Gru);
  AsdModel<double> m(s);
  std::vector<double> zero(m.parameter_count(), 0.0);
  auto st = m.zero_state();
  const std::vector<std::vector<double>> seq(3, std::vector<double>(static_cast<std::size_t>(m.fused_dim()), 0.0));
  const auto out = m.predict_recurrent(zero, seq, st);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& o : out) EXPECT_DOUBLE_EQ(o.speak, 0.5);
  EXPECT_EQ(st.h1, std::vector<double>(3, 0.0));
  EXPECT_EQ(st.h2, std::vector<double>(3, 0.0));

  const auto p = m.init_parameters(3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> two(2, std::vector<double>(static_cast<std::size_t>(m.fused_dim())));
  for (auto& v : two)
    for (auto& x : v) x = n(rng);
  auto a = m.zero_state();
  const auto both = m.predict_recurrent(p, two, a);
  auto b = m.zero_state();
  const auto first = m.predict_recurrent(p, {two[0]}, b);
  const auto second = m.predict_recurrent(p, {two[1]}, b);
  EXPECT_DOUBLE_EQ(both[0].speak, first[0].speak);
  EXPECT_DOUBLE_EQ(both[1].speak, second[0].speak);
  EXPECT_EQ(a.h1, b.h1);
  EXPECT_EQ(a.h2, b.h2);

  GruState<double> bad{{0.0}, {0.0}};
  EXPECT_THROW(m.predict_recurrent(p, two, bad), ValidationError);
  EXPECT_THROW(m.predict_recurrent(p, {}, a), ValidationError);
}

TEST(Loss, UniformPredictionClosedForm) {
  ModelSpec s = ModelSpec::from_variant("AV-GRU-f2");
  s.l2_weight = 0;
  AsdModel<double> m(s);
  std::vector<double> zero(m.parameter_count(), 0.0);
  std::mt19937_64 rng(1);
  auto fs = random_frames(s, 12, rng);
  std::vector<double> y(12), mask(12, 1.0);
  for (std::size_t j = 0; j < 12; ++j) y[j] = static_cast<double>(j % 2);
  mask[3] = mask[11] = 0;
  typename AsdModel<double>::Workspace ws;
  const auto l = m.window_loss(zero, fs.inputs, y, mask, {}, ws);
  EXPECT_NEAR(l.total, 1.8 * 10 * std::numbers::ln2, 1e-9);
}

TEST(Loss, ZeroAuxWeightsReduceToFusedPlusL2) {
  ModelSpec s = mini_spec(Modalities::AV, HeadType::Gru);
  s.aux_weight_audio = s.aux_weight_visual = 0;
  AsdModel<double> m(s);
  const auto p = m.init_parameters(8);
  std::mt19937_64 rng(8);
  auto fs = random_frames(s, 6, rng);
  std::vector<double> y = {1, 0, 1, 1, 0, 0}, mask(6, 1.0);
  typename AsdModel<double>::Workspace ws;
  std::vector<Prediction> preds;
  const auto l = m.window_loss(p, fs.inputs, y, mask, {}, ws, &preds);
  double sq = 0;
  for (double w : p) sq += w * w;
  EXPECT_EQ(l.total, l.fused + s.l2_weight * sq);
  std::vector<double> fused;
  for (const auto& pr : preds) fused.push_back(pr.fused.speak);
  EXPECT_NEAR(l.fused, masked_cross_entropy(fused, y, mask), 1e-12);
}

TEST(Loss, ComputeLossWeighting) {
  ModelSpec s;
  std::vector<double> f = {0.9, 0.2}, a = {0.6, 0.4}, v = {0.7, 0.1}, y = {1, 0}, m = {1, 1};
  const auto t = compute_loss(f, a, v, y, m, 2.0, s);
  EXPECT_NEAR(t.total, t.fused + 2e-5 + 0.4 * t.audio_aux + 0.4 * t.visual_aux, 1e-15);
  EXPECT_NEAR(t.fused, -std::log(0.9) - std::log(0.8), 1e-12);
}

TEST(Predictions, PairsSumToOneAndScoringMatchesLoss) {
  for (const char* v : {"AV-GRU-f2", "VV-STATIC-f2", "A-GRU-f1"}) {
    ModelSpec s = ModelSpec::from_variant(v, mini_spec(Modalities::AV, HeadType::Gru));
    AsdModel<double> m(s);
    const auto p = m.init_parameters(2);
    std::mt19937_64 rng(2);
    auto fs = random_frames(s, 7, rng);
    std::vector<double> y(7, 1.0), mask(7, 1.0);
    typename AsdModel<double>::Workspace ws;
    std::vector<Prediction> from_loss;
    m.window_loss(p, fs.inputs, y, mask, {}, ws, &from_loss);
    const auto scored = m.score_sequence(p, fs.inputs);
    ASSERT_EQ(scored.size(), 7u);
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_NEAR(scored[j].fused.speak + scored[j].fused.not_speak, 1.0, 1e-6);
      EXPECT_NEAR(scored[j].fused.speak, from_loss[j].fused.speak, 1e-12) << v;
      EXPECT_EQ(scored[j].audio_aux.has_value(), s.modalities == Modalities::AV);
      EXPECT_EQ(scored[j].visual_aux.has_value(), s.modalities == Modalities::AV || s.modalities == Modalities::VV);
    }
  }
}

TEST(Predictions, TwoVisualTowersSeeTheSameInput) {
  ModelSpec s = mini_spec(Modalities::VV, HeadType::Static);
  AsdModel<double> m(s);
  auto p = m.init_parameters(6);
  // Copy tower 1 weights into tower 2 so both see identical input and weights.
  const auto& l = m.layout();
  for (const auto& e : l.entries())
    if (e.name.rfind("visual/", 0) == 0) {
      const auto& twin = l.find("visual2/" + e.name.substr(7));
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(e.offset), e.size, p.begin() + static_cast<std::ptrdiff_t>(twin.offset));
    }
  std::mt19937_64 rng(6);
  auto fs = random_frames(s, 1, rng);
  std::vector<double> vis(fs.visual[0].begin(), fs.visual[0].end());
  const auto e0 = m.embed(0, p, fs.visual[0]);
  const auto e1 = m.embed(1, p, fs.visual[0]);
  EXPECT_EQ(e0, e1);
}

TEST(Gradients, MatchFiniteDifferences) {
  for (auto mod : {Modalities::A, Modalities::V, Modalities::AV, Modalities::VV})
    for (auto head : {HeadType::Static, HeadType::Gru}) {
      const auto spec = mini_spec(mod, head);
      const auto r = asd::testing::gradient_check(spec, 100 + static_cast<int>(mod) * 2 + static_cast<int>(head));
      EXPECT_LE(r.parameters, 5000u);
      EXPECT_LE(r.max_rel_error, 1e-3) << spec.variant() << " worst " << r.worst;
    }
}

TEST(Gradients, AccumulateIntoBuffer) {
  const auto spec = mini_spec(Modalities::AV, HeadType::Gru);
  AsdModel<double> m(spec);
  const auto p = m.init_parameters(1);
  std::mt19937_64 rng(1);
  auto fs = random_frames(spec, 4, rng);
  std::vector<double> y = {1, 0, 1, 0}, mask(4, 1.0);
  typename AsdModel<double>::Workspace ws;
  std::vector<double> once(p.size(), 0.0), twice(p.size(), 0.0);
  m.window_loss(p, fs.inputs, y, mask, once, ws);
  m.window_loss(p, fs.inputs, y, mask, twice, ws);
  m.window_loss(p, fs.inputs, y, mask, twice, ws);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(twice[i], 2 * once[i], 1e-12 + 1e-12 * std::fabs(once[i]));
}
