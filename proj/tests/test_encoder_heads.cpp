#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace passatt;
using nx::Index;
using nx::Mat;
using D = nx::Tensor<double>;

namespace {

EncoderConfig tiny_config(int vocab = 40) {
  EncoderConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_dim = 8;
  c.ffn_dim = 16;
  c.max_len = 12;
  c.vocab_size = vocab;
  c.dropout_rate = 0.0;
  return c;
}

std::vector<TokenId> content(std::vector<TokenId> ids, std::size_t len) {
  ids.resize(len, special::kPad);
  return ids;
}

std::vector<bool> mask_prefix(std::size_t n, std::size_t len) {
  std::vector<bool> m(len, false);
  for (std::size_t i = 0; i < n; ++i) m[i] = true;
  return m;
}

EncoderOutput<double> manual_output(Mat<double> z, std::vector<bool> mask) {
  return {D(std::move(z)), std::move(mask)};
}

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TEST(Encoder, OutputShape) {
  auto cfg = tiny_config();
  auto params = init_encoder_params<double>(cfg, 1);
  auto ids = content({0, 9, 10, 1}, 12);
  auto out = encode<double>(std::span<const TokenId>(ids), mask_prefix(4, 12), params, cfg);
  EXPECT_EQ(out.embeddings.rows(), 12);
  EXPECT_EQ(out.embeddings.cols(), 8);
}

TEST(Encoder, PadOutputsIgnoreContent) {
  auto cfg = tiny_config();
  auto params = init_encoder_params<double>(cfg, 2);
  auto a = content({0, 9, 10, 11, 1}, 12);
  auto b = content({0, 30, 31, 8, 1}, 12);
  auto mask = mask_prefix(5, 12);
  auto ea = encode<double>(std::span<const TokenId>(a), mask, params, cfg).embeddings.value();
  auto eb = encode<double>(std::span<const TokenId>(b), mask, params, cfg).embeddings.value();
  const double diff = (ea.bottomRows(7) - eb.bottomRows(7)).cwiseAbs().maxCoeff();
  EXPECT_LT(diff, 1e-12);
  EXPECT_GT((ea.topRows(5) - eb.topRows(5)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Encoder, SingleTokenContentIsFinite) {
  auto cfg = tiny_config();
  auto params = init_encoder_params<double>(cfg, 3);
  auto ids = content({0}, 12);
  EncoderTrace<double> trace;
  auto out = encode<double>(std::span<const TokenId>(ids), mask_prefix(1, 12), params, cfg, false, nullptr, &trace);
  EXPECT_TRUE(out.embeddings.value().allFinite());
  for (const auto& layer : trace.attention)
    for (const auto& probs : layer) {
      EXPECT_DOUBLE_EQ(probs(0, 0), 1.0);
      EXPECT_DOUBLE_EQ(probs.row(0).sum(), 1.0);
    }
}

TEST(Encoder, RejectsOutOfRangeIds) {
  auto cfg = tiny_config(10);
  auto params = init_encoder_params<double>(cfg, 3);
  auto ids = content({0, 10}, 12);
  EXPECT_THROW(encode<double>(std::span<const TokenId>(ids), mask_prefix(2, 12), params, cfg), ShapeError);
}

TEST(Encoder, InitDependsOnlyOnSeed) {
  auto cfg = tiny_config();
  auto a = init_encoder_params<double>(cfg, 5).named_parameters();
  auto b = init_encoder_params<double>(cfg, 5).named_parameters();
  auto c = init_encoder_params<double>(cfg, 6).named_parameters();
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].second.value(), b[i].second.value()) << a[i].first;
    any_diff = any_diff || a[i].second.value() != c[i].second.value();
  }
  EXPECT_TRUE(any_diff);
}

TEST(Encoder, TrainModeWithDropoutNeedsRng) {
  auto cfg = tiny_config();
  cfg.dropout_rate = 0.1;
  auto params = init_encoder_params<double>(cfg, 3);
  auto ids = content({0, 9, 1}, 12);
  EXPECT_THROW(encode<double>(std::span<const TokenId>(ids), mask_prefix(3, 12), params, cfg, true), Error);
}

TEST(Summarize, IdenticalEmbeddingsGiveThatVector) {
  Mat<double> z = Mat<double>::Ones(5, 1) * (Mat<double>(1, 3) << 0.5, -1.0, 2.0).finished();
  PassageAttHead<double> head = init_passage_att_head<double>(2, 3, 7);
  auto s = summarize_passage(manual_output(z, mask_prefix(3, 5)), head);
  for (Index i = 0; i < 2; ++i) {
    EXPECT_TRUE(s.summaries.value().row(i).isApprox(z.row(0), 1e-14));
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(s.attention(i, j), 0.2, 1e-14);
  }
}

TEST(Summarize, OrthogonalQueryIsUniform) {
  Mat<double> z(4, 2);
  z << 0, 1, 0, 2, 0, -3, 0, 4;
  auto head = init_passage_att_head<double>(1, 2, 7);
  head.relation_queries.mutable_value() << 1.0, 0.0;
  auto s = summarize_passage(manual_output(z, mask_prefix(4, 4)), head);
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(s.attention(0, j), 0.25, 1e-15);
}

TEST(Summarize, ThreeLogitsCombination) {
  Mat<double> z(3, 2);
  z << 1.0, 0.3, 2.0, -0.7, 3.0, 1.1;  // logits against (1, 0) are 1, 2, 3
  auto head = init_passage_att_head<double>(1, 2, 7);
  head.relation_queries.mutable_value() << 1.0, 0.0;
  auto s = summarize_passage(manual_output(z, mask_prefix(3, 3)), head);
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0), tot = e1 + e2 + e3;
  const double want0 = (e1 * 1.0 + e2 * 2.0 + e3 * 3.0) / tot;
  const double want1 = (e1 * 0.3 - e2 * 0.7 + e3 * 1.1) / tot;
  EXPECT_NEAR(s.summaries(0, 0), want0, 1e-14);
  EXPECT_NEAR(s.summaries(0, 1), want1, 1e-14);
}

TEST(Summarize, PadMaskingAndNormalisation) {
  Rng rng(4);
  Mat<double> z = truncated_normal<double>(10, 4, 1.0, rng);
  auto mask = mask_prefix(6, 10);
  auto with_pad = init_passage_att_head<double>(3, 4, 8, true);
  auto without = init_passage_att_head<double>(3, 4, 8, false);
  auto a = summarize_passage(manual_output(z, mask), with_pad).attention.value();
  auto b = summarize_passage(manual_output(z, mask), without).attention.value();
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
    EXPECT_NEAR(b.row(i).sum(), 1.0, 1e-12);
    for (Index j = 6; j < 10; ++j) {
      EXPECT_GT(a(i, j), 0.0);
      EXPECT_EQ(b(i, j), 0.0);
    }
  }
}

TEST(ScoreTriples, ZeroClassifierGivesHalf) {
  auto head = init_passage_att_head<double>(3, 4, 1);
  head.classifier_weight.mutable_value().setZero();
  Rng rng(1);
  auto c = score_triples(D(truncated_normal<double>(3, 4, 1.0, rng)), head);
  for (Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(c(i, 0), 0.5);
}

TEST(ScoreTriples, SharedClassifier) {
  auto head = init_passage_att_head<double>(2, 3, 1);
  Mat<double> s(2, 3);
  s << 0.1, 0.2, 0.3, 0.1, 0.2, 0.3;
  auto c = score_triples(D(s), head);
  EXPECT_EQ(c(0, 0), c(1, 0));
}

TEST(ScoreTriples, LogitLn3GivesThreeQuarters) {
  auto head = init_passage_att_head<double>(1, 2, 1);
  head.classifier_weight.mutable_value() << 1.0, 0.0;
  Mat<double> s(1, 2);
  s << std::log(3.0), 5.0;
  EXPECT_NEAR(score_triples(D(s), head).item(), 0.75, 1e-15);
}

TEST(MultilabelLoss, HalfConfidenceIsLn2) {
  auto c = D(Mat<double>::Constant(4, 1, 0.5));
  EXPECT_NEAR(multilabel_loss<double>(c, {1, 0, 0, 1}).item(), std::log(2.0), 1e-15);
}

TEST(MultilabelLoss, PerfectIsNearZero) {
  D c(Mat<double>((Mat<double>(3, 1) << 1.0, 0.0, 1.0).finished()));
  EXPECT_LT(multilabel_loss<double>(c, {1, 0, 1}).item(), 2e-7);
  EXPECT_TRUE(std::isfinite(multilabel_loss<double>(c, {0, 1, 0}).item()));
}

TEST(MultilabelLoss, TwoRelationExample) {
  D c(Mat<double>((Mat<double>(2, 1) << 0.9, 0.1).finished()));
  const double want = 0.5 * (-std::log(0.9) - std::log(0.9));
  EXPECT_NEAR(multilabel_loss<double>(c, {1, 0}).item(), want, 1e-15);
  EXPECT_NEAR(want, 0.1054, 5e-5);
}

TEST(MultilabelLoss, LengthMismatch) {
  EXPECT_THROW(multilabel_loss<double>(D(Mat<double>::Constant(2, 1, 0.5)), {1}), ShapeError);
}

TEST(IntraBag, UnknownModeRejected) { EXPECT_THROW(parse_intra_bag_mode("max"), ConfigError); }

TEST(IntraBag, SingleInstanceAllModesAgree) {
  Rng rng(9);
  D inst(truncated_normal<double>(1, 6, 1.0, rng));
  std::vector<Mat<double>> outs;
  for (auto m : {IntraBagMode::kAtt, IntraBagMode::kAvg, IntraBagMode::kOne, IntraBagMode::kSharedQuery})
    outs.push_back(intra_bag_forward(inst, init_intra_bag_head<double>(m, 4, 6, 21)).confidences.value());
  for (std::size_t i = 1; i < outs.size(); ++i) EXPECT_LT((outs[i] - outs[0]).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(IntraBag, AvgOfDuplicatesEqualsSingle) {
  Rng rng(9);
  Mat<double> e = truncated_normal<double>(1, 6, 1.0, rng);
  auto head = init_intra_bag_head<double>(IntraBagMode::kAvg, 3, 6, 2);
  auto one = intra_bag_forward(D(e), head).confidences.value();
  auto two = intra_bag_forward(D(Mat<double>(e.replicate(2, 1))), head).confidences.value();
  EXPECT_LT((one - two).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(IntraBag, OneModeMaxPools) {
  auto head = init_intra_bag_head<double>(IntraBagMode::kOne, 2, 2, 2);
  head.class_weight.mutable_value().setIdentity();
  Mat<double> e(2, 2);
  e << logit(0.2), logit(0.9), logit(0.7), logit(0.1);
  auto c = intra_bag_forward(D(e), head).confidences.value();
  EXPECT_NEAR(c(0, 0), 0.7, 1e-14);
  EXPECT_NEAR(c(1, 0), 0.9, 1e-14);
}

TEST(GradCheck, TinyEndToEnd) {
  auto cfg = tiny_config();
  cfg.num_layers = 1;
  auto enc = init_encoder_params<double>(cfg, 4);
  auto head = init_passage_att_head<double>(3, cfg.hidden_dim, 5);
  auto ids = content({0, 4, 9, 5, 6, 10, 7, 1}, 12);
  auto mask = mask_prefix(8, 12);
  auto loss = [&] {
    auto out = encode<double>(std::span<const TokenId>(ids), mask, enc, cfg);
    return multilabel_loss<double>(score_triples(summarize_passage(out, head).summaries, head), {1, 0, 1});
  };
  auto params = enc.named_parameters();
  auto hp = head.named_parameters();
  params.insert(params.end(), hp.begin(), hp.end());
  passatt::testing::redraw_for_gradcheck(params, 0.3, 6);
  auto res = nx::finite_difference_check(loss, params);
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_param << " " << res.analytic << " " << res.numeric;
}
