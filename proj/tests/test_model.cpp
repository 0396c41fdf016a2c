#include <gtest/gtest.h>

#include <map>
#include <numeric>

#include "emoseq/model.hpp"
#include "test_support.hpp"

using namespace emoseq;
using namespace emoseq::testing;

namespace {

constexpr std::size_t kToyVocab = 20;

Seq2SeqModel<double> toy_model(Variant v, std::size_t hidden = 8) {
  return Seq2SeqModel<double>(v, toy_config(hidden), toy_vocab(kToyVocab));
}

}  // namespace

TEST(Layout, ParameterSetsPerVariant) {
  LayoutDims d{8, 4, 20, 10};
  auto names = [&](Variant v) {
    std::map<std::string, Shape> out;
    for (const auto& p : parameter_layout(v, d)) out[p.name] = p.shape;
    return out;
  };
  auto base = names(Variant::baseline);
  EXPECT_EQ(base.at("embedding"), (Shape{20, 4}));
  EXPECT_EQ(base.at("encoder.weight"), (Shape{12, 32}));
  EXPECT_EQ(base.at("decoder.weight"), (Shape{12, 32}));
  EXPECT_EQ(base.at("attention.weight"), (Shape{8, 8}));
  EXPECT_EQ(base.at("projection.weight"), (Shape{8, 20}));
  EXPECT_EQ(names(Variant::enc_bef), base);
  EXPECT_EQ(names(Variant::enc_aft), base);
  EXPECT_EQ(names(Variant::dec_start), base);
  EXPECT_EQ(names(Variant::dec_rep).at("emotion_vectors"), (Shape{10, 8}));
  EXPECT_EQ(names(Variant::dec_rep).at("decoder.weight"), (Shape{20, 32}));
  EXPECT_EQ(names(Variant::dec_trans).at("emotion_transform"), (Shape{10, 8, 8}));
  EXPECT_EQ(names(Variant::dec_proj).at("projection.emotion_weight"), (Shape{10, 8, 20}));
  EXPECT_EQ(names(Variant::dec_proj).count("projection.weight"), 0u);
  EXPECT_EQ(names(Variant::enc_att).at("attention.emotion_weight"), (Shape{10, 8, 8}));
  EXPECT_EQ(names(Variant::enc_att).count("attention.weight"), 0u);
}

TEST(ParamCount, PublishedTable) {
  CountDims d{600, 25000, 30, 10};
  std::vector<std::uint64_t> got;
  for (auto v : kEmotionVariants) got.push_back(count_extra_params(v, d, CountMode::paper));
  EXPECT_EQ(got, (std::vector<std::uint64_t>{0, 0, 6000, 0, 3600000, 150000000, 180000}));
  EXPECT_EQ(count_extra_params(Variant::baseline, d, CountMode::paper), 0u);
}

TEST(ParamCount, ActualModeMatchesAllocatedTensors) {
  CountDims d{600, 25000, 30, 10};
  EXPECT_EQ(count_extra_params(Variant::dec_rep, d, CountMode::actual), 6000u);
  EXPECT_EQ(count_extra_params(Variant::dec_trans, d, CountMode::actual), 3600000u);
  EXPECT_EQ(count_extra_params(Variant::dec_proj, d, CountMode::actual), 9u * (600 * 25000 + 25000));
  EXPECT_EQ(count_extra_params(Variant::enc_att, d, CountMode::actual), 9u * 600 * 600);
  // a real model's tensor count agrees with the accountant
  auto vocab = toy_vocab(kToyVocab);
  for (auto v : kEmotionVariants) {
    auto m = Seq2SeqModel<double>(v, toy_config(), vocab);
    auto b = Seq2SeqModel<double>(Variant::baseline, toy_config(), vocab);
    const std::size_t gate_growth = v == Variant::dec_rep ? 8 * 32 : 0;
    EXPECT_EQ(m.parameter_count() - b.parameter_count() - gate_growth,
              count_extra_params(v, {8, kToyVocab, 3, 10}, CountMode::actual))
        << name_of(v);
  }
}

TEST(Injection, EncTokenBeforeAndAfter) {
  std::vector<TokenId> x = {20, 21, 22};
  const auto tok = Vocabulary::emotion_token(Emotion::fear);
  EXPECT_EQ(apply_enc_token(x, Emotion::fear, TokenPosition::before).ids, (std::vector<TokenId>{tok, 20, 21, 22}));
  EXPECT_EQ(apply_enc_token(x, Emotion::fear, TokenPosition::after).ids, (std::vector<TokenId>{20, 21, 22, tok}));
  std::vector<TokenId> full(30, 20);
  full.back() = 25;
  auto r = apply_enc_token(full, Emotion::joy, TokenPosition::after);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.ids.size(), 30u);
  EXPECT_EQ(r.ids[28], 20u);
  EXPECT_EQ(r.ids.back(), Vocabulary::emotion_token(Emotion::joy));
  auto once = apply_enc_token(x, Emotion::joy, TokenPosition::before).ids;
  EXPECT_THROW(apply_enc_token(once, Emotion::joy, TokenPosition::before), ContractError);
  EXPECT_EQ(decstart_first_input(Emotion::guilt), Vocabulary::emotion_token(Emotion::guilt));
}

TEST(Injection, TruncationIsCounted) {
  auto m = toy_model(Variant::enc_bef);
  std::vector<TokenId> full(30, 15);
  m.greedy_decode(full, Emotion::joy, 2);
  EXPECT_EQ(m.truncation_warnings(), 1u);
}

TEST(Lstm, RejectsWidthMismatch) {
  auto w = Var<double>::constant(Tensor<double>({10, 16}));
  auto b = Var<double>::constant(Tensor<double>({16}));
  auto x = Var<double>::constant(Tensor<double>({2, 5}));
  auto h = Var<double>::constant(Tensor<double>({2, 4}));
  EXPECT_THROW(lstm_cell(w, b, x, h, h), DimensionError);
}

TEST(Lstm, ZeroWeightsGiveHalfGatesAndZeroCandidate) {
  auto w = Var<double>::constant(Tensor<double>({6, 8}));
  auto b = Var<double>::constant(Tensor<double>({8}));
  auto x = Var<double>::constant(Tensor<double>({1, 4}, 1.0));
  auto h = Var<double>::constant(Tensor<double>({1, 2}));
  auto c = Var<double>::constant(Tensor<double>({1, 2}, 2.0));
  auto [h2, c2] = lstm_cell(w, b, x, h, c);
  EXPECT_DOUBLE_EQ(c2.value()[0], 1.0);  // f·c + i·g = 0.5·2 + 0.5·0
  EXPECT_DOUBLE_EQ(h2.value()[0], 0.5 * std::tanh(1.0));
}

TEST(Attention, RowsAreDistributionsOverUnpaddedPositions) {
  auto m = toy_model(Variant::baseline);
  std::vector<std::vector<TokenId>> srcs = {{15, 16, 17, 18}, {19, 15}};
  Pass<double> pass;
  auto enc = m.encode(pass, make_source_batch(srcs));
  Rng rng(3);
  auto h = Var<double>::constant(random_tensor({2, 8}, rng));
  auto att = attention(Var<double>::view(m.parameter("attention.weight").value), h, enc);
  const auto& a = att.weights.value();
  for (std::size_t b = 0; b < 2; ++b) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += a.at(b, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(a.at(1, 2), 0.0);
  EXPECT_EQ(a.at(1, 3), 0.0);
}

TEST(Attention, EqualScoresGiveMeanOfStates) {
  EncoderOutput<double> enc;
  enc.states = Var<double>::constant(Tensor<double>({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  enc.source = make_source_batch(std::vector<std::vector<TokenId>>{{5, 6}});
  auto zero_w = Var<double>::constant(Tensor<double>({2, 2}));
  auto att = attention(zero_w, Var<double>::constant(Tensor<double>({1, 2}, 1.0)), enc);
  EXPECT_DOUBLE_EQ(att.weights.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(att.context.value()[0], 2.0);
  EXPECT_DOUBLE_EQ(att.context.value()[1], 3.0);
}

TEST(Encoder, ContractChecks) {
  auto m = toy_model(Variant::baseline);
  Pass<double> pass;
  std::vector<std::vector<TokenId>> empty = {{}};
  EXPECT_THROW(make_source_batch(empty), ContractError);
  std::vector<std::vector<TokenId>> too_long = {std::vector<TokenId>(31, 15)};
  EXPECT_THROW(m.encode(pass, make_source_batch(too_long)), ContractError);
}

TEST(Encoder, PaddingDoesNotChangeAnItemsStates) {
  auto m = toy_model(Variant::baseline);
  std::vector<std::vector<TokenId>> alone = {{15, 16}};
  std::vector<std::vector<TokenId>> padded = {{15, 16}, {17, 18, 19, 15}};
  Pass<double> pass;
  auto a = m.encode(pass, make_source_batch(alone));
  auto b = m.encode(pass, make_source_batch(padded));
  for (std::size_t d = 0; d < 8; ++d) {
    EXPECT_EQ(a.final_h.value().at(0, d), b.final_h.value().at(0, d));
    EXPECT_EQ(a.final_c.value().at(0, d), b.final_c.value().at(0, d));
  }
}

TEST(Decoder, StepBeyondPaddingIsRejected) {
  auto m = toy_model(Variant::baseline);
  Pass<double> pass;
  std::vector<std::vector<TokenId>> src = {{15, 16}};
  auto enc = m.encode(pass, make_source_batch(src));
  Var<double> keys = m.attention_keys(pass, enc, std::vector<Emotion>{Emotion::joy});
  auto state = m.initial_state(enc);
  state.step = 31;
  std::vector<TokenId> y = {Vocabulary::kBos};
  std::vector<Emotion> e = {Emotion::joy};
  EXPECT_THROW(m.decode_step(pass, y, state, enc, keys, e), ContractError);
  state.step = 30;  // the EOS step after 30 target tokens is allowed
  EXPECT_NO_THROW(m.decode_step(pass, y, state, enc, keys, e));
}

TEST(Decoder, FirstStepStartsFromEncoderFinalState) {
  auto m = toy_model(Variant::baseline);
  Pass<double> pass;
  std::vector<std::vector<TokenId>> src = {{15, 16, 17}};
  auto enc = m.encode(pass, make_source_batch(src));
  auto state = m.initial_state(enc);
  EXPECT_EQ(state.context.value(), enc.final_h.value());
  EXPECT_EQ(state.cell.value(), enc.final_c.value());
  EXPECT_EQ(m.first_decoder_input(Emotion::joy), Vocabulary::kBos);
  EXPECT_EQ(toy_model(Variant::dec_start).first_decoder_input(Emotion::joy), Vocabulary::emotion_token(Emotion::joy));
}

TEST(Loss, SequenceLossAveragesOverMaskedSteps) {
  std::vector<Var<double>> logits = {Var<double>::constant(Tensor<double>({2, 3})),
                                     Var<double>::constant(Tensor<double>({2, 3}))};
  std::vector<std::vector<std::size_t>> targets = {{0, 1}, {2, 0}};
  std::vector<std::vector<std::uint8_t>> masks = {{1, 1}, {1, 0}};
  EXPECT_NEAR(sequence_loss<double>(logits, targets, masks).value().item(), std::log(3.0), 1e-12);
  std::vector<std::vector<std::uint8_t>> none = {{0, 0}, {0, 0}};
  EXPECT_THROW(sequence_loss<double>(logits, targets, none), ContractError);
}

TEST(Model, RejectsWrongEmotionCount) {
  auto cfg = toy_config();
  cfg.emotions = 9;
  EXPECT_THROW(Seq2SeqModel<double>(Variant::baseline, cfg, toy_vocab(kToyVocab)), ContractError);
}

TEST(Model, InitIsSeededAndEmotionTransformStartsNearIdentity) {
  auto a = toy_model(Variant::dec_trans), b = toy_model(Variant::dec_trans);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  const auto& t = a.parameter("emotion_transform").value;
  for (std::size_t s = 0; s < 10; ++s)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(t[(s * 8 + i) * 8 + j], i == j ? 1.0 : 0.0, 0.01);
}

// ---------------------------------------------------------------------------

class VariantTest : public ::testing::TestWithParam<Variant> {};

TEST_P(VariantTest, EndToEndGradientMatchesFiniteDifferences) {
  const Variant v = GetParam();
  auto m = toy_model(v);
  Rng rng(17);
  auto batch = random_pairs(2, kToyVocab, 3, 3, rng);
  batch[0].emotion = Emotion::fear;
  batch[1].emotion = Emotion::guilt;
  auto r = check_params(m.parameters(), [&](Pass<double>& pass) { return m.sequence_loss(pass, batch); });
  EXPECT_LT(r.max_error, 1e-4) << name_of(v) << " worst at " << r.worst;
  EXPECT_EQ(r.checked, m.parameter_count());
}

TEST_P(VariantTest, NeutralEmotionParametersReproduceBaselineBitwise) {
  const Variant v = GetParam();
  auto base = toy_model(Variant::baseline);
  auto m = neutral_variant(base, v);
  Rng rng(100 + static_cast<int>(v));
  for (int trial = 0; trial < 10; ++trial) {
    auto batch = random_pairs(3, kToyVocab, 1 + rng.index(5), 1 + rng.index(5), rng);
    const auto expect = baseline_logits_for(base, v, batch);
    EXPECT_EQ(flat_logits(m, batch), expect) << name_of(v) << " trial " << trial;
  }
}

TEST_P(VariantTest, ReadsTheEmotionOnlyAtItsOwnSites) {
  const Variant v = GetParam();
  auto m = toy_model(v);
  std::map<std::string, int> sites;
  m.emotion_probe = [&](std::string_view s) { ++sites[std::string(s)]; };
  Rng rng(5);
  auto batch = random_pairs(2, kToyVocab, 3, 3, rng);
  Tape<double> tape;
  Pass<double> pass(tape, rng, true);
  tape.backward(m.sequence_loss(pass, batch));
  m.greedy_decode(batch[0].source, Emotion::joy, 3);
  ASSERT_EQ(sites.size(), 1u);
  EXPECT_EQ(sites.begin()->first, name_of(v));
}

TEST_P(VariantTest, ChangingTheEmotionChangesLogitsExceptForSymmetricStart) {
  const Variant v = GetParam();
  auto m = toy_model(v);
  Rng rng(8);
  auto batch = random_pairs(1, kToyVocab, 3, 3, rng);
  auto other = batch;
  batch[0].emotion = Emotion::joy;
  other[0].emotion = Emotion::anger;
  if (v == Variant::dec_proj) {
    // every Proj_e starts as the same draw
    EXPECT_EQ(flat_logits(m, batch), flat_logits(m, other));
  } else if (v == Variant::dec_rep || v == Variant::dec_trans || v == Variant::enc_att || v == Variant::enc_bef ||
             v == Variant::enc_aft || v == Variant::dec_start) {
    EXPECT_NE(flat_logits(m, batch), flat_logits(m, other));
  }
}

INSTANTIATE_TEST_SUITE_P(EmotionVariants, VariantTest, ::testing::ValuesIn(kEmotionVariants),
                         [](const ::testing::TestParamInfo<Variant>& info) {
                           std::string n(name_of(info.param));
                           std::replace(n.begin(), n.end(), '-', '_');
                           return n;
                         });

TEST(Baseline, GradientMatchesFiniteDifferences) {
  auto m = toy_model(Variant::baseline);
  Rng rng(18);
  auto batch = random_pairs(2, kToyVocab, 3, 3, rng);
  auto r = check_params(m.parameters(), [&](Pass<double>& pass) { return m.sequence_loss(pass, batch); });
  EXPECT_LT(r.max_error, 1e-4) << "worst at " << r.worst;
}

TEST(Baseline, NeverReadsTheEmotion) {
  auto m = toy_model(Variant::baseline);
  int reads = 0;
  m.emotion_probe = [&](std::string_view) { ++reads; };
  Rng rng(5);
  auto batch = random_pairs(2, kToyVocab, 3, 3, rng);
  auto stripped = batch;
  for (auto& p : stripped) p.emotion.reset();
  EXPECT_EQ(flat_logits(m, batch), flat_logits(m, stripped));
  EXPECT_EQ(reads, 0);
}

TEST(DecProj, GradientTouchesOnlyTheBatchEmotions) {
  auto m = toy_model(Variant::dec_proj);
  Rng rng(6);
  auto batch = random_pairs(2, kToyVocab, 3, 3, rng);
  batch[0].emotion = Emotion::joy;
  batch[1].emotion = Emotion::joy;
  zero_grad<double>(m.parameters());
  Tape<double> tape;
  Pass<double> pass(tape, rng, false);
  tape.backward(m.sequence_loss(pass, batch));
  const auto& g = m.parameter("projection.emotion_weight").grad;
  const std::size_t block = 8 * kToyVocab;
  for (std::size_t s = 0; s < 10; ++s) {
    double norm = 0;
    for (std::size_t k = 0; k < block; ++k) norm += std::abs(g[s * block + k]);
    if (s == index_of(Emotion::joy)) EXPECT_GT(norm, 0.0);
    else EXPECT_EQ(norm, 0.0) << "emotion " << s;
  }
}

TEST(Greedy, BatchedEqualsSingleAndAttentionRowsAreDistributions) {
  auto m = toy_model(Variant::enc_att, 8);
  std::vector<std::vector<TokenId>> srcs = {{15, 16, 17}, {18, 19}, {15}};
  std::vector<Emotion> es = {Emotion::joy, Emotion::fear, Emotion::sadness};
  auto batched = m.greedy_decode(srcs, es, 6);
  for (std::size_t b = 0; b < srcs.size(); ++b) {
    auto single = m.greedy_decode(srcs[b], es[b], 6);
    EXPECT_EQ(batched[b].tokens, single.tokens);
    ASSERT_EQ(batched[b].attention.size(), batched[b].tokens.size());
    for (const auto& row : batched[b].attention) {
      ASSERT_EQ(row.size(), srcs[b].size());
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
    }
    EXPECT_LE(batched[b].tokens.size(), 6u);
    for (auto t : batched[b].tokens) EXPECT_NE(t, Vocabulary::kEos);
  }
}

TEST(Greedy, DefaultLengthCapIsThirty) {
  auto m = toy_model(Variant::baseline);
  auto d = m.greedy_decode(std::vector<TokenId>{15, 16}, Emotion::joy);
  EXPECT_LE(d.tokens.size(), 30u);
}
