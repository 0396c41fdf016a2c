#include <gtest/gtest.h>

#include <numeric>

#include "emoseq/classifier.hpp"
#include "test_support.hpp"

using namespace emoseq;
using namespace emoseq::testing;

namespace {

std::vector<LabeledText> synth_texts(std::size_t n, std::uint64_t seed) {
  std::vector<LabeledText> out;
  for (const auto& p : synth_corpus({n, seed, 0.0}).pairs) out.push_back({join_tokens(p.target), *p.emotion});
  return out;
}

ClassifierConfig quick_config() {
  ClassifierConfig c;
  c.hidden = 16;
  c.embed = 16;
  c.attention = 16;
  c.epochs = 6;
  return c;
}

const ClassifierTraining<float>& trained() {
  static const auto t = train_classifier<float>(synth_texts(800, 21), quick_config());
  return t;
}

}  // namespace

TEST(Classifier, LearnsTheSeparableSynthCorpus) {
  const auto& t = trained();
  EXPECT_EQ(t.metrics.n_train + t.metrics.n_heldout, 800u);
  EXPECT_GE(t.metrics.accuracy, 0.95);
  EXPECT_LT(t.loss_curve.back(), t.loss_curve.front());
}

TEST(Classifier, AgreesWithTheOracleOnFreshSentences) {
  const auto& model = trained().model;
  LexicalOracle oracle;
  std::size_t agree = 0;
  auto fresh = synth_texts(300, 99);
  for (const auto& r : fresh) agree += model.classify(r.text).argmax() == oracle.classify(r.text).argmax();
  EXPECT_GE(static_cast<double>(agree) / fresh.size(), 0.99);
}

TEST(Classifier, OutputsAreDistributions) {
  const auto& model = trained().model;
  for (const char* text : {"well , i am so happy", "the dog", "zzz unknown words here"}) {
    auto r = model.inspect(text);
    EXPECT_NEAR(std::accumulate(r.distribution.probs.begin(), r.distribution.probs.end(), 0.0), 1.0, 1e-9);
    ASSERT_EQ(r.attention.size(), 1u);
    EXPECT_EQ(r.attention[0].size(), tokenize(text).size());
    EXPECT_NEAR(std::accumulate(r.attention[0].begin(), r.attention[0].end(), 0.0), 1.0, 1e-5);
  }
  EXPECT_THROW(model.classify("   "), ContractError);
}

TEST(Classifier, GradientMatchesFiniteDifferences) {
  ClassifierConfig c;
  c.hidden = 4;
  c.embed = 4;
  c.attention = 5;
  c.hops = 2;
  EmotionClassifier<double> model(c, toy_vocab(20));
  std::vector<ClassifierExample> batch = {{{15, 16, 17}, Emotion::joy}, {{18}, Emotion::fear}, {{19, 15}, Emotion::guilt}};
  auto r = check_params(model.parameters(), [&](Pass<double>& pass) { return model.loss(pass, batch); });
  EXPECT_LT(r.max_error, 1e-4) << "worst at " << r.worst;
}

TEST(Classifier, PaddingDoesNotLeakIntoShorterItems) {
  ClassifierConfig c;
  c.hidden = 4;
  c.embed = 4;
  c.attention = 4;
  EmotionClassifier<double> model(c, toy_vocab(20));
  std::vector<std::vector<TokenId>> alone = {{15, 16}};
  std::vector<std::vector<TokenId>> padded = {{15, 16}, {17, 18, 19, 15, 16}};
  Pass<double> pass;
  auto a = model.forward(pass, alone).logits.value();
  auto b = model.forward(pass, padded).logits.value();
  for (std::size_t k = 0; k < kNumEmotions; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(Classifier, RejectsNonEmotionLabelsAndSingleClassData) {
  EmotionClassifier<double> model(quick_config(), toy_vocab(20));
  std::vector<ClassifierExample> bad = {{{15}, Emotion::non_emotion}};
  Pass<double> pass;
  EXPECT_THROW(model.loss(pass, bad), ContractError);
  std::vector<LabeledText> one_class = {{"i am happy", Emotion::joy}, {"so glad", Emotion::joy}, {"meh", Emotion::non_emotion}};
  EXPECT_THROW(train_classifier<float>(one_class, quick_config()), DataError);
}

TEST(Classifier, SkipsNonEmotionRows) {
  auto data = synth_texts(100, 3);
  data.push_back({"nothing to see", Emotion::non_emotion});
  auto cfg = quick_config();
  cfg.epochs = 1;
  auto t = train_classifier<float>(data, cfg);
  EXPECT_EQ(t.metrics.skipped, 1u);
  EXPECT_EQ(t.metrics.n_train + t.metrics.n_heldout, 100u);
}

TEST(Metrics, MacroScoresFromConfusion) {
  ClassifierMetrics m;
  // anger: 3 right, 1 called disgust; disgust: 2 right; fear: 1 called anger
  m.confusion[0][0] = 3;
  m.confusion[0][1] = 1;
  m.confusion[1][1] = 2;
  m.confusion[2][0] = 1;
  finalize_metrics(m);
  EXPECT_DOUBLE_EQ(m.accuracy, 5.0 / 7.0);
  EXPECT_DOUBLE_EQ(m.per_class[0].precision, 0.75);
  EXPECT_DOUBLE_EQ(m.per_class[0].recall, 0.75);
  EXPECT_DOUBLE_EQ(m.per_class[1].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.per_class[1].f1, 0.8);
  EXPECT_DOUBLE_EQ(m.per_class[2].f1, 0.0);
  EXPECT_EQ(m.per_class[3].support, 0u);
  EXPECT_DOUBLE_EQ(m.precision, (0.75 + 2.0 / 3.0 + 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, (0.75 + 1.0 + 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, (0.75 + 0.8 + 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(m.published_reference.f1, 0.5433);
}

TEST(Labeling, ZeroThresholdNeverYieldsNonEmotion) {
  auto corpus = synth_corpus({400, 5, 0.5});
  auto labeled = label_corpus(corpus.oracle.scorer(), corpus.pairs, 0.0);
  EXPECT_EQ(labeled.stats.non_emotion, 0u);
  EXPECT_EQ(labeled.stats.total, 400u);
}

TEST(Labeling, NonEmotionShareGrowsWithThreshold) {
  const auto& model = trained().model;
  auto corpus = synth_corpus({300, 6, 0.3});
  std::size_t previous = 0;
  for (double theta : {0.0, 0.2, 0.35, 0.5, 0.8, 1.0}) {
    auto s = label_corpus(model.scorer(), corpus.pairs, theta).stats;
    EXPECT_GE(s.non_emotion, previous) << theta;
    previous = s.non_emotion;
  }
}

TEST(Labeling, NeutralShareIsRecovered) {
  const std::size_t n = 2000;
  const double p = 0.35;
  auto corpus = synth_corpus({n, 8, p});
  auto s = label_corpus(corpus.oracle.scorer(), corpus.pairs).stats;
  const double sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(s.non_emotion_fraction(), p, 3 * sigma);
  std::size_t matches = 0;
  auto labeled = label_corpus(corpus.oracle.scorer(), corpus.pairs);
  for (std::size_t i = 0; i < n; ++i) matches += labeled.pairs[i].emotion == corpus.pairs[i].emotion;
  EXPECT_EQ(matches, n);
}

TEST(Labeling, ClassifierDrivenLabelsTrackTheGrammar) {
  const auto& model = trained().model;
  auto corpus = synth_corpus({300, 12, 0.0});
  auto labeled = label_corpus(model.scorer(), corpus.pairs);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < labeled.pairs.size(); ++i) matches += labeled.pairs[i].emotion == corpus.pairs[i].emotion;
  EXPECT_GE(static_cast<double>(matches) / labeled.pairs.size(), 0.95);
}
