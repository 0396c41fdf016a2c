#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "emoseq/corpus.hpp"
#include "emoseq/scoring.hpp"
#include "emoseq/text.hpp"

using namespace emoseq;
using Tokens = std::vector<std::string>;

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("You scared me today at the hotel"), (Tokens{"you", "scared", "me", "today", "at", "the", "hotel"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("don't stop."), (Tokens{"don", "'", "t", "stop", "."}));
  EXPECT_EQ(tokenize("  Hi,\tTHERE!! "), (Tokens{"hi", ",", "there", "!", "!"}));
}

TEST(Emotion, FixedOrderAndNames) {
  EXPECT_EQ(kNumEmotionLabels, 10u);
  EXPECT_EQ(index_of(Emotion::non_emotion), 9u);
  EXPECT_EQ(name_of(Emotion::thankfulness), "thankfulness");
  EXPECT_EQ(parse_emotion("non-emotion"), Emotion::non_emotion);
  EXPECT_FALSE(parse_emotion("boredom").has_value());
}

TEST(Vocabulary, ReservedAndEmotionTokensComeFirst) {
  Vocabulary v;
  EXPECT_EQ(v.size(), Vocabulary::kReserved);
  EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocabulary::kBos), "<s>");
  EXPECT_EQ(v.token(Vocabulary::kEos), "</s>");
  EXPECT_EQ(v.token(Vocabulary::kUnk), "<unk>");
  for (std::size_t e = 0; e < kNumEmotionLabels; ++e) {
    const auto id = Vocabulary::emotion_token(static_cast<Emotion>(e));
    EXPECT_EQ(v.token(id), "<" + std::string(kEmotionNames[e]) + ">");
    EXPECT_TRUE(Vocabulary::is_emotion_token(id));
  }
  EXPECT_FALSE(Vocabulary::is_emotion_token(Vocabulary::kUnk));
}

TEST(BuildVocab, FrequencyOrderThenLexicographic) {
  std::vector<Tokens> corpus = {{"a", "a", "b"}};
  auto v = build_vocab(std::span<const Tokens>(corpus), 20);
  EXPECT_LT(v.id("a"), v.id("b"));
  std::vector<Tokens> ties = {{"zeta", "alpha", "mid"}};
  auto t = build_vocab(std::span<const Tokens>(ties), 20);
  EXPECT_LT(t.id("alpha"), t.id("mid"));
  EXPECT_LT(t.id("mid"), t.id("zeta"));
}

TEST(BuildVocab, CapBoundaryAndUnk) {
  std::vector<Tokens> corpus = {{"a", "b", "c"}, {"a", "b"}, {"a"}};
  auto none = build_vocab(std::span<const Tokens>(corpus), 14);
  EXPECT_EQ(none.size(), 14u);
  EXPECT_EQ(none.id("a"), Vocabulary::kUnk);
  auto two = build_vocab(std::span<const Tokens>(corpus), 16);
  EXPECT_EQ(two.size(), 16u);
  EXPECT_EQ(two.id("c"), Vocabulary::kUnk);
  EXPECT_NE(two.id("b"), Vocabulary::kUnk);
  EXPECT_THROW(build_vocab(std::span<const Tokens>(corpus), 13), ContractError);
  std::vector<Tokens> empty;
  EXPECT_THROW(build_vocab(std::span<const Tokens>(empty), 20), DataError);
}

TEST(BuildVocab, DeterministicAndRoundTrips) {
  auto corpus = synth_corpus({300, 2});
  auto a = build_vocab(std::span<const TextPair>(corpus.pairs), 60);
  auto b = build_vocab(std::span<const TextPair>(corpus.pairs), 60);
  EXPECT_EQ(a.tokens(), b.tokens());
  std::vector<TokenId> all(a.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  EXPECT_EQ(a.encode(a.decode(all)), all);
}

TEST(Vocabulary, FromTokensValidates) {
  auto tokens = Vocabulary().tokens();
  tokens.push_back("x");
  EXPECT_EQ(Vocabulary::from_tokens(tokens).id("x"), 14u);
  tokens.push_back("x");
  EXPECT_THROW(Vocabulary::from_tokens(tokens), FormatError);
  Tokens bad = {"<pad>"};
  EXPECT_THROW(Vocabulary::from_tokens(bad), FormatError);
}

TEST(LoadEmbeddings, CopiesKnownRowsAndFillsTheRest) {
  Vocabulary v;
  v.add("hello");
  v.add("absent");
  std::istringstream in("2 2\nhello 0.1 0.2\nother 1 1\n");
  Rng rng(1);
  auto table = load_embeddings<double>(in, v, rng);
  EXPECT_EQ(table.table.shape(), (Shape{v.size(), 2}));
  EXPECT_TRUE(table.trainable);
  EXPECT_EQ(table.loaded, 1u);
  EXPECT_DOUBLE_EQ(table.table.at(v.id("hello"), 0), 0.1);
  EXPECT_DOUBLE_EQ(table.table.at(v.id("hello"), 1), 0.2);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_GT(table.table.at(v.id("absent"), j), -0.1);
    EXPECT_LT(table.table.at(v.id("absent"), j), 0.1);
  }
}

TEST(LoadEmbeddings, InconsistentWidthNamesTheLine) {
  Vocabulary v;
  std::istringstream in("a 1 2\nb 1 2 3\n");
  Rng rng(1);
  try {
    load_embeddings<double>(in, v, rng);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(IngestPairs, DedupLengthAndTruncation) {
  std::string long_target;
  for (int i = 0; i < 40; ++i) long_target += "w" + std::to_string(i) + " ";
  std::ostringstream file;
  file << "one two three four five six\tseven eight nine ten eleven twelve\tjoy\n";
  file << "one two three four five six\tseven eight nine ten eleven twelve\tjoy\n";
  file << "too short here\tseven eight nine ten eleven twelve\n";
  file << "only one field\n";
  file << "a b c d e f\t" << long_target << "\n";
  std::istringstream in(file.str());
  auto r = ingest_pairs(in);
  ASSERT_EQ(r.pairs.size(), 2u);
  EXPECT_EQ(r.duplicates, 1u);
  EXPECT_EQ(r.too_short, 1u);
  EXPECT_EQ(r.malformed, 1u);
  EXPECT_EQ(r.truncated, 1u);
  EXPECT_EQ(r.pairs[0].emotion, Emotion::joy);
  EXPECT_FALSE(r.pairs[1].emotion.has_value());
  EXPECT_EQ(r.pairs[1].target.size(), 30u);
}

TEST(IngestPairs, MinWordsConfigurable) {
  std::istringstream in("hi there\tok\n");
  EXPECT_EQ(ingest_pairs(in, IngestOptions{1}).pairs.size(), 1u);
}

TEST(IngestPairs, UnknownEmotionIsAnErrorWithLine) {
  std::istringstream in("a b c d e f\tg h i j k l\tjoy\na b c d e f\tg h i j k m\tboredom\n");
  try {
    ingest_pairs(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(IngestPairs, RequiredLabelsNameTheLine) {
  std::istringstream in("a b c d e f\tg h i j k l\tjoy\na b c d e f\tg h i j k m\n");
  try {
    ingest_pairs(in, IngestOptions{6, 30, true});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(IngestPairs, WriteThenReadRoundTrips) {
  auto corpus = synth_corpus({50, 3});
  std::ostringstream out;
  write_pairs(out, corpus.pairs);
  std::istringstream in(out.str());
  auto back = ingest_pairs(in);
  EXPECT_EQ(back.pairs.size() + back.duplicates, corpus.pairs.size());
  EXPECT_EQ(back.pairs.front().target, corpus.pairs.front().target);
  EXPECT_EQ(back.pairs.front().emotion, corpus.pairs.front().emotion);
}

TEST(LabeledTexts, RoundTripAndBadRows) {
  std::vector<LabeledText> rows = {{"i am so happy", Emotion::joy}, {"ugh", Emotion::disgust}};
  std::ostringstream out;
  write_labeled_texts(out, rows);
  std::istringstream in(out.str());
  auto back = read_labeled_texts(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].emotion, Emotion::disgust);
  std::istringstream bad("fine\tjoy\nno label here\n");
  EXPECT_THROW(read_labeled_texts(bad), FormatError);
}

TEST(Split, RatiosAndDeterminism) {
  std::vector<int> items(100);
  for (int i = 0; i < 100; ++i) items[i] = i;
  auto [train, dev] = split(items, 0.95, 4);
  EXPECT_EQ(train.size(), 95u);
  EXPECT_EQ(dev.size(), 5u);
  std::set<int> all(train.begin(), train.end());
  all.insert(dev.begin(), dev.end());
  EXPECT_EQ(all.size(), 100u);
  auto [train2, dev2] = split(items, 0.95, 4);
  EXPECT_EQ(train, train2);
  EXPECT_EQ(dev, dev2);
  auto [a, b] = split(std::vector<int>{1, 2}, 0.5, 1);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
  EXPECT_THROW(split(std::vector<int>{1}, 0.5, 1), DataError);
}

TEST(Synth, EveryTargetHasExactlyOneMarkerAndOracleAgrees) {
  auto corpus = synth_corpus({2000, 7});
  ASSERT_EQ(corpus.pairs.size(), 2000u);
  for (const auto& p : corpus.pairs) {
    std::size_t markers = 0;
    for (const auto& t : p.target) markers += corpus.oracle.emotion_of(t).has_value();
    for (const auto& t : p.source) EXPECT_FALSE(corpus.oracle.emotion_of(t).has_value());
    EXPECT_EQ(markers, 1u);
    ASSERT_TRUE(p.emotion.has_value());
    EXPECT_EQ(corpus.oracle.classify_tokens(p.target).argmax(), *p.emotion);
    EXPECT_EQ(corpus.oracle.classify(join_tokens(p.target)).argmax(), *p.emotion);
  }
}

TEST(Synth, LabelsUniformWithinThreeSigma) {
  auto corpus = synth_corpus({9000, 11});
  std::array<std::size_t, kNumEmotions> counts{};
  for (const auto& p : corpus.pairs) ++counts[index_of(*p.emotion)];
  const double expect = 1000.0, sigma = std::sqrt(9000.0 * (1.0 / 9) * (8.0 / 9));
  for (auto c : counts) EXPECT_NEAR(static_cast<double>(c), expect, 3 * sigma);
}

TEST(Synth, NeutralRepliesCarryNoMarker) {
  auto corpus = synth_corpus({1000, 5, 0.35});
  std::size_t neutral = 0;
  for (const auto& p : corpus.pairs) {
    if (*p.emotion != Emotion::non_emotion) continue;
    ++neutral;
    EXPECT_EQ(corpus.oracle.classify_tokens(p.target).max_probability(), 1.0 / 9);
  }
  EXPECT_NEAR(neutral / 1000.0, 0.35, 0.05);
}

TEST(Synth, SameSeedSameCorpus) {
  auto a = synth_corpus({100, 9}), b = synth_corpus({100, 9});
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(a.pairs[i].target, b.pairs[i].target);
}

TEST(Threshold, Rule) {
  EmotionDistribution d{};
  d.probs.fill(0.7 / 8);
  d.probs[2] = 0.30;
  EXPECT_EQ(apply_threshold(d), Emotion::non_emotion);
  d.probs.fill(0.5 / 8);
  d.probs[4] = 0.5;
  EXPECT_EQ(apply_threshold(d), Emotion::sadness);
  EXPECT_EQ(apply_threshold(EmotionDistribution::uniform(), 0.35), Emotion::non_emotion);
  EXPECT_EQ(apply_threshold(EmotionDistribution::uniform(), 0.0), Emotion::anger);
  EXPECT_THROW(apply_threshold(d, 1.5), ContractError);
}
