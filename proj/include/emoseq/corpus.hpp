#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "emoseq/emotion.hpp"
#include "emoseq/errors.hpp"
#include "emoseq/random.hpp"
#include "emoseq/scoring.hpp"
#include "emoseq/tensor.hpp"
#include "emoseq/text.hpp"

namespace emoseq {

inline constexpr std::size_t kPaddingLength = 30;

/// Tokenized dialogue exchange as read from disk.
struct TextPair {
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::optional<Emotion> emotion;
};

/// Id-encoded dialogue exchange.
struct DialoguePair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  std::optional<Emotion> emotion;
};

inline std::vector<DialoguePair> encode_pairs(const Vocabulary& vocab, std::span<const TextPair> pairs) {
  std::vector<DialoguePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.encode(p.source), vocab.encode(p.target), p.emotion});
  return out;
}

inline Vocabulary build_vocab(std::span<const TextPair> pairs, std::size_t cap) {
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    sentences.push_back(p.source);
    sentences.push_back(p.target);
  }
  return build_vocab(std::span<const std::vector<std::string>>(sentences), cap);
}

// ---------------------------------------------------------------------------
// Corpus TSV: source TAB target [TAB emotion-name]

struct IngestOptions {
  std::size_t min_words = 6;
  std::size_t padding = kPaddingLength;
  bool require_labels = false;  // a row without an emotion field is a DataError
};

struct IngestResult {
  std::vector<TextPair> pairs;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
  std::size_t too_short = 0;
  std::size_t truncated = 0;
};

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline std::optional<Emotion> parse_emotion_field(const std::string& field, std::size_t line_no) {
  if (field.empty()) return std::nullopt;
  auto e = parse_emotion(field);
  if (!e) throw DataError("unknown emotion '" + field + "' on line " + std::to_string(line_no));
  return e;
}

inline IngestResult ingest_pairs(std::istream& in, const IngestOptions& opts = {}) {
  IngestResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > 3) {
      ++result.malformed;
      continue;
    }
    TextPair pair{tokenize(fields[0]), tokenize(fields[1]),
                  fields.size() == 3 ? parse_emotion_field(fields[2], line_no) : std::nullopt};
    if (opts.require_labels && !pair.emotion) throw DataError("line " + std::to_string(line_no) + " has no emotion label");
    if (pair.source.size() < std::max<std::size_t>(opts.min_words, 1) ||
        pair.target.size() < std::max<std::size_t>(opts.min_words, 1)) {
      ++result.too_short;
      continue;
    }
    std::string key = join_tokens(pair.source) + '\t' + join_tokens(pair.target);
    if (!seen.insert(std::move(key)).second) {
      ++result.duplicates;
      continue;
    }
    for (auto* side : {&pair.source, &pair.target}) {
      if (side->size() > opts.padding) {
        side->resize(opts.padding);
        ++result.truncated;
      }
    }
    result.pairs.push_back(std::move(pair));
  }
  return result;
}

inline IngestResult ingest_pairs(const std::string& path, const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return ingest_pairs(in, opts);
}

inline void write_pairs(std::ostream& out, std::span<const TextPair> pairs) {
  for (const auto& p : pairs) {
    out << join_tokens(p.source) << '\t' << join_tokens(p.target);
    if (p.emotion) out << '\t' << name_of(*p.emotion);
    out << '\n';
  }
}

/// Classifier training data: text TAB emotion-name.
struct LabeledText {
  std::string text;
  Emotion emotion;
};

inline std::vector<LabeledText> read_labeled_texts(std::istream& in) {
  std::vector<LabeledText> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2) throw FormatError("expected 'text<TAB>emotion'", line_no);
    auto e = parse_emotion_field(fields[1], line_no);
    if (!e) throw FormatError("missing emotion label", line_no);
    rows.push_back({fields[0], *e});
  }
  return rows;
}

inline void write_labeled_texts(std::ostream& out, std::span<const LabeledText> rows) {
  for (const auto& r : rows) out << r.text << '\t' << name_of(r.emotion) << '\n';
}

// ---------------------------------------------------------------------------

/// Seeded shuffle then a disjoint, exhaustive train/dev split.
template <class Item>
std::pair<std::vector<Item>, std::vector<Item>> split(std::vector<Item> items, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split ratio must lie strictly between 0 and 1");
  if (items.size() < 2) throw DataError("need at least 2 items to split");
  Rng rng(seed);
  rng.shuffle(std::span<Item>(items));
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(items.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, items.size() - 1);
  std::vector<Item> dev(std::make_move_iterator(items.begin() + static_cast<std::ptrdiff_t>(n_train)),
                        std::make_move_iterator(items.end()));
  items.resize(n_train);
  return {std::move(items), std::move(dev)};
}

// ---------------------------------------------------------------------------
// Pretrained embeddings: optional "count dim" header, then "word v1 ... vd".

template <std::floating_point T>
struct EmbeddingTable {
  Tensor<T> table;  // |V| × d_w
  bool trainable = true;
  std::size_t loaded = 0;  // rows copied from the file
};

template <std::floating_point T>
EmbeddingTable<T> load_embeddings(std::istream& in, const Vocabulary& vocab, Rng& rng) {
  std::vector<std::pair<TokenId, std::vector<T>>> rows;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<T> values;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(static_cast<T>(std::stod(tok, &used)));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("non-numeric embedding component '" + tok + "'", line_no);
      }
    }
    if (line_no == 1 && values.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) {
      continue;  // "count dim" header
    }
    if (values.empty()) throw FormatError("embedding line has no components", line_no);
    if (width == 0) width = values.size();
    if (values.size() != width) {
      throw FormatError("embedding width " + std::to_string(values.size()) + " differs from " +
                            std::to_string(width),
                        line_no);
    }
    if (vocab.contains(word)) rows.emplace_back(vocab.id(word), std::move(values));
  }
  if (width == 0) throw FormatError("embedding file contains no vectors");
  EmbeddingTable<T> out{Tensor<T>({vocab.size(), width}), true, 0};
  for (auto& v : out.table.data()) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  std::vector<bool> filled(vocab.size(), false);
  for (auto& [id, values] : rows) {
    std::copy(values.begin(), values.end(), out.table.raw() + id * width);
    if (!filled[id]) ++out.loaded;
    filled[id] = true;
  }
  return out;
}

template <std::floating_point T>
EmbeddingTable<T> load_embeddings(const std::string& path, const Vocabulary& vocab, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  return load_embeddings<T>(in, vocab, rng);
}

// ---------------------------------------------------------------------------
// Synthetic emotion-marked corpus

/// Each emotion owns three marker words; the lexicons are disjoint from
/// each other and from every other word the generator emits.
inline constexpr std::array<std::array<std::string_view, 3>, kNumEmotions> kMarkerLexicon = {{
    {"furious", "outraged", "livid"},
    {"gross", "revolting", "nasty"},
    {"scared", "terrified", "afraid"},
    {"happy", "delighted", "glad"},
    {"sad", "heartbroken", "gloomy"},
    {"astonished", "amazed", "shocked"},
    {"adore", "cherish", "beloved"},
    {"thanks", "grateful", "thankful"},
    {"sorry", "ashamed", "guilty"},
}};

/// Classifies text by the marker words it contains: one-hot when markers of
/// a single emotion appear, proportional when several do, uniform when none.
class LexicalOracle {
 public:
  std::optional<Emotion> emotion_of(std::string_view token) const {
    for (std::size_t e = 0; e < kNumEmotions; ++e)
      for (auto m : kMarkerLexicon[e])
        if (m == token) return static_cast<Emotion>(e);
    return std::nullopt;
  }

  EmotionDistribution classify_tokens(std::span<const std::string> tokens) const {
    std::array<double, kNumEmotions> counts{};
    double hits = 0;
    for (const auto& t : tokens) {
      if (auto e = emotion_of(t)) {
        counts[index_of(*e)] += 1;
        hits += 1;
      }
    }
    if (hits == 0) return EmotionDistribution::uniform();
    EmotionDistribution d;
    for (std::size_t e = 0; e < kNumEmotions; ++e) d.probs[e] = counts[e] / hits;
    return d;
  }

  EmotionDistribution classify(std::string_view text) const { return classify_tokens(tokenize(text)); }

  Scorer scorer() const {
    return {"oracle", std::string(kTokenizerId), [oracle = *this](std::string_view t) { return oracle.classify(t); }};
  }
};

struct SynthOptions {
  std::size_t n_pairs = 2000;
  std::uint64_t seed = 7;
  /// Fraction of pairs whose target carries no marker (labeled non-emotion).
  double neutral_fraction = 0.0;
};

struct SynthCorpus {
  std::vector<TextPair> pairs;
  LexicalOracle oracle;
};

namespace detail {
inline constexpr std::array<std::string_view, 6> kSubjects = {"i", "you", "we", "they", "he", "she"};
inline constexpr std::array<std::string_view, 6> kReplySubjects = {"you", "i", "you", "they", "he", "she"};
inline constexpr std::array<std::string_view, 8> kVerbs = {"saw", "found", "visited", "left", "painted", "bought", "sold", "cleaned"};
inline constexpr std::array<std::string_view, 6> kAdjectives = {"old", "new", "red", "big", "small", "quiet"};
inline constexpr std::array<std::string_view, 8> kNouns = {"hotel", "car", "house", "garden", "letter", "boat", "dog", "book"};
inline constexpr std::array<std::string_view, 6> kTimes = {"today", "yesterday", "tonight", "again", "earlier", "recently"};
}  // namespace detail

/// Template-grammar corpus. Sources read "<subject> <verb> the <adj> <noun>
/// <time>"; targets open with "well ," and then follow a frame chosen by the
/// emotion (index mod 3) that reuses source words and carries exactly one
/// marker of the pair's emotion. The shared opener matters for enc-att, whose
/// first output token cannot see the emotion.
inline SynthCorpus synth_corpus(const SynthOptions& opts) {
  using namespace detail;
  if (opts.n_pairs == 0) throw ContractError("synth_corpus: n_pairs must be positive");
  Rng rng(opts.seed);
  SynthCorpus corpus;
  corpus.pairs.reserve(opts.n_pairs);
  auto s = [](std::string_view w) { return std::string(w); };
  for (std::size_t i = 0; i < opts.n_pairs; ++i) {
    const std::size_t subj = rng.index(kSubjects.size());
    const std::size_t verb = rng.index(kVerbs.size());
    const std::size_t adj = rng.index(kAdjectives.size());
    const std::size_t noun = rng.index(kNouns.size());
    const std::size_t time = rng.index(kTimes.size());
    TextPair pair;
    pair.source = {s(kSubjects[subj]), s(kVerbs[verb]), "the", s(kAdjectives[adj]), s(kNouns[noun]), s(kTimes[time])};
    const bool neutral = opts.neutral_fraction > 0 && rng.uniform(0.0, 1.0) < opts.neutral_fraction;
    if (neutral) {
      pair.emotion = Emotion::non_emotion;
      pair.target = {"well", ",", "ok", s(kReplySubjects[subj]), s(kVerbs[verb]), "it", s(kTimes[time]), "."};
    } else {
      const std::size_t e = rng.index(kNumEmotions);
      const std::string marker = s(kMarkerLexicon[e][rng.index(3)]);
      pair.emotion = static_cast<Emotion>(e);
      switch (e % 3) {
        case 0:
          pair.target = {"well", ",", marker, "!", "the", s(kAdjectives[adj]), s(kNouns[noun]), "?"};
          break;
        case 1:
          pair.target = {"well", ",", s(kReplySubjects[subj]), s(kVerbs[verb]), "it", s(kTimes[time]), ",", marker, "."};
          break;
        default:
          pair.target = {"well", ",", "that", s(kNouns[noun]), "makes", "me", marker, "."};
          break;
      }
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

}  // namespace emoseq
