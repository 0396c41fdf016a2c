#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "emoseq/model.hpp"
#include "emoseq/scoring.hpp"

namespace emoseq {

using ordered_json = nlohmann::ordered_json;

/// Published per-emotion estimated accuracies (fractions) and their average.
struct PublishedAccuracy {
  std::array<double, kNumEmotions> per_emotion;
  double average;
};

inline std::optional<PublishedAccuracy> published_accuracy(Variant v) {
  switch (v) {
    case Variant::enc_bef:
      return PublishedAccuracy{{.6018, .7798, .8640, .4569, .9419, .8447, .5638, .8769, .9319}, .7624};
    case Variant::enc_aft:
      return PublishedAccuracy{{.6230, .7679, .8417, .4115, .9398, .8509, .5469, .8931, .9217}, .7552};
    case Variant::dec_rep:
      return PublishedAccuracy{{.6795, .7902, .8352, .4830, .9421, .8721, .5832, .9083, .9120}, .7784};
    case Variant::dec_start:
      return PublishedAccuracy{{.6681, .7842, .8410, .4742, .9418, .8055, .5425, .8944, .9068}, .7621};
    case Variant::dec_trans:
      return PublishedAccuracy{{.6427, .7833, .7715, .4969, .8842, .8361, .6282, .8203, .8664}, .7477};
    case Variant::dec_proj:
      return PublishedAccuracy{{.7848, .8643, .7370, .5912, .8983, .8056, .8514, .6180, .5092}, .7400};
    case Variant::enc_att:
      return PublishedAccuracy{{.6509, .7829, .8600, .3871, .9509, .9254, .6456, .8911, .9440}, .7820};
    case Variant::baseline:
      break;
  }
  return std::nullopt;
}

using ConfusionCounts = std::array<std::array<std::size_t, kNumEmotions>, kNumEmotions>;
using ConfusionMatrix = std::array<std::array<double, kNumEmotions>, kNumEmotions>;

/// Rows are instructed emotions, columns detected ones, both in emotion
/// order. Empty rows stay zero.
inline ConfusionMatrix normalize_rows(const ConfusionCounts& counts) {
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    std::size_t total = 0;
    for (auto c : counts[i]) total += c;
    if (total == 0) continue;
    for (std::size_t j = 0; j < kNumEmotions; ++j) m[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(total);
  }
  return m;
}

struct EvalReport {
  std::string variant;
  std::string config_digest;
  std::string scorer;
  std::array<double, kNumEmotions> per_emotion_accuracy{};
  double average = 0;
  ConfusionCounts confusion_counts{};
  ConfusionMatrix confusion_normalized{};
  std::size_t n_sources = 0;
  std::uint64_t seed = 0;
  std::optional<PublishedAccuracy> published_reference;
};

struct EvalOptions {
  std::uint64_t seed = 0;  // recorded only; identifies how the test set was drawn
  std::size_t max_len = kPaddingLength;
  std::size_t sources_per_batch = 8;
};

/// Greedy response for every (source, instructed emotion); the detected
/// emotion is the scorer's argmax over the nine emotions, no threshold.
/// Empty responses score as the uniform distribution.
template <std::floating_point T>
EvalReport evaluate(const Seq2SeqModel<T>& model, const Scorer& scorer, std::span<const std::vector<TokenId>> sources,
                    const EvalOptions& opts = {}) {
  if (scorer.tokenizer != kTokenizerId) {
    throw ContractError("scorer tokenizer '" + scorer.tokenizer + "' does not match the model's '" +
                        std::string(kTokenizerId) + "'");
  }
  if (sources.empty()) throw DataError("no test sources");
  EvalReport r;
  r.variant = std::string(name_of(model.variant()));
  r.config_digest = model.config_digest();
  r.scorer = scorer.name;
  r.n_sources = sources.size();
  r.seed = opts.seed;
  r.published_reference = published_accuracy(model.variant());
  const std::size_t step = std::max<std::size_t>(1, opts.sources_per_batch);
  for (std::size_t start = 0; start < sources.size(); start += step) {
    std::vector<std::vector<TokenId>> batch;
    std::vector<Emotion> emotions;
    for (std::size_t i = start; i < std::min(sources.size(), start + step); ++i)
      for (auto e : kEvaluatedEmotions) {
        batch.push_back(sources[i]);
        emotions.push_back(e);
      }
    auto decoded = model.greedy_decode(batch, emotions, opts.max_len);
    for (const auto& d : decoded) {
      const auto words = model.vocab().decode(d.tokens);
      const auto dist = words.empty() ? EmotionDistribution::uniform() : scorer.classify(join_tokens(words));
      ++r.confusion_counts[index_of(d.emotion)][index_of(dist.argmax())];
    }
  }
  r.confusion_normalized = normalize_rows(r.confusion_counts);
  double total = 0;
  for (std::size_t e = 0; e < kNumEmotions; ++e) total += r.per_emotion_accuracy[e] = r.confusion_normalized[e][e];
  r.average = total / kNumEmotions;
  return r;
}

inline ordered_json to_json(const EvalReport& r) {
  ordered_json acc = ordered_json::object();
  for (std::size_t e = 0; e < kNumEmotions; ++e) acc[std::string(kEmotionNames[e])] = r.per_emotion_accuracy[e];
  ordered_json j;
  j["variant"] = r.variant;
  j["per_emotion_accuracy"] = acc;
  j["average"] = r.average;
  j["confusion_counts"] = r.confusion_counts;
  j["confusion_normalized"] = r.confusion_normalized;
  j["n_sources"] = r.n_sources;
  j["seed"] = r.seed;
  j["emotions"] = std::vector<std::string>(kEmotionNames.begin(), kEmotionNames.begin() + kNumEmotions);
  j["config_digest"] = r.config_digest;
  j["scorer"] = r.scorer;
  if (r.published_reference) {
    ordered_json ref = ordered_json::object();
    for (std::size_t e = 0; e < kNumEmotions; ++e) ref[std::string(kEmotionNames[e])] = r.published_reference->per_emotion[e];
    j["published_reference"] = {{"per_emotion_accuracy", ref}, {"average", r.published_reference->average}};
  } else {
    j["published_reference"] = nullptr;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Attention traces

struct AttentionTrace {
  Emotion emotion = Emotion::non_emotion;
  std::vector<std::string> source_tokens;
  std::vector<std::string> output_tokens;
  std::vector<std::vector<double>> matrix;  // output × source
};

/// Decodes one response and keeps its attention rows, labeled with the
/// encoder's actual input (including any injected emotion token).
template <std::floating_point T>
AttentionTrace trace_attention(const Seq2SeqModel<T>& model, std::span<const TokenId> source, Emotion e,
                               std::size_t max_len = kPaddingLength) {
  auto d = model.greedy_decode(source, e, max_len);
  return {e, model.vocab().decode(d.source), model.vocab().decode(d.tokens), std::move(d.attention)};
}

inline ordered_json export_heatmap(const AttentionTrace& t) {
  ordered_json rows = ordered_json::array();
  for (const auto& row : t.matrix) {
    ordered_json r = ordered_json::array();
    for (double v : row) r.push_back(std::round(v * 1e6) / 1e6);
    rows.push_back(std::move(r));
  }
  ordered_json j;
  j["emotion"] = std::string(name_of(t.emotion));
  j["source_tokens"] = t.source_tokens;
  j["output_tokens"] = t.output_tokens;
  j["matrix"] = std::move(rows);
  return j;
}

inline AttentionTrace load_heatmap(const ordered_json& j) {
  AttentionTrace t;
  const auto name = j.at("emotion").get<std::string>();
  const auto e = parse_emotion(name);
  if (!e) throw FormatError("heatmap: unknown emotion '" + name + "'", 0);
  t.emotion = *e;
  t.source_tokens = j.at("source_tokens").get<std::vector<std::string>>();
  t.output_tokens = j.at("output_tokens").get<std::vector<std::string>>();
  t.matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
  if (t.matrix.size() != t.output_tokens.size()) throw FormatError("heatmap: one row per output token required", 0);
  for (const auto& row : t.matrix)
    if (row.size() != t.source_tokens.size()) throw FormatError("heatmap: one column per source token required", 0);
  return t;
}

}  // namespace emoseq
