#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emoseq/adam.hpp"
#include "emoseq/autodiff.hpp"
#include "emoseq/corpus.hpp"
#include "emoseq/lstm.hpp"
#include "emoseq/model.hpp"
#include "emoseq/scoring.hpp"
#include "emoseq/text.hpp"

namespace emoseq {

struct ClassifierConfig {
  std::string profile = "desk";
  std::size_t hidden = 32;  // D_c per direction
  std::size_t embed = 32;
  std::size_t attention = 32;  // width of the additive scorer
  std::size_t hops = 1;
  std::size_t vocab_cap = 2000;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 11;
  double clip_norm = 5.0;
  double split_ratio = 0.9;
};

inline ClassifierConfig classifier_paper_profile() {
  ClassifierConfig c;
  c.profile = "paper";
  c.hidden = 300;
  c.embed = 300;
  c.attention = 300;
  c.vocab_cap = 25000;
  c.lr = 1e-3;
  c.batch_size = 64;
  return c;
}

/// Published CBET scores, kept for context in reports.
struct ClassifierReference {
  double f1 = 0.5433;
  double precision = 0.6620;
  double recall = 0.5129;
};

/// One tokenized, id-encoded example.
struct ClassifierExample {
  std::vector<TokenId> ids;
  Emotion label = Emotion::anger;
};

/// Bidirectional LSTM, additive self-attention pooling (one or more hops),
/// and a linear layer over the nine emotions. Non-emotion is never a class;
/// it only appears after thresholding.
template <std::floating_point T>
class EmotionClassifier {
 public:
  EmotionClassifier(ClassifierConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
    if (config_.hidden == 0 || config_.embed == 0 || config_.attention == 0 || config_.hops == 0) {
      throw ContractError("classifier dimensions must be positive");
    }
    Rng rng(config_.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    for (const auto& spec : layout()) {
      Tensor<T> value(spec.shape);
      if (spec.name == "embedding") {
        for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-0.1, 0.1));
      } else if (!spec.name.ends_with("bias")) {
        for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      }
      params_.emplace_back(spec.name, std::move(value));
    }
  }

  const ClassifierConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }

  std::vector<ParamSpec> layout() const {
    const std::size_t D = config_.hidden, W = config_.embed, A = config_.attention, H = config_.hops;
    return {{"embedding", {vocab_.size(), W}},
            {"forward.weight", {W + D, 4 * D}},
            {"forward.bias", {4 * D}},
            {"backward.weight", {W + D, 4 * D}},
            {"backward.bias", {4 * D}},
            {"attention.weight", {2 * D, A}},
            {"attention.vector", {A, H}},
            {"output.weight", {2 * D * H, kNumEmotions}},
            {"output.bias", {kNumEmotions}}};
  }

  std::span<Parameter<T>> parameters() noexcept { return params_; }
  std::span<const Parameter<T>> parameters() const noexcept { return params_; }

  const Parameter<T>& parameter(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return p;
    throw ContractError("classifier has no parameter '" + std::string(name) + "'");
  }
  Parameter<T>& parameter(std::string_view name) {
    return const_cast<Parameter<T>&>(std::as_const(*this).parameter(name));
  }

  struct Forward {
    Var<T> logits;                 // [B×9]
    std::vector<Var<T>> attention;  // one [B×m] per hop
  };

  Forward forward(Pass<T>& pass, std::span<const std::vector<TokenId>> batch) const {
    const std::size_t B = batch.size(), D = config_.hidden;
    if (B == 0) throw ContractError("classifier: empty batch");
    std::size_t m = 0;
    for (const auto& ids : batch) {
      if (ids.empty()) throw ContractError("classifier: empty token sequence");
      m = std::max(m, ids.size());
    }
    std::vector<std::uint8_t> mask(B * m, 0);
    Var<T> emb = pass.bind(parameter("embedding"));
    std::vector<Var<T>> inputs;
    for (std::size_t t = 0; t < m; ++t) {
      std::vector<std::size_t> ids(B, Vocabulary::kPad);
      for (std::size_t b = 0; b < B; ++b)
        if (t < batch[b].size()) {
          ids[b] = batch[b][t];
          mask[b * m + t] = 1;
        }
      inputs.push_back(gather_rows(emb, std::move(ids)));
    }
    auto live = [&](std::size_t t) {
      std::vector<std::uint8_t> l(B);
      for (std::size_t b = 0; b < B; ++b) l[b] = mask[b * m + t];
      return l;
    };
    const LstmCellParams<T> fwd{&parameter("forward.weight"), &parameter("forward.bias")};
    const LstmCellParams<T> bwd{&parameter("backward.weight"), &parameter("backward.bias")};
    std::vector<Var<T>> hf(m), hb(m);
    {
      Var<T> h = Var<T>::constant(Tensor<T>({B, D})), c = h;
      for (std::size_t t = 0; t < m; ++t) {
        auto [h2, c2] = fwd.step(pass, inputs[t], h, c);
        const auto l = live(t);
        h = where_rows(l, h2, h);
        c = where_rows(l, c2, c);
        hf[t] = h;
      }
    }
    {
      // right padding means the reverse pass starts from a zero state at
      // each item's last real token
      Var<T> h = Var<T>::constant(Tensor<T>({B, D})), c = h;
      for (std::size_t t = m; t-- > 0;) {
        auto [h2, c2] = bwd.step(pass, inputs[t], h, c);
        const auto l = live(t);
        h = where_rows(l, h2, h);
        c = where_rows(l, c2, c);
        hb[t] = h;
      }
    }
    std::vector<Var<T>> u(m);
    for (std::size_t t = 0; t < m; ++t) u[t] = concat<T>({hf[t], hb[t]}, 1);
    Var<T> states = stack_steps<T>(u);  // [B×m×2D]
    Var<T> flat = reshape(states, {B * m, 2 * D});
    Var<T> scores = matmul(tanh(matmul(flat, pass.bind(parameter("attention.weight")))),
                           pass.bind(parameter("attention.vector")));  // [Bm×H]
    Forward out;
    std::vector<Var<T>> pooled;
    for (std::size_t k = 0; k < config_.hops; ++k) {
      Var<T> s = reshape(slice(scores, 1, k, k + 1), {B, m});
      Var<T> alpha = masked_softmax(s, mask);
      out.attention.push_back(alpha);
      pooled.push_back(weighted_sum(alpha, states));
    }
    Var<T> features = pooled.size() == 1 ? pooled.front() : concat<T>(pooled, 1);
    out.logits = add_row(matmul(features, pass.bind(parameter("output.weight"))), pass.bind(parameter("output.bias")));
    return out;
  }

  /// Mean cross-entropy over the batch.
  Var<T> loss(Pass<T>& pass, std::span<const ClassifierExample> batch) const {
    std::vector<std::vector<TokenId>> ids;
    std::vector<std::size_t> labels;
    for (const auto& ex : batch) {
      if (ex.label == Emotion::non_emotion) throw ContractError("non-emotion is not a classifier class");
      ids.push_back(ex.ids);
      labels.push_back(index_of(ex.label));
    }
    auto f = forward(pass, ids);
    return scale(cross_entropy_sum(f.logits, std::move(labels), std::vector<std::uint8_t>(batch.size(), 1)),
                 T(1) / static_cast<T>(batch.size()));
  }

  std::vector<TokenId> encode(std::string_view text) const {
    auto tokens = tokenize(text);
    if (tokens.empty()) throw ContractError("classify: text has no tokens");
    return vocab_.encode(tokens);
  }

  struct Result {
    EmotionDistribution distribution;
    std::vector<std::vector<double>> attention;  // per hop, one weight per token
  };

  Result inspect(std::string_view text) const {
    std::vector<std::vector<TokenId>> one{encode(text)};
    Pass<T> pass;
    auto f = forward(pass, one);
    Result r;
    const auto& L = f.logits.value();
    double top = -INFINITY;
    for (std::size_t e = 0; e < kNumEmotions; ++e) top = std::max(top, static_cast<double>(L[e]));
    double z = 0;
    for (std::size_t e = 0; e < kNumEmotions; ++e) z += r.distribution.probs[e] = std::exp(static_cast<double>(L[e]) - top);
    for (auto& p : r.distribution.probs) p /= z;
    for (const auto& a : f.attention) {
      std::vector<double> row;
      for (T v : a.value().data()) row.push_back(static_cast<double>(v));
      r.attention.push_back(std::move(row));
    }
    return r;
  }

  EmotionDistribution classify(std::string_view text) const { return inspect(text).distribution; }

  /// Shares this model by copy so the scorer stays valid on its own.
  Scorer scorer() const {
    return {"classifier", std::string(kTokenizerId), [model = *this](std::string_view t) { return model.classify(t); }};
  }

 private:
  ClassifierConfig config_;
  Vocabulary vocab_;
  std::vector<Parameter<T>> params_;
};

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

/// Scores from a 9×9 count table (gold row × predicted column). Macro
/// averages run over classes with held-out support.
struct ClassifierMetrics {
  std::array<std::array<std::size_t, kNumEmotions>, kNumEmotions> confusion{};
  std::array<ClassMetrics, kNumEmotions> per_class{};
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  std::size_t n_train = 0, n_heldout = 0, skipped = 0;
  ClassifierReference published_reference;
};

inline void finalize_metrics(ClassifierMetrics& m) {
  std::size_t correct = 0, total = 0, classes = 0;
  double p_sum = 0, r_sum = 0, f_sum = 0;
  for (std::size_t k = 0; k < kNumEmotions; ++k) {
    std::size_t tp = m.confusion[k][k], gold = 0, predicted = 0;
    for (std::size_t j = 0; j < kNumEmotions; ++j) {
      gold += m.confusion[k][j];
      predicted += m.confusion[j][k];
    }
    correct += tp;
    total += gold;
    auto& c = m.per_class[k];
    c.support = gold;
    c.precision = predicted ? static_cast<double>(tp) / predicted : 0.0;
    c.recall = gold ? static_cast<double>(tp) / gold : 0.0;
    c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    if (gold == 0) continue;
    ++classes;
    p_sum += c.precision;
    r_sum += c.recall;
    f_sum += c.f1;
  }
  m.accuracy = total ? static_cast<double>(correct) / total : 0.0;
  m.precision = classes ? p_sum / classes : 0.0;
  m.recall = classes ? r_sum / classes : 0.0;
  m.f1 = classes ? f_sum / classes : 0.0;
}

template <std::floating_point T>
ClassifierMetrics score_classifier(const EmotionClassifier<T>& model, std::span<const ClassifierExample> examples) {
  ClassifierMetrics m;
  for (std::size_t start = 0; start < examples.size(); start += 64) {
    std::vector<std::vector<TokenId>> ids;
    const std::size_t end = std::min(examples.size(), start + 64);
    for (std::size_t i = start; i < end; ++i) ids.push_back(examples[i].ids);
    Pass<T> pass;
    const auto& L = model.forward(pass, ids).logits.value();
    for (std::size_t i = start; i < end; ++i) {
      const T* row = L.raw() + (i - start) * kNumEmotions;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + kNumEmotions) - row);
      ++m.confusion[index_of(examples[i].label)][pred];
    }
  }
  m.n_heldout = examples.size();
  finalize_metrics(m);
  return m;
}

template <std::floating_point T>
struct ClassifierTraining {
  EmotionClassifier<T> model;
  ClassifierMetrics metrics;
  std::vector<double> loss_curve;  // mean loss per epoch
};

/// Builds a vocabulary from the training texts, holds out a seeded slice,
/// and trains with Adam. Non-emotion rows are skipped.
template <std::floating_point T>
ClassifierTraining<T> train_classifier(std::span<const LabeledText> data, const ClassifierConfig& config) {
  std::vector<std::pair<std::vector<std::string>, Emotion>> rows;
  std::size_t skipped = 0;
  std::array<bool, kNumEmotions> seen{};
  for (const auto& r : data) {
    auto tokens = tokenize(r.text);
    if (r.emotion == Emotion::non_emotion || tokens.empty()) {
      ++skipped;
      continue;
    }
    seen[index_of(r.emotion)] = true;
    rows.emplace_back(std::move(tokens), r.emotion);
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("classifier training needs at least two emotion classes");
  auto [train_rows, held_rows] = split(std::move(rows), config.split_ratio, config.seed);
  std::vector<std::vector<std::string>> sentences;
  for (const auto& r : train_rows) sentences.push_back(r.first);
  Vocabulary vocab = build_vocab(std::span<const std::vector<std::string>>(sentences), config.vocab_cap);
  auto encode = [&](const auto& rs) {
    std::vector<ClassifierExample> out;
    for (const auto& r : rs) out.push_back({vocab.encode(r.first), r.second});
    return out;
  };
  auto train = encode(train_rows);
  auto held = encode(held_rows);

  ClassifierTraining<T> result{EmotionClassifier<T>(config, vocab), {}, {}};
  auto& model = result.model;
  AdamState<T> adam(AdamConfig{config.lr});
  Rng rng(config.seed + 1);
  std::vector<std::size_t> order(train.size());
  zero_grad<T>(model.parameters());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<ClassifierExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) batch.push_back(train[order[i]]);
      Tape<T> tape;
      Pass<T> pass(tape, rng, true);
      Var<T> loss = model.loss(pass, batch);
      tape.backward(loss);
      if (config.clip_norm > 0) clip_grad_norm<T>(model.parameters(), config.clip_norm);
      adam_step<T>(model.parameters(), adam);
      zero_grad<T>(model.parameters());
      const double l = static_cast<double>(loss.value().item());
      if (!std::isfinite(l)) throw NumericError("classifier loss became non-finite");
      total += l;
      ++batches;
    }
    result.loss_curve.push_back(total / static_cast<double>(batches));
  }
  result.metrics = score_classifier(model, held);
  result.metrics.n_train = train.size();
  result.metrics.skipped = skipped;
  return result;
}

// ---------------------------------------------------------------------------
// Corpus labeling

struct LabelStats {
  std::size_t total = 0;
  std::size_t non_emotion = 0;
  std::array<std::size_t, kNumEmotionLabels> counts{};
  double non_emotion_fraction() const { return total ? static_cast<double>(non_emotion) / total : 0.0; }
};

struct LabeledCorpus {
  std::vector<TextPair> pairs;
  LabelStats stats;
};

/// Labels every pair from its target text alone; a top probability below
/// `threshold` yields non-emotion.
inline LabeledCorpus label_corpus(const Scorer& scorer, std::span<const TextPair> pairs,
                                  double threshold = kNonEmotionThreshold) {
  LabeledCorpus out;
  out.pairs.reserve(pairs.size());
  for (const auto& p : pairs) {
    TextPair q = p;
    q.emotion = apply_threshold(scorer.classify(join_tokens(p.target)), threshold);
    ++out.stats.total;
    ++out.stats.counts[index_of(*q.emotion)];
    if (*q.emotion == Emotion::non_emotion) ++out.stats.non_emotion;
    out.pairs.push_back(std::move(q));
  }
  return out;
}

}  // namespace emoseq
