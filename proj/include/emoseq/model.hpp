#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "emoseq/adam.hpp"
#include "emoseq/autodiff.hpp"
#include "emoseq/corpus.hpp"
#include "emoseq/emotion.hpp"
#include "emoseq/lstm.hpp"
#include "emoseq/text.hpp"

namespace emoseq {

// ---------------------------------------------------------------------------
// Variants

/// The baseline attention model plus the seven emotion-injection variants.
enum class Variant { baseline, enc_bef, enc_aft, dec_rep, dec_start, dec_trans, dec_proj, enc_att };

inline constexpr std::array<Variant, 8> kAllVariants = {Variant::baseline, Variant::enc_bef,   Variant::enc_aft,
                                                        Variant::dec_rep,  Variant::dec_start, Variant::dec_trans,
                                                        Variant::dec_proj, Variant::enc_att};
inline constexpr std::array<Variant, 7> kEmotionVariants = {Variant::enc_bef,   Variant::enc_aft,  Variant::dec_rep,
                                                            Variant::dec_start, Variant::dec_trans, Variant::dec_proj,
                                                            Variant::enc_att};

inline std::string_view name_of(Variant v) {
  static constexpr std::array<std::string_view, 8> names = {"baseline", "enc-bef",   "enc-aft",  "dec-rep",
                                                            "dec-start", "dec-trans", "dec-proj", "enc-att"};
  return names[static_cast<std::size_t>(v)];
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (auto v : kAllVariants)
    if (name_of(v) == name) return v;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Configuration

/// How the configured dropout ratio is read.
enum class DropoutReading { drop, keep };

struct ModelConfig {
  std::string profile = "desk";
  std::size_t hidden = 64;  // D, encoder and decoder
  std::size_t embed = 32;   // d_w
  std::size_t vocab_cap = 2000;
  std::size_t padding = kPaddingLength;
  double dropout = 0.0;
  DropoutReading dropout_reading = DropoutReading::drop;
  std::size_t emotions = kNumEmotionLabels;  // S
  double lr = 3e-3;
  std::size_t batch_size = 16;
  std::size_t max_steps = 2000;  // 0 means "must be supplied"
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  double split_ratio = 0.95;
  std::size_t dev_every = 250;

  double drop_probability() const {
    return dropout_reading == DropoutReading::drop ? dropout : 1.0 - dropout;
  }
};

/// Published dimensions. The ratio 0.75 is kept verbatim and read as a
/// keep probability; the step budget is left for the caller.
inline ModelConfig paper_profile() {
  ModelConfig c;
  c.profile = "paper";
  c.hidden = 600;
  c.embed = 300;
  c.vocab_cap = 25000;
  c.dropout = 0.75;
  c.dropout_reading = DropoutReading::keep;
  c.lr = 1e-4;
  c.batch_size = 64;
  c.max_steps = 0;
  return c;
}

/// Laptop-sized dimensions used by every acceptance check.
inline ModelConfig desk_profile() { return ModelConfig{}; }

inline std::optional<ModelConfig> profile_by_name(std::string_view name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  return std::nullopt;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parameter layout and the extra-parameter accountant

struct ParamSpec {
  std::string name;
  Shape shape;
  bool emotion_specific = false;
};

struct LayoutDims {
  std::size_t hidden = 0;  // D
  std::size_t embed = 0;   // d_w
  std::size_t vocab = 0;   // |V|
  std::size_t emotions = kNumEmotionLabels;  // S
};

/// Every tensor a model of the given variant allocates, in allocation order.
inline std::vector<ParamSpec> parameter_layout(Variant v, const LayoutDims& d) {
  const std::size_t D = d.hidden, W = d.embed, V = d.vocab, S = d.emotions;
  std::vector<ParamSpec> out;
  out.push_back({"embedding", {V, W}});
  out.push_back({"encoder.weight", {W + D, 4 * D}});
  out.push_back({"encoder.bias", {4 * D}});
  // the emotion vector widens the decoder's recurrent input; counted as base
  out.push_back({"decoder.weight", {W + (v == Variant::dec_rep ? 2 * D : D), 4 * D}});
  out.push_back({"decoder.bias", {4 * D}});
  if (v == Variant::enc_att) {
    out.push_back({"attention.emotion_weight", {S, D, D}, true});
  } else {
    out.push_back({"attention.weight", {D, D}});
  }
  if (v == Variant::dec_proj) {
    out.push_back({"projection.emotion_weight", {S, D, V}, true});
    out.push_back({"projection.emotion_bias", {S, V}, true});
  } else {
    out.push_back({"projection.weight", {D, V}});
    out.push_back({"projection.bias", {V}});
  }
  if (v == Variant::dec_rep) out.push_back({"emotion_vectors", {S, D}, true});
  if (v == Variant::dec_trans) out.push_back({"emotion_transform", {S, D, D}, true});
  return out;
}

enum class CountMode { paper, actual };

struct CountDims {
  std::uint64_t hidden = 0;  // D
  std::uint64_t vocab = 0;   // |V|
  std::uint64_t source_length = 0;  // m
  std::uint64_t emotions = 0;       // S
};

/// Parameters a variant adds over the baseline. Paper mode applies the
/// published per-variant formulas; actual mode enumerates the allocation
/// layout: emotion-specific tensors minus the baseline tensors they replace.
inline std::uint64_t count_extra_params(Variant v, const CountDims& d, CountMode mode) {
  if (mode == CountMode::paper) {
    switch (v) {
      case Variant::baseline:
      case Variant::enc_bef:
      case Variant::enc_aft:
      case Variant::dec_start:
        return 0;
      case Variant::dec_rep:
        return d.hidden * d.emotions;
      case Variant::dec_trans:
        return d.hidden * d.hidden * d.emotions;
      case Variant::dec_proj:
        return d.vocab * d.hidden * d.emotions;
      case Variant::enc_att:
        return d.source_length * d.hidden * d.emotions;
    }
    return 0;
  }
  LayoutDims ld{static_cast<std::size_t>(d.hidden), 1, static_cast<std::size_t>(d.vocab),
                static_cast<std::size_t>(d.emotions)};
  const auto variant = parameter_layout(v, ld);
  const auto base = parameter_layout(Variant::baseline, ld);
  std::uint64_t added = 0, replaced = 0;
  for (const auto& p : variant)
    if (p.emotion_specific) added += shape_numel(p.shape);
  for (const auto& b : base) {
    bool kept = false;
    for (const auto& p : variant) kept = kept || p.name == b.name;
    if (!kept) replaced += shape_numel(b.shape);
  }
  return added - replaced;
}

// ---------------------------------------------------------------------------
// Encoder / attention building blocks

/// Right-padded source ids with a validity mask.
struct SourceBatch {
  std::vector<TokenId> ids;         // batch × length
  std::vector<std::uint8_t> mask;   // 1 for real tokens
  std::vector<std::size_t> lengths;
  std::size_t batch = 0;
  std::size_t length = 0;
};

inline SourceBatch make_source_batch(std::span<const std::vector<TokenId>> sources) {
  SourceBatch sb;
  sb.batch = sources.size();
  if (sb.batch == 0) throw ContractError("empty source batch");
  for (const auto& s : sources) {
    if (s.empty()) throw ContractError("encode: empty source sequence");
    sb.length = std::max(sb.length, s.size());
    sb.lengths.push_back(s.size());
  }
  sb.ids.assign(sb.batch * sb.length, Vocabulary::kPad);
  sb.mask.assign(sb.batch * sb.length, 0);
  for (std::size_t b = 0; b < sb.batch; ++b)
    for (std::size_t t = 0; t < sources[b].size(); ++t) {
      sb.ids[b * sb.length + t] = sources[b][t];
      sb.mask[b * sb.length + t] = 1;
    }
  return sb;
}

template <std::floating_point T>
struct EncoderOutput {
  Var<T> states;   // [B×m×D]
  Var<T> final_h;  // [B×D], state after each item's last real token
  Var<T> final_c;
  SourceBatch source;
};

template <std::floating_point T>
struct AttentionOutput {
  Var<T> weights;  // α, [B×m]
  Var<T> context;  // ĥ, [B×D]
};

/// α = softmax_j(⟨h_de, keys_j⟩) over unpadded positions; ĥ = Σ_j α_j h_j.
template <std::floating_point T>
AttentionOutput<T> attend(const Var<T>& keys, const EncoderOutput<T>& enc, const Var<T>& h_de) {
  if (enc.source.length == 0) throw ContractError("attention over an empty source");
  Var<T> alpha = masked_softmax(batched_dot(keys, h_de), enc.source.mask);
  return {alpha, weighted_sum(alpha, enc.states)};
}

/// tanh(W h_j) for every encoder state, [B×m×D]. `weight` is stored
/// input-major so the product is a row-vector times matrix.
template <std::floating_point T>
Var<T> attention_keys(const Var<T>& weight, const EncoderOutput<T>& enc) {
  const auto& s = enc.states.shape();
  if (weight.shape() != Shape{s[2], s[2]}) {
    throw DimensionError("attention: weight " + to_string(weight.shape()) + " incompatible with states " + to_string(s));
  }
  Var<T> flat = reshape(enc.states, {s[0] * s[1], s[2]});
  return reshape(tanh(matmul(flat, weight)), Shape(s));
}

/// General-score global attention with a single shared matrix.
template <std::floating_point T>
AttentionOutput<T> attention(const Var<T>& weight, const Var<T>& h_de, const EncoderOutput<T>& enc) {
  return attend(attention_keys(weight, enc), enc, h_de);
}

template <std::floating_point T>
struct DecoderState {
  Var<T> context;  // ĥ_{t-1}, the recurrent hidden input
  Var<T> cell;     // c_{t-1}
  std::size_t step = 0;
};

template <std::floating_point T>
struct StepOutput {
  Var<T> hidden;   // h_t
  Var<T> logits;   // [B×|V|]
  Var<T> attention;  // α_t
  DecoderState<T> next;
};

/// Mean over masked steps of the per-step cross-entropy sums.
template <std::floating_point T>
Var<T> sequence_loss(std::span<const Var<T>> logits, std::span<const std::vector<std::size_t>> targets,
                     std::span<const std::vector<std::uint8_t>> masks) {
  if (logits.size() != targets.size() || logits.size() != masks.size() || logits.empty()) {
    throw ContractError("sequence_loss: one target row and mask per logit step required");
  }
  std::vector<Var<T>> terms;
  std::size_t count = 0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    for (auto m : masks[t]) count += m;
    terms.push_back(cross_entropy_sum(logits[t], targets[t], masks[t]));
  }
  if (count == 0) throw ContractError("sequence_loss: no unmasked target steps");
  return scale(add_n<T>(terms), T(1) / static_cast<T>(count));
}

// ---------------------------------------------------------------------------
// Emotion injection helpers

enum class TokenPosition { before, after };

struct InjectedSource {
  std::vector<TokenId> ids;
  bool truncated = false;
};

/// [T_e; X] or [X; T_e]. A full-length X loses its last content token.
/// Re-injecting into an already injected sequence is rejected.
inline InjectedSource apply_enc_token(std::span<const TokenId> x, Emotion e, TokenPosition position,
                                      std::size_t padding = kPaddingLength) {
  if (!x.empty()) {
    const TokenId edge = position == TokenPosition::before ? x.front() : x.back();
    if (Vocabulary::is_emotion_token(edge)) throw ContractError("source already carries an emotion token");
  }
  InjectedSource out;
  std::vector<TokenId> content(x.begin(), x.end());
  if (content.size() >= padding) {
    content.resize(padding - 1);
    out.truncated = true;
  }
  const TokenId tok = Vocabulary::emotion_token(e);
  if (position == TokenPosition::before) out.ids.push_back(tok);
  out.ids.insert(out.ids.end(), content.begin(), content.end());
  if (position == TokenPosition::after) out.ids.push_back(tok);
  return out;
}

/// The decoder's first input when the start token is replaced by T_e.
inline TokenId decstart_first_input(Emotion e) { return Vocabulary::emotion_token(e); }

struct Decoded {
  Emotion emotion = Emotion::non_emotion;
  std::vector<TokenId> source;  // encoder input after injection
  std::vector<TokenId> tokens;  // emitted tokens, EOS excluded
  std::vector<std::vector<double>> attention;  // one row per emitted token
};

// ---------------------------------------------------------------------------

/// LSTM encoder-decoder with general-score global attention, conditioned on
/// an emotion through one of the injection variants.
template <std::floating_point T>
class Seq2SeqModel {
 public:
  using Scalar = T;

  Seq2SeqModel(Variant variant, ModelConfig config, Vocabulary vocab)
      : variant_(variant), config_(std::move(config)), vocab_(std::move(vocab)) {
    if (config_.emotions != kNumEmotionLabels) {
      throw ContractError("models are built over exactly " + std::to_string(kNumEmotionLabels) + " emotion labels");
    }
    if (config_.hidden == 0 || config_.embed == 0) throw ContractError("model dimensions must be positive");
    Rng rng(config_.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    for (const auto& spec : layout()) {
      Tensor<T> value(spec.shape);
      if (spec.name == "embedding") {
        for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-0.1, 0.1));
      } else if (spec.name.ends_with("bias")) {
        // zeros
      } else if (spec.name == "emotion_transform") {
        const std::size_t D = config_.hidden;
        for (std::size_t s = 0; s < spec.shape[0]; ++s)
          for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j)
              value[(s * D + i) * D + j] = static_cast<T>((i == j ? 1.0 : 0.0) + rng.normal(0.0, 1e-3));
      } else if (spec.name == "projection.emotion_weight") {
        // one draw shared by every emotion
        const std::size_t block = spec.shape[1] * spec.shape[2];
        for (std::size_t k = 0; k < block; ++k) value[k] = static_cast<T>(rng.uniform(-bound, bound));
        for (std::size_t s = 1; s < spec.shape[0]; ++s)
          std::copy(value.raw(), value.raw() + block, value.raw() + s * block);
      } else {
        for (auto& v : value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      }
      params_.emplace_back(spec.name, std::move(value));
    }
  }

  Variant variant() const noexcept { return variant_; }
  const ModelConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }

  std::vector<ParamSpec> layout() const {
    return parameter_layout(variant_, {config_.hidden, config_.embed, vocab_.size(), config_.emotions});
  }

  std::span<Parameter<T>> parameters() noexcept { return params_; }
  std::span<const Parameter<T>> parameters() const noexcept { return params_; }

  Parameter<T>& parameter(std::string_view name) { return params_[index(name)]; }
  const Parameter<T>& parameter(std::string_view name) const { return params_[index(name)]; }
  bool has_parameter(std::string_view name) const { return find(name).has_value(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  std::string config_digest() const {
    std::ostringstream s;
    s << name_of(variant_) << ";D=" << config_.hidden << ";dw=" << config_.embed << ";V=" << vocab_.size()
      << ";pad=" << config_.padding << ";S=" << config_.emotions << ";tok=" << kTokenizerId;
    std::ostringstream hex;
    hex << std::hex << fnv1a(s.str());
    return hex.str();
  }

  /// Observes every point where the model reads an emotion label.
  std::function<void(std::string_view site)> emotion_probe;

  /// Count of sources that lost a token to make room for T_e.
  std::size_t truncation_warnings() const noexcept { return truncations_.load(); }

  // ---- injection points ---------------------------------------------------

  std::vector<TokenId> prepare_source(std::span<const TokenId> x, Emotion e) const {
    if (variant_ != Variant::enc_bef && variant_ != Variant::enc_aft) return {x.begin(), x.end()};
    probe(name_of(variant_));
    auto out = apply_enc_token(x, e, variant_ == Variant::enc_bef ? TokenPosition::before : TokenPosition::after,
                               config_.padding);
    if (out.truncated) ++truncations_;
    return std::move(out.ids);
  }

  TokenId first_decoder_input(Emotion e) const {
    if (variant_ != Variant::dec_start) return Vocabulary::kBos;
    probe("dec-start");
    return decstart_first_input(e);
  }

  // ---- forward ------------------------------------------------------------

  EncoderOutput<T> encode(Pass<T>& pass, SourceBatch source) const {
    const std::size_t B = source.batch, m = source.length, D = config_.hidden;
    if (B == 0 || m == 0) throw ContractError("encode: empty source");
    if (m > config_.padding) throw ContractError("encode: source longer than the padding length");
    Var<T> emb = pass.bind(parameter("embedding"));
    const LstmCellParams<T> cell{&parameter("encoder.weight"), &parameter("encoder.bias")};
    Var<T> h = Var<T>::constant(Tensor<T>({B, D}));
    Var<T> c = Var<T>::constant(Tensor<T>({B, D}));
    std::vector<Var<T>> states;
    states.reserve(m);
    for (std::size_t t = 0; t < m; ++t) {
      std::vector<std::size_t> ids(B);
      std::vector<std::uint8_t> live(B);
      for (std::size_t b = 0; b < B; ++b) {
        ids[b] = source.ids[b * m + t];
        live[b] = source.mask[b * m + t];
      }
      Var<T> x = pass.dropout(gather_rows(emb, ids), config_.drop_probability());
      auto [h_new, c_new] = cell.step(pass, x, h, c);
      // padded positions carry the previous state forward unchanged
      h = where_rows(live, h_new, h);
      c = where_rows(live, c_new, c);
      states.push_back(h);
    }
    return {stack_steps<T>(states), h, c, std::move(source)};
  }

  /// tanh(W h_j^{En}) with W = W_a, or W_e per batch item for enc-att.
  Var<T> attention_keys(Pass<T>& pass, const EncoderOutput<T>& enc, std::span<const Emotion> emotions) const {
    if (variant_ != Variant::enc_att) return emoseq::attention_keys(pass.bind(parameter("attention.weight")), enc);
    probe("enc-att");
    const auto& s = enc.states.shape();
    require_emotions(emotions, s[0]);
    std::vector<std::size_t> groups;
    groups.reserve(s[0] * s[1]);
    for (std::size_t b = 0; b < s[0]; ++b)
      for (std::size_t j = 0; j < s[1]; ++j) groups.push_back(index_of(emotions[b]));
    Var<T> flat = reshape(enc.states, {s[0] * s[1], s[2]});
    Var<T> pre = grouped_matmul(flat, pass.bind(parameter("attention.emotion_weight")), std::move(groups));
    return reshape(tanh(pre), Shape(s));
  }

  DecoderState<T> initial_state(const EncoderOutput<T>& enc) const { return {enc.final_h, enc.final_c, 0}; }

  /// Vocabulary logits from a decoder hidden state.
  Var<T> project(Pass<T>& pass, const Var<T>& hidden, std::span<const Emotion> emotions) const {
    switch (variant_) {
      case Variant::dec_trans: {
        probe("dec-trans");
        require_emotions(emotions, hidden.dim(0));
        Var<T> moved = grouped_matmul(hidden, pass.bind(parameter("emotion_transform")), groups_of(emotions));
        return add_row(matmul(moved, pass.bind(parameter("projection.weight"))), pass.bind(parameter("projection.bias")));
      }
      case Variant::dec_proj: {
        probe("dec-proj");
        require_emotions(emotions, hidden.dim(0));
        auto groups = groups_of(emotions);
        Var<T> bias = gather_rows(pass.bind(parameter("projection.emotion_bias")), groups);
        return add(grouped_matmul(hidden, pass.bind(parameter("projection.emotion_weight")), groups), bias);
      }
      default:
        return add_row(matmul(hidden, pass.bind(parameter("projection.weight"))), pass.bind(parameter("projection.bias")));
    }
  }

  StepOutput<T> decode_step(Pass<T>& pass, std::span<const TokenId> y_prev, const DecoderState<T>& state,
                            const EncoderOutput<T>& enc, const Var<T>& keys, std::span<const Emotion> emotions) const {
    if (state.step > config_.padding) throw ContractError("decode_step: step exceeds the padding length");
    const std::size_t B = enc.source.batch;
    if (y_prev.size() != B) throw DimensionError("decode_step: one previous token per batch item required");
    std::vector<std::size_t> ids(y_prev.begin(), y_prev.end());
    for (auto id : ids)
      if (id >= vocab_.size()) throw ContractError("decode_step: token id out of range");
    Var<T> x = pass.dropout(gather_rows(pass.bind(parameter("embedding")), ids), config_.drop_probability());
    Var<T> recurrent = state.context;
    if (variant_ == Variant::dec_rep) {
      probe("dec-rep");
      require_emotions(emotions, B);
      recurrent = concat<T>({state.context, gather_rows(pass.bind(parameter("emotion_vectors")), groups_of(emotions))}, 1);
    }
    const LstmCellParams<T> cell{&parameter("decoder.weight"), &parameter("decoder.bias")};
    auto [h, c] = cell.step(pass, x, recurrent, state.cell);
    Var<T> logits = project(pass, pass.dropout(h, config_.drop_probability()), emotions);
    auto att = attend(keys, enc, h);
    return {h, logits, att.weights, {att.context, c, state.step + 1}};
  }

  struct TeacherForced {
    std::vector<Var<T>> logits;
    std::vector<std::vector<std::size_t>> targets;
    std::vector<std::vector<std::uint8_t>> masks;
  };

  /// Gold tokens fed at every step; step t predicts y_{t+1}, the last step EOS.
  TeacherForced teacher_forced(Pass<T>& pass, std::span<const DialoguePair> batch) const {
    const std::size_t B = batch.size();
    if (B == 0) throw ContractError("empty training batch");
    std::vector<Emotion> emotions;
    if (variant_ != Variant::baseline) {
      for (const auto& p : batch) {
        if (!p.emotion) throw ContractError("emotion-conditioned variant given an unlabeled pair");
        emotions.push_back(*p.emotion);
      }
    } else {
      emotions.assign(B, Emotion::non_emotion);  // never read
    }
    std::vector<std::vector<TokenId>> sources;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < B; ++b) {
      if (batch[b].target.empty()) throw ContractError("empty target sequence");
      sources.push_back(prepare_source(batch[b].source, emotions[b]));
      steps = std::max(steps, batch[b].target.size() + 1);
    }
    auto enc = encode(pass, make_source_batch(sources));
    Var<T> keys = attention_keys(pass, enc, emotions);
    auto state = initial_state(enc);
    TeacherForced out;
    std::vector<TokenId> y_prev(B);
    for (std::size_t b = 0; b < B; ++b) y_prev[b] = first_decoder_input(emotions[b]);
    for (std::size_t t = 0; t < steps; ++t) {
      auto step = decode_step(pass, y_prev, state, enc, keys, emotions);
      std::vector<std::size_t> target(B, Vocabulary::kPad);
      std::vector<std::uint8_t> mask(B, 0);
      for (std::size_t b = 0; b < B; ++b) {
        const auto& y = batch[b].target;
        if (t < y.size()) {
          target[b] = y[t];
          mask[b] = 1;
          y_prev[b] = y[t];
        } else if (t == y.size()) {
          target[b] = Vocabulary::kEos;
          mask[b] = 1;
          y_prev[b] = Vocabulary::kPad;
        } else {
          y_prev[b] = Vocabulary::kPad;
        }
      }
      out.logits.push_back(step.logits);
      out.targets.push_back(std::move(target));
      out.masks.push_back(std::move(mask));
      state = step.next;
    }
    return out;
  }

  Var<T> sequence_loss(Pass<T>& pass, std::span<const DialoguePair> batch) const {
    auto tf = teacher_forced(pass, batch);
    return emoseq::sequence_loss<T>(tf.logits, tf.targets, tf.masks);
  }

  /// Argmax decoding, batched over (source, emotion) requests. Stops each
  /// item at EOS or after `max_len` emitted tokens.
  std::vector<Decoded> greedy_decode(std::span<const std::vector<TokenId>> sources, std::span<const Emotion> emotions,
                                     std::size_t max_len = kPaddingLength) const {
    const std::size_t B = sources.size();
    if (emotions.size() != B) throw ContractError("greedy_decode: one emotion per source required");
    max_len = std::min(max_len, config_.padding);
    Pass<T> pass;
    std::vector<Decoded> out(B);
    std::vector<std::vector<TokenId>> prepared;
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<TokenId> src(sources[b].begin(), sources[b].end());
      if (src.size() > config_.padding) src.resize(config_.padding);
      prepared.push_back(prepare_source(src, emotions[b]));
      out[b].emotion = emotions[b];
      out[b].source = prepared.back();
    }
    auto enc = encode(pass, make_source_batch(prepared));
    Var<T> keys = attention_keys(pass, enc, emotions);
    auto state = initial_state(enc);
    std::vector<TokenId> y_prev(B);
    for (std::size_t b = 0; b < B; ++b) y_prev[b] = first_decoder_input(emotions[b]);
    std::vector<bool> done(B, false);
    const std::size_t m = enc.source.length;
    for (std::size_t t = 0; t < max_len; ++t) {
      auto step = decode_step(pass, y_prev, state, enc, keys, emotions);
      const auto& L = step.logits.value();
      const auto& A = step.attention.value();
      const std::size_t V = L.dim(1);
      for (std::size_t b = 0; b < B; ++b) {
        const T* row = L.raw() + b * V;
        const auto best = static_cast<TokenId>(std::max_element(row, row + V) - row);
        y_prev[b] = best;
        if (done[b]) continue;
        if (best == Vocabulary::kEos) {
          done[b] = true;
          continue;
        }
        out[b].tokens.push_back(best);
        std::vector<double> alpha(enc.source.lengths[b]);
        for (std::size_t j = 0; j < alpha.size(); ++j) alpha[j] = static_cast<double>(A[b * m + j]);
        out[b].attention.push_back(std::move(alpha));
      }
      if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
      state = step.next;
    }
    return out;
  }

  Decoded greedy_decode(std::span<const TokenId> source, Emotion e, std::size_t max_len = kPaddingLength) const {
    std::vector<std::vector<TokenId>> one{{source.begin(), source.end()}};
    std::array<Emotion, 1> em{e};
    return std::move(greedy_decode(one, em, max_len).front());
  }

 private:
  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return std::nullopt;
  }
  std::size_t index(std::string_view name) const {
    auto i = find(name);
    if (!i) throw ContractError("model " + std::string(name_of(variant_)) + " has no parameter '" + std::string(name) + "'");
    return *i;
  }
  void probe(std::string_view site) const {
    if (emotion_probe) emotion_probe(site);
  }
  void require_emotions(std::span<const Emotion> emotions, std::size_t batch) const {
    if (emotions.size() != batch) throw ContractError("one emotion per batch item required");
  }
  static std::vector<std::size_t> groups_of(std::span<const Emotion> emotions) {
    std::vector<std::size_t> g;
    g.reserve(emotions.size());
    for (auto e : emotions) g.push_back(index_of(e));
    return g;
  }

  Variant variant_;
  ModelConfig config_;
  Vocabulary vocab_;
  std::vector<Parameter<T>> params_;
  mutable std::atomic<std::size_t> truncations_{0};

 public:
  Seq2SeqModel(const Seq2SeqModel& o)
      : emotion_probe(o.emotion_probe), variant_(o.variant_), config_(o.config_), vocab_(o.vocab_),
        params_(o.params_), truncations_(o.truncations_.load()) {}
  Seq2SeqModel(Seq2SeqModel&& o) noexcept
      : emotion_probe(std::move(o.emotion_probe)), variant_(o.variant_), config_(std::move(o.config_)),
        vocab_(std::move(o.vocab_)), params_(std::move(o.params_)), truncations_(o.truncations_.load()) {}
  Seq2SeqModel& operator=(Seq2SeqModel o) {
    std::swap(emotion_probe, o.emotion_probe);
    variant_ = o.variant_;
    std::swap(config_, o.config_);
    std::swap(vocab_, o.vocab_);
    std::swap(params_, o.params_);
    truncations_.store(o.truncations_.load());
    return *this;
  }
};

}  // namespace emoseq
