#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "emoseq/adam.hpp"
#include "emoseq/corpus.hpp"
#include "emoseq/model.hpp"

namespace emoseq {

/// One mini-batch: the pairs themselves plus PAD-padded id matrices.
struct Batch {
  std::vector<DialoguePair> pairs;
  std::size_t source_length = 0;
  std::size_t target_length = 0;
  std::vector<TokenId> source_ids;  // size × source_length
  std::vector<std::uint8_t> source_mask;
  std::vector<TokenId> target_ids;  // size × target_length
  std::vector<std::uint8_t> target_mask;

  std::size_t size() const noexcept { return pairs.size(); }
};

inline Batch make_batch(std::vector<DialoguePair> pairs) {
  Batch b;
  b.pairs = std::move(pairs);
  for (const auto& p : b.pairs) {
    b.source_length = std::max(b.source_length, p.source.size());
    b.target_length = std::max(b.target_length, p.target.size());
  }
  const std::size_t n = b.pairs.size();
  b.source_ids.assign(n * b.source_length, Vocabulary::kPad);
  b.source_mask.assign(n * b.source_length, 0);
  b.target_ids.assign(n * b.target_length, Vocabulary::kPad);
  b.target_mask.assign(n * b.target_length, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = b.pairs[i];
    for (std::size_t t = 0; t < p.source.size(); ++t) {
      b.source_ids[i * b.source_length + t] = p.source[t];
      b.source_mask[i * b.source_length + t] = 1;
    }
    for (std::size_t t = 0; t < p.target.size(); ++t) {
      b.target_ids[i * b.target_length + t] = p.target[t];
      b.target_mask[i * b.target_length + t] = 1;
    }
  }
  return b;
}

/// Seeded mini-batch stream; every epoch is a fresh shuffle of all pairs.
class Batcher {
 public:
  Batcher(std::vector<DialoguePair> pairs, std::size_t batch_size, std::uint64_t seed)
      : pairs_(std::move(pairs)), batch_size_(batch_size), rng_(seed) {
    if (batch_size_ == 0) throw ContractError("batch size must be at least 1");
    if (pairs_.empty()) throw DataError("no pairs to batch");
    order_.resize(pairs_.size());
  }

  std::vector<Batch> epoch() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    std::vector<Batch> out;
    for (std::size_t start = 0; start < order_.size(); start += batch_size_) {
      std::vector<DialoguePair> items;
      for (std::size_t i = start; i < std::min(order_.size(), start + batch_size_); ++i) items.push_back(pairs_[order_[i]]);
      out.push_back(make_batch(std::move(items)));
    }
    return out;
  }

  /// Next batch, starting a new epoch when the current one is exhausted.
  const Batch& next() {
    if (cursor_ >= current_.size()) {
      current_ = epoch();
      cursor_ = 0;
    }
    return current_[cursor_++];
  }

 private:
  std::vector<DialoguePair> pairs_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::vector<Batch> current_;
  std::size_t cursor_ = 0;
};

struct TrainHooks {
  std::function<void(std::size_t step, double loss)> on_step;
  std::function<void(std::size_t step, double dev_loss)> on_dev;
};

template <std::floating_point T>
struct TrainResult {
  Seq2SeqModel<T> model;
  std::vector<double> loss_curve;                        // one entry per step
  std::vector<std::pair<std::size_t, double>> dev_curve;  // (step, loss)
};

/// Mean loss over `pairs` with dropout disabled.
template <std::floating_point T>
double evaluate_loss(const Seq2SeqModel<T>& model, std::span<const DialoguePair> pairs, std::size_t batch_size = 64) {
  double total = 0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    auto chunk = pairs.subspan(start, std::min(batch_size, pairs.size() - start));
    Pass<T> pass;
    auto tf = model.teacher_forced(pass, chunk);
    for (std::size_t t = 0; t < tf.logits.size(); ++t) {
      total += cross_entropy_sum(tf.logits[t], tf.targets[t], tf.masks[t]).value().item();
      for (auto m : tf.masks[t]) tokens += m;
    }
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

/// Teacher-forced training of one variant with Adam and global-norm clipping.
/// Deterministic for a fixed config seed.
template <std::floating_point T>
TrainResult<T> train_dialogue(Seq2SeqModel<T> model, std::span<const DialoguePair> train,
                              std::span<const DialoguePair> dev = {}, const TrainHooks& hooks = {}) {
  const ModelConfig& cfg = model.config();
  if (cfg.max_steps == 0) throw ContractError("max_steps must be set for training");
  if (train.empty()) throw DataError("no training pairs");
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].emotion) throw DataError("training pair " + std::to_string(i + 1) + " has no emotion label");
  }
  Batcher batcher({train.begin(), train.end()}, cfg.batch_size, cfg.seed + 1);
  Rng dropout_rng(cfg.seed + 2);
  AdamState<T> adam(AdamConfig{cfg.lr});
  TrainResult<T> result{std::move(model), {}, {}};
  auto& m = result.model;
  zero_grad<T>(m.parameters());
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const Batch& batch = batcher.next();
    Tape<T> tape;
    Pass<T> pass(tape, dropout_rng, true);
    Var<T> loss = m.sequence_loss(pass, batch.pairs);
    tape.backward(loss);
    if (cfg.clip_norm > 0) clip_grad_norm<T>(m.parameters(), cfg.clip_norm);
    adam_step<T>(m.parameters(), adam);
    zero_grad<T>(m.parameters());
    const double l = static_cast<double>(loss.value().item());
    if (!std::isfinite(l)) throw NumericError("training loss became non-finite at step " + std::to_string(step));
    result.loss_curve.push_back(l);
    if (hooks.on_step) hooks.on_step(step, l);
    const bool last = step + 1 == cfg.max_steps;
    if (!dev.empty() && cfg.dev_every > 0 && ((step + 1) % cfg.dev_every == 0 || last)) {
      const double d = evaluate_loss(m, dev);
      result.dev_curve.emplace_back(step + 1, d);
      if (hooks.on_dev) hooks.on_dev(step + 1, d);
    }
  }
  return result;
}

}  // namespace emoseq
