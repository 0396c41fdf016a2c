#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <string_view>

#include "emoseq/emotion.hpp"
#include "emoseq/errors.hpp"

namespace emoseq {

inline constexpr double kNonEmotionThreshold = 0.35;

/// Probabilities over the nine evaluated emotions.
struct EmotionDistribution {
  std::array<double, kNumEmotions> probs{};

  /// Most probable emotion; ties resolve to the earliest in emotion order.
  Emotion argmax() const {
    return static_cast<Emotion>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  double max_probability() const { return *std::max_element(probs.begin(), probs.end()); }

  static EmotionDistribution uniform() {
    EmotionDistribution d;
    d.probs.fill(1.0 / kNumEmotions);
    return d;
  }
};

/// Non-emotion when the top probability is below `threshold`, else argmax.
inline Emotion apply_threshold(const EmotionDistribution& dist, double threshold = kNonEmotionThreshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("threshold must lie in [0, 1]");
  return dist.max_probability() < threshold ? Emotion::non_emotion : dist.argmax();
}

/// Anything that maps text to an emotion distribution: a trained
/// classifier or the lexical oracle. Must be safe to call concurrently.
struct Scorer {
  std::string name;
  std::string tokenizer;
  std::function<EmotionDistribution(std::string_view)> classify;
};

}  // namespace emoseq
