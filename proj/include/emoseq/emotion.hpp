#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "emoseq/errors.hpp"

namespace emoseq {

/// Fixed emotion order. The nine named emotions are evaluation targets;
/// non_emotion is a training-only pseudo label and always comes last.
enum class Emotion : std::size_t {
  anger,
  disgust,
  fear,
  joy,
  sadness,
  surprise,
  love,
  thankfulness,
  guilt,
  non_emotion,
};

inline constexpr std::size_t kNumEmotions = 9;               // evaluated
inline constexpr std::size_t kNumEmotionLabels = kNumEmotions + 1;  // S

inline constexpr std::array<std::string_view, kNumEmotionLabels> kEmotionNames = {
    "anger", "disgust", "fear", "joy", "sadness", "surprise", "love", "thankfulness", "guilt", "non-emotion"};

constexpr std::size_t index_of(Emotion e) { return static_cast<std::size_t>(e); }

inline Emotion emotion_from_index(std::size_t i) {
  if (i >= kNumEmotionLabels) throw ContractError("emotion index out of range: " + std::to_string(i));
  return static_cast<Emotion>(i);
}

inline std::string_view name_of(Emotion e) { return kEmotionNames[index_of(e)]; }

inline std::optional<Emotion> parse_emotion(std::string_view name) {
  for (std::size_t i = 0; i < kNumEmotionLabels; ++i) {
    if (kEmotionNames[i] == name) return static_cast<Emotion>(i);
  }
  return std::nullopt;
}

/// The nine evaluated emotions, in order.
inline constexpr std::array<Emotion, kNumEmotions> kEvaluatedEmotions = {
    Emotion::anger, Emotion::disgust, Emotion::fear,         Emotion::joy,  Emotion::sadness,
    Emotion::surprise, Emotion::love, Emotion::thankfulness, Emotion::guilt};

}  // namespace emoseq
