#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emoseq/emotion.hpp"
#include "emoseq/errors.hpp"

namespace emoseq {

/// Identifies the tokenization rule; stored in checkpoints so a model and
/// a classifier that disagree on tokenization are never paired.
inline constexpr std::string_view kTokenizerId = "lower-punct-v1";

/// Lowercases ASCII, splits on whitespace, and emits every ASCII
/// punctuation character as its own token. Bytes ≥ 0x80 pass through.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (uc < 0x80 && std::isspace(uc)) {
      flush();
    } else if (uc < 0x80 && std::ispunct(uc)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : ch);
    }
  }
  flush();
  return tokens;
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

using TokenId = std::size_t;

/// Token ↔ id bijection. Ids 0..3 are PAD, BOS, EOS, UNK; the next S ids
/// are the per-emotion tokens; corpus tokens follow.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kFirstEmotion = 4;
  static constexpr std::size_t kReserved = kFirstEmotion + kNumEmotionLabels;

  Vocabulary() {
    for (auto t : {"<pad>", "<s>", "</s>", "<unk>"}) add(t);
    for (auto name : kEmotionNames) add("<" + std::string(name) + ">");
  }

  /// Rebuilds a vocabulary from its ordered token list (checkpoint load).
  static Vocabulary from_tokens(std::span<const std::string> tokens) {
    Vocabulary v;
    if (tokens.size() < kReserved) throw FormatError("vocabulary shorter than its reserved block");
    for (std::size_t i = 0; i < kReserved; ++i) {
      if (tokens[i] != v.tokens_[i]) throw FormatError("vocabulary reserved token mismatch at id " + std::to_string(i));
    }
    for (std::size_t i = kReserved; i < tokens.size(); ++i) {
      if (v.ids_.contains(tokens[i])) throw FormatError("duplicate vocabulary token '" + tokens[i] + "'");
      v.add(tokens[i]);
    }
    return v;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool contains(std::string_view token) const { return ids_.find(std::string(token)) != ids_.end(); }

  TokenId id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw ContractError("token id out of range: " + std::to_string(id));
    return tokens_[id];
  }

  static constexpr TokenId emotion_token(Emotion e) { return kFirstEmotion + index_of(e); }
  static constexpr bool is_emotion_token(TokenId id) { return id >= kFirstEmotion && id < kReserved; }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto i : ids) out.push_back(token(i));
    return out;
  }

  void add(std::string token) {
    ids_.emplace(token, tokens_.size());
    tokens_.push_back(std::move(token));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Reserved and emotion tokens first, then corpus tokens by descending
/// frequency (ties lexicographic) until `cap` entries exist.
inline Vocabulary build_vocab(std::span<const std::vector<std::string>> sentences, std::size_t cap) {
  if (cap < Vocabulary::kReserved) {
    throw ContractError("vocabulary cap " + std::to_string(cap) + " below the " +
                        std::to_string(Vocabulary::kReserved) + " reserved tokens");
  }
  if (sentences.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  Vocabulary vocab;
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& t : s)
      if (!vocab.contains(t)) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [tok, n] : ranked) {
    if (vocab.size() >= cap) break;
    vocab.add(tok);
  }
  return vocab;
}

}  // namespace emoseq
