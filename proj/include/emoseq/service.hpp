#pragma once

#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "emoseq/evaluation.hpp"
#include "emoseq/model.hpp"
#include "emoseq/scoring.hpp"

namespace emoseq {

inline constexpr std::size_t kMaxChatChars = 2000;

/// Port from EMOSEQ_PORT when set, else `fallback`.
inline int resolve_port(int fallback) {
  if (const char* env = std::getenv("EMOSEQ_PORT"); env && *env) {
    try {
      const int port = std::stoi(env);
      if (port > 0 && port < 65536) return port;
    } catch (const std::exception&) {
    }
    throw ContractError(std::string("EMOSEQ_PORT is not a valid port: ") + env);
  }
  return fallback;
}

/// JSON endpoints over a set of read-only dialogue models and one scorer.
/// Handlers are plain functions of the request body so they can be exercised
/// without a socket.
class ChatService {
 public:
  struct Reply {
    int status = 200;
    ordered_json body;
  };

  ChatService(std::vector<Seq2SeqModel<float>> models, Scorer scorer) : scorer_(std::move(scorer)) {
    if (models.empty()) throw ContractError("the service needs at least one dialogue model");
    if (scorer_.tokenizer != kTokenizerId) throw ContractError("scorer tokenizer does not match the models'");
    default_ = std::string(name_of(models.front().variant()));
    for (auto& m : models) {
      std::string name(name_of(m.variant()));
      order_.push_back(name);
      models_.insert_or_assign(name, std::move(m));
    }
  }

  const std::string& default_variant() const noexcept { return default_; }

  Reply chat(const std::string& request_body) const {
    ordered_json req;
    try {
      req = ordered_json::parse(request_body);
    } catch (const ordered_json::exception&) {
      return error(400, "request body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("text") || !req["text"].is_string()) return error(400, "field 'text' must be a string");
    if (!req.contains("emotion") || !req["emotion"].is_string()) return error(400, "field 'emotion' must be a string");
    const auto text = req["text"].get<std::string>();
    const auto emotion_name = req["emotion"].get<std::string>();
    const auto variant_name = req.value("variant", std::string("default"));
    if (text.size() > kMaxChatChars) return error(413, "text exceeds " + std::to_string(kMaxChatChars) + " characters");
    const auto emotion = parse_emotion(emotion_name);
    if (!emotion || *emotion == Emotion::non_emotion) return error(400, "unknown emotion '" + emotion_name + "'");
    auto it = models_.find(variant_name == "default" ? default_ : variant_name);
    if (it == models_.end()) return error(400, "unknown variant '" + variant_name + "'");
    const auto& model = it->second;
    auto words = tokenize(text);
    if (words.empty()) return error(400, "text has no tokens");
    if (words.size() > model.config().padding) words.resize(model.config().padding);

    const auto trace = trace_attention(model, model.vocab().encode(words), *emotion);
    const std::string response = join_tokens(trace.output_tokens);
    const auto dist = response.empty() ? EmotionDistribution::uniform() : scorer_.classify(response);
    ordered_json body;
    body["response"] = response;
    body["detected_emotion"] = std::string(name_of(apply_threshold(dist)));
    body["distribution"] = dist.probs;
    body["attention"] = {{"source_tokens", trace.source_tokens},
                         {"output_tokens", trace.output_tokens},
                         {"matrix", trace.matrix}};
    body["variant"] = std::string(name_of(model.variant()));
    body["emotion"] = emotion_name;
    return {200, std::move(body)};
  }

  ordered_json models() const {
    ordered_json list = ordered_json::array();
    for (const auto& name : order_) {
      const auto& m = models_.at(name);
      list.push_back({{"variant", name}, {"config_digest", m.config_digest()}, {"default", name == default_}});
    }
    return {{"models", list}, {"scorer", scorer_.name}};
  }

  static ordered_json emotions() {
    return {{"emotions", std::vector<std::string>(kEmotionNames.begin(), kEmotionNames.begin() + kNumEmotions)}};
  }

  /// Registers the API routes, plus a static mount when `static_dir` is set.
  void mount(httplib::Server& server, const std::optional<std::string>& static_dir = std::nullopt) const {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Post("/api/chat", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, chat(req.body)); });
    server.Get("/api/models", [this, send](const httplib::Request&, httplib::Response& res) { send(res, {200, models()}); });
    server.Get("/api/emotions", [send](const httplib::Request&, httplib::Response& res) { send(res, {200, emotions()}); });
    server.Get("/healthz", [send](const httplib::Request&, httplib::Response& res) { send(res, {200, {{"status", "ok"}}}); });
    if (static_dir && !server.set_mount_point("/", *static_dir)) {
      throw ContractError("static directory " + *static_dir + " does not exist");
    }
  }

 private:
  static Reply error(int status, std::string message) { return {status, {{"error", std::move(message)}}}; }

  std::map<std::string, Seq2SeqModel<float>> models_;
  std::vector<std::string> order_;
  std::string default_;
  Scorer scorer_;
};

}  // namespace emoseq
