#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "emoseq/classifier.hpp"
#include "emoseq/errors.hpp"
#include "emoseq/model.hpp"

// File layout:
//   EMOSEQ-CHECKPOINT\n
//   <manifest byte count>\n
//   <JSON manifest>
//   <float32 little-endian payload, tensors in manifest order>

namespace emoseq {

inline constexpr std::string_view kCheckpointMagic = "EMOSEQ-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

using nlohmann::json;

inline json to_json(const ModelConfig& c) {
  return {{"profile", c.profile},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"vocab_cap", c.vocab_cap},
          {"padding", c.padding},
          {"dropout", c.dropout},
          {"dropout_reading", c.dropout_reading == DropoutReading::drop ? "drop" : "keep"},
          {"emotions", c.emotions},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm},
          {"split_ratio", c.split_ratio},
          {"dev_every", c.dev_every}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.profile = j.at("profile").get<std::string>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.embed = j.at("embed").get<std::size_t>();
  c.vocab_cap = j.at("vocab_cap").get<std::size_t>();
  c.padding = j.at("padding").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.dropout_reading = j.at("dropout_reading").get<std::string>() == "keep" ? DropoutReading::keep : DropoutReading::drop;
  c.emotions = j.at("emotions").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.split_ratio = j.at("split_ratio").get<double>();
  c.dev_every = j.at("dev_every").get<std::size_t>();
  return c;
}

inline json to_json(const ClassifierConfig& c) {
  return {{"profile", c.profile},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"attention", c.attention},
          {"hops", c.hops},
          {"vocab_cap", c.vocab_cap},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm},
          {"split_ratio", c.split_ratio}};
}

inline ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  c.profile = j.at("profile").get<std::string>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.embed = j.at("embed").get<std::size_t>();
  c.attention = j.at("attention").get<std::size_t>();
  c.hops = j.at("hops").get<std::size_t>();
  c.vocab_cap = j.at("vocab_cap").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.split_ratio = j.at("split_ratio").get<double>();
  return c;
}

namespace detail {

inline void put_f32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

template <std::floating_point T>
void write_checkpoint(std::ostream& out, std::string kind, json config, const Vocabulary& vocab,
                      std::span<const Parameter<T>> params) {
  json tensors = json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const auto& p : params) {
    const std::size_t n = p.value.numel();
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"count", n}});
    for (T v : p.value.data()) put_f32(payload, static_cast<float>(v));
    offset += n * 4;
  }
  json manifest = {{"version", kCheckpointVersion},
                   {"kind", std::move(kind)},
                   {"config", std::move(config)},
                   {"tokenizer", kTokenizerId},
                   {"vocabulary", vocab.tokens()},
                   {"tensors", std::move(tensors)},
                   {"payload_bytes", payload.size()}};
  const std::string header = manifest.dump(1);
  out << kCheckpointMagic << '\n' << header.size() << '\n' << header;
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

}  // namespace detail

/// A parsed checkpoint before it is bound to a model type.
struct CheckpointData {
  json manifest;
  std::string payload;

  std::string kind() const { return manifest.at("kind").get<std::string>(); }
  Vocabulary vocabulary() const {
    return Vocabulary::from_tokens(manifest.at("vocabulary").get<std::vector<std::string>>());
  }
};

inline CheckpointData read_checkpoint(std::istream& in) {
  std::string magic, length_line;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) throw FormatError("not a checkpoint file", 1);
  if (!std::getline(in, length_line)) throw IntegrityError("checkpoint: missing manifest length");
  std::size_t header_bytes = 0;
  try {
    header_bytes = std::stoull(length_line);
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad manifest length '" + length_line + "'", 2);
  }
  std::string header(header_bytes, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_bytes));
  if (static_cast<std::size_t>(in.gcount()) != header_bytes) throw IntegrityError("checkpoint: truncated manifest");
  CheckpointData data;
  try {
    data.manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint: unreadable manifest: ") + e.what());
  }
  const int version = data.manifest.value("version", -1);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      3);
  }
  if (data.manifest.value("tokenizer", std::string()) != kTokenizerId) {
    throw FormatError("checkpoint: tokenizer " + data.manifest.value("tokenizer", std::string("?")) + " does not match " +
                          std::string(kTokenizerId),
                      3);
  }
  const auto expected = data.manifest.at("payload_bytes").get<std::size_t>();
  data.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (data.payload.size() != expected) {
    throw IntegrityError("checkpoint: payload is " + std::to_string(data.payload.size()) + " bytes, manifest says " +
                         std::to_string(expected));
  }
  return data;
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

namespace detail {

/// Copies every tensor of the manifest into `params`, which must match it
/// name for name and shape for shape.
template <std::floating_point T>
void fill_parameters(const CheckpointData& data, std::span<Parameter<T>> params) {
  const auto& tensors = data.manifest.at("tensors");
  if (tensors.size() != params.size()) {
    throw IntegrityError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    auto& p = params[i];
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    if (name != p.name || shape != p.value.shape()) {
      throw IntegrityError("checkpoint tensor " + name + " " + to_string(shape) + " does not match model tensor " +
                           p.name + " " + to_string(p.value.shape()));
    }
    const auto offset = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (count != p.value.numel() || offset + 4 * count > data.payload.size()) {
      throw IntegrityError("checkpoint tensor " + name + " lies outside the payload");
    }
    const char* src = data.payload.data() + offset;
    auto dst = p.value.data();
    for (std::size_t k = 0; k < count; ++k) dst[k] = static_cast<T>(get_f32(src + 4 * k));
  }
}

}  // namespace detail

/// Parameters are stored as float32; float models round-trip exactly.
template <std::floating_point T>
void save_checkpoint(std::ostream& out, const Seq2SeqModel<T>& model) {
  detail::write_checkpoint<T>(out, std::string(name_of(model.variant())), to_json(model.config()), model.vocab(),
                              model.parameters());
}

template <std::floating_point T>
void save_checkpoint(std::ostream& out, const EmotionClassifier<T>& model) {
  detail::write_checkpoint<T>(out, "classifier", to_json(model.config()), model.vocab(), model.parameters());
}

template <class Model>
void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  save_checkpoint(out, model);
}

template <std::floating_point T>
Seq2SeqModel<T> load_model(const CheckpointData& data) {
  const auto kind = data.kind();
  const auto variant = parse_variant(kind);
  if (!variant) throw FormatError("checkpoint holds '" + kind + "', not a dialogue model", 3);
  Seq2SeqModel<T> model(*variant, model_config_from_json(data.manifest.at("config")), data.vocabulary());
  detail::fill_parameters<T>(data, model.parameters());
  return model;
}

template <std::floating_point T>
EmotionClassifier<T> load_classifier(const CheckpointData& data) {
  if (data.kind() != "classifier") throw FormatError("checkpoint holds '" + data.kind() + "', not a classifier", 3);
  EmotionClassifier<T> model(classifier_config_from_json(data.manifest.at("config")), data.vocabulary());
  detail::fill_parameters<T>(data, model.parameters());
  return model;
}

template <std::floating_point T>
Seq2SeqModel<T> load_model(std::istream& in) {
  return load_model<T>(read_checkpoint(in));
}
template <std::floating_point T>
Seq2SeqModel<T> load_model(const std::string& path) {
  return load_model<T>(read_checkpoint(path));
}
template <std::floating_point T>
EmotionClassifier<T> load_classifier(const std::string& path) {
  return load_classifier<T>(read_checkpoint(path));
}

}  // namespace emoseq
