#pragma once

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emoseq/checkpoint.hpp"
#include "emoseq/classifier.hpp"
#include "emoseq/evaluation.hpp"
#include "emoseq/service.hpp"
#include "emoseq/training.hpp"

namespace emoseq {

/// 150000000 -> "150,000,000".
inline std::string group_thousands(std::uint64_t n) {
  std::string digits = std::to_string(n), out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

/// Parses "D=600,V=25000,m=30,S=10"; every key is required.
inline CountDims parse_count_dims(const std::string& spec) {
  CountDims d;
  bool seen[4] = {false, false, false, false};
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--dims", "expected KEY=VALUE, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    std::uint64_t value = 0;
    try {
      std::size_t used = 0;
      value = std::stoull(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--dims", "bad value in '" + item + "'");
    }
    if (key == "D") d.hidden = value, seen[0] = true;
    else if (key == "V") d.vocab = value, seen[1] = true;
    else if (key == "m") d.source_length = value, seen[2] = true;
    else if (key == "S") d.emotions = value, seen[3] = true;
    else throw CLI::ValidationError("--dims", "unknown key '" + key + "'");
  }
  if (!(seen[0] && seen[1] && seen[2] && seen[3])) throw CLI::ValidationError("--dims", "D, V, m and S are all required");
  return d;
}

inline std::string params_table(const CountDims& dims, const std::string& mode) {
  std::ostringstream out;
  const bool paper = mode != "actual", actual = mode != "paper";
  out << "variant";
  if (paper) out << "\tpaper";
  if (actual) out << "\tactual";
  out << '\n';
  for (auto v : kEmotionVariants) {
    out << name_of(v);
    if (paper) out << '\t' << group_thousands(count_extra_params(v, dims, CountMode::paper));
    if (actual) out << '\t' << group_thousands(count_extra_params(v, dims, CountMode::actual));
    out << '\n';
  }
  return out.str();
}

/// "oracle" selects the lexical oracle; anything else is a classifier checkpoint.
inline Scorer load_scorer(const std::string& spec) {
  if (spec == "oracle") return LexicalOracle().scorer();
  return load_classifier<float>(spec).scorer();
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

inline ModelConfig require_profile(const std::string& name) {
  auto c = profile_by_name(name);
  if (!c) throw CLI::ValidationError("--profile", "unknown profile '" + name + "'");
  return *c;
}

}  // namespace detail

/// Exit codes: 0 success, 1 usage error, 2 data error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Emotion-conditioned response generation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic emotion-marked dialogue corpus");
  SynthOptions synth_opts;
  std::string synth_out, synth_labeled;
  synth->add_option("--n", synth_opts.n_pairs, "Number of pairs")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_opts.seed, "Random seed");
  synth->add_option("--neutral-fraction", synth_opts.neutral_fraction, "Share of marker-free replies")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--out", synth_out, "Pairs TSV")->required();
  synth->add_option("--labeled-out", synth_labeled, "Also write target TAB emotion rows for train-classifier");

  // train-classifier
  auto* tc = app.add_subcommand("train-classifier", "Train the emotion classifier on text TAB emotion rows");
  std::string tc_data, tc_out = "classifier.ckpt", tc_profile = "desk";
  std::optional<std::size_t> tc_epochs;
  std::optional<std::uint64_t> tc_seed;
  tc->add_option("--data", tc_data, "Labeled TSV")->required();
  tc->add_option("--out", tc_out, "Checkpoint path");
  tc->add_option("--profile", tc_profile, "desk or paper");
  tc->add_option("--epochs", tc_epochs);
  tc->add_option("--seed", tc_seed);

  // label
  auto* label = app.add_subcommand("label", "Label dialogue pairs from their targets");
  std::string label_in, label_out, label_scorer = "oracle";
  double threshold = kNonEmotionThreshold;
  std::size_t label_min_words = 6;
  label->add_option("--in", label_in, "Pairs TSV")->required();
  label->add_option("--out", label_out, "Labeled pairs TSV")->required();
  label->add_option("--classifier", label_scorer, "Checkpoint path or 'oracle'");
  label->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0));
  label->add_option("--min-words", label_min_words);

  // train
  auto* train = app.add_subcommand("train", "Train one dialogue variant on labeled pairs");
  std::string tr_variant, tr_data, tr_out, tr_profile = "desk", tr_curve;
  std::optional<std::size_t> tr_steps;
  std::optional<std::uint64_t> tr_seed;
  std::optional<double> tr_lr;
  std::size_t tr_min_words = 6;
  train->add_option("--variant", tr_variant, "baseline, enc-bef, enc-aft, dec-rep, dec-start, dec-trans, dec-proj or enc-att")
      ->required();
  train->add_option("--data", tr_data, "Labeled pairs TSV")->required();
  train->add_option("--out", tr_out, "Checkpoint path (default <variant>.ckpt)");
  train->add_option("--profile", tr_profile, "desk or paper");
  train->add_option("--steps", tr_steps);
  train->add_option("--seed", tr_seed);
  train->add_option("--lr", tr_lr);
  train->add_option("--min-words", tr_min_words);
  train->add_option("--loss-out", tr_curve, "Write step,loss rows");

  // eval
  auto* ev = app.add_subcommand("eval", "Estimated accuracy of a dialogue model");
  std::string ev_model, ev_scorer = "oracle", ev_test, ev_out, ev_heatmap, ev_heatmap_emotion = "fear";
  std::size_t ev_max_sources = 500, ev_min_words = 6;
  std::uint64_t ev_seed = 0;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--classifier", ev_scorer, "Checkpoint path or 'oracle'");
  ev->add_option("--test", ev_test, "Pairs TSV; only sources are used")->required();
  ev->add_option("--out", ev_out, "Report JSON path");
  ev->add_option("--max-sources", ev_max_sources);
  ev->add_option("--min-words", ev_min_words);
  ev->add_option("--seed", ev_seed, "Recorded in the report");
  ev->add_option("--heatmap-out", ev_heatmap, "Attention heatmap of the first source");
  ev->add_option("--heatmap-emotion", ev_heatmap_emotion);

  // params
  auto* params = app.add_subcommand("params", "Extra parameters per variant");
  std::string dims_spec = "D=600,V=25000,m=30,S=10", mode = "both";
  params->add_option("--dims", dims_spec, "D=..,V=..,m=..,S=..");
  params->add_option("--mode", mode)->check(CLI::IsMember({"paper", "actual", "both"}));

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  std::vector<std::string> sv_models;
  std::string sv_scorer = "oracle", sv_host = "127.0.0.1", sv_static;
  int sv_port = 8080;
  serve->add_option("--model", sv_models, "Dialogue checkpoints; the first is the default")->required();
  serve->add_option("--classifier", sv_scorer, "Checkpoint path or 'oracle'");
  serve->add_option("--host", sv_host);
  serve->add_option("--port", sv_port, "Overridden by EMOSEQ_PORT");
  serve->add_option("--static", sv_static, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      auto corpus = synth_corpus(synth_opts);
      auto f = detail::open_out(synth_out);
      write_pairs(f, corpus.pairs);
      if (!synth_labeled.empty()) {
        std::vector<LabeledText> rows;
        for (const auto& p : corpus.pairs) rows.push_back({join_tokens(p.target), *p.emotion});
        auto g = detail::open_out(synth_labeled);
        write_labeled_texts(g, rows);
      }
      out << "wrote " << corpus.pairs.size() << " pairs to " << synth_out << '\n';
    } else if (*tc) {
      ClassifierConfig cfg;
      if (tc_profile == "paper") cfg = classifier_paper_profile();
      else if (tc_profile != "desk") throw CLI::ValidationError("--profile", "unknown profile '" + tc_profile + "'");
      if (tc_epochs) cfg.epochs = *tc_epochs;
      if (tc_seed) cfg.seed = *tc_seed;
      std::ifstream in(tc_data);
      if (!in) throw DataError("cannot open " + tc_data);
      const auto rows = read_labeled_texts(in);
      auto trained = train_classifier<float>(rows, cfg);
      save_checkpoint(tc_out, trained.model);
      const auto& m = trained.metrics;
      ordered_json j;
      j["checkpoint"] = tc_out;
      j["n_train"] = m.n_train;
      j["n_heldout"] = m.n_heldout;
      j["accuracy"] = m.accuracy;
      j["precision"] = m.precision;
      j["recall"] = m.recall;
      j["f1"] = m.f1;
      j["published_reference"] = {{"precision", m.published_reference.precision},
                                  {"recall", m.published_reference.recall},
                                  {"f1", m.published_reference.f1}};
      out << j.dump(2) << '\n';
    } else if (*label) {
      const Scorer scorer = load_scorer(label_scorer);
      auto ingested = ingest_pairs(label_in, IngestOptions{label_min_words});
      auto labeled = label_corpus(scorer, ingested.pairs, threshold);
      auto f = detail::open_out(label_out);
      write_pairs(f, labeled.pairs);
      ordered_json counts = ordered_json::object();
      for (std::size_t e = 0; e < kNumEmotionLabels; ++e) counts[std::string(kEmotionNames[e])] = labeled.stats.counts[e];
      ordered_json j;
      j["pairs"] = labeled.stats.total;
      j["non_emotion_fraction"] = labeled.stats.non_emotion_fraction();
      j["counts"] = counts;
      out << j.dump(2) << '\n';
    } else if (*train) {
      const auto variant = parse_variant(tr_variant);
      if (!variant) throw CLI::ValidationError("--variant", "unknown variant '" + tr_variant + "'");
      ModelConfig cfg = detail::require_profile(tr_profile);
      if (tr_steps) cfg.max_steps = *tr_steps;
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_lr) cfg.lr = *tr_lr;
      if (cfg.max_steps == 0) throw CLI::ValidationError("--steps", "the " + tr_profile + " profile needs --steps");
      IngestOptions io{tr_min_words, cfg.padding, true};
      auto ingested = ingest_pairs(tr_data, io);
      if (ingested.pairs.size() < 2) throw DataError("need at least two usable pairs in " + tr_data);
      auto [train_text, dev_text] = split(std::move(ingested.pairs), cfg.split_ratio, cfg.seed);
      Vocabulary vocab = build_vocab(std::span<const TextPair>(train_text), cfg.vocab_cap);
      const auto train_pairs = encode_pairs(vocab, train_text);
      const auto dev_pairs = encode_pairs(vocab, dev_text);
      TrainHooks hooks;
      hooks.on_dev = [&](std::size_t step, double loss) { out << "step " << step << " dev_loss " << loss << '\n'; };
      auto result = train_dialogue<float>(Seq2SeqModel<float>(*variant, cfg, vocab), train_pairs, dev_pairs, hooks);
      const std::string path = tr_out.empty() ? std::string(name_of(*variant)) + ".ckpt" : tr_out;
      save_checkpoint(path, result.model);
      if (!tr_curve.empty()) {
        auto f = detail::open_out(tr_curve);
        f << "step,loss\n";
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i) f << i << ',' << result.loss_curve[i] << '\n';
      }
      // smooth over the last few batches so one easy batch does not decide it
      const auto& curve = result.loss_curve;
      const std::size_t tail = std::min<std::size_t>(curve.size(), 20);
      double final_loss = 0;
      for (std::size_t i = curve.size() - tail; i < curve.size(); ++i) final_loss += curve[i];
      final_loss /= static_cast<double>(tail);
      ordered_json j;
      j["checkpoint"] = path;
      j["variant"] = std::string(name_of(*variant));
      j["steps"] = curve.size();
      j["final_loss"] = final_loss;
      j["dev_loss"] = result.dev_curve.empty() ? ordered_json(nullptr) : ordered_json(result.dev_curve.back().second);
      j["vocab"] = vocab.size();
      j["truncation_warnings"] = result.model.truncation_warnings();
      out << j.dump(2) << '\n';
    } else if (*ev) {
      const auto model = load_model<float>(ev_model);
      const Scorer scorer = load_scorer(ev_scorer);
      auto ingested = ingest_pairs(ev_test, IngestOptions{ev_min_words, model.config().padding});
      std::vector<std::vector<TokenId>> sources;
      for (const auto& p : ingested.pairs) {
        if (sources.size() >= ev_max_sources) break;
        sources.push_back(model.vocab().encode(p.source));
      }
      const auto report = evaluate(model, scorer, sources, EvalOptions{ev_seed});
      const auto j = to_json(report);
      if (!ev_out.empty()) detail::open_out(ev_out) << j.dump(2) << '\n';
      if (!ev_heatmap.empty()) {
        const auto e = parse_emotion(ev_heatmap_emotion);
        if (!e || *e == Emotion::non_emotion) {
          throw CLI::ValidationError("--heatmap-emotion", "unknown emotion '" + ev_heatmap_emotion + "'");
        }
        detail::open_out(ev_heatmap) << export_heatmap(trace_attention(model, sources.front(), *e)).dump(2) << '\n';
      }
      out << j.dump(2) << '\n';
    } else if (*params) {
      out << params_table(parse_count_dims(dims_spec), mode);
    } else if (*serve) {
      std::vector<Seq2SeqModel<float>> models;
      for (const auto& path : sv_models) models.push_back(load_model<float>(path));
      ChatService service(std::move(models), load_scorer(sv_scorer));
      httplib::Server server;
      service.mount(server, sv_static.empty() ? std::nullopt : std::optional<std::string>(sv_static));
      const int port = resolve_port(sv_port);
      out << "serving " << sv_models.size() << " model(s) on http://" << sv_host << ':' << port << std::endl;
      if (!server.listen(sv_host, port)) throw DataError("cannot listen on " + sv_host + ":" + std::to_string(port));
    }
  } catch (const CLI::Error& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace emoseq
