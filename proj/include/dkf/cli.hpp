#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkf/checkpoint.hpp"
#include "dkf/corpus.hpp"
#include "dkf/eval.hpp"
#include "dkf/fusion.hpp"
#include "dkf/generator.hpp"
#include "dkf/selector.hpp"
#include "dkf/strings.hpp"

namespace dkf {

/// One experiment, fully specified: a JSON config file (flat keys below) that
/// command-line flags may override.
struct RunConfig {
  std::string dataset;
  std::string checkpoint;
  std::string out = "out";
  SelectorConfig selector;
  std::vector<double> grid = default_sweep_grid();
  Ablation ablation = Ablation::kFull;
  std::string generator = "extractive";  // or "gold-oracle"
};

inline void validate_generator_name(const std::string& name) {
  if (name != "extractive" && name != "gold-oracle")
    throw std::invalid_argument("unknown generator \"" + name +
                                "\" (expected extractive or gold-oracle)");
}

/// Applies a config file on top of `config`. Keys mirror RunConfig; unknown
/// keys are rejected so typos cannot silently fall back to defaults.
inline void load_run_config(const std::string& path, RunConfig& config) {
  const std::string text = read_file(path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    detail::position_of_offset(text, e.byte > 0 ? e.byte - 1 : 0, line, column);
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), line, column);
  }
  if (!root.is_object()) throw SchemaError("config must be a JSON object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string& key = it.key();
    const auto& value = it.value();
    try {
      if (key == "dataset")
        config.dataset = value.get<std::string>();
      else if (key == "checkpoint")
        config.checkpoint = value.get<std::string>();
      else if (key == "out")
        config.out = value.get<std::string>();
      else if (key == "delta")
        config.selector.delta = value.get<double>();
      else if (key == "learning_rate")
        config.selector.learning_rate = value.get<double>();
      else if (key == "lr_decay")
        config.selector.lr_decay = value.get<double>();
      else if (key == "clip_norm")
        config.selector.clip_norm = value.get<double>();
      else if (key == "epochs")
        config.selector.epochs = value.get<std::size_t>();
      else if (key == "seed")
        config.selector.seed = value.get<std::uint64_t>();
      else if (key == "negative_sampling")
        config.selector.negative_sampling = value.get<std::string>();
      else if (key == "d")
        config.selector.encoder.d = value.get<std::size_t>();
      else if (key == "d_ff")
        config.selector.encoder.d_ff = value.get<std::size_t>();
      else if (key == "heads")
        config.selector.encoder.heads = value.get<std::size_t>();
      else if (key == "layers")
        config.selector.encoder.layers = value.get<std::size_t>();
      else if (key == "max_len")
        config.selector.encoder.max_len = value.get<std::size_t>();
      else if (key == "grid")
        config.grid = value.get<std::vector<double>>();
      else if (key == "ablation")
        config.ablation = parse_ablation(value.get<std::string>());
      else if (key == "generator") {
        config.generator = value.get<std::string>();
        validate_generator_name(config.generator);
      } else {
        throw SchemaError("config has unknown key \"" + key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("config key \"" + key + "\": " + e.what());
    }
  }
}

/// Comma-separated threshold list, e.g. "0.5,0.6,0.7".
inline std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t comma = spec.find(',', start);
    if (comma == std::string::npos) comma = spec.size();
    const std::string item = trim(spec.substr(start, comma - start));
    if (!item.empty()) {
      try {
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        grid.push_back(v);
      } catch (const std::exception&) {
        throw std::invalid_argument("cannot parse grid value \"" + item + "\"");
      }
    }
    start = comma + 1;
  }
  if (grid.empty()) throw std::invalid_argument("threshold grid is empty");
  return grid;
}

namespace detail {

inline void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory \"" + out + "\": " + ec.message());
}

inline std::string out_path(const RunConfig& config, const std::string& name) {
  return (std::filesystem::path(config.out) / name).string();
}

inline Corpus load_dataset(const RunConfig& config) {
  if (config.dataset.empty())
    throw std::invalid_argument("no dataset given (use --dataset or the config file)");
  return load_corpus(config.dataset);
}

inline std::string ablation_slug(Ablation a) {
  switch (a) {
    case Ablation::kFull:
      return "full";
    case Ablation::kNoPrompt:
      return "no-prompt";
    case Ablation::kNoTemplate:
      return "no-ot";
    case Ablation::kNoCandidates:
      return "no-cv";
  }
  return "unknown";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit code; errors are thrown and mapped
// by run_command.
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& config, std::ostream& out = std::cout) {
  const Corpus corpus = detail::load_dataset(config);
  if (config.checkpoint.empty())
    throw std::invalid_argument("no checkpoint path given (use --checkpoint)");
  TrainStats stats;
  const EncoderModel model = train_selector(corpus, config.selector, &stats);
  save_checkpoint(model, config.checkpoint);

  std::string log = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < stats.epoch_mean_loss.size(); ++e)
    log += std::to_string(e + 1) + "," + format_number(stats.epoch_mean_loss[e]) + "\n";
  detail::ensure_out_dir(config.out);
  write_file(detail::out_path(config, "train_log.csv"), log);

  out << log;
  out << "trained " << stats.epoch_mean_loss.size() << " epochs over " << stats.example_count
      << " examples per epoch\n";
  if (!stats.epoch_mean_loss.empty())
    out << "final mean per-example loss: " << format_number(stats.final_mean_loss) << "\n";
  out << "checkpoint written to " << config.checkpoint << "\n";
  return 0;
}

inline int cmd_sweep(const RunConfig& config, std::ostream& out = std::cout) {
  const Corpus corpus = detail::load_dataset(config);
  if (config.checkpoint.empty())
    throw std::invalid_argument("no checkpoint path given (use --checkpoint)");
  const EncoderModel model = load_checkpoint(config.checkpoint);
  const std::vector<SweepPoint> points = sweep_threshold(model, corpus, config.grid);
  const std::string csv = sweep_csv(points);
  detail::ensure_out_dir(config.out);
  write_file(detail::out_path(config, "sweep.csv"), csv);

  std::size_t turns = 0;
  for (const auto& d : corpus.dialogues) turns += d.turns.size();
  out << "micro-averaged over " << turns << " turns\n";
  out << csv;
  const SweepPoint& best = best_sweep_point(points);
  out << "best delta by precision: " << format_number(best.delta) << " (precision "
      << percent1(best.precision) << ", recall " << percent1(best.recall) << ")\n";
  return 0;
}

/// Predicts a state for every turn of every dialogue. The gold-oracle
/// generator doubles as a harness self-test: it selects the gold slots and
/// fills them from the gold state, so no checkpoint is needed.
inline std::vector<PredictionRecord> predict_corpus(const EncoderModel* model,
                                                    const Corpus& corpus,
                                                    const SelectorConfig& selector,
                                                    Ablation ablation,
                                                    const std::string& generator_name) {
  validate_generator_name(generator_name);
  const bool gold_mode = generator_name == "gold-oracle";
  if (!gold_mode && model == nullptr)
    throw std::invalid_argument("the extractive generator needs a trained checkpoint");
  std::vector<PredictionRecord> records;
  const ExtractiveGenerator extractive;
  for (const auto& dialogue : corpus.dialogues) {
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
      PredictionRecord r;
      r.dialogue_id = dialogue.id;
      r.turn = t;
      if (gold_mode) {
        const GoldOracleGenerator oracle(dialogue.turns[t].gold_state);
        r.state = predict_state(model, oracle, dialogue, t, selector, corpus, ablation,
                                SelectionMode::kGold);
      } else {
        r.state = predict_state(model, extractive, dialogue, t, selector, corpus, ablation,
                                SelectionMode::kModel);
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

inline int cmd_predict(const RunConfig& config, std::ostream& out = std::cout) {
  const Corpus corpus = detail::load_dataset(config);
  validate_generator_name(config.generator);
  std::unique_ptr<EncoderModel> model;
  if (config.generator != "gold-oracle") {
    if (config.checkpoint.empty())
      throw std::invalid_argument("no checkpoint path given (use --checkpoint)");
    model = std::make_unique<EncoderModel>(load_checkpoint(config.checkpoint));
  }
  const std::vector<PredictionRecord> records =
      predict_corpus(model.get(), corpus, config.selector, config.ablation, config.generator);
  detail::ensure_out_dir(config.out);
  const std::string path = detail::out_path(config, "predictions.json");
  write_file(path, dump_predictions(records));
  out << "wrote " << records.size() << " predictions to " << path << "\n";
  return 0;
}

inline int cmd_evaluate(const RunConfig& config, const std::string& predictions_path,
                        std::ostream& out = std::cout) {
  const Corpus corpus = detail::load_dataset(config);
  const std::vector<PredictionRecord> predictions =
      parse_predictions(read_file(predictions_path));
  const std::vector<EvalRecord> records = make_eval_records(predictions, corpus);
  const EvalReport report = evaluate(records, corpus.schema);
  emit_report(report, config.out);
  out << "JGA," << percent1(report.jga) << "\n";
  out << "SA," << percent1(report.sa) << "\n";
  return 0;
}

/// Runs predict + evaluate for all four prompt configurations and writes one
/// combined CSV (rows in the usual presentation order).
inline int cmd_ablate(const RunConfig& config, std::ostream& out = std::cout) {
  const Corpus corpus = detail::load_dataset(config);
  validate_generator_name(config.generator);
  std::unique_ptr<EncoderModel> model;
  if (config.generator != "gold-oracle") {
    if (config.checkpoint.empty())
      throw std::invalid_argument("no checkpoint path given (use --checkpoint)");
    model = std::make_unique<EncoderModel>(load_checkpoint(config.checkpoint));
  }
  detail::ensure_out_dir(config.out);

  std::string csv = "ablation,JGA,SA\n";
  for (Ablation ablation : {Ablation::kFull, Ablation::kNoPrompt, Ablation::kNoTemplate,
                            Ablation::kNoCandidates}) {
    const std::vector<PredictionRecord> records =
        predict_corpus(model.get(), corpus, config.selector, ablation, config.generator);
    write_file(detail::out_path(config,
                                "predictions-" + detail::ablation_slug(ablation) + ".json"),
               dump_predictions(records));
    const EvalReport report = evaluate(make_eval_records(records, corpus), corpus.schema);
    csv += ablation_name(ablation) + "," + percent1(report.jga) + "," + percent1(report.sa) +
           "\n";
  }
  write_file(detail::out_path(config, "ablation.csv"), csv);
  out << csv;
  return 0;
}

/// Maps thrown errors onto the exit-code contract: 2 for input and usage
/// problems, 3 for data-contract violations, 4 for numerical failure.
inline int run_command(const std::string& command, const std::function<int()>& body,
                       std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "dkf " << command << ": numeric error: " << e.what() << "\n";
    return 4;
  } catch (const SchemaError& e) {
    err << "dkf " << command << ": data error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    err << "dkf " << command << ": parse error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "dkf " << command << ": io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "dkf " << command << ": error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace dkf
