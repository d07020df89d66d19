#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dkf/corpus.hpp"
#include "dkf/encoder.hpp"
#include "dkf/strings.hpp"

namespace dkf {

struct SelectorConfig {
  double delta = 0.8;
  double learning_rate = 0.02;  // initial rate; decays as lr / (1 + lr_decay * epoch)
  double lr_decay = 0.005;
  double clip_norm = 5.0;  // global gradient norm limit per batch; 0 disables
  std::size_t epochs = 500;
  std::uint64_t seed = 7;
  // Every irrelevant schema slot of a turn is a negative; the only policy.
  std::string negative_sampling = "all-slots";
  EncoderConfig encoder;

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0))
      throw std::invalid_argument("threshold delta must lie strictly between 0 and 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("learning rate must be positive");
    if (!(lr_decay >= 0.0))
      throw std::invalid_argument("learning rate decay must be nonnegative");
    if (!(clip_norm >= 0.0))
      throw std::invalid_argument("gradient clip norm must be nonnegative");
    if (negative_sampling != "all-slots")
      throw std::invalid_argument("unsupported negative sampling policy \"" +
                                  negative_sampling + "\" (only \"all-slots\")");
  }
};

struct TrainingExample {
  std::string history;
  SlotId slot;
  int label = 0;  // 1 iff the slot has a value in the turn's gold state
};

/// One training batch: a turn's history paired with the labels of every
/// schema slot, in schema order.
struct TurnBatch {
  std::string dialogue_id;
  std::size_t turn = 0;
  std::string history;
  std::vector<int> labels;
};

inline std::vector<TurnBatch> build_turn_batches(const Corpus& corpus) {
  std::vector<TurnBatch> batches;
  for (const auto& dialogue : corpus.dialogues) {
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
      TurnBatch b;
      b.dialogue_id = dialogue.id;
      b.turn = t;
      b.history = serialize_history(dialogue, t);
      b.labels.reserve(corpus.schema.slots.size());
      const auto& gold = dialogue.turns[t].gold_state;
      for (const auto& slot : corpus.schema.slots)
        b.labels.push_back(gold.count(slot) ? 1 : 0);
      batches.push_back(std::move(b));
    }
  }
  return batches;
}

/// Flat per-(turn, slot) view of the batches, in dialogue / turn / schema
/// order.
inline std::vector<TrainingExample> build_training_set(const Corpus& corpus) {
  std::vector<TrainingExample> examples;
  for (const auto& batch : build_turn_batches(corpus)) {
    for (std::size_t i = 0; i < corpus.schema.slots.size(); ++i)
      examples.push_back({batch.history, corpus.schema.slots[i], batch.labels[i]});
  }
  return examples;
}

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

inline double softplus(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

/// Binary cross-entropy over relevance scores:
///   -sum_i [a_i ln sim(u, v_i) + (1 - a_i) ln(1 - sim(u, v_i))]
/// computed from the raw dot products to stay finite for any magnitude.
inline double contrastive_loss(const std::vector<double>& history_vec,
                               const std::vector<std::vector<double>>& slot_vecs,
                               const std::vector<int>& labels) {
  if (slot_vecs.size() != labels.size())
    throw std::invalid_argument("contrastive loss: slot vectors and labels differ in length");
  if (slot_vecs.empty())
    throw std::invalid_argument("contrastive loss needs at least one slot");
  double loss = 0.0;
  for (std::size_t i = 0; i < slot_vecs.size(); ++i) {
    const double x = dot(history_vec, slot_vecs[i]);
    loss += softplus(-x) + (1.0 - static_cast<double>(labels[i])) * x;
  }
  return loss;
}

/// Loss of one turn batch plus full parameter gradients, accumulated into
/// `grads`. d(loss)/d(x_i) = sim_i - a_i, pushed through both encoder calls.
inline double turn_loss_and_gradients(const EncoderModel& m, const Schema& schema,
                                      const TurnBatch& batch, Gradients& grads) {
  if (batch.labels.size() != schema.slots.size())
    throw std::invalid_argument("turn batch labels do not align with the schema");
  ForwardTrace history_trace;
  const std::vector<double> u =
      encode_with_trace(m, batch.history, Segment::kHistory, &history_trace);
  std::vector<double> du(m.cfg.d, 0.0);
  std::vector<double> dv(m.cfg.d);
  double loss = 0.0;
  ForwardTrace slot_trace;
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    const std::vector<double> v =
        encode_with_trace(m, slot_text(schema.slots[i]), Segment::kSlot, &slot_trace);
    const double x = dot(u, v);
    const double a = static_cast<double>(batch.labels[i]);
    loss += softplus(-x) + (1.0 - a) * x;
    const double g = sim(u, v) - a;
    for (std::size_t j = 0; j < m.cfg.d; ++j) {
      du[j] += g * v[j];
      dv[j] = g * u[j];
    }
    backward(m, slot_trace, dv, grads);
  }
  backward(m, history_trace, du, grads);
  return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainStats {
  std::vector<double> epoch_mean_loss;  // summed turn losses / example count
  double final_mean_loss = 0.0;
  std::size_t example_count = 0;
};

/// Plain SGD over turn batches. All randomness (weight init, per-epoch batch
/// order) flows from one generator seeded with config.seed, so equal seeds
/// give bit-identical models. Zero epochs returns the raw initialization.
inline EncoderModel train_selector(const Corpus& corpus, const SelectorConfig& config,
                                   TrainStats* stats = nullptr) {
  config.validate();
  const std::vector<TurnBatch> batches = build_turn_batches(corpus);
  if (batches.empty()) throw SchemaError("training set is empty: corpus has no turns");

  Rng rng(config.seed);
  EncoderModel model = init_encoder(corpus, config.encoder, rng);
  model.seed = config.seed;

  Gradients grads = Gradients::zeros_like(model);
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t example_count = batches.size() * corpus.schema.slots.size();
  if (stats) {
    stats->epoch_mean_loss.clear();
    stats->example_count = example_count;
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    const double rate =
        config.learning_rate / (1.0 + config.lr_decay * static_cast<double>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const TurnBatch& batch = batches[idx];
      grads.clear();
      const double loss = turn_loss_and_gradients(model, corpus.schema, batch, grads);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training loss became non-finite at epoch " << epoch + 1 << ", dialogue \""
            << batch.dialogue_id << "\", turn " << batch.turn;
        throw NumericError(msg.str());
      }
      if (config.clip_norm > 0.0) {
        const double norm = std::sqrt(grads.squared_norm());
        if (norm > config.clip_norm) grads.scale(config.clip_norm / norm);
      }
      apply_update(model, -rate, grads);
      epoch_loss += loss;
    }
    const double mean = epoch_loss / static_cast<double>(example_count);
    if (stats) {
      stats->epoch_mean_loss.push_back(mean);
      stats->final_mean_loss = mean;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct SelectionResult {
  std::map<SlotId, double> scores;
  std::vector<SlotId> selected;  // schema order
};

/// Scores every schema slot against the history and keeps those with score
/// strictly greater than delta.
inline SelectionResult select_slots(const EncoderModel& model, const std::string& history_text,
                                    const Schema& schema, double delta) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("threshold delta must lie strictly between 0 and 1");
  SelectionResult result;
  const std::vector<double> u = encode(model, history_text, Segment::kHistory);
  for (const auto& slot : schema.slots) {
    const double score = sim(u, encode(model, slot_text(slot), Segment::kSlot));
    result.scores[slot] = score;
    if (score > delta) result.selected.push_back(slot);
  }
  return result;
}

/// Per-turn precision/recall. Empty predictions score precision 1.0 against
/// an empty gold set and 0.0 otherwise; empty gold sets score recall 1.0.
inline std::pair<double, double> selection_metrics(const std::vector<SlotId>& predicted,
                                                   const std::vector<SlotId>& gold) {
  const std::set<SlotId> gold_set(gold.begin(), gold.end());
  std::size_t hits = 0;
  for (const auto& slot : predicted) hits += gold_set.count(slot);
  double precision;
  if (!predicted.empty())
    precision = static_cast<double>(hits) / static_cast<double>(predicted.size());
  else
    precision = gold_set.empty() ? 1.0 : 0.0;
  const double recall =
      gold_set.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(gold_set.size());
  return {precision, recall};
}

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

/// Per-turn slot scores with gold relevance flags, both in schema order.
struct ScoredTurn {
  std::vector<double> scores;
  std::vector<char> gold;
};

inline std::vector<ScoredTurn> score_corpus(const EncoderModel& model, const Corpus& corpus) {
  std::vector<std::vector<double>> slot_vecs;
  slot_vecs.reserve(corpus.schema.slots.size());
  for (const auto& slot : corpus.schema.slots)
    slot_vecs.push_back(encode(model, slot_text(slot), Segment::kSlot));

  std::vector<ScoredTurn> turns;
  for (const auto& dialogue : corpus.dialogues) {
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
      const std::vector<double> u =
          encode(model, serialize_history(dialogue, t), Segment::kHistory);
      ScoredTurn st;
      st.scores.reserve(slot_vecs.size());
      st.gold.reserve(slot_vecs.size());
      const auto& gold = dialogue.turns[t].gold_state;
      for (std::size_t i = 0; i < slot_vecs.size(); ++i) {
        st.scores.push_back(sim(u, slot_vecs[i]));
        st.gold.push_back(gold.count(corpus.schema.slots[i]) ? 1 : 0);
      }
      turns.push_back(std::move(st));
    }
  }
  return turns;
}

struct SweepPoint {
  double delta = 0.0;
  double precision = 0.0;  // micro-averaged over all (turn, slot) decisions
  double recall = 0.0;
};

inline const std::vector<double>& default_sweep_grid() {
  static const std::vector<double> grid{0.9, 0.8, 0.7, 0.6, 0.5};
  return grid;
}

inline std::vector<SweepPoint> sweep_from_scores(const std::vector<ScoredTurn>& turns,
                                                 const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("threshold grid is empty");
  for (double delta : grid)
    if (!(delta > 0.0 && delta < 1.0))
      throw std::invalid_argument("threshold grid values must lie strictly between 0 and 1");
  std::vector<SweepPoint> points;
  points.reserve(grid.size());
  for (double delta : grid) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& turn : turns) {
      for (std::size_t i = 0; i < turn.scores.size(); ++i) {
        const bool pred = turn.scores[i] > delta;
        const bool gold = turn.gold[i] != 0;
        if (pred && gold)
          ++tp;
        else if (pred)
          ++fp;
        else if (gold)
          ++fn;
      }
    }
    SweepPoint p;
    p.delta = delta;
    p.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                              : (fn == 0 ? 1.0 : 0.0);
    p.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
    points.push_back(p);
  }
  return points;
}

inline std::vector<SweepPoint> sweep_threshold(const EncoderModel& model, const Corpus& corpus,
                                               const std::vector<double>& grid) {
  return sweep_from_scores(score_corpus(model, corpus), grid);
}

/// Operating-point rule: highest precision, ties broken by higher recall,
/// then by grid position.
inline const SweepPoint& best_sweep_point(const std::vector<SweepPoint>& points) {
  if (points.empty()) throw std::invalid_argument("threshold grid is empty");
  const SweepPoint* best = &points.front();
  for (const auto& p : points) {
    if (p.precision > best->precision ||
        (p.precision == best->precision && p.recall > best->recall))
      best = &p;
  }
  return *best;
}

/// CSV rows in grid order; precision and recall as percentages with one
/// decimal place.
inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "delta,precision,recall\n";
  for (const auto& p : points) {
    out += format_number(p.delta);
    out += ',';
    out += percent1(p.precision);
    out += ',';
    out += percent1(p.recall);
    out += '\n';
  }
  return out;
}

}  // namespace dkf
