#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dkf/corpus.hpp"
#include "dkf/generator.hpp"
#include "dkf/strings.hpp"

namespace dkf {

struct EvalRecord {
  std::string dialogue_id;
  std::size_t turn = 0;
  DialogueState gold;
  DialogueState predicted;
};

struct EvalReport {
  double jga = 0.0;
  double sa = 0.0;
  std::map<SlotId, double> per_slot;
  std::size_t turn_count = 0;
};

/// Values compare as lowercased, whitespace-trimmed strings.
inline std::string normalize_value(const std::string& value) { return trim(to_lower(value)); }

inline bool states_match(const DialogueState& a, const DialogueState& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (normalize_value(ia->second) != normalize_value(ib->second)) return false;
  }
  return true;
}

/// Fraction of turns whose predicted state equals the gold state exactly:
/// same slots, same values.
inline double joint_goal_accuracy(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("cannot evaluate an empty record list");
  std::size_t exact = 0;
  for (const auto& r : records) exact += states_match(r.gold, r.predicted) ? 1 : 0;
  return static_cast<double>(exact) / static_cast<double>(records.size());
}

/// Per slot, the fraction of turns where prediction and gold agree (a slot
/// absent from both counts as agreement); the headline number is the plain
/// mean over the schema's slots. Cells pool over all turns before averaging.
inline std::pair<double, std::map<SlotId, double>> slot_accuracy(
    const std::vector<EvalRecord>& records, const Schema& schema) {
  if (records.empty()) throw std::invalid_argument("cannot evaluate an empty record list");
  std::map<SlotId, double> per_slot;
  double total = 0.0;
  for (const auto& slot : schema.slots) {
    std::size_t agree = 0;
    for (const auto& r : records) {
      auto g = r.gold.find(slot);
      auto p = r.predicted.find(slot);
      const std::string gv = g == r.gold.end() ? std::string() : normalize_value(g->second);
      const std::string pv =
          p == r.predicted.end() ? std::string() : normalize_value(p->second);
      agree += gv == pv ? 1 : 0;
    }
    const double acc = static_cast<double>(agree) / static_cast<double>(records.size());
    per_slot[slot] = acc;
    total += acc;
  }
  return {total / static_cast<double>(schema.slots.size()), per_slot};
}

inline EvalReport evaluate(const std::vector<EvalRecord>& records, const Schema& schema) {
  EvalReport report;
  report.jga = joint_goal_accuracy(records);
  auto [sa, per_slot] = slot_accuracy(records, schema);
  report.sa = sa;
  report.per_slot = std::move(per_slot);
  report.turn_count = records.size();
  return report;
}

/// Joins a prediction dump with its dataset's gold states. Every record must
/// name a known dialogue and turn, use only schema slots, and appear once.
inline std::vector<EvalRecord> make_eval_records(const std::vector<PredictionRecord>& predictions,
                                                 const Corpus& corpus) {
  if (predictions.empty())
    throw SchemaError("prediction dump is empty: nothing to evaluate");
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : corpus.dialogues) by_id[d.id] = &d;
  std::set<std::pair<std::string, std::size_t>> seen;
  std::vector<EvalRecord> records;
  records.reserve(predictions.size());
  for (const auto& p : predictions) {
    auto it = by_id.find(p.dialogue_id);
    if (it == by_id.end())
      throw SchemaError("prediction references unknown dialogue \"" + p.dialogue_id + "\"");
    if (p.turn >= it->second->turns.size())
      throw SchemaError("prediction references turn " + std::to_string(p.turn) +
                        " of dialogue \"" + p.dialogue_id + "\", which has only " +
                        std::to_string(it->second->turns.size()) + " turns");
    if (!seen.insert({p.dialogue_id, p.turn}).second)
      throw SchemaError("duplicate prediction for dialogue \"" + p.dialogue_id + "\" turn " +
                        std::to_string(p.turn));
    for (const auto& [slot, value] : p.state) {
      (void)value;
      if (!corpus.schema.contains(slot))
        throw SchemaError("prediction for dialogue \"" + p.dialogue_id +
                          "\" uses slot \"" + slot.rendered() +
                          "\" that the dataset schema does not declare");
    }
    EvalRecord r;
    r.dialogue_id = p.dialogue_id;
    r.turn = p.turn;
    r.gold = it->second->turns[p.turn].gold_state;
    r.predicted = p.state;
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline std::string report_csv(const EvalReport& report) {
  std::string out = "metric,value\n";
  out += "JGA," + percent1(report.jga) + "\n";
  out += "SA," + percent1(report.sa) + "\n";
  for (const auto& [slot, acc] : report.per_slot)
    out += slot.rendered() + "," + percent1(acc) + "\n";
  out += "turns," + std::to_string(report.turn_count) + "\n";
  return out;
}

inline std::string report_summary(const EvalReport& report) {
  std::string out;
  out += "Evaluated " + std::to_string(report.turn_count) + " turns.\n";
  out += "Joint goal accuracy: " + percent1(report.jga) + "%\n";
  out += "Slot accuracy (per-slot cells pooled over all turns, then averaged over slots): " +
         percent1(report.sa) + "%\n";
  out += "Per-slot accuracy:\n";
  for (const auto& [slot, acc] : report.per_slot)
    out += "  " + slot.rendered() + ": " + percent1(acc) + "%\n";
  return out;
}

/// Writes metrics.csv and summary.txt into `directory`, creating it first.
inline void emit_report(const EvalReport& report, const std::string& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec)
    throw IoError("cannot create report directory \"" + directory + "\": " + ec.message());
  const std::filesystem::path dir(directory);
  write_file((dir / "metrics.csv").string(), report_csv(report));
  write_file((dir / "summary.txt").string(), report_summary(report));
}

}  // namespace dkf
