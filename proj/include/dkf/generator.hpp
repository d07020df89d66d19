#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dkf/corpus.hpp"
#include "dkf/fusion.hpp"
#include "dkf/selector.hpp"
#include "dkf/strings.hpp"

namespace dkf {

/// Marker a generator emits for a mask it cannot fill; dropped when the
/// summary is inverted back into a state.
inline constexpr const char* kNoneMarker = "none";

/// Values chosen for a template's masks, keyed by mask index.
struct Fill {
  std::map<std::size_t, std::string> values;
};

/// Stage two: anything that can turn a prompt into mask values. The bundle's
/// flags say which parts are visible; implementations may read the mask
/// indices (they shape the output) but must not read hidden content.
class StateGenerator {
 public:
  virtual ~StateGenerator() = default;
  virtual Fill fill(const PromptBundle& bundle) const = 0;
};

// ---------------------------------------------------------------------------
// Extractive reference generator
// ---------------------------------------------------------------------------

namespace detail {

/// Whole-word occurrences of `value` in `text`: the match may not touch word
/// characters on either side. Returns start offsets, ascending.
inline std::vector<std::size_t> word_occurrences(const std::string& text,
                                                 const std::string& value) {
  std::vector<std::size_t> starts;
  if (value.empty()) return starts;
  std::size_t from = 0;
  while (true) {
    const std::size_t at = text.find(value, from);
    if (at == std::string::npos) break;
    const bool left_ok = at == 0 || !is_word_char(text[at - 1]);
    const std::size_t end = at + value.size();
    const bool right_ok = end == text.size() || !is_word_char(text[end]);
    if (left_ok && right_ok) starts.push_back(at);
    from = at + 1;
  }
  return starts;
}

struct Occurrence {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t candidate_rank = 0;  // position in the candidate list

  std::size_t end() const { return start + length; }
};

/// Plain pick: the occurrence ending furthest right; ties prefer the longer
/// value, then the earlier candidate.
inline bool better_plain(const Occurrence& a, const Occurrence& b) {
  if (a.end() != b.end()) return a.end() > b.end();
  if (a.length != b.length) return a.length > b.length;
  return a.candidate_rank < b.candidate_rank;
}

/// Window pick: the occurrence starting soonest at or after `window_start`;
/// ties prefer the longer value, then the earlier candidate.
inline bool better_windowed(const Occurrence& a, const Occurrence& b) {
  if (a.start != b.start) return a.start < b.start;
  if (a.length != b.length) return a.length > b.length;
  return a.candidate_rank < b.candidate_rank;
}

inline std::optional<Occurrence> pick_plain(const std::string& text,
                                            const std::vector<std::string>& candidates) {
  std::optional<Occurrence> best;
  for (std::size_t rank = 0; rank < candidates.size(); ++rank) {
    const auto starts = word_occurrences(text, candidates[rank]);
    if (starts.empty()) continue;
    Occurrence occ{starts.back(), candidates[rank].size(), rank};
    if (!best || better_plain(occ, *best)) best = occ;
  }
  return best;
}

inline std::optional<Occurrence> pick_after(const std::string& text,
                                            const std::vector<std::string>& candidates,
                                            std::size_t window_start) {
  std::optional<Occurrence> best;
  for (std::size_t rank = 0; rank < candidates.size(); ++rank) {
    for (std::size_t start : word_occurrences(text, candidates[rank])) {
      if (start < window_start) continue;
      Occurrence occ{start, candidates[rank].size(), rank};
      if (!best || better_windowed(occ, *best)) best = occ;
      break;  // occurrences are ascending; only the first past the cue matters
    }
  }
  return best;
}

}  // namespace detail

/// Deterministic stand-in for a learned seq2seq filler. For each mask it
/// scans the dialogue history for candidate values as whole words and picks
/// the last occurrence (rightmost end; ties to the longer value, then
/// ontology order). When the template is visible, the cue word just before a
/// mask (the last word of the preceding literal, e.g. "from" / "to") narrows
/// the scan: the pick closest after the cue's last occurrence wins, falling
/// back to the plain rule when the cue or a windowed match is absent.
/// Hidden candidates mean every mask comes back "none"; a hidden template
/// (flat values pool) drops the per-mask anchoring, so every mask gets the
/// pool's plain pick.
class ExtractiveGenerator : public StateGenerator {
 public:
  Fill fill(const PromptBundle& bundle) const override {
    const OutputTemplate& t = bundle.output_template;
    Fill result;
    if (!bundle.flags.include_candidates) {
      for (std::size_t i = 0; i < t.mask_count(); ++i) result.values[i] = kNoneMarker;
      return result;
    }
    if (!bundle.flags.include_template) {
      const std::vector<std::string> pool = flatten_candidates(bundle.candidates);
      const auto pick = detail::pick_plain(bundle.history, pool);
      const std::string value = pick ? pool[pick->candidate_rank] : kNoneMarker;
      for (std::size_t i = 0; i < t.mask_count(); ++i) result.values[i] = value;
      return result;
    }

    const std::vector<std::string> segments = template_segments(t);
    for (std::size_t i = 0; i < t.mask_count(); ++i) {
      const std::vector<std::string>& candidates = bundle.candidates[i].second;
      std::optional<detail::Occurrence> pick;
      const std::vector<std::string> cue_words = split_words(to_lower(segments[i]));
      if (!cue_words.empty()) {
        const auto cue_starts = detail::word_occurrences(bundle.history, cue_words.back());
        if (!cue_starts.empty())
          pick = detail::pick_after(bundle.history, candidates,
                                    cue_starts.back() + cue_words.back().size());
      }
      if (!pick) pick = detail::pick_plain(bundle.history, candidates);
      result.values[i] = pick ? candidates[pick->candidate_rank] : kNoneMarker;
    }
    return result;
  }
};

/// Self-test generator: fills every mask straight from a gold state. Composed
/// with gold slot selection it makes the whole pipeline an identity.
class GoldOracleGenerator : public StateGenerator {
 public:
  explicit GoldOracleGenerator(DialogueState gold) : gold_(std::move(gold)) {}

  Fill fill(const PromptBundle& bundle) const override {
    Fill result;
    const OutputTemplate& t = bundle.output_template;
    for (std::size_t i = 0; i < t.mask_count(); ++i) {
      auto it = gold_.find(t.mask_slots[i]);
      result.values[i] = it == gold_.end() ? kNoneMarker : it->second;
    }
    return result;
  }

 private:
  DialogueState gold_;
};

// ---------------------------------------------------------------------------
// Summary rendering and exact inversion
// ---------------------------------------------------------------------------

/// Substitutes each "[i]" with fill.values[i] verbatim ("none" included).
inline std::string render_summary(const OutputTemplate& t, const Fill& fill) {
  if (fill.values.size() != t.mask_count())
    throw std::invalid_argument("fill does not cover the template's masks");
  const std::vector<std::string> segments = template_segments(t);
  std::string out = segments[0];
  for (std::size_t i = 0; i < t.mask_count(); ++i) {
    auto it = fill.values.find(i);
    if (it == fill.values.end())
      throw std::invalid_argument("fill is missing a value for marker " + mask_marker(i));
    out += it->second;
    out += segments[i + 1];
  }
  return out;
}

namespace detail {

inline bool parse_summary(const std::string& summary, const std::vector<std::string>& segments,
                          std::size_t seg_index, std::size_t pos,
                          std::vector<std::string>& values) {
  const std::string& literal = segments[seg_index];
  if (summary.compare(pos, literal.size(), literal) != 0) return false;
  pos += literal.size();
  if (seg_index + 1 == segments.size()) return pos == summary.size();
  for (std::size_t end = pos + 1; end <= summary.size(); ++end) {
    if (parse_summary(summary, segments, seg_index + 1, end, values)) {
      values[seg_index] = summary.substr(pos, end - pos);
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Exact inverse of render_summary: peels the template's literal segments off
/// the summary and reads the mask values out of the gaps (shortest value,
/// leftmost continuation first when several parses exist). "none" values are
/// dropped. Summaries that do not fit the skeleton are contract violations.
inline DialogueState invert_template(const OutputTemplate& t, const std::string& summary) {
  const std::vector<std::string> segments = template_segments(t);
  std::vector<std::string> values(t.mask_count());
  if (!detail::parse_summary(summary, segments, 0, 0, values))
    throw SchemaError("summary does not match the template skeleton: \"" + summary + "\"");
  DialogueState state;
  for (std::size_t i = 0; i < t.mask_count(); ++i)
    if (values[i] != kNoneMarker) state[t.mask_slots[i]] = values[i];
  return state;
}

// ---------------------------------------------------------------------------
// Turn-level prediction pipeline
// ---------------------------------------------------------------------------

enum class SelectionMode { kModel, kGold };

/// history -> slot selection -> template -> candidates -> prompt -> generator
/// -> summary -> inverted state. The generator only sees what the ablation
/// exposes; the template used for inversion is pipeline-internal.
inline DialogueState predict_state(const EncoderModel* model, const StateGenerator& generator,
                                   const Dialogue& dialogue, std::size_t turn_index,
                                   const SelectorConfig& config, const Corpus& corpus,
                                   Ablation ablation = Ablation::kFull,
                                   SelectionMode mode = SelectionMode::kModel) {
  const std::string history = serialize_history(dialogue, turn_index);
  std::vector<SlotId> selected;
  if (mode == SelectionMode::kGold) {
    selected = gold_relevant_slots(dialogue.turns[turn_index].gold_state, corpus.schema);
  } else {
    if (model == nullptr)
      throw std::invalid_argument("model-based slot selection needs a trained model");
    selected = select_slots(*model, history, corpus.schema, config.delta).selected;
  }
  const OutputTemplate t = build_template(selected, corpus.templates, corpus.schema);
  const CandidateList candidates = attach_candidates(t, corpus.ontology);
  const PromptBundle bundle =
      assemble_prompt(history, t, candidates, ablation_flags(ablation));
  const Fill fill = generator.fill(bundle);
  return invert_template(t, render_summary(t, fill));
}

// ---------------------------------------------------------------------------
// Prediction dumps
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string dialogue_id;
  std::size_t turn = 0;
  DialogueState state;
};

inline std::string dump_predictions(const std::vector<PredictionRecord>& records) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json entry;
    entry["dialogue_id"] = r.dialogue_id;
    entry["turn"] = r.turn;
    nlohmann::ordered_json state = nlohmann::ordered_json::object();
    for (const auto& [slot, value] : r.state) state[slot.rendered()] = value;
    entry["state"] = state;
    out.push_back(std::move(entry));
  }
  return out.dump(2) + "\n";
}

inline std::vector<PredictionRecord> parse_predictions(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    detail::position_of_offset(text, e.byte > 0 ? e.byte - 1 : 0, line, column);
    throw ParseError(std::string("prediction dump is not valid JSON: ") + e.what(), line,
                     column);
  }
  if (!root.is_array())
    throw SchemaError("prediction dump must be a JSON array of records");
  std::vector<PredictionRecord> records;
  records.reserve(root.size());
  for (const auto& entry : root) {
    if (!entry.is_object() || !entry.contains("dialogue_id") || !entry.contains("turn") ||
        !entry.contains("state"))
      throw SchemaError(
          "prediction records need \"dialogue_id\", \"turn\" and \"state\" fields");
    PredictionRecord r;
    if (!entry["dialogue_id"].is_string())
      throw SchemaError("prediction record \"dialogue_id\" must be a string");
    r.dialogue_id = to_lower(entry["dialogue_id"].get<std::string>());
    if (!entry["turn"].is_number_unsigned())
      throw SchemaError("prediction record \"turn\" must be a nonnegative integer");
    r.turn = entry["turn"].get<std::size_t>();
    if (!entry["state"].is_object())
      throw SchemaError("prediction record \"state\" must be an object");
    for (auto it = entry["state"].begin(); it != entry["state"].end(); ++it) {
      const SlotId slot = detail::parse_slot_key(
          to_lower(it.key()), "prediction for dialogue \"" + r.dialogue_id + "\"");
      if (!it.value().is_string())
        throw SchemaError("prediction values must be strings (dialogue \"" + r.dialogue_id +
                          "\", slot \"" + slot.rendered() + "\")");
      r.state[slot] = it.value().get<std::string>();
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace dkf
