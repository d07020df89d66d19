#pragma once

#include <compare>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkf/strings.hpp"

namespace dkf {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// JSON or file-level failure; carries the 1-based line/column when known.
struct ParseError : std::runtime_error {
  std::size_t line = 0;
  std::size_t column = 0;
  ParseError(const std::string& msg, std::size_t l = 0, std::size_t c = 0)
      : std::runtime_error(msg), line(l), column(c) {}
};

/// Well-formed input that violates the dataset contract (unknown slot,
/// duplicate id, banned character, ...).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite value reached a numeric computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// A slot identifier, e.g. {"taxi", "departure"}, rendered as "taxi-departure".
/// Neither part may contain a hyphen, so the rendered form always has exactly
/// one separator.
struct SlotId {
  std::string domain;
  std::string slot;

  std::string rendered() const { return domain + "-" + slot; }
  auto operator<=>(const SlotId&) const = default;
};

/// Slot -> value map. Absent key means "no value"; empty-string values are
/// never stored.
using DialogueState = std::map<SlotId, std::string>;

struct Turn {
  std::string system_utterance;  // empty on the opening turn
  std::string user_utterance;
  DialogueState gold_state;  // cumulative up to and including this turn
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

/// Declared slots in file order. Declaration order is the canonical slot
/// ordering used everywhere downstream (mask numbering, tie-breaking,
/// report rows).
struct Schema {
  std::vector<SlotId> slots;
  std::vector<std::string> domain_order;  // domains by first appearance

  std::optional<std::size_t> index_of(const SlotId& s) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i] == s) return i;
    return std::nullopt;
  }
  bool contains(const SlotId& s) const { return index_of(s).has_value(); }
};

/// Candidate values per slot, in file order.
struct Ontology {
  std::map<SlotId, std::vector<std::string>> candidates;
};

/// Per-slot phrase patterns (each containing exactly one "<v>" hole) and
/// per-domain prefix sentences (no holes).
struct TemplateCatalog {
  std::map<SlotId, std::string> phrase_templates;
  std::map<std::string, std::string> domain_prefixes;
};

struct Corpus {
  Schema schema;
  Ontology ontology;
  TemplateCatalog templates;
  std::vector<Dialogue> dialogues;
};

/// Hole marker inside phrase patterns.
inline constexpr const char* kValueHole = "<v>";

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace detail {

inline void position_of_offset(const std::string& text, std::size_t offset,
                               std::size_t& line, std::size_t& column) {
  line = 1;
  column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
}

inline SlotId parse_slot_key(const std::string& key, const std::string& context) {
  auto first = key.find('-');
  if (first == std::string::npos || key.find('-', first + 1) != std::string::npos)
    throw SchemaError("slot key \"" + key + "\" in " + context +
                      " must contain exactly one hyphen");
  SlotId s{key.substr(0, first), key.substr(first + 1)};
  if (s.domain.empty() || s.slot.empty())
    throw SchemaError("slot key \"" + key + "\" in " + context +
                      " has an empty domain or slot name");
  return s;
}

/// The "||" prompt-section separator and the "|" value separator must never
/// occur in corpus text, and histories are single-line by construction.
inline void check_text(const std::string& text, const std::string& context) {
  if (text.find('|') != std::string::npos)
    throw SchemaError("character '|' is reserved and may not appear in " + context);
  if (text.find('\n') != std::string::npos || text.find('\r') != std::string::npos)
    throw SchemaError("newlines may not appear in " + context);
}

/// Template text additionally may not contain brackets: "[" and "]" delimit
/// mask markers in assembled templates.
inline void check_template_text(const std::string& text, const std::string& context) {
  check_text(text, context);
  if (text.find('[') != std::string::npos || text.find(']') != std::string::npos)
    throw SchemaError("characters '[' and ']' are reserved and may not appear in " + context);
}

}  // namespace detail

/// Parses and validates a dataset. All text is lowercased here, once.
///
/// Expected shape (UTF-8, no comments):
///   {
///     "schema":    [ {"domain": "...", "slot": "..."}, ... ],
///     "ontology":  { "domain-slot": ["value", ...], ... },
///     "templates": { "prefixes": { "domain": "sentence" },
///                    "phrases":  { "domain-slot": "pattern with <v>" } },
///     "dialogues": [ {"id": "...",
///                     "turns": [ {"sys": "...", "user": "...",
///                                 "state": {"domain-slot": "value"} } ]} ]
///   }
inline Corpus load_corpus_text(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 0, column = 0;
    detail::position_of_offset(text, e.byte > 0 ? e.byte - 1 : 0, line, column);
    std::ostringstream msg;
    msg << "dataset parse error at line " << line << ", column " << column << ": "
        << e.what();
    throw ParseError(msg.str(), line, column);
  }
  if (!root.is_object())
    throw SchemaError("dataset root must be a JSON object");
  for (const char* key : {"schema", "ontology", "templates", "dialogues"})
    if (!root.contains(key))
      throw SchemaError(std::string("dataset is missing the \"") + key + "\" section");

  auto lower_string = [](const nlohmann::json& j, const std::string& context) {
    if (!j.is_string())
      throw SchemaError(context + " must be a string");
    return to_lower(j.get<std::string>());
  };

  Corpus corpus;

  // schema
  const auto& schema_node = root["schema"];
  if (!schema_node.is_array() || schema_node.empty())
    throw SchemaError("\"schema\" must be a nonempty array");
  std::set<SlotId> seen_slots;
  for (const auto& entry : schema_node) {
    if (!entry.is_object() || !entry.contains("domain") || !entry.contains("slot"))
      throw SchemaError("schema entries must be objects with \"domain\" and \"slot\"");
    SlotId s{lower_string(entry["domain"], "schema domain"),
             lower_string(entry["slot"], "schema slot")};
    if (s.domain.empty() || s.slot.empty())
      throw SchemaError("schema entries must have nonempty domain and slot names");
    if (s.domain.find('-') != std::string::npos || s.slot.find('-') != std::string::npos)
      throw SchemaError("schema names may not contain hyphens: \"" + s.rendered() + "\"");
    if (!seen_slots.insert(s).second)
      throw SchemaError("duplicate schema slot \"" + s.rendered() + "\"");
    corpus.schema.slots.push_back(s);
    if (std::find(corpus.schema.domain_order.begin(), corpus.schema.domain_order.end(),
                  s.domain) == corpus.schema.domain_order.end())
      corpus.schema.domain_order.push_back(s.domain);
  }

  // ontology
  const auto& onto_node = root["ontology"];
  if (!onto_node.is_object())
    throw SchemaError("\"ontology\" must be an object");
  for (auto it = onto_node.begin(); it != onto_node.end(); ++it) {
    SlotId s = detail::parse_slot_key(to_lower(it.key()), "ontology");
    if (!corpus.schema.contains(s))
      throw SchemaError("ontology slot \"" + s.rendered() + "\" is not declared in the schema");
    if (!it.value().is_array())
      throw SchemaError("ontology entry for \"" + s.rendered() + "\" must be an array");
    std::vector<std::string> values;
    std::set<std::string> dedup;
    for (const auto& v : it.value()) {
      std::string value = lower_string(v, "ontology value for \"" + s.rendered() + "\"");
      if (value.empty())
        throw SchemaError("ontology value for \"" + s.rendered() + "\" is empty");
      detail::check_template_text(value, "ontology value for \"" + s.rendered() + "\"");
      if (!dedup.insert(value).second)
        throw SchemaError("duplicate ontology value \"" + value + "\" for slot \"" +
                          s.rendered() + "\"");
      values.push_back(value);
    }
    corpus.ontology.candidates[s] = std::move(values);
  }
  for (const auto& s : corpus.schema.slots)
    if (!corpus.ontology.candidates.count(s))
      throw SchemaError("schema slot \"" + s.rendered() + "\" has no ontology entry");

  // templates
  const auto& tmpl_node = root["templates"];
  if (!tmpl_node.is_object() || !tmpl_node.contains("prefixes") || !tmpl_node.contains("phrases"))
    throw SchemaError("\"templates\" must be an object with \"prefixes\" and \"phrases\"");
  for (auto it = tmpl_node["prefixes"].begin(); it != tmpl_node["prefixes"].end(); ++it) {
    std::string domain = to_lower(it.key());
    std::string prefix = lower_string(it.value(), "prefix for domain \"" + domain + "\"");
    detail::check_template_text(prefix, "prefix for domain \"" + domain + "\"");
    if (contains(prefix, kValueHole))
      throw SchemaError("prefix for domain \"" + domain + "\" must not contain a value hole");
    corpus.templates.domain_prefixes[domain] = prefix;
  }
  for (auto it = tmpl_node["phrases"].begin(); it != tmpl_node["phrases"].end(); ++it) {
    SlotId s = detail::parse_slot_key(to_lower(it.key()), "templates.phrases");
    if (!corpus.schema.contains(s))
      throw SchemaError("phrase template slot \"" + s.rendered() +
                        "\" is not declared in the schema");
    std::string phrase = lower_string(it.value(), "phrase for \"" + s.rendered() + "\"");
    detail::check_template_text(phrase, "phrase for \"" + s.rendered() + "\"");
    auto first = phrase.find(kValueHole);
    if (first == std::string::npos ||
        phrase.find(kValueHole, first + 1) != std::string::npos)
      throw SchemaError("phrase for \"" + s.rendered() + "\" must contain exactly one \"" +
                        std::string(kValueHole) + "\" hole");
    corpus.templates.phrase_templates[s] = std::move(phrase);
  }
  for (const auto& s : corpus.schema.slots)
    if (!corpus.templates.phrase_templates.count(s))
      throw SchemaError("schema slot \"" + s.rendered() + "\" has no phrase template");
  for (const auto& domain : corpus.schema.domain_order)
    if (!corpus.templates.domain_prefixes.count(domain))
      throw SchemaError("domain \"" + domain + "\" has no prefix sentence");

  // dialogues
  const auto& dlg_node = root["dialogues"];
  if (!dlg_node.is_array())
    throw SchemaError("\"dialogues\" must be an array");
  std::set<std::string> seen_ids;
  for (const auto& d : dlg_node) {
    if (!d.is_object() || !d.contains("id") || !d.contains("turns"))
      throw SchemaError("dialogue entries must be objects with \"id\" and \"turns\"");
    Dialogue dialogue;
    dialogue.id = lower_string(d["id"], "dialogue id");
    if (dialogue.id.empty())
      throw SchemaError("dialogue ids must be nonempty");
    if (!seen_ids.insert(dialogue.id).second)
      throw SchemaError("duplicate dialogue id \"" + dialogue.id + "\"");
    if (!d["turns"].is_array() || d["turns"].empty())
      throw SchemaError("dialogue \"" + dialogue.id + "\" must have at least one turn");
    for (const auto& t : d["turns"]) {
      if (!t.is_object() || !t.contains("sys") || !t.contains("user") || !t.contains("state"))
        throw SchemaError("turns of dialogue \"" + dialogue.id +
                          "\" must be objects with \"sys\", \"user\" and \"state\"");
      Turn turn;
      turn.system_utterance = lower_string(t["sys"], "system utterance");
      turn.user_utterance = lower_string(t["user"], "user utterance");
      detail::check_text(turn.system_utterance, "dialogue \"" + dialogue.id + "\" system utterance");
      detail::check_text(turn.user_utterance, "dialogue \"" + dialogue.id + "\" user utterance");
      if (turn.user_utterance.empty())
        throw SchemaError("dialogue \"" + dialogue.id + "\" has a turn with an empty user utterance");
      if (!t["state"].is_object())
        throw SchemaError("dialogue \"" + dialogue.id + "\" has a non-object state");
      for (auto it = t["state"].begin(); it != t["state"].end(); ++it) {
        SlotId s = detail::parse_slot_key(to_lower(it.key()),
                                          "state of dialogue \"" + dialogue.id + "\"");
        if (!corpus.schema.contains(s))
          throw SchemaError("dialogue \"" + dialogue.id + "\" references undeclared slot \"" +
                            s.rendered() + "\"");
        std::string value = lower_string(it.value(), "state value of dialogue \"" + dialogue.id + "\"");
        if (value.empty())
          throw SchemaError("dialogue \"" + dialogue.id + "\" assigns an empty value to slot \"" +
                            s.rendered() + "\"");
        detail::check_template_text(value, "state value of dialogue \"" + dialogue.id + "\"");
        turn.gold_state[s] = std::move(value);
      }
      dialogue.turns.push_back(std::move(turn));
    }
    corpus.dialogues.push_back(std::move(dialogue));
  }

  return corpus;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline Corpus load_corpus(const std::string& path) {
  return load_corpus_text(read_file(path));
}

/// Canonical re-serialization: schema order everywhere, two-space indent.
/// save_corpus(load_corpus(f)) is a fixed point of load/save.
inline std::string save_corpus(const Corpus& corpus) {
  nlohmann::ordered_json root;
  root["schema"] = nlohmann::ordered_json::array();
  for (const auto& s : corpus.schema.slots)
    root["schema"].push_back({{"domain", s.domain}, {"slot", s.slot}});
  root["ontology"] = nlohmann::ordered_json::object();
  for (const auto& s : corpus.schema.slots)
    root["ontology"][s.rendered()] = corpus.ontology.candidates.at(s);
  root["templates"]["prefixes"] = nlohmann::ordered_json::object();
  for (const auto& domain : corpus.schema.domain_order)
    root["templates"]["prefixes"][domain] = corpus.templates.domain_prefixes.at(domain);
  root["templates"]["phrases"] = nlohmann::ordered_json::object();
  for (const auto& s : corpus.schema.slots)
    root["templates"]["phrases"][s.rendered()] = corpus.templates.phrase_templates.at(s);
  root["dialogues"] = nlohmann::ordered_json::array();
  for (const auto& d : corpus.dialogues) {
    nlohmann::ordered_json dlg;
    dlg["id"] = d.id;
    dlg["turns"] = nlohmann::ordered_json::array();
    for (const auto& t : d.turns) {
      nlohmann::ordered_json turn;
      turn["sys"] = t.system_utterance;
      turn["user"] = t.user_utterance;
      turn["state"] = nlohmann::ordered_json::object();
      for (const auto& s : corpus.schema.slots) {
        auto it = t.gold_state.find(s);
        if (it != t.gold_state.end()) turn["state"][s.rendered()] = it->second;
      }
      dlg["turns"].push_back(std::move(turn));
    }
    root["dialogues"].push_back(std::move(dlg));
  }
  return root.dump(2) + "\n";
}

inline void save_corpus_file(const Corpus& corpus, const std::string& path) {
  write_file(path, save_corpus(corpus));
}

// ---------------------------------------------------------------------------
// History serialization and gold slots
// ---------------------------------------------------------------------------

/// Flattens all turns up to and including `turn_index` into one line, each
/// utterance prefixed by its speaker tag. Empty system utterances (the
/// opening turn) are omitted entirely.
///
///   "[User] i need a taxi [Sys] where from [User] cambridge"
inline std::string serialize_history(const Dialogue& dialogue, std::size_t turn_index) {
  if (turn_index >= dialogue.turns.size()) {
    std::ostringstream msg;
    msg << "turn index " << turn_index << " out of range for dialogue \"" << dialogue.id
        << "\" with " << dialogue.turns.size() << " turns";
    throw std::out_of_range(msg.str());
  }
  std::string out;
  for (std::size_t i = 0; i <= turn_index; ++i) {
    const Turn& t = dialogue.turns[i];
    if (!t.system_utterance.empty()) {
      if (!out.empty()) out += ' ';
      out += "[Sys] ";
      out += t.system_utterance;
    }
    if (!out.empty()) out += ' ';
    out += "[User] ";
    out += t.user_utterance;
  }
  return out;
}

/// The slots carrying a value in `state`, in schema order.
inline std::vector<SlotId> gold_relevant_slots(const DialogueState& state, const Schema& schema) {
  std::vector<SlotId> out;
  for (const auto& s : schema.slots)
    if (state.count(s)) out.push_back(s);
  return out;
}

/// The text fed to the encoder for a slot: "taxi-departure" -> "taxi departure".
inline std::string slot_text(const SlotId& s) {
  return s.domain + " " + s.slot;
}

}  // namespace dkf
