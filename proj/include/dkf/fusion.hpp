#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dkf/corpus.hpp"

namespace dkf {

inline constexpr const char* kEmptySelectionSentence = "The user provided no information.";

/// Natural-language template whose mask markers "[0]", "[1]", ... stand for
/// slot values. mask_slots[i] is the slot behind marker "[i]".
struct OutputTemplate {
  std::string text;
  std::vector<SlotId> mask_slots;

  std::size_t mask_count() const { return mask_slots.size(); }
};

inline std::string mask_marker(std::size_t index) {
  return "[" + std::to_string(index) + "]";
}

/// The literal text between consecutive mask markers: segment 0 precedes
/// "[0]", segment i sits between "[i-1]" and "[i]", the last segment follows
/// the final marker. Always mask_count + 1 entries. Rejects templates whose
/// markers are missing, duplicated, or out of order.
inline std::vector<std::string> template_segments(const OutputTemplate& t) {
  std::vector<std::string> segments;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < t.mask_count(); ++i) {
    const std::string marker = mask_marker(i);
    const std::size_t at = t.text.find(marker, cursor);
    if (at == std::string::npos)
      throw std::invalid_argument("template is missing marker " + marker +
                                  " (or has it out of order)");
    segments.push_back(t.text.substr(cursor, at - cursor));
    cursor = at + marker.size();
  }
  segments.push_back(t.text.substr(cursor));
  for (std::size_t i = 0; i <= t.mask_count(); ++i) {
    const std::string& s = segments[i];
    if (s.find('[') != std::string::npos || s.find(']') != std::string::npos)
      throw std::invalid_argument("template has stray bracket characters outside its markers");
  }
  return segments;
}

/// Builds the masked summary template for the selected slots. Slots are
/// grouped by domain (in the schema's domain order); each group renders as
///   <domain prefix> <phrase templates in schema order> "."
/// with every "<v>" hole replaced by the next mask marker, groups joined by
/// single spaces. An empty selection yields the fixed sentence
/// "The user provided no information."
inline OutputTemplate build_template(const std::vector<SlotId>& selected,
                                     const TemplateCatalog& catalog, const Schema& schema) {
  OutputTemplate result;
  if (selected.empty()) {
    result.text = kEmptySelectionSentence;
    return result;
  }
  for (const auto& slot : selected) {
    if (!catalog.phrase_templates.count(slot))
      throw SchemaError("no phrase template for slot \"" + slot.rendered() + "\"");
    if (!catalog.domain_prefixes.count(slot.domain))
      throw SchemaError("no prefix sentence for domain \"" + slot.domain + "\"");
  }

  std::map<std::string, std::vector<SlotId>> by_domain;
  for (const auto& slot : selected) by_domain[slot.domain].push_back(slot);

  std::size_t next_mask = 0;
  std::string text;
  for (const auto& domain : schema.domain_order) {
    auto it = by_domain.find(domain);
    if (it == by_domain.end()) continue;
    std::string sentence = catalog.domain_prefixes.at(domain);
    for (const auto& slot : it->second) {
      std::string phrase = catalog.phrase_templates.at(slot);
      const std::size_t hole = phrase.find(kValueHole);
      phrase.replace(hole, std::string(kValueHole).size(), mask_marker(next_mask));
      result.mask_slots.push_back(slot);
      ++next_mask;
      sentence += ' ';
      sentence += phrase;
    }
    sentence += '.';
    if (!text.empty()) text += ' ';
    text += sentence;
  }
  result.text = std::move(text);
  return result;
}

/// Candidate values per mask, in mask order, each list in ontology order.
using CandidateList = std::vector<std::pair<std::size_t, std::vector<std::string>>>;

inline CandidateList attach_candidates(const OutputTemplate& t, const Ontology& ontology) {
  CandidateList candidates;
  candidates.reserve(t.mask_count());
  for (std::size_t i = 0; i < t.mask_count(); ++i) {
    auto it = ontology.candidates.find(t.mask_slots[i]);
    if (it == ontology.candidates.end())
      throw SchemaError("slot \"" + t.mask_slots[i].rendered() + "\" has no ontology entry");
    candidates.emplace_back(i, it->second);
  }
  return candidates;
}

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

struct AblationFlags {
  bool include_template = true;
  bool include_candidates = true;
};

enum class Ablation { kFull, kNoPrompt, kNoTemplate, kNoCandidates };

inline AblationFlags ablation_flags(Ablation a) {
  switch (a) {
    case Ablation::kFull:
      return {true, true};
    case Ablation::kNoPrompt:
      return {false, false};
    case Ablation::kNoTemplate:
      return {false, true};
    case Ablation::kNoCandidates:
      return {true, false};
  }
  throw std::invalid_argument("unknown ablation");
}

inline Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::kFull;
  if (name == "-prompt") return Ablation::kNoPrompt;
  if (name == "-OT") return Ablation::kNoTemplate;
  if (name == "-CV") return Ablation::kNoCandidates;
  throw std::invalid_argument("unknown ablation \"" + name +
                              "\" (expected full, -prompt, -OT or -CV)");
}

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull:
      return "full";
    case Ablation::kNoPrompt:
      return "-prompt";
    case Ablation::kNoTemplate:
      return "-OT";
    case Ablation::kNoCandidates:
      return "-CV";
  }
  throw std::invalid_argument("unknown ablation");
}

/// The stage-two input. The template object is always carried (the pipeline
/// needs it to invert the generated summary); the flags say which parts are
/// visible to the generator and appear in the serialized prompt.
struct PromptBundle {
  std::string history;
  OutputTemplate output_template;
  CandidateList candidates;
  AblationFlags flags;
};

inline PromptBundle assemble_prompt(const std::string& history, const OutputTemplate& t,
                                    const CandidateList& candidates, AblationFlags flags) {
  if (flags.include_candidates) {
    if (candidates.size() != t.mask_count())
      throw std::invalid_argument("candidate list does not cover the template's masks");
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i].first != i)
        throw std::invalid_argument("candidate list indices must be 0..k-1 in order");
  }
  PromptBundle bundle;
  bundle.history = history;
  bundle.output_template = t;
  bundle.candidates = candidates;
  bundle.flags = flags;
  return bundle;
}

/// Candidate pool for prompts without a template: per-mask lists flattened in
/// mask order, duplicates dropped after their first appearance.
inline std::vector<std::string> flatten_candidates(const CandidateList& candidates) {
  std::vector<std::string> pool;
  std::set<std::string> seen;
  for (const auto& [index, values] : candidates) {
    (void)index;
    for (const auto& v : values)
      if (seen.insert(v).second) pool.push_back(v);
  }
  return pool;
}

/// Canonical wire format, sections joined by " || " (banned from corpus text):
///   full      history || template || [0]: v1|v2 [1]: v3|v4
///   -CV       history || template
///   -OT       history || values: v1|v2|v3
///   -prompt   history
/// Sections that would be empty (a template with no masks has no candidate
/// section) are omitted.
inline std::string serialize_prompt(const PromptBundle& bundle) {
  std::string out = bundle.history;
  if (bundle.flags.include_template) {
    out += " || ";
    out += bundle.output_template.text;
    if (bundle.flags.include_candidates && !bundle.candidates.empty()) {
      out += " || ";
      for (std::size_t i = 0; i < bundle.candidates.size(); ++i) {
        if (i > 0) out += ' ';
        out += mask_marker(bundle.candidates[i].first);
        out += ": ";
        out += join(bundle.candidates[i].second, "|");
      }
    }
  } else if (bundle.flags.include_candidates) {
    const std::vector<std::string> pool = flatten_candidates(bundle.candidates);
    if (!pool.empty()) {
      out += " || values: ";
      out += join(pool, "|");
    }
  }
  return out;
}

}  // namespace dkf
