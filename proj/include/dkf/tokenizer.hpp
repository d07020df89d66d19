#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dkf/corpus.hpp"
#include "dkf/strings.hpp"

namespace dkf {

/// Whitespace + lowercase tokenizer over a corpus-built vocabulary.
/// Ids are dense from 0; the first three are reserved.
struct Tokenizer {
  static constexpr int kFirstTokenId = 0;  // prepended to every sequence
  static constexpr int kPadId = 1;
  static constexpr int kUnknownId = 2;

  std::vector<std::string> id_to_token;   // index == id
  std::map<std::string, int> token_to_id;
  std::size_t max_len = 128;

  std::size_t vocab_size() const { return id_to_token.size(); }

  /// Total function: unknown words map to the unknown id; output is capped at
  /// max_len by dropping the oldest words while keeping the first-token symbol.
  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> ids;
    ids.push_back(kFirstTokenId);
    for (const auto& word : split_words(to_lower(text))) {
      auto it = token_to_id.find(word);
      ids.push_back(it == token_to_id.end() ? kUnknownId : it->second);
    }
    if (ids.size() > max_len) {
      std::vector<int> kept;
      kept.push_back(kFirstTokenId);
      kept.insert(kept.end(), ids.end() - static_cast<std::ptrdiff_t>(max_len - 1), ids.end());
      return kept;
    }
    return ids;
  }
};

namespace detail {
inline std::vector<std::string> reserved_tokens() {
  return {"<cls>", "<pad>", "<unk>"};
}
}  // namespace detail

inline Tokenizer make_tokenizer(const std::vector<std::string>& vocabulary_words,
                                std::size_t max_len) {
  Tokenizer t;
  t.max_len = max_len;
  t.id_to_token = detail::reserved_tokens();
  for (const auto& w : vocabulary_words) t.id_to_token.push_back(w);
  for (std::size_t i = 0; i < t.id_to_token.size(); ++i)
    t.token_to_id[t.id_to_token[i]] = static_cast<int>(i);
  return t;
}

/// Vocabulary = words of every serialized history, every slot text, and every
/// candidate value. Sorted for a declaration-order-independent result.
inline Tokenizer build_tokenizer(const Corpus& corpus, std::size_t max_len) {
  std::set<std::string> words;
  auto add_words = [&words](const std::string& text) {
    for (auto& w : split_words(to_lower(text))) words.insert(w);
  };
  for (const auto& d : corpus.dialogues)
    add_words(serialize_history(d, d.turns.size() - 1));
  for (const auto& s : corpus.schema.slots) {
    add_words(slot_text(s));
    for (const auto& v : corpus.ontology.candidates.at(s)) add_words(v);
  }
  return make_tokenizer(std::vector<std::string>(words.begin(), words.end()), max_len);
}

}  // namespace dkf
