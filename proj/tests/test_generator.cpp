#include <catch2/catch_amalgamated.hpp>

#include <stdexcept>
#include <string>
#include <vector>

#include "dkf/generator.hpp"
#include "helpers.hpp"

using dkf::Ablation;
using dkf::CandidateList;
using dkf::DialogueState;
using dkf::Fill;
using dkf::OutputTemplate;
using dkf::SlotId;

namespace {

const SlotId kDep{"taxi", "departure"};
const SlotId kDest{"taxi", "destination"};
const SlotId kArea{"attraction", "area"};

dkf::Schema gen_schema() {
  dkf::Schema s;
  s.slots = {kDep, kDest, kArea};
  s.domain_order = {"taxi", "attraction"};
  return s;
}

dkf::TemplateCatalog gen_catalog() {
  dkf::TemplateCatalog c;
  c.phrase_templates[kDep] = "from <v>";
  c.phrase_templates[kDest] = "to <v>";
  c.phrase_templates[kArea] = "located in <v>";
  c.domain_prefixes["taxi"] = "the user is looking for a taxi";
  c.domain_prefixes["attraction"] = "the user wants an attraction";
  return c;
}

OutputTemplate taxi_template() {
  return dkf::build_template({kDep, kDest}, gen_catalog(), gen_schema());
}

dkf::PromptBundle bundle_for(const std::string& history, const OutputTemplate& t,
                             const CandidateList& candidates, Ablation a) {
  return dkf::assemble_prompt(history, t, candidates, dkf::ablation_flags(a));
}

}  // namespace

TEST_CASE("word occurrences respect word boundaries") {
  using dkf::detail::word_occurrences;
  REQUIRE(word_occurrences("new york is big", "york") == std::vector<std::size_t>{4});
  REQUIRE(word_occurrences("cambridgeshire is far", "cambridge").empty());
  REQUIRE(word_occurrences("a b a", "a") == std::vector<std::size_t>{0, 4});
  REQUIRE(word_occurrences("go to ely.", "ely") == std::vector<std::size_t>{6});
  REQUIRE(word_occurrences("new york, new york", "new york") ==
          std::vector<std::size_t>{0, 10});
  REQUIRE(word_occurrences("nothing here", "york").empty());
}

TEST_CASE("the plain pick prefers the rightmost end, then length, then rank") {
  using dkf::detail::pick_plain;

  const auto late = pick_plain("ely then cambridge", {"ely", "cambridge"});
  REQUIRE(late.has_value());
  REQUIRE(late->candidate_rank == 1);

  // Both candidates end at the same offset; the longer one wins.
  const auto longer = pick_plain("i love new york", {"york", "new york"});
  REQUIRE(longer.has_value());
  REQUIRE(longer->candidate_rank == 1);
  REQUIRE(longer->length == std::string("new york").size());

  const auto rank = pick_plain("cab", {"cab", "cab"});
  REQUIRE(rank.has_value());
  REQUIRE(rank->candidate_rank == 0);

  REQUIRE_FALSE(pick_plain("nothing here", {"york"}).has_value());
}

TEST_CASE("the windowed pick takes the first match past the window") {
  using dkf::detail::pick_after;

  const std::string text = "from cambridge to ely";
  const auto near = pick_after(text, {"cambridge", "ely"}, 5);
  REQUIRE(near.has_value());
  REQUIRE(near->candidate_rank == 0);

  const auto skip = pick_after("ely a ely", {"ely"}, 1);
  REQUIRE(skip.has_value());
  REQUIRE(skip->start == 6);

  REQUIRE_FALSE(pick_after("cambridge", {"cambridge"}, 9).has_value());
}

TEST_CASE("the extractive filler anchors each mask to its cue word") {
  const dkf::ExtractiveGenerator gen;
  const OutputTemplate t = taxi_template();
  const CandidateList candidates = {{0, {"cambridge", "ely"}},
                                    {1, {"cambridge", "ely", "london"}}};

  SECTION("values land on the nearest match after each cue") {
    const Fill fill = gen.fill(bundle_for("i need a taxi from cambridge to ely", t,
                                          candidates, Ablation::kFull));
    REQUIRE(fill.values.at(0) == "cambridge");
    REQUIRE(fill.values.at(1) == "ely");
  }
  SECTION("a repeated cue uses its last occurrence, capturing revisions") {
    const Fill fill = gen.fill(bundle_for(
        "i need a taxi from cambridge no wait from london to ely", t,
        {{0, {"cambridge", "ely", "london"}}, {1, {"cambridge", "ely", "london"}}},
        Ablation::kFull));
    REQUIRE(fill.values.at(0) == "london");
    REQUIRE(fill.values.at(1) == "ely");
  }
  SECTION("a missing cue falls back to the plain rule") {
    const OutputTemplate area =
        dkf::build_template({kArea}, gen_catalog(), gen_schema());
    const Fill fill = gen.fill(bundle_for("centre please", area,
                                          {{0, {"centre", "north"}}}, Ablation::kFull));
    REQUIRE(fill.values.at(0) == "centre");
  }
  SECTION("no candidate in the history yields the none marker") {
    const Fill fill =
        gen.fill(bundle_for("i need a ride", t,
                            {{0, {"london"}}, {1, {"london"}}}, Ablation::kFull));
    REQUIRE(fill.values.at(0) == dkf::kNoneMarker);
    REQUIRE(fill.values.at(1) == dkf::kNoneMarker);
  }
  SECTION("hidden candidates force every mask to none") {
    const Fill fill = gen.fill(bundle_for("i need a taxi from cambridge to ely", t,
                                          candidates, Ablation::kNoCandidates));
    REQUIRE(fill.values.at(0) == dkf::kNoneMarker);
    REQUIRE(fill.values.at(1) == dkf::kNoneMarker);
  }
  SECTION("a hidden template collapses all masks onto the flat pool pick") {
    const Fill fill = gen.fill(bundle_for("go to ely from cambridge", t,
                                          {{0, {"cambridge"}}, {1, {"ely"}}},
                                          Ablation::kNoTemplate));
    REQUIRE(fill.values.at(0) == "cambridge");  // rightmost end in the pool
    REQUIRE(fill.values.at(1) == "cambridge");
  }
}

TEST_CASE("the gold oracle copies its state into the masks") {
  const dkf::GoldOracleGenerator gen(DialogueState{{kDep, "cambridge"}});
  const OutputTemplate t = taxi_template();
  const Fill fill = gen.fill(bundle_for("irrelevant", t,
                                        {{0, {"x"}}, {1, {"x"}}}, Ablation::kFull));
  REQUIRE(fill.values.at(0) == "cambridge");
  REQUIRE(fill.values.at(1) == dkf::kNoneMarker);
}

TEST_CASE("summary rendering substitutes mask values verbatim") {
  const OutputTemplate t = taxi_template();
  Fill fill;
  fill.values = {{0, "cambridge"}, {1, "ely"}};
  REQUIRE(dkf::render_summary(t, fill) ==
          "the user is looking for a taxi from cambridge to ely.");

  const OutputTemplate none = dkf::build_template({}, gen_catalog(), gen_schema());
  REQUIRE(dkf::render_summary(none, Fill{}) == dkf::kEmptySelectionSentence);

  Fill missing;
  missing.values = {{0, "cambridge"}};
  REQUIRE_THROWS_AS(dkf::render_summary(t, missing), std::invalid_argument);
  Fill skewed;
  skewed.values = {{0, "cambridge"}, {5, "ely"}};
  REQUIRE_THROWS_AS(dkf::render_summary(t, skewed), std::invalid_argument);
}

TEST_CASE("template inversion is the exact inverse of rendering") {
  const OutputTemplate t = taxi_template();

  SECTION("plain round trip") {
    Fill fill;
    fill.values = {{0, "cambridge"}, {1, "ely"}};
    const DialogueState state = dkf::invert_template(t, dkf::render_summary(t, fill));
    REQUIRE(state == DialogueState{{kDep, "cambridge"}, {kDest, "ely"}});
  }
  SECTION("none markers drop out of the state") {
    Fill fill;
    fill.values = {{0, dkf::kNoneMarker}, {1, "ely"}};
    const DialogueState state = dkf::invert_template(t, dkf::render_summary(t, fill));
    REQUIRE(state == DialogueState{{kDest, "ely"}});
  }
  SECTION("the empty-selection sentence inverts to an empty state") {
    const OutputTemplate none = dkf::build_template({}, gen_catalog(), gen_schema());
    REQUIRE(dkf::invert_template(none, dkf::kEmptySelectionSentence).empty());
  }
  SECTION("multi-word values survive the round trip") {
    Fill fill;
    fill.values = {{0, "new york"}, {1, "york"}};
    const DialogueState state = dkf::invert_template(t, dkf::render_summary(t, fill));
    REQUIRE(state == DialogueState{{kDep, "new york"}, {kDest, "york"}});
  }
  SECTION("a summary off the skeleton is a contract violation") {
    REQUIRE_THROWS_AS(dkf::invert_template(t, "the user wants a bus from a to b."),
                      dkf::SchemaError);
    REQUIRE_THROWS_AS(dkf::invert_template(t, ""), dkf::SchemaError);
  }
  SECTION("every slot subset of the bundled corpus round-trips") {
    const dkf::Corpus corpus = dkf_test::tiny_corpus();
    const std::size_t n = corpus.schema.slots.size();
    for (std::size_t bits = 0; bits < (std::size_t{1} << n); ++bits) {
      std::vector<SlotId> selected;
      for (std::size_t i = 0; i < n; ++i)
        if (bits & (std::size_t{1} << i)) selected.push_back(corpus.schema.slots[i]);
      const OutputTemplate sub =
          dkf::build_template(selected, corpus.templates, corpus.schema);
      Fill fill;
      DialogueState expected;
      for (std::size_t i = 0; i < sub.mask_count(); ++i) {
        const std::string& value =
            corpus.ontology.candidates.at(sub.mask_slots[i]).front();
        fill.values[i] = value;
        expected[sub.mask_slots[i]] = value;
      }
      REQUIRE(dkf::invert_template(sub, dkf::render_summary(sub, fill)) == expected);
    }
  }
}

TEST_CASE("turn prediction composes selection, fusion and generation") {
  const dkf::Corpus corpus = dkf_test::tiny_corpus();
  const dkf::SelectorConfig cfg;
  const dkf::Dialogue& dialogue = corpus.dialogues[0];

  SECTION("gold selection with the gold oracle is an identity") {
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
      const dkf::GoldOracleGenerator gen(dialogue.turns[t].gold_state);
      const DialogueState state =
          dkf::predict_state(nullptr, gen, dialogue, t, cfg, corpus, Ablation::kFull,
                             dkf::SelectionMode::kGold);
      REQUIRE(state == dialogue.turns[t].gold_state);
    }
  }
  SECTION("gold selection with the extractive filler recovers stated values") {
    const dkf::ExtractiveGenerator gen;
    const DialogueState state =
        dkf::predict_state(nullptr, gen, dialogue, 0, cfg, corpus, Ablation::kFull,
                           dkf::SelectionMode::kGold);
    REQUIRE(state == dialogue.turns[0].gold_state);
    const DialogueState later =
        dkf::predict_state(nullptr, gen, dialogue, 1, cfg, corpus, Ablation::kFull,
                           dkf::SelectionMode::kGold);
    REQUIRE(later == dialogue.turns[1].gold_state);
  }
  SECTION("a bare history prompt leaves the extractive filler empty-handed") {
    const dkf::ExtractiveGenerator gen;
    const DialogueState state =
        dkf::predict_state(nullptr, gen, dialogue, 1, cfg, corpus, Ablation::kNoPrompt,
                           dkf::SelectionMode::kGold);
    REQUIRE(state.empty());
  }
  SECTION("model-based selection requires a model") {
    const dkf::ExtractiveGenerator gen;
    REQUIRE_THROWS_AS(dkf::predict_state(nullptr, gen, dialogue, 0, cfg, corpus),
                      std::invalid_argument);
  }
}

TEST_CASE("prediction dumps round-trip through their wire format") {
  std::vector<dkf::PredictionRecord> records(2);
  records[0].dialogue_id = "d-1";
  records[0].turn = 0;
  records[0].state = {{kDep, "cambridge"}};
  records[1].dialogue_id = "d-1";
  records[1].turn = 1;

  const std::string text = dkf::dump_predictions(records);
  REQUIRE(text.find("\"dialogue_id\": \"d-1\"") != std::string::npos);
  REQUIRE(text.find("\"taxi-departure\": \"cambridge\"") != std::string::npos);
  REQUIRE(text.back() == '\n');

  const auto back = dkf::parse_predictions(text);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].dialogue_id == "d-1");
  REQUIRE(back[0].turn == 0);
  REQUIRE(back[0].state == records[0].state);
  REQUIRE(back[1].state.empty());

  SECTION("malformed dumps are rejected with the right error class") {
    REQUIRE_THROWS_AS(dkf::parse_predictions("not json"), dkf::ParseError);
    REQUIRE_THROWS_AS(dkf::parse_predictions("{}"), dkf::SchemaError);
    REQUIRE_THROWS_AS(dkf::parse_predictions(R"([{"turn": 0, "state": {}}])"),
                      dkf::SchemaError);
    REQUIRE_THROWS_AS(
        dkf::parse_predictions(
            R"([{"dialogue_id": "d", "turn": 0, "state": {"taxi-departure": 3}}])"),
        dkf::SchemaError);
    REQUIRE_THROWS_AS(
        dkf::parse_predictions(
            R"([{"dialogue_id": "d", "turn": 0, "state": {"nodash": "x"}}])"),
        dkf::SchemaError);
  }
}
