#pragma once

// Shared test fixtures: the bundled dataset path and a tiny in-memory corpus
// small enough for hand-checked oracles.

#include <string>

#include "dkf/corpus.hpp"
#include "dkf/encoder.hpp"

#ifndef DKF_DATA_DIR
#define DKF_DATA_DIR "data"
#endif

namespace dkf_test {

inline std::string fixture_path() { return std::string(DKF_DATA_DIR) + "/toy_dst.json"; }

// Three slots over two domains, two dialogues (three turns, one empty state).
inline std::string tiny_corpus_text() {
  return R"({
  "schema": [
    {"domain": "taxi", "slot": "departure"},
    {"domain": "taxi", "slot": "destination"},
    {"domain": "hotel", "slot": "pricerange"}
  ],
  "ontology": {
    "taxi-departure": ["cambridge", "ely", "london"],
    "taxi-destination": ["cambridge", "ely", "london"],
    "hotel-pricerange": ["cheap", "moderate", "expensive"]
  },
  "templates": {
    "prefixes": {
      "taxi": "the user is looking for a taxi",
      "hotel": "the user wants a hotel"
    },
    "phrases": {
      "taxi-departure": "from <v>",
      "taxi-destination": "to <v>",
      "hotel-pricerange": "priced <v>"
    }
  },
  "dialogues": [
    {"id": "tiny-1", "turns": [
      {"sys": "", "user": "i need a taxi from cambridge to ely",
       "state": {"taxi-departure": "cambridge", "taxi-destination": "ely"}},
      {"sys": "okay", "user": "i also want a hotel priced cheap",
       "state": {"taxi-departure": "cambridge", "taxi-destination": "ely",
                 "hotel-pricerange": "cheap"}}
    ]},
    {"id": "tiny-2", "turns": [
      {"sys": "", "user": "hello there", "state": {}}
    ]}
  ]
})";
}

inline dkf::Corpus tiny_corpus() { return dkf::load_corpus_text(tiny_corpus_text()); }

// Small encoder dimensions so tests run in milliseconds.
inline dkf::EncoderConfig small_encoder() {
  dkf::EncoderConfig cfg;
  cfg.d = 8;
  cfg.d_ff = 12;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.max_len = 32;
  return cfg;
}

// Redraws all weights at a coarser scale for finite-difference probes. The
// training-time init keeps pre-activations within ~1e-2 of zero, where a 1e-4
// step straddles relu kinks and gradients drown in truncation noise; at this
// scale the loss is smooth around the probe point.
inline void coarsen_weights(dkf::EncoderModel& m, std::uint64_t seed,
                            double scale = 0.25) {
  dkf::Rng rng(seed);
  auto fill = [&](dkf::Matrix& mat) {
    for (auto& v : mat.data) v = rng.uniform(-scale, scale);
  };
  fill(m.token_embeddings);
  fill(m.position_embeddings);
  fill(m.segment_embeddings);
  for (auto& layer : m.layers) {
    fill(layer.wq);
    fill(layer.wk);
    fill(layer.wv);
    fill(layer.wo);
    fill(layer.ffn.w1);
    fill(layer.ffn.w2);
    for (auto& b : layer.ffn.b1) b = rng.uniform(-scale, scale);
    for (auto& b : layer.ffn.b2) b = rng.uniform(-scale, scale);
  }
}

}  // namespace dkf_test
