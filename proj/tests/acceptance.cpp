// End-to-end checks for the release gate. Each criterion prints one PASS or
// FAIL line; the process exits non-zero if any of them fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dkf/checkpoint.hpp"
#include "dkf/cli.hpp"
#include "helpers.hpp"

namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s - %s (%s)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  if (!ok) ++g_failures;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

dkf::Corpus two_slot_corpus() {
  const dkf::SlotId dep{"taxi", "departure"};
  const dkf::SlotId dest{"taxi", "destination"};
  dkf::Corpus c;
  c.schema.slots = {dep, dest};
  c.schema.domain_order = {"taxi"};
  c.ontology.candidates[dep] = {"cambridge", "ely"};
  c.ontology.candidates[dest] = {"ely", "london"};
  c.templates.phrase_templates[dep] = "from <v>";
  c.templates.phrase_templates[dest] = "to <v>";
  c.templates.domain_prefixes["taxi"] = "the user is looking for a taxi";
  dkf::Dialogue d;
  d.id = "grad-1";
  dkf::Turn turn;
  turn.user_utterance = "i need a taxi from cambridge";
  turn.gold_state[dep] = "cambridge";
  d.turns.push_back(turn);
  c.dialogues.push_back(d);
  return c;
}

// ---------------------------------------------------------------------------

void check_gradients() {
  const auto start = std::chrono::steady_clock::now();
  const dkf::Corpus corpus = two_slot_corpus();
  dkf::EncoderConfig cfg;
  cfg.d = 8;
  cfg.d_ff = 12;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.max_len = 16;
  dkf::EncoderModel model = dkf::init_encoder(corpus, cfg, 7);
  dkf_test::coarsen_weights(model, 7);
  const dkf::TurnBatch batch = dkf::build_turn_batches(corpus).front();

  dkf::Gradients grads = dkf::Gradients::zeros_like(model);
  dkf::turn_loss_and_gradients(model, corpus.schema, batch, grads);
  auto loss_now = [&]() {
    dkf::Gradients scratch = dkf::Gradients::zeros_like(model);
    return dkf::turn_loss_and_gradients(model, corpus.schema, batch, scratch);
  };

  const double h = 1e-4;
  double max_rel = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss_now();
    param = saved - h;
    const double down = loss_now();
    param = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel =
        std::abs(analytic - fd) / std::max(std::abs(analytic) + std::abs(fd), 1e-8);
    if (rel > max_rel) max_rel = rel;
  };
  auto probe_matrix = [&](dkf::Matrix& param, const dkf::Matrix& grad) {
    for (std::size_t i = 0; i < param.data.size(); ++i) probe(param.data[i], grad.data[i]);
  };
  auto probe_vector = [&](std::vector<double>& param, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < param.size(); ++i) probe(param[i], grad[i]);
  };

  probe_matrix(model.token_embeddings, grads.token_embeddings);
  probe_matrix(model.position_embeddings, grads.position_embeddings);
  probe_matrix(model.segment_embeddings, grads.segment_embeddings);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    probe_matrix(model.layers[l].wq, grads.layers[l].wq);
    probe_matrix(model.layers[l].wk, grads.layers[l].wk);
    probe_matrix(model.layers[l].wv, grads.layers[l].wv);
    probe_matrix(model.layers[l].wo, grads.layers[l].wo);
    probe_matrix(model.layers[l].ffn.w1, grads.layers[l].w1);
    probe_vector(model.layers[l].ffn.b1, grads.layers[l].b1);
    probe_matrix(model.layers[l].ffn.w2, grads.layers[l].w2);
    probe_vector(model.layers[l].ffn.b2, grads.layers[l].b2);
  }

  const double elapsed = seconds_since(start);
  report(max_rel < 1e-3 && elapsed < 10.0,
         "analytic gradients match central finite differences on a two-example batch",
         "max rel err " + format_double(max_rel) + ", " + format_double(elapsed) + " s");
}

void check_attention_rows() {
  dkf::Rng rng(1234);
  double worst = 0.0;
  for (int it = 0; it < 1000; ++it) {
    const std::size_t n = 1 + rng.bounded(8);
    const std::size_t dk = 1 + rng.bounded(8);
    dkf::Matrix q(n, dk), k(n, dk);
    for (auto& v : q.data) v = rng.uniform(-2.0, 2.0);
    for (auto& v : k.data) v = rng.uniform(-2.0, 2.0);
    const dkf::Matrix p = dkf::attention_scores(q, k);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.cols; ++j) sum += p(i, j);
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  report(worst <= 1e-6, "attention weights sum to one across 1000 seeded shapes",
         "worst row deviation " + format_double(worst));
}

void check_loss_identities() {
  const std::vector<double> zero{0.0, 0.0, 0.0};
  const std::vector<std::vector<double>> one{{0.3, -0.4, 0.5}};
  const double ln2 = std::log(2.0);
  const double pos = dkf::contrastive_loss(zero, one, {1});
  const double neg = dkf::contrastive_loss(zero, one, {0});

  dkf::Rng rng(55);
  std::vector<double> u(6);
  for (auto& x : u) x = rng.uniform(-1.5, 1.5);
  std::vector<std::vector<double>> slots;
  std::vector<int> labels;
  for (int i = 0; i < 7; ++i) {
    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform(-1.5, 1.5);
    slots.push_back(v);
    labels.push_back(i % 2);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i)
    sum += dkf::contrastive_loss(u, {slots[i]}, {labels[i]});
  const double batch = dkf::contrastive_loss(u, slots, labels);

  const double ln2_err = std::max(std::abs(pos - ln2), std::abs(neg - ln2));
  const double sum_err = std::abs(batch - sum);
  report(ln2_err < 1e-9 && sum_err < 1e-9,
         "loss at even odds is ln 2 and batches sum their examples",
         "ln2 err " + format_double(ln2_err) + ", batch err " + format_double(sum_err));
}

dkf::EncoderModel check_convergence(const dkf::Corpus& corpus, dkf::SweepPoint& best) {
  const auto start = std::chrono::steady_clock::now();
  const dkf::SelectorConfig config;
  dkf::EncoderModel model = dkf::train_selector(corpus, config);
  const std::vector<dkf::SweepPoint> points =
      dkf::sweep_threshold(model, corpus, dkf::default_sweep_grid());
  best = dkf::best_sweep_point(points);
  const double elapsed = seconds_since(start);
  report(best.precision >= 0.95 && best.recall >= 0.95 && elapsed < 120.0,
         "default training reaches 95 percent precision and recall at the swept threshold",
         "delta " + format_double(best.delta) + ", precision " +
             format_double(best.precision) + ", recall " + format_double(best.recall) +
             ", " + format_double(elapsed) + " s");
  return model;
}

void check_recall_monotone(const dkf::Corpus& corpus, const dkf::EncoderModel& trained) {
  const std::vector<double> grid{0.5, 0.6, 0.7, 0.8, 0.9};
  dkf::SelectorConfig config;
  config.epochs = 0;
  const dkf::EncoderModel initial = dkf::train_selector(corpus, config);

  bool ok = true;
  for (const dkf::EncoderModel* model : {&trained, &initial}) {
    const auto points = dkf::sweep_threshold(*model, corpus, grid);
    for (std::size_t i = 1; i < points.size(); ++i)
      if (points[i].recall > points[i - 1].recall) ok = false;
  }
  report(ok, "micro recall never rises as the threshold tightens",
         "grid 0.5 to 0.9, trained and untrained model");
}

void check_inversion_subsets(const dkf::Corpus& corpus) {
  const std::size_t n = corpus.schema.slots.size();
  std::size_t failures = 0;
  for (std::size_t bits = 0; bits < (std::size_t{1} << n); ++bits) {
    std::vector<dkf::SlotId> selected;
    for (std::size_t i = 0; i < n; ++i)
      if (bits & (std::size_t{1} << i)) selected.push_back(corpus.schema.slots[i]);
    const dkf::OutputTemplate t =
        dkf::build_template(selected, corpus.templates, corpus.schema);
    dkf::Fill fill;
    dkf::DialogueState expected;
    for (std::size_t i = 0; i < t.mask_count(); ++i) {
      const std::string& value = corpus.ontology.candidates.at(t.mask_slots[i]).front();
      fill.values[i] = value;
      expected[t.mask_slots[i]] = value;
    }
    if (dkf::invert_template(t, dkf::render_summary(t, fill)) != expected) ++failures;
  }
  report(failures == 0, "template inversion undoes rendering for all slot subsets",
         std::to_string(std::size_t{1} << n) + " subsets, " + std::to_string(failures) +
             " failures");
}

// Counter-based reimplementation of both metrics, kept apart from the library.
double brute_jga(const std::vector<dkf::EvalRecord>& records) {
  std::size_t exact = 0;
  for (const auto& r : records) {
    bool match = r.gold.size() == r.predicted.size();
    if (match)
      for (const auto& [slot, value] : r.gold) {
        auto it = r.predicted.find(slot);
        if (it == r.predicted.end() ||
            dkf::normalize_value(it->second) != dkf::normalize_value(value))
          match = false;
      }
    if (match) ++exact;
  }
  return static_cast<double>(exact) / static_cast<double>(records.size());
}

double brute_sa(const std::vector<dkf::EvalRecord>& records, const dkf::Schema& schema) {
  double total = 0.0;
  for (const auto& slot : schema.slots) {
    std::size_t agree = 0;
    for (const auto& r : records) {
      auto g = r.gold.find(slot);
      auto p = r.predicted.find(slot);
      const std::string gv = g == r.gold.end() ? "" : dkf::normalize_value(g->second);
      const std::string pv =
          p == r.predicted.end() ? "" : dkf::normalize_value(p->second);
      if (gv == pv) ++agree;
    }
    total += static_cast<double>(agree) / static_cast<double>(records.size());
  }
  return total / static_cast<double>(schema.slots.size());
}

void check_metric_counters() {
  dkf::Rng rng(808);
  const std::vector<std::string> values{"a", "b", "c"};
  bool ok = true;
  for (int fixture = 0; fixture < 50 && ok; ++fixture) {
    dkf::Schema schema;
    schema.domain_order = {"d"};
    const std::size_t slot_count = 1 + rng.bounded(5);
    for (std::size_t s = 0; s < slot_count; ++s)
      schema.slots.push_back({"d", "s" + std::to_string(s)});

    std::vector<dkf::EvalRecord> records(1 + rng.bounded(4));
    for (auto& r : records) {
      for (const auto& slot : schema.slots) {
        if (rng.uniform() > 0.4) r.gold[slot] = values[rng.bounded(values.size())];
        if (rng.uniform() > 0.4) r.predicted[slot] = values[rng.bounded(values.size())];
      }
    }
    const dkf::EvalReport scored = dkf::evaluate(records, schema);
    if (scored.jga != brute_jga(records)) ok = false;
    if (scored.sa != brute_sa(records, schema)) ok = false;
  }

  dkf::Schema wide;
  wide.domain_order = {"d"};
  dkf::EvalRecord record;
  for (int i = 0; i < 30; ++i) {
    const dkf::SlotId slot{"d", "s" + std::to_string(i)};
    wide.slots.push_back(slot);
    record.gold[slot] = "v";
    record.predicted[slot] = i < 27 ? "v" : "x";
  }
  const double sa = dkf::slot_accuracy({record}, wide).first;
  report(ok && sa == 0.9, "accuracy metrics equal brute-force counters",
         "50 random fixtures, 27 of 30 slots = " + format_double(sa));
}

void check_gold_identity(const std::vector<const dkf::Corpus*>& corpora) {
  const dkf::SelectorConfig config;
  bool ok = true;
  double worst_jga = 1.0, worst_sa = 1.0;
  for (const dkf::Corpus* corpus : corpora) {
    const std::vector<dkf::PredictionRecord> predictions = dkf::predict_corpus(
        nullptr, *corpus, config, dkf::Ablation::kFull, "gold-oracle");
    const dkf::EvalReport scored =
        dkf::evaluate(dkf::make_eval_records(predictions, *corpus), corpus->schema);
    worst_jga = std::min(worst_jga, scored.jga);
    worst_sa = std::min(worst_sa, scored.sa);
    if (scored.jga != 1.0 || scored.sa != 1.0) ok = false;
  }
  report(ok, "gold selection with the gold oracle is a pipeline identity",
         std::to_string(corpora.size()) + " corpora, worst JGA " +
             format_double(worst_jga) + ", worst SA " + format_double(worst_sa));
}

void check_ablation_ordering(const dkf::Corpus& corpus, const dkf::EncoderModel& model,
                             double delta) {
  dkf::SelectorConfig config;
  config.delta = delta;
  auto jga_for = [&](dkf::Ablation ablation) {
    const std::vector<dkf::PredictionRecord> predictions =
        dkf::predict_corpus(&model, corpus, config, ablation, "extractive");
    return dkf::evaluate(dkf::make_eval_records(predictions, corpus), corpus.schema).jga;
  };
  const double full = jga_for(dkf::Ablation::kFull);
  const double no_cv = jga_for(dkf::Ablation::kNoCandidates);
  const double no_ot = jga_for(dkf::Ablation::kNoTemplate);
  const double no_prompt = jga_for(dkf::Ablation::kNoPrompt);
  report(full > no_cv && full > no_ot && full > no_prompt,
         "every prompt ablation costs joint goal accuracy",
         "full " + format_double(full) + ", -CV " + format_double(no_cv) + ", -OT " +
             format_double(no_ot) + ", -prompt " + format_double(no_prompt));
}

void check_run_determinism() {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "dkf-acceptance-runs";
  fs::remove_all(base);

  auto run_into = [&](const std::string& name) {
    const fs::path dir = base / name;
    fs::create_directories(dir);
    dkf::RunConfig config;
    config.dataset = dkf_test::fixture_path();
    config.checkpoint = (dir / "selector.json").string();
    config.out = dir.string();
    config.selector.epochs = 30;
    config.selector.encoder.d = 16;
    config.selector.encoder.d_ff = 24;
    std::ostringstream sink;
    if (dkf::cmd_train(config, sink) != 0) return false;
    if (dkf::cmd_sweep(config, sink) != 0) return false;
    if (dkf::cmd_predict(config, sink) != 0) return false;
    if (dkf::cmd_evaluate(config, (dir / "predictions.json").string(), sink) != 0)
      return false;
    return true;
  };

  bool ok = run_into("a") && run_into("b");
  std::size_t matched = 0;
  const std::vector<std::string> files{"selector.json", "train_log.csv", "sweep.csv",
                                       "predictions.json", "metrics.csv", "summary.txt"};
  if (ok) {
    for (const auto& file : files) {
      if (dkf::read_file((base / "a" / file).string()) ==
          dkf::read_file((base / "b" / file).string()))
        ++matched;
      else
        ok = false;
    }
  }
  fs::remove_all(base);
  report(ok, "two identical runs leave byte-identical artifacts",
         std::to_string(matched) + " of " + std::to_string(files.size()) +
             " files matched");
}

}  // namespace

int main() {
  const dkf::Corpus fixture = dkf::load_corpus(dkf_test::fixture_path());
  const dkf::Corpus tiny = dkf_test::tiny_corpus();
  const dkf::Corpus two_slot = two_slot_corpus();

  check_gradients();
  check_attention_rows();
  check_loss_identities();
  dkf::SweepPoint best;
  const dkf::EncoderModel trained = check_convergence(fixture, best);
  check_recall_monotone(fixture, trained);
  check_inversion_subsets(fixture);
  check_metric_counters();
  check_gold_identity({&fixture, &tiny, &two_slot});
  check_ablation_ordering(fixture, trained, best.delta);
  check_run_determinism();

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
