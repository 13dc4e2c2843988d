#include "superbloom/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "superbloom/error.hpp"
#include "superbloom/random.hpp"

namespace superbloom {

namespace {

bool contains_in_top(const RankedResult& r, EntityId truth, std::uint32_t k) {
  const auto n = std::min<std::size_t>(k, r.items.size());
  return std::find(r.items.begin(), r.items.begin() + static_cast<std::ptrdiff_t>(n), truth) !=
         r.items.begin() + static_cast<std::ptrdiff_t>(n);
}

std::string fmt(double v, int precision = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

double recall_at_k(std::span<const RankedResult> results, std::span<const EntityId> truths,
                   std::uint32_t k) {
  if (k < 1) throw InvalidArgument("recall_at_k needs k >= 1");
  if (results.size() != truths.size()) throw InvalidArgument("results and truths are not aligned");
  if (results.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < results.size(); ++i) hits += contains_in_top(results[i], truths[i], k);
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

FrequencyBuckets frequency_bucket_recall(std::span<const RankedResult> results,
                                         std::span<const EntityId> truths,
                                         std::span<const double> train_frequencies) {
  if (results.size() != truths.size()) throw InvalidArgument("results and truths are not aligned");
  const auto n = train_frequencies.size();
  std::vector<EntityId> order(n);
  std::iota(order.begin(), order.end(), EntityId{0});
  std::stable_sort(order.begin(), order.end(), [&](EntityId a, EntityId b) {
    return train_frequencies[a] > train_frequencies[b];
  });
  std::vector<std::uint8_t> bucket(n);
  for (std::size_t r = 0; r < n; ++r) bucket[order[r]] = static_cast<std::uint8_t>(r * 10 / n);

  FrequencyBuckets out;
  std::array<std::size_t, 10> hits{};
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= n) throw InvalidArgument("frequencies do not cover every truth");
    const auto b = bucket[truths[i]];
    ++out.count[b];
    hits[b] += contains_in_top(results[i], truths[i], 1);
  }
  for (std::size_t b = 0; b < 10; ++b) {
    if (out.count[b]) out.recall[b] = static_cast<double>(hits[b]) / static_cast<double>(out.count[b]);
  }
  return out;
}

double token_recall_at_1(std::span<const PositionPrediction> predictions,
                         std::span<const TokenId> targets) {
  std::size_t total = 0, hits = 0, cursor = 0;
  for (const auto& p : predictions) {
    if (cursor + p.m > targets.size()) throw InvalidArgument("too few token targets");
    for (std::uint32_t j = 0; j < p.m; ++j) {
      const auto probs = p.function(j);
      const auto best = static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      hits += best == targets[cursor + j];
      ++total;
    }
    cursor += p.m;
  }
  if (cursor != targets.size()) throw InvalidArgument("token targets are not aligned with predictions");
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

std::vector<PositionPrediction> predict(const Model<float>& model,
                                        std::span<const MaskedExample> examples) {
  std::vector<PositionPrediction> out;
  for (const auto& ex : examples) {
    auto result = forward(model, ex.input, ex.target_positions);
    for (auto& p : result.predictions) out.push_back(std::move(p));
  }
  return out;
}

std::vector<RankedResult> rank_all(std::span<const PositionPrediction> predictions,
                                   const HashScheme& scheme, const EvalParams& params) {
  BeamParams beam = params.beam;
  beam.k = std::min(beam.k, scheme.vocab_size());
  std::vector<RankedResult> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) out.push_back(beam_search(params.score, p, scheme, beam));
  return out;
}

EvalReport evaluate_predictions(std::span<const PositionPrediction> predictions,
                                std::span<const EntityId> truths,
                                std::span<const TokenId> token_targets, const HashScheme& scheme,
                                std::span<const double> train_frequencies,
                                const EvalParams& params) {
  if (predictions.size() != truths.size()) throw InvalidArgument("predictions and truths are not aligned");
  const auto ranked = rank_all(predictions, scheme, params);
  EvalReport r;
  r.examples = truths.size();
  r.rec1 = recall_at_k(ranked, truths, 1);
  r.rec10 = recall_at_k(ranked, truths, 10);
  r.rec20 = recall_at_k(ranked, truths, 20);
  r.token_rec1 = token_recall_at_1(predictions, token_targets);
  r.buckets = frequency_bucket_recall(ranked, truths, train_frequencies);
  double candidates = 0.0;
  for (const auto& x : ranked) {
    r.exact += x.exact;
    candidates += static_cast<double>(x.candidates_scored);
  }
  r.mean_candidates = ranked.empty() ? 0.0 : candidates / static_cast<double>(ranked.size());
  return r;
}

EvalReport evaluate(const Model<float>& model, const HashScheme& scheme,
                    std::span<const MaskedExample> examples,
                    std::span<const double> train_frequencies, const EvalParams& params) {
  const auto predictions = predict(model, examples);
  std::vector<EntityId> truths;
  std::vector<TokenId> targets;
  for (const auto& ex : examples) {
    truths.insert(truths.end(), ex.original_ids.begin(), ex.original_ids.end());
    targets.insert(targets.end(), ex.targets.begin(), ex.targets.end());
  }
  return evaluate_predictions(predictions, truths, targets, scheme, train_frequencies, params);
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "examples   " << r.examples << '\n'
     << "rec@1      " << fmt(r.rec1) << '\n'
     << "rec@10     " << fmt(r.rec10) << '\n'
     << "rec@20     " << fmt(r.rec20) << '\n'
     << "token@1    " << fmt(r.token_rec1) << '\n'
     << "exact      " << r.exact << '\n'
     << "candidates " << fmt(r.mean_candidates, 1) << '\n'
     << "\ndecile  count   rec@1\n";
  for (std::size_t b = 0; b < 10; ++b) {
    os << pad(std::to_string(b + 1), 6) << pad(std::to_string(r.buckets.count[b]), 7)
       << pad(r.buckets.recall[b] ? fmt(*r.buckets.recall[b]) : "-", 8) << '\n';
  }
  return os.str();
}

std::string report_key_values(const EvalReport& r) {
  std::ostringstream os;
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(r.config_fingerprint));
  os << "config_fingerprint=" << fp << '\n'
     << "examples=" << r.examples << '\n'
     << "rec@1=" << fmt(r.rec1, 6) << '\n'
     << "rec@10=" << fmt(r.rec10, 6) << '\n'
     << "rec@20=" << fmt(r.rec20, 6) << '\n'
     << "token_rec@1=" << fmt(r.token_rec1, 6) << '\n'
     << "exact=" << r.exact << '\n'
     << "mean_candidates=" << fmt(r.mean_candidates, 3) << '\n';
  for (std::size_t b = 0; b < 10; ++b) {
    os << "decile" << b + 1 << ".count=" << r.buckets.count[b] << '\n';
    os << "decile" << b + 1 << ".rec@1=" << (r.buckets.recall[b] ? fmt(*r.buckets.recall[b], 6) : "none")
       << '\n';
  }
  return os.str();
}

BeamSweep beam_width_sweep(std::span<const PositionPrediction> predictions,
                           std::span<const EntityId> truths, const HashScheme& scheme,
                           std::vector<std::uint32_t> widths, std::vector<std::uint32_t> ks,
                           const ScoreFunction& score) {
  if (widths.empty() || ks.empty()) throw InvalidArgument("beam sweep needs widths and ks");
  BeamSweep sweep;
  sweep.widths = std::move(widths);
  sweep.ks = std::move(ks);
  const auto max_k = std::min(*std::max_element(sweep.ks.begin(), sweep.ks.end()), scheme.vocab_size());
  for (auto width : sweep.widths) {
    EvalParams params{score, BeamParams{width, 1, max_k}};
    const auto ranked = rank_all(predictions, scheme, params);
    std::vector<double> row;
    for (auto k : sweep.ks) row.push_back(recall_at_k(ranked, truths, k));
    double candidates = 0.0;
    for (const auto& r : ranked) candidates += static_cast<double>(r.candidates_scored);
    sweep.mean_candidates.push_back(ranked.empty() ? 0.0 : candidates / static_cast<double>(ranked.size()));
    if (!sweep.recall.empty()) {
      for (std::size_t i = 0; i < row.size(); ++i) sweep.monotone &= row[i] >= sweep.recall.back()[i];
    }
    sweep.recall.push_back(std::move(row));
  }
  return sweep;
}

std::string format_sweep(const BeamSweep& sweep) {
  std::ostringstream os;
  os << pad("B", 6);
  for (auto k : sweep.ks) os << pad("rec@" + std::to_string(k), 9);
  os << pad("cands", 10) << '\n';
  for (std::size_t w = 0; w < sweep.widths.size(); ++w) {
    os << pad(std::to_string(sweep.widths[w]), 6);
    for (double v : sweep.recall[w]) os << pad(fmt(v), 9);
    os << pad(fmt(sweep.mean_candidates[w], 1), 10) << '\n';
  }
  return os.str();
}

ExperimentData make_experiment_data(std::vector<Page> pages, std::uint32_t vocab_size,
                                    double test_frac, std::uint64_t seed) {
  auto split = split_train_test(pages, test_frac, seed);
  ExperimentData data;
  data.vocab_size = vocab_size;
  data.frequencies = entity_frequencies(split.train, vocab_size);
  data.train = std::move(split.train);
  data.test = std::move(split.test);
  return data;
}

RunOutcome train_and_evaluate(std::string label, const HashScheme& scheme, std::uint32_t layers,
                              const ExperimentData& data, const ExperimentSetup& setup) {
  ModelConfig mc = setup.model;
  mc.m = scheme.num_functions();
  mc.hash_size = scheme.hash_size();
  mc.num_specials = scheme.num_specials();
  mc.layers = layers;
  Trainer trainer(mc, setup.train, scheme.fingerprint(), derive_seed(setup.train.seed, 0x1417));
  train(trainer, corpus_batches(data.train, scheme, setup.train));
  const auto examples = make_eval_set(data.test, scheme, setup.eval_segment, setup.eval_seed);
  auto report = evaluate(trainer.state().model, scheme, examples, data.frequencies, setup.eval);
  return {std::move(label), report, std::move(trainer.state().model)};
}

HashScheme unhashed_scheme(std::uint32_t vocab_size, std::uint64_t seed) {
  return build_random_scheme(VocabSpec{vocab_size, default_specials()}, 1, 1, seed);
}

DepthStudy depth_study(const ExperimentData& data, const ExperimentSetup& setup,
                       std::uint32_t alpha, std::uint32_t m, std::uint32_t shallow,
                       std::uint32_t deep, std::uint64_t scheme_seed) {
  const auto plain = unhashed_scheme(data.vocab_size, scheme_seed);
  const auto hashed = build_random_scheme(VocabSpec{data.vocab_size, default_specials()}, m, alpha,
                                          scheme_seed);
  DepthStudy study;
  const auto tag = [](const char* kind, std::uint32_t l) { return std::string(kind) + "-l" + std::to_string(l); };
  study.runs.push_back(train_and_evaluate(tag("unhashed", shallow), plain, shallow, data, setup));
  study.runs.push_back(train_and_evaluate(tag("unhashed", deep), plain, deep, data, setup));
  study.runs.push_back(train_and_evaluate(tag("hashed", shallow), hashed, shallow, data, setup));
  study.runs.push_back(train_and_evaluate(tag("hashed", deep), hashed, deep, data, setup));
  study.unhashed_gap = study.runs[1].report.rec1 - study.runs[0].report.rec1;
  study.hashed_gap = study.runs[3].report.rec1 - study.runs[2].report.rec1;
  return study;
}

std::string format_depth_study(const DepthStudy& study) {
  std::ostringstream os;
  os << pad("model", 14) << pad("rec@1", 9) << pad("rec@10", 9) << pad("rec@20", 9) << '\n';
  for (const auto& run : study.runs) {
    os << pad(run.label, 14) << pad(fmt(run.report.rec1), 9) << pad(fmt(run.report.rec10), 9)
       << pad(fmt(run.report.rec20), 9) << '\n';
  }
  os << "unhashed gap " << fmt(study.unhashed_gap) << "\nhashed gap   " << fmt(study.hashed_gap) << '\n';
  return os.str();
}

EmbeddingTable entity_embeddings(const Model<float>& model, const HashScheme& scheme) {
  if (scheme.num_functions() != 1) throw InvalidArgument("entity embeddings need a one-function scheme");
  if (model.config.hash_size != scheme.hash_size()) throw InvalidArgument("model does not match the scheme");
  const auto table = model.tensor(model.layout->embedding);
  EmbeddingTable out{scheme.vocab_size(), model.config.d, {}};
  out.values.reserve(std::size_t{out.rows} * out.dim);
  for (EntityId s = 0; s < scheme.vocab_size(); ++s) {
    const auto row = scheme.global_token(0, scheme.local_token(0, s));
    for (std::uint32_t c = 0; c < out.dim; ++c) out.values.push_back(table(row, c));
  }
  return out;
}

std::string variant_name(HashVariant v) {
  switch (v) {
    case HashVariant::kRandomRandom: return "random+random";
    case HashVariant::kRandomCoherent: return "random+coherent";
    case HashVariant::kCoherentCoherent: return "coherent+coherent";
  }
  return "?";
}

HashScheme make_variant_scheme(HashVariant variant, const EmbeddingTable& embeddings,
                               std::span<const double> frequencies, std::uint32_t alpha,
                               std::uint64_t seed) {
  const VocabSpec spec{embeddings.rows, default_specials()};
  if (variant == HashVariant::kRandomRandom) return build_random_scheme(spec, 2, alpha, seed);
  std::vector<TokenId> first;
  if (variant == HashVariant::kRandomCoherent) {
    first = random_function(spec.size, alpha, derive_seed(seed, 0));
  } else {
    first = build_coherent_function(embeddings, frequencies, alpha);
  }
  auto second = build_coherent_function(embeddings, frequencies, alpha, std::span<const TokenId>(first));
  return HashScheme::from_functions(spec, alpha, {std::move(first), std::move(second)});
}

HashComparison hashing_comparison(const ExperimentData& data, const ExperimentSetup& setup,
                                  const EmbeddingTable& embeddings, std::uint32_t alpha,
                                  std::uint32_t layers, std::uint64_t scheme_seed,
                                  std::vector<HashVariant> variants) {
  if (embeddings.rows != data.vocab_size) throw InvalidArgument("embedding table does not cover the vocabulary");
  HashComparison out;
  out.alpha = alpha;
  for (auto v : variants) {
    const auto scheme = make_variant_scheme(v, embeddings, data.frequencies, alpha, scheme_seed);
    const auto run = train_and_evaluate(variant_name(v), scheme, layers, data, setup);
    out.rows.push_back({v, run.report.token_rec1, run.report.rec1});
  }
  return out;
}

std::string format_hash_comparison(const HashComparison& c) {
  std::ostringstream os;
  os << "alpha " << c.alpha << '\n' << pad("variant", 18) << pad("token@1", 9) << pad("entity@1", 10) << '\n';
  for (const auto& r : c.rows) {
    os << pad(variant_name(r.variant), 18) << pad(fmt(r.token_rec1), 9) << pad(fmt(r.entity_rec1), 10) << '\n';
  }
  return os.str();
}

}  // namespace superbloom
