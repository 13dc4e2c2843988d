#pragma once

// Recall metrics and the desk-scale experiment harnesses (depth study, beam
// width sweep, random vs coherent hashing).

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "superbloom/corpus.hpp"
#include "superbloom/hashing.hpp"
#include "superbloom/inference.hpp"
#include "superbloom/training.hpp"
#include "superbloom/transformer.hpp"

namespace superbloom {

// Fraction of queries whose truth is among the first k items.
double recall_at_k(std::span<const RankedResult> results, std::span<const EntityId> truths,
                   std::uint32_t k);

// Vocabulary deciles by training frequency: entities are ranked by count
// (descending, ties by id) and entity of rank r falls into bucket 10r/N.
// Bucket 0 holds the most frequent labels. Empty buckets have no value.
struct FrequencyBuckets {
  std::array<std::optional<double>, 10> recall;
  std::array<std::size_t, 10> count{};
};
FrequencyBuckets frequency_bucket_recall(std::span<const RankedResult> results,
                                         std::span<const EntityId> truths,
                                         std::span<const double> train_frequencies);

// Mean over predictions and functions of [argmax_t p_j(t) == target_j];
// targets hold m local tokens per prediction. Ties in argmax go to the
// smaller token.
double token_recall_at_1(std::span<const PositionPrediction> predictions,
                         std::span<const TokenId> targets);

struct EvalParams {
  ScoreFunction score = ScoreFunction::log_sum();
  BeamParams beam{20, 1, 20};
};

// Distributions at every target position of every example, in order.
std::vector<PositionPrediction> predict(const Model<float>& model,
                                        std::span<const MaskedExample> examples);

std::vector<RankedResult> rank_all(std::span<const PositionPrediction> predictions,
                                   const HashScheme& scheme, const EvalParams& params);

struct EvalReport {
  double rec1 = 0.0;
  double rec10 = 0.0;
  double rec20 = 0.0;
  double token_rec1 = 0.0;
  FrequencyBuckets buckets;
  std::size_t examples = 0;
  std::size_t exact = 0;  // queries whose ranking was certified
  double mean_candidates = 0.0;
  std::uint64_t config_fingerprint = 0;
};

EvalReport evaluate_predictions(std::span<const PositionPrediction> predictions,
                                std::span<const EntityId> truths,
                                std::span<const TokenId> token_targets, const HashScheme& scheme,
                                std::span<const double> train_frequencies,
                                const EvalParams& params);
EvalReport evaluate(const Model<float>& model, const HashScheme& scheme,
                    std::span<const MaskedExample> examples,
                    std::span<const double> train_frequencies, const EvalParams& params);

std::string format_report(const EvalReport& report);
// "key=value" lines, one metric per line.
std::string report_key_values(const EvalReport& report);

struct BeamSweep {
  std::vector<std::uint32_t> ks;
  std::vector<std::uint32_t> widths;
  std::vector<std::vector<double>> recall;  // [width][k]
  std::vector<double> mean_candidates;      // per width
  bool monotone = true;                     // every rec@k column nondecreasing in width
};
// One beam-search iteration per width; rankings are cut at max(ks).
BeamSweep beam_width_sweep(std::span<const PositionPrediction> predictions,
                           std::span<const EntityId> truths, const HashScheme& scheme,
                           std::vector<std::uint32_t> widths = {1, 10, 20, 100},
                           std::vector<std::uint32_t> ks = {1, 10, 20},
                           const ScoreFunction& score = ScoreFunction::log_sum());
std::string format_sweep(const BeamSweep& sweep);

// Shared inputs of the training experiments.
struct ExperimentData {
  std::uint32_t vocab_size = 0;
  std::vector<Page> train;
  std::vector<Page> test;
  std::vector<double> frequencies;  // training counts
};
ExperimentData make_experiment_data(std::vector<Page> pages, std::uint32_t vocab_size,
                                    double test_frac, std::uint64_t seed);

struct ExperimentSetup {
  ModelConfig model;  // m, hash_size, num_specials and layers are overridden per run
  TrainConfig train;
  EvalParams eval;
  std::uint32_t eval_segment = 32;
  std::uint64_t eval_seed = 7;
};

struct RunOutcome {
  std::string label;
  EvalReport report;
  Model<float> model;
};

// Trains a fresh model for `scheme` on data.train and evaluates on one held-out
// entity per test page.
RunOutcome train_and_evaluate(std::string label, const HashScheme& scheme, std::uint32_t layers,
                              const ExperimentData& data, const ExperimentSetup& setup);

// Unhashed = one function with alpha 1.
HashScheme unhashed_scheme(std::uint32_t vocab_size, std::uint64_t seed);

struct DepthStudy {
  std::vector<RunOutcome> runs;  // unhashed shallow, unhashed deep, hashed shallow, hashed deep
  double unhashed_gap = 0.0;     // rec@1(deep) - rec@1(shallow)
  double hashed_gap = 0.0;
};
DepthStudy depth_study(const ExperimentData& data, const ExperimentSetup& setup,
                       std::uint32_t alpha, std::uint32_t m, std::uint32_t shallow,
                       std::uint32_t deep, std::uint64_t scheme_seed);
std::string format_depth_study(const DepthStudy& study);

// Input embeddings of every entity under a one-function scheme.
EmbeddingTable entity_embeddings(const Model<float>& model, const HashScheme& scheme);

enum class HashVariant { kRandomRandom, kRandomCoherent, kCoherentCoherent };
std::string variant_name(HashVariant v);

// Two-function scheme: each function is random or coherent (built from the
// embeddings); the second function is constrained by the first so no two
// entities collide completely.
HashScheme make_variant_scheme(HashVariant variant, const EmbeddingTable& embeddings,
                               std::span<const double> frequencies, std::uint32_t alpha,
                               std::uint64_t seed);

struct HashComparisonRow {
  HashVariant variant;
  double token_rec1 = 0.0;
  double entity_rec1 = 0.0;
};
struct HashComparison {
  std::uint32_t alpha = 0;
  std::vector<HashComparisonRow> rows;
};
HashComparison hashing_comparison(const ExperimentData& data, const ExperimentSetup& setup,
                                  const EmbeddingTable& embeddings, std::uint32_t alpha,
                                  std::uint32_t layers, std::uint64_t scheme_seed,
                                  std::vector<HashVariant> variants = {
                                      HashVariant::kRandomRandom, HashVariant::kRandomCoherent,
                                      HashVariant::kCoherentCoherent});
std::string format_hash_comparison(const HashComparison& comparison);

}  // namespace superbloom
