#pragma once

// Top-k ranking of the original vocabulary from m hashed distributions.
//
// An entity s scores gamma(s) = c(p_1(h_1(s)), ..., p_m(h_m(s))) for an
// increasing aggregator c. Beam search expands the b most probable tokens of
// every function into candidate entities; any entity left out has every
// coordinate below the b-th largest probability p_j^b, so its score is at
// most c(p^b) and the running top-k is certified once its k-th score reaches
// that bound.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "superbloom/hashing.hpp"
#include "superbloom/transformer.hpp"

namespace superbloom {

class ScoreFunction {
 public:
  enum class Kind { kLogSum, kMin, kMax, kCustom };
  using Fn = std::function<double(std::span<const double>)>;

  static ScoreFunction log_sum() { return ScoreFunction(Kind::kLogSum); }
  static ScoreFunction min() { return ScoreFunction(Kind::kMin); }
  static ScoreFunction max() { return ScoreFunction(Kind::kMax); }
  // `fn` must be increasing. When it is only weakly increasing, pass
  // strict = false so certificates are issued on a strict margin only.
  static ScoreFunction custom(Fn fn, bool strict = false);
  // "log_sum", "min" or "max"; throws ConfigError otherwise.
  static ScoreFunction parse(std::string_view name);

  Kind kind() const noexcept { return kind_; }
  std::string name() const;
  // True when rho < rho' in every coordinate implies c(rho) < c(rho').
  bool strict() const noexcept { return strict_; }

  // log_sum maps a zero probability to -infinity.
  double operator()(std::span<const double> rho) const;

 private:
  explicit ScoreFunction(Kind kind) : kind_(kind) {}

  Kind kind_;
  Fn fn_;
  bool strict_ = true;
};

struct BeamParams {
  static constexpr std::uint32_t kUnbounded = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t beam_width = 20;
  std::uint32_t max_iterations = 1;  // kUnbounded runs until certified
  std::uint32_t k = 1;

  void validate() const;  // throws InvalidArgument on zero fields
};

struct RankedResult {
  std::vector<EntityId> items;  // best first; ties by ascending id
  std::vector<double> scores;
  bool exact = false;
  std::uint64_t candidates_scored = 0;
  std::uint32_t iterations_used = 0;
};

double gamma(const ScoreFunction& score, const PositionPrediction& prediction,
             const HashScheme& scheme, EntityId id);

// Scores every entity. Always exact.
RankedResult exhaustive_rank(const ScoreFunction& score, const PositionPrediction& prediction,
                             const HashScheme& scheme, std::uint32_t k);

RankedResult beam_search(const ScoreFunction& score, const PositionPrediction& prediction,
                         const HashScheme& scheme, const BeamParams& params);

// Ordering used by every ranking: higher score first, then smaller id.
inline bool ranks_before(double score_a, EntityId a, double score_b, EntityId b) noexcept {
  return score_a > score_b || (score_a == score_b && a < b);
}

// Prediction files (magic "SBPR"): u32 version | u64 scheme fingerprint |
// u32 count | per record: u32 position, u32 m, u32 hash_size,
// m*hash_size f64 probabilities | u32 crc32.
void save_predictions(std::span<const PositionPrediction> predictions,
                      std::uint64_t scheme_fingerprint, const std::filesystem::path& path);
std::vector<PositionPrediction> load_predictions(const std::filesystem::path& path,
                                                 std::uint64_t scheme_fingerprint);

// "rank id score exact" lines for one query, prefixed by the query index.
std::string format_ranked(std::size_t query, const RankedResult& result);

}  // namespace superbloom
