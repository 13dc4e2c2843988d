#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "superbloom/hashing.hpp"

namespace superbloom {

struct Page {
  std::vector<EntityId> entities;
};

// Hashed input: m tokens per entity, laid out entity-major ([i][j]).
struct BloomDigest {
  std::uint32_t m = 1;
  std::vector<TokenId> tokens;

  std::size_t num_entities() const noexcept { return tokens.size() / m; }
  bool operator==(const BloomDigest&) const = default;
};

enum class Perturbation : std::uint8_t { kMask = 0, kRandom = 1, kUnchanged = 2 };

struct MaskedExample {
  BloomDigest input;
  std::vector<std::uint32_t> target_positions;  // ascending entity positions
  std::vector<TokenId> targets;                 // local tokens, m per target position
  std::vector<EntityId> original_ids;           // true entity per target position
  std::vector<Perturbation> perturbations;      // input treatment per target position

  std::size_t num_targets() const noexcept { return target_positions.size(); }
  bool operator==(const MaskedExample&) const = default;
};

// Plain text, one page per line, whitespace-separated entity ids. Blank lines
// are skipped. Parse errors carry the line number.
std::vector<Page> load_corpus(const std::filesystem::path& path,
                              std::optional<std::uint32_t> vocab_size = {});
std::vector<Page> parse_corpus(const std::string& text, std::optional<std::uint32_t> vocab_size = {},
                               const std::string& source = "<corpus>");
std::string format_corpus(std::span<const Page> pages);
void save_corpus(std::span<const Page> pages, const std::filesystem::path& path);

// Optional sidecar: one entity name per line, line number = id.
std::vector<std::string> load_vocab_names(const std::filesystem::path& path);

struct CorpusSplit {
  std::vector<Page> train;
  std::vector<Page> test;
};

// Splits by page: round(test_frac * pages) pages, chosen by a seeded shuffle,
// go to test. Both halves keep the original page order.
CorpusSplit split_train_test(std::span<const Page> pages, double test_frac, std::uint64_t seed);

// Occurrence counts of every entity over a set of pages.
std::vector<double> entity_frequencies(std::span<const Page> pages, std::uint32_t vocab_size);

// Contiguous slice of length min(n_max, |page|) with a uniform start.
std::vector<EntityId> cut_segment(const Page& page, std::uint32_t n_max, std::uint64_t seed);

// Number of positions selected for masking: max(1, round(rate * n)).
std::uint32_t masked_count(std::size_t n, double mask_rate);

BloomDigest make_digest(std::span<const EntityId> segment, const HashScheme& scheme);

// Training example: masked_count positions; each is replaced by the MASK
// tokens (p=0.8), the tokens of a uniformly random entity (p=0.1), or left as
// is (p=0.1). All m tokens of an entity move together.
MaskedExample make_masked_example(std::span<const EntityId> segment, const HashScheme& scheme,
                                  double mask_rate, std::uint64_t seed);

// Evaluation example: exactly one uniformly chosen position, always MASK.
MaskedExample make_eval_example(std::span<const EntityId> segment, const HashScheme& scheme,
                                std::uint64_t seed);

// One evaluation example per page (random segment, random held-out entity).
std::vector<MaskedExample> make_eval_set(std::span<const Page> pages, const HashScheme& scheme,
                                         std::uint32_t n_max, std::uint64_t seed);

// Binary example cache (magic "SBEX"), versioned and checksummed.
void save_examples(std::span<const MaskedExample> examples, std::uint64_t scheme_fingerprint,
                   const std::filesystem::path& path);
std::vector<MaskedExample> load_examples(const std::filesystem::path& path,
                                         std::uint64_t expected_scheme_fingerprint);

// Desk-scale stand-in corpus. Entity e has Zipf weight (e+1)^-s and belongs to
// one of `clusters` balanced clusters. A page picks a cluster in proportion
// to its total weight and draws distinct entities from it by weight, mixing
// in globally drawn entities with probability `noise`. Pages left shorter than
// min_length are topped up with global draws.
struct SynthConfig {
  std::uint32_t entities = 20000;
  std::uint32_t pages = 20000;
  std::uint32_t clusters = 10;
  double zipf_s = 1.0;
  std::uint32_t min_length = 8;
  std::uint32_t max_length = 32;
  double noise = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

std::vector<Page> generate_synthetic_corpus(const SynthConfig& config);
std::vector<std::uint32_t> synthetic_clusters(const SynthConfig& config);

}  // namespace superbloom
