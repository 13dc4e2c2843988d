#pragma once

// Multi-hash ("Bloom digest") vocabulary schemes.
//
// Every entity id s in {0..N-1} is mapped by m hash functions to local tokens
// h_j(s) in {0..hash_size-1}. Token spaces of different functions are kept
// disjoint: the global token of (j, t) is j*hash_size + t, and each special
// token owns m further tokens in a trailing block, so one embedding table
// serves every function and specials never collide with entities.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace superbloom {

using EntityId = std::uint32_t;
using TokenId = std::uint32_t;  // global token id, see HashScheme::global_token

struct VocabSpec {
  std::uint32_t size = 0;
  std::vector<std::string> specials;

  // Throws InvalidArgument if size == 0 or specials repeat.
  void validate() const;
};

inline std::vector<std::string> default_specials() { return {"MASK", "CLS", "SEP"}; }

class HashScheme {
 public:
  // Builds a scheme from explicit forward arrays (one per function). Checks
  // the partition (every bucket non-empty and at most alpha entities) and
  // the absence of complete collisions; throws InfeasibleSchemeError otherwise.
  static HashScheme from_functions(VocabSpec spec, std::uint32_t alpha,
                                   std::vector<std::vector<TokenId>> forward);

  std::uint32_t vocab_size() const noexcept { return spec_.size; }
  std::uint32_t num_functions() const noexcept { return static_cast<std::uint32_t>(forward_.size()); }
  std::uint32_t alpha() const noexcept { return alpha_; }
  std::uint32_t hash_size() const noexcept { return hash_size_; }
  std::uint32_t num_specials() const noexcept { return static_cast<std::uint32_t>(spec_.specials.size()); }
  const VocabSpec& spec() const noexcept { return spec_; }

  // m * hash_size.
  std::uint32_t ordinary_tokens() const noexcept { return num_functions() * hash_size_; }
  // m * hash_size + m * |specials|; the embedding table row count.
  std::uint32_t total_tokens() const noexcept {
    return ordinary_tokens() + num_functions() * num_specials();
  }

  std::span<const TokenId> forward(std::uint32_t j) const;
  TokenId local_token(std::uint32_t j, EntityId id) const;

  // inverse_lookup(j, t): sorted ids s with h_j(s) = t.
  std::span<const EntityId> inverse_lookup(std::uint32_t j, TokenId local) const;

  TokenId global_token(std::uint32_t j, TokenId local) const noexcept { return j * hash_size_ + local; }
  TokenId special_token(std::uint32_t special_index, std::uint32_t j) const noexcept {
    return ordinary_tokens() + special_index * num_functions() + j;
  }
  std::optional<std::uint32_t> special_index(std::string_view name) const;

  // The m global tokens of an entity, in function order.
  std::vector<TokenId> hash_entity(EntityId id) const;
  void hash_entity_into(EntityId id, std::span<TokenId> out) const;
  std::vector<TokenId> hash_special(std::string_view name) const;

  // Stable content hash of the serialized scheme.
  std::uint64_t fingerprint() const;

  bool operator==(const HashScheme& other) const;

 private:
  HashScheme() = default;
  void build_inverse();

  VocabSpec spec_;
  std::uint32_t alpha_ = 1;
  std::uint32_t hash_size_ = 0;
  std::vector<std::vector<TokenId>> forward_;
  // Inverse tables in CSR form, one per function.
  std::vector<std::vector<std::uint32_t>> inverse_offsets_;
  std::vector<std::vector<EntityId>> inverse_ids_;
};

// ceil(N / alpha).
std::uint32_t hash_size_for(std::uint32_t vocab_size, std::uint32_t alpha);

// One random alpha-to-one function: a seeded permutation of the vocabulary
// cut into ceil(N/alpha) consecutive buckets whose sizes differ by at most one.
std::vector<TokenId> random_function(std::uint32_t vocab_size, std::uint32_t alpha, std::uint64_t seed);

// Random permutation hashing: function j permutes the vocabulary and cuts it
// into ceil(N/alpha) consecutive buckets whose sizes differ by at most one.
// Complete collisions are removed by swapping bucket memberships in the last
// function; if that fails the permutations are re-drawn (up to 64 attempts).
HashScheme build_random_scheme(const VocabSpec& spec, std::uint32_t m, std::uint32_t alpha,
                               std::uint64_t seed);

// Embedding matrix in row-major order, rows = entities.
struct EmbeddingTable {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::uint32_t r) const {
    return std::span(values).subspan(std::size_t{r} * dim, dim);
  }
};

// Greedy coherent hash function. Entities are visited by decreasing frequency
// (ties by id); an unassigned entity opens a bucket with itself and its
// alpha-1 most cosine-similar unassigned entities. With a constraint, a
// candidate is skipped when it shares a constraint bucket with any current
// member. Returns the forward array.
std::vector<TokenId> build_coherent_function(const EmbeddingTable& embeddings,
                                             std::span<const double> frequencies,
                                             std::uint32_t alpha,
                                             std::optional<std::span<const TokenId>> constraint = {});

// Reads embeddings from a text file: one row per line, whitespace-separated reals.
EmbeddingTable load_embeddings(const std::filesystem::path& path);

// Versioned binary format (magic "SBHS"):
//   u32 version | u32 N | u32 m | u32 alpha | u32 hash_size | u32 n_specials |
//   specials as (u32 length, bytes) | m*N u32 forward entries, function-major |
//   u32 crc32
// Inverse tables are rebuilt on load.
void save_scheme(const HashScheme& scheme, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_scheme(const HashScheme& scheme);
HashScheme load_scheme(const std::filesystem::path& path);
HashScheme deserialize_scheme(std::vector<std::uint8_t> bytes);

}  // namespace superbloom
