#include "superbloom/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "superbloom/binary_io.hpp"
#include "superbloom/error.hpp"
#include "superbloom/random.hpp"

namespace superbloom {

namespace {

constexpr std::string_view kSchemeMagic = "SBHS";
constexpr std::uint32_t kSchemeVersion = 1;
constexpr int kMaxAttempts = 64;

std::uint64_t tuple_hash(const std::vector<std::vector<TokenId>>& forward, EntityId id,
                         std::optional<TokenId> last_override = {}) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (std::size_t j = 0; j < forward.size(); ++j) {
    TokenId t = forward[j][id];
    if (j + 1 == forward.size() && last_override) t = *last_override;
    h = splitmix64(h ^ (std::uint64_t{t} + 0x9e3779b97f4a7c15ULL * (j + 1)));
  }
  return h;
}

// Ids in tuple order; adjacent equal tuples are complete collisions.
std::vector<EntityId> sorted_by_tuple(const std::vector<std::vector<TokenId>>& forward,
                                      std::uint32_t n) {
  std::vector<EntityId> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  std::sort(ids.begin(), ids.end(), [&](EntityId a, EntityId b) {
    for (const auto& f : forward) {
      if (f[a] != f[b]) return f[a] < f[b];
    }
    return a < b;
  });
  return ids;
}

bool same_tuple(const std::vector<std::vector<TokenId>>& forward, EntityId a, EntityId b) {
  return std::all_of(forward.begin(), forward.end(), [&](const auto& f) { return f[a] == f[b]; });
}

// Swaps last-function tokens between colliding ids and random partners until
// every tuple is unique. Bucket sizes are unchanged by construction.
bool repair_complete_collisions(std::vector<std::vector<TokenId>>& forward, std::uint32_t n,
                                Rng& rng) {
  if (forward.size() < 2) return true;
  auto& last = forward.back();

  std::unordered_map<std::uint64_t, std::uint32_t> counts;
  counts.reserve(n * 2);
  std::vector<std::uint64_t> hashes(n);
  for (EntityId s = 0; s < n; ++s) {
    hashes[s] = tuple_hash(forward, s);
    ++counts[hashes[s]];
  }
  std::vector<EntityId> pending;
  {
    std::unordered_map<std::uint64_t, bool> seen;
    for (EntityId s = 0; s < n; ++s) {
      if (counts[hashes[s]] > 1 && !seen.emplace(hashes[s], true).second) pending.push_back(s);
    }
  }

  constexpr int kTriesPerId = 4096;
  for (EntityId s : pending) {
    if (counts[hashes[s]] <= 1) continue;
    bool fixed = false;
    for (int attempt = 0; attempt < kTriesPerId && !fixed; ++attempt) {
      const auto u = static_cast<EntityId>(rng.below(n));
      if (u == s || last[u] == last[s]) continue;
      const std::uint64_t hs = tuple_hash(forward, s, last[u]);
      const std::uint64_t hu = tuple_hash(forward, u, last[s]);
      if (hs == hu) continue;
      --counts[hashes[s]];
      --counts[hashes[u]];
      const auto free_slot = [&](std::uint64_t h) {
        auto it = counts.find(h);
        return it == counts.end() || it->second == 0;
      };
      if (free_slot(hs) && free_slot(hu)) {
        std::swap(last[s], last[u]);
        hashes[s] = hs;
        hashes[u] = hu;
        ++counts[hs];
        ++counts[hu];
        fixed = true;
      } else {
        ++counts[hashes[s]];
        ++counts[hashes[u]];
      }
    }
    if (!fixed) return false;
  }
  return true;
}

void check_no_complete_collisions(const std::vector<std::vector<TokenId>>& forward,
                                  std::uint32_t n) {
  const auto ids = sorted_by_tuple(forward, n);
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (same_tuple(forward, ids[i - 1], ids[i])) {
      throw InfeasibleSchemeError("complete collision between entities " +
                                  std::to_string(ids[i - 1]) + " and " + std::to_string(ids[i]));
    }
  }
}

}  // namespace

void VocabSpec::validate() const {
  if (size == 0) throw InvalidArgument("vocabulary size must be at least 1");
  std::set<std::string_view> names;
  for (const auto& s : specials) {
    if (s.empty()) throw InvalidArgument("special token names must be non-empty");
    if (!names.insert(s).second) throw InvalidArgument("duplicate special token: " + s);
  }
}

std::uint32_t hash_size_for(std::uint32_t vocab_size, std::uint32_t alpha) {
  return static_cast<std::uint32_t>((std::uint64_t{vocab_size} + alpha - 1) / alpha);
}

HashScheme HashScheme::from_functions(VocabSpec spec, std::uint32_t alpha,
                                      std::vector<std::vector<TokenId>> forward) {
  spec.validate();
  if (forward.empty()) throw InvalidArgument("a scheme needs at least one hash function");
  if (alpha == 0 || alpha > spec.size) {
    throw InfeasibleSchemeError("alpha must lie in [1, N]; got alpha=" + std::to_string(alpha) +
                                " for N=" + std::to_string(spec.size));
  }
  HashScheme scheme;
  scheme.spec_ = std::move(spec);
  scheme.alpha_ = alpha;
  scheme.hash_size_ = hash_size_for(scheme.spec_.size, alpha);
  for (std::size_t j = 0; j < forward.size(); ++j) {
    if (forward[j].size() != scheme.spec_.size) {
      throw InvalidArgument("forward array " + std::to_string(j) + " has wrong length");
    }
    for (TokenId t : forward[j]) {
      if (t >= scheme.hash_size_) {
        throw InvalidArgument("forward array " + std::to_string(j) + " has token out of range");
      }
    }
  }
  scheme.forward_ = std::move(forward);
  scheme.build_inverse();
  for (std::uint32_t j = 0; j < scheme.num_functions(); ++j) {
    for (TokenId t = 0; t < scheme.hash_size_; ++t) {
      const auto size = scheme.inverse_lookup(j, t).size();
      if (size == 0 || size > alpha) {
        throw InfeasibleSchemeError("function " + std::to_string(j) + " bucket " +
                                    std::to_string(t) + " holds " + std::to_string(size) +
                                    " entities (alpha=" + std::to_string(alpha) + ")");
      }
    }
  }
  check_no_complete_collisions(scheme.forward_, scheme.spec_.size);
  return scheme;
}

void HashScheme::build_inverse() {
  const std::uint32_t m = num_functions();
  inverse_offsets_.assign(m, std::vector<std::uint32_t>(hash_size_ + 1, 0));
  inverse_ids_.assign(m, std::vector<EntityId>(spec_.size));
  for (std::uint32_t j = 0; j < m; ++j) {
    auto& off = inverse_offsets_[j];
    for (TokenId t : forward_[j]) ++off[t + 1];
    std::partial_sum(off.begin(), off.end(), off.begin());
    std::vector<std::uint32_t> cursor(off.begin(), off.end() - 1);
    // Ascending id order yields sorted buckets.
    for (EntityId s = 0; s < spec_.size; ++s) inverse_ids_[j][cursor[forward_[j][s]]++] = s;
  }
}

std::span<const TokenId> HashScheme::forward(std::uint32_t j) const {
  if (j >= num_functions()) throw InvalidArgument("hash function index out of range");
  return forward_[j];
}

TokenId HashScheme::local_token(std::uint32_t j, EntityId id) const {
  if (j >= num_functions()) throw InvalidArgument("hash function index out of range");
  if (id >= spec_.size) throw InvalidArgument("entity id " + std::to_string(id) + " out of range");
  return forward_[j][id];
}

std::span<const EntityId> HashScheme::inverse_lookup(std::uint32_t j, TokenId local) const {
  if (j >= num_functions()) throw InvalidArgument("hash function index out of range");
  if (local >= hash_size_) throw InvalidArgument("local token out of range");
  const auto& off = inverse_offsets_[j];
  return std::span(inverse_ids_[j]).subspan(off[local], off[local + 1] - off[local]);
}

std::optional<std::uint32_t> HashScheme::special_index(std::string_view name) const {
  for (std::uint32_t i = 0; i < spec_.specials.size(); ++i) {
    if (spec_.specials[i] == name) return i;
  }
  return std::nullopt;
}

std::vector<TokenId> HashScheme::hash_entity(EntityId id) const {
  std::vector<TokenId> out(num_functions());
  hash_entity_into(id, out);
  return out;
}

void HashScheme::hash_entity_into(EntityId id, std::span<TokenId> out) const {
  if (id >= spec_.size) throw InvalidArgument("entity id " + std::to_string(id) + " out of range");
  for (std::uint32_t j = 0; j < num_functions(); ++j) out[j] = global_token(j, forward_[j][id]);
}

std::vector<TokenId> HashScheme::hash_special(std::string_view name) const {
  const auto idx = special_index(name);
  if (!idx) throw InvalidArgument("unknown special token: " + std::string(name));
  std::vector<TokenId> out(num_functions());
  for (std::uint32_t j = 0; j < num_functions(); ++j) out[j] = special_token(*idx, j);
  return out;
}

std::uint64_t HashScheme::fingerprint() const {
  const auto bytes = serialize_scheme(*this);
  return io::fnv1a64(bytes);
}

bool HashScheme::operator==(const HashScheme& other) const {
  return spec_.size == other.spec_.size && spec_.specials == other.spec_.specials &&
         alpha_ == other.alpha_ && hash_size_ == other.hash_size_ && forward_ == other.forward_;
}

std::vector<TokenId> random_function(std::uint32_t vocab_size, std::uint32_t alpha, std::uint64_t seed) {
  if (vocab_size == 0 || alpha == 0 || alpha > vocab_size) {
    throw InfeasibleSchemeError("alpha must lie in [1, N]; got alpha=" + std::to_string(alpha) +
                                " for N=" + std::to_string(vocab_size));
  }
  const std::uint32_t h = hash_size_for(vocab_size, alpha);
  // The first N % h buckets take one extra entity.
  const std::uint32_t base = vocab_size / h;
  const std::uint32_t extra = vocab_size % h;
  std::vector<EntityId> perm(vocab_size);
  std::iota(perm.begin(), perm.end(), 0u);
  Rng rng(seed);
  rng.shuffle(std::span(perm));
  std::vector<TokenId> forward(vocab_size);
  std::uint32_t pos = 0;
  for (TokenId t = 0; t < h; ++t) {
    const std::uint32_t size = base + (t < extra ? 1 : 0);
    for (std::uint32_t k = 0; k < size; ++k) forward[perm[pos++]] = t;
  }
  return forward;
}

HashScheme build_random_scheme(const VocabSpec& spec, std::uint32_t m, std::uint32_t alpha,
                               std::uint64_t seed) {
  spec.validate();
  if (m == 0) throw InvalidArgument("m must be at least 1");
  const std::uint32_t n = spec.size;
  if (alpha == 0 || alpha > n) {
    throw InfeasibleSchemeError("alpha must lie in [1, N]; got alpha=" + std::to_string(alpha) +
                                " for N=" + std::to_string(n));
  }
  const std::uint32_t h = hash_size_for(n, alpha);
  {
    // Pigeonhole: m functions give at most h^m distinct digests.
    double capacity = 1.0;
    for (std::uint32_t j = 0; j < m && capacity < n; ++j) capacity *= h;
    if (capacity < n) {
      throw InfeasibleSchemeError("m=" + std::to_string(m) + ", alpha=" + std::to_string(alpha) +
                                  " cannot separate N=" + std::to_string(n) +
                                  " entities without complete collisions");
    }
  }

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<TokenId>> forward(m);
    for (std::uint32_t j = 0; j < m; ++j) {
      forward[j] = random_function(n, alpha, derive_seed(seed, j, static_cast<std::uint64_t>(attempt)));
    }
    Rng repair_rng(derive_seed(seed, 0xc0111de5ULL, static_cast<std::uint64_t>(attempt)));
    if (!repair_complete_collisions(forward, n, repair_rng)) continue;
    return HashScheme::from_functions(spec, alpha, std::move(forward));
  }
  throw InfeasibleSchemeError("could not avoid complete collisions after " +
                              std::to_string(kMaxAttempts) + " attempts (m=" + std::to_string(m) +
                              ", alpha=" + std::to_string(alpha) + ", N=" + std::to_string(n) + ")");
}

std::vector<TokenId> build_coherent_function(const EmbeddingTable& embeddings,
                                             std::span<const double> frequencies,
                                             std::uint32_t alpha,
                                             std::optional<std::span<const TokenId>> constraint) {
  const std::uint32_t n = embeddings.rows;
  if (n == 0) throw InvalidArgument("embedding table is empty");
  if (embeddings.values.size() != std::size_t{n} * embeddings.dim) {
    throw InvalidArgument("embedding table shape mismatch");
  }
  if (frequencies.size() != n) throw InvalidArgument("frequency count must equal embedding rows");
  if (alpha == 0 || alpha > n) throw InfeasibleSchemeError("alpha must lie in [1, N]");
  if (constraint && constraint->size() != n) {
    throw InvalidArgument("constraint function must cover the same vocabulary");
  }

  // Unit-normalize so dot products are cosine similarities.
  const std::uint32_t dim = embeddings.dim;
  std::vector<double> unit(embeddings.values);
  for (std::uint32_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (std::uint32_t c = 0; c < dim; ++c) norm += unit[r * dim + c] * unit[r * dim + c];
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (std::uint32_t c = 0; c < dim; ++c) unit[r * dim + c] /= norm;
    }
  }

  std::vector<EntityId> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](EntityId a, EntityId b) {
    return frequencies[a] > frequencies[b];
  });

  constexpr TokenId kUnassigned = ~TokenId{0};
  std::vector<TokenId> forward(n, kUnassigned);
  std::vector<EntityId> unassigned(order);  // kept in frequency order
  std::vector<std::pair<double, EntityId>> ranked;
  std::vector<std::vector<TokenId>> bucket_constraints;
  TokenId bucket = 0;

  for (EntityId seed : order) {
    if (forward[seed] != kUnassigned) continue;
    forward[seed] = bucket;
    std::vector<TokenId> member_constraints;
    if (constraint) member_constraints.push_back((*constraint)[seed]);

    ranked.clear();
    const double* sv = unit.data() + std::size_t{seed} * dim;
    for (EntityId c : unassigned) {
      if (forward[c] != kUnassigned) continue;
      const double* cv = unit.data() + std::size_t{c} * dim;
      double dot = 0.0;
      for (std::uint32_t k = 0; k < dim; ++k) dot += sv[k] * cv[k];
      ranked.emplace_back(dot, c);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });

    // The scan covers every unassigned entity, so it is also the fallback pool.
    const std::uint32_t wanted = std::min<std::uint32_t>(alpha - 1, static_cast<std::uint32_t>(ranked.size()));
    std::uint32_t added = 0;
    for (const auto& [sim, c] : ranked) {
      if (added == wanted) break;
      if (constraint) {
        const TokenId ct = (*constraint)[c];
        if (std::find(member_constraints.begin(), member_constraints.end(), ct) !=
            member_constraints.end()) {
          continue;
        }
        member_constraints.push_back(ct);
      }
      forward[c] = bucket;
      ++added;
    }
    // Leftovers that clash with this bucket trade places with a member of an
    // earlier bucket that fits here.
    auto has = [](const std::vector<TokenId>& v, TokenId t) { return std::find(v.begin(), v.end(), t) != v.end(); };
    for (const auto& [sim, u] : ranked) {
      if (added == wanted) break;
      if (forward[u] != kUnassigned) continue;
      const TokenId cu = (*constraint)[u];
      for (EntityId v : order) {
        const TokenId bv = forward[v];
        if (bv == kUnassigned || bv == bucket) continue;
        const TokenId cv = (*constraint)[v];
        if (has(member_constraints, cv)) continue;
        auto& other = bucket_constraints[bv];
        if (cu != cv && has(other, cu)) continue;
        *std::find(other.begin(), other.end(), cv) = cu;
        member_constraints.push_back(cv);
        forward[u] = bv;
        forward[v] = bucket;
        ++added;
        break;
      }
    }
    if (added < wanted) {
      throw InfeasibleSchemeError("coherent bucket " + std::to_string(bucket) + " (seed entity " +
                                  std::to_string(seed) + ") can only be filled to " +
                                  std::to_string(added + 1) + " of " + std::to_string(alpha) +
                                  " entities under the constraint");
    }
    bucket_constraints.push_back(std::move(member_constraints));
    std::erase_if(unassigned, [&](EntityId c) { return forward[c] != kUnassigned; });
    ++bucket;
  }
  return forward;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file " + path.string());
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number");
    if (row.empty()) continue;
    if (table.rows == 0) table.dim = static_cast<std::uint32_t>(row.size());
    if (row.size() != table.dim) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(table.dim) + " values");
    }
    table.values.insert(table.values.end(), row.begin(), row.end());
    ++table.rows;
  }
  return table;
}

std::vector<std::uint8_t> serialize_scheme(const HashScheme& scheme) {
  io::Writer w(kSchemeMagic, kSchemeVersion);
  w.u32(scheme.vocab_size());
  w.u32(scheme.num_functions());
  w.u32(scheme.alpha());
  w.u32(scheme.hash_size());
  w.u32(scheme.num_specials());
  for (const auto& s : scheme.spec().specials) w.str(s);
  for (std::uint32_t j = 0; j < scheme.num_functions(); ++j) w.u32_array(scheme.forward(j));
  return std::move(w).finish();
}

void save_scheme(const HashScheme& scheme, const std::filesystem::path& path) {
  io::write_file(path, serialize_scheme(scheme));
}

HashScheme deserialize_scheme(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes), kSchemeMagic, kSchemeVersion, "hash scheme");
  VocabSpec spec;
  spec.size = r.u32();
  const std::uint32_t m = r.u32();
  const std::uint32_t alpha = r.u32();
  const std::uint32_t hash_size = r.u32();
  const std::uint32_t n_specials = r.u32();
  if (m == 0 || m > 64 || alpha == 0 || hash_size != hash_size_for(spec.size, alpha)) {
    throw IoError("hash scheme: inconsistent header");
  }
  for (std::uint32_t i = 0; i < n_specials; ++i) spec.specials.push_back(r.str());
  std::vector<std::vector<TokenId>> forward(m, std::vector<TokenId>(spec.size));
  for (auto& f : forward) r.u32_array(f);
  r.expect_end();
  try {
    return HashScheme::from_functions(std::move(spec), alpha, std::move(forward));
  } catch (const Error& e) {
    throw IoError(std::string("hash scheme: invalid content: ") + e.what());
  }
}

HashScheme load_scheme(const std::filesystem::path& path) {
  return deserialize_scheme(io::read_file(path));
}

}  // namespace superbloom
