#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "superbloom/error.hpp"
#include "superbloom/hashing.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace superbloom;

namespace {

VocabSpec vocab(std::uint32_t n) { return VocabSpec{n, default_specials()}; }

std::vector<std::size_t> bucket_sizes(const HashScheme& s, std::uint32_t j) {
  std::vector<std::size_t> sizes(s.hash_size());
  for (std::uint32_t id = 0; id < s.vocab_size(); ++id) ++sizes[s.forward(j)[id]];
  return sizes;
}

// Greedy coherent construction written out directly: visit by frequency,
// each opener takes its alpha-1 most similar free neighbours.
std::vector<TokenId> greedy_oracle(const std::vector<std::vector<double>>& x, std::uint32_t alpha) {
  const std::size_t n = x.size();
  auto cosine = [&](std::size_t a, std::size_t b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < x[a].size(); ++c) {
      ab += x[a][c] * x[b][c];
      aa += x[a][c] * x[a][c];
      bb += x[b][c] * x[b][c];
    }
    return ab / std::sqrt(aa * bb);
  };
  std::vector<TokenId> out(n, ~TokenId{0});
  TokenId next = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (out[s] != ~TokenId{0}) continue;
    out[s] = next;
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t t = 0; t < n; ++t) {
      if (out[t] == ~TokenId{0}) cand.push_back({-cosine(s, t), t});
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t i = 0; i + 1 < alpha && i < cand.size(); ++i) out[cand[i].second] = next;
    ++next;
  }
  return out;
}

}  // namespace

TEST_SUITE("hashing") {

TEST_CASE("hash size arithmetic") {
  CHECK(hash_size_for(5'300'000, 50) == 106'000);
  CHECK(2 * hash_size_for(5'300'000, 50) == 212'000);
  CHECK(hash_size_for(1000, 20) == 50);
  CHECK(hash_size_for(1001, 20) == 51);
}

TEST_CASE("six ids, alpha three") {
  // Each function alone: two buckets of three.
  for (std::uint64_t seed : {1, 2, 3, 99}) {
    const auto f = random_function(6, 3, seed);
    REQUIRE(f.size() == 6);
    std::vector<int> sizes(2);
    for (TokenId t : f) ++sizes.at(t);
    CHECK(sizes == std::vector<int>{3, 3});
  }
  // Two such functions give only four digests for six ids.
  CHECK_THROWS_AS(build_random_scheme(vocab(6), 2, 3, 1), InfeasibleSchemeError);
  // With three functions the digests suffice.
  const auto s = build_random_scheme(vocab(6), 3, 3, 1);
  CHECK(s.hash_size() == 2);
  for (std::uint32_t j = 0; j < 3; ++j) {
    for (TokenId t = 0; t < 2; ++t) {
      const auto ids = s.inverse_lookup(j, t);
      CHECK(ids.size() == 3);
      for (EntityId id : ids) CHECK(s.local_token(j, id) == t);
    }
    for (EntityId id = 0; id < 6; ++id) CHECK(s.hash_entity(id)[j] == s.global_token(j, s.forward(j)[id]));
  }
  CHECK(oracle::complete_collisions(s) == 0);
}

TEST_CASE("no complete collisions on eight ids") {
  const auto s = build_random_scheme(vocab(8), 2, 2, 7);
  CHECK(oracle::complete_collisions(s) == 0);
}

TEST_CASE("random schemes: balanced, partitioned, collision free") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 25; ++trial) {
    const auto n = static_cast<std::uint32_t>(20 + gen() % 2000);
    const auto m = static_cast<std::uint32_t>(2 + gen() % 3);
    auto alpha = static_cast<std::uint32_t>(1 + gen() % 30);
    // Keep hash_size^m comfortably above n.
    while (std::pow(static_cast<double>(hash_size_for(n, alpha)), m) < 2.0 * n) --alpha;
    const auto s = build_random_scheme(vocab(n), m, alpha, gen());
    for (std::uint32_t j = 0; j < m; ++j) {
      const auto sizes = bucket_sizes(s, j);
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      CHECK(*hi - *lo <= 1);
      CHECK(*hi <= alpha);
      CHECK(*lo >= 1);
      std::vector<EntityId> all;
      for (TokenId t = 0; t < s.hash_size(); ++t) {
        const auto ids = s.inverse_lookup(j, t);
        CHECK(std::is_sorted(ids.begin(), ids.end()));
        all.insert(all.end(), ids.begin(), ids.end());
      }
      std::sort(all.begin(), all.end());
      std::vector<EntityId> expect(n);
      std::iota(expect.begin(), expect.end(), 0u);
      CHECK(all == expect);
    }
    CHECK(oracle::complete_collisions(s) == 0);
  }
}

TEST_CASE("id 17 sits in exactly one bucket per function") {
  const auto s = build_random_scheme(vocab(1000), 2, 20, 3);
  for (std::uint32_t j = 0; j < 2; ++j) {
    int hits = 0;
    for (TokenId t = 0; t < s.hash_size(); ++t) {
      const auto ids = s.inverse_lookup(j, t);
      hits += static_cast<int>(std::count(ids.begin(), ids.end(), 17u));
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("alpha one gives disjoint relabelings") {
  const auto s = build_random_scheme(vocab(50), 2, 1, 4);
  CHECK(s.hash_size() == 50);
  for (std::uint32_t j = 0; j < 2; ++j) {
    std::set<TokenId> seen;
    for (EntityId id = 0; id < 50; ++id) {
      const TokenId g = s.hash_entity(id)[j];
      CHECK(g >= j * 50);
      CHECK(g < (j + 1) * 50);
      seen.insert(g);
    }
    CHECK(seen.size() == 50);
  }
}

TEST_CASE("special tokens live past the ordinary range") {
  const auto s = build_random_scheme(vocab(100), 2, 10, 1);
  const auto mask = s.hash_special("MASK");
  REQUIRE(mask.size() == 2);
  CHECK(mask[0] != mask[1]);
  for (TokenId t : mask) {
    CHECK(t >= s.ordinary_tokens());
    CHECK(t < s.total_tokens());
  }
  CHECK(s.total_tokens() == 2 * 10 + 2 * 3);
  CHECK_FALSE(s.special_index("NOPE").has_value());
  CHECK_THROWS_AS(s.hash_special("NOPE"), InvalidArgument);
}

TEST_CASE("infeasible parameters are rejected") {
  CHECK_THROWS_AS(build_random_scheme(vocab(1000), 2, 2000, 1), InfeasibleSchemeError);
  CHECK_THROWS_AS(build_random_scheme(vocab(100), 1, 2, 1), InfeasibleSchemeError);
  CHECK_THROWS_AS(build_random_scheme(vocab(0), 2, 2, 1), InvalidArgument);
  CHECK_THROWS_AS(build_random_scheme(vocab(10), 0, 2, 1), InvalidArgument);
  CHECK_THROWS_AS(HashScheme::from_functions(vocab(4), 2, {{0, 0, 1, 1}, {0, 0, 1, 1}}),
                  InfeasibleSchemeError);
  CHECK_THROWS_AS(HashScheme::from_functions(vocab(4), 2, {{0, 0, 0, 1}, {0, 1, 0, 1}}),
                  InfeasibleSchemeError);
}

TEST_CASE("same seed, same scheme; different seed, different scheme") {
  const auto a = build_random_scheme(vocab(500), 2, 10, 8);
  const auto b = build_random_scheme(vocab(500), 2, 10, 8);
  const auto c = build_random_scheme(vocab(500), 2, 10, 9);
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK_FALSE(a == c);
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("random_function buckets") {
  const auto f = random_function(103, 10, 1);
  std::vector<int> sizes(hash_size_for(103, 10));
  for (TokenId t : f) ++sizes.at(t);
  CHECK(*std::max_element(sizes.begin(), sizes.end()) == 10);
  CHECK(*std::min_element(sizes.begin(), sizes.end()) == 9);
}

TEST_CASE("serialization round trip and byte stability") {
  TempDir dir;
  const auto s = build_random_scheme(vocab(300), 3, 7, 2);
  save_scheme(s, dir / "a.sbhs");
  save_scheme(s, dir / "b.sbhs");
  CHECK(read_bytes(dir / "a.sbhs") == read_bytes(dir / "b.sbhs"));
  const auto back = load_scheme(dir / "a.sbhs");
  CHECK(back == s);
  for (std::uint32_t j = 0; j < 3; ++j) {
    CHECK(std::equal(back.forward(j).begin(), back.forward(j).end(), s.forward(j).begin()));
    for (TokenId t = 0; t < s.hash_size(); ++t) {
      const auto x = back.inverse_lookup(j, t);
      const auto y = s.inverse_lookup(j, t);
      CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
    }
  }

  auto bytes = serialize_scheme(s);
  SUBCASE("truncated") {
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(deserialize_scheme(bytes), IoError);
  }
  SUBCASE("flipped byte") {
    bytes[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(deserialize_scheme(bytes), IoError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(deserialize_scheme(bytes), IoError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_scheme(dir / "none.sbhs"), IoError); }
}

TEST_CASE("coherent: four points on a line") {
  // Cosine similarity of 1-d points is only a sign, so the line is drawn in 2-d.
  EmbeddingTable e2{4, 2, {1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0}};
  const std::vector<double> freq(4, 1.0);
  const auto first = build_coherent_function(e2, freq, 2);
  CHECK(first[0] == first[1]);
  CHECK(first[2] == first[3]);
  CHECK(first[0] != first[2]);

  const auto second = build_coherent_function(e2, freq, 2, std::span<const TokenId>(first));
  CHECK(second[0] != second[1]);
  CHECK(second[2] != second[3]);
  // The only pairings separating both constraint buckets.
  const bool a = second[0] == second[2] && second[1] == second[3];
  const bool b = second[0] == second[3] && second[1] == second[2];
  CHECK((a || b));
  CHECK_NOTHROW(HashScheme::from_functions(vocab(4), 2, {first, second}));
}

TEST_CASE("coherent: random unit vectors match the greedy oracle") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> x(100, std::vector<double>(6));
  EmbeddingTable e{100, 6, {}};
  for (auto& row : x) {
    double norm = 0.0;
    for (double& v : row) norm += (v = normal(gen)) * v;
    for (double& v : row) {
      v /= std::sqrt(norm);
      e.values.push_back(v);
    }
  }
  const std::vector<double> freq(100, 1.0);
  const auto got = build_coherent_function(e, freq, 10);
  CHECK(got == greedy_oracle(x, 10));
  std::vector<int> sizes(10);
  for (TokenId t : got) ++sizes.at(t);
  for (int s : sizes) CHECK(s == 10);
}

TEST_CASE("coherent: frequency decides the openers") {
  EmbeddingTable e{4, 2, {1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0}};
  const std::vector<double> freq{1.0, 1.0, 1.0, 9.0};
  const auto f = build_coherent_function(e, freq, 2);
  CHECK(f[3] == 0);
  CHECK(f[2] == 0);
}

TEST_CASE("embedding file loader") {
  TempDir dir;
  {
    std::ofstream out(dir / "e.txt");
    out << "1 2 3\n4 5 6\n";
  }
  const auto e = load_embeddings(dir / "e.txt");
  CHECK(e.rows == 2);
  CHECK(e.dim == 3);
  CHECK(e.row(1)[2] == 6.0);
  {
    std::ofstream out(dir / "bad.txt");
    out << "1 2 3\n4 5\n";
  }
  CHECK_THROWS(load_embeddings(dir / "bad.txt"));
}

}  // TEST_SUITE
