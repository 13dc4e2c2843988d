#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "superbloom/error.hpp"
#include "superbloom/inference.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace superbloom;

namespace {

HashScheme scheme_of(std::uint32_t n, std::uint32_t m, std::uint32_t alpha, std::uint64_t seed) {
  return build_random_scheme(VocabSpec{n, default_specials()}, m, alpha, seed);
}

// Full ranking by brute force, independent of exhaustive_rank.
std::vector<EntityId> brute_order(const PositionPrediction& p, const HashScheme& s, const ScoreFunction& f) {
  std::vector<std::pair<double, EntityId>> all;
  for (EntityId id = 0; id < s.vocab_size(); ++id) {
    std::vector<double> rho;
    for (std::uint32_t j = 0; j < s.num_functions(); ++j) rho.push_back(p.function(j)[s.forward(j)[id]]);
    all.push_back({-f(rho), id});
  }
  std::sort(all.begin(), all.end());
  std::vector<EntityId> out;
  for (const auto& [_, id] : all) out.push_back(id);
  return out;
}

// Probabilities quantized to a few levels so that ties are common.
PositionPrediction coarse_prediction(const HashScheme& s, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  PositionPrediction p{0, s.num_functions(), s.hash_size(), {}};
  for (std::uint32_t j = 0; j < p.m; ++j) {
    std::vector<double> w(p.hash_size);
    double z = 0.0;
    for (double& v : w) z += (v = static_cast<double>(1 + gen() % 4));
    for (double v : w) p.probs.push_back(v / z);
  }
  return p;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("score functions") {
  const std::vector<double> rho{0.5, 0.25};
  CHECK(ScoreFunction::log_sum()(rho) == doctest::Approx(std::log(0.125)));
  CHECK(ScoreFunction::log_sum()(rho) == doctest::Approx(-2.0794).epsilon(1e-4));
  CHECK(ScoreFunction::min()(rho) == 0.25);
  CHECK(ScoreFunction::max()(rho) == 0.5);
  CHECK(ScoreFunction::log_sum()(std::vector<double>{0.0, 0.5}) == -INFINITY);
  CHECK(ScoreFunction::parse("min").kind() == ScoreFunction::Kind::kMin);
  CHECK(ScoreFunction::parse("log_sum").name() == "log_sum");
  CHECK_THROWS_AS(ScoreFunction::parse("median"), ConfigError);
  const auto sum = ScoreFunction::custom([](std::span<const double> r) { return r[0] + r[1]; }, true);
  CHECK(sum(rho) == 0.75);
  CHECK(sum.strict());
  CHECK_FALSE(ScoreFunction::custom([](std::span<const double> r) { return r[0]; }).strict());
}

TEST_CASE("gamma reads the hashed coordinates") {
  const auto s = HashScheme::from_functions(VocabSpec{4, {}}, 2, {{0, 0, 1, 1}, {0, 1, 0, 1}});
  // Function 1: bucket 0 at 0.8; function 2: bucket 1 at 0.3.
  PositionPrediction p{0, 2, 2, {0.8, 0.2, 0.7, 0.3}};
  CHECK(gamma(ScoreFunction::min(), p, s, 1) == 0.3);
  CHECK(gamma(ScoreFunction::max(), p, s, 1) == 0.8);
  CHECK(gamma(ScoreFunction::min(), p, s, 2) == 0.2);
  CHECK(gamma(ScoreFunction::log_sum(), p, s, 0) == doctest::Approx(std::log(0.8) + std::log(0.7)));
}

TEST_CASE("uniform distributions tie everything, broken by id") {
  const auto s = scheme_of(100, 2, 10, 2);
  PositionPrediction p{0, 2, 10, std::vector<double>(20, 0.1)};
  const auto r = exhaustive_rank(ScoreFunction::log_sum(), p, s, 100);
  std::vector<EntityId> ids(100);
  std::iota(ids.begin(), ids.end(), 0u);
  CHECK(r.items == ids);
  const auto b = beam_search(ScoreFunction::log_sum(), p, s, {3, BeamParams::kUnbounded, 5});
  CHECK(b.items == std::vector<EntityId>{0, 1, 2, 3, 4});
  CHECK(b.exact);
}

TEST_CASE("identity hashing ranks by the single distribution") {
  const auto s = HashScheme::from_functions(VocabSpec{5, {}}, 1, {{3, 0, 4, 1, 2}});
  PositionPrediction p{0, 1, 5, {0.1, 0.3, 0.05, 0.4, 0.15}};
  const auto r = exhaustive_rank(ScoreFunction::log_sum(), p, s, 5);
  // p at ids 0..4: 0.4, 0.1, 0.15, 0.3, 0.05
  CHECK(r.items == std::vector<EntityId>{0, 3, 2, 1, 4});
}

TEST_CASE("exhaustive rank is the brute-force order") {
  const auto s = scheme_of(1000, 2, 10, 3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = oracle::random_prediction(s, 2.0, seed);
    for (const auto& f : {ScoreFunction::log_sum(), ScoreFunction::min(), ScoreFunction::max()}) {
      const auto r = exhaustive_rank(f, p, s, 20);
      const auto want = brute_order(p, s, f);
      CHECK(r.items == std::vector<EntityId>(want.begin(), want.begin() + 20));
      CHECK(r.exact);
      CHECK(r.candidates_scored == 1000);
    }
  }
  const auto p = oracle::random_prediction(s, 1.0, 9);
  auto all = exhaustive_rank(ScoreFunction::log_sum(), p, s, 1000).items;
  std::sort(all.begin(), all.end());
  std::vector<EntityId> ids(1000);
  std::iota(ids.begin(), ids.end(), 0u);
  CHECK(all == ids);
  CHECK_THROWS_AS(exhaustive_rank(ScoreFunction::log_sum(), p, s, 1001), InvalidArgument);
}

TEST_CASE("full beam certifies in one iteration") {
  const auto s = scheme_of(1000, 2, 10, 4);
  const auto p = oracle::random_prediction(s, 2.0, 1);
  const auto r = beam_search(ScoreFunction::log_sum(), p, s, {s.hash_size(), 1, 1});
  CHECK(r.exact);
  CHECK(r.candidates_scored == 1000);
  CHECK(r.items == exhaustive_rank(ScoreFunction::log_sum(), p, s, 1).items);
}

TEST_CASE("unbounded beam equals the exhaustive ranking, ties included") {
  std::mt19937_64 gen(17);
  int checked = 0;
  for (std::uint32_t alpha : {5u, 10u, 20u}) {
    for (std::uint32_t k : {1u, 10u}) {
      for (int rep = 0; rep < 6; ++rep) {
        const auto s = scheme_of(1000, 2, alpha, gen());
        const auto p = rep % 2 ? coarse_prediction(s, gen()) : oracle::random_prediction(s, 1.5, gen());
        for (const auto& f : {ScoreFunction::log_sum(), ScoreFunction::min(), ScoreFunction::max()}) {
          const auto want = exhaustive_rank(f, p, s, k);
          const auto got = beam_search(f, p, s, {k, BeamParams::kUnbounded, k});
          CHECK(got.exact);
          CHECK(got.items == want.items);
          CHECK(got.scores == want.scores);
          ++checked;
        }
      }
    }
  }
  CHECK(checked == 108);
}

TEST_CASE("certificates are never false") {
  std::mt19937_64 gen(23);
  int exact = 0, approx = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const auto s = scheme_of(200 + static_cast<std::uint32_t>(gen() % 800), 2 + rep % 2, 10, gen());
    const auto p = rep % 3 == 0 ? coarse_prediction(s, gen()) : oracle::random_prediction(s, 2.0, gen());
    for (const auto& f : {ScoreFunction::log_sum(), ScoreFunction::min(), ScoreFunction::max()}) {
      for (std::uint32_t iters : {1u, 2u}) {
        const auto r = beam_search(f, p, s, {2, iters, 3});
        CHECK(oracle::certificate_check(r, p, s, f));
        (r.exact ? exact : approx)++;
      }
    }
  }
  CHECK(exact > 0);
  CHECK(approx > 0);
}

TEST_CASE("weakly increasing custom scores certify only on a margin") {
  const auto capped = ScoreFunction::custom([](std::span<const double> r) { return std::min(r[0], 0.3); });
  const auto s = HashScheme::from_functions(VocabSpec{4, {}}, 2, {{1, 1, 0, 0}, {1, 0, 1, 0}});
  PositionPrediction p{0, 2, 2, {0.6, 0.4, 0.9, 0.1}};
  // Every id scores 0.3; id 0 is the only one left unscored at B=1.
  const auto r = beam_search(capped, p, s, {1, 1, 1});
  CHECK(r.candidates_scored == 3);
  CHECK(r.items == std::vector<EntityId>{1});
  CHECK_FALSE(r.exact);
  CHECK(exhaustive_rank(capped, p, s, 1).items == std::vector<EntityId>{0});
  const auto unbounded = beam_search(capped, p, s, {1, BeamParams::kUnbounded, 1});
  CHECK(unbounded.exact);
  CHECK(unbounded.items == std::vector<EntityId>{0});
}

TEST_CASE("two-function picture: one iteration versus two") {
  // Search for the two situations: the level set of the best score clears
  // the unscored region (certified at once) and a case where it does not.
  std::mt19937_64 gen(31);
  bool one = false, two = false;
  for (int rep = 0; rep < 500 && !(one && two); ++rep) {
    const auto s = scheme_of(64, 2, 4, gen());
    const auto p = oracle::random_prediction(s, 1.0, gen());
    const auto f = ScoreFunction::log_sum();
    const auto r1 = beam_search(f, p, s, {2, 1, 1});
    const auto truth = exhaustive_rank(f, p, s, 1);
    if (r1.exact) {
      CHECK(r1.items == truth.items);
      CHECK(r1.iterations_used == 1);
      one = true;
      continue;
    }
    const auto r2 = beam_search(f, p, s, {2, 2, 1});
    if (r2.exact && r2.iterations_used == 2) {
      CHECK(r2.items == truth.items);
      CHECK(r2.candidates_scored > r1.candidates_scored);
      // The bound after one round is not beaten by the round-one winner.
      std::vector<double> second(2);
      for (std::uint32_t j = 0; j < 2; ++j) {
        std::vector<double> q(p.function(j).begin(), p.function(j).end());
        std::sort(q.begin(), q.end(), std::greater<>());
        second[j] = q[1];
      }
      CHECK(r1.scores[0] <= f(second));
      two = true;
    }
  }
  CHECK(one);
  CHECK(two);
}

TEST_CASE("work bound for one iteration") {
  const auto s = scheme_of(5000, 2, 20, 8);
  const auto p = oracle::random_prediction(s, 3.0, 4);
  const auto r = beam_search(ScoreFunction::log_sum(), p, s, {5, 1, 1});
  CHECK(r.candidates_scored <= 2u * 5u * 20u);
  CHECK(r.iterations_used == 1);
}

TEST_CASE("prediction validation") {
  const auto s = scheme_of(100, 2, 10, 1);
  PositionPrediction bad{0, 2, 9, std::vector<double>(18, 1.0 / 9)};
  CHECK_THROWS_AS(exhaustive_rank(ScoreFunction::log_sum(), bad, s, 1), InvalidArgument);
  CHECK_THROWS_AS(beam_search(ScoreFunction::log_sum(), oracle::random_prediction(s, 1, 1), s, {0, 1, 1}),
                  InvalidArgument);
  CHECK_THROWS_AS(beam_search(ScoreFunction::log_sum(), oracle::random_prediction(s, 1, 1), s, {1, 0, 1}),
                  InvalidArgument);
}

TEST_CASE("prediction files") {
  TempDir dir;
  const auto s = scheme_of(100, 2, 10, 1);
  std::vector<PositionPrediction> preds{oracle::random_prediction(s, 1, 1), oracle::random_prediction(s, 1, 2)};
  preds[1].position = 3;
  save_predictions(preds, s.fingerprint(), dir / "p.sbpr");
  const auto back = load_predictions(dir / "p.sbpr", s.fingerprint());
  REQUIRE(back.size() == 2);
  CHECK(back[1].position == 3);
  CHECK(back[0].probs == preds[0].probs);
  CHECK_THROWS_AS(load_predictions(dir / "p.sbpr", s.fingerprint() ^ 1), ConfigError);
  CHECK_THROWS_AS(load_predictions(dir / "none.sbpr", s.fingerprint()), IoError);
}

TEST_CASE("ranked output lines") {
  RankedResult r;
  r.items = {7, 2};
  r.scores = {-1.5, -2.25};
  r.exact = true;
  CHECK(format_ranked(4, r) == "4 1 7 -1.5 exact\n4 2 2 -2.25 exact\n");
}

}  // TEST_SUITE
