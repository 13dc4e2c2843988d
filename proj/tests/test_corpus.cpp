#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "superbloom/corpus.hpp"
#include "superbloom/error.hpp"
#include "superbloom/random.hpp"
#include "support/temp_dir.hpp"

using namespace superbloom;

namespace {

HashScheme small_scheme() { return build_random_scheme(VocabSpec{200, default_specials()}, 2, 10, 3); }

Page iota_page(std::uint32_t n) {
  Page p;
  p.entities.resize(n);
  std::iota(p.entities.begin(), p.entities.end(), 0u);
  return p;
}

// Pearson chi-square statistic against a uniform expectation.
double chi_square(const std::vector<double>& counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double expect = total / counts.size();
  double x = 0.0;
  for (double c : counts) x += (c - expect) * (c - expect) / expect;
  return x;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("parse and format") {
  const auto pages = parse_corpus("1 2 3\n\n4 5\n  6\t7 \n");
  REQUIRE(pages.size() == 3);
  CHECK(pages[0].entities == std::vector<EntityId>{1, 2, 3});
  CHECK(pages[2].entities == std::vector<EntityId>{6, 7});
  CHECK(format_corpus(pages) == "1 2 3\n4 5\n6 7\n");
  CHECK(parse_corpus(format_corpus(pages)).size() == 3);
}

TEST_CASE("parse errors carry the line") {
  try {
    parse_corpus("1 2\n3 x\n", {}, "c.txt");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("c.txt:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_corpus("1 2 300\n", 100), ConfigError);
  CHECK_THROWS_AS(parse_corpus("-1\n"), ConfigError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt"), IoError);
}

TEST_CASE("segments") {
  const Page five = iota_page(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(cut_segment(five, 32, seed) == five.entities);
  const Page hundred = iota_page(100);
  std::vector<double> starts(69);
  for (std::uint64_t seed = 0; seed < 10'000; ++seed) {
    const auto seg = cut_segment(hundred, 32, seed);
    REQUIRE(seg.size() == 32);
    REQUIRE(seg.front() <= 68);
    for (std::size_t i = 1; i < seg.size(); ++i) REQUIRE(seg[i] == seg[0] + i);
    ++starts[seg.front()];
  }
  // 68 degrees of freedom; the 0.999 quantile is about 111.
  CHECK(chi_square(starts) < 111.0);
}

TEST_CASE("masked count") {
  CHECK(masked_count(1, 0.15) == 1);
  CHECK(masked_count(3, 0.15) == 1);
  CHECK(masked_count(20, 0.15) == 3);
  CHECK(masked_count(32, 0.15) == 5);
}

TEST_CASE("training examples") {
  const auto scheme = small_scheme();
  const auto mask = scheme.hash_special("MASK");

  SUBCASE("single entity is always a target") {
    const std::vector<EntityId> seg{42};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto ex = make_masked_example(seg, scheme, 0.15, seed);
      CHECK(ex.num_targets() == 1);
      CHECK(ex.target_positions[0] == 0);
    }
  }

  SUBCASE("deterministic per seed") {
    const std::vector<EntityId> seg{4, 9, 2, 7};
    CHECK(make_masked_example(seg, scheme, 0.15, 5) == make_masked_example(seg, scheme, 0.15, 5));
  }

  SUBCASE("targets and inputs are consistent") {
    std::vector<EntityId> seg(20);
    std::iota(seg.begin(), seg.end(), 100u);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto ex = make_masked_example(seg, scheme, 0.15, seed);
      REQUIRE(ex.num_targets() == 3);
      CHECK(std::is_sorted(ex.target_positions.begin(), ex.target_positions.end()));
      CHECK(ex.targets.size() == 3 * 2);
      for (std::size_t t = 0; t < ex.num_targets(); ++t) {
        const auto pos = ex.target_positions[t];
        CHECK(ex.original_ids[t] == seg[pos]);
        for (std::uint32_t j = 0; j < 2; ++j) {
          CHECK(ex.targets[t * 2 + j] == scheme.local_token(j, seg[pos]));
          const TokenId in = ex.input.tokens[pos * 2 + j];
          switch (ex.perturbations[t]) {
            case Perturbation::kMask: CHECK(in == mask[j]); break;
            case Perturbation::kUnchanged: CHECK(in == scheme.hash_entity(seg[pos])[j]); break;
            case Perturbation::kRandom: CHECK(in < scheme.ordinary_tokens()); break;
          }
        }
      }
    }
  }
}

TEST_CASE("eval examples") {
  const auto scheme = small_scheme();
  const auto mask = scheme.hash_special("MASK");
  std::vector<EntityId> seg(8);
  std::iota(seg.begin(), seg.end(), 10u);
  std::vector<double> where(8);
  for (std::uint64_t seed = 0; seed < 10'000; ++seed) {
    const auto ex = make_eval_example(seg, scheme, seed);
    REQUIRE(ex.num_targets() == 1);
    const auto pos = ex.target_positions[0];
    REQUIRE(ex.input.tokens[pos * 2] == mask[0]);
    REQUIRE(ex.input.tokens[pos * 2 + 1] == mask[1]);
    REQUIRE(ex.perturbations[0] == Perturbation::kMask);
    ++where[pos];
  }
  // 7 degrees of freedom; the 0.999 quantile is about 24.3.
  CHECK(chi_square(where) < 24.3);
}

TEST_CASE("split") {
  std::vector<Page> pages;
  for (std::uint32_t i = 0; i < 10; ++i) pages.push_back(Page{{i}});
  const auto a = split_train_test(pages, 0.1, 4);
  CHECK(a.test.size() == 1);
  CHECK(a.train.size() == 9);
  std::set<EntityId> seen;
  for (const auto& p : a.train) seen.insert(p.entities[0]);
  for (const auto& p : a.test) CHECK(seen.insert(p.entities[0]).second);
  CHECK(seen.size() == 10);
  const auto b = split_train_test(pages, 0.1, 4);
  CHECK(b.test[0].entities == a.test[0].entities);
  CHECK_THROWS_AS(split_train_test(pages, 1.5, 4), InvalidArgument);
}

TEST_CASE("frequencies") {
  const auto pages = parse_corpus("0 1 1\n2 1\n");
  const auto f = entity_frequencies(pages, 4);
  CHECK(f == std::vector<double>{1, 3, 1, 0});
}

TEST_CASE("example cache round trip") {
  TempDir dir;
  const auto scheme = small_scheme();
  std::vector<MaskedExample> examples;
  for (std::uint64_t s = 0; s < 5; ++s) {
    std::vector<EntityId> seg{static_cast<EntityId>(s), 20, 30, 40};
    examples.push_back(make_masked_example(seg, scheme, 0.15, s));
  }
  save_examples(examples, scheme.fingerprint(), dir / "x.sbex");
  CHECK(load_examples(dir / "x.sbex", scheme.fingerprint()) == examples);
  CHECK_THROWS_AS(load_examples(dir / "x.sbex", scheme.fingerprint() + 1), ConfigError);
  auto bytes = read_bytes(dir / "x.sbex");
  bytes.resize(bytes.size() - 3);
  {
    std::ofstream out(dir / "y.sbex", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_examples(dir / "y.sbex", scheme.fingerprint()), IoError);
}

TEST_CASE("synthetic corpus") {
  SynthConfig c;
  c.entities = 5000;
  c.pages = 100;
  c.seed = 3;
  const auto pages = generate_synthetic_corpus(c);
  CHECK(pages.size() == 100);
  for (const auto& p : pages) {
    CHECK(p.entities.size() >= c.min_length);
    CHECK(p.entities.size() <= c.max_length);
  }
  CHECK(format_corpus(pages) == format_corpus(generate_synthetic_corpus(c)));
  c.seed = 4;
  CHECK(format_corpus(pages) != format_corpus(generate_synthetic_corpus(c)));
}

TEST_CASE("synthetic corpus follows its Zipf exponent") {
  for (double s : {0.8, 1.0}) {
    SynthConfig c;
    c.entities = 20000;
    c.pages = 20000;
    c.zipf_s = s;
    const auto pages = generate_synthetic_corpus(c);
    auto f = entity_frequencies(pages, c.entities);
    std::sort(f.begin(), f.end(), std::greater<>());
    // Least-squares slope of log count on log rank over ranks 10..2000.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t r = 10; r <= 2000; ++r) {
      if (f[r - 1] <= 0) continue;
      const double x = std::log(static_cast<double>(r));
      const double y = std::log(f[r - 1]);
      sx += x, sy += y, sxx += x * x, sxy += x * y, ++n;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(-slope == doctest::Approx(s).epsilon(0.10));
  }
}

}  // TEST_SUITE
