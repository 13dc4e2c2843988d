#include "superbloom/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "superbloom/binary_io.hpp"
#include "superbloom/error.hpp"

namespace superbloom {

namespace {

constexpr std::string_view kPredictionMagic = "SBPR";
constexpr std::uint32_t kPredictionVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_prediction(const PositionPrediction& p, const HashScheme& scheme) {
  if (p.m != scheme.num_functions() || p.hash_size != scheme.hash_size() ||
      p.probs.size() != std::size_t{p.m} * p.hash_size) {
    throw InvalidArgument("prediction shape does not match the hash scheme");
  }
}

struct Scored {
  double score;
  EntityId id;
};

bool before(const Scored& a, const Scored& b) { return ranks_before(a.score, a.id, b.score, b.id); }

// Scores ids with a reusable coordinate buffer.
class Scorer {
 public:
  Scorer(const ScoreFunction& score, const PositionPrediction& prediction, const HashScheme& scheme)
      : score_(score), prediction_(prediction), scheme_(scheme), rho_(scheme.num_functions()) {}

  double operator()(EntityId id) {
    for (std::uint32_t j = 0; j < rho_.size(); ++j) {
      rho_[j] = prediction_.probs[std::size_t{j} * prediction_.hash_size + scheme_.local_token(j, id)];
    }
    return score_(rho_);
  }

 private:
  const ScoreFunction& score_;
  const PositionPrediction& prediction_;
  const HashScheme& scheme_;
  std::vector<double> rho_;
};

void keep_top(std::vector<Scored>& best, std::uint32_t k) {
  const auto keep = std::min<std::size_t>(k, best.size());
  std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(keep), best.end(), before);
  best.resize(keep);
}

RankedResult to_result(const std::vector<Scored>& best) {
  RankedResult r;
  for (const auto& s : best) {
    r.items.push_back(s.id);
    r.scores.push_back(s.score);
  }
  return r;
}

}  // namespace

ScoreFunction ScoreFunction::custom(Fn fn, bool strict) {
  if (!fn) throw InvalidArgument("custom score function is empty");
  ScoreFunction f(Kind::kCustom);
  f.fn_ = std::move(fn);
  f.strict_ = strict;
  return f;
}

ScoreFunction ScoreFunction::parse(std::string_view name) {
  if (name == "log_sum") return log_sum();
  if (name == "min") return min();
  if (name == "max") return max();
  throw ConfigError("unknown score function '" + std::string(name) + "' (expected log_sum, min or max)");
}

std::string ScoreFunction::name() const {
  switch (kind_) {
    case Kind::kLogSum: return "log_sum";
    case Kind::kMin: return "min";
    case Kind::kMax: return "max";
    case Kind::kCustom: return "custom";
  }
  return "custom";
}

double ScoreFunction::operator()(std::span<const double> rho) const {
  switch (kind_) {
    case Kind::kLogSum: {
      double sum = 0.0;
      for (double p : rho) {
        if (!(p > 0.0)) return kNegInf;
        sum += std::log(p);
      }
      return sum;
    }
    case Kind::kMin: return *std::min_element(rho.begin(), rho.end());
    case Kind::kMax: return *std::max_element(rho.begin(), rho.end());
    case Kind::kCustom: return fn_(rho);
  }
  return kNegInf;
}

void BeamParams::validate() const {
  if (beam_width == 0 || max_iterations == 0 || k == 0) {
    throw InvalidArgument("beam width, iteration count and k must be at least 1");
  }
}

double gamma(const ScoreFunction& score, const PositionPrediction& prediction,
             const HashScheme& scheme, EntityId id) {
  check_prediction(prediction, scheme);
  if (id >= scheme.vocab_size()) throw InvalidArgument("entity id out of range");
  return Scorer(score, prediction, scheme)(id);
}

RankedResult exhaustive_rank(const ScoreFunction& score, const PositionPrediction& prediction,
                             const HashScheme& scheme, std::uint32_t k) {
  check_prediction(prediction, scheme);
  if (k == 0 || k > scheme.vocab_size()) throw InvalidArgument("exhaustive_rank needs 1 <= k <= N");
  Scorer scorer(score, prediction, scheme);
  std::vector<Scored> all(scheme.vocab_size());
  for (EntityId s = 0; s < scheme.vocab_size(); ++s) all[s] = {scorer(s), s};
  keep_top(all, k);
  auto result = to_result(all);
  result.exact = true;
  result.candidates_scored = scheme.vocab_size();
  result.iterations_used = 0;
  return result;
}

RankedResult beam_search(const ScoreFunction& score, const PositionPrediction& prediction,
                         const HashScheme& scheme, const BeamParams& params) {
  params.validate();
  check_prediction(prediction, scheme);
  const std::uint32_t m = scheme.num_functions();
  const std::uint32_t hash_size = scheme.hash_size();
  const std::uint32_t n = scheme.vocab_size();

  std::vector<std::vector<TokenId>> order(m);
  for (std::uint32_t j = 0; j < m; ++j) {
    const auto p = prediction.function(j);
    order[j].resize(hash_size);
    std::iota(order[j].begin(), order[j].end(), TokenId{0});
    std::sort(order[j].begin(), order[j].end(),
              [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  }

  Scorer scorer(score, prediction, scheme);
  std::vector<std::uint32_t> expanded(m, 0);  // sorted prefix already turned into candidates
  std::vector<EntityId> scored;               // ascending
  std::vector<EntityId> fresh;
  std::vector<EntityId> merged;
  std::vector<Scored> best;
  std::vector<double> threshold(m);
  RankedResult result;
  bool exact = false;

  for (std::uint32_t it = 1; it <= params.max_iterations; ++it) {
    const std::uint64_t b = std::min<std::uint64_t>(std::uint64_t{it} * params.beam_width, hash_size);
    fresh.clear();
    for (std::uint32_t j = 0; j < m; ++j) {
      const auto p = prediction.function(j);
      threshold[j] = p[order[j][b - 1]];
      auto& e = expanded[j];
      while (e < hash_size && (e < b || p[order[j][e]] >= threshold[j])) {
        const auto ids = scheme.inverse_lookup(j, order[j][e]);
        fresh.insert(fresh.end(), ids.begin(), ids.end());
        ++e;
      }
    }
    std::sort(fresh.begin(), fresh.end());
    fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
    merged.clear();
    std::size_t before_count = best.size();
    auto it_scored = scored.begin();
    for (EntityId s : fresh) {
      while (it_scored != scored.end() && *it_scored < s) merged.push_back(*it_scored++);
      if (it_scored != scored.end() && *it_scored == s) {
        merged.push_back(*it_scored++);
        continue;
      }
      merged.push_back(s);
      best.push_back({scorer(s), s});
    }
    merged.insert(merged.end(), it_scored, scored.end());
    scored.swap(merged);
    if (best.size() != before_count) keep_top(best, params.k);
    result.iterations_used = it;

    const bool everything = scored.size() == n;
    if (everything) {
      exact = true;
      break;
    }
    if (best.size() == std::min<std::size_t>(params.k, n)) {
      const double bound = score(threshold);
      const double kth = best.back().score;
      if (kth > bound || (score.strict() && kth == bound)) {
        exact = true;
        break;
      }
    }
    if (b == hash_size) break;
  }

  const auto iterations = result.iterations_used;
  result = to_result(best);
  result.exact = exact;
  result.candidates_scored = scored.size();
  result.iterations_used = iterations;
  return result;
}

void save_predictions(std::span<const PositionPrediction> predictions,
                      std::uint64_t scheme_fingerprint, const std::filesystem::path& path) {
  io::Writer w(kPredictionMagic, kPredictionVersion);
  w.u64(scheme_fingerprint);
  w.u32(static_cast<std::uint32_t>(predictions.size()));
  for (const auto& p : predictions) {
    w.u32(p.position);
    w.u32(p.m);
    w.u32(p.hash_size);
    if (p.probs.size() != std::size_t{p.m} * p.hash_size) {
      throw InvalidArgument("prediction probability count does not match its shape");
    }
    for (double v : p.probs) w.f64(v);
  }
  io::write_file(path, std::move(w).finish());
}

std::vector<PositionPrediction> load_predictions(const std::filesystem::path& path,
                                                 std::uint64_t scheme_fingerprint) {
  io::Reader r(io::read_file(path), kPredictionMagic, kPredictionVersion,
               "prediction file " + path.string());
  const auto fp = r.u64();
  if (fp != scheme_fingerprint) {
    throw ConfigError("prediction file " + path.string() + " belongs to a different hash scheme");
  }
  std::vector<PositionPrediction> out(r.u32());
  for (auto& p : out) {
    p.position = r.u32();
    p.m = r.u32();
    p.hash_size = r.u32();
    p.probs.resize(std::size_t{p.m} * p.hash_size);
    for (double& v : p.probs) v = r.f64();
  }
  r.expect_end();
  return out;
}

std::string format_ranked(std::size_t query, const RankedResult& result) {
  std::ostringstream os;
  char buf[64];
  for (std::size_t i = 0; i < result.items.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", result.scores[i]);
    os << query << ' ' << i + 1 << ' ' << result.items[i] << ' ' << buf << ' '
       << (result.exact ? "exact" : "approx") << '\n';
  }
  return os.str();
}

}  // namespace superbloom
