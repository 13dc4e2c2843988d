#include "superbloom/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "superbloom/binary_io.hpp"
#include "superbloom/error.hpp"
#include "superbloom/random.hpp"

namespace superbloom {

namespace {

constexpr std::string_view kExampleMagic = "SBEX";
constexpr std::uint32_t kExampleVersion = 1;

constexpr double kMaskProb = 0.8;
constexpr double kRandomProb = 0.1;

void append_entity_tokens(const HashScheme& scheme, EntityId id, std::vector<TokenId>& out) {
  const auto m = scheme.num_functions();
  const auto base = out.size();
  out.resize(base + m);
  scheme.hash_entity_into(id, std::span(out).subspan(base, m));
}

void set_position_tokens(BloomDigest& digest, std::uint32_t position, std::span<const TokenId> tokens) {
  std::copy(tokens.begin(), tokens.end(), digest.tokens.begin() + std::size_t{position} * digest.m);
}

void record_target(MaskedExample& ex, const HashScheme& scheme, std::uint32_t position,
                   EntityId id, Perturbation p) {
  ex.target_positions.push_back(position);
  ex.original_ids.push_back(id);
  ex.perturbations.push_back(p);
  for (std::uint32_t j = 0; j < scheme.num_functions(); ++j) {
    ex.targets.push_back(scheme.local_token(j, id));
  }
}

std::vector<TokenId> mask_tokens(const HashScheme& scheme) {
  if (!scheme.special_index("MASK")) throw InvalidArgument("scheme has no MASK special token");
  return scheme.hash_special("MASK");
}

// Index drawn from a cumulative weight table.
std::size_t draw(std::span<const double> cumulative, Rng& rng) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

}  // namespace

std::vector<Page> parse_corpus(const std::string& text, std::optional<std::uint32_t> vocab_size,
                               const std::string& source) {
  std::vector<Page> pages;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    Page page;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      std::uint64_t v = 0;
      const auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{} || (next < end && *next != ' ' && *next != '\t' && *next != '\r') ||
          v > std::numeric_limits<EntityId>::max()) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected a non-negative entity id");
      }
      if (vocab_size && v >= *vocab_size) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": entity id " + std::to_string(v) +
                      " exceeds vocabulary size " + std::to_string(*vocab_size));
      }
      page.entities.push_back(static_cast<EntityId>(v));
      p = next;
    }
    if (!page.entities.empty()) pages.push_back(std::move(page));
  }
  return pages;
}

std::vector<Page> load_corpus(const std::filesystem::path& path,
                              std::optional<std::uint32_t> vocab_size) {
  const auto bytes = io::read_file(path);
  return parse_corpus(std::string(bytes.begin(), bytes.end()), vocab_size, path.string());
}

std::string format_corpus(std::span<const Page> pages) {
  std::string out;
  char buf[16];
  for (const auto& page : pages) {
    for (std::size_t i = 0; i < page.entities.size(); ++i) {
      if (i) out.push_back(' ');
      const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, page.entities[i]);
      out.append(buf, p);
    }
    out.push_back('\n');
  }
  return out;
}

void save_corpus(std::span<const Page> pages, const std::filesystem::path& path) {
  io::write_text_file(path, format_corpus(pages));
}

std::vector<std::string> load_vocab_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    names.push_back(line);
  }
  return names;
}

CorpusSplit split_train_test(std::span<const Page> pages, double test_frac, std::uint64_t seed) {
  if (!(test_frac >= 0.0 && test_frac <= 1.0)) throw InvalidArgument("test_frac must lie in [0, 1]");
  std::vector<std::size_t> order(pages.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5917));
  rng.shuffle(std::span(order));
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(pages.size())));
  std::vector<bool> is_test(pages.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  CorpusSplit split;
  for (std::size_t i = 0; i < pages.size(); ++i) {
    (is_test[i] ? split.test : split.train).push_back(pages[i]);
  }
  return split;
}

std::vector<double> entity_frequencies(std::span<const Page> pages, std::uint32_t vocab_size) {
  std::vector<double> freq(vocab_size, 0.0);
  for (const auto& page : pages) {
    for (EntityId e : page.entities) {
      if (e >= vocab_size) throw InvalidArgument("entity id out of range in frequency count");
      freq[e] += 1.0;
    }
  }
  return freq;
}

std::vector<EntityId> cut_segment(const Page& page, std::uint32_t n_max, std::uint64_t seed) {
  if (page.entities.empty()) throw InvalidArgument("cannot cut a segment from an empty page");
  if (n_max == 0) throw InvalidArgument("segment length must be at least 1");
  const std::size_t len = std::min<std::size_t>(n_max, page.entities.size());
  const std::size_t starts = page.entities.size() - len + 1;
  Rng rng(seed);
  const std::size_t start = starts == 1 ? 0 : rng.below(starts);
  return {page.entities.begin() + static_cast<std::ptrdiff_t>(start),
          page.entities.begin() + static_cast<std::ptrdiff_t>(start + len)};
}

std::uint32_t masked_count(std::size_t n, double mask_rate) {
  const auto rounded = std::llround(mask_rate * static_cast<double>(n));
  return static_cast<std::uint32_t>(std::clamp<long long>(rounded, 1, static_cast<long long>(n)));
}

BloomDigest make_digest(std::span<const EntityId> segment, const HashScheme& scheme) {
  BloomDigest digest;
  digest.m = scheme.num_functions();
  digest.tokens.reserve(segment.size() * digest.m);
  for (EntityId id : segment) append_entity_tokens(scheme, id, digest.tokens);
  return digest;
}

MaskedExample make_masked_example(std::span<const EntityId> segment, const HashScheme& scheme,
                                  double mask_rate, std::uint64_t seed) {
  if (segment.empty()) throw InvalidArgument("cannot mask an empty segment");
  const auto mask = mask_tokens(scheme);
  MaskedExample ex;
  ex.input = make_digest(segment, scheme);

  Rng rng(seed);
  const std::uint32_t count = masked_count(segment.size(), mask_rate);
  std::vector<std::uint32_t> positions(segment.size());
  std::iota(positions.begin(), positions.end(), 0u);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::uint32_t>(rng.below(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(count);
  std::sort(positions.begin(), positions.end());

  std::vector<TokenId> replacement(scheme.num_functions());
  for (std::uint32_t pos : positions) {
    const double u = rng.uniform();
    Perturbation p;
    if (u < kMaskProb) {
      p = Perturbation::kMask;
      set_position_tokens(ex.input, pos, mask);
    } else if (u < kMaskProb + kRandomProb) {
      p = Perturbation::kRandom;
      const auto other = static_cast<EntityId>(rng.below(scheme.vocab_size()));
      scheme.hash_entity_into(other, replacement);
      set_position_tokens(ex.input, pos, replacement);
    } else {
      p = Perturbation::kUnchanged;
    }
    record_target(ex, scheme, pos, segment[pos], p);
  }
  return ex;
}

MaskedExample make_eval_example(std::span<const EntityId> segment, const HashScheme& scheme,
                                std::uint64_t seed) {
  if (segment.empty()) throw InvalidArgument("cannot mask an empty segment");
  MaskedExample ex;
  ex.input = make_digest(segment, scheme);
  Rng rng(seed);
  const auto pos = static_cast<std::uint32_t>(rng.below(segment.size()));
  set_position_tokens(ex.input, pos, mask_tokens(scheme));
  record_target(ex, scheme, pos, segment[pos], Perturbation::kMask);
  return ex;
}

std::vector<MaskedExample> make_eval_set(std::span<const Page> pages, const HashScheme& scheme,
                                         std::uint32_t n_max, std::uint64_t seed) {
  std::vector<MaskedExample> out;
  out.reserve(pages.size());
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const auto segment = cut_segment(pages[i], n_max, derive_seed(seed, i, 1));
    out.push_back(make_eval_example(segment, scheme, derive_seed(seed, i, 2)));
  }
  return out;
}

void save_examples(std::span<const MaskedExample> examples, std::uint64_t scheme_fingerprint,
                   const std::filesystem::path& path) {
  io::Writer w(kExampleMagic, kExampleVersion);
  w.u64(scheme_fingerprint);
  w.u64(examples.size());
  for (const auto& ex : examples) {
    w.u32(ex.input.m);
    w.u32(static_cast<std::uint32_t>(ex.input.tokens.size()));
    w.u32_array(ex.input.tokens);
    w.u32(static_cast<std::uint32_t>(ex.target_positions.size()));
    w.u32_array(ex.target_positions);
    w.u32_array(ex.targets);
    w.u32_array(ex.original_ids);
    for (auto p : ex.perturbations) w.u8(static_cast<std::uint8_t>(p));
  }
  io::write_file(path, std::move(w).finish());
}

std::vector<MaskedExample> load_examples(const std::filesystem::path& path,
                                         std::uint64_t expected_scheme_fingerprint) {
  io::Reader r(io::read_file(path), kExampleMagic, kExampleVersion, "example cache");
  if (r.u64() != expected_scheme_fingerprint) {
    throw ConfigError("example cache " + path.string() + " was built with a different hash scheme");
  }
  const std::uint64_t count = r.u64();
  std::vector<MaskedExample> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    MaskedExample ex;
    ex.input.m = r.u32();
    if (ex.input.m == 0) throw IoError("example cache: invalid m");
    ex.input.tokens.resize(r.u32());
    r.u32_array(ex.input.tokens);
    const std::uint32_t targets = r.u32();
    if (targets > ex.input.num_entities()) throw IoError("example cache: invalid target count");
    ex.target_positions.resize(targets);
    r.u32_array(ex.target_positions);
    ex.targets.resize(std::size_t{targets} * ex.input.m);
    r.u32_array(ex.targets);
    ex.original_ids.resize(targets);
    r.u32_array(ex.original_ids);
    for (std::uint32_t t = 0; t < targets; ++t) {
      const auto p = r.u8();
      if (p > 2) throw IoError("example cache: invalid perturbation tag");
      ex.perturbations.push_back(static_cast<Perturbation>(p));
    }
    out.push_back(std::move(ex));
  }
  r.expect_end();
  return out;
}

void SynthConfig::validate() const {
  if (entities == 0 || pages == 0 || clusters == 0) throw InvalidArgument("synthetic corpus sizes must be positive");
  if (clusters > entities) throw InvalidArgument("more clusters than entities");
  if (min_length == 0 || min_length > max_length) throw InvalidArgument("invalid page length range");
  if (max_length > entities) throw InvalidArgument("pages cannot be longer than the vocabulary");
  if (!(zipf_s >= 0.0)) throw InvalidArgument("zipf exponent must be non-negative");
  if (!(noise >= 0.0 && noise <= 1.0)) throw InvalidArgument("noise must lie in [0, 1]");
}

std::vector<std::uint32_t> synthetic_clusters(const SynthConfig& config) {
  config.validate();
  std::vector<std::uint32_t> slot(config.entities);
  std::iota(slot.begin(), slot.end(), 0u);
  Rng rng(derive_seed(config.seed, 0xc1u));
  rng.shuffle(std::span(slot));
  std::vector<std::uint32_t> cluster(config.entities);
  for (EntityId e = 0; e < config.entities; ++e) cluster[e] = slot[e] % config.clusters;
  return cluster;
}

std::vector<Page> generate_synthetic_corpus(const SynthConfig& config) {
  config.validate();
  const auto cluster = synthetic_clusters(config);
  std::vector<double> weight(config.entities);
  for (EntityId e = 0; e < config.entities; ++e) {
    weight[e] = std::pow(static_cast<double>(e) + 1.0, -config.zipf_s);
  }

  std::vector<std::vector<EntityId>> members(config.clusters);
  for (EntityId e = 0; e < config.entities; ++e) members[cluster[e]].push_back(e);
  std::vector<std::vector<double>> member_cdf(config.clusters);
  std::vector<double> cluster_cdf(config.clusters);
  double running = 0.0;
  for (std::uint32_t c = 0; c < config.clusters; ++c) {
    double acc = 0.0;
    for (EntityId e : members[c]) member_cdf[c].push_back(acc += weight[e]);
    cluster_cdf[c] = running += acc;
  }
  std::vector<double> global_cdf(config.entities);
  std::partial_sum(weight.begin(), weight.end(), global_cdf.begin());

  Rng rng(derive_seed(config.seed, 0x9a6e5u));
  std::vector<Page> pages(config.pages);
  for (auto& page : pages) {
    const auto c = draw(cluster_cdf, rng);
    const auto span_len = config.max_length - config.min_length + 1;
    const auto target_len = std::min<std::size_t>(config.min_length + rng.below(span_len),
                                                  members[c].size());
    auto& out = page.entities;
    // Distinct entities per page; bounded redraws keep generation finite.
    for (std::size_t tries = 0; out.size() < target_len && tries < 64 * target_len; ++tries) {
      EntityId e;
      if (rng.uniform() < config.noise) {
        e = static_cast<EntityId>(draw(global_cdf, rng));
      } else {
        e = members[c][draw(member_cdf[c], rng)];
      }
      if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    }
    // Clusters smaller than min_length are topped up from the whole vocabulary.
    while (out.size() < config.min_length) {
      const auto e = static_cast<EntityId>(draw(global_cdf, rng));
      if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    }
  }
  return pages;
}

}  // namespace superbloom
