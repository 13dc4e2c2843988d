#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "superbloom/binary_io.hpp"
#include "superbloom/cli.hpp"
#include "superbloom/corpus.hpp"
#include "superbloom/error.hpp"
#include "superbloom/evaluation.hpp"
#include "superbloom/hashing.hpp"
#include "superbloom/inference.hpp"
#include "superbloom/random.hpp"
#include "superbloom/training.hpp"

namespace superbloom::cli {

namespace {

namespace fs = std::filesystem;

// Seed streams under the global seed.
constexpr std::uint64_t kSplitStream = 0x51;
constexpr std::uint64_t kEvalStream = 0x52;
constexpr std::uint64_t kInitStream = 0x53;
constexpr std::uint64_t kBenchStream = 0x54;

template <typename V>
void apply(const std::optional<V>& flag, V& target) {
  if (flag) target = *flag;
}

RunConfig base_config(const std::optional<fs::path>& path) {
  return path ? load_run_config(*path) : RunConfig{};
}

std::string magic_of(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char buf[4] = {};
  in.read(buf, 4);
  return std::string(buf, static_cast<std::size_t>(in.gcount()));
}

struct Check {
  std::ostream& err;
  bool ok = true;
  void operator()(bool condition, const std::string& what) {
    if (!condition) {
      err << "invariant violated: " << what << '\n';
      ok = false;
    }
  }
};

// ---------------------------------------------------------------- build-hash

struct BuildHashArgs {
  std::optional<fs::path> config;
  std::optional<std::uint32_t> vocab_size;
  std::optional<fs::path> vocab_file;
  std::optional<std::uint32_t> m;
  std::optional<std::uint32_t> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> embeddings;
  std::optional<fs::path> frequency_corpus;
  std::optional<fs::path> constraint;
  std::uint32_t random_functions = 0;
  fs::path out;
};

std::string scheme_summary(const HashScheme& s) {
  std::ostringstream os;
  os << "vocab_size      " << s.vocab_size() << '\n'
     << "functions       " << s.num_functions() << '\n'
     << "alpha           " << s.alpha() << '\n'
     << "hash_size       " << s.hash_size() << '\n'
     << "ordinary_tokens " << s.ordinary_tokens() << '\n'
     << "total_tokens    " << s.total_tokens() << '\n'
     << "fingerprint     " << io::hex64(s.fingerprint()) << '\n';
  for (std::uint32_t j = 0; j < s.num_functions(); ++j) {
    std::map<std::size_t, std::size_t> histogram;
    for (TokenId t = 0; t < s.hash_size(); ++t) ++histogram[s.inverse_lookup(j, t).size()];
    os << "function " << j << " buckets";
    for (const auto& [size, count] : histogram) os << ' ' << count << "x" << size;
    os << '\n';
  }
  return os.str();
}

int build_hash(const BuildHashArgs& a, std::ostream& out) {
  auto config = base_config(a.config);
  apply(a.m, config.scheme.m);
  apply(a.alpha, config.scheme.alpha);
  apply(a.seed, config.seed);
  VocabSpec spec{0, default_specials()};
  if (a.vocab_file && a.vocab_size) throw ConfigError("give either --vocab-size or --vocab-file");
  if (a.vocab_file) {
    spec.size = static_cast<std::uint32_t>(load_vocab_names(*a.vocab_file).size());
  } else if (a.vocab_size) {
    spec.size = *a.vocab_size;
  } else {
    throw ConfigError("build-hash needs --vocab-size or --vocab-file");
  }
  spec.validate();
  const auto m = config.scheme.m;
  const auto alpha = config.scheme.alpha;
  if (m == 0) throw ConfigError("m must be at least 1");
  if (alpha == 0 || alpha > spec.size) {
    throw InfeasibleSchemeError("alpha=" + std::to_string(alpha) + " is outside [1, " +
                                std::to_string(spec.size) + "]");
  }

  HashScheme scheme = [&] {
    if (!a.embeddings) {
      if (a.constraint || a.random_functions) {
        throw ConfigError("--constraint-scheme and --random-functions need --coherent-embeddings");
      }
      return build_random_scheme(spec, m, alpha, config.seed);
    }
    const auto emb = load_embeddings(*a.embeddings);
    if (emb.rows != spec.size) {
      throw ConfigError("embedding file has " + std::to_string(emb.rows) + " rows for " +
                        std::to_string(spec.size) + " entities");
    }
    std::vector<double> freq(spec.size, 1.0);
    if (a.frequency_corpus) freq = entity_frequencies(load_corpus(*a.frequency_corpus, spec.size), spec.size);
    std::vector<std::vector<TokenId>> functions;
    if (a.constraint) {
      const auto c = load_scheme(*a.constraint);
      if (c.vocab_size() != spec.size || c.alpha() != alpha) {
        throw ConfigError("constraint scheme has a different vocabulary size or alpha");
      }
      for (std::uint32_t j = 0; j < c.num_functions(); ++j) {
        functions.emplace_back(c.forward(j).begin(), c.forward(j).end());
      }
    }
    if (functions.size() + a.random_functions >= m) {
      throw ConfigError("coherent hashing needs at least one function left after the kept and random ones");
    }
    for (std::uint32_t r = 0; r < a.random_functions; ++r) {
      functions.push_back(random_function(spec.size, alpha, derive_seed(config.seed, functions.size())));
    }
    while (functions.size() < m) {
      std::optional<std::span<const TokenId>> previous;
      if (!functions.empty()) previous = std::span<const TokenId>(functions.back());
      functions.push_back(build_coherent_function(emb, freq, alpha, previous));
    }
    return HashScheme::from_functions(spec, alpha, std::move(functions));
  }();

  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_scheme(scheme, a.out);
  out << scheme_summary(scheme);
  return kOk;
}

// -------------------------------------------------------------- synth-corpus

struct SynthArgs {
  SynthConfig config;
  fs::path out;
};

int synth_corpus(const SynthArgs& a, std::ostream& out) {
  const auto pages = generate_synthetic_corpus(a.config);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_corpus(pages, a.out);
  std::size_t total = 0;
  for (const auto& p : pages) total += p.entities.size();
  out << "pages    " << pages.size() << '\n'
      << "entities " << a.config.entities << '\n'
      << "mentions " << total << '\n';
  return kOk;
}

// -------------------------------------------------------------- prepare-data

struct PrepareArgs {
  std::optional<fs::path> config;
  fs::path corpus;
  fs::path scheme;
  std::optional<double> test_frac;
  std::optional<std::uint32_t> segment;
  std::optional<std::uint32_t> max_examples;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_dir;
};

int prepare_data(const PrepareArgs& a, std::ostream& out) {
  auto config = base_config(a.config);
  apply(a.test_frac, config.eval.test_frac);
  apply(a.segment, config.eval.segment_length);
  apply(a.max_examples, config.eval.max_examples);
  apply(a.seed, config.seed);
  if (!(config.eval.test_frac > 0.0 && config.eval.test_frac < 1.0)) {
    throw ConfigError("test_frac must lie in (0, 1)");
  }
  const auto scheme = load_scheme(a.scheme);
  const auto pages = load_corpus(a.corpus, scheme.vocab_size());
  const auto dir = run_directory(a.out_dir, "prepare-data",
                                 fingerprint(config, a.corpus.string() + io::hex64(scheme.fingerprint())));
  auto split = split_train_test(pages, config.eval.test_frac, derive_seed(config.seed, kSplitStream));
  if (config.eval.max_examples && split.test.size() > config.eval.max_examples) {
    split.test.resize(config.eval.max_examples);
  }
  const auto examples = make_eval_set(split.test, scheme, config.eval.segment_length,
                                      derive_seed(config.seed, kEvalStream));
  fs::create_directories(dir);
  save_corpus(split.train, dir / "train.txt");
  save_corpus(split.test, dir / "test.txt");
  save_examples(examples, scheme.fingerprint(), dir / "eval.sbex");
  echo_config(config, dir);
  out << "run_dir       " << dir.string() << '\n'
      << "train_pages   " << split.train.size() << '\n'
      << "test_pages    " << split.test.size() << '\n'
      << "eval_examples " << examples.size() << '\n';
  return kOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path corpus;
  fs::path scheme;
  std::optional<fs::path> out_dir;
  std::optional<fs::path> resume;
  std::optional<fs::path> eval_examples;
  std::optional<std::uint32_t> d, heads, ffn_dim, layers, batch, warmup, negatives, segment;
  std::optional<std::uint64_t> steps, seed, eval_every, checkpoint_every;
  std::optional<double> lr;
  std::optional<std::string> loss;
};

int train_command(const TrainArgs& a, std::ostream& out) {
  auto config = base_config(a.config);
  apply(a.d, config.model.d);
  apply(a.heads, config.model.heads);
  apply(a.ffn_dim, config.model.ffn_dim);
  apply(a.layers, config.model.layers);
  apply(a.batch, config.train.batch_size);
  apply(a.warmup, config.train.warmup_steps);
  apply(a.negatives, config.train.num_negatives);
  apply(a.segment, config.train.segment_length);
  apply(a.steps, config.train.total_steps);
  apply(a.seed, config.seed);
  apply(a.eval_every, config.train.eval_every);
  apply(a.checkpoint_every, config.train.checkpoint_every);
  apply(a.lr, config.train.init_lr);
  if (a.loss) {
    config.train = train_config_from_json(
        [&] { auto j = superbloom::to_json(config.train); j["loss_mode"] = *a.loss; return j; }());
  }
  config.train.seed = config.seed;
  config.train.validate();

  const auto scheme = load_scheme(a.scheme);
  ModelConfig model = config.model;
  model.m = scheme.num_functions();
  model.hash_size = scheme.hash_size();
  model.num_specials = scheme.num_specials();
  model.validate();
  if (config.train.segment_length > model.seq_len) {
    throw ConfigError("train.segment_length exceeds model.seq_len");
  }
  const auto pages = load_corpus(a.corpus, scheme.vocab_size());
  const auto dir = run_directory(a.out_dir, "train",
                                 fingerprint(config, a.corpus.string() + io::hex64(scheme.fingerprint())));

  std::optional<Trainer> trainer;
  if (a.resume) {
    auto ck = load_checkpoint(*a.resume);
    if (ck.scheme_fingerprint != scheme.fingerprint()) {
      throw ConfigError("checkpoint " + a.resume->string() + " was trained with a different hash scheme");
    }
    if (!(ck.model_config == model)) throw ConfigError("checkpoint model does not match the configuration");
    if (ck.state.moments.first.empty()) throw ConfigError("checkpoint has no optimizer state to resume from");
    trainer.emplace(std::move(ck.state), config.train, scheme.fingerprint());
  } else {
    trainer.emplace(model, config.train, scheme.fingerprint(), derive_seed(config.seed, kInitStream));
  }

  echo_config(config, dir);
  TrainOptions options;
  options.out_dir = dir;
  std::vector<MaskedExample> eval_set;
  const auto frequencies = entity_frequencies(pages, scheme.vocab_size());
  if (a.eval_examples) {
    eval_set = load_examples(*a.eval_examples, scheme.fingerprint());
    options.evaluate = [&](const Model<float>& m) {
      EvalParams params{ScoreFunction::parse(config.infer.score_fn),
                        BeamParams{config.infer.beam_width, config.infer.iterations, 20}};
      const auto r = evaluate(m, scheme, eval_set, frequencies, params);
      return std::array<double, 3>{r.rec1, r.rec10, r.rec20};
    };
  }
  options.on_record = [&](const MetricsRecord& r) { out << format_metrics(r) << '\n' << std::flush; };
  train(*trainer, corpus_batches(pages, scheme, config.train), options);
  out << "run_dir " << dir.string() << '\n'
      << "parameters " << parameter_count(model) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
  std::optional<fs::path> config;
  fs::path checkpoint;
  fs::path scheme;
  std::optional<fs::path> corpus;
  std::optional<fs::path> examples;
  std::optional<fs::path> train_corpus;
  std::optional<std::uint32_t> k, beam, iters, segment, max_examples;
  std::optional<std::string> score_fn;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out_dir;
};

int eval_command(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  auto config = base_config(a.config);
  apply(a.k, config.infer.k);
  apply(a.beam, config.infer.beam_width);
  apply(a.iters, config.infer.iterations);
  apply(a.score_fn, config.infer.score_fn);
  apply(a.segment, config.eval.segment_length);
  apply(a.max_examples, config.eval.max_examples);
  apply(a.seed, config.seed);
  if (a.corpus.has_value() == a.examples.has_value()) throw ConfigError("eval needs exactly one of --corpus or --examples");

  const auto scheme = load_scheme(a.scheme);
  const auto model = load_model(a.checkpoint, scheme);
  std::vector<MaskedExample> examples;
  std::vector<Page> eval_pages;
  if (a.examples) {
    examples = load_examples(*a.examples, scheme.fingerprint());
  } else {
    eval_pages = load_corpus(*a.corpus, scheme.vocab_size());
    if (config.eval.max_examples && eval_pages.size() > config.eval.max_examples) {
      eval_pages.resize(config.eval.max_examples);
    }
    examples = make_eval_set(eval_pages, scheme, config.eval.segment_length,
                             derive_seed(config.seed, kEvalStream));
  }
  if (config.eval.max_examples && examples.size() > config.eval.max_examples) {
    examples.resize(config.eval.max_examples);
  }
  std::vector<double> frequencies;
  if (a.train_corpus) {
    frequencies = entity_frequencies(load_corpus(*a.train_corpus, scheme.vocab_size()), scheme.vocab_size());
  } else if (!eval_pages.empty()) {
    frequencies = entity_frequencies(eval_pages, scheme.vocab_size());
  } else {
    frequencies.assign(scheme.vocab_size(), 0.0);
  }
  const auto params = EvalParams{ScoreFunction::parse(config.infer.score_fn),
                                 BeamParams{config.infer.beam_width, config.infer.iterations,
                                            std::max(config.infer.k, 20u)}};
  auto report = evaluate(model, scheme, examples, frequencies, params);
  const auto fp = fingerprint(config, a.checkpoint.string() + io::hex64(scheme.fingerprint()));
  report.config_fingerprint = fp;
  const auto dir = run_directory(a.out_dir, "eval", fp);
  fs::create_directories(dir);
  echo_config(config, dir);
  const auto table = format_report(report);
  io::write_text_file(dir / "report.txt", table);
  io::write_text_file(dir / "report.kv", report_key_values(report));
  out << table << "run_dir " << dir.string() << '\n';

  Check check{err};
  check(report.rec1 <= report.rec10 && report.rec10 <= report.rec20, "rec@k nondecreasing in k");
  std::size_t population = 0;
  for (auto c : report.buckets.count) population += c;
  check(population == report.examples, "bucket populations sum to the example count");
  return check.ok ? kOk : kInternal;
}

// --------------------------------------------------------------------- infer

struct InferArgs {
  std::optional<fs::path> config;
  std::optional<fs::path> checkpoint;
  fs::path scheme;
  fs::path input;
  std::optional<std::uint32_t> k, beam, iters;
  std::optional<std::string> score_fn;
  bool exhaustive = false;
  std::optional<fs::path> out;
};

int infer_command(const InferArgs& a, std::ostream& out, std::ostream& err) {
  auto config = base_config(a.config);
  apply(a.k, config.infer.k);
  apply(a.beam, config.infer.beam_width);
  apply(a.iters, config.infer.iterations);
  apply(a.score_fn, config.infer.score_fn);
  const auto score = ScoreFunction::parse(config.infer.score_fn);
  const auto scheme = load_scheme(a.scheme);

  std::vector<PositionPrediction> predictions;
  const auto magic = magic_of(a.input);
  if (magic == "SBPR") {
    predictions = load_predictions(a.input, scheme.fingerprint());
  } else if (magic == "SBEX") {
    if (!a.checkpoint) throw ConfigError("masked-example input needs --checkpoint");
    const auto model = load_model(*a.checkpoint, scheme);
    predictions = predict(model, load_examples(a.input, scheme.fingerprint()));
  } else {
    throw IoError(a.input.string() + " is neither a prediction file nor an example file");
  }

  const auto k = std::min(config.infer.k, scheme.vocab_size());
  const BeamParams params{config.infer.beam_width,
                          config.infer.iterations == 0 ? BeamParams::kUnbounded : config.infer.iterations, k};
  std::ostringstream lines;
  Check check{err};
  for (std::size_t q = 0; q < predictions.size(); ++q) {
    const auto result = a.exhaustive ? exhaustive_rank(score, predictions[q], scheme, k)
                                     : beam_search(score, predictions[q], scheme, params);
    check(std::is_sorted(result.scores.rbegin(), result.scores.rend()), "scores nonincreasing");
    lines << format_ranked(q, result);
  }
  if (a.out) {
    io::write_text_file(*a.out, lines.str());
  } else {
    out << lines.str();
  }
  return check.ok ? kOk : kInternal;
}

// --------------------------------------------------------------------- bench

struct BenchArgs {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> examples;
  bool random_predictions = false;
  fs::path scheme;
  std::uint32_t beam = 20;
  std::uint32_t iters = 1;
  std::uint32_t k = 1;
  std::uint32_t queries = 100;
  double temperature = 3.0;
  std::uint64_t seed = 1;
  std::string score_fn = "log_sum";
};

std::vector<PositionPrediction> random_predictions(const HashScheme& scheme, std::uint32_t count,
                                                   double temperature, std::uint64_t seed) {
  std::vector<PositionPrediction> out(count);
  for (std::uint32_t q = 0; q < count; ++q) {
    Rng rng(derive_seed(seed, q));
    auto& p = out[q];
    p.m = scheme.num_functions();
    p.hash_size = scheme.hash_size();
    p.probs.resize(std::size_t{p.m} * p.hash_size);
    for (std::uint32_t j = 0; j < p.m; ++j) {
      auto block = std::span(p.probs).subspan(std::size_t{j} * p.hash_size, p.hash_size);
      double mx = -1e300;
      for (double& v : block) mx = std::max(mx, v = temperature * rng.normal());
      double z = 0.0;
      for (double& v : block) z += v = std::exp(v - mx);
      for (double& v : block) v /= z;
    }
  }
  return out;
}

int bench_command(const BenchArgs& a, std::ostream& out) {
  const auto scheme = load_scheme(a.scheme);
  const auto score = ScoreFunction::parse(a.score_fn);
  std::vector<PositionPrediction> predictions;
  if (a.random_predictions == a.checkpoint.has_value()) {
    throw ConfigError("bench needs exactly one of --checkpoint or --random-predictions");
  }
  if (a.checkpoint) {
    if (!a.examples) throw ConfigError("bench --checkpoint needs --examples");
    const auto model = load_model(*a.checkpoint, scheme);
    auto examples = load_examples(*a.examples, scheme.fingerprint());
    if (examples.size() > a.queries) examples.resize(a.queries);
    predictions = predict(model, examples);
  } else {
    predictions = random_predictions(scheme, a.queries, a.temperature, derive_seed(a.seed, kBenchStream));
  }
  const auto k = std::min(a.k, scheme.vocab_size());
  const BeamParams params{a.beam, a.iters == 0 ? BeamParams::kUnbounded : a.iters, k};

  using clock = std::chrono::steady_clock;
  std::uint64_t candidates = 0;
  std::size_t certified = 0, agree = 0;
  std::vector<RankedResult> beam_results;
  const auto t0 = clock::now();
  for (const auto& p : predictions) beam_results.push_back(beam_search(score, p, scheme, params));
  const auto t1 = clock::now();
  std::vector<RankedResult> full;
  for (const auto& p : predictions) full.push_back(exhaustive_rank(score, p, scheme, k));
  const auto t2 = clock::now();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    candidates += beam_results[i].candidates_scored;
    certified += beam_results[i].exact;
    agree += beam_results[i].items == full[i].items;
  }
  const double beam_s = std::chrono::duration<double>(t1 - t0).count();
  const double full_s = std::chrono::duration<double>(t2 - t1).count();
  const double q = static_cast<double>(std::max<std::size_t>(predictions.size(), 1));
  const double mean_candidates = static_cast<double>(candidates) / q;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "queries              %zu\n"
                "vocab_size           %u\n"
                "beam candidates      %.1f per query (%.3f%% of N)\n"
                "exhaustive candidates %u per query\n"
                "beam seconds         %.6f\n"
                "exhaustive seconds   %.6f\n"
                "speedup              %.2f\n",
                predictions.size(), scheme.vocab_size(), mean_candidates,
                100.0 * mean_candidates / scheme.vocab_size(), scheme.vocab_size(), beam_s, full_s,
                beam_s > 0 ? full_s / beam_s : 0.0);
  out << buf << "certified            " << certified << '/' << predictions.size() << '\n'
      << "top-k agreement      " << agree << '/' << predictions.size() << '\n';
  return kOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kConfigError;
    case ErrorKind::kIo: return kIoError;
    case ErrorKind::kDivergence: return kDivergence;
    case ErrorKind::kInfeasibleScheme: return kInfeasibleScheme;
    case ErrorKind::kInvalidArgument: return kInvalidArgument;
  }
  return kInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-hash vocabulary compression, masked-prediction training and top-k inference",
               "superbloom"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  BuildHashArgs bh;
  auto* build = app.add_subcommand("build-hash", "Build a hash scheme");
  build->add_option("--config", bh.config, "Run config (JSON)")->check(CLI::ExistingFile);
  build->add_option("--vocab-size", bh.vocab_size, "Number of entities N");
  build->add_option("--vocab-file", bh.vocab_file, "Entity names, one per line")->check(CLI::ExistingFile);
  build->add_option("--m", bh.m, "Number of hash functions");
  build->add_option("--alpha", bh.alpha, "Collision factor");
  build->add_option("--seed", bh.seed, "Seed");
  build->add_option("--coherent-embeddings", bh.embeddings, "Embedding rows for coherent hashing")
      ->check(CLI::ExistingFile);
  build->add_option("--frequency-corpus", bh.frequency_corpus, "Corpus giving entity frequencies")
      ->check(CLI::ExistingFile);
  build->add_option("--constraint-scheme", bh.constraint, "Scheme whose functions are kept first")
      ->check(CLI::ExistingFile);
  build->add_option("--random-functions", bh.random_functions,
                    "Random functions placed before the coherent ones");
  build->add_option("--out", bh.out, "Output scheme file")->required();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth-corpus", "Generate a synthetic co-occurrence corpus");
  synth->add_option("--entities", sy.config.entities, "Vocabulary size")->capture_default_str();
  synth->add_option("--pages", sy.config.pages, "Number of pages")->capture_default_str();
  synth->add_option("--clusters", sy.config.clusters, "Number of clusters")->capture_default_str();
  synth->add_option("--zipf-s", sy.config.zipf_s, "Zipf exponent")->capture_default_str();
  synth->add_option("--min-length", sy.config.min_length, "Shortest page")->capture_default_str();
  synth->add_option("--max-length", sy.config.max_length, "Longest page")->capture_default_str();
  synth->add_option("--noise", sy.config.noise, "Probability of an off-cluster entity")->capture_default_str();
  synth->add_option("--seed", sy.config.seed, "Seed")->capture_default_str();
  synth->add_option("--out", sy.out, "Output corpus file")->required();

  PrepareArgs pr;
  auto* prepare = app.add_subcommand("prepare-data", "Split a corpus and build the evaluation set");
  prepare->add_option("--config", pr.config, "Run config (JSON)")->check(CLI::ExistingFile);
  prepare->add_option("--corpus", pr.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  prepare->add_option("--scheme", pr.scheme, "Scheme file")->required()->check(CLI::ExistingFile);
  prepare->add_option("--test-frac", pr.test_frac, "Fraction of pages held out");
  prepare->add_option("--segment", pr.segment, "Maximum entities per example");
  prepare->add_option("--max-examples", pr.max_examples, "Cap on held-out pages");
  prepare->add_option("--seed", pr.seed, "Seed");
  prepare->add_option("--out-dir", pr.out_dir, "Output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "Run config (JSON)")->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", tr.corpus, "Training corpus")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--scheme", tr.scheme, "Scheme file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out-dir", tr.out_dir, "Output directory");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--eval-examples", tr.eval_examples, "Examples for periodic evaluation")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--d", tr.d, "Embedding dimension d");
  train_cmd->add_option("--heads,--n-A", tr.heads, "Attention heads n_A");
  train_cmd->add_option("--ffn-dim,--d-F", tr.ffn_dim, "Feed-forward width d_F");
  train_cmd->add_option("--layers,-L", tr.layers, "Transformer layers L");
  train_cmd->add_option("--steps", tr.steps, "Total optimizer steps");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--lr", tr.lr, "Peak learning rate");
  train_cmd->add_option("--warmup", tr.warmup, "Warmup steps");
  train_cmd->add_option("--segment", tr.segment, "Maximum entities per example");
  train_cmd->add_option("--seed", tr.seed, "Seed");
  train_cmd->add_option("--eval-every", tr.eval_every, "Steps between metric records");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Steps between checkpoints");
  train_cmd->add_option("--loss", tr.loss, "full_softmax or sampled_softmax");
  train_cmd->add_option("--negatives", tr.negatives, "Negatives per row for sampled_softmax");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--config", ev.config, "Run config (JSON)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--scheme", ev.scheme, "Scheme file")->required()->check(CLI::ExistingFile);
  auto* eval_input = eval_cmd->add_option_group("input");
  eval_input->add_option("--corpus", ev.corpus, "Held-out pages")->check(CLI::ExistingFile);
  eval_input->add_option("--examples", ev.examples, "Prepared evaluation examples")->check(CLI::ExistingFile);
  eval_input->require_option(1);
  eval_cmd->add_option("--train-corpus", ev.train_corpus, "Training pages for frequency deciles")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--k", ev.k, "Ranking depth (at least 20 is used)");
  eval_cmd->add_option("--beam,-B", ev.beam, "Beam width B");
  eval_cmd->add_option("--iters", ev.iters, "Beam iterations (0 runs until certified)");
  eval_cmd->add_option("--score-fn", ev.score_fn, "log_sum, min or max");
  eval_cmd->add_option("--segment", ev.segment, "Maximum entities per example");
  eval_cmd->add_option("--max-examples", ev.max_examples, "Cap on evaluated examples");
  eval_cmd->add_option("--seed", ev.seed, "Seed");
  eval_cmd->add_option("--out-dir", ev.out_dir, "Output directory");

  InferArgs in;
  auto* infer_cmd = app.add_subcommand("infer", "Rank entities for stored predictions or examples");
  infer_cmd->add_option("--config", in.config, "Run config (JSON)")->check(CLI::ExistingFile);
  infer_cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint (for example input)")
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--scheme", in.scheme, "Scheme file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--input", in.input, "Prediction file or example file")->required()
      ->check(CLI::ExistingFile);
  infer_cmd->add_option("--k", in.k, "Results per query");
  infer_cmd->add_option("--beam,-B", in.beam, "Beam width B");
  infer_cmd->add_option("--iters", in.iters, "Beam iterations (0 runs until certified)");
  infer_cmd->add_option("--score-fn", in.score_fn, "log_sum, min or max");
  infer_cmd->add_flag("--exhaustive", in.exhaustive, "Score every entity instead of beam search");
  infer_cmd->add_option("--out", in.out, "Output file (default: stdout)");

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "Compare beam search with exhaustive scoring");
  auto* bench_source = bench_cmd->add_option_group("source");
  bench_source->add_option("--checkpoint", be.checkpoint, "Checkpoint")->check(CLI::ExistingFile);
  bench_source->add_flag("--random-predictions", be.random_predictions, "Use random distributions");
  bench_source->require_option(1);
  bench_cmd->add_option("--examples", be.examples, "Examples for --checkpoint")->check(CLI::ExistingFile);
  bench_cmd->add_option("--scheme", be.scheme, "Scheme file")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--beam,-B", be.beam, "Beam width B")->capture_default_str();
  bench_cmd->add_option("--iters", be.iters, "Beam iterations (0 runs until certified)")->capture_default_str();
  bench_cmd->add_option("--k", be.k, "Results per query")->capture_default_str();
  bench_cmd->add_option("--queries", be.queries, "Number of queries")->capture_default_str();
  bench_cmd->add_option("--temperature", be.temperature, "Logit scale of random predictions")
      ->capture_default_str();
  bench_cmd->add_option("--score-fn", be.score_fn, "log_sum, min or max")->capture_default_str();
  bench_cmd->add_option("--seed", be.seed, "Seed")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*build) return build_hash(bh, out);
    if (*synth) return synth_corpus(sy, out);
    if (*prepare) return prepare_data(pr, out);
    if (*train_cmd) return train_command(tr, out);
    if (*eval_cmd) return eval_command(ev, out, err);
    if (*infer_cmd) return infer_command(in, out, err);
    if (*bench_cmd) return bench_command(be, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace superbloom::cli
