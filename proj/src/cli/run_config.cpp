#include <cstdlib>
#include <fstream>
#include <sstream>

#include "superbloom/binary_io.hpp"
#include "superbloom/cli.hpp"
#include "superbloom/error.hpp"

namespace superbloom::cli {

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
  }
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + section + "." + key + "'");
  }
}

nlohmann::json model_json(const ModelConfig& c) {
  auto j = superbloom::to_json(c);
  j.erase("m");
  j.erase("hash_size");
  j.erase("num_specials");
  return j;
}

nlohmann::json train_json(const TrainConfig& c) {
  auto j = superbloom::to_json(c);
  j.erase("seed");
  return j;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  reject_unknown(j, to_json(c), "top level");
  read_key(j, "seed", c.seed, "top level");
  if (j.contains("scheme")) {
    const auto& s = j.at("scheme");
    reject_unknown(s, to_json(c).at("scheme"), "scheme");
    read_key(s, "m", c.scheme.m, "scheme");
    read_key(s, "alpha", c.scheme.alpha, "scheme");
  }
  if (j.contains("model")) {
    const auto& s = j.at("model");
    reject_unknown(s, model_json(c.model), "model");
    c.model = model_config_from_json(s);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    reject_unknown(s, train_json(c.train), "train");
    c.train = train_config_from_json(s);
  }
  c.train.seed = c.seed;
  if (j.contains("infer")) {
    const auto& s = j.at("infer");
    reject_unknown(s, to_json(c).at("infer"), "infer");
    read_key(s, "beam_width", c.infer.beam_width, "infer");
    read_key(s, "iterations", c.infer.iterations, "infer");
    read_key(s, "k", c.infer.k, "infer");
    read_key(s, "score_fn", c.infer.score_fn, "infer");
    ScoreFunction::parse(c.infer.score_fn);
  }
  if (j.contains("eval")) {
    const auto& s = j.at("eval");
    reject_unknown(s, to_json(c).at("eval"), "eval");
    read_key(s, "test_frac", c.eval.test_frac, "eval");
    read_key(s, "segment_length", c.eval.segment_length, "eval");
    read_key(s, "max_examples", c.eval.max_examples, "eval");
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"scheme", {{"m", c.scheme.m}, {"alpha", c.scheme.alpha}}},
          {"model", model_json(c.model)},
          {"train", train_json(c.train)},
          {"infer",
           {{"beam_width", c.infer.beam_width},
            {"iterations", c.infer.iterations},
            {"k", c.infer.k},
            {"score_fn", c.infer.score_fn}}},
          {"eval",
           {{"test_frac", c.eval.test_frac},
            {"segment_length", c.eval.segment_length},
            {"max_examples", c.eval.max_examples}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void echo_config(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_text_file(dir / "config.json", to_json(config).dump(2) + "\n");
}

std::uint64_t fingerprint(const RunConfig& config, const std::string& salt) {
  const auto text = salt + "\n" + to_json(config).dump();
  return io::fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::filesystem::path run_directory(const std::optional<std::filesystem::path>& out_dir,
                                    const std::string& command, std::uint64_t fp) {
  if (out_dir) return *out_dir;
  const char* root = std::getenv("SUPERBLOOM_RUN_ROOT");
  const std::filesystem::path base = root && *root ? root : "runs";
  return base / (command + "-" + io::hex64(fp));
}

}  // namespace superbloom::cli
