#include "superbloom/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "superbloom/binary_io.hpp"
#include "superbloom/error.hpp"
#include "superbloom/random.hpp"

namespace superbloom {

namespace {

constexpr std::string_view kCheckpointMagic = "SBCK";
constexpr std::uint32_t kCheckpointVersion = 1;

const char* loss_mode_name(LossMode::Kind kind) {
  return kind == LossMode::Kind::kFullSoftmax ? "full_softmax" : "sampled_softmax";
}

LossMode::Kind parse_loss_mode(const std::string& name) {
  if (name == "full_softmax") return LossMode::Kind::kFullSoftmax;
  if (name == "sampled_softmax") return LossMode::Kind::kSampledSoftmax;
  throw ConfigError("unknown loss_mode '" + name + "'");
}

template <typename Config>
void reject_unknown(const nlohmann::json& j, const Config& known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(std::string("unknown key '") + key + "' in " + section);
  }
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0 || total_steps == 0 || segment_length == 0) {
    throw ConfigError("batch_size, total_steps and segment_length must be positive");
  }
  if (!(init_lr > 0.0)) throw ConfigError("init_lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in (0, 1]");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  if (loss_mode == LossMode::Kind::kSampledSoftmax && num_negatives == 0) {
    throw ConfigError("sampled_softmax needs num_negatives > 0");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"heads", c.heads},
          {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},
          {"layers", c.layers},
          {"m", c.m},
          {"hash_size", c.hash_size},
          {"num_specials", c.num_specials},
          {"tie_embeddings", c.tie_embeddings},
          {"use_positions", c.use_positions},
          {"seq_len", c.seq_len}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  reject_unknown(j, to_json(c), "model config");
  read_key(j, "d", c.d);
  read_key(j, "heads", c.heads);
  read_key(j, "head_dim", c.head_dim);
  read_key(j, "ffn_dim", c.ffn_dim);
  read_key(j, "layers", c.layers);
  read_key(j, "m", c.m);
  read_key(j, "hash_size", c.hash_size);
  read_key(j, "num_specials", c.num_specials);
  read_key(j, "tie_embeddings", c.tie_embeddings);
  read_key(j, "use_positions", c.use_positions);
  read_key(j, "seq_len", c.seq_len);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"init_lr", c.init_lr},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"loss_mode", loss_mode_name(c.loss_mode)},
          {"num_negatives", c.num_negatives},
          {"clip_norm", c.clip_norm},
          {"mask_rate", c.mask_rate},
          {"segment_length", c.segment_length}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  reject_unknown(j, to_json(c), "train config");
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "init_lr", c.init_lr);
  read_key(j, "warmup_steps", c.warmup_steps);
  read_key(j, "total_steps", c.total_steps);
  read_key(j, "beta1", c.beta1);
  read_key(j, "beta2", c.beta2);
  read_key(j, "epsilon", c.epsilon);
  read_key(j, "seed", c.seed);
  read_key(j, "eval_every", c.eval_every);
  read_key(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("loss_mode")) {
    std::string mode;
    read_key(j, "loss_mode", mode);
    c.loss_mode = parse_loss_mode(mode);
  }
  read_key(j, "num_negatives", c.num_negatives);
  read_key(j, "clip_norm", c.clip_norm);
  read_key(j, "mask_rate", c.mask_rate);
  read_key(j, "segment_length", c.segment_length);
  return c;
}

double lr_at(const TrainConfig& config, std::uint64_t step) {
  const double s = static_cast<double>(step);
  if (config.warmup_steps == 0) return config.init_lr / std::sqrt(std::max(s, 1.0));
  const double w = static_cast<double>(config.warmup_steps);
  return config.init_lr * std::min(s / w, std::sqrt(w / std::max(s, 1.0)));
}

template <typename T>
void adam_step(std::span<T> params, AdamMoments<T>& moments, std::span<const T> grad,
               std::uint64_t t, double lr, const TrainConfig& config, const ParamLayout* layout) {
  if (params.size() != grad.size() || moments.first.size() != params.size() ||
      moments.second.size() != params.size()) {
    throw InvalidArgument("adam_step: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw InvalidArgument("adam_step: step index is 1-based");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      std::string where = "index " + std::to_string(i);
      if (layout) {
        for (const auto& info : layout->tensors()) {
          if (i >= info.offset && i < info.offset + info.size()) where = info.name;
        }
      }
      throw DivergenceError("non-finite gradient in " + where);
    }
  }
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(config.epsilon);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T& m = moments.first[i];
    T& v = moments.second[i];
    m = tb1 * m + (T(1) - tb1) * grad[i];
    v = tb2 * v + (T(1) - tb2) * grad[i] * grad[i];
    params[i] -= step_size * m / (std::sqrt(v) * inv_sqrt_c2 + eps);
  }
}

template <typename T>
double clip_global_norm(std::span<T> grad, double max_norm) {
  double sq = 0.0;
  for (T g : grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (T& g : grad) g *= scale;
  }
  return norm;
}

template void adam_step<float>(std::span<float>, AdamMoments<float>&, std::span<const float>,
                               std::uint64_t, double, const TrainConfig&, const ParamLayout*);
template void adam_step<double>(std::span<double>, AdamMoments<double>&, std::span<const double>,
                                std::uint64_t, double, const TrainConfig&, const ParamLayout*);
template double clip_global_norm<float>(std::span<float>, double);
template double clip_global_norm<double>(std::span<double>, double);

BatchSource corpus_batches(std::span<const Page> train_pages, const HashScheme& scheme,
                           const TrainConfig& config) {
  if (train_pages.empty()) throw InvalidArgument("no training pages");
  return [pages = std::vector<Page>(train_pages.begin(), train_pages.end()), &scheme,
          config](std::uint64_t step) {
    std::vector<MaskedExample> batch;
    batch.reserve(config.batch_size);
    for (std::uint32_t b = 0; b < config.batch_size; ++b) {
      const std::uint64_t slot_seed = derive_seed(config.seed, step, b);
      Rng rng(slot_seed);
      const auto& page = pages[rng.below(pages.size())];
      const auto segment = cut_segment(page, config.segment_length, derive_seed(slot_seed, 1));
      batch.push_back(make_masked_example(segment, scheme, config.mask_rate, derive_seed(slot_seed, 2)));
    }
    return batch;
  };
}

BatchSource fixed_batches(std::vector<MaskedExample> examples, std::uint32_t batch_size) {
  if (examples.empty() || batch_size == 0) throw InvalidArgument("fixed batch source needs examples");
  return [examples = std::move(examples), batch_size](std::uint64_t step) {
    std::vector<MaskedExample> batch;
    const std::size_t start = ((step - 1) * batch_size) % examples.size();
    for (std::uint32_t b = 0; b < batch_size; ++b) {
      batch.push_back(examples[(start + b) % examples.size()]);
    }
    return batch;
  };
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& config,
                 std::uint64_t scheme_fingerprint, std::uint64_t init_seed)
    : state_{0, init_params<float>(model_config, init_seed), {}, 0.0, 0},
      config_(config),
      scheme_fingerprint_(scheme_fingerprint) {
  config_.validate();
  state_.moments.first.assign(state_.model.values.size(), 0.0f);
  state_.moments.second.assign(state_.model.values.size(), 0.0f);
}

Trainer::Trainer(TrainState state, const TrainConfig& config, std::uint64_t scheme_fingerprint)
    : state_(std::move(state)), config_(config), scheme_fingerprint_(scheme_fingerprint) {
  config_.validate();
  const auto n = state_.model.values.size();
  if (state_.moments.first.empty()) {
    state_.moments.first.assign(n, 0.0f);
    state_.moments.second.assign(n, 0.0f);
  }
  if (state_.moments.first.size() != n || state_.moments.second.size() != n) {
    throw InvalidArgument("optimizer moments do not match the parameters");
  }
}

double Trainer::step(std::span<const MaskedExample> batch) {
  const std::uint64_t t = state_.step + 1;
  LossMode mode;
  mode.kind = config_.loss_mode;
  mode.num_negatives = config_.num_negatives;
  mode.seed = derive_seed(config_.seed, t, 0x5a3d1eULL);
  const double batch_loss = loss_and_gradient(state_.model, batch, grad_, mode);
  clip_global_norm<float>(grad_, config_.clip_norm);
  adam_step<float>(state_.model.values, state_.moments, grad_, t, lr_at(config_, t), config_,
                   state_.model.layout.get());
  state_.step = t;
  state_.loss_sum += batch_loss;
  ++state_.loss_count;
  return batch_loss;
}

void Trainer::save_checkpoint(const std::filesystem::path& path, bool with_optimizer) const {
  io::Writer w(kCheckpointMagic, kCheckpointVersion);
  const nlohmann::json header = {{"model", to_json(state_.model.config)},
                                 {"train", to_json(config_)},
                                 {"scheme_fingerprint", io::hex64(scheme_fingerprint_)},
                                 {"step", state_.step},
                                 {"loss_count", state_.loss_count}};
  w.str(header.dump());
  w.f64(state_.loss_sum);
  const auto& tensors = state_.model.layout->tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& info : tensors) {
    w.str(info.name);
    w.u32(info.rows);
    w.u32(info.cols);
    w.f32_array(std::span(state_.model.values).subspan(info.offset, info.size()));
  }
  w.u8(with_optimizer ? 1 : 0);
  if (with_optimizer) {
    w.f32_array(state_.moments.first);
    w.f32_array(state_.moments.second);
  }
  io::write_file(path, std::move(w).finish());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path), kCheckpointMagic, kCheckpointVersion, "checkpoint " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  Checkpoint ck{model_config_from_json(header.at("model")), train_config_from_json(header.at("train")),
                std::stoull(header.at("scheme_fingerprint").get<std::string>(), nullptr, 16),
                TrainState{header.at("step").get<std::uint64_t>(), Model<float>(model_config_from_json(header.at("model"))), {}, 0.0,
                           header.at("loss_count").get<std::uint64_t>()}};
  ck.state.loss_sum = r.f64();
  auto& model = ck.state.model;
  const auto& tensors = model.layout->tensors();
  if (r.u32() != tensors.size()) throw IoError("checkpoint tensor count does not match its config");
  for (const auto& info : tensors) {
    const auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != info.name || rows != info.rows || cols != info.cols) {
      throw IoError("checkpoint tensor '" + name + "' does not match the declared layout");
    }
    r.f32_array(std::span(model.values).subspan(info.offset, info.size()));
  }
  if (r.u8() != 0) {
    ck.state.moments.first.resize(model.values.size());
    ck.state.moments.second.resize(model.values.size());
    r.f32_array(ck.state.moments.first);
    r.f32_array(ck.state.moments.second);
  }
  r.expect_end();
  return ck;
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path) {
  auto ck = superbloom::load_checkpoint(path);
  return Trainer(std::move(ck.state), ck.train_config, ck.scheme_fingerprint);
}

Model<float> load_model(const std::filesystem::path& path, const HashScheme& scheme) {
  auto ck = load_checkpoint(path);
  if (ck.scheme_fingerprint != scheme.fingerprint()) {
    throw ConfigError("checkpoint " + path.string() + " was trained with a different hash scheme (" +
                      io::hex64(ck.scheme_fingerprint) + " vs " + io::hex64(scheme.fingerprint()) + ")");
  }
  return std::move(ck.state.model);
}

std::string format_metrics(const MetricsRecord& record) {
  std::ostringstream os;
  os << "step=" << record.step << " loss=" << std::fixed << std::setprecision(6) << record.loss;
  if (record.recall) {
    os << " rec@1=" << (*record.recall)[0] << " rec@10=" << (*record.recall)[1]
       << " rec@20=" << (*record.recall)[2];
  }
  return os.str();
}

std::vector<MetricsRecord> train(Trainer& trainer, const BatchSource& batches,
                                 const TrainOptions& options) {
  const auto& config = trainer.config();
  std::vector<MetricsRecord> records;
  std::ofstream log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log.open(*options.out_dir / "metrics.log", std::ios::app);
    if (!log) throw IoError("cannot open metrics log in " + options.out_dir->string());
  }
  auto emit = [&](bool with_eval) {
    auto& st = trainer.state();
    MetricsRecord rec;
    rec.step = st.step;
    rec.loss = st.loss_count ? st.loss_sum / static_cast<double>(st.loss_count) : 0.0;
    if (!std::isfinite(rec.loss)) throw DivergenceError("non-finite training loss at step " + std::to_string(st.step));
    if (with_eval && options.evaluate) rec.recall = options.evaluate(st.model);
    st.loss_sum = 0.0;
    st.loss_count = 0;
    if (log) log << format_metrics(rec) << '\n' << std::flush;
    if (options.on_record) options.on_record(rec);
    records.push_back(rec);
  };

  while (trainer.state().step < config.total_steps) {
    const std::uint64_t next = trainer.state().step + 1;
    const auto batch = batches(next);
    trainer.step(batch);
    const bool last = next == config.total_steps;
    if ((config.eval_every && next % config.eval_every == 0) || last) emit(true);
    if (options.out_dir && config.checkpoint_every && next % config.checkpoint_every == 0 && !last) {
      trainer.save_checkpoint(*options.out_dir / ("checkpoint-" + std::to_string(next) + ".sbck"));
    }
  }
  if (options.out_dir) trainer.save_checkpoint(*options.out_dir / "final.sbck");
  return records;
}

}  // namespace superbloom
