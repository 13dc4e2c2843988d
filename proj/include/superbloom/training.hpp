#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "superbloom/corpus.hpp"
#include "superbloom/hashing.hpp"
#include "superbloom/transformer.hpp"

namespace superbloom {

struct TrainConfig {
  std::uint32_t batch_size = 32;
  double init_lr = 2e-4;
  std::uint32_t warmup_steps = 1000;
  std::uint64_t total_steps = 10000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::uint64_t eval_every = 0;        // 0 disables periodic evaluation
  std::uint64_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
  LossMode::Kind loss_mode = LossMode::Kind::kFullSoftmax;
  std::uint32_t num_negatives = 0;
  double clip_norm = 1.0;  // global gradient norm; 0 disables clipping
  double mask_rate = 0.15;
  std::uint32_t segment_length = 32;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Linear warmup to init_lr, then inverse-square-root decay:
//   init_lr * min(step / warmup, sqrt(warmup / max(step, 1))).
double lr_at(const TrainConfig& config, std::uint64_t step);

template <typename T>
struct AdamMoments {
  ParamVector<T> first;
  ParamVector<T> second;
};

// One bias-corrected Adam update at 1-based step `t`. A non-finite gradient
// throws DivergenceError naming the tensor (when a layout is supplied) before
// any parameter is touched.
template <typename T>
void adam_step(std::span<T> params, AdamMoments<T>& moments, std::span<const T> grad,
               std::uint64_t t, double lr, const TrainConfig& config,
               const ParamLayout* layout = nullptr);

// Scales `grad` so its L2 norm is at most max_norm; returns the original norm.
template <typename T>
double clip_global_norm(std::span<T> grad, double max_norm);

struct TrainState {
  std::uint64_t step = 0;
  Model<float> model;
  AdamMoments<float> moments;
  double loss_sum = 0.0;      // since the last logged record
  std::uint64_t loss_count = 0;
};

// Produces the batch for a given step; must be a pure function of the step.
using BatchSource = std::function<std::vector<MaskedExample>(std::uint64_t step)>;

// Random training pages, segments and masks, all derived from (seed, step, slot).
BatchSource corpus_batches(std::span<const Page> train_pages, const HashScheme& scheme,
                           const TrainConfig& config);
// Cycles through a fixed example list.
BatchSource fixed_batches(std::vector<MaskedExample> examples, std::uint32_t batch_size);

class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& config,
          std::uint64_t scheme_fingerprint, std::uint64_t init_seed);
  Trainer(TrainState state, const TrainConfig& config, std::uint64_t scheme_fingerprint);

  // One optimizer step on `batch`; returns the batch loss before the update.
  double step(std::span<const MaskedExample> batch);

  const TrainState& state() const noexcept { return state_; }
  TrainState& state() noexcept { return state_; }
  const TrainConfig& config() const noexcept { return config_; }
  std::uint64_t scheme_fingerprint() const noexcept { return scheme_fingerprint_; }

  void save_checkpoint(const std::filesystem::path& path, bool with_optimizer = true) const;
  static Trainer load_checkpoint(const std::filesystem::path& path);

 private:
  TrainState state_;
  TrainConfig config_;
  std::uint64_t scheme_fingerprint_;
  ParamVector<float> grad_;
};

// Checkpoint (magic "SBCK"): u32 version | header JSON (model config, train
// config, scheme fingerprint, step, loss statistics) | u32 tensor count |
// per tensor: name, u32 rows, u32 cols, f32 values | u8 optimizer flag |
// [f32 first moments, f32 second moments] | u32 crc32.
struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  std::uint64_t scheme_fingerprint = 0;
  TrainState state;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Loads and verifies the checkpoint was trained against `scheme`.
Model<float> load_model(const std::filesystem::path& path, const HashScheme& scheme);

struct MetricsRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::optional<std::array<double, 3>> recall;  // rec@1, rec@10, rec@20
};

std::string format_metrics(const MetricsRecord& record);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints + metrics.log
  std::function<std::array<double, 3>(const Model<float>&)> evaluate;
  std::function<void(const MetricsRecord&)> on_record;
};

// Runs steps state.step+1 .. total_steps. Records are emitted every
// eval_every steps and at the end; checkpoints every checkpoint_every steps
// and at the end (as checkpoint-<step>.sbck and final.sbck).
std::vector<MetricsRecord> train(Trainer& trainer, const BatchSource& batches,
                                 const TrainOptions& options = {});

}  // namespace superbloom
