#pragma once

// Post-norm Transformer over Bloom digests.
//
//   X_0       = E[tokens] (+ position rows when enabled)
//   A(X)      = sum_a softmax((X Q_a)(X K_a)^T / sqrt(d_A)) X V_a W_a^T
//   X'        = LN(X + A(X))
//   F(X')     = ReLU(X' U_1 + b_1) U_2^T + b_2
//   X_{l+1}   = LN(X' + F(X'))
//   p_{i,j}   = softmax over block j of (y_{i,j} E_out^T)
//
// The heads are stored concatenated: "query"/"key"/"value" hold
// [Q_1 .. Q_nA] as a d x (n_A d_A) matrix and "output" holds [W_1 .. W_nA].

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "superbloom/corpus.hpp"
#include "superbloom/hashing.hpp"

namespace superbloom {

struct ModelConfig {
  std::uint32_t d = 64;
  std::uint32_t heads = 4;
  std::uint32_t head_dim = 0;  // 0 means d / heads
  std::uint32_t ffn_dim = 256;
  std::uint32_t layers = 2;
  std::uint32_t m = 2;
  std::uint32_t hash_size = 0;
  std::uint32_t num_specials = 3;
  bool tie_embeddings = true;
  bool use_positions = false;
  std::uint32_t seq_len = 32;  // maximum entities per input

  std::uint32_t attention_dim() const noexcept { return head_dim == 0 ? d / heads : head_dim; }
  std::uint32_t total_tokens() const noexcept { return m * hash_size + m * num_specials; }
  // Throws ConfigError when a dimension is zero or heads * head_dim > d.
  void validate() const;

  static ModelConfig for_scheme(const HashScheme& scheme);
  bool operator==(const ModelConfig&) const = default;
};

enum class TensorRole : std::uint8_t { kWeight, kBias, kGain };

struct TensorInfo {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::size_t offset = 0;
  TensorRole role = TensorRole::kWeight;

  std::size_t size() const noexcept { return std::size_t{rows} * cols; }
};

// Named tensors packed into one flat buffer, in a fixed declaration order.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);

  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  std::size_t total_size() const noexcept { return total_; }
  const TensorInfo& find(const std::string& name) const;

  // Indices of the per-layer and shared tensors.
  std::size_t embedding = 0;
  std::size_t position = 0;          // valid iff use_positions
  std::size_t output_embedding = 0;  // valid iff !tie_embeddings
  struct Layer {
    std::size_t query, key, value, output;
    std::size_t ln1_gain, ln1_bias;
    std::size_t ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
    std::size_t ln2_gain, ln2_bias;
  };
  std::vector<Layer> layers;

 private:
  std::size_t add(std::string name, std::uint32_t rows, std::uint32_t cols, TensorRole role);

  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

// Closed-form parameter count, kept separate from ParamLayout.
std::size_t parameter_count(const ModelConfig& config);

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Parameter-sized buffers. A fixed base alignment keeps Eigen's vectorized
// reductions in the same order on every run.
template <typename T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Model {
  ModelConfig config;
  std::shared_ptr<const ParamLayout> layout;
  ParamVector<T> values;

  explicit Model(ModelConfig cfg);

  MatrixMap<T> tensor(std::size_t index);
  ConstMatrixMap<T> tensor(std::size_t index) const;
  // Table holding output embeddings (the input table when tied).
  std::size_t output_table() const noexcept {
    return config.tie_embeddings ? layout->embedding : layout->output_embedding;
  }

  template <typename U>
  Model<U> cast() const;
};

// Truncated normal (std, +-2 std) weights, zero biases, unit gains.
template <typename T>
Model<T> init_params(const ModelConfig& config, std::uint64_t seed, double init_std = 0.02);

// Per masked position: m distributions over the local token space.
struct PositionPrediction {
  std::uint32_t position = 0;
  std::uint32_t m = 0;
  std::uint32_t hash_size = 0;
  std::vector<double> probs;  // m * hash_size, function-major

  std::span<const double> function(std::uint32_t j) const {
    return std::span(probs).subspan(std::size_t{j} * hash_size, hash_size);
  }
};
using PredictionSet = std::vector<PositionPrediction>;

template <typename T>
struct ForwardResult {
  RowMatrix<T> hidden;          // final embeddings y, (m*n) x d
  RowMatrix<T> logits;          // per (position, j) row: hash_size block logits
  PredictionSet predictions;
};

// Runs the model on one digest and returns distributions at `positions`.
// Throws InvalidArgument for bad tokens and DivergenceError on non-finite values.
template <typename T>
ForwardResult<T> forward(const Model<T>& model, const BloomDigest& digest,
                         std::span<const std::uint32_t> positions);

// Sum over (position, function) of -log p[target]; targets are local tokens,
// m per prediction.
double loss(const PredictionSet& predictions, std::span<const TokenId> targets);

struct LossMode {
  enum class Kind { kFullSoftmax, kSampledSoftmax } kind = Kind::kFullSoftmax;
  std::uint32_t num_negatives = 0;
  std::uint64_t seed = 0;  // negatives are drawn from derive_seed(seed, row)
};

// Mean over examples of the per-example loss, and its gradient with respect
// to every parameter (written to `grad`, same layout as the model).
template <typename T>
double loss_and_gradient(const Model<T>& model, std::span<const MaskedExample> batch,
                         ParamVector<T>& grad, const LossMode& mode = {});

// Same objective without gradients.
template <typename T>
double batch_loss(const Model<T>& model, std::span<const MaskedExample> batch,
                  const LossMode& mode = {});

// Negatives for sampled softmax: `count` distinct tokens of [0, vocab) other
// than `target`, uniform without replacement, ascending.
std::vector<std::uint32_t> sample_negatives(std::uint32_t vocab, std::uint32_t target,
                                            std::uint32_t count, std::uint64_t seed);

// Cross-entropy of `target` against {target} U sampled negatives.
double sampled_softmax_loss(std::span<const double> logits, std::uint32_t target,
                            std::uint32_t num_negatives, std::uint64_t seed);

}  // namespace superbloom
