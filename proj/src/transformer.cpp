#include "superbloom/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "superbloom/error.hpp"
#include "superbloom/random.hpp"

namespace superbloom {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
ConstMatrixMap<T> view(const ParamVector<T>& buf, const TensorInfo& info) {
  return ConstMatrixMap<T>(buf.data() + info.offset, info.rows, info.cols);
}

template <typename T>
MatrixMap<T> view(ParamVector<T>& buf, const TensorInfo& info) {
  return MatrixMap<T>(buf.data() + info.offset, info.rows, info.cols);
}

template <typename T>
struct LayerCache {
  RowMatrix<T> input;
  RowMatrix<T> q, k, v;
  std::vector<RowMatrix<T>> attn;
  RowMatrix<T> heads;
  RowMatrix<T> xhat1;
  Vector<T> rstd1;
  RowMatrix<T> x1;
  RowMatrix<T> pre;
  RowMatrix<T> act;
  RowMatrix<T> xhat2;
  Vector<T> rstd2;
};

template <typename T>
struct TrunkCache {
  std::vector<LayerCache<T>> layers;
  RowMatrix<T> output;
};

template <typename T>
void layer_norm(const RowMatrix<T>& z, ConstMatrixMap<T> gain, ConstMatrixMap<T> bias,
                RowMatrix<T>& xhat, Vector<T>& rstd, RowMatrix<T>& out) {
  const auto cols = static_cast<T>(z.cols());
  xhat.resize(z.rows(), z.cols());
  rstd.resize(z.rows());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const T mean = z.row(r).sum() / cols;
    xhat.row(r) = z.row(r).array() - mean;
    const T var = xhat.row(r).squaredNorm() / cols;
    rstd(r) = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    xhat.row(r) *= rstd(r);
  }
  out = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <typename T>
RowMatrix<T> layer_norm_backward(const RowMatrix<T>& dout, const RowMatrix<T>& xhat,
                                 const Vector<T>& rstd, ConstMatrixMap<T> gain) {
  const auto cols = static_cast<T>(dout.cols());
  RowMatrix<T> dxhat = dout.array().rowwise() * gain.row(0).array();
  RowMatrix<T> dz(dout.rows(), dout.cols());
  for (Eigen::Index r = 0; r < dout.rows(); ++r) {
    const T mean_d = dxhat.row(r).sum() / cols;
    const T mean_dx = dxhat.row(r).dot(xhat.row(r)) / cols;
    dz.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return dz;
}

template <typename T>
void softmax_rows(RowMatrix<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const T mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename T>
void check_digest(const Model<T>& model, const BloomDigest& digest) {
  const auto& cfg = model.config;
  if (digest.m != cfg.m || digest.tokens.empty() || digest.tokens.size() % cfg.m != 0) {
    throw InvalidArgument("digest shape does not match the model (m=" + std::to_string(cfg.m) + ")");
  }
  if (digest.num_entities() > cfg.seq_len) {
    throw InvalidArgument("digest holds " + std::to_string(digest.num_entities()) +
                          " entities, model accepts at most " + std::to_string(cfg.seq_len));
  }
  for (TokenId t : digest.tokens) {
    if (t >= cfg.total_tokens()) throw InvalidArgument("token " + std::to_string(t) + " out of range");
  }
}

template <typename T>
void check_finite(const RowMatrix<T>& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string("non-finite values in ") + what);
}

template <typename T>
TrunkCache<T> forward_trunk(const Model<T>& model, const BloomDigest& digest) {
  check_digest(model, digest);
  const auto& cfg = model.config;
  const auto& lay = *model.layout;
  const auto& vals = model.values;
  const Eigen::Index s = static_cast<Eigen::Index>(digest.tokens.size());
  const Eigen::Index da = cfg.attention_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(da));

  TrunkCache<T> cache;
  RowMatrix<T> x(s, cfg.d);
  const auto emb = view(vals, lay.tensors()[lay.embedding]);
  for (Eigen::Index r = 0; r < s; ++r) x.row(r) = emb.row(digest.tokens[r]);
  if (cfg.use_positions) {
    const auto pos = view(vals, lay.tensors()[lay.position]);
    for (Eigen::Index r = 0; r < s; ++r) x.row(r) += pos.row(r / cfg.m);
  }

  cache.layers.resize(cfg.layers);
  for (std::uint32_t l = 0; l < cfg.layers; ++l) {
    auto& c = cache.layers[l];
    const auto& L = lay.layers[l];
    const auto& ts = lay.tensors();
    c.input = std::move(x);
    c.q.noalias() = c.input * view(vals, ts[L.query]);
    c.k.noalias() = c.input * view(vals, ts[L.key]);
    c.v.noalias() = c.input * view(vals, ts[L.value]);
    c.heads.resize(s, c.q.cols());
    c.attn.resize(cfg.heads);
    for (std::uint32_t a = 0; a < cfg.heads; ++a) {
      auto& p = c.attn[a];
      p.noalias() = c.q.middleCols(a * da, da) * c.k.middleCols(a * da, da).transpose();
      p *= inv_sqrt;
      softmax_rows(p);
      c.heads.middleCols(a * da, da).noalias() = p * c.v.middleCols(a * da, da);
    }
    RowMatrix<T> z1 = c.input;
    z1.noalias() += c.heads * view(vals, ts[L.output]).transpose();
    layer_norm<T>(z1, view(vals, ts[L.ln1_gain]), view(vals, ts[L.ln1_bias]), c.xhat1, c.rstd1, c.x1);

    c.pre.noalias() = c.x1 * view(vals, ts[L.ffn_in]);
    c.pre.rowwise() += view(vals, ts[L.ffn_in_bias]).row(0);
    c.act = c.pre.cwiseMax(T(0));
    RowMatrix<T> z2 = c.x1;
    z2.noalias() += c.act * view(vals, ts[L.ffn_out]).transpose();
    z2.rowwise() += view(vals, ts[L.ffn_out_bias]).row(0);
    layer_norm<T>(z2, view(vals, ts[L.ln2_gain]), view(vals, ts[L.ln2_bias]), c.xhat2, c.rstd2, x);
  }
  check_finite(x, "transformer activations");
  cache.output = std::move(x);
  return cache;
}

template <typename T>
void backward_trunk(const Model<T>& model, const BloomDigest& digest, const TrunkCache<T>& cache,
                    RowMatrix<T> dx, ParamVector<T>& grad) {
  const auto& cfg = model.config;
  const auto& lay = *model.layout;
  const auto& ts = lay.tensors();
  const auto& vals = model.values;
  const Eigen::Index da = cfg.attention_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(da));

  for (std::uint32_t li = cfg.layers; li-- > 0;) {
    const auto& c = cache.layers[li];
    const auto& L = lay.layers[li];

    view(grad, ts[L.ln2_gain]).row(0) += dx.cwiseProduct(c.xhat2).colwise().sum();
    view(grad, ts[L.ln2_bias]).row(0) += dx.colwise().sum();
    const RowMatrix<T> dz2 = layer_norm_backward<T>(dx, c.xhat2, c.rstd2, view(vals, ts[L.ln2_gain]));

    view(grad, ts[L.ffn_out]).noalias() += dz2.transpose() * c.act;
    view(grad, ts[L.ffn_out_bias]).row(0) += dz2.colwise().sum();
    RowMatrix<T> dpre = dz2 * view(vals, ts[L.ffn_out]);
    dpre = dpre.cwiseProduct((c.pre.array() > T(0)).template cast<T>().matrix());
    view(grad, ts[L.ffn_in]).noalias() += c.x1.transpose() * dpre;
    view(grad, ts[L.ffn_in_bias]).row(0) += dpre.colwise().sum();
    RowMatrix<T> dx1 = dz2;
    dx1.noalias() += dpre * view(vals, ts[L.ffn_in]).transpose();

    view(grad, ts[L.ln1_gain]).row(0) += dx1.cwiseProduct(c.xhat1).colwise().sum();
    view(grad, ts[L.ln1_bias]).row(0) += dx1.colwise().sum();
    const RowMatrix<T> dz1 = layer_norm_backward<T>(dx1, c.xhat1, c.rstd1, view(vals, ts[L.ln1_gain]));

    view(grad, ts[L.output]).noalias() += dz1.transpose() * c.heads;
    const RowMatrix<T> dheads = dz1 * view(vals, ts[L.output]);

    RowMatrix<T> dq(c.q.rows(), c.q.cols());
    RowMatrix<T> dk(c.k.rows(), c.k.cols());
    RowMatrix<T> dv(c.v.rows(), c.v.cols());
    for (std::uint32_t a = 0; a < cfg.heads; ++a) {
      const auto& p = c.attn[a];
      const auto dh = dheads.middleCols(a * da, da);
      dv.middleCols(a * da, da).noalias() = p.transpose() * dh;
      RowMatrix<T> dp = dh * c.v.middleCols(a * da, da).transpose();
      const Vector<T> row_dot = dp.cwiseProduct(p).rowwise().sum();
      RowMatrix<T> ds = p.cwiseProduct((dp.colwise() - row_dot));
      ds *= inv_sqrt;
      dq.middleCols(a * da, da).noalias() = ds * c.k.middleCols(a * da, da);
      dk.middleCols(a * da, da).noalias() = ds.transpose() * c.q.middleCols(a * da, da);
    }
    view(grad, ts[L.query]).noalias() += c.input.transpose() * dq;
    view(grad, ts[L.key]).noalias() += c.input.transpose() * dk;
    view(grad, ts[L.value]).noalias() += c.input.transpose() * dv;
    dx = dz1;
    dx.noalias() += dq * view(vals, ts[L.query]).transpose();
    dx.noalias() += dk * view(vals, ts[L.key]).transpose();
    dx.noalias() += dv * view(vals, ts[L.value]).transpose();
  }

  auto gemb = view(grad, ts[lay.embedding]);
  for (Eigen::Index r = 0; r < dx.rows(); ++r) gemb.row(digest.tokens[r]) += dx.row(r);
  if (cfg.use_positions) {
    auto gpos = view(grad, ts[lay.position]);
    for (Eigen::Index r = 0; r < dx.rows(); ++r) gpos.row(r / cfg.m) += dx.row(r);
  }
}

void check_example(const MaskedExample& ex, std::uint32_t m, std::uint32_t hash_size) {
  if (ex.targets.size() != ex.target_positions.size() * m) {
    throw InvalidArgument("example targets do not align with its masked positions");
  }
  if (ex.target_positions.empty()) throw InvalidArgument("example has no masked positions");
  for (std::uint32_t p : ex.target_positions) {
    if (p >= ex.input.num_entities()) throw InvalidArgument("masked position out of range");
  }
  for (TokenId t : ex.targets) {
    if (t >= hash_size) throw InvalidArgument("target token outside its function block");
  }
}

// Shared by training and evaluation of the objective. When `grad` is null only
// the loss is computed.
template <typename T>
double objective(const Model<T>& model, std::span<const MaskedExample> batch, ParamVector<T>* grad,
                 const LossMode& mode) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const auto& cfg = model.config;
  const std::uint32_t m = cfg.m;
  const std::uint32_t h = cfg.hash_size;
  const auto& lay = *model.layout;
  const auto& out_info = lay.tensors()[model.output_table()];
  const auto table = view(model.values, out_info);
  const T scale = T(1) / static_cast<T>(batch.size());

  std::vector<TrunkCache<T>> caches;
  caches.reserve(batch.size());
  std::size_t rows = 0;
  for (const auto& ex : batch) {
    check_example(ex, m, h);
    caches.push_back(forward_trunk(model, ex.input));
    rows += ex.num_targets();
  }
  if (grad) {
    grad->assign(model.values.size(), T(0));
  }
  std::vector<RowMatrix<T>> dout;
  if (grad) {
    for (const auto& c : caches) dout.emplace_back(RowMatrix<T>::Zero(c.output.rows(), cfg.d));
  }

  double total = 0.0;
  RowMatrix<T> y(static_cast<Eigen::Index>(rows), cfg.d);
  for (std::uint32_t j = 0; j < m; ++j) {
    std::vector<TokenId> target(rows);
    std::size_t r = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& ex = batch[b];
      for (std::size_t t = 0; t < ex.num_targets(); ++t, ++r) {
        y.row(static_cast<Eigen::Index>(r)) = caches[b].output.row(ex.target_positions[t] * m + j);
        target[r] = ex.targets[t * m + j];
      }
    }
    const auto block = table.middleRows(std::size_t{j} * h, h);
    RowMatrix<T> dy;
    if (grad) dy = RowMatrix<T>::Zero(y.rows(), cfg.d);

    if (mode.kind == LossMode::Kind::kFullSoftmax) {
      RowMatrix<T> logits = y * block.transpose();
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const T mx = logits.row(i).maxCoeff();
        const T shifted_target = logits(i, target[i]) - mx;
        logits.row(i) = (logits.row(i).array() - mx).exp();
        const T z = logits.row(i).sum();
        total -= static_cast<double>(shifted_target) - std::log(static_cast<double>(z));
        logits.row(i) /= z;
        logits(i, target[i]) -= T(1);
      }
      if (grad) {
        logits *= scale;
        view(*grad, out_info).middleRows(std::size_t{j} * h, h).noalias() += logits.transpose() * y;
        dy.noalias() = logits * block;
      }
    } else {
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        auto cand = sample_negatives(h, target[i], mode.num_negatives,
                                     derive_seed(mode.seed, j, static_cast<std::uint64_t>(i)));
        cand.insert(cand.begin(), target[i]);
        Vector<T> l(static_cast<Eigen::Index>(cand.size()));
        for (std::size_t c = 0; c < cand.size(); ++c) l(c) = block.row(cand[c]).dot(y.row(i));
        const T mx = l.maxCoeff();
        const T shifted_target = l(0) - mx;
        l = (l.array() - mx).exp();
        const T z = l.sum();
        total -= static_cast<double>(shifted_target) - std::log(static_cast<double>(z));
        if (grad) {
          l /= z;
          l(0) -= T(1);
          l *= scale;
          auto gblock = view(*grad, out_info).middleRows(std::size_t{j} * h, h);
          for (std::size_t c = 0; c < cand.size(); ++c) {
            gblock.row(cand[c]) += l(c) * y.row(i);
            dy.row(i) += l(c) * block.row(cand[c]);
          }
        }
      }
    }

    if (grad) {
      r = 0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        for (std::size_t t = 0; t < ex.num_targets(); ++t, ++r) {
          dout[b].row(ex.target_positions[t] * m + j) += dy.row(static_cast<Eigen::Index>(r));
        }
      }
    }
  }

  if (grad) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      backward_trunk(model, batch[b].input, caches[b], std::move(dout[b]), *grad);
    }
  }
  const double mean = total / static_cast<double>(batch.size());
  if (!std::isfinite(mean)) throw DivergenceError("non-finite loss");
  return mean;
}

}  // namespace

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || ffn_dim == 0 || m == 0 || hash_size == 0 || seq_len == 0) {
    throw ConfigError("model dimensions must all be at least 1");
  }
  if (attention_dim() == 0 || std::uint64_t{heads} * attention_dim() > d) {
    throw ConfigError("heads * head_dim must not exceed d");
  }
}

ModelConfig ModelConfig::for_scheme(const HashScheme& scheme) {
  ModelConfig cfg;
  cfg.m = scheme.num_functions();
  cfg.hash_size = scheme.hash_size();
  cfg.num_specials = scheme.num_specials();
  return cfg;
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const std::uint32_t d = config.d;
  const std::uint32_t hd = config.heads * config.attention_dim();
  embedding = add("embedding", config.total_tokens(), d, TensorRole::kWeight);
  if (config.use_positions) position = add("position", config.seq_len, d, TensorRole::kWeight);
  for (std::uint32_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer L{};
    L.query = add(p + "attention.query", d, hd, TensorRole::kWeight);
    L.key = add(p + "attention.key", d, hd, TensorRole::kWeight);
    L.value = add(p + "attention.value", d, hd, TensorRole::kWeight);
    L.output = add(p + "attention.output", d, hd, TensorRole::kWeight);
    L.ln1_gain = add(p + "attention_norm.gain", 1, d, TensorRole::kGain);
    L.ln1_bias = add(p + "attention_norm.bias", 1, d, TensorRole::kBias);
    L.ffn_in = add(p + "ffn.in", d, config.ffn_dim, TensorRole::kWeight);
    L.ffn_in_bias = add(p + "ffn.in_bias", 1, config.ffn_dim, TensorRole::kBias);
    L.ffn_out = add(p + "ffn.out", d, config.ffn_dim, TensorRole::kWeight);
    L.ffn_out_bias = add(p + "ffn.out_bias", 1, d, TensorRole::kBias);
    L.ln2_gain = add(p + "ffn_norm.gain", 1, d, TensorRole::kGain);
    L.ln2_bias = add(p + "ffn_norm.bias", 1, d, TensorRole::kBias);
    layers.push_back(L);
  }
  if (!config.tie_embeddings) {
    output_embedding = add("output_embedding", config.total_tokens(), d, TensorRole::kWeight);
  }
}

std::size_t ParamLayout::add(std::string name, std::uint32_t rows, std::uint32_t cols, TensorRole role) {
  TensorInfo info{std::move(name), rows, cols, total_, role};
  total_ += info.size();
  tensors_.push_back(std::move(info));
  return tensors_.size() - 1;
}

const TensorInfo& ParamLayout::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw InvalidArgument("no parameter tensor named " + name);
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d;
  const std::size_t hd = std::size_t{c.heads} * c.attention_dim();
  const std::size_t tokens = c.total_tokens();
  const std::size_t per_layer = 4 * d * hd + 2 * d * c.ffn_dim + c.ffn_dim + 5 * d;
  std::size_t n = tokens * d + c.layers * per_layer;
  if (c.use_positions) n += std::size_t{c.seq_len} * d;
  if (!c.tie_embeddings) n += tokens * d;
  return n;
}

template <typename T>
Model<T>::Model(ModelConfig cfg)
    : config(cfg), layout(std::make_shared<const ParamLayout>(cfg)), values(layout->total_size(), T(0)) {}

template <typename T>
MatrixMap<T> Model<T>::tensor(std::size_t index) {
  return view(values, layout->tensors().at(index));
}

template <typename T>
ConstMatrixMap<T> Model<T>::tensor(std::size_t index) const {
  return view(values, layout->tensors().at(index));
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out(config);
  std::transform(values.begin(), values.end(), out.values.begin(),
                 [](T v) { return static_cast<U>(v); });
  return out;
}

template <typename T>
Model<T> init_params(const ModelConfig& config, std::uint64_t seed, double init_std) {
  Model<T> model(config);
  const auto& tensors = model.layout->tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& info = tensors[i];
    auto* p = model.values.data() + info.offset;
    switch (info.role) {
      case TensorRole::kBias:
        std::fill(p, p + info.size(), T(0));
        break;
      case TensorRole::kGain:
        std::fill(p, p + info.size(), T(1));
        break;
      case TensorRole::kWeight: {
        Rng rng(derive_seed(seed, i));
        for (std::size_t k = 0; k < info.size(); ++k) {
          double z;
          do {
            z = rng.normal();
          } while (std::abs(z) > 2.0);
          p[k] = static_cast<T>(z * init_std);
        }
        break;
      }
    }
  }
  return model;
}

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const BloomDigest& digest,
                         std::span<const std::uint32_t> positions) {
  const auto& cfg = model.config;
  auto cache = forward_trunk(model, digest);
  ForwardResult<T> result;
  const auto table = model.tensor(model.output_table());
  const std::uint32_t h = cfg.hash_size;
  result.logits.resize(static_cast<Eigen::Index>(positions.size() * cfg.m), h);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    if (positions[p] >= digest.num_entities()) throw InvalidArgument("position out of range");
    PositionPrediction pred;
    pred.position = positions[p];
    pred.m = cfg.m;
    pred.hash_size = h;
    pred.probs.resize(std::size_t{cfg.m} * h);
    for (std::uint32_t j = 0; j < cfg.m; ++j) {
      const auto row = static_cast<Eigen::Index>(p * cfg.m + j);
      result.logits.row(row).noalias() =
          cache.output.row(positions[p] * cfg.m + j) * table.middleRows(std::size_t{j} * h, h).transpose();
      const auto logits = result.logits.row(row);
      const double mx = static_cast<double>(logits.maxCoeff());
      double z = 0.0;
      for (std::uint32_t t = 0; t < h; ++t) z += std::exp(static_cast<double>(logits(t)) - mx);
      for (std::uint32_t t = 0; t < h; ++t) {
        pred.probs[std::size_t{j} * h + t] = std::exp(static_cast<double>(logits(t)) - mx) / z;
      }
    }
    result.predictions.push_back(std::move(pred));
  }
  result.hidden = std::move(cache.output);
  return result;
}

double loss(const PredictionSet& predictions, std::span<const TokenId> targets) {
  double total = 0.0;
  std::size_t k = 0;
  for (const auto& pred : predictions) {
    for (std::uint32_t j = 0; j < pred.m; ++j, ++k) {
      if (k >= targets.size()) throw InvalidArgument("fewer targets than predictions");
      if (targets[k] >= pred.hash_size) throw InvalidArgument("target token outside its function block");
      total -= std::log(pred.function(j)[targets[k]]);
    }
  }
  if (k != targets.size()) throw InvalidArgument("more targets than predictions");
  return total;
}

template <typename T>
double loss_and_gradient(const Model<T>& model, std::span<const MaskedExample> batch,
                         ParamVector<T>& grad, const LossMode& mode) {
  return objective(model, batch, &grad, mode);
}

template <typename T>
double batch_loss(const Model<T>& model, std::span<const MaskedExample> batch, const LossMode& mode) {
  return objective<T>(model, batch, nullptr, mode);
}

std::vector<std::uint32_t> sample_negatives(std::uint32_t vocab, std::uint32_t target,
                                            std::uint32_t count, std::uint64_t seed) {
  if (target >= vocab) throw InvalidArgument("sampled softmax target out of range");
  if (count >= vocab) {
    throw InvalidArgument("num_negatives (" + std::to_string(count) +
                          ") must be smaller than the vocabulary (" + std::to_string(vocab) + ")");
  }
  Rng rng(seed);
  std::vector<std::uint32_t> picked;
  picked.reserve(count);
  if (std::uint64_t{count} * 4 >= vocab) {
    // Dense case: partial Fisher-Yates over all non-target tokens.
    std::vector<std::uint32_t> pool;
    pool.reserve(vocab - 1);
    for (std::uint32_t t = 0; t < vocab; ++t) {
      if (t != target) pool.push_back(t);
    }
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    picked.assign(pool.begin(), pool.begin() + count);
  } else {
    std::vector<bool> used(vocab, false);
    used[target] = true;
    while (picked.size() < count) {
      const auto t = static_cast<std::uint32_t>(rng.below(vocab));
      if (!used[t]) {
        used[t] = true;
        picked.push_back(t);
      }
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

double sampled_softmax_loss(std::span<const double> logits, std::uint32_t target,
                            std::uint32_t num_negatives, std::uint64_t seed) {
  const auto negatives =
      sample_negatives(static_cast<std::uint32_t>(logits.size()), target, num_negatives, seed);
  double mx = logits[target];
  for (auto t : negatives) mx = std::max(mx, logits[t]);
  double z = std::exp(logits[target] - mx);
  for (auto t : negatives) z += std::exp(logits[t] - mx);
  return -(logits[target] - mx - std::log(z));
}

#define SUPERBLOOM_INSTANTIATE(T)                                                              \
  template struct Model<T>;                                                                    \
  template Model<T> init_params<T>(const ModelConfig&, std::uint64_t, double);                 \
  template ForwardResult<T> forward<T>(const Model<T>&, const BloomDigest&,                    \
                                       std::span<const std::uint32_t>);                        \
  template double loss_and_gradient<T>(const Model<T>&, std::span<const MaskedExample>,        \
                                       ParamVector<T>&, const LossMode&);                      \
  template double batch_loss<T>(const Model<T>&, std::span<const MaskedExample>, const LossMode&);

SUPERBLOOM_INSTANTIATE(float)
SUPERBLOOM_INSTANTIATE(double)
#undef SUPERBLOOM_INSTANTIATE

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace superbloom
