#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace oracle {

using superbloom::HashScheme;
using superbloom::Model;
using superbloom::PositionPrediction;
using Mat = std::vector<std::vector<double>>;

namespace {

double at(const Model<double>& model, const std::string& name, std::size_t r, std::size_t c) {
  const auto& info = model.layout->find(name);
  return model.values[info.offset + r * info.cols + c];
}

Mat layer_norm(const Model<double>& model, const Mat& z, const std::string& prefix) {
  Mat out = z;
  for (std::size_t r = 0; r < z.size(); ++r) {
    const std::size_t n = z[r].size();
    double mean = 0.0;
    for (double v : z[r]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : z[r]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t c = 0; c < n; ++c) {
      out[r][c] = (z[r][c] - mean) / std::sqrt(var + 1e-5) * at(model, prefix + ".gain", 0, c) +
                  at(model, prefix + ".bias", 0, c);
    }
  }
  return out;
}

}  // namespace

Mat forward_hidden(const Model<double>& model, const superbloom::BloomDigest& digest) {
  const auto& cfg = model.config;
  const std::size_t s = digest.tokens.size();
  const std::size_t d = cfg.d;
  const std::size_t da = cfg.attention_dim();
  Mat x(s, std::vector<double>(d));
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      x[r][c] = at(model, "embedding", digest.tokens[r], c);
      if (cfg.use_positions) x[r][c] += at(model, "position", r / cfg.m, c);
    }
  }
  for (std::uint32_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Mat z1 = x;
    for (std::uint32_t a = 0; a < cfg.heads; ++a) {
      Mat q(s, std::vector<double>(da)), k = q, v = q;
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t e = 0; e < da; ++e) {
          for (std::size_t c = 0; c < d; ++c) {
            q[r][e] += x[r][c] * at(model, p + "attention.query", c, a * da + e);
            k[r][e] += x[r][c] * at(model, p + "attention.key", c, a * da + e);
            v[r][e] += x[r][c] * at(model, p + "attention.value", c, a * da + e);
          }
        }
      }
      for (std::size_t r = 0; r < s; ++r) {
        std::vector<double> w(s);
        double mx = -INFINITY;
        for (std::size_t t = 0; t < s; ++t) {
          for (std::size_t e = 0; e < da; ++e) w[t] += q[r][e] * k[t][e];
          w[t] /= std::sqrt(static_cast<double>(da));
          mx = std::max(mx, w[t]);
        }
        double z = 0.0;
        for (auto& wt : w) z += (wt = std::exp(wt - mx));
        std::vector<double> head(da);
        for (std::size_t t = 0; t < s; ++t) {
          for (std::size_t e = 0; e < da; ++e) head[e] += w[t] / z * v[t][e];
        }
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t e = 0; e < da; ++e) {
            z1[r][c] += head[e] * at(model, p + "attention.output", c, a * da + e);
          }
        }
      }
    }
    const Mat x1 = layer_norm(model, z1, p + "attention_norm");
    Mat z2 = x1;
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t f = 0; f < cfg.ffn_dim; ++f) {
        double pre = at(model, p + "ffn.in_bias", 0, f);
        for (std::size_t c = 0; c < d; ++c) pre += x1[r][c] * at(model, p + "ffn.in", c, f);
        if (pre <= 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) z2[r][c] += pre * at(model, p + "ffn.out", c, f);
      }
      for (std::size_t c = 0; c < d; ++c) z2[r][c] += at(model, p + "ffn.out_bias", 0, c);
    }
    x = layer_norm(model, z2, p + "ffn_norm");
  }
  return x;
}

std::vector<double> position_probs(const Model<double>& model, const Mat& hidden, std::uint32_t position) {
  const auto& cfg = model.config;
  const std::string table = cfg.tie_embeddings ? "embedding" : "output_embedding";
  std::vector<double> out;
  for (std::uint32_t j = 0; j < cfg.m; ++j) {
    const auto& y = hidden[std::size_t{position} * cfg.m + j];
    std::vector<double> logits(cfg.hash_size);
    for (std::uint32_t t = 0; t < cfg.hash_size; ++t) {
      for (std::size_t c = 0; c < cfg.d; ++c) logits[t] += y[c] * at(model, table, j * cfg.hash_size + t, c);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    for (double l : logits) out.push_back(std::exp(l - mx) / z);
  }
  return out;
}

std::size_t complete_collisions(const HashScheme& scheme) {
  const std::uint32_t n = scheme.vocab_size();
  std::size_t count = 0;
  for (std::uint32_t a = 0; a < n; ++a) {
    for (std::uint32_t b = a + 1; b < n; ++b) {
      bool all = true;
      for (std::uint32_t j = 0; j < scheme.num_functions() && all; ++j) {
        all = scheme.forward(j)[a] == scheme.forward(j)[b];
      }
      count += all;
    }
  }
  return count;
}

bool certificate_check(const superbloom::RankedResult& result, const PositionPrediction& prediction,
                       const HashScheme& scheme, const superbloom::ScoreFunction& score) {
  if (!result.exact) return true;
  const std::uint32_t m = scheme.num_functions();
  std::vector<double> all(scheme.vocab_size());
  std::vector<double> rho(m);
  for (std::uint32_t s = 0; s < scheme.vocab_size(); ++s) {
    for (std::uint32_t j = 0; j < m; ++j) rho[j] = prediction.function(j)[scheme.forward(j)[s]];
    all[s] = score(rho);
  }
  if (result.items.empty() || result.items.size() != result.scores.size()) return false;
  std::vector<bool> returned(all.size());
  for (std::size_t i = 0; i < result.items.size(); ++i) {
    if (all[result.items[i]] != result.scores[i] || returned[result.items[i]]) return false;
    returned[result.items[i]] = true;
    if (i > 0 && result.scores[i] > result.scores[i - 1]) return false;
  }
  const double last = result.scores.back();
  const auto last_id = result.items.back();
  for (std::uint32_t s = 0; s < all.size(); ++s) {
    if (returned[s]) continue;
    if (all[s] > last || (all[s] == last && s < last_id)) return false;
  }
  return true;
}

PositionPrediction random_prediction(const HashScheme& scheme, double temperature, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  PositionPrediction pred;
  pred.m = scheme.num_functions();
  pred.hash_size = scheme.hash_size();
  pred.probs.resize(std::size_t{pred.m} * pred.hash_size);
  for (std::uint32_t j = 0; j < pred.m; ++j) {
    double z = 0.0;
    for (std::uint32_t t = 0; t < pred.hash_size; ++t) {
      auto& p = pred.probs[std::size_t{j} * pred.hash_size + t];
      p = std::exp(temperature * normal(gen));
      z += p;
    }
    for (std::uint32_t t = 0; t < pred.hash_size; ++t) pred.probs[std::size_t{j} * pred.hash_size + t] /= z;
  }
  return pred;
}

}  // namespace oracle
