#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "prccf/nn/ops.hpp"
#include "prccf/nn/tensor.hpp"

namespace prccf::nn {

// Seeded generator with distribution code of our own so draws are identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double normal(double mean = 0.0, double stddev = 1.0);
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct NamedParameter {
  std::string name;
  std::string stage;  // groups parameters for update statistics
  Tensor tensor;
};

class ParameterStore {
 public:
  Tensor add(std::string name, std::string stage, Matrix init);
  std::vector<NamedParameter>& all() { return params_; }
  const std::vector<NamedParameter>& all() const { return params_; }
  void zero_grad();
  std::size_t count() const;

  void save(const std::filesystem::path& path) const;
  // Names and shapes must match the file exactly.
  void load(const std::filesystem::path& path);

 private:
  std::vector<NamedParameter> params_;
};

Matrix init_normal(Rng& rng, Index rows, Index cols, double stddev = 0.02);

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage, Index in, Index out);
  Tensor operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, const std::string& stage, Index dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage,
                     Index dim, int heads);
  // Scaled dot-product attention; `mask` is additive over (query, key).
  Tensor operator()(const Tensor& queries, const Tensor& keys, const Matrix* mask) const;
};

struct FeedForward {
  Linear in, out;

  FeedForward() = default;
  FeedForward(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage, Index dim,
              Index hidden);
  Tensor operator()(const Tensor& x) const { return out(gelu(in(x))); }
};

// Pre-norm transformer encoder layer.
struct EncoderLayer {
  LayerNorm norm_attn, norm_ffn;
  MultiHeadAttention attn;
  FeedForward ffn;

  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage, Index dim,
               int heads);
  Tensor operator()(const Tensor& x, const Matrix* mask) const;
};

struct TransformerEncoder {
  std::vector<EncoderLayer> layers;
  LayerNorm final_norm;

  TransformerEncoder() = default;
  TransformerEncoder(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage,
                     Index dim, int heads, int num_layers);
  Tensor operator()(const Tensor& x, const Matrix* mask = nullptr) const;
};

// Pre-norm decoder layer: causal self-attention, cross-attention, feed-forward.
struct DecoderLayer {
  LayerNorm norm_self, norm_cross, norm_ffn;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  DecoderLayer() = default;
  DecoderLayer(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage, Index dim,
               int heads);
  Tensor operator()(const Tensor& x, const Tensor& memory, const Matrix& causal_mask) const;
};

struct TransformerDecoder {
  std::vector<DecoderLayer> layers;
  LayerNorm final_norm;

  TransformerDecoder() = default;
  TransformerDecoder(ParameterStore& store, Rng& rng, const std::string& name, const std::string& stage,
                     Index dim, int heads, int num_layers);
  Tensor operator()(const Tensor& x, const Tensor& memory) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
};

// Adaptive-moment optimizer over a ParameterStore.
class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig cfg = {});

  // Applies one update at learning rate `lr` and returns mean |delta| per stage.
  std::map<std::string, double> step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  ParameterStore& store_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace prccf::nn
