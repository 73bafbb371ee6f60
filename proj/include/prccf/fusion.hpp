#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prccf/nn/layers.hpp"

namespace prccf::fusion {

// Switches for the five ablations. use_persona_sim requires use_pr;
// use_causal and use_filter require use_ccf.
struct AblationFlags {
  bool use_pr = true;
  bool use_persona_sim = true;
  bool use_ccf = true;
  bool use_causal = true;
  bool use_filter = true;

  void validate() const;
  bool operator==(const AblationFlags&) const = default;

  static AblationFlags full() { return {}; }
  static AblationFlags without_pr() { return {false, false, true, true, true}; }
  static AblationFlags without_persona_sim() { return {true, false, true, true, true}; }
  static AblationFlags without_ccf() { return {true, true, false, false, false}; }
  static AblationFlags without_causal() { return {true, true, true, false, true}; }
  static AblationFlags without_filter() { return {true, true, true, true, false}; }
};

struct NamedAblation {
  std::string name;
  AblationFlags flags;
};

// The full model followed by the five single-component ablations.
std::vector<NamedAblation> ablation_table();

// Which of the five fusion terms take part:
// H_CTX, tilde_H_P, tilde_H_C, hat_H_P, hat_H_C.
std::array<bool, 5> active_terms(const AblationFlags& flags);

struct CrossAttention {
  nn::Tensor Z;      // softmax(H_CTX H_X^T) H_X
  nn::Tensor tilde;  // LayerNorm(H_CTX + Z)
  nn::Tensor hat;    // LayerNorm(H_CTX + knowledge-to-context alignment)
};

// Attention weights for every query row over the key rows (no scaling).
nn::Tensor attention_weights(const nn::Tensor& queries, const nn::Tensor& keys);

// Context-to-source attention and its reverse. For the reverse direction each
// source row first attends over the context; the context then re-attends over
// those aligned rows so the result has the context's length.
CrossAttention cross_attend(const nn::Tensor& context, const nn::Tensor& source, const nn::LayerNorm& tilde_norm,
                            const nn::LayerNorm& hat_norm);

struct FusionState {
  std::optional<CrossAttention> demonstrations;  // Z_P, tilde_H_P, hat_H_P
  std::optional<CrossAttention> cognition;       // Z_C, tilde_H_C, hat_H_C
  nn::Tensor lambda;                             // 1 x 5, zero for inactive terms
  nn::Tensor H_fin;
  nn::Tensor H_fin_norm;
};

class FusionLayer {
 public:
  static constexpr const char* kStage = "fusion";

  FusionLayer(nn::ParameterStore& store, nn::Index hidden);

  // lambda = softmax(w) over the terms active under `flags`.
  nn::Tensor lambda(const AblationFlags& flags) const;
  FusionState fuse(const nn::Tensor& context, const std::optional<nn::Tensor>& demonstrations,
                   const std::optional<nn::Tensor>& cognition, const AblationFlags& flags) const;

  nn::Tensor& weights() { return w_; }
  const nn::Tensor& weights() const { return w_; }
  const nn::LayerNorm& final_norm() const { return final_norm_; }

 private:
  nn::Tensor w_;  // 1 x 5 trainable fusion logits
  nn::LayerNorm tilde_p_, tilde_c_, hat_p_, hat_c_, final_norm_;
};

struct GenerationConfig {
  int top_k = 10;
  double top_p = 0.9;
  double repetition_penalty = 1.03;
  int max_new_tokens = 50;
  std::uint64_t seed = 42;

  void validate() const;
};

// Positive logits of already-emitted tokens are divided by `penalty`, negative
// ones multiplied, so the penalty always lowers their probability.
void apply_repetition_penalty(std::span<double> logits, std::span<const int> emitted, double penalty);

// Probabilities after top-k then nucleus (top-p) truncation, renormalised.
// Entries set to -inf in `logits` are never kept. Ties keep the lower id.
std::vector<double> truncated_distribution(std::span<const double> logits, int top_k, double top_p);

// Draws an index from a probability vector.
int sample_index(std::span<const double> probs, nn::Rng& rng);

}  // namespace prccf::fusion
