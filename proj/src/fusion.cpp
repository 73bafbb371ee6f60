#include "prccf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "prccf/errors.hpp"

namespace prccf::fusion {

void AblationFlags::validate() const {
  if (use_persona_sim && !use_pr) throw ContractViolation("persona similarity requires persona-guided retrieval");
  if ((use_causal || use_filter) && !use_ccf)
    throw ContractViolation("causal masking and knowledge filtering require cognitive filtering");
}

std::vector<NamedAblation> ablation_table() {
  return {{"PRCCF", AblationFlags::full()},
          {"w/o PR", AblationFlags::without_pr()},
          {"w/o Per_sim", AblationFlags::without_persona_sim()},
          {"w/o CCF", AblationFlags::without_ccf()},
          {"w/o Causal", AblationFlags::without_causal()},
          {"w/o Filter", AblationFlags::without_filter()}};
}

std::array<bool, 5> active_terms(const AblationFlags& flags) {
  return {true, flags.use_pr, flags.use_ccf, flags.use_pr, flags.use_ccf};
}

nn::Tensor attention_weights(const nn::Tensor& queries, const nn::Tensor& keys) {
  return nn::softmax_rows(nn::matmul_nt(queries, keys));
}

CrossAttention cross_attend(const nn::Tensor& context, const nn::Tensor& source, const nn::LayerNorm& tilde_norm,
                            const nn::LayerNorm& hat_norm) {
  if (context.cols() != source.cols())
    throw ContractViolation("cross_attend: hidden size mismatch " + std::to_string(context.cols()) + " vs " +
                            std::to_string(source.cols()));
  CrossAttention out;
  out.Z = nn::matmul(attention_weights(context, source), source);
  out.tilde = tilde_norm(nn::add(context, out.Z));
  const nn::Tensor aligned = nn::matmul(attention_weights(source, context), context);
  const nn::Tensor back = nn::matmul(attention_weights(context, aligned), aligned);
  out.hat = hat_norm(nn::add(context, back));
  return out;
}

FusionLayer::FusionLayer(nn::ParameterStore& store, nn::Index hidden)
    : w_(store.add("fusion.w", kStage, nn::Matrix::Zero(1, 5))),
      tilde_p_(store, "fusion.tilde_p", kStage, hidden),
      tilde_c_(store, "fusion.tilde_c", kStage, hidden),
      hat_p_(store, "fusion.hat_p", kStage, hidden),
      hat_c_(store, "fusion.hat_c", kStage, hidden),
      final_norm_(store, "fusion.final_norm", kStage, hidden) {}

nn::Tensor FusionLayer::lambda(const AblationFlags& flags) const {
  const auto active = active_terms(flags);
  return nn::masked_softmax(w_, active);
}

FusionState FusionLayer::fuse(const nn::Tensor& context, const std::optional<nn::Tensor>& demonstrations,
                              const std::optional<nn::Tensor>& cognition, const AblationFlags& flags) const {
  flags.validate();
  if (flags.use_pr && !demonstrations) throw ContractViolation("fuse: demonstrations enabled but missing");
  if (flags.use_ccf && !cognition) throw ContractViolation("fuse: cognition enabled but missing");

  FusionState s;
  if (flags.use_pr) s.demonstrations = cross_attend(context, *demonstrations, tilde_p_, hat_p_);
  if (flags.use_ccf) s.cognition = cross_attend(context, *cognition, tilde_c_, hat_c_);
  s.lambda = lambda(flags);

  // Inactive terms carry weight exactly 0; H_CTX stands in for them.
  const std::array<nn::Tensor, 5> terms{
      context,
      s.demonstrations ? s.demonstrations->tilde : context,
      s.cognition ? s.cognition->tilde : context,
      s.demonstrations ? s.demonstrations->hat : context,
      s.cognition ? s.cognition->hat : context,
  };
  std::vector<nn::Tensor> used;
  std::vector<nn::Index> cols;
  const auto active = active_terms(flags);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (!active[k]) continue;
    used.push_back(terms[k]);
    cols.push_back(static_cast<nn::Index>(k));
  }
  std::vector<nn::Tensor> weight_cols;
  for (auto c : cols) weight_cols.push_back(nn::slice_cols(s.lambda, c, 1));
  s.H_fin = nn::weighted_sum(used, nn::concat_cols(weight_cols));
  s.H_fin_norm = final_norm_(s.H_fin);
  return s;
}

void GenerationConfig::validate() const {
  if (top_k < 1) throw ContractViolation("top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ContractViolation("top_p must be in (0, 1]");
  if (repetition_penalty < 1.0) throw ContractViolation("repetition_penalty must be >= 1");
  if (max_new_tokens < 1) throw ContractViolation("max_new_tokens must be >= 1");
}

void apply_repetition_penalty(std::span<double> logits, std::span<const int> emitted, double penalty) {
  std::vector<bool> seen(logits.size(), false);
  for (int id : emitted)
    if (id >= 0 && static_cast<std::size_t>(id) < logits.size()) seen[static_cast<std::size_t>(id)] = true;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!seen[i]) continue;
    logits[i] = logits[i] > 0.0 ? logits[i] / penalty : logits[i] * penalty;
  }
}

std::vector<double> truncated_distribution(std::span<const double> logits, int top_k, double top_p) {
  std::vector<int> order;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (std::isfinite(logits[i])) order.push_back(static_cast<int>(i));
  if (order.empty()) throw ContractViolation("no candidate tokens to sample from");
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
  });
  if (static_cast<int>(order.size()) > top_k) order.resize(static_cast<std::size_t>(top_k));

  const double m = logits[static_cast<std::size_t>(order.front())];
  std::vector<double> p;
  for (int id : order) p.push_back(std::exp(logits[static_cast<std::size_t>(id)] - m));
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= z;

  std::size_t keep = 0;
  double cum = 0.0;
  while (keep < p.size()) {
    cum += p[keep++];
    if (cum >= top_p) break;
  }
  const double kept_mass = std::accumulate(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(keep), 0.0);
  std::vector<double> out(logits.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[static_cast<std::size_t>(order[i])] = p[i] / kept_mass;
  return out;
}

int sample_index(std::span<const double> probs, nn::Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  if (last < 0) throw ContractViolation("sample_index: empty distribution");
  return last;
}

}  // namespace prccf::fusion
