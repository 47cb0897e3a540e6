#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mistere/nn.hpp"

namespace mistere {

struct FusionConfig {
  std::size_t speech_dim = 64;
  std::size_t text_dim = 64;
  std::size_t model_dim = 120;
  std::size_t heads = 4;
  std::size_t layers = 4;  // self-attention layers per stream
  double dropout = 0.5;
  std::size_t ff_multiplier = 4;
  std::size_t class_count = 4;

  void validate() const;
};

struct FusionState {
  Value m_ts;    // speech queries attending to text, N x model_dim
  Value m_st;    // text queries attending to speech
  Value m_s;     // speech stream after self-attention
  Value m_t;     // text stream after self-attention
  Value logits;  // N x |Y|; undefined without a head
};

/// Pre-LN transformer block: x + drop(MHA(LN(x))), then x + drop(FF(LN(x)))
/// with a ReLU feed-forward of width ff_multiplier * dim.
struct SelfAttentionBlock {
  nn::LayerNorm ln_attn;
  nn::MultiHeadAttention attn;
  nn::LayerNorm ln_ff;
  nn::Linear ff_in;
  nn::Linear ff_out;

  static SelfAttentionBlock create(ParameterSet& params, const std::string& prefix,
                                   const FusionConfig& cfg, Rng& rng);
  Value operator()(const Value& x, const nn::Mask& mask, double dropout_p,
                   const ForwardContext& ctx) const;
};

/// Multimodal expert.
///
///   P_s = FC(E_s), P_t = FC(E_t)
///   M^{t->s} = LN(P_s + MHA(P_s, P_t, P_t))
///   M^{s->t} = LN(P_t + MHA(P_t, P_s, P_s))
///   M^s = SelfAttn^L(M^{t->s}),  M^t = SelfAttn^L(M^{s->t})
///   logits = FC([M^s ; M^t])
///
/// Parameters live under "fusion.*" (or the prefix given to `create`).
class FusionNet {
 public:
  static FusionNet create(ParameterSet& params, const std::string& prefix,
                          const FusionConfig& cfg, Rng& rng, bool with_head = true);

  FusionState forward(const Value& speech, const Value& text, const nn::Mask& mask,
                      const ForwardContext& ctx) const;

  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  nn::Linear proj_s_, proj_t_;
  nn::MultiHeadAttention cross_ts_, cross_st_;
  nn::LayerNorm ln_ts_, ln_st_;
  std::vector<SelfAttentionBlock> self_s_, self_t_;
  std::optional<nn::Linear> head_;
};

/// The representations consumed by the contrastive loss (un-normalized).
inline std::pair<Value, Value> fusion_representations(const FusionState& s) {
  return {s.m_s, s.m_t};
}

}  // namespace mistere
