#include "mistere/fusion_net.hpp"

namespace mistere {

void FusionConfig::validate() const {
  if (speech_dim == 0 || text_dim == 0 || model_dim == 0 || class_count == 0 ||
      ff_multiplier == 0) {
    throw std::invalid_argument("FusionConfig: dimensions must be >= 1");
  }
  if (heads == 0 || model_dim % heads != 0) {
    throw std::invalid_argument("FusionConfig: model_dim " + std::to_string(model_dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("FusionConfig: dropout must lie in [0, 1)");
  }
}

SelfAttentionBlock SelfAttentionBlock::create(ParameterSet& params, const std::string& prefix,
                                              const FusionConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.model_dim;
  SelfAttentionBlock b;
  b.ln_attn = nn::LayerNorm::create(params, prefix + ".ln_attn", d);
  b.attn = nn::MultiHeadAttention::create(params, prefix + ".attn", d, cfg.heads, rng);
  b.ln_ff = nn::LayerNorm::create(params, prefix + ".ln_ff", d);
  b.ff_in = nn::Linear::create(params, prefix + ".ff_in", d, cfg.ff_multiplier * d, rng);
  b.ff_out = nn::Linear::create(params, prefix + ".ff_out", cfg.ff_multiplier * d, d, rng);
  return b;
}

Value SelfAttentionBlock::operator()(const Value& x, const nn::Mask& mask, double dropout_p,
                                     const ForwardContext& ctx) const {
  const Value normed = ln_attn(x);
  const Value h = add(x, dropout(attn(normed, normed, mask), dropout_p, ctx));
  const Value ff = ff_out(relu(ff_in(ln_ff(h))));
  return add(h, dropout(ff, dropout_p, ctx));
}

FusionNet FusionNet::create(ParameterSet& params, const std::string& prefix,
                            const FusionConfig& cfg, Rng& rng, bool with_head) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  FusionNet net;
  net.cfg_ = cfg;
  net.proj_s_ = nn::Linear::create(params, prefix + ".proj_s", cfg.speech_dim, d, rng);
  net.proj_t_ = nn::Linear::create(params, prefix + ".proj_t", cfg.text_dim, d, rng);
  net.cross_ts_ = nn::MultiHeadAttention::create(params, prefix + ".cross_ts", d, cfg.heads, rng);
  net.cross_st_ = nn::MultiHeadAttention::create(params, prefix + ".cross_st", d, cfg.heads, rng);
  net.ln_ts_ = nn::LayerNorm::create(params, prefix + ".ln_ts", d);
  net.ln_st_ = nn::LayerNorm::create(params, prefix + ".ln_st", d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    net.self_s_.push_back(SelfAttentionBlock::create(
        params, prefix + ".self_s.layer" + std::to_string(l), cfg, rng));
    net.self_t_.push_back(SelfAttentionBlock::create(
        params, prefix + ".self_t.layer" + std::to_string(l), cfg, rng));
  }
  if (with_head) net.head_ = nn::Linear::create(params, prefix + ".head", 2 * d, cfg.class_count, rng);
  return net;
}

FusionState FusionNet::forward(const Value& speech, const Value& text, const nn::Mask& mask,
                               const ForwardContext& ctx) const {
  if (speech.rows() != text.rows()) {
    throw ShapeError("fusion: speech has " + std::to_string(speech.rows()) +
                     " utterances but text has " + std::to_string(text.rows()));
  }
  if (!mask.empty() && mask.size() != speech.rows()) {
    throw ShapeError("fusion: mask length differs from utterance count");
  }
  const Value ps = proj_s_(speech);
  const Value pt = proj_t_(text);
  FusionState s;
  s.m_ts = ln_ts_(add(ps, dropout(cross_ts_(ps, pt, mask), cfg_.dropout, ctx)));
  s.m_st = ln_st_(add(pt, dropout(cross_st_(pt, ps, mask), cfg_.dropout, ctx)));
  s.m_s = s.m_ts;
  s.m_t = s.m_st;
  for (std::size_t l = 0; l < self_s_.size(); ++l) {
    s.m_s = self_s_[l](s.m_s, mask, cfg_.dropout, ctx);
    s.m_t = self_t_[l](s.m_t, mask, cfg_.dropout, ctx);
  }
  if (head_) {
    const std::vector<Value> both{s.m_s, s.m_t};
    s.logits = (*head_)(concat(both, 1));
  }
  return s;
}

}  // namespace mistere
