#include "mistere/model.hpp"

#include <stdexcept>

namespace mistere {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::feat_moe: return "feat_moe";
    case Variant::no_loss_moe: return "no_loss_moe";
    case Variant::monolithic: return "monolithic";
    case Variant::text_only: return "text_only";
    case Variant::speech_only: return "speech_only";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::full, Variant::feat_moe, Variant::no_loss_moe, Variant::monolithic,
                    Variant::text_only, Variant::speech_only}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + s + "'");
}

CanConfig can_config(const ModelConfig& cfg, std::size_t input_dim, std::size_t classes) {
  CanConfig c;
  c.input_dim = input_dim;
  c.tin_channels = cfg.tin_channels;
  c.gru_hidden = cfg.gru_hidden;
  c.gru_layers = cfg.gru_layers;
  c.fc_hidden = cfg.fc_hidden;
  c.fc_dropout = cfg.fc_dropout;
  c.class_count = classes;
  return c;
}

FusionConfig fusion_config(const ModelConfig& cfg, std::size_t d_s, std::size_t d_t,
                           std::size_t classes) {
  FusionConfig f;
  f.speech_dim = d_s;
  f.text_dim = d_t;
  f.model_dim = cfg.model_dim;
  f.heads = cfg.heads;
  f.layers = cfg.fusion_layers;
  f.dropout = cfg.fusion_dropout;
  f.ff_multiplier = cfg.ff_multiplier;
  f.class_count = classes;
  return f;
}

Model::Model(Variant variant, const ModelConfig& cfg, DataShape shape, std::uint64_t seed)
    : variant_(variant), cfg_(cfg), shape_(shape) {
  if (shape.d_s == 0 || shape.d_t == 0 || shape.class_count == 0) {
    throw std::invalid_argument("Model: data dimensions must be >= 1");
  }
  Rng rng(seed);
  const std::size_t k = shape.class_count;
  const bool speech = variant != Variant::text_only;
  const bool text = variant != Variant::speech_only;
  const bool monolithic = variant == Variant::monolithic;

  if (speech) {
    speech_ = ContextNet::create(params_, "can.speech", can_config(cfg, shape.d_s, k), rng,
                                 !monolithic);
  }
  if (text) {
    text_ = ContextNet::create(params_, "can.text", can_config(cfg, shape.d_t, k), rng,
                               !monolithic);
  }
  if (speech && text) {
    fusion_ = FusionNet::create(params_, "fusion", fusion_config(cfg, shape.d_s, shape.d_t, k),
                                rng);
  }
  switch (variant) {
    case Variant::full:
    case Variant::no_loss_moe:
      gate_ = MoeGate::create(params_, "gate", 3 * k, cfg.gate_hidden, rng);
      break;
    case Variant::feat_moe: {
      const std::size_t d = cfg.model_dim;
      gate_ = MoeGate::create(params_, "gate", shape.d_s + shape.d_t + 2 * d, cfg.gate_hidden,
                              rng);
      feat_proj_s_ = nn::Linear::create(params_, "feat.proj_s", shape.d_s, d, rng);
      feat_proj_t_ = nn::Linear::create(params_, "feat.proj_t", shape.d_t, d, rng);
      feat_proj_m_ = nn::Linear::create(params_, "feat.proj_m", 2 * d, d, rng);
      feat_head_ = nn::Linear::create(params_, "feat.head", d, k, rng);
      break;
    }
    default:
      break;
  }
}

bool Model::has_multimodal_expert() const {
  return fusion_.has_value() && variant_ != Variant::monolithic;
}

ModelOutput Model::forward(const Tensor& speech, const Tensor& text, const nn::Mask& mask,
                           const ForwardContext& ctx) const {
  const Value e_s = Value::constant(speech);
  const Value e_t = Value::constant(text);
  ModelOutput out;
  CanOutput cs, ct;
  if (speech_) cs = speech_->forward(e_s, mask, ctx);
  if (text_) ct = text_->forward(e_t, mask, ctx);
  out.speech_logits = cs.logits;
  out.text_logits = ct.logits;

  switch (variant_) {
    case Variant::text_only:
      out.final_logits = ct.logits;
      return out;
    case Variant::speech_only:
      out.final_logits = cs.logits;
      return out;
    case Variant::monolithic: {
      const FusionState fs = fusion_->forward(cs.context_features, ct.context_features, mask, ctx);
      out.final_logits = fs.logits;
      out.m_s = fs.m_s;
      out.m_t = fs.m_t;
      return out;
    }
    default:
      break;
  }

  const FusionState fs = fusion_->forward(e_s, e_t, mask, ctx);
  out.multi_logits = fs.logits;
  out.m_s = fs.m_s;
  out.m_t = fs.m_t;

  if (variant_ == Variant::feat_moe) {
    const std::vector<Value> multi_parts{fs.m_s, fs.m_t};
    const Value multi_features = concat(multi_parts, 1);
    const std::vector<Value> gate_in{cs.context_features, ct.context_features, multi_features};
    out.beta = gate_->weights_from(concat(gate_in, 1));
    const Value combined =
        convex_combine((*feat_proj_s_)(cs.context_features), (*feat_proj_t_)(ct.context_features),
                       (*feat_proj_m_)(multi_features), out.beta);
    out.final_logits = (*feat_head_)(combined);
    return out;
  }

  const ExpertLogits experts{cs.logits, ct.logits, fs.logits};
  out.beta = gate_->forward(experts);
  out.final_logits = fuse(experts, out.beta);
  return out;
}

LossBreakdown Model::loss(const ModelOutput& out, std::span<const std::size_t> labels,
                          const LossConfig& cfg, const nn::Mask& mask) const {
  cfg.validate();
  LossBreakdown b;
  switch (variant_) {
    case Variant::full:
      return total_loss({out.speech_logits, out.text_logits, out.multi_logits}, out.final_logits,
                        out.m_s, out.m_t, labels, cfg, mask);
    case Variant::no_loss_moe: {
      b.total = focal_loss(out.final_logits, labels, cfg.gamma, mask);
      b.moe = b.total.value().item();
      return b;
    }
    case Variant::feat_moe: {
      // Expert supervision is unchanged; only the final prediction differs.
      LossBreakdown full = total_loss({out.speech_logits, out.text_logits, out.multi_logits},
                                      out.final_logits, out.m_s, out.m_t, labels, cfg, mask);
      return full;
    }
    case Variant::monolithic: {
      const Value con = contrastive_loss(out.m_s, out.m_t, labels, cfg.tau, mask);
      b.total = add(focal_loss(out.final_logits, labels, cfg.gamma, mask), affine(con, cfg.lambda));
      b.contrastive = con.value().item();
      b.multi = b.total.value().item();
      return b;
    }
    case Variant::text_only:
    case Variant::speech_only: {
      b.total = focal_loss(out.final_logits, labels, cfg.gamma, mask);
      b.can = b.total.value().item();
      return b;
    }
  }
  return b;
}

}  // namespace mistere
