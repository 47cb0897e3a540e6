#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "mistere/context_net.hpp"
#include "mistere/fusion_net.hpp"
#include "mistere/losses.hpp"
#include "mistere/moe_gate.hpp"

namespace mistere {

enum class Variant { full, feat_moe, no_loss_moe, monolithic, text_only, speech_only };

std::string to_string(Variant v);
/// Throws std::invalid_argument for an unknown tag.
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  // Context addition networks (same shape for both modalities).
  std::size_t tin_channels = 0;
  std::size_t gru_hidden = 512;
  std::size_t gru_layers = 3;
  std::size_t fc_hidden = 0;
  double fc_dropout = 0.2;
  // Multimodal fusion network.
  std::size_t model_dim = 120;
  std::size_t heads = 4;
  std::size_t fusion_layers = 4;
  double fusion_dropout = 0.5;
  std::size_t ff_multiplier = 4;
  // Gate.
  std::size_t gate_hidden = 0;
};

struct DataShape {
  std::size_t d_s = 0;
  std::size_t d_t = 0;
  std::size_t class_count = 0;
};

/// Forward results for one (possibly padded) conversation. Fields a variant
/// does not produce stay undefined.
struct ModelOutput {
  Value speech_logits;
  Value text_logits;
  Value multi_logits;
  Value final_logits;
  Value beta;  // N x 3 gate weights
  Value m_s;
  Value m_t;
};

/// One trainable model for a given variant:
///
///   full         three experts, logit-level gate, full objective
///   feat_moe     experts kept; gate weighs projected pre-classifier features
///                and a single head classifies their combination
///   no_loss_moe  full architecture, focal loss on the gated prediction only
///   monolithic   CAN features feed the fusion network; its head is the model
///   text_only    text CAN with focal loss
///   speech_only  speech CAN with focal loss
class Model {
 public:
  Model(Variant variant, const ModelConfig& cfg, DataShape shape, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  ModelOutput forward(const Tensor& speech, const Tensor& text, const nn::Mask& mask,
                      const ForwardContext& ctx) const;

  /// Objective for one conversation, per the variant's definition.
  LossBreakdown loss(const ModelOutput& out, std::span<const std::size_t> labels,
                     const LossConfig& cfg, const nn::Mask& mask) const;

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  Variant variant() const { return variant_; }
  const ModelConfig& config() const { return cfg_; }
  const DataShape& shape() const { return shape_; }

  bool has_speech_expert() const { return speech_.has_value() && speech_->has_head(); }
  bool has_text_expert() const { return text_.has_value() && text_->has_head(); }
  bool has_multimodal_expert() const;
  bool has_gate() const { return gate_.has_value(); }

 private:
  Variant variant_;
  ModelConfig cfg_;
  DataShape shape_;
  ParameterSet params_;
  std::optional<ContextNet> speech_;
  std::optional<ContextNet> text_;
  std::optional<FusionNet> fusion_;
  std::optional<MoeGate> gate_;
  // feat_moe only
  std::optional<nn::Linear> feat_proj_s_, feat_proj_t_, feat_proj_m_, feat_head_;
};

CanConfig can_config(const ModelConfig& cfg, std::size_t input_dim, std::size_t classes);
FusionConfig fusion_config(const ModelConfig& cfg, std::size_t d_s, std::size_t d_t,
                           std::size_t classes);

}  // namespace mistere
