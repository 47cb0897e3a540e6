#pragma once

#include <optional>
#include <string>

#include "mistere/nn.hpp"

namespace mistere {

struct CanConfig {
  std::size_t input_dim = 64;
  std::size_t tin_channels = 0;  // per kernel branch; 0 means input_dim
  std::size_t gru_hidden = 512;
  std::size_t gru_layers = 3;
  std::size_t fc_hidden = 0;  // 0 means input_dim
  double fc_dropout = 0.2;
  std::size_t class_count = 4;

  void validate() const;
  std::size_t branch_channels() const { return tin_channels ? tin_channels : input_dim; }
  std::size_t hidden_fc() const { return fc_hidden ? fc_hidden : input_dim; }
};

struct CanOutput {
  Value logits;            // N x |Y|, pre-softmax; undefined without a head
  Value context_features;  // N x input_dim, post-residual
};

/// Temporal inception block: parallel same-length convolutions with kernel
/// sizes 1, 3 and 5, channel concatenation, then a 1x1 projection back to
/// the input width.
struct TemporalInception {
  Value w1, b1, w3, b3, w5, b5;
  Value proj_w, proj_b;

  static TemporalInception create(ParameterSet& params, const std::string& prefix,
                                  std::size_t dim, std::size_t channels, Rng& rng);
  Value operator()(const Value& x) const;
};

/// Context addition network for one modality.
///
///   features = E + Linear(BiGRU(TIN(E)))
///   logits   = FC2(relu(FC1(dropout(features))))   (dropout also before FC2)
///
/// Parameters live under `<prefix>.tin`, `<prefix>.gru`, `<prefix>.residual`,
/// `<prefix>.fc1` and `<prefix>.fc2`.
class ContextNet {
 public:
  /// `with_head = false` omits the classifier (used when the features feed
  /// another module directly).
  static ContextNet create(ParameterSet& params, const std::string& prefix,
                           const CanConfig& cfg, Rng& rng, bool with_head = true);

  /// E is N x input_dim. Rows whose mask entry is false are padding: they
  /// are zeroed before the convolutions and skipped by the GRU.
  CanOutput forward(const Value& embeddings, const nn::Mask& mask,
                    const ForwardContext& ctx) const;
  Value tin_forward(const Value& x) const { return tin_(x); }

  const CanConfig& config() const { return cfg_; }
  bool has_head() const { return fc1_.has_value(); }

 private:
  CanConfig cfg_;
  TemporalInception tin_;
  nn::BiGru gru_;
  nn::Linear residual_;
  std::optional<nn::Linear> fc1_;
  std::optional<nn::Linear> fc2_;
};

/// Multiplies padded rows by zero; returns `x` unchanged for an all-valid mask.
Value zero_padded_rows(const Value& x, const nn::Mask& mask);

}  // namespace mistere
