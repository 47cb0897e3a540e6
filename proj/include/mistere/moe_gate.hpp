#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mistere/nn.hpp"

namespace mistere {

/// Pre-softmax logits of the three experts, each N x |Y|.
struct ExpertLogits {
  Value speech;
  Value text;
  Value multimodal;
};

/// Gate network: g = FC([y_s ; y_t ; y_m]), beta = softmax(g).
///
/// With `hidden > 0` the FC becomes FC -> ReLU -> FC; the default is the
/// single linear layer.
class MoeGate {
 public:
  static MoeGate create(ParameterSet& params, const std::string& prefix,
                        std::size_t input_dim, std::size_t hidden, Rng& rng);

  /// beta (N x 3) from arbitrary per-utterance gate inputs (N x input_dim).
  Value weights_from(const Value& gate_input) const;
  /// beta from the concatenated expert logits.
  Value forward(const ExpertLogits& logits) const;

 private:
  nn::Linear first_;
  std::optional<nn::Linear> second_;
};

/// y = beta_s * y_s + beta_t * y_t + beta_m * y_m, row by row.
Value fuse(const ExpertLogits& logits, const Value& beta);

/// One row of the gate-weight export.
struct GateRecord {
  std::string conversation_id;
  std::size_t utterance_index = 0;
  double beta_s = 0.0;
  double beta_t = 0.0;
  double beta_m = 0.0;
  std::size_t label = 0;
  std::size_t prediction = 0;

  friend bool operator==(const GateRecord&, const GateRecord&) = default;
};

/// CSV columns: conversation_id,utterance_index,beta_s,beta_t,beta_m,label,prediction
void write_gate_csv(const std::filesystem::path& path, const std::vector<GateRecord>& rows);
std::vector<GateRecord> read_gate_csv(const std::filesystem::path& path);

}  // namespace mistere
