#pragma once

#include <span>

#include "mistere/moe_gate.hpp"
#include "mistere/nn.hpp"

namespace mistere {

/// Floor on probabilities before a logarithm in the KL terms. The focal loss
/// works from log-softmax directly and needs none.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossConfig {
  double gamma = 3.0;   // focal exponent
  double lambda = 1.0;  // contrastive weight
  double alpha = 0.1;   // KL consistency weight
  double tau = 1.0;     // contrastive temperature

  void validate() const;
};

/// Scalar components of the objective for one conversation (or a batch
/// average). `total` carries the differentiable value.
struct LossBreakdown {
  double can = 0.0;
  double multi = 0.0;
  double contrastive = 0.0;
  double kl = 0.0;
  double moe = 0.0;
  Value total;

  double total_value() const { return total.defined() ? total.value().item() : 0.0; }
};

/// Sum over valid rows of -(1 - p_true)^gamma * log(p_true).
Value focal_loss(const Value& logits, std::span<const std::size_t> labels, double gamma,
                 const nn::Mask& mask = {});

/// Supervised contrastive loss over the 2N anchors formed by the
/// L2-normalized rows of m_s and m_t. Positives of an anchor are all other
/// anchors with the same label (in either modality); the denominator runs
/// over every other anchor. Anchors without positives contribute zero.
Value contrastive_loss(const Value& m_s, const Value& m_t, std::span<const std::size_t> labels,
                       double tau, const nn::Mask& mask = {});

/// Sum over valid rows of KL(p_m || p_s) + KL(p_m || p_t).
Value kl_consistency(const Value& p_m, const Value& p_s, const Value& p_t,
                     const nn::Mask& mask = {});

/// KL(p || q) for two probability rows, plain doubles.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// The full objective for one conversation:
///   can   = FL(y_s) + FL(y_t)
///   multi = FL(y_m) + lambda * contrastive(M_s, M_t)
///   moe   = FL(y)   + alpha  * KL
///   total = can + multi + moe
LossBreakdown total_loss(const ExpertLogits& experts, const Value& fused, const Value& m_s,
                         const Value& m_t, std::span<const std::size_t> labels,
                         const LossConfig& cfg, const nn::Mask& mask = {});

/// Mean of per-conversation breakdowns (scalars and the differentiable total).
LossBreakdown average(std::span<const LossBreakdown> parts);

/// Indices of valid positions (all positions for an empty mask).
std::vector<std::size_t> valid_positions(const nn::Mask& mask, std::size_t length);

}  // namespace mistere
