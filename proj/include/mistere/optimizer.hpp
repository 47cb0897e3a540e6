#pragma once

#include <cstdint>

#include "mistere/checkpoint.hpp"
#include "mistere/value.hpp"

namespace mistere {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Adam with bias-corrected moments. Moment buffers are keyed by parameter
/// name and created on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  /// theta -= lr * m_hat / (sqrt(v_hat) + eps) for every parameter.
  void step(ParameterSet& params);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }

  /// "m.<name>", "v.<name>" and "step" entries.
  TensorMap state() const;
  void load_state(const TensorMap& state);

  void save(const std::filesystem::path& path) const { save_tensors(path, state()); }
  void load(const std::filesystem::path& path) { load_state(load_tensors(path)); }

 private:
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  TensorMap m_;
  TensorMap v_;
};

double global_grad_norm(const ParameterSet& params);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Gradients are left untouched when already within bounds. Returns the
/// pre-clip norm.
double clip_grad_norm(ParameterSet& params, double max_norm);

}  // namespace mistere
