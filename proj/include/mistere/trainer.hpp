#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mistere/dataset.hpp"
#include "mistere/metrics.hpp"
#include "mistere/model.hpp"

namespace mistere {

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  LossConfig loss;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double can = 0.0;
  double multi = 0.0;
  double con = 0.0;
  double kl = 0.0;
  double moe = 0.0;
  double total = 0.0;
  double val_f1 = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  std::optional<std::size_t> best_epoch;  // 1-based
  double best_val_f1 = 0.0;
  std::filesystem::path checkpoint_path;  // empty when nothing was saved
  double wall_seconds = 0.0;
  std::size_t parameter_count = 0;
};

/// Thrown when the loss or any intermediate value stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

DataShape shape_of(const Dataset& data);

/// Trains `model` in place. With a non-empty `output_dir`, the training log
/// (train_log.jsonl), best checkpoint (checkpoint.mste) and its optimizer
/// state (optimizer.mste) are written there. On return the model holds the
/// parameters of the best epoch. `on_epoch` runs after each epoch's
/// validation pass, with the model holding that epoch's parameters.
using EpochCallback = std::function<void(const EpochRecord&, const Model&)>;
TrainReport train(Model& model, const Dataset& train_split, const Dataset& val_split,
                  const TrainConfig& cfg, const std::filesystem::path& output_dir = {},
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predictions;
  // Standalone expert predictions; empty when the variant lacks the expert.
  std::vector<std::size_t> speech_predictions;
  std::vector<std::size_t> text_predictions;
  std::vector<std::size_t> multi_predictions;
  std::vector<GateRecord> gates;  // empty without a gate
  double weighted_f1 = 0.0;
  std::optional<double> speech_f1;
  std::optional<double> text_f1;
  std::optional<double> multi_f1;
  ConfusionMatrix confusion;
  PerClassF1 per_class;
  /// Mean per-conversation loss.
  EpochRecord loss;
};

/// Inference in eval mode over padded batches of `batch_size` conversations.
Evaluation evaluate(const Model& model, const Dataset& data, const LossConfig& loss,
                    std::size_t batch_size = 8);

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
  /// Below this analytic magnitude the absolute tolerance applies.
  double small_grad = 1e-4;
};

struct ParameterCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  std::vector<std::string> failures;
  std::size_t elements_checked = 0;

  bool passed() const { return failures.empty(); }
};

/// Central finite differences of `loss_fn` against the analytic gradient for
/// every element of every parameter. `loss_fn` must be deterministic.
GradCheckReport grad_check(ParameterSet& params, const std::function<Value()>& loss_fn,
                           const GradCheckOptions& opts = {});

/// Builds `variant` with `model_cfg`, draws a small dataset from `data`
/// (train split) and checks the gradients of the variant's objective.
/// Dropout runs in training mode with masks fixed across evaluations.
GradCheckReport grad_check_model(Variant variant, const ModelConfig& model_cfg,
                                 const LossConfig& loss, const SynthConfig& data,
                                 std::uint64_t seed, const GradCheckOptions& opts = {});

/// A deliberately small configuration for gradient checks.
ModelConfig tiny_model_config();
SynthConfig tiny_synth_config();

}  // namespace mistere
