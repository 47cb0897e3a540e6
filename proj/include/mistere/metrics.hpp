#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mistere/moe_gate.hpp"

namespace mistere {

/// counts[true][predicted]
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::vector<std::size_t> supports() const;  // row sums
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> labels,
                                 std::span<const std::size_t> predictions,
                                 std::size_t class_count);

struct PerClassF1 {
  std::vector<double> f1;
  /// True for classes that appear in neither labels nor predictions.
  std::vector<bool> absent;
};

/// F1 = 2PR / (P + R), and 0 when P + R = 0.
PerClassF1 per_class_f1(std::span<const std::size_t> labels,
                        std::span<const std::size_t> predictions, std::size_t class_count);

/// Support-weighted mean of the per-class F1 scores. Throws on empty input.
double weighted_f1(std::span<const std::size_t> labels,
                   std::span<const std::size_t> predictions, std::size_t class_count);

inline constexpr std::size_t kGateHistogramBins = 10;

struct GateStats {
  std::array<double, 3> mean{};  // (speech, text, multimodal)
  /// histogram[e][b]: count of beta_e in [b/10, (b+1)/10); 1.0 lands in the last bin.
  std::array<std::array<std::size_t, kGateHistogramBins>, 3> histogram{};
  /// per_class_mean[c] = mean beta over utterances whose true label is c.
  std::vector<std::array<double, 3>> per_class_mean;
  std::vector<std::size_t> per_class_count;
  std::size_t count = 0;
};

GateStats gate_stats(std::span<const GateRecord> records, std::size_t class_count);

std::size_t argmax_row(std::span<const double> row);

}  // namespace mistere
