#include "mistere/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace mistere {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) n += c;
  return n;
}

std::vector<std::size_t> ConfusionMatrix::supports() const {
  std::vector<std::size_t> s;
  for (const auto& row : counts) {
    std::size_t n = 0;
    for (std::size_t c : row) n += c;
    s.push_back(n);
  }
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> labels,
                                 std::span<const std::size_t> predictions,
                                 std::size_t class_count) {
  if (labels.size() != predictions.size()) {
    throw std::invalid_argument("labels and predictions differ in length");
  }
  ConfusionMatrix cm;
  cm.counts.assign(class_count, std::vector<std::size_t>(class_count, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count || predictions[i] >= class_count) {
      throw std::out_of_range("class index out of range in confusion matrix");
    }
    ++cm.counts[labels[i]][predictions[i]];
  }
  return cm;
}

PerClassF1 per_class_f1(std::span<const std::size_t> labels,
                        std::span<const std::size_t> predictions, std::size_t class_count) {
  const ConfusionMatrix cm = confusion_matrix(labels, predictions, class_count);
  PerClassF1 out;
  out.f1.assign(class_count, 0.0);
  out.absent.assign(class_count, false);
  for (std::size_t c = 0; c < class_count; ++c) {
    std::size_t tp = cm.counts[c][c], support = 0, predicted = 0;
    for (std::size_t k = 0; k < class_count; ++k) {
      support += cm.counts[c][k];
      predicted += cm.counts[k][c];
    }
    if (support == 0 && predicted == 0) {
      out.absent[c] = true;
      continue;
    }
    // 2PR/(P+R) == 2TP / (support + predicted); zero when TP == 0.
    if (tp > 0) out.f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(support + predicted);
  }
  return out;
}

double weighted_f1(std::span<const std::size_t> labels,
                   std::span<const std::size_t> predictions, std::size_t class_count) {
  if (labels.empty()) throw std::invalid_argument("weighted_f1: empty input");
  const PerClassF1 pc = per_class_f1(labels, predictions, class_count);
  std::vector<std::size_t> support(class_count, 0);
  for (std::size_t y : labels) ++support[y];
  double acc = 0.0;
  for (std::size_t c = 0; c < class_count; ++c) acc += static_cast<double>(support[c]) * pc.f1[c];
  return acc / static_cast<double>(labels.size());
}

GateStats gate_stats(std::span<const GateRecord> records, std::size_t class_count) {
  GateStats s;
  s.per_class_mean.assign(class_count, {0.0, 0.0, 0.0});
  s.per_class_count.assign(class_count, 0);
  for (const auto& r : records) {
    const std::array<double, 3> b{r.beta_s, r.beta_t, r.beta_m};
    for (std::size_t e = 0; e < 3; ++e) {
      s.mean[e] += b[e];
      const auto bin = static_cast<std::size_t>(std::clamp(b[e], 0.0, 1.0) * kGateHistogramBins);
      ++s.histogram[e][std::min(bin, kGateHistogramBins - 1)];
      if (r.label < class_count) s.per_class_mean[r.label][e] += b[e];
    }
    if (r.label < class_count) ++s.per_class_count[r.label];
    ++s.count;
  }
  if (s.count > 0)
    for (auto& m : s.mean) m /= static_cast<double>(s.count);
  for (std::size_t c = 0; c < class_count; ++c)
    if (s.per_class_count[c] > 0)
      for (auto& m : s.per_class_mean[c]) m /= static_cast<double>(s.per_class_count[c]);
  return s;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace mistere
