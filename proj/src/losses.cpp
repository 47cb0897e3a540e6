#include "mistere/losses.hpp"

#include <cmath>

namespace mistere {

void LossConfig::validate() const {
  if (!(gamma >= 0.0)) throw std::invalid_argument("loss: gamma must be >= 0");
  if (!(lambda >= 0.0) || !(alpha >= 0.0)) {
    throw std::invalid_argument("loss: lambda and alpha must be >= 0");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("loss: tau must be > 0");
}

std::vector<std::size_t> valid_positions(const nn::Mask& mask, std::size_t length) {
  std::vector<std::size_t> idx;
  idx.reserve(length);
  for (std::size_t i = 0; i < length; ++i)
    if (nn::position_valid(mask, i)) idx.push_back(i);
  return idx;
}

namespace {

Value zero_scalar() { return Value::constant(Tensor::scalar(0.0)); }

void check_labels(std::span<const std::size_t> labels, std::size_t rows, const char* what) {
  if (labels.size() != rows) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(rows) + " rows");
  }
}

/// Rows of x at valid positions, plus their labels.
std::pair<Value, std::vector<std::size_t>> valid_rows(const Value& x,
                                                      std::span<const std::size_t> labels,
                                                      const std::vector<std::size_t>& keep) {
  std::vector<std::size_t> kept_labels;
  kept_labels.reserve(keep.size());
  for (std::size_t i : keep) kept_labels.push_back(labels[i]);
  if (keep.size() == x.rows()) return {x, std::move(kept_labels)};
  return {select_rows(x, keep), std::move(kept_labels)};
}

}  // namespace

Value focal_loss(const Value& logits, std::span<const std::size_t> labels, double gamma,
                 const nn::Mask& mask) {
  check_labels(labels, logits.rows(), "focal_loss");
  const auto keep = valid_positions(mask, logits.rows());
  if (keep.empty()) return zero_scalar();
  auto [rows, y] = valid_rows(logits, labels, keep);
  const Value log_p = gather(log_softmax(rows), y);
  if (gamma == 0.0) return affine(sum(log_p), -1.0);
  const Value modulator = pow_scalar(affine(exp(log_p), -1.0, 1.0), gamma);
  return affine(sum(mul(modulator, log_p)), -1.0);
}

Value contrastive_loss(const Value& m_s, const Value& m_t, std::span<const std::size_t> labels,
                       double tau, const nn::Mask& mask) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
  if (m_s.shape() != m_t.shape()) throw ShapeError("contrastive_loss: m_s and m_t differ in shape");
  check_labels(labels, m_s.rows(), "contrastive_loss");
  const auto keep = valid_positions(mask, m_s.rows());
  if (keep.empty()) return zero_scalar();
  auto [zs, y] = valid_rows(m_s, labels, keep);
  Value zt = valid_rows(m_t, labels, keep).first;
  const std::size_t n = y.size();
  const std::size_t anchors = 2 * n;

  const std::vector<Value> parts{l2_normalize(zs), l2_normalize(zt)};
  const Value z = concat(parts, 0);  // 2N x d
  Value sim = affine(matmul(z, transpose(z)), 1.0 / tau);

  // Exclude q == a from every denominator.
  Tensor diag({anchors, anchors}, 0.0);
  for (std::size_t a = 0; a < anchors; ++a) diag[a * anchors + a] = -1e30;
  const Value log_prob = log_softmax(add(sim, Value::constant(std::move(diag))));

  // weights[a][p] = 1/|P(a)| for positives p of anchor a.
  auto label_of = [&](std::size_t a) { return y[a % n]; };
  Tensor weights({anchors, anchors}, 0.0);
  for (std::size_t a = 0; a < anchors; ++a) {
    std::size_t positives = 0;
    for (std::size_t p = 0; p < anchors; ++p)
      if (p != a && label_of(p) == label_of(a)) ++positives;
    if (positives == 0) continue;
    for (std::size_t p = 0; p < anchors; ++p)
      if (p != a && label_of(p) == label_of(a))
        weights[a * anchors + p] = 1.0 / static_cast<double>(positives);
  }
  return affine(sum(mul(log_prob, Value::constant(std::move(weights)))), -1.0);
}

Value kl_consistency(const Value& p_m, const Value& p_s, const Value& p_t, const nn::Mask& mask) {
  require_same_shape(p_m.value(), p_s.value(), "kl_consistency");
  require_same_shape(p_m.value(), p_t.value(), "kl_consistency");
  const auto keep = valid_positions(mask, p_m.rows());
  if (keep.empty()) return zero_scalar();
  auto pick = [&](const Value& v) { return keep.size() == v.rows() ? v : select_rows(v, keep); };
  const Value pm = pick(p_m);
  const Value log_pm = log(clamp_min(pm, kProbabilityFloor));
  const Value log_ps = log(clamp_min(pick(p_s), kProbabilityFloor));
  const Value log_pt = log(clamp_min(pick(p_t), kProbabilityFloor));
  const Value kl_s = sum(mul(pm, sub(log_pm, log_ps)));
  const Value kl_t = sum(mul(pm, sub(log_pm, log_pt)));
  return add(kl_s, kl_t);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbabilityFloor)));
  }
  return s;
}

LossBreakdown total_loss(const ExpertLogits& experts, const Value& fused, const Value& m_s,
                         const Value& m_t, std::span<const std::size_t> labels,
                         const LossConfig& cfg, const nn::Mask& mask) {
  cfg.validate();
  const Value can = add(focal_loss(experts.speech, labels, cfg.gamma, mask),
                        focal_loss(experts.text, labels, cfg.gamma, mask));
  const Value con = contrastive_loss(m_s, m_t, labels, cfg.tau, mask);
  const Value multi =
      add(focal_loss(experts.multimodal, labels, cfg.gamma, mask), affine(con, cfg.lambda));
  const Value kl = kl_consistency(softmax(experts.multimodal), softmax(experts.speech),
                                  softmax(experts.text), mask);
  const Value moe = add(focal_loss(fused, labels, cfg.gamma, mask), affine(kl, cfg.alpha));

  LossBreakdown out;
  out.can = can.value().item();
  out.multi = multi.value().item();
  out.contrastive = con.value().item();
  out.kl = kl.value().item();
  out.moe = moe.value().item();
  out.total = add(add(can, multi), moe);
  return out;
}

LossBreakdown average(std::span<const LossBreakdown> parts) {
  LossBreakdown out;
  if (parts.empty()) {
    out.total = zero_scalar();
    return out;
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  std::vector<Value> totals;
  for (const auto& p : parts) {
    out.can += p.can;
    out.multi += p.multi;
    out.contrastive += p.contrastive;
    out.kl += p.kl;
    out.moe += p.moe;
    totals.push_back(p.total);
  }
  out.can *= inv;
  out.multi *= inv;
  out.contrastive *= inv;
  out.kl *= inv;
  out.moe *= inv;
  out.total = affine(sum(concat(totals, 0)), inv);
  return out;
}

}  // namespace mistere
