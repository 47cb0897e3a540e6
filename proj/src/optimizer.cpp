#include "mistere/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mistere {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be > 0");
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Adam::step(ParameterSet& params) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (auto& [name, p] : params) {
    Tensor& theta = p.mutable_value();
    const Tensor& g = p.grad();
    auto [mit, m_new] = m_.try_emplace(name, theta.shape(), 0.0);
    auto [vit, v_new] = v_.try_emplace(name, theta.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != theta.shape() || v.shape() != theta.shape()) {
      throw ShapeError("adam: state shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

TensorMap Adam::state() const {
  TensorMap out;
  for (const auto& [name, t] : m_) out.emplace("m." + name, t);
  for (const auto& [name, t] : v_) out.emplace("v." + name, t);
  out.emplace("step", Tensor::scalar(static_cast<double>(steps_)));
  return out;
}

void Adam::load_state(const TensorMap& state) {
  TensorMap m, v;
  std::uint64_t steps = 0;
  bool have_step = false;
  for (const auto& [key, t] : state) {
    if (key == "step") {
      steps = static_cast<std::uint64_t>(t.item());
      have_step = true;
    } else if (key.starts_with("m.")) {
      m.emplace(key.substr(2), t);
    } else if (key.starts_with("v.")) {
      v.emplace(key.substr(2), t);
    } else {
      throw CheckpointError("adam: unexpected state entry '" + key + "'");
    }
  }
  if (!have_step) throw CheckpointError("adam: state has no step counter");
  if (m.size() != v.size() ||
      !std::equal(m.begin(), m.end(), v.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw CheckpointError("adam: first and second moments cover different parameters");
  }
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps;
}

double global_grad_norm(const ParameterSet& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (double g : p.grad().data()) sq += g * g;
  return std::sqrt(sq);
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  const double norm = global_grad_norm(params);
  if (norm <= max_norm) return norm;
  const double scale = max_norm / norm;
  for (auto& [name, p] : params)
    for (double& g : p.grad().data()) g *= scale;
  return norm;
}

}  // namespace mistere
