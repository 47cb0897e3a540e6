#include "mistere/context_net.hpp"

#include <algorithm>

namespace mistere {

void CanConfig::validate() const {
  if (input_dim == 0 || gru_hidden == 0 || gru_layers == 0 || class_count == 0) {
    throw std::invalid_argument("CanConfig: dimensions and layer count must be >= 1");
  }
  if (!(fc_dropout >= 0.0 && fc_dropout < 1.0)) {
    throw std::invalid_argument("CanConfig: fc_dropout must lie in [0, 1)");
  }
}

TemporalInception TemporalInception::create(ParameterSet& params, const std::string& prefix,
                                            std::size_t dim, std::size_t channels,
                                            Rng& rng) {
  auto conv = [&](std::size_t k, std::size_t in, std::size_t out, const std::string& name) {
    Value w = params.add(prefix + "." + name + ".w",
                         nn::xavier_uniform({k, in, out}, k * in, out, rng));
    Value b = params.add(prefix + "." + name + ".b", Tensor({out}, 0.0));
    return std::pair{w, b};
  };
  TemporalInception t;
  std::tie(t.w1, t.b1) = conv(1, dim, channels, "k1");
  std::tie(t.w3, t.b3) = conv(3, dim, channels, "k3");
  std::tie(t.w5, t.b5) = conv(5, dim, channels, "k5");
  std::tie(t.proj_w, t.proj_b) = conv(1, 3 * channels, dim, "proj");
  return t;
}

Value TemporalInception::operator()(const Value& x) const {
  const std::vector<Value> branches{conv1d_same(x, w1, b1), conv1d_same(x, w3, b3),
                                    conv1d_same(x, w5, b5)};
  return conv1d_same(concat(branches, 1), proj_w, proj_b);
}

ContextNet ContextNet::create(ParameterSet& params, const std::string& prefix,
                              const CanConfig& cfg, Rng& rng, bool with_head) {
  cfg.validate();
  ContextNet net;
  net.cfg_ = cfg;
  net.tin_ = TemporalInception::create(params, prefix + ".tin", cfg.input_dim,
                                       cfg.branch_channels(), rng);
  net.gru_ = nn::BiGru::create(params, prefix + ".gru", cfg.input_dim, cfg.gru_hidden,
                               cfg.gru_layers, rng);
  net.residual_ = nn::Linear::create(params, prefix + ".residual", 2 * cfg.gru_hidden,
                                     cfg.input_dim, rng);
  if (with_head) {
    net.fc1_ = nn::Linear::create(params, prefix + ".fc1", cfg.input_dim, cfg.hidden_fc(), rng);
    net.fc2_ = nn::Linear::create(params, prefix + ".fc2", cfg.hidden_fc(), cfg.class_count, rng);
  }
  return net;
}

Value zero_padded_rows(const Value& x, const nn::Mask& mask) {
  if (mask.empty() || std::all_of(mask.begin(), mask.end(), [](bool m) { return m; })) {
    return x;
  }
  if (mask.size() != x.rows()) throw ShapeError("mask length differs from sequence length");
  Tensor keep({x.rows(), 1}, 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) keep[i] = mask[i] ? 1.0 : 0.0;
  return scale_rows(x, Value::constant(std::move(keep)));
}

CanOutput ContextNet::forward(const Value& embeddings, const nn::Mask& mask,
                              const ForwardContext& ctx) const {
  if (embeddings.cols() != cfg_.input_dim) {
    throw ShapeError("CAN expects " + std::to_string(cfg_.input_dim) +
                     "-dimensional embeddings, got " + std::to_string(embeddings.cols()));
  }
  if (!mask.empty() && mask.size() != embeddings.rows()) {
    throw ShapeError("CAN: mask length differs from utterance count");
  }
  const Value local = tin_(zero_padded_rows(embeddings, mask));
  const Value global = gru_(local, mask);
  CanOutput out;
  out.context_features = add(embeddings, residual_(global));
  if (fc1_) {
    Value h = dropout(out.context_features, cfg_.fc_dropout, ctx);
    h = relu((*fc1_)(h));
    h = dropout(h, cfg_.fc_dropout, ctx);
    out.logits = (*fc2_)(h);
  }
  return out;
}

}  // namespace mistere
