#include "mistere/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mistere/checkpoint.hpp"
#include "mistere/optimizer.hpp"

namespace mistere {

namespace {

constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kDropoutStream = 0xd1b54a32d192ed03ULL;

void add_breakdown(EpochRecord& acc, const LossBreakdown& b, double weight) {
  acc.can += weight * b.can;
  acc.multi += weight * b.multi;
  acc.con += weight * b.contrastive;
  acc.kl += weight * b.kl;
  acc.moe += weight * b.moe;
  acc.total += weight * b.total_value();
}

std::string log_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["can"] = r.can;
  j["multi"] = r.multi;
  j["con"] = r.con;
  j["kl"] = r.kl;
  j["moe"] = r.moe;
  j["total"] = r.total;
  j["val_f1"] = r.val_f1;
  return j.dump();
}

TensorMap snapshot(const ParameterSet& params) {
  TensorMap out;
  for (const auto& [name, p] : params) out.emplace(name, p.value());
  return out;
}

void restore(ParameterSet& params, const TensorMap& values) {
  for (auto& [name, p] : params) p.mutable_value() = values.at(name);
}

std::vector<std::size_t> row_argmax(const Value& logits, const nn::Mask& mask) {
  std::vector<std::size_t> out;
  const Tensor& t = logits.value();
  const std::size_t c = t.cols();
  for (std::size_t i = 0; i < t.rows(); ++i) {
    if (!nn::position_valid(mask, i)) continue;
    out.push_back(argmax_row(t.data().subspan(i * c, c)));
  }
  return out;
}

void append(std::vector<std::size_t>& dst, const std::vector<std::size_t>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  loss.validate();
}

DataShape shape_of(const Dataset& data) { return {data.d_s, data.d_t, data.class_count}; }

TrainReport train(Model& model, const Dataset& train_split, const Dataset& val_split,
                  const TrainConfig& cfg, const std::filesystem::path& output_dir,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_split.conversations.empty() || val_split.conversations.empty()) {
    throw std::invalid_argument("train: train and val splits must be nonempty");
  }
  const DataShape shape = model.shape();
  for (const Dataset* d : {&train_split, &val_split}) {
    if (d->d_s != shape.d_s || d->d_t != shape.d_t || d->class_count != shape.class_count) {
      throw std::invalid_argument("train: dataset dimensions do not match the model");
    }
  }

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  ParameterSet& params = model.parameters();
  report.parameter_count = params.element_count();

  std::ofstream log;
  std::filesystem::path checkpoint, optimizer_path;
  if (!output_dir.empty()) {
    std::filesystem::create_directories(output_dir);
    log.open(output_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + (output_dir / "train_log.jsonl").string());
    checkpoint = output_dir / "checkpoint.mste";
    optimizer_path = output_dir / "optimizer.mste";
  }

  Adam adam(AdamConfig{cfg.learning_rate});
  Rng shuffle_rng(cfg.seed ^ kShuffleStream);
  Rng dropout_rng(cfg.seed ^ kDropoutStream);
  const ForwardContext ctx{true, &dropout_rng};
  std::vector<std::size_t> order(train_split.conversations.size());
  std::optional<TensorMap> best;
  params.zero_grad();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    try {
      for (const Batch& batch : make_batches(train_split, order, cfg.batch_size)) {
        std::vector<LossBreakdown> parts;
        parts.reserve(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const ModelOutput out = model.forward(batch.speech[b], batch.text[b], batch.masks[b], ctx);
          parts.push_back(model.loss(out, batch.labels[b], cfg.loss, batch.masks[b]));
        }
        const LossBreakdown mean = average(parts);
        if (!std::isfinite(mean.total_value())) throw NumericalError("loss is not finite");
        for (const auto& p : parts) add_breakdown(rec, p, 1.0);
        backward(mean.total);
        clip_grad_norm(params, cfg.clip_norm);
        adam.step(params);
        params.zero_grad();
      }
    } catch (const NumericalError& e) {
      throw DivergenceError(epoch, "training diverged in epoch " + std::to_string(epoch) + ": " +
                                       e.what());
    }
    const double inv = 1.0 / static_cast<double>(train_split.conversations.size());
    rec.can *= inv;
    rec.multi *= inv;
    rec.con *= inv;
    rec.kl *= inv;
    rec.moe *= inv;
    rec.total *= inv;
    rec.val_f1 = evaluate(model, val_split, cfg.loss, cfg.batch_size).weighted_f1;
    report.history.push_back(rec);
    if (on_epoch) on_epoch(rec, model);
    if (log) {
      log << log_line(rec) << '\n';
      log.flush();
    }

    if (!report.best_epoch || rec.val_f1 > report.best_val_f1) {
      report.best_epoch = epoch;
      report.best_val_f1 = rec.val_f1;
      best = snapshot(params);
      if (!checkpoint.empty()) {
        save_checkpoint(checkpoint, params);
        adam.save(optimizer_path);
        report.checkpoint_path = checkpoint;
      }
    }
  }

  if (best) restore(params, *best);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Evaluation evaluate(const Model& model, const Dataset& data, const LossConfig& loss,
                    std::size_t batch_size) {
  if (data.conversations.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const ForwardContext ctx{};
  Evaluation ev;
  for (const Batch& batch : make_batches(data, batch_size)) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const nn::Mask& mask = batch.masks[b];
      const Conversation& conv = data.conversations[batch.conversation_indices[b]];
      const ModelOutput out = model.forward(batch.speech[b], batch.text[b], mask, ctx);
      add_breakdown(ev.loss, model.loss(out, batch.labels[b], loss, mask), 1.0);

      const auto preds = row_argmax(out.final_logits, mask);
      if (model.has_speech_expert()) append(ev.speech_predictions, row_argmax(out.speech_logits, mask));
      if (model.has_text_expert()) append(ev.text_predictions, row_argmax(out.text_logits, mask));
      if (model.has_multimodal_expert()) append(ev.multi_predictions, row_argmax(out.multi_logits, mask));
      if (out.beta.defined()) {
        const Tensor& beta = out.beta.value();
        for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
          ev.gates.push_back({conv.id, i, beta.at(i, 0), beta.at(i, 1), beta.at(i, 2),
                              conv.utterances[i].label, preds[i]});
        }
      }
      for (const auto& u : conv.utterances) ev.labels.push_back(u.label);
      append(ev.predictions, preds);
    }
  }
  const double inv = 1.0 / static_cast<double>(data.conversations.size());
  ev.loss.can *= inv;
  ev.loss.multi *= inv;
  ev.loss.con *= inv;
  ev.loss.kl *= inv;
  ev.loss.moe *= inv;
  ev.loss.total *= inv;

  const std::size_t k = data.class_count;
  ev.weighted_f1 = weighted_f1(ev.labels, ev.predictions, k);
  ev.confusion = confusion_matrix(ev.labels, ev.predictions, k);
  ev.per_class = per_class_f1(ev.labels, ev.predictions, k);
  if (!ev.speech_predictions.empty()) ev.speech_f1 = weighted_f1(ev.labels, ev.speech_predictions, k);
  if (!ev.text_predictions.empty()) ev.text_f1 = weighted_f1(ev.labels, ev.text_predictions, k);
  if (!ev.multi_predictions.empty()) ev.multi_f1 = weighted_f1(ev.labels, ev.multi_predictions, k);
  return ev;
}

GradCheckReport grad_check(ParameterSet& params, const std::function<Value()>& loss_fn,
                           const GradCheckOptions& opts) {
  params.zero_grad();
  backward(loss_fn());
  GradCheckReport report;
  for (auto& [name, p] : params) {
    ParameterCheck chk;
    chk.name = name;
    const Tensor analytic = p.grad();
    Tensor& theta = p.mutable_value();
    chk.elements = theta.size();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + opts.step;
      const double up = loss_fn().value().item();
      theta[i] = saved - opts.step;
      const double down = loss_fn().value().item();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      chk.max_abs_error = std::max(chk.max_abs_error, abs_err);
      if (std::abs(a) < opts.small_grad) {
        if (abs_err > opts.abs_tol) chk.passed = false;
      } else {
        const double rel = abs_err / std::max(std::abs(a), std::abs(numeric));
        chk.max_rel_error = std::max(chk.max_rel_error, rel);
        if (rel > opts.rel_tol) chk.passed = false;
      }
    }
    report.elements_checked += chk.elements;
    if (!chk.passed) report.failures.push_back(name);
    report.parameters.push_back(std::move(chk));
  }
  params.zero_grad();
  return report;
}

GradCheckReport grad_check_model(Variant variant, const ModelConfig& model_cfg,
                                 const LossConfig& loss, const SynthConfig& data,
                                 std::uint64_t seed, const GradCheckOptions& opts) {
  const Dataset train_split = generate(data).train;
  Model model(variant, model_cfg, shape_of(train_split), seed);
  const auto batches = make_batches(train_split, train_split.conversations.size());
  const Batch& batch = batches.front();
  auto loss_fn = [&]() {
    Rng rng(seed ^ kDropoutStream);
    const ForwardContext ctx{true, &rng};
    std::vector<LossBreakdown> parts;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const ModelOutput out = model.forward(batch.speech[b], batch.text[b], batch.masks[b], ctx);
      parts.push_back(model.loss(out, batch.labels[b], loss, batch.masks[b]));
    }
    return average(parts).total;
  };
  return grad_check(model.parameters(), loss_fn, opts);
}

ModelConfig tiny_model_config() {
  ModelConfig m;
  m.tin_channels = 4;
  m.gru_hidden = 4;
  m.gru_layers = 2;
  m.fc_hidden = 6;
  m.fc_dropout = 0.2;
  m.model_dim = 8;
  m.heads = 2;
  m.fusion_layers = 1;
  m.fusion_dropout = 0.1;
  m.ff_multiplier = 2;
  m.gate_hidden = 0;
  return m;
}

SynthConfig tiny_synth_config() {
  SynthConfig s;
  s.class_count = 3;
  s.d_s = 6;
  s.d_t = 8;
  s.conversations_per_split = {2, 1, 1};
  s.min_utterances = 2;
  s.max_utterances = 3;
  s.speech_snr = 1.0;
  s.text_snr = 1.0;
  s.seed = 3;
  return s;
}

}  // namespace mistere
