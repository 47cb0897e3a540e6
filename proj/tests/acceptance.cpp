// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. argv[1] is a scratch directory.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mistere/cli.hpp"
#include "mistere/losses.hpp"
#include "mistere/metrics.hpp"
#include "mistere/moe_gate.hpp"
#include "mistere/trainer.hpp"
#include "oracles.hpp"

using namespace mistere;
namespace fs = std::filesystem;

namespace {

fs::path g_work;

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail.str("");
      detail << what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Value C(Tensor t) { return Value::constant(std::move(t)); }

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(k);
  return y;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// ---- 1 ----

void gradient_correctness(Check& c) {
  const auto t0 = Clock::now();
  const ModelConfig model = tiny_model_config();
  SynthConfig data = tiny_synth_config();
  c.require(model.model_dim <= 8 && model.gru_hidden <= 8 && data.d_s <= 8 && data.d_t <= 8,
            "tiny config exceeds dim 8");
  c.require(data.conversations_per_split.train == 2 && data.max_utterances <= 3,
            "tiny data is not 2 conversations of <= 3 utterances");
  const GradCheckReport r =
      grad_check_model(Variant::full, model, LossConfig{3.0, 1.0, 0.1, 1.0}, data, 0);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  for (const auto& p : r.parameters) worst = std::max(worst, p.max_rel_error);
  c.require(r.passed(), "parameters failed: " + std::to_string(r.failures.size()));
  c.require(elapsed < 60.0, "runtime " + std::to_string(elapsed) + " s");
  if (c.ok)
    c.detail << r.parameters.size() << " parameters, " << r.elements_checked
             << " elements, max rel error " << worst << ", " << elapsed << " s";
}

// ---- 2 ----

double focal_at(double p, double gamma) {
  const std::vector<std::size_t> y{0};
  return focal_loss(C(Tensor::matrix(1, 2, {std::log(p / (1.0 - p)), 0.0})), y, gamma)
      .value()
      .item();
}

void loss_oracles(Check& c) {
  const std::vector<std::size_t> y0{0};
  const double perfect = focal_loss(C(Tensor::matrix(1, 2, {800.0, 0.0})), y0, 3.0).value().item();
  c.require(perfect == 0.0, "focal of a certain prediction is not 0");
  const double half = focal_at(0.5, 0.0), ninety = focal_at(0.9, 3.0);
  c.require(std::abs(half - std::numbers::ln2) <= 1e-9, "focal(0.5, 0) != ln 2");
  c.require(std::abs(half - 0.693147) <= 5e-7, "focal(0.5, 0) != 0.693147");
  c.require(std::abs(ninety - 1e-3 * -std::log(0.9)) <= 1e-9, "focal(0.9, 3) != 1e-3 ln(1/0.9)");
  c.require(std::abs(ninety - 1.05361e-4) <= 1e-9, "focal(0.9, 3) != 1.05361e-4");

  Rng rng(0);
  const std::vector<std::size_t> one{1};
  const double single =
      contrastive_loss(C(random_tensor({1, 4}, rng)), C(random_tensor({1, 4}, rng)), one, 1.0)
          .value()
          .item();
  c.require(single == 0.0, "contrastive with N = 1 is not exactly 0");

  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const std::vector<std::size_t> y{0, 1};
  const double con = contrastive_loss(C(eye), C(eye), y, 1.0).value().item();
  const double brute = oracle::contrastive(oracle::from_tensor(eye), oracle::from_tensor(eye), y, 1.0);
  c.require(std::abs(con - brute) <= 1e-12, "contrastive differs from brute force");
  // 2.205781 is 4 x 0.551445, each anchor rounded before summing.
  c.require(std::abs(con - 2.205781) <= 2.5e-6, "contrastive != 2.205781");

  const Value pm = C(Tensor::matrix(1, 2, {0.75, 0.25}));
  const Value ps = C(Tensor::matrix(1, 2, {0.5, 0.5}));
  const double kl = kl_consistency(pm, ps, pm).value().item();
  c.require(std::abs(kl - (0.75 * std::log(1.5) + 0.25 * std::log(0.5))) <= 1e-9,
            "KL differs from its closed form");
  c.require(std::abs(kl - 0.130812) <= 5e-7, "KL != 0.130812");
  if (c.ok)
    c.detail << "focal " << half << " / " << ninety << ", contrastive " << con << ", KL " << kl;
}

// ---- 3 ----

void moe_algebra(Check& c) {
  Rng rng(3);
  ParameterSet params;
  const MoeGate gate = MoeGate::create(params, "gate", 12, 0, rng);
  for (auto& [name, v] : params)
    for (double& x : v.mutable_value().data()) x = rng.normal();
  double worst_sum = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(4);
    const ExpertLogits ex{C(random_tensor({n, 4}, rng, 5.0)), C(random_tensor({n, 4}, rng, 5.0)),
                          C(random_tensor({n, 4}, rng, 5.0))};
    const Value beta = gate.forward(ex);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t e = 0; e < 3; ++e) {
        c.require(beta.value().at(i, e) >= 0.0, "negative gate weight");
        s += beta.value().at(i, e);
      }
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }

    const Tensor f = fuse(ex, beta).value();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double a = ex.speech.value()[i], b = ex.text.value()[i], m = ex.multimodal.value()[i];
      c.require(f[i] >= std::min({a, b, m}) && f[i] <= std::max({a, b, m}),
                "fused logit outside the expert range");
    }

    const std::size_t pick = rng.below(3);
    Tensor hot({n, 3}, 0.0);
    for (std::size_t i = 0; i < n; ++i) hot.at(i, pick) = 1.0;
    const Value& chosen = pick == 0 ? ex.speech : pick == 1 ? ex.text : ex.multimodal;
    c.require(fuse(ex, C(hot)).value() == chosen.value(), "one-hot beta does not select");

    c.require(fuse({ex.text, ex.text, ex.text}, beta).value() == ex.text.value(),
              "equal logits are not a fixed point");
  }
  c.require(worst_sum <= 1e-6, "gate rows off the simplex by " + std::to_string(worst_sum));
  if (c.ok) c.detail << "10000 instances, max |sum beta - 1| " << worst_sum;
}

// ---- 4 ----

void gamma_zero_is_cross_entropy(Check& c) {
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t k = 2 + rng.below(6);
    const Tensor logits = random_tensor({1, k}, rng, 5.0);
    const auto y = random_labels(rng, 1, k);
    double mx = -1e300;
    for (double v : logits.data()) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits.data()) z += std::exp(v - mx);
    const double ce = -(logits[y[0]] - mx - std::log(z));
    worst = std::max(worst, std::abs(focal_loss(C(logits), y, 0.0).value().item() - ce));
  }
  c.require(worst <= 1e-12, "max deviation " + std::to_string(worst));
  if (c.ok) c.detail << "10000 pairs, max deviation " << worst;
}

// ---- 5 ----

void overfit(Check& c) {
  const auto t0 = Clock::now();
  SynthConfig data;
  data.class_count = 4;
  data.d_s = data.d_t = 16;
  data.speech_snr = data.text_snr = 20.0;
  data.conversations_per_split = {8, 4, 4};
  data.min_utterances = 8;
  data.max_utterances = 12;
  data.seed = 0;
  const DatasetSplits splits = generate(data);

  ModelConfig model;
  model.gru_hidden = 16;
  model.gru_layers = 1;
  model.model_dim = 16;
  model.heads = 2;
  model.fusion_layers = 1;

  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.epochs = 200;
  cfg.seed = 0;

  Model m(Variant::full, model, shape_of(splits.train), cfg.seed);
  std::optional<std::size_t> reached;
  double best_train = 0.0;
  train(m, splits.train, splits.val, cfg, {}, [&](const EpochRecord& rec, const Model& current) {
    const double f1 = evaluate(current, splits.train, cfg.loss, cfg.batch_size).weighted_f1;
    best_train = std::max(best_train, f1);
    if (!reached && f1 >= 0.99) reached = rec.epoch;
  });
  const double elapsed = seconds_since(t0);
  c.require(reached.has_value(), "best train F1 " + std::to_string(best_train));
  c.require(elapsed < 300.0, "runtime " + std::to_string(elapsed) + " s");
  if (c.ok)
    c.detail << "train F1 >= 0.99 at epoch " << *reached << " (" << splits.train.utterance_count()
             << " utterances), " << elapsed << " s";
}

// ---- 6, 7 ----

/// The small benchmark used for the gate and ablation criteria.
RunConfig benchmark(double speech_snr, std::uint64_t seed, Variant variant, const std::string& tag) {
  RunConfig r;
  r.synth.class_count = 4;
  r.synth.d_s = r.synth.d_t = 16;
  r.synth.conversations_per_split = {32, 16, 16};
  r.synth.speech_snr = speech_snr;
  r.synth.text_snr = 4.0;
  r.synth.seed = seed;
  r.model.gru_hidden = 16;
  r.model.gru_layers = 1;
  r.model.fc_dropout = 0.2;
  r.model.model_dim = 16;
  r.model.heads = 2;
  r.model.fusion_layers = 1;
  r.model.fusion_dropout = 0.5;
  r.train.learning_rate = 1e-3;
  r.train.batch_size = 4;
  r.train.epochs = 40;
  r.train.seed = seed;
  r.train.variant = variant;
  r.train.loss = LossConfig{0.0, 1.0, 0.1, 1.0};
  r.output_dir = g_work / tag;
  return r;
}

void gate_behavior(Check& c) {
  const RunResult imbalanced = run_training(benchmark(0.0, 0, Variant::full, "gate"));
  const auto gi = gate_stats(imbalanced.test.gates, 4).mean;
  const double d_imb = gi[1] - gi[0];
  c.require(d_imb >= 0.1, "imbalanced: mean beta_t - beta_s = " + std::to_string(d_imb));

  const RunResult symmetric = run_training(benchmark(4.0, 0, Variant::full, "gate"));
  const auto gs = gate_stats(symmetric.test.gates, 4).mean;
  const double d_sym = gs[1] - gs[0];
  const Evaluation& ev = symmetric.test;
  c.require(std::abs(d_sym) <= 0.2, "symmetric: mean beta_t - beta_s = " + std::to_string(d_sym));
  c.require(*ev.multi_f1 >= *ev.speech_f1 - 0.02 && *ev.multi_f1 >= *ev.text_f1 - 0.02,
            "symmetric: multimodal F1 " + std::to_string(*ev.multi_f1) + " vs speech " +
                std::to_string(*ev.speech_f1) + ", text " + std::to_string(*ev.text_f1));
  if (c.ok)
    c.detail << "imbalanced dbeta " << d_imb << "; symmetric dbeta " << d_sym << ", F1 m/s/t "
             << *ev.multi_f1 << "/" << *ev.speech_f1 << "/" << *ev.text_f1;
}

void ablation_parity(Check& c) {
  // Every variant through the sweep harness, one row each.
  const RunConfig base = benchmark(0.0, 0, Variant::full, "ablate");
  fs::create_directories(base.output_dir);
  std::ofstream(base.output_dir / "config.json") << config_to_json(base).dump(2);
  std::ofstream(base.output_dir / "sweep.json")
      << R"({"grid": {"variant": ["feat_moe", "no_loss_moe", "monolithic", "text_only"]}})";
  std::ostringstream out, err;
  const int code = run_cli({"ablate", "-c", (base.output_dir / "config.json").string(), "-m",
                            (base.output_dir / "sweep.json").string(), "-o",
                            (base.output_dir / "sweep.csv").string()},
                           out, err);
  c.require(code == 0, "ablate exited with " + std::to_string(code) + ": " + err.str());
  std::istringstream csv(slurp(base.output_dir / "sweep.csv"));
  std::string header, line;
  std::getline(csv, header);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ++rows;
    c.require(line.ends_with(",ok"), "sweep row failed: " + line);
    c.require(std::count(line.begin(), line.end(), ',') ==
                  std::count(header.begin(), header.end(), ','),
              "ragged sweep row: " + line);
  }
  c.require(rows == 4, "expected 4 sweep rows, got " + std::to_string(rows));

  double full = 0.0, mono = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    full += run_training(benchmark(0.0, seed, Variant::full, "parity")).test.weighted_f1 / 3.0;
    mono += run_training(benchmark(0.0, seed, Variant::monolithic, "parity")).test.weighted_f1 / 3.0;
  }
  c.require(full >= mono - 0.01, "full " + std::to_string(full) + " < monolithic " +
                                     std::to_string(mono) + " - 0.01");
  if (c.ok) c.detail << rows << " sweep rows ok; 3-seed test F1 full " << full << " vs monolithic " << mono;
}

// ---- 8 ----

void metric_oracle(Check& c) {
  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.below(5), n = 1 + rng.below(40);
    const auto y = random_labels(rng, n, k), p = random_labels(rng, n, k);
    worst = std::max(worst, std::abs(weighted_f1(y, p, k) - oracle::weighted_f1(y, p, k)));
  }
  c.require(worst <= 1e-12, "max deviation " + std::to_string(worst));
  const std::vector<std::size_t> y{0, 0, 1}, p{0, 1, 1};
  c.require(std::abs(weighted_f1(y, p, 2) - 2.0 / 3.0) <= 1e-15, "[0,0,1]/[0,1,1] != 2/3");
  if (c.ok) c.detail << "1000 instances, max deviation " << worst;
}

// ---- 9 ----

void determinism(Check& c) {
  RunConfig cfg = benchmark(4.0, 5, Variant::full, "determinism_a");
  cfg.train.epochs = 5;
  const RunResult a = run_training(cfg);
  cfg.output_dir = g_work / "determinism_b";
  const RunResult b = run_training(cfg);
  for (const char* f : {"train_log.jsonl", "checkpoint.mste", "optimizer.mste"}) {
    const std::string x = slurp(a.run_dir / f), y = slurp(b.run_dir / f);
    c.require(!x.empty() && x == y, std::string(f) + " differs between runs");
  }
  if (c.ok) c.detail << "train_log.jsonl, checkpoint.mste, optimizer.mste byte-identical";
}

// ---- 10 ----

void padding_invariance(Check& c) {
  SynthConfig data = tiny_synth_config();
  data.conversations_per_split = {40, 1, 1};
  data.min_utterances = 1;
  data.max_utterances = 9;
  data.seed = 10;
  const Dataset pool = generate(data).train;
  const LossConfig loss{3.0, 1.0, 0.1, 1.0};
  Model model(Variant::full, tiny_model_config(), shape_of(pool), 10);
  Rng rng(10);
  for (auto& [name, v] : model.parameters())
    for (double& x : v.mutable_value().data()) x += 0.3 * rng.normal();

  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Dataset batch = pool;
    batch.conversations.clear();
    const std::size_t size = 2 + rng.below(5);
    for (std::size_t i = 0; i < size; ++i)
      batch.conversations.push_back(pool.conversations[rng.below(pool.conversations.size())]);

    const Evaluation padded = evaluate(model, batch, loss, size);
    const Evaluation single = evaluate(model, batch, loss, 1);
    c.require(padded.predictions == single.predictions, "predictions differ under padding");
    c.require(padded.multi_predictions == single.multi_predictions, "expert predictions differ");
    c.require(padded.gates.size() == single.gates.size(), "gate record count differs");
    for (std::size_t i = 0; i < padded.gates.size(); ++i)
      for (auto [p, s] : {std::pair{padded.gates[i].beta_s, single.gates[i].beta_s},
                          std::pair{padded.gates[i].beta_t, single.gates[i].beta_t},
                          std::pair{padded.gates[i].beta_m, single.gates[i].beta_m}})
        worst = std::max(worst, std::abs(p - s));
    worst = std::max(worst, std::abs(padded.weighted_f1 - single.weighted_f1));
    for (auto [p, s] : {std::pair{padded.loss.total, single.loss.total},
                        std::pair{padded.loss.can, single.loss.can},
                        std::pair{padded.loss.multi, single.loss.multi},
                        std::pair{padded.loss.moe, single.loss.moe}})
      worst = std::max(worst, std::abs(p - s));
  }
  c.require(worst <= 1e-9, "max deviation " + std::to_string(worst));
  if (c.ok) c.detail << "10 mixed batches, max deviation " << worst;
}

}  // namespace

int main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mistere_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<void(Check&)>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"loss oracles", loss_oracles},
      {"moe algebra", moe_algebra},
      {"gamma = 0 equals cross-entropy", gamma_zero_is_cross_entropy},
      {"overfit smoke test", overfit},
      {"modality-imbalance gate behavior", gate_behavior},
      {"ablation harness parity", ablation_parity},
      {"metric oracle", metric_oracle},
      {"determinism", determinism},
      {"padding invariance", padding_invariance},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check check;
    const auto t0 = Clock::now();
    try {
      criteria[i].second(check);
    } catch (const std::exception& e) {
      check.ok = false;
      check.detail.str("");
      check.detail << "exception: " << e.what();
    }
    failed += check.ok ? 0 : 1;
    std::cout << "criterion " << i + 1 << " " << (check.ok ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << check.detail.str() << " [" << seconds_since(t0)
              << " s]" << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
