#include "mistere/cli.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mistere/checkpoint.hpp"

namespace mistere {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const char* json_kind(const ordered_json& j) {
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  if (j.is_boolean()) return "boolean";
  return "null";
}

bool is_paths_key(const std::string& path) { return path == "data.paths"; }

ordered_json check_paths_object(const json& src, const std::string& where) {
  if (src.is_null()) return nullptr;
  if (!src.is_object()) throw ConfigError(where + ": expected an object with train/val/test");
  ordered_json out = ordered_json::object();
  for (const auto& [k, v] : src.items()) {
    if (k != "train" && k != "val" && k != "test") {
      throw ConfigError("unknown key '" + where + "." + k + "'");
    }
    if (!v.is_string()) throw ConfigError(where + "." + k + ": expected a string path");
    out[k] = v;
  }
  return out;
}

/// Strict merge: every key in `src` must exist in `dst` with a compatible type.
void merge_into(ordered_json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [key, value] : src.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!dst.contains(key)) throw ConfigError("unknown key '" + where + "'");
    ordered_json& slot = dst[key];
    if (is_paths_key(where)) {
      ordered_json incoming = check_paths_object(value, where);
      if (incoming.is_null() || slot.is_null()) {
        slot = incoming;
      } else {
        for (const auto& [k, v] : incoming.items()) slot[k] = v;
      }
      continue;
    }
    if (slot.is_object()) {
      merge_into(slot, value, where);
      continue;
    }
    const bool non_negative_int =
        value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
    const bool ok = (slot.is_number_unsigned() && non_negative_int) ||
                    (slot.is_number_float() && value.is_number()) ||
                    (slot.is_string() && value.is_string()) ||
                    (slot.is_boolean() && value.is_boolean()) ||
                    (slot.is_array() && value.is_array());
    if (!ok) {
      throw ConfigError(where + ": expected " + json_kind(slot) + ", got " +
                        json_kind(ordered_json(value)));
    }
    if (slot.is_number_float()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

json override_patch(const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + item + "' must look like section.key=value");
  }
  const std::string path = item.substr(0, eq);
  const std::string raw = item.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) throw ConfigError("override '" + item + "' has an empty path segment");
    parts.push_back(p);
  }
  json patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    json wrapped = json::object();
    wrapped[*it] = std::move(patch);
    patch = std::move(wrapped);
  }
  return patch;
}

template <class T>
T get_as(const ordered_json& j, const char* key) {
  return j.at(key).get<T>();
}

ordered_json synth_to_json(const SynthConfig& s) {
  ordered_json j;
  j["class_count"] = s.class_count;
  j["d_s"] = s.d_s;
  j["d_t"] = s.d_t;
  j["train_conversations"] = s.conversations_per_split.train;
  j["val_conversations"] = s.conversations_per_split.val;
  j["test_conversations"] = s.conversations_per_split.test;
  j["min_utterances"] = s.min_utterances;
  j["max_utterances"] = s.max_utterances;
  j["speech_snr"] = s.speech_snr;
  j["text_snr"] = s.text_snr;
  j["class_priors"] = s.class_priors;
  j["emotion_shift_prob"] = s.emotion_shift_prob;
  j["seed"] = s.seed;
  return j;
}

SynthConfig synth_from_json(const ordered_json& j) {
  SynthConfig s;
  s.class_count = get_as<std::size_t>(j, "class_count");
  s.d_s = get_as<std::size_t>(j, "d_s");
  s.d_t = get_as<std::size_t>(j, "d_t");
  s.conversations_per_split.train = get_as<std::size_t>(j, "train_conversations");
  s.conversations_per_split.val = get_as<std::size_t>(j, "val_conversations");
  s.conversations_per_split.test = get_as<std::size_t>(j, "test_conversations");
  s.min_utterances = get_as<std::size_t>(j, "min_utterances");
  s.max_utterances = get_as<std::size_t>(j, "max_utterances");
  s.speech_snr = get_as<double>(j, "speech_snr");
  s.text_snr = get_as<double>(j, "text_snr");
  for (const auto& p : j.at("class_priors")) {
    if (!p.is_number()) throw ConfigError("data.synth.class_priors: expected numbers");
    s.class_priors.push_back(p.get<double>());
  }
  s.emotion_shift_prob = get_as<double>(j, "emotion_shift_prob");
  s.seed = get_as<std::uint64_t>(j, "seed");
  return s;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  return j;
}

ordered_json loss_json(const EpochRecord& r) {
  ordered_json j;
  j["can"] = r.can;
  j["multi"] = r.multi;
  j["con"] = r.con;
  j["kl"] = r.kl;
  j["moe"] = r.moe;
  j["total"] = r.total;
  return j;
}

ordered_json gate_stats_json(const GateStats& s) {
  static constexpr const char* kExperts[3] = {"speech", "text", "multimodal"};
  ordered_json j;
  j["count"] = s.count;
  for (std::size_t e = 0; e < 3; ++e) j["mean"][kExperts[e]] = s.mean[e];
  for (std::size_t e = 0; e < 3; ++e) j["histogram"][kExperts[e]] = s.histogram[e];
  j["per_class"] = ordered_json::array();
  for (std::size_t c = 0; c < s.per_class_count.size(); ++c) {
    ordered_json row;
    row["class"] = c;
    row["count"] = s.per_class_count[c];
    for (std::size_t e = 0; e < 3; ++e) row[kExperts[e]] = s.per_class_mean[c][e];
    j["per_class"].push_back(row);
  }
  return j;
}

ordered_json evaluation_json(const Evaluation& ev, const Dataset& data) {
  ordered_json j;
  j["split"] = to_string(data.split);
  j["utterances"] = ev.labels.size();
  j["weighted_f1"] = ev.weighted_f1;
  j["per_class_f1"] = ev.per_class.f1;
  j["confusion"] = ev.confusion.counts;
  ordered_json experts = ordered_json::object();
  if (ev.speech_f1) experts["speech"] = *ev.speech_f1;
  if (ev.text_f1) experts["text"] = *ev.text_f1;
  if (ev.multi_f1) experts["multimodal"] = *ev.multi_f1;
  j["expert_weighted_f1"] = experts;
  j["loss"] = loss_json(ev.loss);
  if (!ev.gates.empty()) {
    const GateStats stats = gate_stats(ev.gates, data.class_count);
    j["gate_means"] = stats.mean;
    j["gate_stats"] = gate_stats_json(stats);
  }
  return j;
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  auto name = [&](std::size_t c) { return c < names.size() ? names[c] : std::to_string(c); };
  std::string out = "true\\pred";
  for (std::size_t c = 0; c < cm.counts.size(); ++c) out += "," + name(c);
  out += '\n';
  for (std::size_t r = 0; r < cm.counts.size(); ++r) {
    out += name(r);
    for (std::size_t v : cm.counts[r]) out += "," + std::to_string(v);
    out += '\n';
  }
  return out;
}

const Dataset& pick_split(const DatasetSplits& d, Split s) {
  switch (s) {
    case Split::train: return d.train;
    case Split::val: return d.val;
    case Split::test: return d.test;
  }
  return d.test;
}

void write_evaluation(const std::filesystem::path& dir, const Evaluation& ev, const Dataset& data,
                      ordered_json extra = {}) {
  std::filesystem::create_directories(dir);
  ordered_json metrics = evaluation_json(ev, data);
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) metrics[k] = v;
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(dir / "confusion.csv", confusion_csv(ev.confusion, data.class_names));
  if (!ev.gates.empty()) write_gate_csv(dir / "gates.csv", ev.gates);
}

}  // namespace

ordered_json config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["data"]["synth"] = synth_to_json(cfg.synth);
  if (cfg.paths) {
    j["data"]["paths"] = {{"train", cfg.paths->train.string()},
                          {"val", cfg.paths->val.string()},
                          {"test", cfg.paths->test.string()}};
  } else {
    j["data"]["paths"] = nullptr;
  }
  const ModelConfig& m = cfg.model;
  j["model"]["can"] = {{"tin_channels", m.tin_channels}, {"gru_hidden", m.gru_hidden},
                       {"gru_layers", m.gru_layers},     {"fc_hidden", m.fc_hidden},
                       {"fc_dropout", m.fc_dropout}};
  j["model"]["fusion"] = {{"model_dim", m.model_dim}, {"heads", m.heads},
                          {"layers", m.fusion_layers}, {"dropout", m.fusion_dropout},
                          {"ff_multiplier", m.ff_multiplier}};
  j["model"]["gate"] = {{"hidden", m.gate_hidden}};
  const TrainConfig& t = cfg.train;
  j["train"] = {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
                {"epochs", t.epochs},               {"clip_norm", t.clip_norm},
                {"seed", t.seed},                   {"variant", to_string(t.variant)}};
  j["loss"] = {{"gamma", t.loss.gamma}, {"lambda", t.loss.lambda}, {"alpha", t.loss.alpha},
               {"tau", t.loss.tau}};
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

ordered_json default_config_json() { return config_to_json(RunConfig{}); }

ordered_json resolve_config_json(const json& user, const std::vector<std::string>& overrides) {
  ordered_json resolved = default_config_json();
  if (!user.is_null()) merge_into(resolved, user, "");
  for (const auto& o : overrides) merge_into(resolved, override_patch(o), "");
  return resolved;
}

RunConfig config_from_json(const ordered_json& r) {
  RunConfig cfg;
  try {
    const auto& data = r.at("data");
    cfg.synth = synth_from_json(data.at("synth"));
    if (!data.at("paths").is_null()) {
      const auto& p = data.at("paths");
      for (const char* k : {"train", "val", "test"}) {
        if (!p.contains(k)) throw ConfigError(std::string("data.paths.") + k + " is required");
      }
      cfg.paths = DataPaths{p.at("train").get<std::string>(), p.at("val").get<std::string>(),
                            p.at("test").get<std::string>()};
      for (const auto& path : {cfg.paths->train, cfg.paths->val, cfg.paths->test}) {
        if (!std::filesystem::exists(path)) throw ConfigError("data path not found: " + path.string());
      }
    }
    const auto& can = r.at("model").at("can");
    const auto& fusion = r.at("model").at("fusion");
    ModelConfig& m = cfg.model;
    m.tin_channels = get_as<std::size_t>(can, "tin_channels");
    m.gru_hidden = get_as<std::size_t>(can, "gru_hidden");
    m.gru_layers = get_as<std::size_t>(can, "gru_layers");
    m.fc_hidden = get_as<std::size_t>(can, "fc_hidden");
    m.fc_dropout = get_as<double>(can, "fc_dropout");
    m.model_dim = get_as<std::size_t>(fusion, "model_dim");
    m.heads = get_as<std::size_t>(fusion, "heads");
    m.fusion_layers = get_as<std::size_t>(fusion, "layers");
    m.fusion_dropout = get_as<double>(fusion, "dropout");
    m.ff_multiplier = get_as<std::size_t>(fusion, "ff_multiplier");
    m.gate_hidden = get_as<std::size_t>(r.at("model").at("gate"), "hidden");

    const auto& t = r.at("train");
    cfg.train.learning_rate = get_as<double>(t, "learning_rate");
    cfg.train.batch_size = get_as<std::size_t>(t, "batch_size");
    cfg.train.epochs = get_as<std::size_t>(t, "epochs");
    cfg.train.clip_norm = get_as<double>(t, "clip_norm");
    cfg.train.seed = get_as<std::uint64_t>(t, "seed");
    cfg.train.variant = variant_from_string(get_as<std::string>(t, "variant"));
    const auto& l = r.at("loss");
    cfg.train.loss.gamma = get_as<double>(l, "gamma");
    cfg.train.loss.lambda = get_as<double>(l, "lambda");
    cfg.train.loss.alpha = get_as<double>(l, "alpha");
    cfg.train.loss.tau = get_as<double>(l, "tau");
    cfg.output_dir = get_as<std::string>(r, "output_dir");

    cfg.synth.validate();
    cfg.train.validate();
    // Surface bad model shapes before any work starts.
    can_config(cfg.model, cfg.synth.d_s, cfg.synth.class_count).validate();
    fusion_config(cfg.model, cfg.synth.d_s, cfg.synth.d_t, cfg.synth.class_count).validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  const json user = path.empty() ? json() : read_json_file(path);
  return config_from_json(resolve_config_json(user, overrides));
}

std::string run_id(const RunConfig& cfg) {
  ordered_json j = config_to_json(cfg);
  j.erase("output_dir");
  return hex16(fnv1a(j.dump()));
}

DatasetSplits load_datasets(const RunConfig& cfg) {
  if (!cfg.paths) return generate(cfg.synth);
  DatasetSplits d;
  d.train = load_jsonl(cfg.paths->train, Split::train);
  d.val = load_jsonl(cfg.paths->val, Split::val);
  d.test = load_jsonl(cfg.paths->test, Split::test);
  for (const Dataset* x : {&d.val, &d.test}) {
    if (x->d_s != d.train.d_s || x->d_t != d.train.d_t || x->class_count != d.train.class_count) {
      throw DatasetError("dataset splits disagree on dimensions or class count");
    }
  }
  return d;
}

RunResult run_training(const RunConfig& cfg) {
  RunResult result;
  result.run_id = run_id(cfg);
  result.run_dir = cfg.output_dir / result.run_id;
  std::filesystem::create_directories(result.run_dir);
  write_text(result.run_dir / "config.json", config_to_json(cfg).dump(2) + "\n");

  const DatasetSplits data = load_datasets(cfg);
  Model model(cfg.train.variant, cfg.model, shape_of(data.train), cfg.train.seed);
  result.report = train(model, data.train, data.val, cfg.train, result.run_dir);
  result.test = evaluate(model, data.test, cfg.train.loss, cfg.train.batch_size);

  ordered_json summary;
  summary["run_id"] = result.run_id;
  summary["variant"] = to_string(cfg.train.variant);
  summary["parameter_count"] = result.report.parameter_count;
  summary["epochs_run"] = result.report.history.size();
  summary["best_epoch"] =
      result.report.best_epoch ? ordered_json(*result.report.best_epoch) : ordered_json(nullptr);
  summary["best_val_weighted_f1"] = result.report.best_val_f1;
  summary["wall_seconds"] = result.report.wall_seconds;
  write_evaluation(result.run_dir, result.test, data.test, {{"train", summary}});
  return result;
}

std::vector<SweepCell> parse_sweep_manifest(const json& manifest) {
  if (!manifest.is_object()) throw ConfigError("sweep manifest must be a JSON object");
  for (const auto& [k, v] : manifest.items()) {
    if (k != "cells" && k != "grid") throw ConfigError("unknown key '" + k + "' in sweep manifest");
  }
  auto number = [](const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("sweep manifest: '" + key + "' must be a number");
    return v.get<double>();
  };
  auto cell_from = [&](const json& c) {
    if (!c.is_object()) throw ConfigError("sweep manifest: each cell must be an object");
    SweepCell cell;
    for (const auto& [k, v] : c.items()) {
      if (k == "variant") {
        if (!v.is_string()) throw ConfigError("sweep manifest: 'variant' must be a string");
        try {
          cell.variant = variant_from_string(v.get<std::string>());
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      } else if (k == "gamma") {
        cell.gamma = number(v, k);
      } else if (k == "lambda") {
        cell.lambda = number(v, k);
      } else if (k == "alpha") {
        cell.alpha = number(v, k);
      } else if (k == "tau") {
        cell.tau = number(v, k);
      } else if (k == "seed") {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
          throw ConfigError("sweep manifest: 'seed' must be a non-negative integer");
        cell.seed = v.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown key '" + k + "' in sweep cell");
      }
    }
    return cell;
  };

  std::vector<SweepCell> cells;
  if (manifest.contains("cells")) {
    if (!manifest["cells"].is_array()) throw ConfigError("sweep manifest: 'cells' must be a list");
    for (const auto& c : manifest["cells"]) cells.push_back(cell_from(c));
  }
  if (manifest.contains("grid")) {
    const json& grid = manifest["grid"];
    if (!grid.is_object()) throw ConfigError("sweep manifest: 'grid' must be an object");
    std::vector<json> combos{json::object()};
    for (const char* axis : {"variant", "gamma", "lambda", "alpha", "tau", "seed"}) {
      if (!grid.contains(axis)) continue;
      if (!grid[axis].is_array() || grid[axis].empty()) {
        throw ConfigError(std::string("sweep manifest: grid axis '") + axis + "' must be a nonempty list");
      }
      std::vector<json> next;
      for (const auto& c : combos)
        for (const auto& v : grid[axis]) {
          json e = c;
          e[axis] = v;
          next.push_back(std::move(e));
        }
      combos = std::move(next);
    }
    for (const auto& [k, v] : grid.items()) {
      if (k != "variant" && k != "gamma" && k != "lambda" && k != "alpha" && k != "tau" && k != "seed")
        throw ConfigError("unknown grid axis '" + k + "'");
    }
    for (const auto& c : combos) cells.push_back(cell_from(c));
  }
  if (cells.empty()) throw ConfigError("sweep manifest has no cells");
  return cells;
}

namespace {

RunConfig merge_cell(const RunConfig& base, const SweepCell& cell) {
  RunConfig cfg = base;
  if (cell.variant) cfg.train.variant = *cell.variant;
  if (cell.gamma) cfg.train.loss.gamma = *cell.gamma;
  if (cell.lambda) cfg.train.loss.lambda = *cell.lambda;
  if (cell.alpha) cfg.train.loss.alpha = *cell.alpha;
  if (cell.tau) cfg.train.loss.tau = *cell.tau;
  if (cell.seed) cfg.train.seed = *cell.seed;
  return cfg;
}

}  // namespace

RunConfig apply_cell(const RunConfig& base, const SweepCell& cell) {
  RunConfig cfg = merge_cell(base, cell);
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

/// Collects dotted overrides from the arguments CLI11 did not consume.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (!a.starts_with("--") || a.size() == 2) {
      throw ConfigError("unexpected argument '" + a + "'");
    }
    std::string item = a.substr(2);
    if (item.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) throw ConfigError("override '" + a + "' needs a value");
      item += "=" + extras[++i];
    }
    out.push_back(item);
  }
  return out;
}

int cmd_gen_data(const RunConfig& cfg, std::filesystem::path out_dir, std::ostream& out) {
  if (out_dir.empty()) {
    out_dir = cfg.output_dir / ("data-" + hex16(fnv1a(synth_to_json(cfg.synth).dump())));
  }
  const DatasetSplits d = generate(cfg.synth);
  std::filesystem::create_directories(out_dir);
  for (const Dataset* split : {&d.train, &d.val, &d.test}) {
    const auto path = out_dir / (to_string(split->split) + ".jsonl");
    save_jsonl(path, *split);
    out << "wrote " << path.string() << " (" << split->conversations.size() << " conversations, "
        << split->utterance_count() << " utterances)\n";
  }
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const RunResult r = run_training(cfg);
  out << "run " << r.run_id << " (" << to_string(cfg.train.variant) << ", "
      << r.report.parameter_count << " parameters)\n";
  if (r.report.best_epoch) {
    out << "best epoch " << *r.report.best_epoch << ", val weighted F1 "
        << fmt(r.report.best_val_f1) << "\n";
  }
  out << "test weighted F1 " << fmt(r.test.weighted_f1) << "\n";
  out << "artifacts in " << r.run_dir.string() << "\n";
  return kExitOk;
}

Model model_from_checkpoint(const RunConfig& cfg, const DatasetSplits& data,
                            std::filesystem::path checkpoint) {
  if (checkpoint.empty()) checkpoint = cfg.output_dir / run_id(cfg) / "checkpoint.mste";
  Model model(cfg.train.variant, cfg.model, shape_of(data.train), cfg.train.seed);
  load_checkpoint(checkpoint, model.parameters());
  return model;
}

int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, Split split,
             bool gates_only, std::ostream& out) {
  const DatasetSplits data = load_datasets(cfg);
  const Model model = model_from_checkpoint(cfg, data, checkpoint);
  const Dataset& d = pick_split(data, split);
  const Evaluation ev = evaluate(model, d, cfg.train.loss, cfg.train.batch_size);
  const auto dir =
      cfg.output_dir / run_id(cfg) / ((gates_only ? "gates-" : "eval-") + to_string(split));
  if (gates_only && ev.gates.empty()) {
    throw ConfigError("variant '" + to_string(cfg.train.variant) + "' has no gate");
  }
  write_evaluation(dir, ev, d);
  out << to_string(split) << " weighted F1 " << fmt(ev.weighted_f1) << "\n";
  if (!ev.gates.empty()) {
    const GateStats s = gate_stats(ev.gates, d.class_count);
    out << "mean gate weights: speech " << fmt(s.mean[0]) << ", text " << fmt(s.mean[1])
        << ", multimodal " << fmt(s.mean[2]) << "\n";
  }
  out << "artifacts in " << dir.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& base, const std::filesystem::path& manifest_path,
               std::filesystem::path csv_path, std::ostream& out, std::ostream& err) {
  const json manifest = read_json_file(manifest_path);
  const auto cells = parse_sweep_manifest(manifest);
  if (csv_path.empty()) {
    csv_path = base.output_dir /
               ("sweep-" + hex16(fnv1a(config_to_json(base).dump() + manifest.dump())) + ".csv");
  }
  std::string csv =
      "variant,gamma,loss,lambda,alpha,tau,seed,run_id,parameter_count,best_epoch,"
      "val_weighted_f1,test_weighted_f1,status\n";
  for (const auto& cell : cells) {
    const RunConfig cfg = merge_cell(base, cell);
    const TrainConfig& t = cfg.train;
    std::string row = to_string(t.variant) + "," + fmt(t.loss.gamma) + "," +
                      (t.loss.gamma == 0.0 ? "cross-entropy" : "focal") + "," +
                      fmt(t.loss.lambda) + "," + fmt(t.loss.alpha) + "," + fmt(t.loss.tau) + "," +
                      std::to_string(t.seed) + "," + run_id(cfg) + ",";
    try {
      const RunResult r = run_training(apply_cell(base, cell));
      row += std::to_string(r.report.parameter_count) + "," +
             (r.report.best_epoch ? std::to_string(*r.report.best_epoch) : std::string()) + "," +
             fmt(r.report.best_val_f1) + "," + fmt(r.test.weighted_f1) + ",ok";
      out << to_string(t.variant) << " gamma=" << fmt(t.loss.gamma) << " seed=" << t.seed
          << ": test weighted F1 " << fmt(r.test.weighted_f1) << "\n";
    } catch (const std::exception& e) {
      std::string msg = e.what();
      for (char& c : msg)
        if (c == ',' || c == '\n') c = ' ';
      row += ",,,,failed: " + msg;
      err << "cell failed (" << to_string(t.variant) << ", seed " << t.seed << "): " << e.what()
          << "\n";
    }
    csv += row + "\n";
  }
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  write_text(csv_path, csv);
  out << "wrote " << csv_path.string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  SynthConfig data = cfg.synth;
  data.conversations_per_split = {2, 1, 1};
  data.max_utterances = std::min<std::size_t>(data.max_utterances, 3);
  data.min_utterances = std::min(data.min_utterances, data.max_utterances);
  const GradCheckReport r =
      grad_check_model(cfg.train.variant, cfg.model, cfg.train.loss, data, cfg.train.seed);

  ordered_json j;
  j["variant"] = to_string(cfg.train.variant);
  j["passed"] = r.passed();
  j["elements_checked"] = r.elements_checked;
  j["failures"] = r.failures;
  for (const auto& p : r.parameters) {
    j["parameters"].push_back({{"name", p.name},
                               {"elements", p.elements},
                               {"max_rel_error", p.max_rel_error},
                               {"max_abs_error", p.max_abs_error},
                               {"passed", p.passed}});
  }
  const auto dir = cfg.output_dir / run_id(cfg);
  std::filesystem::create_directories(dir);
  write_text(dir / "gradcheck.json", j.dump(2) + "\n");

  double worst = 0.0;
  for (const auto& p : r.parameters) worst = std::max(worst, p.max_rel_error);
  out << (r.passed() ? "PASS" : "FAIL") << ": " << r.parameters.size() << " parameters, "
      << r.elements_checked << " elements, max relative error " << fmt(worst) << "\n";
  for (const auto& name : r.failures) out << "  failed: " << name << "\n";
  return r.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture-of-experts emotion recognition in conversations"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir, checkpoint, split_name = "test", variant_name, manifest_path, csv_path;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "RunConfig JSON file");
    sub->allow_extras();
    sub->footer("Any config value can be overridden with --section.key=value.");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic train/val/test datasets");
  add_config(gen);
  gen->add_option("-o,--out", out_dir, "Output directory");
  CLI::App* tr = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  add_config(tr);
  tr->add_option("--variant", variant_name, "Model variant");
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_config(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file (default: the run's best)");
  ev->add_option("--split", split_name, "train, val or test");
  CLI::App* gates = app.add_subcommand("gates", "Export per-utterance gate weights");
  add_config(gates);
  gates->add_option("--checkpoint", checkpoint, "Checkpoint file (default: the run's best)");
  gates->add_option("--split", split_name, "train, val or test");
  CLI::App* ablate = app.add_subcommand("ablate", "Run a sweep of variants and hyperparameters");
  add_config(ablate);
  ablate->add_option("-m,--manifest", manifest_path, "Sweep manifest JSON")->required();
  ablate->add_option("-o,--out", csv_path, "Output CSV");
  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_config(gc);

  std::vector<std::string> argv_store{"mistere"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    std::vector<std::string> overrides = collect_overrides(sub->remaining());
    if (sub == tr && !variant_name.empty()) overrides.push_back("train.variant=\"" + variant_name + "\"");
    const RunConfig cfg = load_run_config(config_path, overrides);

    if (sub == gen) return cmd_gen_data(cfg, out_dir, out);
    if (sub == tr) return cmd_train(cfg, out);
    if (sub == ev || sub == gates) {
      Split split;
      try {
        split = split_from_string(split_name);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
      return cmd_eval(cfg, checkpoint, split, sub == gates, out);
    }
    if (sub == ablate) return cmd_ablate(cfg, manifest_path, csv_path, out, err);
    return cmd_gradcheck(cfg, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace mistere
