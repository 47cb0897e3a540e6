#include "mistere/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mistere/rng.hpp"

namespace mistere {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DatasetError("unknown split '" + s + "'");
}

namespace {

void validate_conversation(const Conversation& c, std::size_t class_count,
                           std::size_t d_s, std::size_t d_t) {
  if (c.utterances.empty()) throw DatasetError("conversation '" + c.id + "' is empty");
  for (const auto& u : c.utterances) {
    if (u.speech.size() != d_s) {
      throw DatasetError("utterance '" + u.id + "': speech embedding has " +
                         std::to_string(u.speech.size()) + " values, expected " +
                         std::to_string(d_s));
    }
    if (u.text.size() != d_t) {
      throw DatasetError("utterance '" + u.id + "': text embedding has " +
                         std::to_string(u.text.size()) + " values, expected " +
                         std::to_string(d_t));
    }
    if (u.label >= class_count) {
      throw DatasetError("utterance '" + u.id + "': label " + std::to_string(u.label) +
                         " out of range for " + std::to_string(class_count) + " classes");
    }
  }
}

}  // namespace

void Dataset::validate() const {
  if (class_count == 0) throw DatasetError("class_count must be >= 1");
  if (d_s == 0 || d_t == 0) throw DatasetError("embedding dimensions must be >= 1");
  if (!class_names.empty() && class_names.size() != class_count) {
    throw DatasetError("class_names has " + std::to_string(class_names.size()) +
                       " entries, expected " + std::to_string(class_count));
  }
  for (const auto& c : conversations) validate_conversation(c, class_count, d_s, d_t);
}

std::size_t Dataset::utterance_count() const {
  std::size_t n = 0;
  for (const auto& c : conversations) n += c.size();
  return n;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(utterance_count());
  for (const auto& c : conversations)
    for (const auto& u : c.utterances) out.push_back(u.label);
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& jsonl) {
  auto p = jsonl;
  p.replace_extension(".meta.json");
  return p;
}

DatasetMeta load_meta(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot open sidecar " + path.string());
  json j;
  try {
    is >> j;
    DatasetMeta m;
    m.class_count = j.at("class_count").get<std::size_t>();
    m.d_s = j.at("d_s").get<std::size_t>();
    m.d_t = j.at("d_t").get<std::size_t>();
    if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw DatasetError("malformed sidecar " + path.string() + ": " + e.what());
  }
}

void save_meta(const std::filesystem::path& path, const DatasetMeta& meta) {
  json j{{"class_count", meta.class_count},
         {"d_s", meta.d_s},
         {"d_t", meta.d_t},
         {"class_names", meta.class_names}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  os << j.dump() << '\n';
}

Dataset load_jsonl(const std::filesystem::path& path, Split split) {
  return load_jsonl(path, load_meta(sidecar_path(path)), split);
}

Dataset load_jsonl(const std::filesystem::path& path, const DatasetMeta& meta, Split split) {
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot open " + path.string());
  Dataset d;
  d.class_count = meta.class_count;
  d.d_s = meta.d_s;
  d.d_t = meta.d_t;
  d.class_names = meta.class_names;
  d.split = split;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      Conversation c;
      c.id = j.at("id").get<std::string>();
      for (const auto& uj : j.at("utterances")) {
        UtteranceRecord u;
        u.id = uj.at("id").get<std::string>();
        const auto label = uj.at("label").get<long long>();
        if (label < 0) throw DatasetError(where + ": negative label");
        u.label = static_cast<std::size_t>(label);
        u.speech = uj.at("speech").get<std::vector<double>>();
        u.text = uj.at("text").get<std::vector<double>>();
        c.utterances.push_back(std::move(u));
      }
      d.conversations.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw DatasetError(where + ": malformed line: " + e.what());
    }
    try {
      validate_conversation(d.conversations.back(), d.class_count, d.d_s, d.d_t);
    } catch (const DatasetError& e) {
      throw DatasetError(where + ": " + e.what());
    }
  }
  if (d.conversations.empty()) throw DatasetError(path.string() + ": no conversations");
  d.validate();
  return d;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& dataset) {
  dataset.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path.string());
  for (const auto& c : dataset.conversations) {
    json utts = json::array();
    for (const auto& u : c.utterances) {
      utts.push_back(json{{"id", u.id}, {"label", u.label}, {"speech", u.speech}, {"text", u.text}});
    }
    os << json{{"id", c.id}, {"utterances", std::move(utts)}}.dump() << '\n';
  }
  if (!os) throw DatasetError("failed writing " + path.string());
  save_meta(sidecar_path(path),
            DatasetMeta{dataset.class_count, dataset.d_s, dataset.d_t, dataset.class_names});
}

void SynthConfig::validate() const {
  if (class_count == 0) throw DatasetError("synth: class_count must be >= 1");
  if (d_s == 0 || d_t == 0) throw DatasetError("synth: dimensions must be >= 1");
  if (min_utterances == 0 || min_utterances > max_utterances) {
    throw DatasetError("synth: utterance range must satisfy 1 <= min <= max");
  }
  if (!(speech_snr >= 0.0) || !(text_snr >= 0.0)) throw DatasetError("synth: snr must be >= 0");
  if (!(emotion_shift_prob >= 0.0 && emotion_shift_prob <= 1.0)) {
    throw DatasetError("synth: emotion_shift_prob must lie in [0, 1]");
  }
  if (!class_priors.empty()) {
    if (class_priors.size() != class_count) {
      throw DatasetError("synth: class_priors needs one entry per class");
    }
    double total = 0.0;
    for (double p : class_priors) {
      if (!(p >= 0.0)) throw DatasetError("synth: class_priors must be nonnegative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DatasetError("synth: class_priors must sum to 1");
  }
}

std::vector<double> SynthConfig::priors() const {
  if (!class_priors.empty()) return class_priors;
  return std::vector<double>(class_count, 1.0 / static_cast<double>(class_count));
}

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> embed(const std::vector<double>& proto, double snr, Rng& rng) {
  std::vector<double> v(proto.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = snr * proto[i] + rng.normal();
  return v;
}

}  // namespace

Prototypes generate_prototypes(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Prototypes p;
  for (std::size_t c = 0; c < cfg.class_count; ++c) p.speech.push_back(random_unit(cfg.d_s, rng));
  for (std::size_t c = 0; c < cfg.class_count; ++c) p.text.push_back(random_unit(cfg.d_t, rng));
  return p;
}

DatasetSplits generate(const SynthConfig& cfg) {
  cfg.validate();
  const Prototypes protos = generate_prototypes(cfg);
  // Separate stream for utterances so prototypes do not depend on split sizes.
  Rng rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  const std::vector<double> priors = cfg.priors();

  auto make_split = [&](Split split, std::size_t count) {
    Dataset d;
    d.class_count = cfg.class_count;
    d.d_s = cfg.d_s;
    d.d_t = cfg.d_t;
    d.split = split;
    const std::string tag = to_string(split);
    for (std::size_t i = 0; i < count; ++i) {
      Conversation c;
      c.id = tag + "_" + std::to_string(i);
      const std::size_t n =
          cfg.min_utterances + rng.below(cfg.max_utterances - cfg.min_utterances + 1);
      std::size_t label = rng.categorical(priors);
      for (std::size_t k = 0; k < n; ++k) {
        if (k > 0 && rng.uniform() < cfg.emotion_shift_prob) {
          std::vector<double> others = priors;
          others[label] = 0.0;
          if (std::accumulate(others.begin(), others.end(), 0.0) > 0.0) {
            label = rng.categorical(others);
          }
        }
        UtteranceRecord u;
        u.id = c.id + "_" + std::to_string(k);
        u.label = label;
        u.speech = embed(protos.speech[label], cfg.speech_snr, rng);
        u.text = embed(protos.text[label], cfg.text_snr, rng);
        c.utterances.push_back(std::move(u));
      }
      d.conversations.push_back(std::move(c));
    }
    return d;
  };

  DatasetSplits out;
  out.train = make_split(Split::train, cfg.conversations_per_split.train);
  out.val = make_split(Split::val, cfg.conversations_per_split.val);
  out.test = make_split(Split::test, cfg.conversations_per_split.test);
  return out;
}

std::vector<Batch> make_batches(const Dataset& data, std::span<const std::size_t> order,
                                std::size_t max_batch) {
  if (max_batch == 0) throw std::invalid_argument("make_batches: max_batch must be >= 1");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += max_batch) {
    const std::size_t end = std::min(order.size(), start + max_batch);
    Batch b;
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t ci = order[i];
      if (ci >= data.conversations.size()) throw std::out_of_range("make_batches: bad index");
      b.conversation_indices.push_back(ci);
      b.length = std::max(b.length, data.conversations[ci].size());
    }
    for (std::size_t ci : b.conversation_indices) {
      const Conversation& c = data.conversations[ci];
      nn::Mask mask(b.length, false);
      Tensor s({b.length, data.d_s}, 0.0);
      Tensor t({b.length, data.d_t}, 0.0);
      std::vector<std::size_t> labels(b.length, 0);
      for (std::size_t k = 0; k < c.size(); ++k) {
        mask[k] = true;
        const auto& u = c.utterances[k];
        std::copy(u.speech.begin(), u.speech.end(), s.data().begin() + static_cast<std::ptrdiff_t>(k * data.d_s));
        std::copy(u.text.begin(), u.text.end(), t.data().begin() + static_cast<std::ptrdiff_t>(k * data.d_t));
        labels[k] = u.label;
      }
      b.masks.push_back(std::move(mask));
      b.speech.push_back(std::move(s));
      b.text.push_back(std::move(t));
      b.labels.push_back(std::move(labels));
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Batch> make_batches(const Dataset& data, std::size_t max_batch) {
  std::vector<std::size_t> order(data.conversations.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return make_batches(data, order, max_batch);
}

}  // namespace mistere
