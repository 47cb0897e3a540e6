#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mistere/nn.hpp"
#include "mistere/tensor.hpp"

namespace mistere {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UtteranceRecord {
  std::string id;
  std::vector<double> speech;  // d_s values
  std::vector<double> text;    // d_t values
  std::size_t label = 0;

  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

struct Conversation {
  std::string id;
  std::vector<UtteranceRecord> utterances;  // conversational order

  std::size_t size() const { return utterances.size(); }
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Dataset {
  std::vector<Conversation> conversations;
  std::size_t class_count = 0;
  std::size_t d_s = 0;
  std::size_t d_t = 0;
  Split split = Split::train;
  std::vector<std::string> class_names;  // optional, class_count entries when set

  /// Throws DatasetError on any broken invariant.
  void validate() const;
  std::size_t utterance_count() const;
  std::vector<std::size_t> labels() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Contents of the `<name>.meta.json` sidecar.
struct DatasetMeta {
  std::size_t class_count = 0;
  std::size_t d_s = 0;
  std::size_t d_t = 0;
  std::vector<std::string> class_names;
};

/// Sidecar path for a dataset file: `dir/train.jsonl` -> `dir/train.meta.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& jsonl);

DatasetMeta load_meta(const std::filesystem::path& path);
void save_meta(const std::filesystem::path& path, const DatasetMeta& meta);

/// Reads a JSONL dataset; the sidecar next to it supplies class count and dims.
Dataset load_jsonl(const std::filesystem::path& path, Split split = Split::train);
Dataset load_jsonl(const std::filesystem::path& path, const DatasetMeta& meta,
                   Split split = Split::train);
/// Writes the JSONL file and its sidecar.
void save_jsonl(const std::filesystem::path& path, const Dataset& dataset);

struct SplitCounts {
  std::size_t train = 8;
  std::size_t val = 4;
  std::size_t test = 4;
};

struct SynthConfig {
  std::size_t class_count = 4;
  std::size_t d_s = 64;
  std::size_t d_t = 64;
  SplitCounts conversations_per_split;
  std::size_t min_utterances = 6;
  std::size_t max_utterances = 12;
  double speech_snr = 4.0;
  double text_snr = 4.0;
  std::vector<double> class_priors;  // empty means uniform
  double emotion_shift_prob = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> priors() const;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Prototype-plus-noise generator.
///
/// Each class c owns fixed random unit vectors mu_s[c], mu_t[c]. An utterance
/// of class y gets speech = speech_snr * mu_s[y] + N(0, I) and likewise for
/// text. Labels within a conversation follow a Markov chain: the first label
/// is drawn from the priors; each subsequent utterance keeps the previous
/// class with probability 1 - emotion_shift_prob, otherwise moves to a
/// different class drawn from the priors restricted to the other classes.
DatasetSplits generate(const SynthConfig& cfg);

/// Class prototypes used by `generate` (speech then text), exposed for tests.
struct Prototypes {
  std::vector<std::vector<double>> speech;
  std::vector<std::vector<double>> text;
};
Prototypes generate_prototypes(const SynthConfig& cfg);

/// A group of whole conversations padded to a common length.
struct Batch {
  std::vector<std::size_t> conversation_indices;
  std::size_t length = 0;                        // max N_i in the batch
  std::vector<nn::Mask> masks;                   // per conversation, `length` entries
  std::vector<Tensor> speech;                    // length x d_s, padded rows zero
  std::vector<Tensor> text;                      // length x d_t
  std::vector<std::vector<std::size_t>> labels;  // padded entries are 0

  std::size_t size() const { return conversation_indices.size(); }
};

/// Groups conversations (visited in `order`) into batches of at most
/// `max_batch`. A conversation is never split across batches.
std::vector<Batch> make_batches(const Dataset& data, std::span<const std::size_t> order,
                                std::size_t max_batch);
std::vector<Batch> make_batches(const Dataset& data, std::size_t max_batch);

}  // namespace mistere
