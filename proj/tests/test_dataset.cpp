#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "mistere/dataset.hpp"
#include "mistere/losses.hpp"
#include "mistere/metrics.hpp"
#include "test_util.hpp"

using namespace mistere;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mistere_dataset_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

DatasetMeta meta4() {
  DatasetMeta m;
  m.class_count = 3;
  m.d_s = 4;
  m.d_t = 4;
  return m;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.d_s = 8;
  c.d_t = 8;
  c.conversations_per_split = {6, 3, 3};
  c.seed = 5;
  return c;
}

}  // namespace

TEST(LoadJsonl, EmptyFileRejected) {
  const auto dir = scratch("empty");
  write_text(dir / "d.jsonl", "");
  try {
    load_jsonl(dir / "d.jsonl", meta4());
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("no conversations"), std::string::npos);
  }
}

TEST(LoadJsonl, MinimalConversation) {
  const auto dir = scratch("minimal");
  write_text(dir / "d.jsonl",
             R"({"id":"c0","utterances":[{"id":"u0","label":2,"speech":[1,2,3,4],"text":[0,0,0,0.5]}]})"
             "\n");
  const Dataset d = load_jsonl(dir / "d.jsonl", meta4());
  ASSERT_EQ(d.conversations.size(), 1u);
  EXPECT_EQ(d.conversations[0].size(), 1u);
  EXPECT_EQ(d.conversations[0].utterances[0].label, 2u);
  EXPECT_EQ(d.conversations[0].utterances[0].text[3], 0.5);
}

TEST(LoadJsonl, ErrorsNameTheLine) {
  const auto dir = scratch("errors");
  const std::string good =
      R"({"id":"c0","utterances":[{"id":"u0","label":0,"speech":[1,2,3,4],"text":[1,2,3,4]}]})";
  auto expect_line = [&](const std::string& second, const std::string& needle) {
    write_text(dir / "d.jsonl", good + "\n" + second + "\n");
    try {
      load_jsonl(dir / "d.jsonl", meta4());
      FAIL() << "expected DatasetError for " << second;
    } catch (const DatasetError& e) {
      const std::string msg = e.what();
      EXPECT_NE(msg.find("d.jsonl:2"), std::string::npos) << msg;
      EXPECT_NE(msg.find(needle), std::string::npos) << msg;
    }
  };
  expect_line("{not json", "malformed");
  expect_line(R"({"id":"c1","utterances":[{"id":"u","label":0,"speech":[1,2,3],"text":[1,2,3,4]}]})",
              "speech embedding");
  expect_line(R"({"id":"c1","utterances":[{"id":"u","label":3,"speech":[1,2,3,4],"text":[1,2,3,4]}]})",
              "label");
}

TEST(LoadJsonl, RoundTripThroughSidecar) {
  const auto dir = scratch("roundtrip");
  DatasetSplits s = generate(small_synth());
  s.train.class_names = {"anger", "joy", "neutral", "sad"};
  save_jsonl(dir / "train.jsonl", s.train);
  EXPECT_TRUE(std::filesystem::exists(sidecar_path(dir / "train.jsonl")));
  EXPECT_EQ(sidecar_path(dir / "train.jsonl").filename(), "train.meta.json");
  const Dataset back = load_jsonl(dir / "train.jsonl", Split::train);
  EXPECT_EQ(back, s.train);

  save_jsonl(dir / "again.jsonl", back);
  std::ifstream a(dir / "train.jsonl"), b(dir / "again.jsonl");
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(Generate, DeterministicPerSeed) {
  const DatasetSplits a = generate(small_synth());
  const DatasetSplits b = generate(small_synth());
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  SynthConfig other = small_synth();
  other.seed = 6;
  EXPECT_NE(generate(other).train, a.train);
}

TEST(Generate, ShapesAndSplits) {
  SynthConfig c = small_synth();
  c.min_utterances = 2;
  c.max_utterances = 4;
  const DatasetSplits s = generate(c);
  EXPECT_EQ(s.train.conversations.size(), 6u);
  EXPECT_EQ(s.val.conversations.size(), 3u);
  EXPECT_EQ(s.test.conversations.size(), 3u);
  EXPECT_EQ(s.val.split, Split::val);
  for (const Dataset* d : {&s.train, &s.val, &s.test}) {
    EXPECT_NO_THROW(d->validate());
    for (const auto& conv : d->conversations) {
      EXPECT_GE(conv.size(), 2u);
      EXPECT_LE(conv.size(), 4u);
    }
  }
}

TEST(Generate, PrototypesAreUnitVectors) {
  const Prototypes p = generate_prototypes(small_synth());
  ASSERT_EQ(p.speech.size(), 4u);
  for (const auto* set : {&p.speech, &p.text})
    for (const auto& v : *set) {
      const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      EXPECT_NEAR(n, 1.0, 1e-12);
    }
}

TEST(Generate, HighSnrIsNearestPrototypeSeparable) {
  SynthConfig c;
  c.speech_snr = 20.0;
  c.text_snr = 20.0;
  c.seed = 0;
  const DatasetSplits s = generate(c);
  Prototypes p = generate_prototypes(c);
  for (auto* set : {&p.speech, &p.text})
    for (auto& v : *set)
      for (double& x : v) x *= 20.0;
  EXPECT_GE(oracle::nearest_prototype_accuracy(s.train, p.speech, true), 0.99);
  EXPECT_GE(oracle::nearest_prototype_accuracy(s.train, p.text, false), 0.99);
}

TEST(Generate, ZeroSnrSpeechCarriesNoLabelInformation) {
  SynthConfig c;
  c.d_s = 16;
  c.d_t = 16;
  c.speech_snr = 0.0;
  c.text_snr = 4.0;
  c.class_priors = {0.55, 0.15, 0.15, 0.15};
  c.conversations_per_split = {200, 4, 100};
  c.seed = 1;
  const DatasetSplits s = generate(c);
  const auto labels = s.test.labels();
  const double probe =
      weighted_f1(labels, oracle::linear_probe(s.train, s.test, true), c.class_count);
  const double chance =
      weighted_f1(labels, oracle::majority_baseline(s.train, s.test), c.class_count);
  EXPECT_NEAR(probe, chance, 0.05);
  // The same probe on text is far above chance.
  const double text_probe =
      weighted_f1(labels, oracle::linear_probe(s.train, s.test, false), c.class_count);
  EXPECT_GT(text_probe, chance + 0.3);
}

TEST(Generate, RejectsBadConfig) {
  SynthConfig c;
  c.class_priors = {0.5, 0.5};
  EXPECT_THROW(generate(c), DatasetError);
  c = SynthConfig{};
  c.min_utterances = 5;
  c.max_utterances = 4;
  EXPECT_THROW(generate(c), DatasetError);
  c = SynthConfig{};
  c.emotion_shift_prob = 1.5;
  EXPECT_THROW(generate(c), DatasetError);
}

TEST(Batching, PadsToLongestWithMasks) {
  Dataset d;
  d.class_count = 2;
  d.d_s = 1;
  d.d_t = 1;
  for (std::size_t n : {3u, 5u}) {
    Conversation c;
    c.id = "c" + std::to_string(n);
    for (std::size_t i = 0; i < n; ++i) c.utterances.push_back({"u", {1.0}, {2.0}, 1});
    d.conversations.push_back(c);
  }
  const auto batches = make_batches(d, 8);
  ASSERT_EQ(batches.size(), 1u);
  const Batch& b = batches[0];
  EXPECT_EQ(b.length, 5u);
  EXPECT_EQ(b.masks[0], (nn::Mask{true, true, true, false, false}));
  EXPECT_EQ(b.masks[1], (nn::Mask{true, true, true, true, true}));
  EXPECT_EQ(b.speech[0].at(3, 0), 0.0);
  EXPECT_EQ(b.speech[0].at(2, 0), 1.0);
  EXPECT_EQ(b.labels[0], (std::vector<std::size_t>{1, 1, 1, 0, 0}));
}

TEST(Batching, SingleConversationAllValid) {
  const DatasetSplits s = generate(small_synth());
  const auto batches = make_batches(s.train, 1);
  ASSERT_EQ(batches.size(), s.train.conversations.size());
  for (const Batch& b : batches) {
    ASSERT_EQ(b.size(), 1u);
    for (bool v : b.masks[0]) EXPECT_TRUE(v);
  }
}

TEST(Batching, WholeConversationsInOrder) {
  const DatasetSplits s = generate(small_synth());
  const std::vector<std::size_t> order{5, 2, 0, 1, 4, 3};
  const auto batches = make_batches(s.train, order, 4);
  ASSERT_EQ(batches.size(), 2u);
  std::vector<std::size_t> seen;
  for (const Batch& b : batches) {
    EXPECT_LE(b.size(), 4u);
    for (std::size_t i = 0; i < b.size(); ++i) {
      seen.push_back(b.conversation_indices[i]);
      EXPECT_EQ(b.length, b.masks[i].size());
    }
  }
  EXPECT_EQ(seen, order);
}

TEST(Batching, PaddedLossEqualsPerConversationSum) {
  Rng rng(17);
  SynthConfig c = small_synth();
  c.min_utterances = 1;
  c.max_utterances = 9;
  const DatasetSplits s = generate(c);
  const Tensor w = testutil::random_tensor({c.d_s, c.class_count}, rng);
  for (const Batch& b : make_batches(s.train, 3)) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const Conversation& conv = s.train.conversations[b.conversation_indices[i]];
      const Value padded_logits = matmul(Value::constant(b.speech[i]), Value::constant(w));
      const double batched =
          focal_loss(padded_logits, b.labels[i], 3.0, b.masks[i]).value().item();
      Tensor e({conv.size(), c.d_s});
      std::vector<std::size_t> y;
      for (std::size_t t = 0; t < conv.size(); ++t) {
        for (std::size_t j = 0; j < c.d_s; ++j) e.at(t, j) = conv.utterances[t].speech[j];
        y.push_back(conv.utterances[t].label);
      }
      const double single =
          focal_loss(matmul(Value::constant(e), Value::constant(w)), y, 3.0).value().item();
      EXPECT_NEAR(batched, single, 1e-9);
    }
  }
}
