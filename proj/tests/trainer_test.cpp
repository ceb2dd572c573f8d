#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gradcheck.hpp"
#include "seqsrl/corpus_io.hpp"
#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"
#include "seqsrl/trainer.hpp"
#include "test_data.hpp"

namespace seqsrl {
namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("seqsrl_trainer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<Instance> toy_instances() {
  return linearize_corpus(read_props_file(toy_corpus_path()));
}

ModelConfig tiny_config(const Vocabulary& v) {
  ModelConfig c;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.dropout = 0.0;
  c.word_vocab = v.word_count();
  c.label_vocab = v.label_count();
  return c;
}

std::vector<EncodedInstance> encode_all(const std::vector<Instance>& instances, const Vocabulary& v) {
  std::vector<EncodedInstance> out;
  for (const auto& i : instances) out.push_back(encode_instance(apply_unk(i, v), v));
  return out;
}

TEST(TrainConfigTest, DefaultsAndJson) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr, 0.001);
  EXPECT_DOUBLE_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.epochs, 4u);
  EXPECT_EQ(c.batch_size, 6u);
  EXPECT_EQ(c.max_seq_len, 100u);
  EXPECT_DOUBLE_EQ(c.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.eps, 1e-8);
  c.seed = 77;
  c.epochs = 9;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()), c);
  EXPECT_THROW(TrainConfig::from_json({{"lr", -1.0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"batch_size", 0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 0.1}}), ConfigError);
}

TEST(TrainConfigTest, RunConfigFile) {
  auto dir = scratch("config");
  write_file_atomic(dir / "run.json", R"({"model": {"hidden_dim": 16, "copy": false}, "train": {"epochs": 7}})");
  RunConfig c = RunConfig::load(dir / "run.json");
  EXPECT_EQ(c.model.hidden_dim, 16u);
  EXPECT_FALSE(c.model.copy);
  EXPECT_EQ(c.model.embed_dim, 100u);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(RunConfig::from_json(c.to_json()).model.hidden_dim, 16u);
  write_file_atomic(dir / "bad.json", R"({"model": {"hiden_dim": 16}})");
  EXPECT_THROW(RunConfig::load(dir / "bad.json"), ConfigError);
  write_file_atomic(dir / "broken.json", "{");
  EXPECT_THROW(RunConfig::load(dir / "broken.json"), ConfigError);
}

TEST(VocabBuildTest, ThresholdOneKeepsEveryWord) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  std::set<std::string> words;
  for (const auto& i : instances) {
    for (const auto& w : i.source) {
      if (w != kPredToken) words.insert(w);
    }
  }
  EXPECT_EQ(b.vocab.word_count(), words.size() + 4);
  for (const auto& w : words) EXPECT_TRUE(b.vocab.has_word(w)) << w;
  EXPECT_EQ(b.vocab.token(0), kUnkToken);
  EXPECT_EQ(b.vocab.token(1), kPredToken);
}

TEST(VocabBuildTest, LabelsAreExactlyTheClosersSeen) {
  const auto instances = toy_instances();
  std::set<std::string> closers;
  for (const auto& i : instances) {
    for (const auto& t : i.target) {
      if (t.starts_with("p0:")) closers.insert(t);
    }
  }
  VocabBuild b = build_vocab(instances, 1);
  EXPECT_EQ(b.vocab.labels(), std::vector<std::string>(closers.begin(), closers.end()));
  EXPECT_EQ(b.vocab.token(b.vocab.word_count()), kOpenBracket);
}

TEST(VocabBuildTest, ThresholdAndEmbeddingCoverage) {
  const auto instances = toy_instances();
  VocabBuild all = build_vocab(instances, 1);
  VocabBuild frequent = build_vocab(instances, 3);
  for (const auto& [w, n] : all.frequency) EXPECT_EQ(frequent.vocab.has_word(w), n >= 3) << w;
  const std::unordered_set<std::string> covered = {"the", "bonds"};
  VocabBuild glove = build_vocab(instances, 1, &covered);
  EXPECT_EQ(glove.vocab.word_count(), 6u);
  EXPECT_THROW(build_vocab(instances, 0), ConfigError);
}

TEST(GloveTest, LoadsCoveredRowsBitForBit) {
  auto dir = scratch("glove");
  Vocabulary v({"the", "bonds", "spurt"}, {});
  Tensor table({v.size(), 3}, 0.5);
  write_file_atomic(dir / "empty.txt", "");
  EmbeddingCoverage cov = load_glove(dir / "empty.txt", v, table);
  EXPECT_EQ(cov.covered, 0u);
  for (double x : table.values()) EXPECT_EQ(x, 0.5);

  write_file_atomic(dir / "one.txt", "bonds 0.1 -2.5e-3 7\nzebra 1 2 3\n");
  cov = load_glove(dir / "one.txt", v, table);
  EXPECT_EQ(cov.covered, 1u);
  EXPECT_EQ(cov.total, 7u);
  EXPECT_DOUBLE_EQ(cov.rate(), 1.0 / 7.0);
  const std::size_t id = *v.id("bonds");
  EXPECT_EQ(table.at(id, 0), 0.1);
  EXPECT_EQ(table.at(id, 1), -2.5e-3);
  EXPECT_EQ(table.at(id, 2), 7.0);
  EXPECT_EQ(table.at(*v.id("the"), 0), 0.5);
  EXPECT_EQ(embedding_file_words(dir / "one.txt"), (std::unordered_set<std::string>{"bonds", "zebra"}));

  write_file_atomic(dir / "wide.txt", "the 1 2 3 4\n");
  EXPECT_THROW(load_glove(dir / "wide.txt", v, table), ConfigError);
  EXPECT_THROW(load_glove(dir / "absent.txt", v, table), IoError);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  Tensor w = Tensor::row({1.0, -2.0, 3.0});
  w.set_requires_grad(true);
  w.zero_grad();
  Tensor* params[] = {&w};
  AdamState s;
  adam_step(params, s, TrainConfig{});
  EXPECT_EQ(w.values(), (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamTest, FirstStepIsLearningRate) {
  Tensor w = Tensor::scalar(0.0);
  w.set_requires_grad(true);
  w.grad()[0] = 1.0;
  Tensor* params[] = {&w};
  AdamState s;
  TrainConfig c;
  adam_step(params, s, c);
  EXPECT_NEAR(w[0], -c.lr / (1.0 + c.eps), 1e-18);
}

TEST(AdamTest, QuadraticBowlConverges) {
  Tensor w = Tensor::scalar(1.0);
  w.set_requires_grad(true);
  Tensor* params[] = {&w};
  AdamState s;
  TrainConfig c;
  c.lr = 0.01;  // at 0.001 Adam moves at most ~0.5 in 500 steps
  for (int step = 0; step < 500; ++step) {
    w.zero_grad();
    w.grad()[0] = 2.0 * w[0];
    adam_step(params, s, c);
  }
  EXPECT_LT(w[0] * w[0], 1e-3);
}

TEST(AdamTest, NonFiniteGradientAborts) {
  Tensor w = Tensor::row({1.0, 2.0});
  w.set_requires_grad(true);
  w.grad()[1] = std::nan("");
  Tensor* params[] = {&w};
  AdamState s;
  EXPECT_THROW(adam_step(params, s, TrainConfig{}), NumericError);
  EXPECT_EQ(w[0], 1.0);
}

TEST(ClipTest, SmallNormUnchanged) {
  Tensor a = Tensor::row({1.2, 1.6});  // norm 2
  a.set_requires_grad(true);
  a.grad()[0] = 1.2;
  a.grad()[1] = 1.6;
  Tensor* params[] = {&a};
  EXPECT_EQ(clip_gradients(params, 5.0), 1.0);
  EXPECT_EQ(a.grad()[0], 1.2);
}

TEST(ClipTest, LargeNormHalved) {
  Tensor a = Tensor::row({0, 0}), b = Tensor::scalar(0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.grad()[0] = 6.0;
  a.grad()[1] = 0.0;
  b.grad()[0] = 8.0;  // global norm 10
  Tensor* params[] = {&a, &b};
  EXPECT_DOUBLE_EQ(clip_gradients(params, 5.0), 0.5);
  EXPECT_NEAR(global_grad_norm(params), 5.0, 1e-9);
}

TEST(ClipTest, DirectionPreserved) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a = testing::random_tensor({3, 4}, rng), b = testing::random_tensor({5}, rng);
    const double scale = rng.uniform(0.1, 20.0);
    for (Tensor* t : {&a, &b}) {
      t->set_requires_grad(true);
      for (double& g : t->grad()) g = rng.uniform(-scale, scale);
    }
    std::vector<double> before;
    for (Tensor* t : {&a, &b}) before.insert(before.end(), t->grad().begin(), t->grad().end());
    Tensor* params[] = {&a, &b};
    const double norm_before = global_grad_norm(params);
    clip_gradients(params, 5.0);
    std::vector<double> after;
    for (Tensor* t : {&a, &b}) after.insert(after.end(), t->grad().begin(), t->grad().end());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      dot += before[i] * after[i];
      na += before[i] * before[i];
      nb += after[i] * after[i];
    }
    EXPECT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-9);
    EXPECT_LE(global_grad_norm(params), std::max(5.0, norm_before) + 1e-9);
    EXPECT_LE(global_grad_norm(params), 5.0 + 1e-9);
  }
}

TEST(FilterTest, DropsLongSequences) {
  std::vector<Instance> in(3);
  in[0].source = {"a"};
  in[0].target = {"a"};
  in[1].source = {"a", "b", "c"};
  in[1].target = {"a"};
  in[2].source = {"a"};
  in[2].target = {"a", "b", "c"};
  LengthFilter f = filter_by_length(in, 2);
  EXPECT_EQ(f.kept, (std::vector<std::size_t>{0}));
  EXPECT_EQ(f.dropped, 2u);
}

TEST(TrainTest, EmptyCorpusIsAConfigError) {
  Vocabulary v({"a"}, {});
  Seq2SeqModel m(tiny_config(v), 1);
  EXPECT_THROW(train(m, std::span<const EncodedInstance>{}, TrainConfig{}), ConfigError);
}

TEST(TrainTest, SingleInstanceLossNeverRises) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  auto data = encode_all({instances[0]}, b.vocab);
  Seq2SeqModel m(tiny_config(b.vocab), 2);
  TrainConfig c;
  c.epochs = 50;
  auto result = train(m, data, c);
  ASSERT_EQ(result.epochs.size(), 50u);
  for (std::size_t e = 1; e < result.epochs.size(); ++e) {
    EXPECT_LE(result.epochs[e].mean_loss, result.epochs[e - 1].mean_loss) << "epoch " << e + 1;
  }
}

TEST(TrainTest, LossFallsOnToyCorpusAndCheckpointsAreWritten) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  auto data = encode_all(instances, b.vocab);
  ModelConfig mc = tiny_config(b.vocab);
  mc.hidden_dim = 16;
  mc.dropout = 0.4;
  Seq2SeqModel m(mc, 3);
  TrainConfig c;
  c.epochs = 2;
  auto dir = scratch("toy");
  TrainOptions o;
  o.checkpoint = dir / "checkpoint.bin";
  o.meta.vocab_hash = b.vocab.hash();
  std::vector<std::size_t> seen;
  o.on_epoch = [&](const EpochStats& s) { seen.push_back(s.epoch); };
  auto result = train(m, data, c, o);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
  EXPECT_LT(result.epochs[1].mean_loss, result.epochs[0].mean_loss);
  EXPECT_EQ(result.epochs[0].updates, (data.size() + 5) / 6);
  LoadedCheckpoint ck = load_checkpoint(*o.checkpoint, b.vocab);
  EXPECT_EQ(ck.meta.info["epoch"], 2);
  EXPECT_EQ(ck.meta.info["epoch_losses"].size(), 2u);
  EXPECT_EQ(serialize_checkpoint(ck.model, ck.meta), read_file(*o.checkpoint));
  for (const auto& [name, t] : m.parameters()) EXPECT_EQ(ck.model.parameter(name).values(), t.values()) << name;
}

TEST(TrainTest, StopHookEndsTrainingEarly) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  auto data = encode_all({instances[0], instances[1]}, b.vocab);
  Seq2SeqModel m(tiny_config(b.vocab), 3);
  TrainConfig c;
  c.epochs = 10;
  TrainOptions o;
  o.stop = [](const EpochStats& s) { return s.epoch == 3; };
  EXPECT_EQ(train(m, data, c, o).epochs.size(), 3u);
}

TEST(TrainTest, SeededRunsAreBitIdentical) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  auto data = encode_all(instances, b.vocab);
  ModelConfig mc = tiny_config(b.vocab);
  mc.dropout = 0.4;
  auto run = [&](std::uint64_t seed) {
    Seq2SeqModel m(mc, seed);
    TrainConfig c;
    c.epochs = 2;
    c.seed = seed;
    auto r = train(m, data, c);
    return std::make_pair(serialize_checkpoint(m, {}), r.epochs[1].mean_loss);
  };
  const auto a = run(11), b2 = run(11), c = run(12);
  EXPECT_EQ(a.first, b2.first);
  EXPECT_EQ(a.second, b2.second);
  EXPECT_NE(a.first, c.first);
}

TEST(TrainTest, BatchLossIsMeanOfInstanceLosses) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  auto data = encode_all({instances[0], instances[1], instances[2], instances[5]}, b.vocab);
  ModelConfig mc = tiny_config(b.vocab);
  Seq2SeqModel m(mc, 5);
  std::vector<const EncodedInstance*> batch;
  for (const auto& d : data) batch.push_back(&d);

  std::map<std::string, std::vector<double>> expect;
  double mean = 0.0;
  for (const auto& d : data) {
    Tape tape;
    Var l = m.sequence_loss(tape, d);
    mean += l.value()[0] / static_cast<double>(data.size());
    tape.backward(l);
  }
  for (auto& [name, t] : m.parameters()) {
    for (double& g : t.grad()) g /= static_cast<double>(data.size());
    expect[name].assign(t.grad().begin(), t.grad().end());
    t.zero_grad();
  }
  Tape tape;
  std::vector<double> per;
  Var l = m.batch_loss(tape, batch, nullptr, &per);
  EXPECT_NEAR(l.value()[0], mean, 1e-12);
  ASSERT_EQ(per.size(), data.size());
  tape.backward(l);
  for (const auto& [name, t] : m.parameters()) {
    for (std::size_t i = 0; i < t.size(); ++i) ASSERT_NEAR(t.grad()[i], expect[name][i], 1e-12) << name << "[" << i << "]";
  }
}

TEST(TrainTest, AdamStepsReduceSingleInstanceLoss) {
  const auto instances = toy_instances();
  VocabBuild b = build_vocab(instances, 1);
  auto data = encode_all({instances[0]}, b.vocab);
  Seq2SeqModel m(tiny_config(b.vocab), 6);
  std::vector<Tensor*> params;
  for (auto& [name, t] : m.parameters()) params.push_back(&t);
  AdamState s;
  TrainConfig c;
  c.lr = 0.01;
  double last = 1e300;
  for (int step = 0; step < 10; ++step) {
    for (Tensor* p : params) p->zero_grad();
    Tape tape;
    Var l = m.sequence_loss(tape, data[0]);
    const double loss = l.value()[0];
    EXPECT_LT(loss, last) << "step " << step;
    last = loss;
    tape.backward(l);
    adam_step(params, s, c);
  }
}

}  // namespace
}  // namespace seqsrl
