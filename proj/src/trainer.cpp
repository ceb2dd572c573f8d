#include "seqsrl/trainer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"

namespace seqsrl {

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (unk_threshold == 0) throw ConfigError("unk_threshold must be at least 1");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"clip_norm", clip_norm},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"unk_threshold", unk_threshold},
          {"max_seq_len", max_seq_len},
          {"seed", seed},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps}};
}

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"lr", "clip_norm", "epochs", "batch_size", "unk_threshold", "max_seq_len", "seed", "beta1",
                       "beta2", "eps"},
                      "train config");
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.unk_threshold = j.value("unk_threshold", c.unk_threshold);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid train configuration: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json m = model.to_json();
  m.erase("word_vocab");
  m.erase("label_vocab");
  return {{"model", m}, {"train", train.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"model", "train"}, "config");
  RunConfig c;
  if (j.contains("model")) {
    reject_unknown_keys(j["model"],
                        {"embed_dim", "hidden_dim", "encoder_layers", "dropout", "copy", "attention_query"},
                        "model config");
    c.model = ModelConfig::from_json(j["model"]);
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Vocabulary and embeddings

VocabBuild build_vocab(std::span<const Instance> instances, std::size_t threshold,
                       const std::unordered_set<std::string>* embedding_words) {
  if (threshold == 0) throw ConfigError("unk threshold must be at least 1");
  VocabBuild out;
  std::set<std::string> labels;
  for (const Instance& inst : instances) {
    for (const std::string& w : inst.source) {
      if (w != kPredToken) ++out.frequency[w];
    }
    for (const std::string& t : inst.target) {
      auto label = LabelToken::parse(t);
      if (label && label->kind == LabelToken::Kind::Close) labels.insert(label->surface());
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [word, count] : out.frequency) {
    if (count < threshold) continue;
    if (embedding_words && !embedding_words->contains(word)) continue;
    kept.emplace_back(word, count);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [word, count] : kept) words.push_back(word);
  out.vocab = Vocabulary(words, std::vector<std::string>(labels.begin(), labels.end()));
  return out;
}

namespace {

std::ifstream open_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embedding file " + path.string());
  return in;
}

}  // namespace

std::unordered_set<std::string> embedding_file_words(const std::filesystem::path& path) {
  std::ifstream in = open_embeddings(path);
  std::unordered_set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string word;
    if (fields >> word) words.insert(word);
  }
  return words;
}

EmbeddingCoverage load_glove(const std::filesystem::path& path, const Vocabulary& vocab, Tensor& embedding) {
  if (embedding.rank() != 2 || embedding.rows() < vocab.word_count()) {
    throw DimensionError("load_glove: embedding table " + embedding.shape_string() + " too small for vocabulary");
  }
  std::ifstream in = open_embeddings(path);
  const std::size_t dim = embedding.cols();
  EmbeddingCoverage cov;
  cov.total = vocab.word_count();
  std::vector<bool> seen(vocab.word_count(), false);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    values.clear();
    double x;
    while (fields >> x) values.push_back(x);
    if (!fields.eof()) throw ParseError(line_no, "non-numeric embedding value for '" + word + "'");
    if (values.size() != dim) {
      throw ConfigError(path.string() + " line " + std::to_string(line_no) + ": vector of width " +
                        std::to_string(values.size()) + " but embed_dim is " + std::to_string(dim));
    }
    auto id = vocab.id(word);
    if (!id || *id >= vocab.word_count() || seen[*id]) continue;
    seen[*id] = true;
    ++cov.covered;
    std::copy(values.begin(), values.end(), embedding.data().begin() + static_cast<std::ptrdiff_t>(*id * dim));
  }
  return cov;
}

// ---------------------------------------------------------------------------
// Optimisation

void adam_step(std::span<Tensor* const> params, AdamState& state, const TrainConfig& config) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = params[k]->grad();
    if (std::isfinite(Eigen::Map<const Eigen::VectorXd>(g.data(), std::ssize(g)).sum())) continue;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in parameter " + std::to_string(k) + " (" +
                           params[k]->shape_string() + ") at element " + std::to_string(i) + " after " +
                           std::to_string(state.step) + " updates");
      }
    }
  }
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed between steps");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) throw ContractError("adam_step: moment shape differs from parameter");
    double* pd = p.data().data();
    const double* gd = g.data();
    double* md = m.data();
    double* vd = v.data();
    const double b1 = config.beta1, b2 = config.beta2, lr = config.lr, eps = config.eps;
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
      md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
      vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
      pd[i] -= lr * (md[i] / c1) / (std::sqrt(vd[i] / c2) + eps);
    }
  }
}

double global_grad_norm(std::span<Tensor* const> params) {
  double sq = 0.0;
  for (Tensor* p : params) {
    const auto g = p->grad();
    sq += Eigen::Map<const Eigen::VectorXd>(g.data(), std::ssize(g)).squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_gradients(std::span<Tensor* const> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (Tensor* p : params) {
    const auto g = p->grad();
    Eigen::Map<Eigen::VectorXd>(g.data(), std::ssize(g)) *= factor;
  }
  return factor;
}

LengthFilter filter_by_length(std::span<const Instance> instances, std::size_t max_len) {
  LengthFilter f;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].source.size() <= max_len && instances[i].target.size() <= max_len) {
      f.kept.push_back(i);
    } else {
      ++f.dropped;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(Seq2SeqModel& model, std::span<const EncodedInstance> data, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw ConfigError("training corpus is empty");
  const std::vector<Tensor*> params = model.trainable();
  model.zero_grad();

  Rng order_rng(config.seed);
  Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t updates = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const EncodedInstance*> batch;
      for (std::size_t k = begin; k < end; ++k) batch.push_back(&data[order[k]]);
      Tape tape;
      std::vector<double> losses;
      Var loss = model.batch_loss(tape, batch, &dropout_rng, &losses);
      for (std::size_t k = 0; k < losses.size(); ++k) {
        if (!std::isfinite(losses[k])) {
          throw NumericError("non-finite loss on instance " + std::to_string(order[begin + k]) + " in epoch " +
                             std::to_string(epoch));
        }
        loss_sum += losses[k];
      }
      tape.backward(loss);
      clip_gradients(params, config.clip_norm);
      adam_step(params, adam, config);
      model.zero_grad();
      ++updates;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(data.size());
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats.updates = updates;
    result.epochs.push_back(stats);

    if (options.checkpoint) {
      CheckpointMeta meta = options.meta;
      if (!meta.info.is_object()) meta.info = nlohmann::json::object();
      meta.info["epoch"] = epoch;
      meta.info["train"] = config.to_json();
      nlohmann::json losses = nlohmann::json::array();
      for (const EpochStats& e : result.epochs) losses.push_back(e.mean_loss);
      meta.info["epoch_losses"] = losses;
      save_checkpoint(*options.checkpoint, model, meta);
    }
    if (options.on_epoch) options.on_epoch(stats);
    if (options.stop && options.stop(stats)) break;
  }
  return result;
}

}  // namespace seqsrl
