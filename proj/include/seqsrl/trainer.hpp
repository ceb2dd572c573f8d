#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "seqsrl/linearizer.hpp"
#include "seqsrl/model.hpp"
#include "seqsrl/vocab.hpp"

namespace seqsrl {

struct TrainConfig {
  double lr = 0.001;
  double clip_norm = 5.0;
  std::size_t epochs = 4;
  std::size_t batch_size = 6;
  std::size_t unk_threshold = 1;  // minimum training frequency for a word to enter V
  std::size_t max_seq_len = 100;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

/// Combined run configuration as stored in a config file:
/// {"model": {...}, "train": {...}}. Missing keys keep their defaults;
/// unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

struct VocabBuild {
  Vocabulary vocab;
  std::map<std::string, std::size_t> frequency;  // source words, <pred> excluded
};

/// V: source words seen at least `threshold` times (and covered by
/// `embedding_words` when given) plus the specials. L: every closing bracket
/// seen in the targets. Words are ordered by descending frequency, then
/// lexicographically; labels lexicographically.
VocabBuild build_vocab(std::span<const Instance> instances, std::size_t threshold,
                       const std::unordered_set<std::string>* embedding_words = nullptr);

/// Words listed in a GloVe-style text file ("word f1 ... fk" per line).
std::unordered_set<std::string> embedding_file_words(const std::filesystem::path& path);

struct EmbeddingCoverage {
  std::size_t covered = 0;
  std::size_t total = 0;  // |V|, specials included
  double rate() const { return total ? static_cast<double>(covered) / static_cast<double>(total) : 0.0; }
};

/// Overwrites the rows of `embedding` for vocabulary words found in the file.
/// Other rows keep their random initialisation. Throws ConfigError when a
/// vector's width differs from the table's, IoError when unreadable.
EmbeddingCoverage load_glove(const std::filesystem::path& path, const Vocabulary& vocab, Tensor& embedding);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update from the params' gradient buffers.
/// Throws NumericError naming the first non-finite gradient.
void adam_step(std::span<Tensor* const> params, AdamState& state, const TrainConfig& config);

double global_grad_norm(std::span<Tensor* const> params);

/// Scales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the factor applied (1 when unchanged).
double clip_gradients(std::span<Tensor* const> params, double max_norm);

struct LengthFilter {
  std::vector<std::size_t> kept;  // indices into the input
  std::size_t dropped = 0;
};
/// Keeps instances whose source and target both fit in max_len tokens.
LengthFilter filter_by_length(std::span<const Instance> instances, std::size_t max_len);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double seconds = 0.0;
  std::size_t updates = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;  // rewritten after every epoch
  CheckpointMeta meta;                              // epoch and losses are added per save
  std::function<void(const EpochStats&)> on_epoch;
  std::function<bool(const EpochStats&)> stop;  // true ends training after this epoch
};

struct TrainResult {
  std::vector<EpochStats> epochs;
};

/// Mini-batch training: the loss of a batch is the mean over its instances
/// of each instance's mean token NLL. Gradients are clipped by global norm
/// and applied with Adam. Instances are shuffled each
/// epoch with the run seed; dropout draws from a second seeded stream.
TrainResult train(Seq2SeqModel& model, std::span<const EncodedInstance> data, const TrainConfig& config,
                  const TrainOptions& options = {});

}  // namespace seqsrl
