#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqsrl/linearizer.hpp"
#include "seqsrl/rng.hpp"
#include "seqsrl/tensor.hpp"
#include "seqsrl/vocab.hpp"

namespace seqsrl {

/// Which decoder state the attention query uses at step t.
enum class AttentionQuery {
  Previous,  // s_{t-1}; the context then feeds the LSTM input at step t
  Current,   // s_t; the LSTM consumes the previous step's context
};

struct ModelConfig {
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 512;  // decoder state size and per-direction encoder size
  std::size_t encoder_layers = 2;
  double dropout = 0.4;
  std::size_t word_vocab = 0;   // |V|, specials included
  std::size_t label_vocab = 0;  // |L|
  bool copy = true;             // false: attention-only ablation
  AttentionQuery attention_query = AttentionQuery::Previous;

  void validate() const;
  std::size_t output_size() const { return word_vocab + label_vocab; }
  std::size_t memory_dim() const { return 2 * hidden_dim; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Token ids for one instance: source over V, target over V ∪ L with the
/// end-of-sequence id appended.
struct EncodedInstance {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

EncodedInstance encode_instance(const Instance& instance, const Vocabulary& vocab);

/// Encoder output: one row [forward; backward] per source position.
struct EncoderMemory {
  Var states;                       // T x 2d
  Var copy_keys;                    // T x d: tanh(states * W_c); invalid when copying is off
  std::vector<std::size_t> source;  // V ids aligned with rows
  std::size_t length() const { return source.size(); }
};

struct DecoderState {
  Var hidden;   // 1 x d
  Var cell;     // 1 x d
  Var context;  // 1 x 2d, the last attention context
  std::size_t previous_token = Vocabulary::kBos;
};

struct AttentionResult {
  Var scores;   // 1 x T raw dot products
  Var weights;  // 1 x T
  Var context;  // 1 x 2d
};

/// Probabilities over the per-instance output space: every id of V ∪ L by
/// generation plus every source position by copying, under one normaliser.
struct MixedDistribution {
  std::vector<double> generate;     // size |V| + |L|
  std::vector<double> copy;         // size T, empty when copying is off
  std::vector<std::size_t> source;  // V id held at each copy position
  double log_normalizer = 0.0;

  /// p(y) = p(y, generate) + sum over positions holding y of p(y, copy).
  double token_probability(std::size_t id) const;
  double copy_mass(std::size_t id) const;
  double total_mass() const;
};

/// Shared-normaliser softmax over generation and copy scores, computed with
/// max subtraction. copy_scores may be empty (attention only).
MixedDistribution mixed_softmax(std::span<const double> gen_scores, std::span<const double> copy_scores,
                                std::span<const std::size_t> source);

struct StepOutput {
  Var generate_scores;  // 1 x (|V| + |L|)
  Var copy_scores;      // 1 x T, invalid when copying is off
  AttentionResult attention;
  DecoderState next;
};

/// Several sources packed row-wise so one pass serves a whole batch. Rows of
/// source b are [offsets[b], offsets[b] + lengths[b]).
struct MemoryBatch {
  Var states;
  Var copy_keys;
  Var mask;  // B x rows: 0 on each query's own segment, -inf elsewhere; invalid when B = 1
  std::vector<std::size_t> source;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::size_t batch() const { return lengths.size(); }
};

struct BatchState {
  Var hidden;   // B x d
  Var cell;     // B x d
  Var context;  // B x 2d
  std::vector<std::size_t> previous;
};

struct BatchStep {
  Var generate_scores;  // B x (|V| + |L|)
  Var copy_scores;      // B x rows; row b is meaningful on its own segment only
  AttentionResult attention;
  BatchState next;
};

/// Attention-plus-copying encoder-decoder.
///
/// Encoder: shared embedding table, then encoder_layers bidirectional LSTM
/// layers. Decoder: one LSTM layer whose input is [embedding(y_{t-1}); c_t].
/// Attention scores are bilinear, e_j = (s W_a) . h_j, since the decoder
/// state is half the width of an encoder row. Generation scores are
/// W_o [s_t; c_t]; copy scores are tanh(h_j W_c) . s_t.
///
/// Passing a non-null Rng enables dropout (training mode).
class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  std::vector<Tensor*> trainable();
  std::size_t parameter_count() const;
  void zero_grad();

  EncoderMemory encode(Tape& tape, std::span<const std::size_t> source, Rng* dropout_rng = nullptr);
  DecoderState initial_state(Tape& tape, const EncoderMemory& memory);
  AttentionResult attend(Tape& tape, Var query, const EncoderMemory& memory);
  Var generate_score(Tape& tape, Var state, Var context);
  Var copy_score(Tape& tape, const EncoderMemory& memory, Var state);
  StepOutput decode_step(Tape& tape, const DecoderState& state, const EncoderMemory& memory,
                         Rng* dropout_rng = nullptr);

  /// Teacher-forced -(1/T_y) sum_t log p(y_t | y_<t, x).
  Var sequence_loss(Tape& tape, const EncodedInstance& instance, Rng* dropout_rng = nullptr);

  /// Teacher-forced per-step distributions in evaluation mode.
  std::vector<MixedDistribution> teacher_forced_distributions(const EncodedInstance& instance);

  // Batched forms. Every instance is computed independently; the batch only
  // shares weight reads. The single-instance calls above are B = 1 cases.
  MemoryBatch encode(Tape& tape, std::span<const std::vector<std::size_t>> sources, Rng* dropout_rng = nullptr);
  BatchState initial_state(Tape& tape, const MemoryBatch& memory);
  AttentionResult attend(Tape& tape, Var query, const MemoryBatch& memory);
  BatchStep decode_step(Tape& tape, const BatchState& state, const MemoryBatch& memory, Rng* dropout_rng = nullptr);
  /// Mean over instances of sequence_loss; per-instance values are written
  /// to instance_losses when given.
  Var batch_loss(Tape& tape, std::span<const EncodedInstance* const> batch, Rng* dropout_rng = nullptr,
                 std::vector<double>* instance_losses = nullptr);
  std::vector<std::vector<MixedDistribution>> teacher_forced_distributions(
      std::span<const EncodedInstance* const> batch);
  /// Copy scores of instance b over its own source positions.
  Var copy_segment(Tape& tape, Var copy_scores, const MemoryBatch& memory, std::size_t b);

 private:
  Var lstm_cell(Tape& tape, Var input, Var hidden, Var& cell);
  Tensor& add_param(const std::string& name, std::vector<std::size_t> shape, Rng& rng);

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

/// Teacher-forced argmax accuracy over all target tokens (eos included).
struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};
TokenAccuracy teacher_forced_accuracy(Seq2SeqModel& model, std::span<const EncodedInstance> instances);

/// Highest-probability token id with aggregated generate + copy mass. Ties
/// go to the lowest id. Ids in `masked` are never chosen.
std::size_t argmax_token(const MixedDistribution& dist, std::span<const std::size_t> masked = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  std::uint64_t vocab_hash = 0;
  nlohmann::json info;  // training configuration, seed, epoch
};

/// Binary container; layout in docs/FORMATS.md.
std::string serialize_checkpoint(const Seq2SeqModel& model, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Seq2SeqModel model;
  CheckpointMeta meta;
};
LoadedCheckpoint parse_checkpoint(std::string_view bytes);
/// Throws LoadError if the file is unreadable or was trained with a
/// different vocabulary.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace seqsrl
