#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqsrl/corpus_io.hpp"
#include "seqsrl/linearizer.hpp"
#include "seqsrl/model.hpp"
#include "seqsrl/vocab.hpp"

namespace seqsrl {

enum class DecodeMode { Generate, Copy };

struct StepTrace {
  std::size_t token = 0;
  DecodeMode mode = DecodeMode::Generate;
  std::optional<std::size_t> position;  // copied source position
};

struct DecodeResult {
  std::vector<std::string> tokens;  // as emitted, eos excluded
  std::vector<StepTrace> trace;     // one entry per emitted token, then one for eos if reached
  bool reached_eos = false;

  std::vector<std::string> target;  // tokens after rare-word recovery
  Delinearized structure;           // target read against the original source

  bool comparable() const { return structure.comparable; }
  std::size_t repairs() const { return structure.repairs(); }
};

/// 2 * T_x + 10, with T_x the encoded source length (marker included).
std::size_t default_max_decode_len(std::size_t source_length);

/// Greedy decoding: the highest aggregated generate + copy mass wins, ties
/// going to the lowest id; <pred> is never emitted. The chosen step is
/// recorded as a copy when its copy mass exceeds its generation mass, at the
/// highest-scoring position holding the token.
///
/// instance is the unk-replaced form; its unk_map restores both copied rare
/// words and the source the output is compared against.
DecodeResult greedy_decode(Seq2SeqModel& model, const Vocabulary& vocab, const Instance& instance,
                           std::optional<std::size_t> max_len = std::nullopt);

/// Same results as calling greedy_decode per instance; batches share weight
/// reads.
std::vector<DecodeResult> greedy_decode(Seq2SeqModel& model, const Vocabulary& vocab,
                                        std::span<const Instance> instances,
                                        std::optional<std::size_t> max_len = std::nullopt, std::size_t chunk = 16);

/// Replaces each emitted <unk> that was copied from a mapped source
/// position by the original word. Generated <unk> tokens stay.
std::vector<std::string> recover_rare_words(const DecodeResult& result, std::span<const UnkEntry> unk_map);

/// Instance source with the unk_map words put back.
std::vector<std::string> restore_source(const Instance& instance);

struct ConllOutput {
  std::vector<AnnotatedSentence> sentences;
  std::vector<std::vector<bool>> comparable;  // [sentence][predicate]
  std::size_t dropped_overlaps = 0;
};

/// Regroups per-predicate results into multi-column sentences shaped like
/// `reference` (tokens, predicate positions and lemmas). Non-comparable
/// results leave their column empty. Overlapping spans are resolved greedily
/// in (start, end) order, keeping the earlier span.
/// Throws ContractError unless every (sentence, predicate) of the reference
/// appears exactly once among the origins.
ConllOutput to_conll(std::span<const Delinearized> results, std::span<const InstanceOrigin> origins,
                     std::span<const AnnotatedSentence> reference);

nlohmann::json trace_json(const DecodeResult& result, const Vocabulary& vocab);

}  // namespace seqsrl
