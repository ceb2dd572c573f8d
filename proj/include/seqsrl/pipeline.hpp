#pragma once

// The five subcommands as library calls. Each reads the artifacts of the
// step before it and writes its own into an output directory; see
// docs/FORMATS.md for the file layouts.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqsrl/analysis.hpp"
#include "seqsrl/linearizer.hpp"
#include "seqsrl/scorer.hpp"
#include "seqsrl/trainer.hpp"

namespace seqsrl {

/// Config file (optional) plus "section.key=value" overrides, value parsed
/// as JSON when possible and taken as a string otherwise.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides = {});

void save_instances(const std::filesystem::path& dir, std::span<const Instance> instances);
std::vector<Instance> load_instances(const std::filesystem::path& dir);

struct PreprocessArgs {
  std::filesystem::path input;  // .props
  std::filesystem::path output;
  RunConfig config;
  std::optional<std::filesystem::path> glove;
  std::optional<std::filesystem::path> vocab;  // reuse this vocabulary instead of building one
};

struct PreprocessSummary {
  std::size_t sentences = 0;
  std::size_t instances = 0;
  std::size_t over_length = 0;  // instances longer than max_seq_len
  std::size_t unk_tokens = 0;   // source positions replaced by <unk>
  std::size_t words = 0;
  std::size_t labels = 0;
};

/// Writes source.txt, target.txt, origin.txt, unk_map.txt, vocab.txt,
/// labels.txt, gold.props and preprocess.json.
PreprocessSummary run_preprocess(const PreprocessArgs& args);

struct TrainArgs {
  std::filesystem::path input;  // preprocess output
  std::filesystem::path output;
  RunConfig config;
  std::optional<std::filesystem::path> glove;
  std::ostream* log = nullptr;
};

struct TrainSummary {
  TrainResult result;
  std::size_t instances = 0;
  std::size_t dropped = 0;
  std::optional<EmbeddingCoverage> coverage;
  std::filesystem::path checkpoint;
};

/// Writes checkpoint.bin (after every epoch), vocab.txt, labels.txt and
/// train.json.
TrainSummary run_train(const TrainArgs& args);

struct DecodeArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // preprocess output sharing the checkpoint's vocabulary
  std::filesystem::path output;
  std::optional<std::size_t> max_len;
  std::ostream* log = nullptr;
};

struct DecodeSummary {
  std::size_t instances = 0;
  ReproductionStats reproduction;
  std::size_t reached_eos = 0;
  std::size_t dropped_overlaps = 0;
};

/// Writes predictions.txt, trace.jsonl, predicted.props, comparable.txt and
/// decode.json.
DecodeSummary run_decode(const DecodeArgs& args);

/// Predicted structures plus what is known about how they were produced.
struct PredictionSet {
  std::vector<AnnotatedSentence> sentences;
  ComparabilityFlags comparable;             // empty: all comparable
  std::optional<ReproductionStats> reproduction;
  nlohmann::json provenance;
};

/// A decode output directory or a plain .props file.
PredictionSet load_predictions(const std::filesystem::path& input);

struct EvalArgs {
  std::filesystem::path input;  // decode output directory or .props file
  std::filesystem::path gold;   // .props
  std::optional<std::filesystem::path> output;
};

/// Writes score.txt and score.json when output is set.
ScoreReport run_score(const EvalArgs& args);

/// Writes the analysis tables and charts into output (required).
AnalysisReport run_analyze(const EvalArgs& args);

}  // namespace seqsrl
