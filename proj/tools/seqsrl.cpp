#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seqsrl/errors.hpp"
#include "seqsrl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace seqsrl;

namespace {

struct Common {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threshold;
  std::optional<std::size_t> epochs;
  bool attention_only = false;

  RunConfig resolve() const {
    RunConfig c = resolve_config(config, overrides);
    if (seed) c.train.seed = *seed;
    if (threshold) c.train.unk_threshold = *threshold;
    if (epochs) c.train.epochs = *epochs;
    if (attention_only) c.model.copy = false;
    return c;
  }
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration {\"model\": {...}, \"train\": {...}}")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. train.epochs=10 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-to-sequence semantic role labeling with a copying decoder"};
  app.require_subcommand(1);

  Common common;

  PreprocessArgs pre;
  std::optional<fs::path> pre_glove, pre_vocab;
  auto* preprocess = app.add_subcommand("preprocess", "Linearize a .props corpus and build the vocabulary");
  preprocess->add_option("--input", pre.input, "CoNLL .props file")->required()->check(CLI::ExistingFile);
  preprocess->add_option("--output", pre.output, "Output directory")->required();
  add_config_flags(preprocess, common);
  preprocess->add_option("--threshold", common.threshold, "Minimum word frequency for the vocabulary");
  preprocess->add_option("--glove", pre_glove, "Keep only words covered by this embedding file")
      ->check(CLI::ExistingFile);
  preprocess->add_option("--vocab", pre_vocab, "Reuse the vocabulary in this directory (dev/test data)")
      ->check(CLI::ExistingDirectory);

  TrainArgs tr;
  std::optional<fs::path> tr_glove;
  auto* train_cmd = app.add_subcommand("train", "Train a model on preprocessed data");
  train_cmd->add_option("--input", tr.input, "Preprocess output directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--output", tr.output, "Output directory for checkpoint.bin and train.json")->required();
  add_config_flags(train_cmd, common);
  train_cmd->add_option("--seed", common.seed, "Seed for initialisation, shuffling and dropout");
  train_cmd->add_option("--epochs", common.epochs, "Number of epochs");
  train_cmd->add_option("--glove", tr_glove, "Initialise word embeddings from this GloVe text file")
      ->check(CLI::ExistingFile);
  train_cmd->add_flag("--attention-only", common.attention_only, "Disable copying (attention-only ablation)");

  DecodeArgs de;
  auto* decode = app.add_subcommand("decode", "Greedy-decode preprocessed data with a trained checkpoint");
  decode->add_option("--checkpoint", de.checkpoint, "checkpoint.bin")->required();
  decode->add_option("--input", de.input, "Preprocess output directory")->required()->check(CLI::ExistingDirectory);
  decode->add_option("--output", de.output, "Output directory")->required();
  decode->add_option("--max-len", de.max_len, "Fixed decode length cap (default 2*T_x+10)");

  EvalArgs sc;
  auto* score_cmd = app.add_subcommand("score", "Span precision, recall and F1 against gold");
  score_cmd->add_option("--input", sc.input, "Decode output directory or .props file")->required()->check(CLI::ExistingPath);
  score_cmd->add_option("--gold", sc.gold, "Gold .props file")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--output", sc.output, "Write score.txt and score.json here");

  EvalArgs an;
  fs::path an_out;
  auto* analyze_cmd = app.add_subcommand("analyze", "Error analysis tables and charts");
  analyze_cmd->add_option("--input", an.input, "Decode output directory or .props file")->required()->check(CLI::ExistingPath);
  analyze_cmd->add_option("--gold", an.gold, "Gold .props file")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--output", an_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*preprocess) {
      pre.config = common.resolve();
      pre.glove = pre_glove;
      pre.vocab = pre_vocab;
      const PreprocessSummary s = run_preprocess(pre);
      std::printf("%zu sentences, %zu instances (%zu over max_seq_len), |V| = %zu, |L| = %zu, %zu <unk> tokens\n",
                  s.sentences, s.instances, s.over_length, s.words, s.labels, s.unk_tokens);
    } else if (*train_cmd) {
      tr.config = common.resolve();
      tr.glove = tr_glove;
      tr.log = &std::cout;
      const TrainSummary s = run_train(tr);
      std::printf("checkpoint written to %s\n", s.checkpoint.string().c_str());
    } else if (*decode) {
      de.log = &std::cout;
      run_decode(de);
    } else if (*score_cmd) {
      const ScoreReport r = run_score(sc);
      std::cout << r.table();
      std::printf("\nPrecision = %.2f  Recall = %.2f  F1 = %.2f\n", r.precision(), r.recall(), r.f1());
    } else if (*analyze_cmd) {
      an.output = an_out;
      const AnalysisReport r = run_analyze(an);
      std::printf("analysed %zu structures (%zu non-comparable skipped); files in %s\n", r.structures, r.skipped,
                  an_out.string().c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
