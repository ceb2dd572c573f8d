#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "seqsrl/fileutil.hpp"
#include "test_data.hpp"

#ifndef SEQSRL_CLI
#error "SEQSRL_CLI must name the seqsrl executable"
#endif

namespace fs = std::filesystem;

namespace seqsrl {
namespace {

struct Outcome {
  int status = 0;
  std::string output;  // stdout and stderr
};

Outcome run(const std::string& args) {
  Outcome r;
  const std::string cmd = std::string(SEQSRL_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("seqsrl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string toy = toy_corpus_path().string();

TEST(CliTest, ScoreGoldAgainstGold) {
  Outcome r = run("score --input " + toy + " --gold " + toy);
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("F1 = 100.00"), std::string::npos) << r.output;
}

TEST(CliTest, AnalyzeWritesFiveCsvAndFiveSvg) {
  auto dir = scratch("analyze");
  Outcome r = run("analyze --input " + toy + " --gold " + toy + " --output " + dir.string());
  ASSERT_EQ(r.status, 0) << r.output;
  std::size_t csv = 0, svg = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    csv += e.path().extension() == ".csv";
    svg += e.path().extension() == ".svg";
  }
  EXPECT_EQ(csv, 5u);
  EXPECT_EQ(svg, 5u);
}

TEST(CliTest, PreprocessCountsAndIsIdempotent) {
  auto a = scratch("pre_a"), b = scratch("pre_b");
  Outcome r = run("preprocess --input " + toy + " --output " + a.string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("60 sentences, 85 instances"), std::string::npos) << r.output;
  EXPECT_EQ(read_lines(a / "source.txt").size(), 85u);
  const std::string first = read_file(a / "source.txt");
  ASSERT_EQ(run("preprocess --input " + toy + " --output " + a.string()).status, 0);
  ASSERT_EQ(run("preprocess --input " + toy + " --output " + b.string()).status, 0);
  for (const char* f : {"source.txt", "target.txt", "origin.txt", "unk_map.txt", "vocab.txt", "labels.txt",
                        "gold.props", "preprocess.json"}) {
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  }
  EXPECT_EQ(read_file(a / "source.txt"), first);
}

TEST(CliTest, EmptyInputGivesEmptyOutputs) {
  auto dir = scratch("empty");
  write_file_atomic(dir / "empty.props", "");
  Outcome r = run("preprocess --input " + (dir / "empty.props").string() + " --output " + (dir / "out").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("0 sentences, 0 instances"), std::string::npos) << r.output;
  EXPECT_EQ(read_file(dir / "out" / "source.txt"), "");
}

TEST(CliTest, ErrorsAreActionable) {
  auto dir = scratch("errors");
  ASSERT_EQ(run("preprocess --input " + toy + " --output " + dir.string()).status, 0);
  Outcome r = run("decode --checkpoint " + (dir / "missing.bin").string() + " --input " + dir.string() + " --output " +
              (dir / "dec").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("train a model first"), std::string::npos) << r.output;

  write_file_atomic(dir / "bad.props", "a - (A0*\n\n");
  r = run("score --input " + (dir / "bad.props").string() + " --gold " + toy);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("bad.props"), std::string::npos) << r.output;

  r = run("train --input " + dir.string() + " --output " + (dir / "t").string() + " --set model.hidden=3");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("hidden"), std::string::npos) << r.output;
  EXPECT_NE(run("frobnicate").status, 0);
}

TEST(CliTest, SmallPipelineEndToEnd) {
  auto dir = scratch("pipeline");
  const std::string small = " --set model.hidden_dim=16 --set model.embed_dim=8 --epochs 1";
  ASSERT_EQ(run("preprocess --input " + toy + " --output " + (dir / "pre").string()).status, 0);
  Outcome r = run("train --input " + (dir / "pre").string() + " --output " + (dir / "model").string() + small);
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("epoch 1"), std::string::npos) << r.output;
  r = run("decode --checkpoint " + (dir / "model" / "checkpoint.bin").string() + " --input " + (dir / "pre").string() +
          " --output " + (dir / "dec").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(read_lines(dir / "dec" / "predictions.txt").size(), 85u);
  r = run("score --input " + (dir / "dec").string() + " --gold " + toy + " --output " + (dir / "score").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("Oracle-min"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "score" / "score.json"));
  r = run("analyze --input " + (dir / "dec").string() + " --gold " + toy + " --output " + (dir / "an").string());
  ASSERT_EQ(r.status, 0) << r.output;
}

}  // namespace
}  // namespace seqsrl
