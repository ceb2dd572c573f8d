#include <gtest/gtest.h>

#include <random>

#include "seqsrl/corpus_io.hpp"
#include "seqsrl/errors.hpp"
#include "seqsrl/scorer.hpp"
#include "test_data.hpp"

namespace seqsrl {
namespace {

AnnotatedSentence sentence(std::size_t n, std::vector<PredicateStructure> preds) {
  AnnotatedSentence s;
  for (std::size_t i = 0; i < n; ++i) s.tokens.push_back("w" + std::to_string(i));
  s.predicates = std::move(preds);
  return s;
}

PredicateStructure pred(std::size_t at, std::vector<LabeledSpan> args) {
  PredicateStructure p;
  p.predicate_index = at;
  p.lemma = "go";
  p.spans = std::move(args);
  p.spans.push_back({at, at, "V"});
  return p;
}

// Independent matcher: each predicted span consumes one identical unused gold span.
Counts brute_force(const std::vector<LabeledSpan>& predicted, const std::vector<LabeledSpan>& gold) {
  Counts c;
  std::vector<bool> used(gold.size(), false);
  for (const auto& p : predicted) {
    if (p.role == "V") continue;
    ++c.predicted;
    for (std::size_t j = 0; j < gold.size(); ++j) {
      if (!used[j] && gold[j].start == p.start && gold[j].end == p.end && gold[j].role == p.role) {
        used[j] = true;
        ++c.correct;
        break;
      }
    }
  }
  for (const auto& g : gold) c.gold += g.role != "V";
  return c;
}

TEST(ScorerTest, PerfectPrediction) {
  std::vector<AnnotatedSentence> g = {sentence(6, {pred(2, {{0, 1, "A0"}, {3, 5, "A1"}})})};
  ScoreReport r = score(g, g);
  EXPECT_DOUBLE_EQ(r.precision(), 100.0);
  EXPECT_DOUBLE_EQ(r.recall(), 100.0);
  EXPECT_DOUBLE_EQ(r.f1(), 100.0);
  EXPECT_EQ(r.arguments, (Counts{2, 2, 2}));
  EXPECT_EQ(r.predicate, (Counts{1, 1, 1}));
}

TEST(ScorerTest, HandComputedHalf) {
  std::vector<AnnotatedSentence> g = {sentence(6, {pred(2, {{0, 1, "A0"}, {3, 5, "A1"}})})};
  std::vector<AnnotatedSentence> p = {sentence(6, {pred(2, {{0, 1, "A0"}, {3, 4, "A1"}})})};
  ScoreReport r = score(p, g);
  EXPECT_EQ(r.arguments, (Counts{1, 2, 2}));
  EXPECT_DOUBLE_EQ(r.precision(), 50.0);
  EXPECT_DOUBLE_EQ(r.recall(), 50.0);
  EXPECT_DOUBLE_EQ(r.f1(), 50.0);
  EXPECT_EQ(r.labels.at("A0"), (Counts{1, 1, 1}));
  EXPECT_EQ(r.labels.at("A1"), (Counts{0, 1, 1}));
  EXPECT_EQ(r.labels.at("V"), (Counts{1, 1, 1}));
}

TEST(ScorerTest, EmptyPrediction) {
  std::vector<AnnotatedSentence> g = {sentence(6, {pred(2, {{0, 1, "A0"}})})};
  std::vector<AnnotatedSentence> p = {sentence(6, {pred(2, {})})};
  ScoreReport r = score(p, g);
  EXPECT_DOUBLE_EQ(r.precision(), 0.0);
  EXPECT_DOUBLE_EQ(r.recall(), 0.0);
  EXPECT_DOUBLE_EQ(r.f1(), 0.0);
  EXPECT_DOUBLE_EQ(Counts{}.f1(), 0.0);
}

TEST(ScorerTest, PredicateSpansScoredSeparately) {
  std::vector<AnnotatedSentence> g = {sentence(6, {pred(2, {{0, 1, "A0"}})})};
  auto p = g;
  p[0].predicates[0].spans.back() = {2, 3, "V"};
  ScoreReport r = score(p, g);
  EXPECT_EQ(r.arguments, (Counts{1, 1, 1}));
  EXPECT_EQ(r.predicate, (Counts{0, 1, 1}));
  EXPECT_NE(r.table().find("V (excl.)"), std::string::npos);
  EXPECT_EQ(r.to_json()["arguments"]["f1"], 100.0);
}

TEST(ScorerTest, MisalignedInputsAreContractErrors) {
  std::vector<AnnotatedSentence> g = {sentence(6, {pred(2, {})})};
  std::vector<AnnotatedSentence> shorter = {sentence(5, {pred(2, {})})};
  std::vector<AnnotatedSentence> moved = {sentence(6, {pred(3, {})})};
  std::vector<AnnotatedSentence> none;
  EXPECT_THROW(score(shorter, g), ContractError);
  EXPECT_THROW(score(moved, g), ContractError);
  EXPECT_THROW(score(none, g), ContractError);
  EXPECT_THROW(score(g, g, ComparabilityFlags{{true, false}}), ContractError);
}

TEST(ScorerTest, AgreesWithBruteForceOnToyStructures) {
  const auto gold = read_props_file(toy_corpus_path());
  std::mt19937_64 rng(17);
  const std::vector<std::string> roles = {"A0", "A1", "A2", "AM-TMP"};
  std::size_t checked = 0;
  for (int round = 0; round < 20; ++round) {
    for (const auto& s : gold) {
      for (const auto& p : s.predicates) {
        if (p.spans.size() > 4) continue;
        std::vector<LabeledSpan> guess;
        for (LabeledSpan x : p.spans) {
          switch (rng() % 5) {
            case 0: continue;
            case 1: x.role = roles[rng() % roles.size()]; break;
            case 2: x.end = std::min(x.end + 1, s.tokens.size() - 1); break;
            default: break;
          }
          guess.push_back(x);
        }
        if (rng() % 3 == 0) {
          const std::size_t a = rng() % s.tokens.size();
          guess.push_back({a, a, roles[rng() % roles.size()]});
        }
        EXPECT_EQ(match_spans(guess, p.spans), brute_force(guess, p.spans));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(OracleTest, MixedComparabilityFixture) {
  // Comparable: 2 of 2 gold arguments found. Non-comparable: 3 gold arguments, empty prediction.
  std::vector<AnnotatedSentence> g = {
      sentence(8, {pred(2, {{0, 1, "A0"}, {3, 4, "A1"}}), pred(5, {{0, 1, "A0"}, {3, 4, "A1"}, {6, 7, "AM-TMP"}})})};
  std::vector<AnnotatedSentence> p = g;
  p[0].predicates[1].spans.clear();
  const ComparabilityFlags flags = {{true, false}};
  OracleBounds b = oracle_bounds(p, g, flags);
  EXPECT_NEAR(b.min_f1, 57.14, 0.01);
  EXPECT_NEAR(b.max_f1, 100.0, 0.01);
  ScoreReport r = score(p, g, flags);
  EXPECT_EQ(r.comparable_structures, 1u);
  EXPECT_EQ(r.structures, 2u);
}

TEST(OracleTest, AllOrNothingComparable) {
  std::vector<AnnotatedSentence> g = {sentence(6, {pred(2, {{0, 1, "A0"}, {3, 5, "A1"}})})};
  std::vector<AnnotatedSentence> p = {sentence(6, {pred(2, {{0, 1, "A0"}, {3, 4, "A1"}})})};
  OracleBounds all = oracle_bounds(p, g, {{true}});
  EXPECT_DOUBLE_EQ(all.min_f1, 50.0);
  EXPECT_DOUBLE_EQ(all.max_f1, 50.0);
  OracleBounds none = oracle_bounds(p, g, {{false}});
  EXPECT_DOUBLE_EQ(none.min_f1, 0.0);
  EXPECT_DOUBLE_EQ(none.max_f1, 100.0);
}

TEST(OracleTest, MinNeverExceedsMaxOnRandomFixtures) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<AnnotatedSentence> g, p;
    ComparabilityFlags flags;
    const std::size_t sentences = 1 + rng() % 4;
    for (std::size_t s = 0; s < sentences; ++s) {
      const std::size_t n = 4 + rng() % 8;
      std::vector<PredicateStructure> gp, pp;
      std::vector<bool> f;
      for (std::size_t k = 0; k < 1 + rng() % 3; ++k) {
        const std::size_t at = rng() % n;
        auto spans = [&] {
          std::vector<LabeledSpan> out;
          for (std::size_t a = 0; a < rng() % 4; ++a) {
            const std::size_t start = rng() % n;
            out.push_back({start, start + rng() % (n - start), rng() % 2 ? "A0" : "A1"});
          }
          return out;
        };
        gp.push_back(pred(at, spans()));
        pp.push_back(pred(at, spans()));
        f.push_back(rng() % 2);
      }
      g.push_back(sentence(n, gp));
      p.push_back(sentence(n, pp));
      flags.push_back(f);
    }
    OracleBounds b = oracle_bounds(p, g, flags);
    EXPECT_LE(b.min_f1, b.max_f1 + 1e-12);
    const double actual = score(p, g).f1();
    EXPECT_LE(b.min_f1, actual + 1e-9);
  }
}

TEST(ReproductionTest, Rates) {
  std::vector<Delinearized> results(10);
  for (std::size_t i = 0; i < 9; ++i) results[i].comparable = true;
  results[3].unmatched_closes = 1;
  ReproductionStats s = reproduction_stats(results);
  EXPECT_EQ(s.instances, 10u);
  EXPECT_DOUBLE_EQ(s.same_length_rate(), 90.0);
  EXPECT_DOUBLE_EQ(s.balanced_bracket_rate(), 90.0);
  EXPECT_DOUBLE_EQ(reproduction_stats({}).same_length_rate(), 0.0);
}

}  // namespace
}  // namespace seqsrl
