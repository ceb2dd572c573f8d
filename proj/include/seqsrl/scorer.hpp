#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqsrl/corpus_io.hpp"
#include "seqsrl/linearizer.hpp"

namespace seqsrl {

struct Counts {
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  /// Percentages; 0 when the denominator is 0.
  double precision() const;
  double recall() const;
  double f1() const;

  Counts& operator+=(const Counts& other);
  bool operator==(const Counts&) const = default;
};

/// Exact (start, end, role) matches between two span multisets, V spans
/// excluded unless include_predicate is set.
Counts match_spans(std::span<const LabeledSpan> predicted, std::span<const LabeledSpan> gold,
                   bool include_predicate = false);

struct OracleBounds {
  double min_f1 = 0.0;
  double max_f1 = 0.0;
};

struct ScoreReport {
  Counts arguments;                      // V excluded
  Counts predicate;                      // V spans only
  std::map<std::string, Counts> labels;  // per role, V included as its own row
  std::size_t structures = 0;
  std::size_t comparable_structures = 0;
  OracleBounds oracle;
  std::optional<double> same_length_rate;
  std::optional<double> balanced_bracket_rate;

  double precision() const { return arguments.precision(); }
  double recall() const { return arguments.recall(); }
  double f1() const { return arguments.f1(); }

  std::string table() const;
  nlohmann::json to_json() const;
};

/// Comparability flags per sentence and predicate; empty means all comparable.
using ComparabilityFlags = std::vector<std::vector<bool>>;

/// Micro-averaged span scoring. The lists must be aligned: same sentence
/// count, token count and predicate positions. Throws ContractError when not.
ScoreReport score(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                  const ComparabilityFlags& comparable = {});

/// Micro-count bounds. Comparable structures are scored as usual. A
/// non-comparable structure adds its gold spans as missed and its predicted
/// spans as spurious for the minimum, and counts as perfectly labelled for
/// the maximum.
OracleBounds oracle_bounds(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                           const ComparabilityFlags& comparable);

struct ReproductionStats {
  std::size_t instances = 0;
  std::size_t same_length = 0;
  std::size_t balanced = 0;

  double same_length_rate() const;  // percent
  double balanced_bracket_rate() const;
};

/// same length: the output words reproduce the source exactly; balanced: no
/// bracket had to be discarded.
ReproductionStats reproduction_stats(std::span<const Delinearized> results);

}  // namespace seqsrl
