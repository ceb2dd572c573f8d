#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqsrl/corpus_io.hpp"
#include "seqsrl/scorer.hpp"

namespace seqsrl {

enum class Overlap { Exact, Partial, None };

/// One class per predicted span (V spans skipped), in input order.
std::vector<Overlap> span_overlap(std::span<const LabeledSpan> predicted, std::span<const LabeledSpan> gold);

struct OverlapCounts {
  std::size_t exact = 0;
  std::size_t partial = 0;
  std::size_t none = 0;
  std::size_t total() const { return exact + partial + none; }
};

inline constexpr const char* kNoneLabel = "NONE";

/// Rows are gold labels, columns predicted labels, both ending with NONE.
/// A gold span whose boundaries no predicted span reproduces lands in
/// column NONE; a predicted span whose boundaries match no gold span lands
/// in row NONE. Only argument spans are considered.
struct ConfusionMatrix {
  std::vector<std::string> labels;  // roles, sorted, then NONE
  std::vector<std::vector<std::size_t>> counts;

  std::size_t index(const std::string& label) const;
  std::size_t row_total(std::size_t row) const;
  /// Row-normalised percentage; 0 for an empty row.
  double percent(std::size_t row, std::size_t col) const;
};

struct ArgCountDiffs {
  std::array<std::size_t, 3> missing{};  // structures with 0, 1, 2+ missing arguments
  std::array<std::size_t, 3> excess{};
  std::size_t structures = 0;
  std::size_t duplicates = 0;  // structures repeating a core role (A0-A5) in the prediction
  double duplicate_rate() const;
};

struct CurveBin {
  std::string label;
  Counts counts;
  std::size_t spans = 0;  // predicted spans falling in the bin
  std::size_t wrong = 0;  // of which not exactly correct

  bool empty() const { return counts.gold == 0 && counts.predicted == 0; }
  std::optional<double> f1() const;
  std::optional<double> error_ratio() const;
};

struct AnalysisReport {
  std::size_t structures = 0;  // comparable structures analysed
  std::size_t skipped = 0;     // non-comparable structures left out
  OverlapCounts overlap;
  ConfusionMatrix confusion;
  ArgCountDiffs counts;
  std::vector<CurveBin> f1_by_length;       // by gold linearized target length
  std::vector<CurveBin> f1_by_distance;     // |span midpoint - predicate| / sentence length, fifths
  std::vector<CurveBin> error_by_position;  // span start / sentence length, fifths

  nlohmann::json to_json() const;
};

/// Length-bin index for a linearized sequence of n tokens: <=20, 21-30,
/// 31-40, 41-50, 51-60, >60.
std::size_t length_bin(std::size_t n);
/// Fifth of [0, 1] holding x, the top edge belonging to the last bucket.
std::size_t fifth(double x);

/// Analyses the comparable structures of aligned predicted/gold lists.
AnalysisReport analyze(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                       const ComparabilityFlags& comparable = {});

/// Writes confusion.csv, arg_counts.csv, f1_by_length.csv,
/// f1_by_distance.csv, error_by_position.csv, the matching .svg files and
/// analysis.json. Every file starts with a comment carrying `provenance`.
std::vector<std::filesystem::path> write_analysis(const AnalysisReport& report, const std::filesystem::path& dir,
                                                  const std::string& provenance);

}  // namespace seqsrl
