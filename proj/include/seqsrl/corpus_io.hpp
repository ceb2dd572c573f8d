#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace seqsrl {

/// Inclusive token range [start, end] filling one role.
struct LabeledSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string role;

  auto operator<=>(const LabeledSpan&) const = default;
  bool contains(std::size_t token) const { return start <= token && token <= end; }
};

struct PredicateStructure {
  std::size_t predicate_index = 0;
  std::string lemma;
  std::vector<LabeledSpan> spans;

  bool operator==(const PredicateStructure&) const = default;
};

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  std::vector<PredicateStructure> predicates;

  bool operator==(const AnnotatedSentence&) const = default;
};

inline constexpr const char* kPredicateRole = "V";

/// How strictly predicate structures are checked.
///
/// Gold: every predicate carries exactly one V span and it covers the
/// predicate token. Predicted: system output may omit or misplace V, and a
/// structure may be empty (the output could not be aligned to the words).
enum class Strictness { Gold, Predicted };

bool valid_role(const std::string& role);

/// Throws ContractError describing the first violated invariant.
void validate(const AnnotatedSentence& sentence, Strictness strictness = Strictness::Gold);

/// Parses the props column format. Throws ParseError with the line number
/// on malformed input.
std::vector<AnnotatedSentence> read_props(std::istream& in, Strictness strictness = Strictness::Gold);
std::vector<AnnotatedSentence> read_props(const std::string& text, Strictness strictness = Strictness::Gold);
std::vector<AnnotatedSentence> read_props_file(const std::filesystem::path& path,
                                               Strictness strictness = Strictness::Gold);

/// Canonical rendering: single-space separated columns, one blank line
/// after every sentence. Validates every sentence before writing anything.
std::string write_props(std::span<const AnnotatedSentence> sentences, Strictness strictness = Strictness::Gold);
void write_props_file(const std::filesystem::path& path, std::span<const AnnotatedSentence> sentences,
                      Strictness strictness = Strictness::Gold);

}  // namespace seqsrl
