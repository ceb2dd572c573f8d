#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seqsrl/corpus_io.hpp"
#include "seqsrl/vocab.hpp"

namespace seqsrl {

/// A bracket token in a linearized target: the shared "(#" opener or a
/// role-specific closer "p0:<role>)".
struct LabelToken {
  enum class Kind { Open, Close };
  Kind kind = Kind::Open;
  std::string role;  // canonical upper case, closers only

  std::string surface() const;
  /// Recognises bracket tokens case-insensitively.
  static std::optional<LabelToken> parse(std::string_view token);
};

std::string close_bracket(std::string_view role);
bool is_bracket(std::string_view token);
std::string to_lower(std::string_view text);
std::string to_upper(std::string_view text);

struct InstanceOrigin {
  std::size_t sentence = 0;
  std::size_t predicate = 0;

  bool operator==(const InstanceOrigin&) const = default;
};

/// A source word replaced by the unknown-word token, recorded so decoded
/// copies of it can be restored.
struct UnkEntry {
  std::size_t position = 0;  // index into Instance::source
  std::string word;

  bool operator==(const UnkEntry&) const = default;
};

struct Instance {
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::vector<UnkEntry> unk_map;
  InstanceOrigin origin;

  bool operator==(const Instance&) const = default;
};

/// One copy of the sentence per predicate, paired with that predicate's id.
std::vector<std::pair<AnnotatedSentence, std::size_t>> expand_predicates(const AnnotatedSentence& sentence);

/// Source: lower-cased tokens with <pred> right before the first V token.
/// Target: lower-cased tokens with every span of the chosen predicate
/// wrapped as "(#" ... "p0:<role>)".
Instance linearize(const AnnotatedSentence& sentence, std::size_t predicate, std::size_t sentence_id = 0);

/// linearize() for every predicate of every sentence, in corpus order.
std::vector<Instance> linearize_corpus(std::span<const AnnotatedSentence> sentences);

struct Delinearized {
  std::vector<std::string> words;
  std::vector<LabeledSpan> spans;
  bool comparable = false;
  std::size_t unmatched_opens = 0;
  std::size_t unmatched_closes = 0;
  std::size_t empty_spans = 0;

  /// Bracket repairs: brackets that had no partner and were discarded.
  std::size_t repairs() const { return unmatched_opens + unmatched_closes; }
};

/// Reads spans back out of a (possibly malformed) target sequence. Each
/// closer matches the most recent unmatched opener; openers left at the end
/// and closers with nothing to match are dropped and counted. comparable is
/// true iff the remaining words equal the source words without <pred>.
Delinearized delinearize(std::span<const std::string> target, std::span<const std::string> source);

/// Source words without the predicate marker.
std::vector<std::string> source_words(std::span<const std::string> source);

/// True iff no prefix closes more brackets than it opened and every opener
/// is closed.
bool brackets_balanced(std::span<const std::string> target);

/// Replaces words outside the vocabulary's word set by <unk> in source and
/// target, recording each replaced source position.
Instance apply_unk(const Instance& instance, const Vocabulary& vocab);

}  // namespace seqsrl
