#include "seqsrl/linearizer.hpp"

#include <algorithm>
#include <cctype>

#include "seqsrl/errors.hpp"

namespace seqsrl {

namespace {

constexpr std::string_view kClosePrefix = "p0:";

}  // namespace

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string to_upper(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string close_bracket(std::string_view role) { return std::string(kClosePrefix) + to_lower(role) + ")"; }

std::string LabelToken::surface() const {
  return kind == Kind::Open ? std::string(kOpenBracket) : close_bracket(role);
}

std::optional<LabelToken> LabelToken::parse(std::string_view token) {
  if (token == kOpenBracket) return LabelToken{Kind::Open, {}};
  if (token.size() > kClosePrefix.size() + 1 && token.back() == ')' &&
      to_lower(token.substr(0, kClosePrefix.size())) == kClosePrefix) {
    std::string role = to_upper(token.substr(kClosePrefix.size(), token.size() - kClosePrefix.size() - 1));
    if (valid_role(role)) return LabelToken{Kind::Close, std::move(role)};
  }
  return std::nullopt;
}

bool is_bracket(std::string_view token) { return LabelToken::parse(token).has_value(); }

std::vector<std::pair<AnnotatedSentence, std::size_t>> expand_predicates(const AnnotatedSentence& sentence) {
  std::vector<std::pair<AnnotatedSentence, std::size_t>> out;
  out.reserve(sentence.predicates.size());
  for (std::size_t p = 0; p < sentence.predicates.size(); ++p) out.emplace_back(sentence, p);
  return out;
}

Instance linearize(const AnnotatedSentence& sentence, std::size_t predicate, std::size_t sentence_id) {
  if (predicate >= sentence.predicates.size()) {
    throw IndexError("predicate id " + std::to_string(predicate) + " outside sentence with " +
                     std::to_string(sentence.predicates.size()) + " predicates");
  }
  const PredicateStructure& pred = sentence.predicates[predicate];
  std::vector<LabeledSpan> spans = pred.spans;
  std::sort(spans.begin(), spans.end());
  const std::size_t n = sentence.tokens.size();
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].end >= n || spans[i].start > spans[i].end) throw ContractError("span outside sentence");
    if (i > 0 && spans[i - 1].end >= spans[i].start) {
      throw ContractError("overlapping spans " + spans[i - 1].role + " and " + spans[i].role);
    }
  }
  std::size_t marker = pred.predicate_index;
  for (const LabeledSpan& sp : spans) {
    if (sp.role == kPredicateRole) {
      marker = sp.start;
      break;
    }
  }

  Instance inst;
  inst.origin = {sentence_id, predicate};
  inst.source.reserve(n + 1);
  inst.target.reserve(n + 2 * spans.size());
  std::size_t next_span = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::string word = to_lower(sentence.tokens[t]);
    if (t == marker) inst.source.emplace_back(kPredToken);
    inst.source.push_back(word);
    if (next_span < spans.size() && spans[next_span].start == t) inst.target.emplace_back(kOpenBracket);
    inst.target.push_back(word);
    if (next_span < spans.size() && spans[next_span].end == t) {
      inst.target.push_back(close_bracket(spans[next_span].role));
      ++next_span;
    }
  }
  return inst;
}

std::vector<Instance> linearize_corpus(std::span<const AnnotatedSentence> sentences) {
  std::vector<Instance> out;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (std::size_t p = 0; p < sentences[s].predicates.size(); ++p) out.push_back(linearize(sentences[s], p, s));
  }
  return out;
}

std::vector<std::string> source_words(std::span<const std::string> source) {
  std::vector<std::string> out;
  out.reserve(source.size());
  for (const std::string& tok : source) {
    if (tok != kPredToken) out.push_back(tok);
  }
  return out;
}

Delinearized delinearize(std::span<const std::string> target, std::span<const std::string> source) {
  Delinearized out;
  std::vector<std::size_t> open;  // word index at which each pending opener sits
  for (const std::string& tok : target) {
    auto label = LabelToken::parse(tok);
    if (!label) {
      out.words.push_back(tok);
      continue;
    }
    if (label->kind == LabelToken::Kind::Open) {
      open.push_back(out.words.size());
      continue;
    }
    if (open.empty()) {
      ++out.unmatched_closes;
      continue;
    }
    const std::size_t start = open.back();
    open.pop_back();
    if (start == out.words.size()) {
      ++out.empty_spans;
      continue;
    }
    out.spans.push_back(LabeledSpan{start, out.words.size() - 1, label->role});
  }
  out.unmatched_opens = open.size();
  std::sort(out.spans.begin(), out.spans.end());
  out.comparable = out.words == source_words(source);
  return out;
}

bool brackets_balanced(std::span<const std::string> target) {
  std::size_t depth = 0;
  for (const std::string& tok : target) {
    auto label = LabelToken::parse(tok);
    if (!label) continue;
    if (label->kind == LabelToken::Kind::Open) {
      ++depth;
    } else {
      if (depth == 0) return false;
      --depth;
    }
  }
  return depth == 0;
}

Instance apply_unk(const Instance& instance, const Vocabulary& vocab) {
  Instance out = instance;
  out.unk_map.clear();
  std::vector<bool> replaced;  // per source word (predicate marker skipped)
  for (std::size_t pos = 0; pos < out.source.size(); ++pos) {
    std::string& tok = out.source[pos];
    if (tok == kPredToken) continue;
    const bool unk = !vocab.has_word(tok);
    replaced.push_back(unk);
    if (unk) {
      out.unk_map.push_back(UnkEntry{pos, tok});
      tok = std::string(kUnkToken);
    }
  }
  if (out.target.empty()) return out;
  std::size_t word = 0;
  for (std::string& tok : out.target) {
    if (is_bracket(tok)) continue;
    if (word >= replaced.size()) throw ContractError("target has more words than its source");
    if (replaced[word]) tok = std::string(kUnkToken);
    ++word;
  }
  if (word != replaced.size()) throw ContractError("target words do not align with source words");
  return out;
}

}  // namespace seqsrl
