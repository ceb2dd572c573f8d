#include "seqsrl/vocab.hpp"

#include <algorithm>

#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"

namespace seqsrl {

namespace {

std::vector<std::string> specials() {
  return {std::string(kUnkToken), std::string(kPredToken), std::string(kBosToken), std::string(kEosToken)};
}

std::vector<std::string> nonempty_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary({}, {}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words, const std::vector<std::string>& labels) {
  tokens_ = specials();
  tokens_.insert(tokens_.end(), words.begin(), words.end());
  word_count_ = tokens_.size();
  tokens_.emplace_back(kOpenBracket);
  tokens_.insert(tokens_.end(), labels.begin(), labels.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ContractError("empty vocabulary token");
    if (!index_.emplace(tokens_[i], i).second) throw ContractError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

std::optional<std::size_t> Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::word_id(std::string_view word) const {
  auto found = id(word);
  return found && *found < word_count_ ? *found : kUnk;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

bool Vocabulary::has_word(std::string_view word) const {
  auto found = id(word);
  return found && *found < word_count_;
}

std::vector<std::string> Vocabulary::words() const {
  return {tokens_.begin() + 4, tokens_.begin() + static_cast<std::ptrdiff_t>(word_count_)};
}

std::vector<std::string> Vocabulary::labels() const {
  return {tokens_.begin() + static_cast<std::ptrdiff_t>(word_count_) + 1, tokens_.end()};
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a("seqsrl-vocab-v1");
  h = fnv1a(std::to_string(word_count_), h);
  for (const std::string& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\n"), h);
  }
  return h;
}

std::string Vocabulary::words_text() const {
  std::string out;
  for (std::size_t i = 0; i < word_count_; ++i) out += tokens_[i] + "\n";
  return out;
}

std::string Vocabulary::labels_text() const {
  std::string out;
  for (std::size_t i = word_count_; i < tokens_.size(); ++i) out += tokens_[i] + "\n";
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view words_text, std::string_view labels_text) {
  auto words = nonempty_lines(words_text);
  auto labels = nonempty_lines(labels_text);
  const auto sp = specials();
  if (words.size() < sp.size() || !std::equal(sp.begin(), sp.end(), words.begin())) {
    throw LoadError("vocabulary must start with the special tokens <unk> <pred> <bos> <eos>");
  }
  if (labels.empty() || labels.front() != kOpenBracket) {
    throw LoadError("label inventory must start with the opening bracket (#");
  }
  words.erase(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(sp.size()));
  labels.erase(labels.begin());
  try {
    return Vocabulary(words, labels);
  } catch (const ContractError& e) {
    throw LoadError(e.what());
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "vocab.txt") || !std::filesystem::exists(dir / "labels.txt")) {
    throw LoadError("no vocab.txt/labels.txt in " + dir.string() + " (run preprocess first)");
  }
  return from_text(read_file(dir / "vocab.txt"), read_file(dir / "labels.txt"));
}

void Vocabulary::save(const std::filesystem::path& dir) const {
  write_file_atomic(dir / "vocab.txt", words_text());
  write_file_atomic(dir / "labels.txt", labels_text());
}

}  // namespace seqsrl
