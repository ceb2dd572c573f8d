#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace seqsrl {

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kPredToken = "<pred>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kOpenBracket = "(#";

/// The output inventory V ∪ L shared by encoder and decoder.
///
/// Ids [0, word_count) are words, with the four specials first in the order
/// unk, pred, bos, eos. Ids [word_count, size) are bracket labels, the
/// common opening bracket first.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPred = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;

  Vocabulary();
  /// words excludes the specials; labels excludes the opening bracket.
  /// Duplicates are an error.
  Vocabulary(const std::vector<std::string>& words, const std::vector<std::string>& labels);

  std::size_t size() const { return tokens_.size(); }
  std::size_t word_count() const { return word_count_; }
  std::size_t label_count() const { return tokens_.size() - word_count_; }

  std::optional<std::size_t> id(std::string_view token) const;
  /// Id of a word, or the unknown-word id.
  std::size_t word_id(std::string_view word) const;
  const std::string& token(std::size_t id) const;
  bool has_word(std::string_view word) const;
  bool is_label(std::size_t id) const { return id >= word_count_ && id < tokens_.size(); }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::string> words() const;
  std::vector<std::string> labels() const;

  /// Stable fingerprint of the token inventory and its id assignment.
  std::uint64_t hash() const;

  /// One token per line; the specials and the opening bracket included.
  std::string words_text() const;
  std::string labels_text() const;
  static Vocabulary from_text(std::string_view words_text, std::string_view labels_text);
  static Vocabulary load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_ && word_count_ == other.word_count_; }

 private:
  std::vector<std::string> tokens_;
  std::size_t word_count_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace seqsrl
