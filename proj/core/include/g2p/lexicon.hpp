#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "g2p/byte_codec.hpp"

namespace g2p {

struct LexiconEntry {
  LanguageTag language;
  std::string word;
  // Distinct, non-empty, in first-seen order.
  std::vector<std::string> pronunciations;

  friend bool operator==(const LexiconEntry&, const LexiconEntry&) = default;
};

// All entries of one language, at most one entry per word.
class Lexicon {
 public:
  explicit Lexicon(LanguageTag language) : language_(std::move(language)) {}

  const LanguageTag& language() const noexcept { return language_; }
  const std::vector<LexiconEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  // Adds `pronunciation` under `word`, creating the entry if needed. Exact
  // duplicates are ignored. Returns true if anything was added.
  bool add(std::string_view word, std::string_view pronunciation);
  const LexiconEntry* find(std::string_view word) const;

  // Total (word, pronunciation) pairs.
  std::size_t pronunciation_count() const;

  friend bool operator==(const Lexicon& a, const Lexicon& b) {
    return a.language_ == b.language_ && a.entries_ == b.entries_;
  }

 private:
  LanguageTag language_;
  std::vector<LexiconEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ParseResult {
  Lexicon lexicon;
  std::size_t line_count = 0;       // non-blank lines
  std::vector<std::size_t> malformed_lines;  // 1-based
};

// Reads `word<TAB>pronunciation` lines. Malformed lines are skipped and
// reported; more than 10% malformed is a kFormat error, as is a stream with
// no usable entries.
ParseResult parse_dictionary(std::istream& in, const LanguageTag& language);
ParseResult parse_dictionary(std::string_view text, const LanguageTag& language);

// One `word<TAB>pron` line per pronunciation, LF terminated.
std::string serialize(const Lexicon& lexicon);

struct LexiconSource {
  std::string name;
  Lexicon lexicon;
};

// Union by word. Pronunciations are ordered by source priority (sources in
// `priority` first, in that order; the rest in input order), then by their
// order within the source.
Lexicon merge(std::span<const LexiconSource> sources, std::span<const std::string> priority = {});
Lexicon merge(std::span<const Lexicon> lexicons);

// Keeps words with frequency >= threshold made only of letters and marks.
std::vector<std::string> filter_wordlist(std::span<const std::pair<std::string, std::uint64_t>> words,
                                         std::uint64_t threshold);
bool is_clean_word(std::string_view word);

struct SplitSpec {
  std::size_t dev_size = 50;
  std::size_t test_size = 500;
  std::uint64_t seed = 0;

  static SplitSpec standard(std::uint64_t seed) { return {50, 500, seed}; }
  static SplitSpec low_resource(std::uint64_t seed) { return {50, 200, seed}; }
};

struct Splits {
  Lexicon train;
  Lexicon dev;
  Lexicon test;
};

// Word-level seeded shuffle split. Requires size() >= dev + test + 1.
Splits partition(const Lexicon& lexicon, const SplitSpec& spec);

// Tags of lexicons with strictly more than `min_entries` words, sorted.
std::vector<LanguageTag> eligible_languages(std::span<const Lexicon> lexicons,
                                            std::size_t min_entries);

}  // namespace g2p
