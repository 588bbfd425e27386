#include "g2p/lexicon.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "g2p/error.hpp"
#include "g2p/unicode.hpp"

namespace g2p {
namespace {

std::string_view trim(std::string_view s) {
  constexpr std::string_view kSpace = " \r\v\f";
  const auto first = s.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(kSpace);
  return s.substr(first, last - first + 1);
}

}  // namespace

bool Lexicon::add(std::string_view word, std::string_view pronunciation) {
  if (word.empty() || pronunciation.empty()) {
    fail(ErrorCode::kInvalidInput, "empty word or pronunciation");
  }
  if (word.find_first_of("\t\n") != std::string_view::npos ||
      pronunciation.find_first_of("\t\n") != std::string_view::npos) {
    fail(ErrorCode::kInvalidInput, "tab or newline inside a lexicon field");
  }
  auto [it, inserted] = index_.try_emplace(std::string(word), entries_.size());
  if (inserted) {
    entries_.push_back({language_, std::string(word), {std::string(pronunciation)}});
    return true;
  }
  auto& prons = entries_[it->second].pronunciations;
  if (std::find(prons.begin(), prons.end(), pronunciation) != prons.end()) return false;
  prons.emplace_back(pronunciation);
  return true;
}

const LexiconEntry* Lexicon::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::size_t Lexicon::pronunciation_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.pronunciations.size();
  return n;
}

ParseResult parse_dictionary(std::istream& in, const LanguageTag& language) {
  ParseResult result{Lexicon(language), 0, {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (view.ends_with('\r')) view.remove_suffix(1);
    if (trim(view).empty()) continue;
    ++result.line_count;

    const auto tab = view.find('\t');
    if (tab == std::string_view::npos || view.find('\t', tab + 1) != std::string_view::npos) {
      result.malformed_lines.push_back(line_no);
      continue;
    }
    const auto word = trim(view.substr(0, tab));
    const auto pron = trim(view.substr(tab + 1));
    if (word.empty() || pron.empty() || !is_valid_utf8(word) || !is_valid_utf8(pron)) {
      result.malformed_lines.push_back(line_no);
      continue;
    }
    result.lexicon.add(word, pron);
  }

  if (result.malformed_lines.size() * 10 > result.line_count) {
    fail(ErrorCode::kFormat, std::to_string(result.malformed_lines.size()) + " of " +
                                 std::to_string(result.line_count) +
                                 " lines malformed (limit 10%) for " + language.code());
  }
  if (result.lexicon.empty()) {
    fail(ErrorCode::kFormat, "no entries for " + language.code());
  }
  return result;
}

ParseResult parse_dictionary(std::string_view text, const LanguageTag& language) {
  std::istringstream in{std::string(text)};
  return parse_dictionary(in, language);
}

std::string serialize(const Lexicon& lexicon) {
  std::string out;
  for (const auto& entry : lexicon.entries()) {
    for (const auto& pron : entry.pronunciations) {
      out.append(entry.word).push_back('\t');
      out.append(pron).push_back('\n');
    }
  }
  return out;
}

Lexicon merge(std::span<const LexiconSource> sources, std::span<const std::string> priority) {
  if (sources.empty()) fail(ErrorCode::kInvalidInput, "nothing to merge");
  const LanguageTag& language = sources.front().lexicon.language();
  for (const auto& source : sources) {
    if (source.lexicon.language() != language) {
      fail(ErrorCode::kInvalidInput, "cannot merge " + source.lexicon.language().code() +
                                         " into " + language.code());
    }
  }

  std::vector<std::size_t> order;
  order.reserve(sources.size());
  for (const auto& name : priority) {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (sources[i].name == name && std::find(order.begin(), order.end(), i) == order.end()) {
        order.push_back(i);
      }
    }
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (std::find(order.begin(), order.end(), i) == order.end()) order.push_back(i);
  }

  Lexicon merged(language);
  for (std::size_t i : order) {
    for (const auto& entry : sources[i].lexicon.entries()) {
      for (const auto& pron : entry.pronunciations) merged.add(entry.word, pron);
    }
  }
  return merged;
}

Lexicon merge(std::span<const Lexicon> lexicons) {
  std::vector<LexiconSource> sources;
  sources.reserve(lexicons.size());
  for (std::size_t i = 0; i < lexicons.size(); ++i) {
    sources.push_back({std::to_string(i), lexicons[i]});
  }
  return merge(sources);
}

bool is_clean_word(std::string_view word) {
  if (word.empty() || !is_valid_utf8(word)) return false;
  for (char32_t cp : unicode::code_points(word)) {
    if (!unicode::is_letter(cp) && !unicode::is_mark(cp)) return false;
  }
  return true;
}

std::vector<std::string> filter_wordlist(std::span<const std::pair<std::string, std::uint64_t>> words,
                                         std::uint64_t threshold) {
  std::vector<std::string> kept;
  for (const auto& [word, frequency] : words) {
    if (frequency >= threshold && is_clean_word(word)) kept.push_back(word);
  }
  return kept;
}

Splits partition(const Lexicon& lexicon, const SplitSpec& spec) {
  const std::size_t needed = spec.dev_size + spec.test_size + 1;
  if (lexicon.size() < needed) {
    fail(ErrorCode::kInsufficientData,
         lexicon.language().code() + " has " + std::to_string(lexicon.size()) + " words, needs " +
             std::to_string(needed) + " (short by " + std::to_string(needed - lexicon.size()) + ")");
  }

  std::vector<std::size_t> order(lexicon.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto dev_end = order.begin() + static_cast<std::ptrdiff_t>(spec.dev_size);
  const auto test_end = dev_end + static_cast<std::ptrdiff_t>(spec.test_size);
  std::sort(order.begin(), dev_end);
  std::sort(dev_end, test_end);
  std::sort(test_end, order.end());

  auto take = [&](auto first, auto last) {
    Lexicon out(lexicon.language());
    for (auto it = first; it != last; ++it) {
      const auto& entry = lexicon.entries()[*it];
      for (const auto& pron : entry.pronunciations) out.add(entry.word, pron);
    }
    return out;
  };
  return {take(test_end, order.end()), take(order.begin(), dev_end), take(dev_end, test_end)};
}

std::vector<LanguageTag> eligible_languages(std::span<const Lexicon> lexicons,
                                            std::size_t min_entries) {
  std::vector<LanguageTag> tags;
  for (const auto& lexicon : lexicons) {
    if (lexicon.size() > min_entries) tags.push_back(lexicon.language());
  }
  std::sort(tags.begin(), tags.end());
  return tags;
}

}  // namespace g2p
