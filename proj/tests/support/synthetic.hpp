#pragma once

// Synthetic languages with known grapheme-to-phone mappings.

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "g2p/lexicon.hpp"

namespace g2p::testing {

inline const std::vector<std::string>& phone_inventory() {
  static const std::vector<std::string> kPhones = {
      "p", "b", "t", "d", "k", "ɡ", "m", "n", "s", "z", "ʃ", "l", "r", "a", "e", "i",
      "o", "u", "kʰ", "tʰ", "t͡ʃ", "d͡ʒ", "ɛ", "ɔ", "aː", "iː", "ŋ", "x", "j", "w"};
  return kPhones;
}

// One grapheme per phone slot; a word is a grapheme string and its
// pronunciation the concatenated phones.
struct SyntheticLanguage {
  std::string code;
  std::vector<std::string> graphemes;
  std::vector<std::string> phones;  // phones[i] is the sound of graphemes[i]
  int min_len = 3;
  int max_len = 8;

  std::string transcribe(const std::vector<int>& letters) const {
    std::string out;
    for (int i : letters) out += phones[i];
    return out;
  }
  std::string spell(const std::vector<int>& letters) const {
    std::string out;
    for (int i : letters) out += graphemes[i];
    return out;
  }

  Lexicon lexicon(std::size_t n_words, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len(min_len, max_len);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(graphemes.size()) - 1);
    Lexicon lex{LanguageTag(code)};
    std::size_t guard = 0;
    while (lex.size() < n_words && ++guard < n_words * 100) {
      std::vector<int> w(len(rng));
      for (int& c : w) c = pick(rng);
      const auto spelled = spell(w);
      if (!lex.find(spelled)) lex.add(spelled, transcribe(w));
    }
    return lex;
  }
};

inline std::vector<std::string> latin_letters(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(std::string(1, static_cast<char>('a' + i)));
  return out;
}

// Letter i sounds like phone (i + shift) mod |inventory|.
inline SyntheticLanguage shifted_language(std::string code, int letters, int shift) {
  const auto& inv = phone_inventory();
  SyntheticLanguage lang{std::move(code), latin_letters(letters), {}};
  for (int i = 0; i < letters; ++i) lang.phones.push_back(inv[(i + shift) % inv.size()]);
  return lang;
}

// Greek lowercase letters with a seeded random phone assignment.
inline SyntheticLanguage greek_language(std::string code, int letters, std::uint64_t seed) {
  const auto& inv = phone_inventory();
  SyntheticLanguage lang{std::move(code), {}, {}};
  std::vector<std::string> phones = inv;
  std::mt19937_64 rng(seed);
  std::shuffle(phones.begin(), phones.end(), rng);
  for (int i = 0; i < letters; ++i) {
    const char32_t cp = U'α' + static_cast<char32_t>(i);
    std::string s;
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    lang.graphemes.push_back(s);
    lang.phones.push_back(phones[i]);
  }
  lang.min_len = 4;
  return lang;
}

// Splits a lexicon's entries into consecutive train/dev/test lexicons.
struct SyntheticSplit {
  Lexicon train, dev, test;
};

inline SyntheticSplit split_lexicon(const Lexicon& lex, std::size_t n_train, std::size_t n_dev,
                                    std::size_t n_test) {
  SyntheticSplit s{Lexicon(lex.language()), Lexicon(lex.language()), Lexicon(lex.language())};
  std::size_t i = 0;
  for (const auto& e : lex.entries()) {
    Lexicon* target = i < n_train ? &s.train : i < n_train + n_dev ? &s.dev
                                             : i < n_train + n_dev + n_test ? &s.test : nullptr;
    if (!target) break;
    for (const auto& p : e.pronunciations) target->add(e.word, p);
    ++i;
  }
  return s;
}

}  // namespace g2p::testing
