#include "g2p/unicode.hpp"

#include <unicode/brkiter.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <memory>

#include "g2p/error.hpp"

namespace g2p::unicode {

std::u32string code_points(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
  const auto length = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    out.push_back(c < 0 ? U'\uFFFD' : static_cast<char32_t>(c));
  }
  return out;
}

std::string to_utf8(char32_t cp) {
  std::string out;
  icu::UnicodeString(static_cast<UChar32>(cp)).toUTF8String(out);
  return out;
}

bool is_letter(char32_t cp) { return (U_GET_GC_MASK(static_cast<UChar32>(cp)) & U_GC_L_MASK) != 0; }

bool is_mark(char32_t cp) { return (U_GET_GC_MASK(static_cast<UChar32>(cp)) & U_GC_M_MASK) != 0; }

bool is_modifier_letter(char32_t cp) {
  return u_charType(static_cast<UChar32>(cp)) == U_MODIFIER_LETTER;
}

bool is_tie_bar(char32_t cp) { return cp == 0x0361 || cp == 0x035C; }

std::vector<std::string> grapheme_clusters(std::string_view utf8) {
  std::vector<std::string> clusters;
  if (utf8.empty()) return clusters;

  const icu::UnicodeString text =
      icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  UErrorCode status = U_ZERO_ERROR;
  std::unique_ptr<icu::BreakIterator> it(
      icu::BreakIterator::createCharacterInstance(icu::Locale::getRoot(), status));
  if (U_FAILURE(status)) fail(ErrorCode::kIo, "cannot create ICU grapheme iterator");
  it->setText(text);

  int32_t start = it->first();
  for (int32_t end = it->next(); end != icu::BreakIterator::DONE; start = end, end = it->next()) {
    std::string cluster;
    text.tempSubStringBetween(start, end).toUTF8String(cluster);
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

}  // namespace g2p::unicode
