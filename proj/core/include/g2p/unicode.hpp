#pragma once

#include <string>
#include <string_view>
#include <vector>

// Thin wrappers over ICU character properties and segmentation.
namespace g2p::unicode {

// Decodes well-formed UTF-8; ill-formed sequences yield U+FFFD.
std::u32string code_points(std::string_view utf8);
std::string to_utf8(char32_t cp);

bool is_letter(char32_t cp);            // general category L*
bool is_mark(char32_t cp);              // general category M*
bool is_modifier_letter(char32_t cp);   // general category Lm

// U+0361 and U+035C, which join the clusters on either side into one phone.
bool is_tie_bar(char32_t cp);

// Extended grapheme clusters, in order. Concatenation reproduces the input.
std::vector<std::string> grapheme_clusters(std::string_view utf8);

}  // namespace g2p::unicode
