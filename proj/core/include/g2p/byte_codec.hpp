#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace g2p {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kByteOffset = 3;
inline constexpr int kVocabSize = 256 + kByteOffset;

constexpr TokenId byte_token(unsigned char b) { return static_cast<TokenId>(b) + kByteOffset; }
constexpr bool is_byte_token(TokenId id) { return id >= kByteOffset && id < kVocabSize; }

// Language/variety identifier used as a conditioning prefix, e.g. "eng-us".
// Rendered as `<code>:` in front of the word bytes.
class LanguageTag {
 public:
  static constexpr std::string_view kWildcard = "unk";

  // Throws kInvalidTag unless `code` is 2-16 chars of [a-z0-9-].
  explicit LanguageTag(std::string code);

  static LanguageTag wildcard() { return LanguageTag(std::string(kWildcard)); }
  static bool is_valid(std::string_view code);
  // Inverse of prefix(); throws kInvalidTag on anything but `<code>:`.
  static LanguageTag from_prefix(std::string_view rendered);

  const std::string& code() const noexcept { return code_; }
  bool is_wildcard() const noexcept { return code_ == kWildcard; }
  std::string prefix() const { return "<" + code_ + ">:"; }

  friend auto operator<=>(const LanguageTag&, const LanguageTag&) = default;
  friend bool operator==(const LanguageTag&, const LanguageTag&) = default;

 private:
  std::string code_;
};

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const noexcept { return ids.size(); }
  // Number of ids before the PAD suffix.
  std::size_t unpadded_length() const noexcept;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Throws kInvalidInput if an id is out of range or PAD appears before a non-PAD.
void validate_token_sequence(const TokenSequence& seq);

// UTF-8 bytes of `<tag>:word` (or just `word`), each shifted by kByteOffset,
// followed by a single EOS.
TokenSequence encode(std::string_view word, const std::optional<LanguageTag>& tag = std::nullopt);

struct DecodedText {
  std::string text;
  // True when an ill-formed UTF-8 run was replaced with U+FFFD.
  bool replaced = false;
};

DecodedText decode(const TokenSequence& seq);
DecodedText decode_bytes(std::string_view bytes);

using TaggedWord = std::pair<std::string, LanguageTag>;

// Each entry independently receives the wildcard tag with probability `rate`.
std::vector<TaggedWord> mask_language_tags(std::vector<TaggedWord> batch, double rate,
                                           std::mt19937_64& rng);

bool is_valid_utf8(std::string_view s);

}  // namespace g2p
