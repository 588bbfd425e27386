#include "g2p/byte_codec.hpp"

#include <unicode/ustring.h>
#include <unicode/utypes.h>

#include <algorithm>

#include "g2p/error.hpp"

namespace g2p {

LanguageTag::LanguageTag(std::string code) : code_(std::move(code)) {
  if (!is_valid(code_)) {
    fail(ErrorCode::kInvalidTag, "'" + code_ + "' is not 2-16 chars of [a-z0-9-]");
  }
}

bool LanguageTag::is_valid(std::string_view code) {
  if (code.size() < 2 || code.size() > 16) return false;
  return std::all_of(code.begin(), code.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

LanguageTag LanguageTag::from_prefix(std::string_view rendered) {
  if (rendered.size() < 4 || rendered.front() != '<' || !rendered.ends_with(">:")) {
    fail(ErrorCode::kInvalidTag, "not a rendered prefix: '" + std::string(rendered) + "'");
  }
  return LanguageTag(std::string(rendered.substr(1, rendered.size() - 3)));
}

std::size_t TokenSequence::unpadded_length() const noexcept {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == kPad) --n;
  return n;
}

void validate_token_sequence(const TokenSequence& seq) {
  bool in_padding = false;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (id < 0 || id >= kVocabSize) {
      fail(ErrorCode::kInvalidInput, "token id " + std::to_string(id) + " out of range at position " +
                                         std::to_string(i));
    }
    if (id == kPad) {
      in_padding = true;
    } else if (in_padding) {
      fail(ErrorCode::kInvalidInput, "PAD before non-PAD id at position " + std::to_string(i));
    }
  }
}

bool is_valid_utf8(std::string_view s) {
  if (s.empty()) return true;
  UErrorCode status = U_ZERO_ERROR;
  int32_t needed = 0;
  u_strFromUTF8(nullptr, 0, &needed, s.data(), static_cast<int32_t>(s.size()), &status);
  return status == U_BUFFER_OVERFLOW_ERROR || U_SUCCESS(status);
}

TokenSequence encode(std::string_view word, const std::optional<LanguageTag>& tag) {
  if (word.empty()) fail(ErrorCode::kInvalidInput, "empty word");
  if (word.find_first_of("\t\n") != std::string_view::npos) {
    fail(ErrorCode::kInvalidInput, "word contains tab or newline");
  }
  if (!is_valid_utf8(word)) fail(ErrorCode::kInvalidInput, "word is not valid UTF-8");

  TokenSequence seq;
  const std::string prefix = tag ? tag->prefix() : std::string();
  seq.ids.reserve(prefix.size() + word.size() + 1);
  for (char c : prefix) seq.ids.push_back(byte_token(static_cast<unsigned char>(c)));
  for (char c : word) seq.ids.push_back(byte_token(static_cast<unsigned char>(c)));
  seq.ids.push_back(kEos);
  return seq;
}

DecodedText decode_bytes(std::string_view bytes) {
  DecodedText out;
  if (bytes.empty()) return out;

  const auto len = static_cast<int32_t>(bytes.size());
  std::u16string utf16(bytes.size() + 1, u'\0');
  int32_t utf16_len = 0;
  int32_t substitutions = 0;
  UErrorCode status = U_ZERO_ERROR;
  u_strFromUTF8WithSub(utf16.data(), static_cast<int32_t>(utf16.size()), &utf16_len, bytes.data(),
                       len, 0xFFFD, &substitutions, &status);
  if (U_FAILURE(status)) fail(ErrorCode::kInvalidInput, "UTF-8 conversion failed");

  std::string utf8(static_cast<std::size_t>(utf16_len) * 3 + 1, '\0');
  int32_t utf8_len = 0;
  status = U_ZERO_ERROR;
  u_strToUTF8(utf8.data(), static_cast<int32_t>(utf8.size()), &utf8_len, utf16.data(), utf16_len,
              &status);
  if (U_FAILURE(status)) fail(ErrorCode::kInvalidInput, "UTF-8 conversion failed");
  utf8.resize(static_cast<std::size_t>(utf8_len));

  out.text = std::move(utf8);
  out.replaced = substitutions > 0;
  return out;
}

DecodedText decode(const TokenSequence& seq) {
  std::string bytes;
  bytes.reserve(seq.ids.size());
  for (TokenId id : seq.ids) {
    if (is_byte_token(id)) bytes.push_back(static_cast<char>(id - kByteOffset));
  }
  return decode_bytes(bytes);
}

std::vector<TaggedWord> mask_language_tags(std::vector<TaggedWord> batch, double rate,
                                           std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    fail(ErrorCode::kInvalidInput, "mask rate must lie in [0, 1]");
  }
  std::bernoulli_distribution coin(rate);
  const LanguageTag wildcard = LanguageTag::wildcard();
  for (auto& entry : batch) {
    if (coin(rng)) entry.second = wildcard;
  }
  return batch;
}

}  // namespace g2p
