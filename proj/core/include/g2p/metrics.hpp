#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2p/byte_codec.hpp"

namespace g2p {

struct PhoneSequence {
  std::vector<std::string> phones;

  std::size_t size() const noexcept { return phones.size(); }
  bool empty() const noexcept { return phones.empty(); }
  // Concatenation of the phones, without separators.
  std::string joined() const;

  friend bool operator==(const PhoneSequence&, const PhoneSequence&) = default;
};

// Space-separated input splits on spaces. Otherwise: extended grapheme
// clusters, with modifier letters and combining marks attached to the
// preceding cluster and tie bars joining their two neighbours.
PhoneSequence segment_phones(std::string_view ipa);

// Unit-cost Levenshtein distance.
std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

struct ReferenceMatch {
  std::size_t index = 0;       // which reference
  std::size_t edits = 0;
  std::size_t ref_length = 0;

  double per() const { return 100.0 * static_cast<double>(edits) / static_cast<double>(ref_length); }
};

// Reference with the lowest PER; earliest wins ties. Throws kInvalidReference
// on an empty list or an empty reference.
ReferenceMatch best_reference(const PhoneSequence& hyp, std::span<const PhoneSequence> refs);

// Percent, minimum over references, not clamped at 100.
double phone_error_rate(const PhoneSequence& hyp, std::span<const PhoneSequence> refs);

// Percent of predictions whose phone sequence equals none of its references.
double word_error_rate(std::span<const std::string> predictions,
                       std::span<const std::vector<std::string>> references);

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> fractional_ranks(std::span<const double> values);

// Pearson correlation of fractional ranks. Throws kUndefinedCorrelation for
// fewer than two points or zero rank variance.
double spearman_rho(std::span<const double> x, std::span<const double> y);

// One scored test word.
struct ScoredWord {
  std::string word;
  std::string prediction;
  std::vector<std::string> references;
  bool failed = false;  // decoding failed; scored as an empty prediction
};

struct LanguageScore {
  LanguageTag language;
  std::size_t words = 0;
  std::size_t edit_ops = 0;
  std::size_t reference_phones = 0;
  std::size_t wrong_words = 0;
  std::size_t failed_words = 0;
  double per = 0.0;  // edit_ops / reference_phones
  double wer = 0.0;
  double word_averaged_per = 0.0;  // mean of per-word PER, for comparison only
};

LanguageScore score_language(const LanguageTag& language, std::span<const ScoredWord> words);

struct EvalReport {
  std::vector<LanguageScore> rows;  // sorted by tag
  double per = 0.0;                 // unweighted mean over rows
  double wer = 0.0;
  double micro_per = 0.0;           // pooled over all words
  double micro_wer = 0.0;
  std::optional<double> spearman;   // (training size, PER) across rows

  nlohmann::json to_json() const;
  std::string to_text() const;
};

inline constexpr std::string_view kAveragingRule =
    "PER is micro-averaged within a language (edit operations / best-reference phones); "
    "the headline aggregate is the unweighted mean over languages";

// Sorts rows and fills the aggregates. Throws kInvalidInput on an empty
// list or duplicate languages.
EvalReport make_report(std::vector<LanguageScore> rows);

// Spearman correlation of per-language training size against PER. Sizes
// are looked up by tag; rows without a size are skipped.
void attach_correlation(EvalReport& report,
                        std::span<const std::pair<LanguageTag, std::size_t>> train_sizes);

}  // namespace g2p
