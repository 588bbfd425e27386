#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "g2p/decoder.hpp"
#include "g2p/lexicon.hpp"
#include "g2p/metrics.hpp"
#include "g2p/model.hpp"

namespace g2p {

struct Evaluation {
  EvalReport report;
  // Per language, in report row order.
  std::vector<std::pair<LanguageTag, std::vector<ScoredWord>>> words;
};

// Decodes every word of every lexicon with its own tag (or with
// `prefix_override` when given) and scores the best hypothesis against the
// entry's pronunciations. Words that cannot be encoded or decoded count as
// empty predictions.
Evaluation evaluate_detailed(const ModelParameters<float>& params, std::span<const Lexicon> lexicons,
                             const DecodeConfig& config,
                             const std::optional<LanguageTag>& prefix_override = std::nullopt);

EvalReport evaluate(const ModelParameters<float>& params, std::span<const Lexicon> lexicons,
                    const DecodeConfig& config);

}  // namespace g2p
