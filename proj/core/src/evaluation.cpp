#include "g2p/evaluation.hpp"

#include <algorithm>

#include "g2p/error.hpp"

namespace g2p {

Evaluation evaluate_detailed(const ModelParameters<float>& params, std::span<const Lexicon> lexicons,
                             const DecodeConfig& config,
                             const std::optional<LanguageTag>& prefix_override) {
  config.validate();
  if (lexicons.empty()) fail(ErrorCode::kInvalidInput, "nothing to evaluate");
  std::vector<const Lexicon*> order;
  for (const auto& lex : lexicons) {
    if (lex.empty()) fail(ErrorCode::kInvalidInput, "empty test lexicon " + lex.language().code());
    order.push_back(&lex);
  }
  std::sort(order.begin(), order.end(),
            [](const Lexicon* a, const Lexicon* b) { return a->language() < b->language(); });

  Evaluation ev;
  std::vector<LanguageScore> rows;
  for (const Lexicon* lex : order) {
    const LanguageTag tag = prefix_override.value_or(lex->language());
    std::vector<ScoredWord> words;
    std::vector<TokenSequence> sources;
    std::vector<std::size_t> slot;  // word index of each source
    for (const auto& e : lex->entries()) {
      ScoredWord w{e.word, {}, e.pronunciations, false};
      try {
        auto src = encode(e.word, tag);
        if (src.size() > static_cast<std::size_t>(params.config.max_src_len)) {
          w.failed = true;
        } else {
          slot.push_back(words.size());
          sources.push_back(std::move(src));
        }
      } catch (const Error&) {
        w.failed = true;
      }
      words.push_back(std::move(w));
    }
    if (!sources.empty()) {
      auto results = batch_decode(params, sources, config);
      for (std::size_t i = 0; i < results.size(); ++i) {
        auto& w = words[slot[i]];
        if (results[i].ok() && !results[i].result->hypotheses.empty()) {
          w.prediction = results[i].result->best().text;
        } else {
          w.failed = true;
        }
      }
    }
    rows.push_back(score_language(lex->language(), words));
    ev.words.emplace_back(lex->language(), std::move(words));
  }
  ev.report = make_report(std::move(rows));
  return ev;
}

EvalReport evaluate(const ModelParameters<float>& params, std::span<const Lexicon> lexicons,
                    const DecodeConfig& config) {
  return evaluate_detailed(params, lexicons, config).report;
}

}  // namespace g2p
