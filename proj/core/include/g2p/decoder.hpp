#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "g2p/byte_codec.hpp"
#include "g2p/model.hpp"

namespace g2p {

struct DecodeConfig {
  int beam_size = 5;
  int max_len = 64;
  // Hypotheses are ranked by log_prob / length^length_penalty.
  double length_penalty = 0.0;

  void validate() const;
  friend bool operator==(const DecodeConfig&, const DecodeConfig&) = default;
};

// One generated output. `tokens` excludes the leading BOS and ends with EOS
// unless the hypothesis was truncated at max_len.
struct Prediction {
  std::string text;
  bool replaced = false;  // ill-formed UTF-8 was replaced with U+FFFD
  double log_prob = 0.0;
  bool truncated = false;
  std::vector<TokenId> tokens;
};

struct BeamResult {
  std::vector<Prediction> hypotheses;  // best first
  bool all_truncated = false;

  const Prediction& best() const { return hypotheses.front(); }
};

struct BatchItemResult {
  std::optional<BeamResult> result;
  std::string error;

  bool ok() const { return result.has_value(); }
};

// Ids a decoder may emit: EOS and the 256 byte ids.
bool is_generatable(TokenId id);

// Supplies next-token log-probabilities for a set of hypothesis slots.
// Each call replaces the slot set: new slot i continues old slot
// `parents[i]` (or starts item `items[i]` afresh when the parent is -1)
// by feeding `tokens[i]`.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  // Returns [n x vocab_size] log-probabilities, row-major.
  virtual std::vector<double> advance(std::span<const int> items, std::span<const int> parents,
                                      std::span<const TokenId> tokens) = 0;
};

// Scores with a model through cached incremental decoding.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const ModelParameters<float>& params, std::span<const TokenSequence> sources);

  int vocab_size() const override { return params_.config.vocab_size; }
  std::vector<double> advance(std::span<const int> items, std::span<const int> parents,
                              std::span<const TokenId> tokens) override;

 private:
  const ModelParameters<float>& params_;
  std::vector<EncodedSource<float>> sources_;
  std::vector<DecoderCache<float>> slots_;
};

// Lock-step beam search over `n_items` independent inputs.
std::vector<BeamResult> run_beam_search(StepScorer& scorer, int n_items, const DecodeConfig& config);
Prediction run_greedy(StepScorer& scorer, const DecodeConfig& config);

Prediction greedy_decode(const ModelParameters<float>& params, const TokenSequence& src,
                         const DecodeConfig& config);
BeamResult beam_search(const ModelParameters<float>& params, const TokenSequence& src,
                       const DecodeConfig& config);

// Per-item results identical to beam_search on each source; malformed items
// carry an error instead of aborting the batch.
std::vector<BatchItemResult> batch_decode(const ModelParameters<float>& params,
                                          std::span<const TokenSequence> sources,
                                          const DecodeConfig& config);

// Batched greedy decoding (beam width 1), used for development-set scoring.
std::vector<BatchItemResult> batch_greedy_decode(const ModelParameters<float>& params,
                                                 std::span<const TokenSequence> sources,
                                                 int max_len);

// Sum of log-softmax values of `tokens` under teacher forcing.
double sequence_log_prob(const ModelParameters<float>& params, const TokenSequence& src,
                         std::span<const TokenId> tokens);

}  // namespace g2p
