#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "g2p/byte_codec.hpp"
#include "g2p/tensor.hpp"

namespace g2p {

// Architecture hyperparameters of the byte-level encoder-decoder.
struct ModelConfig {
  int vocab_size = kVocabSize;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int n_encoder_layers = 3;
  int n_decoder_layers = 3;
  int max_src_len = 64;
  int max_tgt_len = 64;
  int rel_pos_buckets = 32;
  int rel_pos_max_distance = 128;
  double dropout = 0.1;

  // Throws kConfig on any violated invariant.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Throws kIncompatible naming the first architecture field that differs.
// Dropout is a training setting and is not compared.
void check_compatible(const ModelConfig& expected, const ModelConfig& actual);

template <class T>
struct AttentionParams {
  Matrix<T> query;   // [d_model x d_model]
  Matrix<T> key;
  Matrix<T> value;
  Matrix<T> output;

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

template <class T>
struct FeedForwardParams {
  Matrix<T> input;   // [d_model x d_ff]
  Matrix<T> output;  // [d_ff x d_model]

  friend bool operator==(const FeedForwardParams&, const FeedForwardParams&) = default;
};

template <class T>
struct EncoderLayerParams {
  Matrix<T> self_attention_norm;  // [1 x d_model]
  AttentionParams<T> self_attention;
  Matrix<T> feed_forward_norm;
  FeedForwardParams<T> feed_forward;

  friend bool operator==(const EncoderLayerParams&, const EncoderLayerParams&) = default;
};

template <class T>
struct DecoderLayerParams {
  Matrix<T> self_attention_norm;
  AttentionParams<T> self_attention;
  Matrix<T> cross_attention_norm;
  AttentionParams<T> cross_attention;
  Matrix<T> feed_forward_norm;
  FeedForwardParams<T> feed_forward;

  friend bool operator==(const DecoderLayerParams&, const DecoderLayerParams&) = default;
};

// Named tensors of one model. The token embedding is shared by the encoder
// input, the decoder input and the output projection. Each stack owns one
// relative-position bias table [buckets x heads] used by all of its layers.
template <class T>
struct ModelParameters {
  ModelConfig config;
  Matrix<T> embedding;  // [vocab x d_model]
  Matrix<T> encoder_relative_bias;
  std::vector<EncoderLayerParams<T>> encoder;
  Matrix<T> encoder_final_norm;
  Matrix<T> decoder_relative_bias;
  std::vector<DecoderLayerParams<T>> decoder;
  Matrix<T> decoder_final_norm;

  // Every tensor zero-filled, shapes taken from `config`.
  static ModelParameters zeros(const ModelConfig& config);

  std::vector<std::pair<std::string, Matrix<T>*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix<T>*>> named_tensors() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  template <class U>
  ModelParameters<U> cast() const;

  friend bool operator==(const ModelParameters&, const ModelParameters&) = default;
};

// Zero-mean normal weights with variance 1/fan_in (unit variance for the
// embedding), unit norm gains, zero relative-position tables. Deterministic
// in `seed`.
template <class T>
ModelParameters<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Padded source/target matrices. tgt_in is tgt_out shifted right with BOS in
// front; the masks mark exactly the non-PAD positions.
struct Batch {
  int batch_size = 0;
  int src_len = 0;
  int tgt_len = 0;
  std::vector<TokenId> src;      // [B x S]
  std::vector<TokenId> tgt_in;   // [B x T]
  std::vector<TokenId> tgt_out;  // [B x T]
  std::vector<std::uint8_t> src_mask;
  std::vector<std::uint8_t> tgt_mask;

  // Sources may carry a PAD suffix; targets are usually encode() output.
  static Batch from_sequences(std::span<const TokenSequence> sources,
                              std::span<const TokenSequence> targets);

  int src_length(int b) const;
  int tgt_length(int b) const;
  std::size_t target_tokens() const;
};

enum class ForwardMode { kTrain, kEval };

// [B*T x vocab] logits; rows at PAD target positions are zero.
template <class T>
struct Logits {
  int batch_size = 0;
  int tgt_len = 0;
  Matrix<T> values;

  const T* at(int b, int t) const { return values.row(b * tgt_len + t); }
};

// Dropout is drawn from `dropout_seed` and only in kTrain mode; kEval is
// deterministic. Throws kShape on out-of-range ids, over-length sequences,
// empty sources or masks that disagree with the ids.
template <class T>
Logits<T> forward(const ModelParameters<T>& params, const Batch& batch, ForwardMode mode,
                  std::uint64_t dropout_seed = 0);

struct LossValue {
  double loss = 0.0;  // mean NLL, or the sum when returned by accumulate_gradients
  std::size_t tokens = 0;
};

// Mean NLL over valid target positions. Throws kDegenerateBatch if none.
template <class T>
LossValue cross_entropy_loss(const Logits<T>& logits, const Batch& batch);

template <class T>
struct GradientResult {
  ModelParameters<T> gradients;
  double loss = 0.0;  // mean NLL
  std::size_t tokens = 0;
};

// Exact gradients of the mean target NLL. Throws kDegenerateBatch when the
// batch has no valid target token.
template <class T>
GradientResult<T> backward(const ModelParameters<T>& params, const Batch& batch,
                           ForwardMode mode = ForwardMode::kEval, std::uint64_t dropout_seed = 0);

// Adds the gradient of the summed target NLL into `accumulator` and returns
// the summed loss with its token count. Used for micro-batch accumulation.
template <class T>
LossValue accumulate_gradients(const ModelParameters<T>& params, const Batch& batch,
                               ForwardMode mode, std::uint64_t dropout_seed,
                               ModelParameters<T>& accumulator);

// T5 relative-position bucketing. relative_position = key - query.
// Bidirectional splits buckets into sign halves; causal folds the future
// onto bucket 0.
int relative_position_bucket(int relative_position, bool bidirectional, int num_buckets,
                             int max_distance);
int encoder_position_bucket(int relative_position, const ModelConfig& config);
int decoder_position_bucket(int relative_position, const ModelConfig& config);

// Softmax-normalized attention weights of one (sequence, head) block; rows
// are queries, columns keys, masked keys hold 0.
template <class T>
struct AttentionMap {
  std::string site;  // e.g. "decoder.1.cross_attention"
  int sequence = 0;
  int head = 0;
  Matrix<T> weights;
};

template <class T>
std::vector<AttentionMap<T>> attention_maps(const ModelParameters<T>& params, const Batch& batch);

// --- Incremental inference -------------------------------------------------

// Encoder output of one source plus each decoder layer's cross-attention
// keys and values.
template <class T>
struct EncodedSource {
  int length = 0;
  Matrix<T> memory;
  std::vector<Matrix<T>> cross_keys;
  std::vector<Matrix<T>> cross_values;
};

template <class T>
std::vector<EncodedSource<T>> encode_sources(const ModelParameters<T>& params,
                                             std::span<const TokenSequence> sources);

// Self-attention keys/values of one partial target, per decoder layer,
// row-major [length x d_model].
template <class T>
struct DecoderCache {
  int length = 0;
  std::vector<std::vector<T>> keys;
  std::vector<std::vector<T>> values;
};

// Feeds one token per row and returns next-token log-probabilities
// [rows x vocab]. Row r extends caches[r] against sources[r]. Produces the
// same numbers as a teacher-forced forward() over the full prefix.
template <class T>
Matrix<T> decoder_step(const ModelParameters<T>& params,
                       std::span<const EncodedSource<T>* const> sources,
                       std::span<DecoderCache<T>* const> caches, std::span<const TokenId> tokens);

// Numerically stable log-softmax of one row.
template <class T>
void log_softmax(const T* logits, int n, T* out);

}  // namespace g2p

namespace g2p {

template <class T>
template <class U>
ModelParameters<U> ModelParameters<T>::cast() const {
  ModelParameters<U> out = ModelParameters<U>::zeros(config);
  auto src = named_tensors();
  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].second->values();
    auto to = dst[i].second->values();
    for (std::size_t j = 0; j < from.size(); ++j) to[j] = static_cast<U>(from[j]);
  }
  return out;
}

}  // namespace g2p
