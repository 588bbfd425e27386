#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2p/byte_codec.hpp"
#include "g2p/decoder.hpp"
#include "g2p/lexicon.hpp"
#include "g2p/metrics.hpp"
#include "g2p/model.hpp"

namespace g2p {

struct TrainConfig {
  double learning_rate = 3e-4;
  int effective_batch_size = 512;
  int micro_batch_size = 32;
  int epochs = 10;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double unk_mask_rate = 0.15;
  std::uint64_t seed = 0;
  int eval_every = 0;  // optimizer steps between dev evaluations; 0 = once per epoch
  std::vector<std::string> language_filter;  // empty = every language given
  std::int64_t max_steps = 0;  // stop after this many optimizer steps; 0 = no limit

  void validate() const;
  int accumulation_steps() const { return effective_batch_size / micro_batch_size; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <class T>
struct OptimizerState {
  std::int64_t step = 0;
  ModelParameters<T> first_moment;
  ModelParameters<T> second_moment;

  static OptimizerState zeros(const ModelConfig& config) {
    return {0, ModelParameters<T>::zeros(config), ModelParameters<T>::zeros(config)};
  }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

// One AdamW update in place. Weights are first scaled by (1 - lr*decay),
// then moved by the bias-corrected Adam step. Throws kNonFinite naming the
// first gradient tensor holding a NaN or infinity; nothing is modified then.
template <class T>
void adamw_step(ModelParameters<T>& params, const ModelParameters<T>& grads,
                OptimizerState<T>& state, const TrainConfig& config);

// One (tag, word, pronunciation) training pair, already encoded.
struct TrainExample {
  LanguageTag language;
  std::string word;
  TokenSequence target;
};

// Mean-loss gradients of `examples`, computed micro-batch by micro-batch as
// summed NLL and divided once by the total token count. `dropout_seed` feeds
// micro-batch i with a seed derived from (dropout_seed, i).
template <class T>
struct AccumulatedGradients {
  ModelParameters<T> gradients;
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  int micro_batches = 0;
};

template <class T>
AccumulatedGradients<T> accumulate_batch(const ModelParameters<T>& params,
                                         std::span<const TokenSequence> sources,
                                         std::span<const TokenSequence> targets,
                                         int micro_batch_size, ForwardMode mode,
                                         std::uint64_t dropout_seed);

struct EvalPoint {
  std::int64_t step = 0;
  int epoch = 0;  // 1-based epoch in which the evaluation happened
  double train_loss = 0.0;  // token-weighted mean since the previous evaluation
  double dev_per = 0.0;
  double dev_wer = 0.0;

  friend bool operator==(const EvalPoint&, const EvalPoint&) = default;
};

struct TrainReport {
  std::vector<EvalPoint> history;
  int selected = -1;  // index into history, -1 when nothing was evaluated
  std::vector<double> epoch_seconds;
  std::vector<int> micro_batches_per_step;
  double effective_unk_mask_rate = 0.0;
  std::size_t examples = 0;
  std::size_t skipped_examples = 0;  // longer than the model's limits
  std::int64_t optimizer_steps = 0;

  nlohmann::json to_json() const;
  static TrainReport from_json(const nlohmann::json& j);
};

// Everything needed to continue a run after an epoch boundary.
struct TrainerState {
  ModelParameters<float> params;
  OptimizerState<float> optimizer;
  ModelParameters<float> best_params;
  int epochs_done = 0;
  TrainReport report;
};

class Trainer {
 public:
  using EpochCallback = std::function<void(const TrainerState&)>;

  // Throws kInsufficientData when training data is empty or a trained
  // language has no dev lexicon, kConfig on invalid settings.
  Trainer(ModelParameters<float> initial, TrainConfig config, std::span<const Lexicon> train,
          std::span<const Lexicon> dev);

  // Continues from a snapshot taken at an epoch boundary.
  void restore(TrainerState state);

  // Runs the remaining epochs. `on_epoch` sees the state after each epoch.
  void run(const EpochCallback& on_epoch = {});

  const TrainerState& state() const noexcept { return state_; }
  const TrainReport& report() const noexcept { return state_.report; }
  // Parameters of the selected checkpoint (initial ones if never evaluated).
  const ModelParameters<float>& selected_params() const noexcept { return state_.best_params; }
  const std::vector<LanguageTag>& languages() const noexcept { return languages_; }

 private:
  bool run_epoch(int epoch);
  void evaluate_dev(int epoch);

  TrainConfig config_;
  std::vector<TrainExample> examples_;
  std::vector<Lexicon> dev_;
  std::vector<LanguageTag> languages_;
  double mask_rate_ = 0.0;
  TrainerState state_;
  double pending_loss_ = 0.0;
  std::size_t pending_tokens_ = 0;
  std::int64_t last_eval_step_ = -1;
};

struct TrainResult {
  ModelParameters<float> params;
  TrainReport report;
};

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  std::span<const Lexicon> train_lexicons, std::span<const Lexicon> dev_lexicons);

// Same loop as train() from a copy of `pretrained` with a fresh optimizer.
// Throws kIncompatible when `pretrained` does not match `target`.
TrainResult finetune(const ModelParameters<float>& pretrained, const ModelConfig& target,
                     const TrainConfig& train_config, const Lexicon& target_lexicon,
                     const Lexicon& dev_lexicon);

// Decodes every word with the wildcard prefix. When `training_tags` is
// given, the lexicon's tag must not be among them (kInvalidInput).
EvalReport zero_shot_eval(const ModelParameters<float>& params, const Lexicon& unseen,
                          const DecodeConfig& config = {},
                          std::span<const LanguageTag> training_tags = {});

}  // namespace g2p
