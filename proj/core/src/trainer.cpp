#include "g2p/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "g2p/error.hpp"
#include "g2p/evaluation.hpp"

namespace g2p {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ b); }

std::mt19937_64 stream(std::uint64_t seed, int epoch, int purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

bool fits(const TokenSequence& seq, int limit) {
  return seq.size() <= static_cast<std::size_t>(limit);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::kConfig, "learning_rate must be positive");
  }
  if (micro_batch_size < 1) fail(ErrorCode::kConfig, "micro_batch_size must be >= 1");
  if (effective_batch_size < 1) fail(ErrorCode::kConfig, "effective_batch_size must be >= 1");
  if (effective_batch_size % micro_batch_size != 0) {
    fail(ErrorCode::kConfig, "effective_batch_size must be a multiple of micro_batch_size");
  }
  if (epochs < 0) fail(ErrorCode::kConfig, "epochs must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    fail(ErrorCode::kConfig, "weight_decay must be >= 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail(ErrorCode::kConfig, "adam_beta1 must be in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail(ErrorCode::kConfig, "adam_beta2 must be in [0,1)");
  if (!(adam_eps > 0.0)) fail(ErrorCode::kConfig, "adam_eps must be positive");
  if (!(unk_mask_rate >= 0.0 && unk_mask_rate <= 1.0)) {
    fail(ErrorCode::kConfig, "unk_mask_rate must be in [0,1]");
  }
  if (eval_every < 0) fail(ErrorCode::kConfig, "eval_every must be >= 0");
  if (max_steps < 0) fail(ErrorCode::kConfig, "max_steps must be >= 0");
  for (const auto& code : language_filter) {
    if (!LanguageTag::is_valid(code)) fail(ErrorCode::kConfig, "bad language in filter: " + code);
  }
}

template <class T>
void adamw_step(ModelParameters<T>& params, const ModelParameters<T>& grads,
                OptimizerState<T>& state, const TrainConfig& config) {
  if (state.step < 0) fail(ErrorCode::kConfig, "optimizer step must be >= 0");
  auto p = params.named_tensors();
  auto g = grads.named_tensors();
  auto m = state.first_moment.named_tensors();
  auto v = state.second_moment.named_tensors();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    fail(ErrorCode::kShape, "optimizer tensors do not match parameters");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& pt = *p[i].second;
    for (const auto* other : {g[i].second, static_cast<const Matrix<T>*>(m[i].second),
                              static_cast<const Matrix<T>*>(v[i].second)}) {
      if (other->rows() != pt.rows() || other->cols() != pt.cols()) {
        fail(ErrorCode::kShape, "shape mismatch in " + p[i].first);
      }
    }
    for (T x : g[i].second->values()) {
      if (!std::isfinite(x)) fail(ErrorCode::kNonFinite, "non-finite gradient in " + p[i].first);
    }
  }

  const double lr = config.learning_rate;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  const T decay = static_cast<T>(1.0 - lr * config.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto w = p[i].second->values();
    auto gv = g[i].second->values();
    auto mv = m[i].second->values();
    auto vv = v[i].second->values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = gv[j];
      const double mj = b1 * mv[j] + (1.0 - b1) * gj;
      const double vj = b2 * vv[j] + (1.0 - b2) * gj * gj;
      mv[j] = static_cast<T>(mj);
      vv[j] = static_cast<T>(vj);
      const double delta = lr * (mj / c1) / (std::sqrt(vj / c2) + config.adam_eps);
      w[j] = static_cast<T>(w[j] * decay - delta);
    }
  }
  ++state.step;
}

template <class T>
AccumulatedGradients<T> accumulate_batch(const ModelParameters<T>& params,
                                         std::span<const TokenSequence> sources,
                                         std::span<const TokenSequence> targets,
                                         int micro_batch_size, ForwardMode mode,
                                         std::uint64_t dropout_seed) {
  if (sources.size() != targets.size()) fail(ErrorCode::kShape, "sources and targets differ");
  if (micro_batch_size < 1) fail(ErrorCode::kConfig, "micro_batch_size must be >= 1");
  AccumulatedGradients<T> acc{ModelParameters<T>::zeros(params.config)};
  const auto mb = static_cast<std::size_t>(micro_batch_size);
  for (std::size_t begin = 0; begin < sources.size(); begin += mb) {
    const std::size_t n = std::min(mb, sources.size() - begin);
    auto batch = Batch::from_sequences(sources.subspan(begin, n), targets.subspan(begin, n));
    const auto seed = mix(dropout_seed, static_cast<std::uint64_t>(acc.micro_batches));
    auto part = accumulate_gradients(params, batch, mode, seed, acc.gradients);
    acc.loss_sum += part.loss;
    acc.tokens += part.tokens;
    ++acc.micro_batches;
  }
  if (acc.tokens == 0) fail(ErrorCode::kDegenerateBatch, "no target tokens in batch");
  const T scale = static_cast<T>(1.0 / static_cast<double>(acc.tokens));
  for (auto& [name, tensor] : acc.gradients.named_tensors()) {
    for (T& x : tensor->values()) x *= scale;
  }
  return acc;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& e : history) {
    h.push_back({{"step", e.step},
                 {"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"dev_per", e.dev_per},
                 {"dev_wer", e.dev_wer}});
  }
  return {{"history", h},
          {"selected", selected},
          {"epoch_seconds", epoch_seconds},
          {"micro_batches_per_step", micro_batches_per_step},
          {"effective_unk_mask_rate", effective_unk_mask_rate},
          {"examples", examples},
          {"skipped_examples", skipped_examples},
          {"optimizer_steps", optimizer_steps}};
}

TrainReport TrainReport::from_json(const nlohmann::json& j) {
  TrainReport r;
  for (const auto& e : j.at("history")) {
    r.history.push_back(EvalPoint{e.at("step").get<std::int64_t>(), e.at("epoch").get<int>(),
                                  e.at("train_loss").get<double>(), e.at("dev_per").get<double>(),
                                  e.at("dev_wer").get<double>()});
  }
  r.selected = j.at("selected").get<int>();
  r.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
  r.micro_batches_per_step = j.at("micro_batches_per_step").get<std::vector<int>>();
  r.effective_unk_mask_rate = j.at("effective_unk_mask_rate").get<double>();
  r.examples = j.at("examples").get<std::size_t>();
  r.skipped_examples = j.at("skipped_examples").get<std::size_t>();
  r.optimizer_steps = j.at("optimizer_steps").get<std::int64_t>();
  return r;
}

Trainer::Trainer(ModelParameters<float> initial, TrainConfig config, std::span<const Lexicon> train,
                 std::span<const Lexicon> dev)
    : config_(std::move(config)) {
  config_.validate();
  initial.config.validate();
  if (initial.config.vocab_size != kVocabSize) {
    fail(ErrorCode::kConfig, "model vocab_size " + std::to_string(initial.config.vocab_size) +
                                 " does not match the byte vocabulary (" +
                                 std::to_string(kVocabSize) + ")");
  }
  const auto& mc = initial.config;

  std::set<std::string> filter(config_.language_filter.begin(), config_.language_filter.end());
  std::vector<const Lexicon*> chosen;
  std::set<std::string> seen;
  for (const auto& lex : train) {
    const auto& code = lex.language().code();
    if (!filter.empty() && !filter.count(code)) continue;
    if (!seen.insert(code).second) fail(ErrorCode::kInvalidInput, "duplicate training language " + code);
    chosen.push_back(&lex);
  }
  for (const auto& code : filter) {
    if (!seen.count(code)) fail(ErrorCode::kInsufficientData, "no training data for " + code);
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const Lexicon* a, const Lexicon* b) { return a->language() < b->language(); });

  const auto wildcard = LanguageTag::wildcard();
  TrainReport& report = state_.report;
  for (const Lexicon* lex : chosen) {
    for (const auto& e : lex->entries()) {
      for (const auto& pron : e.pronunciations) {
        auto target = encode(pron);
        const bool ok = fits(target, mc.max_tgt_len) &&
                        fits(encode(e.word, lex->language()), mc.max_src_len) &&
                        fits(encode(e.word, wildcard), mc.max_src_len);
        if (!ok) {
          ++report.skipped_examples;
          continue;
        }
        examples_.push_back(TrainExample{lex->language(), e.word, std::move(target)});
      }
    }
    languages_.push_back(lex->language());
  }
  if (examples_.empty()) fail(ErrorCode::kInsufficientData, "no usable training examples");
  report.examples = examples_.size();

  for (const auto& tag : languages_) {
    auto it = std::find_if(dev.begin(), dev.end(),
                           [&](const Lexicon& d) { return d.language() == tag && !d.empty(); });
    if (it == dev.end()) fail(ErrorCode::kInsufficientData, "no dev lexicon for " + tag.code());
    dev_.push_back(*it);
  }

  // A single language has nothing to share through the wildcard.
  mask_rate_ = languages_.size() == 1 ? 0.0 : config_.unk_mask_rate;
  report.effective_unk_mask_rate = mask_rate_;

  state_.best_params = initial;
  state_.optimizer = OptimizerState<float>::zeros(mc);
  state_.params = std::move(initial);
}

void Trainer::restore(TrainerState state) {
  check_compatible(state_.params.config, state.params.config);
  state.report.examples = state_.report.examples;
  state.report.skipped_examples = state_.report.skipped_examples;
  state.report.effective_unk_mask_rate = mask_rate_;
  state_ = std::move(state);
  pending_loss_ = 0.0;
  pending_tokens_ = 0;
  last_eval_step_ = state_.report.history.empty() ? -1 : state_.report.history.back().step;
}

void Trainer::evaluate_dev(int epoch) {
  DecodeConfig greedy;
  greedy.beam_size = 1;
  greedy.max_len = state_.params.config.max_tgt_len;
  const auto report = evaluate(state_.params, dev_, greedy);
  auto& r = state_.report;
  EvalPoint point{r.optimizer_steps, epoch,
                  pending_tokens_ ? pending_loss_ / static_cast<double>(pending_tokens_) : 0.0,
                  report.per, report.wer};
  r.history.push_back(point);
  if (r.selected < 0 || point.dev_per < r.history[r.selected].dev_per) {
    r.selected = static_cast<int>(r.history.size()) - 1;
    state_.best_params = state_.params;
  }
  pending_loss_ = 0.0;
  pending_tokens_ = 0;
  last_eval_step_ = r.optimizer_steps;
}

bool Trainer::run_epoch(int epoch) {
  auto& r = state_.report;
  std::vector<std::size_t> order(examples_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_rng = stream(config_.seed, epoch, 1);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  auto mask_rng = stream(config_.seed, epoch, 2);

  const auto mode = state_.params.config.dropout > 0.0 ? ForwardMode::kTrain : ForwardMode::kEval;
  const auto step_size = static_cast<std::size_t>(config_.effective_batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += step_size) {
    if (config_.max_steps > 0 && r.optimizer_steps >= config_.max_steps) return false;
    const std::size_t n = std::min(step_size, order.size() - begin);
    std::vector<TaggedWord> tagged;
    std::vector<TokenSequence> sources, targets;
    for (std::size_t i = begin; i < begin + n; ++i) {
      const auto& ex = examples_[order[i]];
      tagged.emplace_back(ex.word, ex.language);
      targets.push_back(ex.target);
    }
    tagged = mask_language_tags(std::move(tagged), mask_rate_, mask_rng);
    for (const auto& [word, tag] : tagged) sources.push_back(encode(word, tag));

    const auto dropout_seed = mix(config_.seed, static_cast<std::uint64_t>(r.optimizer_steps));
    auto acc = accumulate_batch<float>(state_.params, sources, targets, config_.micro_batch_size,
                                       mode, dropout_seed);
    adamw_step(state_.params, acc.gradients, state_.optimizer, config_);
    if (!state_.params.all_finite()) {
      fail(ErrorCode::kNonFinite, "parameters became non-finite at step " +
                                      std::to_string(r.optimizer_steps + 1));
    }
    ++r.optimizer_steps;
    r.micro_batches_per_step.push_back(acc.micro_batches);
    pending_loss_ += acc.loss_sum;
    pending_tokens_ += acc.tokens;
    if (config_.eval_every > 0 && r.optimizer_steps % config_.eval_every == 0) evaluate_dev(epoch);
  }
  return true;
}

void Trainer::run(const EpochCallback& on_epoch) {
  using Clock = std::chrono::steady_clock;
  while (state_.epochs_done < config_.epochs) {
    const int epoch = state_.epochs_done + 1;
    const auto start = Clock::now();
    const bool complete = run_epoch(epoch);
    if (last_eval_step_ != state_.report.optimizer_steps) evaluate_dev(epoch);
    state_.report.epoch_seconds.push_back(
        std::chrono::duration<double>(Clock::now() - start).count());
    state_.epochs_done = epoch;
    if (on_epoch) on_epoch(state_);
    if (!complete) break;
    if (config_.max_steps > 0 && state_.report.optimizer_steps >= config_.max_steps) break;
  }
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  std::span<const Lexicon> train_lexicons, std::span<const Lexicon> dev_lexicons) {
  model_config.validate();
  Trainer trainer(init_params<float>(model_config, train_config.seed), train_config, train_lexicons,
                  dev_lexicons);
  trainer.run();
  return {trainer.selected_params(), trainer.report()};
}

TrainResult finetune(const ModelParameters<float>& pretrained, const ModelConfig& target,
                     const TrainConfig& train_config, const Lexicon& target_lexicon,
                     const Lexicon& dev_lexicon) {
  check_compatible(target, pretrained.config);
  ModelParameters<float> start = pretrained;
  start.config.dropout = target.dropout;
  Trainer trainer(std::move(start), train_config, {&target_lexicon, 1}, {&dev_lexicon, 1});
  trainer.run();
  TrainResult out{trainer.selected_params(), trainer.report()};
  out.params.config.dropout = pretrained.config.dropout;
  return out;
}

EvalReport zero_shot_eval(const ModelParameters<float>& params, const Lexicon& unseen,
                          const DecodeConfig& config, std::span<const LanguageTag> training_tags) {
  if (std::find(training_tags.begin(), training_tags.end(), unseen.language()) !=
      training_tags.end()) {
    fail(ErrorCode::kInvalidInput, "language " + unseen.language().code() + " was seen in training");
  }
  return evaluate_detailed(params, {&unseen, 1}, config, LanguageTag::wildcard()).report;
}

template void adamw_step<float>(ModelParameters<float>&, const ModelParameters<float>&,
                                OptimizerState<float>&, const TrainConfig&);
template void adamw_step<double>(ModelParameters<double>&, const ModelParameters<double>&,
                                 OptimizerState<double>&, const TrainConfig&);
template AccumulatedGradients<float> accumulate_batch<float>(const ModelParameters<float>&,
                                                             std::span<const TokenSequence>,
                                                             std::span<const TokenSequence>, int,
                                                             ForwardMode, std::uint64_t);
template AccumulatedGradients<double> accumulate_batch<double>(const ModelParameters<double>&,
                                                               std::span<const TokenSequence>,
                                                               std::span<const TokenSequence>, int,
                                                               ForwardMode, std::uint64_t);

}  // namespace g2p
