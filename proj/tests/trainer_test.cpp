#include <gtest/gtest.h>

#include <cmath>

#include "g2p/error.hpp"
#include "g2p/trainer.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace g2p {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.rel_pos_buckets = 8;
  c.rel_pos_max_distance = 16;
  c.max_src_len = 24;
  c.max_tgt_len = 24;
  c.dropout = 0.1;
  return c;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.learning_rate = 3e-3;
  t.effective_batch_size = 16;
  t.micro_batch_size = 8;
  t.epochs = 2;
  t.seed = 3;
  return t;
}

struct Data {
  std::vector<Lexicon> train, dev;
};

Data two_languages(std::size_t n) {
  Data d;
  for (auto lang : {testing::shifted_language("aa", 8, 0), testing::shifted_language("bb", 8, 5)}) {
    const auto s = testing::split_lexicon(lang.lexicon(n + 10, 1), n, 10, 0);
    d.train.push_back(s.train);
    d.dev.push_back(s.dev);
  }
  return d;
}

TEST(TrainConfigTest, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_EQ(TrainConfig{}.accumulation_steps(), 16);
  auto bad = TrainConfig{};
  bad.micro_batch_size = 30;
  EXPECT_THROW(bad.validate(), Error);
  bad = TrainConfig{};
  bad.unk_mask_rate = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  bad = TrainConfig{};
  bad.language_filter = {"Bad"};
  EXPECT_THROW(bad.validate(), Error);
}

// One parameter model: every tensor is a single scalar slot we can drive.
TEST(AdamWTest, MatchesScalarReference) {
  auto cfg = small_config();
  auto params = init_params<double>(cfg, 1);
  auto state = OptimizerState<double>::zeros(cfg);
  auto grads = ModelParameters<double>::zeros(cfg);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.weight_decay = 0.1;
  const double w0 = params.embedding(5, 3);
  testing::ScalarAdam ref{w0};
  const double gs[] = {0.5, -1.0, 2.0, 0.0, 1e-3, -0.2};
  for (double g : gs) {
    grads.embedding(5, 3) = g;
    adamw_step(params, grads, state, tc);
    ref.step(g, tc.learning_rate, tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay);
    EXPECT_NEAR(params.embedding(5, 3), ref.w, 1e-10);
  }
  EXPECT_EQ(state.step, 6);
}

TEST(AdamWTest, ZeroGradientOnlyDecays) {
  auto cfg = small_config();
  auto params = init_params<double>(cfg, 2);
  const auto before = params;
  auto state = OptimizerState<double>::zeros(cfg);
  TrainConfig tc;
  tc.learning_rate = 0.5;
  tc.weight_decay = 0.2;
  adamw_step(params, ModelParameters<double>::zeros(cfg), state, tc);
  const double factor = 1.0 - 0.5 * 0.2;
  EXPECT_EQ(params.embedding(0, 0), before.embedding(0, 0) * factor);
  EXPECT_EQ(params.decoder_final_norm(0, 3), before.decoder_final_norm(0, 3) * factor);
}

TEST(AdamWTest, NonFiniteGradientNamesTensor) {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 2);
  const auto before = params;
  auto state = OptimizerState<float>::zeros(cfg);
  auto grads = ModelParameters<float>::zeros(cfg);
  grads.decoder[0].cross_attention.key(1, 1) = std::nanf("");
  try {
    adamw_step(params, grads, state, TrainConfig{});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("cross_attention.key"), std::string::npos) << e.what();
  }
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.step, 0);
}

TEST(AccumulationTest, MicroBatchesMatchOneBatch) {
  auto cfg = small_config();
  cfg.dropout = 0.0;
  const auto params = init_params<double>(cfg, 4);
  const auto lex = testing::shifted_language("aa", 8, 0).lexicon(48, 2);
  std::vector<TokenSequence> src, tgt;
  for (const auto& e : lex.entries()) {
    src.push_back(encode(e.word, lex.language()));
    tgt.push_back(encode(e.pronunciations[0]));
  }
  const auto whole = accumulate_batch(params, src, tgt, 48, ForwardMode::kEval, 0);
  const auto split = accumulate_batch(params, src, tgt, 5, ForwardMode::kEval, 0);
  EXPECT_EQ(whole.micro_batches, 1);
  EXPECT_EQ(split.micro_batches, 10);
  EXPECT_EQ(whole.tokens, split.tokens);
  EXPECT_NEAR(whole.loss_sum, split.loss_sum, 1e-9);
  const auto a = whole.gradients.named_tensors();
  const auto b = split.gradients.named_tensors();
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].second->size(); ++i) {
      ASSERT_NEAR(a[t].second->values()[i], b[t].second->values()[i], 1e-12) << a[t].first;
    }
  }
  // Mean-loss gradient of the whole batch.
  const auto direct = backward(params, Batch::from_sequences(src, tgt));
  EXPECT_NEAR(direct.loss, whole.loss_sum / static_cast<double>(whole.tokens), 1e-12);
  EXPECT_NEAR(direct.gradients.embedding(100, 2), whole.gradients.embedding(100, 2), 1e-12);
}

TEST(TrainerTest, DefaultAccumulationSixteenMicroBatches) {
  auto mc = small_config();
  TrainConfig tc;
  tc.epochs = 1;
  const auto lang = testing::shifted_language("aa", 8, 0);
  const auto s = testing::split_lexicon(lang.lexicon(1034, 1), 1024, 10, 0);
  tc.max_steps = 1;
  const auto r = train(mc, tc, {&s.train, 1}, {&s.dev, 1});
  ASSERT_EQ(r.report.micro_batches_per_step.size(), 1u);
  EXPECT_EQ(r.report.micro_batches_per_step[0], 16);
}

TEST(TrainerTest, ZeroEpochsReturnsInit) {
  auto tc = quick_train();
  tc.epochs = 0;
  const auto d = two_languages(20);
  const auto r = train(small_config(), tc, d.train, d.dev);
  EXPECT_EQ(r.params, init_params<float>(small_config(), tc.seed));
  EXPECT_TRUE(r.report.history.empty());
  EXPECT_EQ(r.report.selected, -1);
}

TEST(TrainerTest, MaskRateDependsOnLanguageCount) {
  auto tc = quick_train();
  tc.epochs = 0;
  const auto d = two_languages(20);
  EXPECT_EQ(train(small_config(), tc, d.train, d.dev).report.effective_unk_mask_rate, 0.15);
  tc.language_filter = {"aa"};
  EXPECT_EQ(train(small_config(), tc, d.train, d.dev).report.effective_unk_mask_rate, 0.0);
}

TEST(TrainerTest, Errors) {
  const auto d = two_languages(20);
  auto tc = quick_train();
  std::vector<Lexicon> one_dev = {d.dev[0]};
  try {
    train(small_config(), tc, d.train, one_dev);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientData);
  }
  tc.language_filter = {"zz"};
  EXPECT_THROW(train(small_config(), tc, d.train, d.dev), Error);
  EXPECT_THROW(train(small_config(), quick_train(), {}, d.dev), Error);
}

TEST(TrainerTest, Reproducible) {
  const auto d = two_languages(40);
  const auto a = train(small_config(), quick_train(), d.train, d.dev);
  const auto b = train(small_config(), quick_train(), d.train, d.dev);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.report.history, b.report.history);
  auto other = quick_train();
  other.seed = 4;
  EXPECT_NE(train(small_config(), other, d.train, d.dev).params, a.params);
}

TEST(TrainerTest, ResumeMatchesUninterrupted) {
  const auto d = two_languages(40);
  auto tc = quick_train();
  tc.epochs = 3;
  tc.eval_every = 2;
  const auto init = init_params<float>(small_config(), tc.seed);

  Trainer full(init, tc, d.train, d.dev);
  std::optional<TrainerState> snapshot;
  full.run([&](const TrainerState& s) {
    if (s.epochs_done == 1) snapshot = s;
  });
  ASSERT_TRUE(snapshot.has_value());

  Trainer resumed(init, tc, d.train, d.dev);
  resumed.restore(*snapshot);
  resumed.run();
  EXPECT_EQ(resumed.state().params, full.state().params);
  EXPECT_EQ(resumed.state().optimizer, full.state().optimizer);
  EXPECT_EQ(resumed.report().history, full.report().history);
  EXPECT_EQ(resumed.report().selected, full.report().selected);
  EXPECT_EQ(resumed.selected_params(), full.selected_params());
}

TEST(TrainerTest, SelectsLowestDevPer) {
  const auto d = two_languages(40);
  auto tc = quick_train();
  tc.epochs = 4;
  Trainer t(init_params<float>(small_config(), tc.seed), tc, d.train, d.dev);
  t.run();
  const auto& h = t.report().history;
  ASSERT_EQ(h.size(), 4u);
  const int sel = t.report().selected;
  for (int i = 0; i < static_cast<int>(h.size()); ++i) {
    if (i < sel) EXPECT_GT(h[i].dev_per, h[sel].dev_per);
    else EXPECT_GE(h[i].dev_per, h[sel].dev_per);
  }
  EXPECT_EQ(t.report().optimizer_steps, 4 * 5);
}

TEST(TrainerTest, SkipsOverLengthExamples) {
  auto mc = small_config();
  mc.max_tgt_len = 8;
  auto d = two_languages(20);
  d.train[0].add("abc", std::string(20, 'a'));
  auto tc = quick_train();
  tc.epochs = 0;
  const auto r = train(mc, tc, d.train, d.dev);
  EXPECT_GE(r.report.skipped_examples, 1u);
}

TEST(FinetuneTest, IncompatibleConfig) {
  const auto d = two_languages(20);
  const auto p = init_params<float>(small_config(), 1);
  auto other = small_config();
  other.d_model = 32;
  try {
    finetune(p, other, quick_train(), d.train[0], d.dev[0]);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatible);
  }
}

TEST(ZeroShotTest, RejectsTrainedTag) {
  const auto d = two_languages(20);
  const auto p = init_params<float>(small_config(), 1);
  const std::vector<LanguageTag> trained = {LanguageTag("aa")};
  try {
    zero_shot_eval(p, d.dev[0], DecodeConfig{1, 8, 0}, trained);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
  EXPECT_NO_THROW(zero_shot_eval(p, d.dev[1], DecodeConfig{1, 8, 0}, trained));
}

TEST(ReportJsonTest, RoundTrip) {
  TrainReport r;
  r.history = {{10, 1, 2.5, 30.0, 80.0}, {20, 2, 1.0, 10.0, 40.0}};
  r.selected = 1;
  r.epoch_seconds = {1.5, 1.25};
  r.micro_batches_per_step = {2, 2};
  r.effective_unk_mask_rate = 0.15;
  r.examples = 40;
  r.optimizer_steps = 20;
  const auto back = TrainReport::from_json(r.to_json());
  EXPECT_EQ(back.history, r.history);
  EXPECT_EQ(back.to_json(), r.to_json());
}

}  // namespace
}  // namespace g2p
