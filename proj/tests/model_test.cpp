#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "g2p/error.hpp"
#include "g2p/model.hpp"

namespace g2p {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 2;
  c.rel_pos_buckets = 8;
  c.rel_pos_max_distance = 16;
  c.max_src_len = 24;
  c.max_tgt_len = 24;
  c.dropout = 0.2;
  return c;
}

// Random init leaves norms at 1 and bias tables at 0; jitter everything so
// every gradient path is exercised.
template <class T>
ModelParameters<T> jittered(const ModelConfig& c, std::uint64_t seed) {
  auto p = init_params<T>(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0, 0.03);
  for (auto& [name, m] : p.named_tensors()) {
    for (auto& v : m->values()) v += static_cast<T>(n(rng));
  }
  return p;
}

Batch sample_batch() {
  const std::vector<TokenSequence> src = {encode("abcd", LanguageTag("en")), encode("xy"),
                                          encode("ñu", LanguageTag("unk"))};
  const std::vector<TokenSequence> tgt = {encode("kat"), encode("zyxwv"), encode("n")};
  return Batch::from_sequences(src, tgt);
}

TEST(ConfigTest, Validation) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  auto bad = tiny_config();
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
  bad = tiny_config();
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = tiny_config();
  bad.vocab_size = 10;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(ConfigTest, Compatibility) {
  auto a = tiny_config(), b = tiny_config();
  b.dropout = 0.0;
  EXPECT_NO_THROW(check_compatible(a, b));
  b.d_ff = 32;
  try {
    check_compatible(a, b);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatible);
    EXPECT_NE(std::string(e.what()).find("d_ff"), std::string::npos);
  }
}

TEST(InitTest, DeterministicAndScaled) {
  const auto c = ModelConfig{};
  const auto a = init_params<float>(c, 5);
  EXPECT_EQ(a, init_params<float>(c, 5));
  EXPECT_NE(a, init_params<float>(c, 6));
  double s = 0, ss = 0;
  for (float v : a.encoder[0].feed_forward.input.values()) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(a.encoder[0].feed_forward.input.size());
  EXPECT_NEAR(ss / n, 1.0 / c.d_model, 0.1 / c.d_model);
  EXPECT_NEAR(s / n, 0.0, 0.01);
  for (float v : a.decoder_final_norm.values()) EXPECT_EQ(v, 1.0f);
}

TEST(BucketTest, Shape) {
  // Small offsets get their own buckets; the causal variant folds the future.
  EXPECT_EQ(relative_position_bucket(0, true, 32, 128), 0);
  EXPECT_EQ(relative_position_bucket(3, true, 32, 128), 19);
  EXPECT_EQ(relative_position_bucket(-3, true, 32, 128), 3);
  EXPECT_EQ(relative_position_bucket(5, false, 32, 128), 0);
  EXPECT_EQ(relative_position_bucket(-5, false, 32, 128), 5);
  EXPECT_EQ(relative_position_bucket(-1000, false, 32, 128), 31);
  int prev = 0;
  for (int d = 0; d < 300; ++d) {
    const int b = relative_position_bucket(-d, false, 32, 128);
    EXPECT_GE(b, prev);
    EXPECT_LT(b, 32);
    prev = b;
  }
}

TEST(BatchTest, Layout) {
  const auto b = sample_batch();
  EXPECT_EQ(b.batch_size, 3);
  EXPECT_EQ(b.tgt_in[0], kBos);
  EXPECT_EQ(b.tgt_in[1], b.tgt_out[0]);
  EXPECT_EQ(b.tgt_length(1), 6);
  EXPECT_EQ(b.target_tokens(), 4u + 6u + 2u);
  for (std::size_t i = 0; i < b.src.size(); ++i) EXPECT_EQ(b.src_mask[i] != 0, b.src[i] != kPad);
}

TEST(ForwardTest, Errors) {
  const auto p = init_params<float>(tiny_config(), 1);
  std::vector<TokenSequence> src = {TokenSequence{{kEos}}};
  std::vector<TokenSequence> tgt = {encode("a")};
  auto b = Batch::from_sequences(src, tgt);
  b.src[0] = 999;
  EXPECT_THROW(forward(p, b, ForwardMode::kEval), Error);
  std::string long_word(40, 'a');
  src = {encode(long_word)};
  EXPECT_THROW(forward(p, Batch::from_sequences(src, tgt), ForwardMode::kEval), Error);
  src = {encode("a")};
  tgt = {TokenSequence{{kPad}}};
  try {
    backward(p, Batch::from_sequences(src, tgt));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateBatch);
  }
}

class GradientCheck : public ::testing::TestWithParam<ForwardMode> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const auto mode = GetParam();
  auto p = jittered<double>(tiny_config(), 7);
  const auto b = sample_batch();
  const auto g = backward(p, b, mode, 99);
  auto loss = [&] { return cross_entropy_loss(forward(p, b, mode, 99), b).loss; };
  EXPECT_NEAR(g.loss, loss(), 1e-12);

  auto tensors = p.named_tensors();
  const auto grads = g.gradients.named_tensors();
  int checked = 0;
  double worst = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto values = tensors[t].second->values();
    const auto gv = grads[t].second->values();
    const std::size_t stride = std::max<std::size_t>(1, values.size() / 6);
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double orig = values[i];
      const double h = 1e-5;
      values[i] = orig + h;
      const double up = loss();
      values[i] = orig - h;
      const double down = loss();
      values[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double err = std::abs(fd - gv[i]) / std::max(1e-6, std::abs(fd) + std::abs(gv[i]));
      EXPECT_LT(err, 1e-4) << tensors[t].first << "[" << i << "] fd " << fd << " analytic " << gv[i];
      worst = std::max(worst, err);
      ++checked;
    }
  }
  EXPECT_GE(checked, 200);
  RecordProperty("worst_relative_error", std::to_string(worst));
}

INSTANTIATE_TEST_SUITE_P(Modes, GradientCheck,
                         ::testing::Values(ForwardMode::kEval, ForwardMode::kTrain),
                         [](const auto& info) {
                           return std::string(info.param == ForwardMode::kEval ? "Eval" : "Train");
                         });

TEST(ForwardProperty, PadInvariance) {
  const auto p = jittered<float>(tiny_config(), 3);
  const std::vector<TokenSequence> alone_src = {encode("ab", LanguageTag("de"))};
  const std::vector<TokenSequence> tgt = {encode("xyz")};
  const auto alone = forward(p, Batch::from_sequences(alone_src, tgt), ForwardMode::kEval);
  for (int pads : {1, 4, 9}) {
    auto padded = alone_src;
    padded[0].ids.insert(padded[0].ids.end(), pads, kPad);
    const auto out = forward(p, Batch::from_sequences(padded, tgt), ForwardMode::kEval);
    for (int t = 0; t < 4; ++t) {
      for (int v = 0; v < kVocabSize; ++v) ASSERT_EQ(out.at(0, t)[v], alone.at(0, t)[v]);
    }
  }
  // Batched with a longer neighbour: same numbers for the short row.
  const std::vector<TokenSequence> pair_src = {alone_src[0], encode("a much longer source")};
  const std::vector<TokenSequence> pair_tgt = {tgt[0], encode("qqqqqqqq")};
  const auto pair = forward(p, Batch::from_sequences(pair_src, pair_tgt), ForwardMode::kEval);
  for (int t = 0; t < 4; ++t) {
    for (int v = 0; v < kVocabSize; ++v) ASSERT_EQ(pair.at(0, t)[v], alone.at(0, t)[v]);
  }
}

TEST(ForwardProperty, Causality) {
  const auto p = jittered<float>(tiny_config(), 4);
  const std::vector<TokenSequence> src = {encode("word")};
  const std::vector<TokenSequence> a = {encode("abcdef")};
  const std::vector<TokenSequence> b = {encode("abcXYZ")};
  const auto la = forward(p, Batch::from_sequences(src, a), ForwardMode::kEval);
  const auto lb = forward(p, Batch::from_sequences(src, b), ForwardMode::kEval);
  // Positions 0..3 see BOS,a,b,c only.
  for (int t = 0; t < 4; ++t) {
    for (int v = 0; v < kVocabSize; ++v) ASSERT_EQ(la.at(0, t)[v], lb.at(0, t)[v]);
  }
  bool differs = false;
  for (int v = 0; v < kVocabSize; ++v) differs |= la.at(0, 4)[v] != lb.at(0, 4)[v];
  EXPECT_TRUE(differs);
}

TEST(ForwardProperty, AttentionRowsAreDistributions) {
  const auto p = jittered<double>(tiny_config(), 5);
  const auto b = sample_batch();
  const auto maps = attention_maps(p, b);
  ASSERT_EQ(maps.size(), static_cast<std::size_t>(3 * 2 * (2 + 2 * 2)));
  for (const auto& m : maps) {
    const bool causal = m.site.find("self_attention") != std::string::npos &&
                        m.site.rfind("decoder", 0) == 0;
    for (int q = 0; q < m.weights.rows(); ++q) {
      double sum = 0;
      for (int k = 0; k < m.weights.cols(); ++k) {
        const double w = m.weights(q, k);
        EXPECT_GE(w, 0.0);
        if (causal && k > q) {
          EXPECT_EQ(w, 0.0) << m.site;
        }
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12) << m.site;
    }
  }
}

TEST(ForwardProperty, DeterministicEvalAndSeededDropout) {
  const auto p = jittered<float>(tiny_config(), 6);
  const auto b = sample_batch();
  EXPECT_EQ(forward(p, b, ForwardMode::kEval, 1).values, forward(p, b, ForwardMode::kEval, 2).values);
  EXPECT_EQ(forward(p, b, ForwardMode::kTrain, 1).values, forward(p, b, ForwardMode::kTrain, 1).values);
  EXPECT_NE(forward(p, b, ForwardMode::kTrain, 1).values, forward(p, b, ForwardMode::kTrain, 2).values);
}

TEST(IncrementalTest, MatchesTeacherForcing) {
  const auto p = jittered<float>(tiny_config(), 8);
  const std::vector<TokenSequence> src = {encode("abc", LanguageTag("en")), encode("hello")};
  const std::vector<TokenSequence> tgt = {encode("xyz1"), encode("q")};
  const auto full = forward(p, Batch::from_sequences(src, tgt), ForwardMode::kEval);
  auto enc = encode_sources(p, src);
  std::vector<DecoderCache<float>> caches(2);
  for (auto& c : caches) {
    c.keys.resize(p.config.n_decoder_layers);
    c.values.resize(p.config.n_decoder_layers);
  }
  const auto b = Batch::from_sequences(src, tgt);
  for (int t = 0; t < b.tgt_length(0); ++t) {
    std::vector<const EncodedSource<float>*> s;
    std::vector<DecoderCache<float>*> c;
    std::vector<TokenId> tok;
    for (int i = 0; i < 2; ++i) {
      if (t >= b.tgt_length(i)) continue;
      s.push_back(&enc[i]);
      c.push_back(&caches[i]);
      tok.push_back(b.tgt_in[i * b.tgt_len + t]);
    }
    const auto lp = decoder_step<float>(p, s, c, tok);
    for (int r = 0; r < static_cast<int>(tok.size()); ++r) {
      std::vector<float> ref(kVocabSize);
      log_softmax(full.at(r, t), kVocabSize, ref.data());
      for (int v = 0; v < kVocabSize; ++v) EXPECT_NEAR(lp(r, v), ref[v], 1e-5);
    }
  }
}

TEST(LogSoftmaxTest, Stable) {
  const std::vector<double> x = {1000.0, 1000.0, -1000.0};
  std::vector<double> out(3);
  log_softmax(x.data(), 3, out.data());
  EXPECT_NEAR(out[0], std::log(0.5), 1e-12);
  EXPECT_TRUE(std::isfinite(out[2]));
}

}  // namespace
}  // namespace g2p
