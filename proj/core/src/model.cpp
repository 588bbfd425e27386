#include "g2p/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "g2p/error.hpp"

namespace g2p {

// --- Configuration ----------------------------------------------------------

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfig, what);
  };
  require(vocab_size == kVocabSize, "vocab_size must be " + std::to_string(kVocabSize));
  require(d_model > 0, "d_model must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(d_model % std::max(n_heads, 1) == 0, "n_heads must divide d_model");
  require(d_ff > 0, "d_ff must be positive");
  require(n_encoder_layers > 0 && n_decoder_layers > 0, "layer counts must be positive");
  require(max_src_len > 0 && max_tgt_len > 0, "maximum lengths must be positive");
  require(rel_pos_buckets >= 2, "rel_pos_buckets must be at least 2");
  require(rel_pos_max_distance > 0, "rel_pos_max_distance must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

void check_compatible(const ModelConfig& expected, const ModelConfig& actual) {
  auto check = [](const char* field, int a, int b) {
    if (a != b) {
      fail(ErrorCode::kIncompatible, std::string(field) + " differs: expected " + std::to_string(a) +
                                         ", checkpoint has " + std::to_string(b));
    }
  };
  check("vocab_size", expected.vocab_size, actual.vocab_size);
  check("d_model", expected.d_model, actual.d_model);
  check("n_heads", expected.n_heads, actual.n_heads);
  check("d_ff", expected.d_ff, actual.d_ff);
  check("n_encoder_layers", expected.n_encoder_layers, actual.n_encoder_layers);
  check("n_decoder_layers", expected.n_decoder_layers, actual.n_decoder_layers);
  check("max_src_len", expected.max_src_len, actual.max_src_len);
  check("max_tgt_len", expected.max_tgt_len, actual.max_tgt_len);
  check("rel_pos_buckets", expected.rel_pos_buckets, actual.rel_pos_buckets);
  check("rel_pos_max_distance", expected.rel_pos_max_distance, actual.rel_pos_max_distance);
}

// --- Parameters -------------------------------------------------------------

namespace {

template <class T>
AttentionParams<T> zero_attention(int d) {
  return {Matrix<T>(d, d), Matrix<T>(d, d), Matrix<T>(d, d), Matrix<T>(d, d)};
}

template <class T>
FeedForwardParams<T> zero_feed_forward(int d, int ff) {
  return {Matrix<T>(d, ff), Matrix<T>(ff, d)};
}

// Visits every tensor of `p` (const or not) in canonical order.
template <class P, class F>
void for_each_tensor(P& p, F&& f) {
  f(std::string("shared.embedding"), p.embedding);
  f(std::string("encoder.relative_bias"), p.encoder_relative_bias);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    auto& layer = p.encoder[i];
    const std::string base = "encoder.layer." + std::to_string(i) + ".";
    f(base + "self_attention_norm", layer.self_attention_norm);
    f(base + "self_attention.query", layer.self_attention.query);
    f(base + "self_attention.key", layer.self_attention.key);
    f(base + "self_attention.value", layer.self_attention.value);
    f(base + "self_attention.output", layer.self_attention.output);
    f(base + "feed_forward_norm", layer.feed_forward_norm);
    f(base + "feed_forward.input", layer.feed_forward.input);
    f(base + "feed_forward.output", layer.feed_forward.output);
  }
  f(std::string("encoder.final_norm"), p.encoder_final_norm);
  f(std::string("decoder.relative_bias"), p.decoder_relative_bias);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    auto& layer = p.decoder[i];
    const std::string base = "decoder.layer." + std::to_string(i) + ".";
    f(base + "self_attention_norm", layer.self_attention_norm);
    f(base + "self_attention.query", layer.self_attention.query);
    f(base + "self_attention.key", layer.self_attention.key);
    f(base + "self_attention.value", layer.self_attention.value);
    f(base + "self_attention.output", layer.self_attention.output);
    f(base + "cross_attention_norm", layer.cross_attention_norm);
    f(base + "cross_attention.query", layer.cross_attention.query);
    f(base + "cross_attention.key", layer.cross_attention.key);
    f(base + "cross_attention.value", layer.cross_attention.value);
    f(base + "cross_attention.output", layer.cross_attention.output);
    f(base + "feed_forward_norm", layer.feed_forward_norm);
    f(base + "feed_forward.input", layer.feed_forward.input);
    f(base + "feed_forward.output", layer.feed_forward.output);
  }
  f(std::string("decoder.final_norm"), p.decoder_final_norm);
}

bool is_norm_name(const std::string& name) { return name.ends_with("_norm"); }
bool is_bias_table_name(const std::string& name) { return name.ends_with("relative_bias"); }

}  // namespace

template <class T>
ModelParameters<T> ModelParameters<T>::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  ModelParameters<T> p;
  p.config = config;
  p.embedding = Matrix<T>(config.vocab_size, d);
  p.encoder_relative_bias = Matrix<T>(config.rel_pos_buckets, config.n_heads);
  for (int i = 0; i < config.n_encoder_layers; ++i) {
    p.encoder.push_back({Matrix<T>(1, d), zero_attention<T>(d), Matrix<T>(1, d),
                         zero_feed_forward<T>(d, config.d_ff)});
  }
  p.encoder_final_norm = Matrix<T>(1, d);
  p.decoder_relative_bias = Matrix<T>(config.rel_pos_buckets, config.n_heads);
  for (int i = 0; i < config.n_decoder_layers; ++i) {
    p.decoder.push_back({Matrix<T>(1, d), zero_attention<T>(d), Matrix<T>(1, d),
                         zero_attention<T>(d), Matrix<T>(1, d),
                         zero_feed_forward<T>(d, config.d_ff)});
  }
  p.decoder_final_norm = Matrix<T>(1, d);
  return p;
}

template <class T>
std::vector<std::pair<std::string, Matrix<T>*>> ModelParameters<T>::named_tensors() {
  std::vector<std::pair<std::string, Matrix<T>*>> out;
  for_each_tensor(*this, [&](std::string name, Matrix<T>& m) { out.emplace_back(std::move(name), &m); });
  return out;
}

template <class T>
std::vector<std::pair<std::string, const Matrix<T>*>> ModelParameters<T>::named_tensors() const {
  std::vector<std::pair<std::string, const Matrix<T>*>> out;
  for_each_tensor(*this,
                  [&](std::string name, const Matrix<T>& m) { out.emplace_back(std::move(name), &m); });
  return out;
}

template <class T>
std::size_t ModelParameters<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const std::string&, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <class T>
bool ModelParameters<T>::all_finite() const {
  bool finite = true;
  for_each_tensor(*this, [&](const std::string&, const Matrix<T>& m) {
    for (T v : m.values()) finite = finite && std::isfinite(v);
  });
  return finite;
}

template <class T>
ModelParameters<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParameters<T> p = ModelParameters<T>::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for_each_tensor(p, [&](const std::string& name, Matrix<T>& m) {
    if (is_norm_name(name)) {
      std::fill(m.values().begin(), m.values().end(), T{1});
      return;
    }
    if (is_bias_table_name(name)) return;
    // Unit-scale embedding, as the tied output projection already multiplies
    // by d_model^-0.5.
    const double scale =
        name == "shared.embedding" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (T& v : m.values()) v = static_cast<T>(normal(rng) * scale);
  });
  return p;
}

// --- Batch ------------------------------------------------------------------

Batch Batch::from_sequences(std::span<const TokenSequence> sources,
                            std::span<const TokenSequence> targets) {
  if (sources.size() != targets.size()) {
    fail(ErrorCode::kShape, "source and target counts differ");
  }
  if (sources.empty()) fail(ErrorCode::kShape, "empty batch");
  Batch batch;
  batch.batch_size = static_cast<int>(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    validate_token_sequence(sources[i]);
    validate_token_sequence(targets[i]);
    batch.src_len = std::max(batch.src_len, static_cast<int>(sources[i].size()));
    batch.tgt_len = std::max(batch.tgt_len, static_cast<int>(targets[i].size()));
  }
  const auto b_count = static_cast<std::size_t>(batch.batch_size);
  batch.src.assign(b_count * batch.src_len, kPad);
  batch.src_mask.assign(b_count * batch.src_len, 0);
  batch.tgt_in.assign(b_count * batch.tgt_len, kPad);
  batch.tgt_out.assign(b_count * batch.tgt_len, kPad);
  batch.tgt_mask.assign(b_count * batch.tgt_len, 0);
  for (std::size_t b = 0; b < b_count; ++b) {
    const auto& src = sources[b].ids;
    for (std::size_t s = 0; s < src.size(); ++s) {
      batch.src[b * batch.src_len + s] = src[s];
      batch.src_mask[b * batch.src_len + s] = src[s] != kPad;
    }
    const auto& tgt = targets[b].ids;
    const std::size_t len = targets[b].unpadded_length();
    for (std::size_t t = 0; t < len; ++t) {
      batch.tgt_out[b * batch.tgt_len + t] = tgt[t];
      batch.tgt_in[b * batch.tgt_len + t] = t == 0 ? kBos : tgt[t - 1];
      batch.tgt_mask[b * batch.tgt_len + t] = 1;
    }
  }
  return batch;
}

int Batch::src_length(int b) const {
  int n = 0;
  for (int s = 0; s < src_len; ++s) n += src_mask[static_cast<std::size_t>(b) * src_len + s];
  return n;
}

int Batch::tgt_length(int b) const {
  int n = 0;
  for (int t = 0; t < tgt_len; ++t) n += tgt_mask[static_cast<std::size_t>(b) * tgt_len + t];
  return n;
}

std::size_t Batch::target_tokens() const {
  return static_cast<std::size_t>(std::count(tgt_mask.begin(), tgt_mask.end(), std::uint8_t{1}));
}

// --- Relative positions -----------------------------------------------------

int relative_position_bucket(int relative_position, bool bidirectional, int num_buckets,
                             int max_distance) {
  int bucket = 0;
  int n = -relative_position;
  if (bidirectional) {
    num_buckets /= 2;
    if (n < 0) bucket += num_buckets;
    n = std::abs(n);
  } else {
    n = std::max(n, 0);
  }
  const int max_exact = num_buckets / 2;
  if (n < max_exact) return bucket + n;
  const double ratio = std::log(static_cast<double>(n) / max_exact) /
                       std::log(static_cast<double>(max_distance) / max_exact);
  const int large = max_exact + static_cast<int>(ratio * (num_buckets - max_exact));
  return bucket + std::min(large, num_buckets - 1);
}

int encoder_position_bucket(int relative_position, const ModelConfig& config) {
  return relative_position_bucket(relative_position, true, config.rel_pos_buckets,
                                  config.rel_pos_max_distance);
}

int decoder_position_bucket(int relative_position, const ModelConfig& config) {
  return relative_position_bucket(relative_position, false, config.rel_pos_buckets,
                                  config.rel_pos_max_distance);
}

// --- Numeric building blocks -------------------------------------------------

template <class T>
void log_softmax(const T* logits, int n, T* out) {
  T mx = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
  T sum = T{0};
  for (int i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  const T log_z = mx + std::log(sum);
  for (int i = 0; i < n; ++i) out[i] = logits[i] - log_z;
}

namespace {

constexpr double kNormEpsilon = 1e-6;

template <class T>
T dot(const T* a, const T* b, int n) {
  T acc = T{0};
  for (int i = 0; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

// y = x * gain / rms(x), row-wise.
template <class T>
void rms_norm(const Matrix<T>& x, const Matrix<T>& gain, Matrix<T>& y, std::vector<T>* inv_rms) {
  const int d = x.cols();
  y.reset(x.rows(), d);
  if (inv_rms) inv_rms->resize(static_cast<std::size_t>(x.rows()));
  const T* g = gain.data();
  for (int r = 0; r < x.rows(); ++r) {
    const T* xr = x.row(r);
    const T ms = dot(xr, xr, d) / static_cast<T>(d);
    const T inv = T{1} / std::sqrt(ms + static_cast<T>(kNormEpsilon));
    if (inv_rms) (*inv_rms)[static_cast<std::size_t>(r)] = inv;
    T* yr = y.row(r);
    for (int c = 0; c < d; ++c) yr[c] = xr[c] * inv * g[c];
  }
}

template <class T>
void rms_norm(const Matrix<T>& x, const Matrix<T>& gain, Matrix<T>& y) {
  rms_norm(x, gain, y, static_cast<std::vector<T>*>(nullptr));
}

// dx += dL/dx, dgain += dL/dgain.
template <class T>
void rms_norm_backward(const Matrix<T>& x, const Matrix<T>& gain, const std::vector<T>& inv_rms,
                       const Matrix<T>& dy, Matrix<T>& dx, Matrix<T>& dgain) {
  const int d = x.cols();
  const T* g = gain.data();
  T* dg = dgain.data();
  std::vector<T> a(static_cast<std::size_t>(d));
  for (int r = 0; r < x.rows(); ++r) {
    const T* xr = x.row(r);
    const T* dyr = dy.row(r);
    const T inv = inv_rms[static_cast<std::size_t>(r)];
    for (int c = 0; c < d; ++c) {
      dg[c] += dyr[c] * xr[c] * inv;
      a[static_cast<std::size_t>(c)] = dyr[c] * g[c];
    }
    const T proj = dot(a.data(), xr, d) / static_cast<T>(d);
    T* dxr = dx.row(r);
    for (int c = 0; c < d; ++c) dxr[c] += inv * (a[static_cast<std::size_t>(c)] - xr[c] * inv * inv * proj);
  }
}

// dx += dy * w^T; dw += x^T * dy.
template <class T>
void linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>& dx,
                     Matrix<T>& dw) {
  matmul_tn_accumulate(x, dy, dw);
  const Matrix<T> wt = transpose(w);
  gemm(dy.data(), wt.data(), dx.data(), dy.rows(), wt.cols(), dy.cols(), true);
}

// Attention of one query row over `n_keys` keys of one head. `bias` may be
// null. Writes normalized weights to `probs` and the context to `ctx`.
template <class T>
void attend_row(const T* q, const T* keys, const T* values, int stride, int n_keys, int head_dim,
                T scale, const T* bias, T* probs, T* ctx) {
  T mx = -std::numeric_limits<T>::infinity();
  for (int j = 0; j < n_keys; ++j) {
    T s = dot(q, keys + static_cast<std::size_t>(j) * stride, head_dim) * scale;
    if (bias) s += bias[j];
    probs[j] = s;
    mx = std::max(mx, s);
  }
  T sum = T{0};
  for (int j = 0; j < n_keys; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    sum += probs[j];
  }
  const T inv = T{1} / sum;
  for (int j = 0; j < n_keys; ++j) probs[j] *= inv;
  std::fill(ctx, ctx + head_dim, T{0});
  for (int j = 0; j < n_keys; ++j) {
    const T p = probs[j];
    const T* v = values + static_cast<std::size_t>(j) * stride;
    for (int c = 0; c < head_dim; ++c) ctx[c] = std::fma(p, v[c], ctx[c]);
  }
}

// Packed layout: sequence s occupies rows [offsets[s], offsets[s+1]).
using Offsets = std::vector<int>;

struct AttentionShape {
  const Offsets* queries = nullptr;
  const Offsets* keys = nullptr;
  bool causal = false;
  bool bidirectional = false;  // bucketing flavour when a bias table is used
};

template <class T>
struct AttentionCache {
  Matrix<T> input;     // normalized query-side input
  Matrix<T> q, k, v;
  Matrix<T> context;
  std::vector<T> probs;  // per (seq, head): [Lq x Lk] dense, masked entries 0
  std::vector<std::size_t> prob_offsets;
};

template <class T>
struct NormCache {
  Matrix<T> input;
  Matrix<T> output;
  std::vector<T> inv_rms;
};

template <class T>
struct FeedForwardCache {
  Matrix<T> pre_activation;
  Matrix<T> hidden;
};

template <class T>
struct Dropout {
  Matrix<T> mask;  // empty when inactive

  bool active() const { return !mask.empty(); }
};

class DropoutSampler {
 public:
  DropoutSampler(double rate, bool enabled, std::uint64_t seed)
      : rate_(rate), enabled_(enabled && rate > 0.0), rng_(seed) {}

  template <class T>
  void apply(Matrix<T>& x, Dropout<T>& d) {
    if (!enabled_) {
      d.mask = Matrix<T>();
      return;
    }
    d.mask.reset(x.rows(), x.cols());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    auto m = d.mask.values();
    auto v = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      m[i] = u < rate_ ? T{0} : keep_scale;
      v[i] *= m[i];
    }
  }

 private:
  double rate_;
  bool enabled_;
  std::mt19937_64 rng_;
};

template <class T>
void apply_mask_backward(const Dropout<T>& d, Matrix<T>& grad) {
  if (!d.active()) return;
  auto g = grad.values();
  auto m = d.mask.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= m[i];
}

template <class T>
void add_in_place(Matrix<T>& acc, const Matrix<T>& x) {
  auto a = acc.values();
  auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <class T>
struct EncoderLayerCache {
  NormCache<T> attn_norm;
  AttentionCache<T> attn;
  Dropout<T> attn_drop;
  NormCache<T> ff_norm;
  FeedForwardCache<T> ff;
  Dropout<T> ff_drop;
};

template <class T>
struct DecoderLayerCache {
  NormCache<T> self_norm;
  AttentionCache<T> self_attn;
  Dropout<T> self_drop;
  NormCache<T> cross_norm;
  AttentionCache<T> cross_attn;
  Dropout<T> cross_drop;
  NormCache<T> ff_norm;
  FeedForwardCache<T> ff;
  Dropout<T> ff_drop;
};

// Full teacher-forced pass over a packed batch, keeping what backward needs.
template <class T>
class ForwardPass {
 public:
  ForwardPass(const ModelParameters<T>& params, const Batch& batch, ForwardMode mode,
              std::uint64_t seed)
      : p_(params),
        cfg_(params.config),
        batch_(batch),
        dropout_(params.config.dropout, mode == ForwardMode::kTrain, seed) {
    validate_batch();
    build_layout();
    run_encoder();
    run_decoder();
  }

  // Logits at the packed target rows.
  const Matrix<T>& packed_logits() const { return logits_; }
  const std::vector<TokenId>& packed_targets() const { return tgt_out_; }
  const Offsets& src_offsets() const { return src_off_; }
  const Offsets& tgt_offsets() const { return tgt_off_; }
  const std::vector<EncoderLayerCache<T>>& encoder_caches() const { return enc_; }
  const std::vector<DecoderLayerCache<T>>& decoder_caches() const { return dec_; }
  const Matrix<T>& memory() const { return memory_; }

  Logits<T> scatter_logits() const {
    Logits<T> out;
    out.batch_size = batch_.batch_size;
    out.tgt_len = batch_.tgt_len;
    out.values.reset(batch_.batch_size * batch_.tgt_len, cfg_.vocab_size);
    for (int b = 0; b < batch_.batch_size; ++b) {
      for (int r = tgt_off_[b]; r < tgt_off_[b + 1]; ++r) {
        const int t = r - tgt_off_[b];
        std::copy(logits_.row(r), logits_.row(r) + cfg_.vocab_size,
                  out.values.row(b * batch_.tgt_len + t));
      }
    }
    return out;
  }

  // Gradient of the summed NLL of packed targets; returns the summed loss.
  double backward(ModelParameters<T>& g) const {
    const int d = cfg_.d_model;
    const int v = cfg_.vocab_size;
    const int nt = static_cast<int>(tgt_out_.size());

    // Output projection and loss.
    Matrix<T> dlogits(nt, v);
    std::vector<T> logp(static_cast<std::size_t>(v));
    double loss = 0.0;
    for (int r = 0; r < nt; ++r) {
      log_softmax(logits_.row(r), v, logp.data());
      const TokenId target = tgt_out_[static_cast<std::size_t>(r)];
      loss -= static_cast<double>(logp[static_cast<std::size_t>(target)]);
      T* dr = dlogits.row(r);
      for (int c = 0; c < v; ++c) dr[c] = std::exp(logp[static_cast<std::size_t>(c)]);
      dr[target] -= T{1};
    }
    matmul_tn_accumulate(dlogits, scaled_out_, g.embedding);
    Matrix<T> dout;
    matmul(dlogits, p_.embedding, dout);
    const T out_scale = output_scale();
    for (T& x : dout.values()) x *= out_scale;
    apply_mask_backward(dec_final_drop_, dout);

    Matrix<T> dy(nt, d);
    rms_norm_backward(dec_final_.input, p_.decoder_final_norm, dec_final_.inv_rms, dout, dy,
                      g.decoder_final_norm);

    Matrix<T> dmemory(static_cast<int>(src_tokens_.size()), d);
    for (int l = cfg_.n_decoder_layers - 1; l >= 0; --l) {
      const auto& c = dec_[static_cast<std::size_t>(l)];
      const auto& w = p_.decoder[static_cast<std::size_t>(l)];
      auto& gw = g.decoder[static_cast<std::size_t>(l)];

      Matrix<T> branch = dy;
      apply_mask_backward(c.ff_drop, branch);
      Matrix<T> dnorm(nt, d);
      feed_forward_backward(c.ff_norm.output, c.ff, w.feed_forward, branch, dnorm, gw.feed_forward);
      rms_norm_backward(c.ff_norm.input, w.feed_forward_norm, c.ff_norm.inv_rms, dnorm, dy,
                        gw.feed_forward_norm);

      branch = dy;
      apply_mask_backward(c.cross_drop, branch);
      dnorm.reset(nt, d);
      attention_backward(c.cross_attn, memory_, w.cross_attention, branch,
                         {&tgt_off_, &src_off_, false, false}, false, dnorm, &dmemory,
                         gw.cross_attention, nullptr);
      rms_norm_backward(c.cross_norm.input, w.cross_attention_norm, c.cross_norm.inv_rms, dnorm, dy,
                        gw.cross_attention_norm);

      branch = dy;
      apply_mask_backward(c.self_drop, branch);
      dnorm.reset(nt, d);
      attention_backward(c.self_attn, c.self_attn.input, w.self_attention, branch,
                         {&tgt_off_, &tgt_off_, true, false}, true, dnorm,
                         nullptr, gw.self_attention, &g.decoder_relative_bias);
      rms_norm_backward(c.self_norm.input, w.self_attention_norm, c.self_norm.inv_rms, dnorm, dy,
                        gw.self_attention_norm);
    }
    apply_mask_backward(dec_embed_drop_, dy);
    scatter_embedding_grad(tgt_in_, dy, g.embedding);

    // Encoder.
    apply_mask_backward(enc_final_drop_, dmemory);
    const int ns = static_cast<int>(src_tokens_.size());
    Matrix<T> dx(ns, d);
    rms_norm_backward(enc_final_.input, p_.encoder_final_norm, enc_final_.inv_rms, dmemory, dx,
                      g.encoder_final_norm);
    for (int l = cfg_.n_encoder_layers - 1; l >= 0; --l) {
      const auto& c = enc_[static_cast<std::size_t>(l)];
      const auto& w = p_.encoder[static_cast<std::size_t>(l)];
      auto& gw = g.encoder[static_cast<std::size_t>(l)];

      Matrix<T> branch = dx;
      apply_mask_backward(c.ff_drop, branch);
      Matrix<T> dnorm(ns, d);
      feed_forward_backward(c.ff_norm.output, c.ff, w.feed_forward, branch, dnorm, gw.feed_forward);
      rms_norm_backward(c.ff_norm.input, w.feed_forward_norm, c.ff_norm.inv_rms, dnorm, dx,
                        gw.feed_forward_norm);

      branch = dx;
      apply_mask_backward(c.attn_drop, branch);
      dnorm.reset(ns, d);
      attention_backward(c.attn, c.attn.input, w.self_attention, branch,
                         {&src_off_, &src_off_, false, true}, true, dnorm,
                         nullptr, gw.self_attention, &g.encoder_relative_bias);
      rms_norm_backward(c.attn_norm.input, w.self_attention_norm, c.attn_norm.inv_rms, dnorm, dx,
                        gw.self_attention_norm);
    }
    apply_mask_backward(enc_embed_drop_, dx);
    scatter_embedding_grad(src_tokens_, dx, g.embedding);
    return loss;
  }

  // Dense attention weights per (site, sequence, head).
  std::vector<AttentionMap<T>> maps() const {
    std::vector<AttentionMap<T>> out;
    const int heads = cfg_.n_heads;
    auto emit = [&](const std::string& site, const AttentionCache<T>& c, const Offsets& q,
                    const Offsets& k) {
      const int n_seq = static_cast<int>(q.size()) - 1;
      for (int s = 0; s < n_seq; ++s) {
        const int lq = q[s + 1] - q[s];
        const int lk = k[s + 1] - k[s];
        for (int h = 0; h < heads; ++h) {
          AttentionMap<T> m{site, s, h, Matrix<T>(lq, lk)};
          const T* src = c.probs.data() + c.prob_offsets[static_cast<std::size_t>(s * heads + h)];
          std::copy(src, src + static_cast<std::size_t>(lq) * lk, m.weights.data());
          out.push_back(std::move(m));
        }
      }
    };
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
      emit("encoder." + std::to_string(l) + ".self_attention", enc_[static_cast<std::size_t>(l)].attn,
           src_off_, src_off_);
    }
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      const auto& c = dec_[static_cast<std::size_t>(l)];
      emit("decoder." + std::to_string(l) + ".self_attention", c.self_attn, tgt_off_, tgt_off_);
      emit("decoder." + std::to_string(l) + ".cross_attention", c.cross_attn, tgt_off_, src_off_);
    }
    return out;
  }

 private:
  T output_scale() const { return static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.d_model))); }

  void validate_batch() const {
    const Batch& b = batch_;
    if (b.batch_size <= 0) fail(ErrorCode::kShape, "empty batch");
    const auto bs = static_cast<std::size_t>(b.batch_size);
    if (b.src.size() != bs * b.src_len || b.src_mask.size() != b.src.size() ||
        b.tgt_in.size() != bs * b.tgt_len || b.tgt_out.size() != b.tgt_in.size() ||
        b.tgt_mask.size() != b.tgt_in.size()) {
      fail(ErrorCode::kShape, "batch matrices do not match the declared shape");
    }
    auto check_ids = [&](const std::vector<TokenId>& ids) {
      for (TokenId id : ids) {
        if (id < 0 || id >= cfg_.vocab_size) {
          fail(ErrorCode::kShape, "token id " + std::to_string(id) + " outside the vocabulary");
        }
      }
    };
    check_ids(b.src);
    check_ids(b.tgt_in);
    check_ids(b.tgt_out);
    for (int i = 0; i < b.batch_size; ++i) {
      const int sl = b.src_length(i);
      const int tl = b.tgt_length(i);
      if (sl == 0) fail(ErrorCode::kShape, "empty source sequence at row " + std::to_string(i));
      if (sl > cfg_.max_src_len) {
        fail(ErrorCode::kShape, "source length " + std::to_string(sl) + " exceeds max_src_len " +
                                    std::to_string(cfg_.max_src_len));
      }
      if (tl > cfg_.max_tgt_len) {
        fail(ErrorCode::kShape, "target length " + std::to_string(tl) + " exceeds max_tgt_len " +
                                    std::to_string(cfg_.max_tgt_len));
      }
      for (int s = 0; s < b.src_len; ++s) {
        const auto k = static_cast<std::size_t>(i) * b.src_len + s;
        if ((b.src_mask[k] != 0) != (s < sl) || (b.src_mask[k] != 0) != (b.src[k] != kPad)) {
          fail(ErrorCode::kShape, "source mask must mark exactly a non-PAD prefix");
        }
      }
      for (int t = 0; t < b.tgt_len; ++t) {
        const auto k = static_cast<std::size_t>(i) * b.tgt_len + t;
        if ((b.tgt_mask[k] != 0) != (t < tl)) {
          fail(ErrorCode::kShape, "target mask must mark a prefix");
        }
      }
    }
  }

  void build_layout() {
    const Batch& b = batch_;
    src_off_.assign(1, 0);
    tgt_off_.assign(1, 0);
    for (int i = 0; i < b.batch_size; ++i) {
      for (int s = 0; s < b.src_len; ++s) {
        const auto k = static_cast<std::size_t>(i) * b.src_len + s;
        if (b.src_mask[k]) src_tokens_.push_back(b.src[k]);
      }
      src_off_.push_back(static_cast<int>(src_tokens_.size()));
      for (int t = 0; t < b.tgt_len; ++t) {
        const auto k = static_cast<std::size_t>(i) * b.tgt_len + t;
        if (b.tgt_mask[k]) {
          tgt_in_.push_back(b.tgt_in[k]);
          tgt_out_.push_back(b.tgt_out[k]);
        }
      }
      tgt_off_.push_back(static_cast<int>(tgt_in_.size()));
    }
  }

  Matrix<T> embed(const std::vector<TokenId>& tokens) const {
    const int d = cfg_.d_model;
    Matrix<T> x(static_cast<int>(tokens.size()), d);
    for (std::size_t r = 0; r < tokens.size(); ++r) {
      std::copy(p_.embedding.row(tokens[r]), p_.embedding.row(tokens[r]) + d,
                x.row(static_cast<int>(r)));
    }
    return x;
  }

  void scatter_embedding_grad(const std::vector<TokenId>& tokens, const Matrix<T>& dx,
                              Matrix<T>& dembed) const {
    const int d = cfg_.d_model;
    for (std::size_t r = 0; r < tokens.size(); ++r) {
      T* dst = dembed.row(tokens[r]);
      const T* src = dx.row(static_cast<int>(r));
      for (int c = 0; c < d; ++c) dst[c] += src[c];
    }
  }

  void norm(const Matrix<T>& x, const Matrix<T>& gain, NormCache<T>& cache) const {
    cache.input = x;
    rms_norm(x, gain, cache.output, &cache.inv_rms);
  }

  // Fills cache.q/k/v/context/probs and returns the projected output.
  Matrix<T> attention(AttentionCache<T>& c, const Matrix<T>& query_in, const Matrix<T>& key_in,
                      const AttentionParams<T>& w, const AttentionShape& shape,
                      const Matrix<T>* bias_table) const {
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    c.input = query_in;
    matmul(query_in, w.query, c.q);
    matmul(key_in, w.key, c.k);
    matmul(key_in, w.value, c.v);
    c.context.reset(query_in.rows(), d);

    const Offsets& qo = *shape.queries;
    const Offsets& ko = *shape.keys;
    const int n_seq = static_cast<int>(qo.size()) - 1;
    c.prob_offsets.clear();
    std::size_t total = 0;
    for (int s = 0; s < n_seq; ++s) {
      for (int h = 0; h < heads; ++h) {
        c.prob_offsets.push_back(total);
        total += static_cast<std::size_t>(qo[s + 1] - qo[s]) * (ko[s + 1] - ko[s]);
      }
    }
    c.probs.assign(total, T{0});

    std::vector<T> bias;
    for (int s = 0; s < n_seq; ++s) {
      const int lq = qo[s + 1] - qo[s];
      const int lk = ko[s + 1] - ko[s];
      bias.resize(static_cast<std::size_t>(lk));
      for (int h = 0; h < heads; ++h) {
        T* probs = c.probs.data() + c.prob_offsets[static_cast<std::size_t>(s * heads + h)];
        for (int i = 0; i < lq; ++i) {
          const int n_keys = shape.causal ? i + 1 : lk;
          if (bias_table) {
            for (int j = 0; j < n_keys; ++j) {
              const int bucket = relative_position_bucket(j - i, shape.bidirectional,
                                                          cfg_.rel_pos_buckets,
                                                          cfg_.rel_pos_max_distance);
              bias[static_cast<std::size_t>(j)] = (*bias_table)(bucket, h);
            }
          }
          attend_row(c.q.row(qo[s] + i) + h * hd, c.k.row(ko[s]) + h * hd, c.v.row(ko[s]) + h * hd,
                     d, n_keys, hd, scale, bias_table ? bias.data() : nullptr,
                     probs + static_cast<std::size_t>(i) * lk, c.context.row(qo[s] + i) + h * hd);
        }
      }
    }
    Matrix<T> out;
    matmul(c.context, w.output, out);
    return out;
  }

  // dquery_in += ..., dkey_in (if non-null) += ...; parameter grads accumulate.
  // When dkey_in is null the keys came from `key_in == query_in` (self-attention).
  void attention_backward(const AttentionCache<T>& c, const Matrix<T>& key_in,
                          const AttentionParams<T>& w, const Matrix<T>& dout,
                          const AttentionShape& shape, bool with_bias,
                          Matrix<T>& dquery_in, Matrix<T>* dkey_in, AttentionParams<T>& gw,
                          Matrix<T>* dbias_table) const {
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int hd = cfg_.head_dim();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    Matrix<T> dcontext(c.context.rows(), d);
    linear_backward(c.context, w.output, dout, dcontext, gw.output);

    Matrix<T> dq(c.q.rows(), d);
    Matrix<T> dk(c.k.rows(), d);
    Matrix<T> dv(c.v.rows(), d);
    const Offsets& qo = *shape.queries;
    const Offsets& ko = *shape.keys;
    const int n_seq = static_cast<int>(qo.size()) - 1;
    std::vector<T> dp;
    for (int s = 0; s < n_seq; ++s) {
      const int lq = qo[s + 1] - qo[s];
      const int lk = ko[s + 1] - ko[s];
      dp.resize(static_cast<std::size_t>(lk));
      for (int h = 0; h < heads; ++h) {
        const T* probs = c.probs.data() + c.prob_offsets[static_cast<std::size_t>(s * heads + h)];
        for (int i = 0; i < lq; ++i) {
          const int n_keys = shape.causal ? i + 1 : lk;
          const T* p = probs + static_cast<std::size_t>(i) * lk;
          const T* dctx = dcontext.row(qo[s] + i) + h * hd;
          const T* q = c.q.row(qo[s] + i) + h * hd;
          T* dqi = dq.row(qo[s] + i) + h * hd;
          T weighted = T{0};
          for (int j = 0; j < n_keys; ++j) {
            const T* vj = c.v.row(ko[s] + j) + h * hd;
            T* dvj = dv.row(ko[s] + j) + h * hd;
            dp[static_cast<std::size_t>(j)] = dot(dctx, vj, hd);
            weighted += p[j] * dp[static_cast<std::size_t>(j)];
            for (int e = 0; e < hd; ++e) dvj[e] += p[j] * dctx[e];
          }
          for (int j = 0; j < n_keys; ++j) {
            const T ds = p[j] * (dp[static_cast<std::size_t>(j)] - weighted);
            if (with_bias) {
              const int bucket = relative_position_bucket(j - i, shape.bidirectional,
                                                          cfg_.rel_pos_buckets,
                                                          cfg_.rel_pos_max_distance);
              (*dbias_table)(bucket, h) += ds;
            }
            const T* kj = c.k.row(ko[s] + j) + h * hd;
            T* dkj = dk.row(ko[s] + j) + h * hd;
            const T sds = ds * scale;
            for (int e = 0; e < hd; ++e) {
              dqi[e] += sds * kj[e];
              dkj[e] += sds * q[e];
            }
          }
        }
      }
    }

    linear_backward(c.input, w.query, dq, dquery_in, gw.query);
    Matrix<T>& dkv_target = dkey_in ? *dkey_in : dquery_in;
    linear_backward(key_in, w.key, dk, dkv_target, gw.key);
    linear_backward(key_in, w.value, dv, dkv_target, gw.value);
  }

  Matrix<T> feed_forward(FeedForwardCache<T>& c, const Matrix<T>& x,
                         const FeedForwardParams<T>& w) const {
    matmul(x, w.input, c.pre_activation);
    c.hidden = c.pre_activation;
    for (T& v : c.hidden.values()) v = std::max(v, T{0});
    Matrix<T> out;
    matmul(c.hidden, w.output, out);
    return out;
  }

  void feed_forward_backward(const Matrix<T>& x, const FeedForwardCache<T>& c,
                             const FeedForwardParams<T>& w, const Matrix<T>& dout, Matrix<T>& dx,
                             FeedForwardParams<T>& gw) const {
    Matrix<T> dhidden(c.hidden.rows(), c.hidden.cols());
    linear_backward(c.hidden, w.output, dout, dhidden, gw.output);
    auto dh = dhidden.values();
    auto pre = c.pre_activation.values();
    for (std::size_t i = 0; i < dh.size(); ++i) {
      if (pre[i] <= T{0}) dh[i] = T{0};
    }
    linear_backward(x, w.input, dhidden, dx, gw.input);
  }

  void run_encoder() {
    Matrix<T> x = embed(src_tokens_);
    dropout_.apply(x, enc_embed_drop_);
    enc_.resize(static_cast<std::size_t>(cfg_.n_encoder_layers));
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
      auto& c = enc_[static_cast<std::size_t>(l)];
      const auto& w = p_.encoder[static_cast<std::size_t>(l)];
      norm(x, w.self_attention_norm, c.attn_norm);
      Matrix<T> a = attention(c.attn, c.attn_norm.output, c.attn_norm.output, w.self_attention,
                              {&src_off_, &src_off_, false, true}, &p_.encoder_relative_bias);
      dropout_.apply(a, c.attn_drop);
      add_in_place(x, a);
      norm(x, w.feed_forward_norm, c.ff_norm);
      Matrix<T> f = feed_forward(c.ff, c.ff_norm.output, w.feed_forward);
      dropout_.apply(f, c.ff_drop);
      add_in_place(x, f);
    }
    norm(x, p_.encoder_final_norm, enc_final_);
    memory_ = enc_final_.output;
    dropout_.apply(memory_, enc_final_drop_);
  }

  void run_decoder() {
    Matrix<T> y = embed(tgt_in_);
    dropout_.apply(y, dec_embed_drop_);
    dec_.resize(static_cast<std::size_t>(cfg_.n_decoder_layers));
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      auto& c = dec_[static_cast<std::size_t>(l)];
      const auto& w = p_.decoder[static_cast<std::size_t>(l)];
      norm(y, w.self_attention_norm, c.self_norm);
      Matrix<T> a = attention(c.self_attn, c.self_norm.output, c.self_norm.output, w.self_attention,
                              {&tgt_off_, &tgt_off_, true, false}, &p_.decoder_relative_bias);
      dropout_.apply(a, c.self_drop);
      add_in_place(y, a);
      norm(y, w.cross_attention_norm, c.cross_norm);
      Matrix<T> x = attention(c.cross_attn, c.cross_norm.output, memory_, w.cross_attention,
                              {&tgt_off_, &src_off_, false, false}, nullptr);
      dropout_.apply(x, c.cross_drop);
      add_in_place(y, x);
      norm(y, w.feed_forward_norm, c.ff_norm);
      Matrix<T> f = feed_forward(c.ff, c.ff_norm.output, w.feed_forward);
      dropout_.apply(f, c.ff_drop);
      add_in_place(y, f);
    }
    norm(y, p_.decoder_final_norm, dec_final_);
    scaled_out_ = dec_final_.output;
    dropout_.apply(scaled_out_, dec_final_drop_);
    const T s = output_scale();
    for (T& v : scaled_out_.values()) v *= s;
    matmul_nt(scaled_out_, p_.embedding, logits_);
  }

  const ModelParameters<T>& p_;
  const ModelConfig& cfg_;
  const Batch& batch_;
  DropoutSampler dropout_;

  Offsets src_off_;
  Offsets tgt_off_;
  std::vector<TokenId> src_tokens_;
  std::vector<TokenId> tgt_in_;
  std::vector<TokenId> tgt_out_;

  Dropout<T> enc_embed_drop_;
  std::vector<EncoderLayerCache<T>> enc_;
  NormCache<T> enc_final_;
  Dropout<T> enc_final_drop_;
  Matrix<T> memory_;

  Dropout<T> dec_embed_drop_;
  std::vector<DecoderLayerCache<T>> dec_;
  NormCache<T> dec_final_;
  Dropout<T> dec_final_drop_;
  Matrix<T> scaled_out_;
  Matrix<T> logits_;
};

}  // namespace

// --- Public entry points -----------------------------------------------------

template <class T>
Logits<T> forward(const ModelParameters<T>& params, const Batch& batch, ForwardMode mode,
                  std::uint64_t dropout_seed) {
  ForwardPass<T> pass(params, batch, mode, dropout_seed);
  return pass.scatter_logits();
}

template <class T>
LossValue cross_entropy_loss(const Logits<T>& logits, const Batch& batch) {
  if (logits.batch_size != batch.batch_size || logits.tgt_len != batch.tgt_len) {
    fail(ErrorCode::kShape, "logits and batch shapes disagree");
  }
  const int v = logits.values.cols();
  std::vector<T> logp(static_cast<std::size_t>(v));
  double total = 0.0;
  std::size_t count = 0;
  for (int b = 0; b < batch.batch_size; ++b) {
    for (int t = 0; t < batch.tgt_len; ++t) {
      const auto k = static_cast<std::size_t>(b) * batch.tgt_len + t;
      if (!batch.tgt_mask[k]) continue;
      log_softmax(logits.at(b, t), v, logp.data());
      total -= static_cast<double>(logp[static_cast<std::size_t>(batch.tgt_out[k])]);
      ++count;
    }
  }
  if (count == 0) fail(ErrorCode::kDegenerateBatch, "no valid target positions");
  return {total / static_cast<double>(count), count};
}

template <class T>
LossValue accumulate_gradients(const ModelParameters<T>& params, const Batch& batch,
                               ForwardMode mode, std::uint64_t dropout_seed,
                               ModelParameters<T>& accumulator) {
  if (batch.target_tokens() == 0) fail(ErrorCode::kDegenerateBatch, "no valid target positions");
  ForwardPass<T> pass(params, batch, mode, dropout_seed);
  const double loss = pass.backward(accumulator);
  return {loss, pass.packed_targets().size()};
}

template <class T>
GradientResult<T> backward(const ModelParameters<T>& params, const Batch& batch, ForwardMode mode,
                           std::uint64_t dropout_seed) {
  GradientResult<T> result{ModelParameters<T>::zeros(params.config), 0.0, 0};
  const LossValue sum = accumulate_gradients(params, batch, mode, dropout_seed, result.gradients);
  const T inv = static_cast<T>(1.0 / static_cast<double>(sum.tokens));
  for (auto& [name, m] : result.gradients.named_tensors()) {
    for (T& v : m->values()) v *= inv;
  }
  result.loss = sum.loss / static_cast<double>(sum.tokens);
  result.tokens = sum.tokens;
  return result;
}

template <class T>
std::vector<AttentionMap<T>> attention_maps(const ModelParameters<T>& params, const Batch& batch) {
  ForwardPass<T> pass(params, batch, ForwardMode::kEval, 0);
  return pass.maps();
}

// --- Incremental inference -----------------------------------------------------

template <class T>
std::vector<EncodedSource<T>> encode_sources(const ModelParameters<T>& params,
                                             std::span<const TokenSequence> sources) {
  const ModelConfig& cfg = params.config;
  const int d = cfg.d_model;
  std::vector<EncodedSource<T>> out;
  if (sources.empty()) return out;

  // An empty-target pass runs the encoder and projects the cross-attention
  // keys/values of every decoder layer; the decoder half is otherwise empty.
  std::vector<TokenSequence> targets(sources.size());
  const Batch batch = Batch::from_sequences(sources, targets);
  ForwardPass<T> pass(params, batch, ForwardMode::kEval, 0);
  const Offsets& off = pass.src_offsets();
  const Matrix<T>& memory = pass.memory();
  out.resize(sources.size());
  std::vector<const Matrix<T>*> keys;
  std::vector<const Matrix<T>*> values;
  for (const auto& c : pass.decoder_caches()) {
    keys.push_back(&c.cross_attn.k);
    values.push_back(&c.cross_attn.v);
  }
  for (std::size_t s = 0; s < sources.size(); ++s) {
    auto& e = out[s];
    const int begin = off[s];
    const int len = off[s + 1] - off[s];
    e.length = len;
    e.memory.reset(len, d);
    std::copy(memory.row(begin), memory.row(begin) + static_cast<std::size_t>(len) * d,
              e.memory.data());
    for (int l = 0; l < cfg.n_decoder_layers; ++l) {
      Matrix<T> k(len, d);
      Matrix<T> v(len, d);
      const auto count = static_cast<std::size_t>(len) * d;
      std::copy(keys[static_cast<std::size_t>(l)]->row(begin),
                keys[static_cast<std::size_t>(l)]->row(begin) + count, k.data());
      std::copy(values[static_cast<std::size_t>(l)]->row(begin),
                values[static_cast<std::size_t>(l)]->row(begin) + count, v.data());
      e.cross_keys.push_back(std::move(k));
      e.cross_values.push_back(std::move(v));
    }
  }
  return out;
}

template <class T>
Matrix<T> decoder_step(const ModelParameters<T>& params,
                       std::span<const EncodedSource<T>* const> sources,
                       std::span<DecoderCache<T>* const> caches, std::span<const TokenId> tokens) {
  const ModelConfig& cfg = params.config;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = cfg.head_dim();
  const int rows = static_cast<int>(tokens.size());
  if (sources.size() != tokens.size() || caches.size() != tokens.size()) {
    fail(ErrorCode::kShape, "decoder_step arguments differ in length");
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  const auto n_layers = static_cast<std::size_t>(cfg.n_decoder_layers);

  Matrix<T> y(rows, d);
  for (int r = 0; r < rows; ++r) {
    const TokenId tok = tokens[static_cast<std::size_t>(r)];
    if (tok < 0 || tok >= cfg.vocab_size) fail(ErrorCode::kShape, "token id outside the vocabulary");
    DecoderCache<T>& cache = *caches[static_cast<std::size_t>(r)];
    if (cache.length >= cfg.max_tgt_len) {
      fail(ErrorCode::kShape, "decoder cache already holds max_tgt_len positions");
    }
    if (cache.keys.size() != n_layers) {
      cache.keys.assign(n_layers, {});
      cache.values.assign(n_layers, {});
    }
    std::copy(params.embedding.row(tok), params.embedding.row(tok) + d, y.row(r));
  }

  Matrix<T> h, q, k, v, ctx(rows, d), a;
  std::vector<T> bias;
  std::vector<T> probs;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& w = params.decoder[l];

    rms_norm(y, w.self_attention_norm, h);
    matmul(h, w.self_attention.query, q);
    matmul(h, w.self_attention.key, k);
    matmul(h, w.self_attention.value, v);
    for (int r = 0; r < rows; ++r) {
      DecoderCache<T>& cache = *caches[static_cast<std::size_t>(r)];
      auto& ck = cache.keys[l];
      auto& cv = cache.values[l];
      ck.insert(ck.end(), k.row(r), k.row(r) + d);
      cv.insert(cv.end(), v.row(r), v.row(r) + d);
      const int pos = cache.length;
      const int n_keys = pos + 1;
      bias.resize(static_cast<std::size_t>(n_keys));
      probs.resize(static_cast<std::size_t>(n_keys));
      for (int hh = 0; hh < heads; ++hh) {
        for (int j = 0; j < n_keys; ++j) {
          bias[static_cast<std::size_t>(j)] =
              params.decoder_relative_bias(decoder_position_bucket(j - pos, cfg), hh);
        }
        attend_row(q.row(r) + hh * hd, ck.data() + hh * hd, cv.data() + hh * hd, d, n_keys, hd,
                   scale, bias.data(), probs.data(), ctx.row(r) + hh * hd);
      }
    }
    matmul(ctx, w.self_attention.output, a);
    add_in_place(y, a);

    rms_norm(y, w.cross_attention_norm, h);
    matmul(h, w.cross_attention.query, q);
    for (int r = 0; r < rows; ++r) {
      const EncodedSource<T>& src = *sources[static_cast<std::size_t>(r)];
      probs.resize(static_cast<std::size_t>(src.length));
      for (int hh = 0; hh < heads; ++hh) {
        attend_row(q.row(r) + hh * hd, src.cross_keys[l].data() + hh * hd,
                   src.cross_values[l].data() + hh * hd, d, src.length, hd, scale,
                   static_cast<const T*>(nullptr), probs.data(), ctx.row(r) + hh * hd);
      }
    }
    matmul(ctx, w.cross_attention.output, a);
    add_in_place(y, a);

    rms_norm(y, w.feed_forward_norm, h);
    Matrix<T> hidden;
    matmul(h, w.feed_forward.input, hidden);
    for (T& x : hidden.values()) x = std::max(x, T{0});
    matmul(hidden, w.feed_forward.output, a);
    add_in_place(y, a);
  }
  for (int r = 0; r < rows; ++r) ++caches[static_cast<std::size_t>(r)]->length;

  rms_norm(y, params.decoder_final_norm, h);
  const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  for (T& x : h.values()) x *= s;
  Matrix<T> logits;
  matmul_nt(h, params.embedding, logits);
  Matrix<T> logp(rows, cfg.vocab_size);
  for (int r = 0; r < rows; ++r) log_softmax(logits.row(r), cfg.vocab_size, logp.row(r));
  return logp;
}

#define G2P_INSTANTIATE_MODEL(T)                                                                 \
  template struct ModelParameters<T>;                                                            \
  template ModelParameters<T> init_params<T>(const ModelConfig&, std::uint64_t);                  \
  template Logits<T> forward<T>(const ModelParameters<T>&, const Batch&, ForwardMode,            \
                                std::uint64_t);                                                  \
  template LossValue cross_entropy_loss<T>(const Logits<T>&, const Batch&);                      \
  template LossValue accumulate_gradients<T>(const ModelParameters<T>&, const Batch&,            \
                                             ForwardMode, std::uint64_t, ModelParameters<T>&);   \
  template GradientResult<T> backward<T>(const ModelParameters<T>&, const Batch&, ForwardMode,   \
                                         std::uint64_t);                                         \
  template std::vector<AttentionMap<T>> attention_maps<T>(const ModelParameters<T>&,             \
                                                          const Batch&);                         \
  template std::vector<EncodedSource<T>> encode_sources<T>(const ModelParameters<T>&,            \
                                                           std::span<const TokenSequence>);      \
  template Matrix<T> decoder_step<T>(const ModelParameters<T>&,                                  \
                                     std::span<const EncodedSource<T>* const>,                   \
                                     std::span<DecoderCache<T>* const>, std::span<const TokenId>); \
  template void log_softmax<T>(const T*, int, T*);

G2P_INSTANTIATE_MODEL(float)
G2P_INSTANTIATE_MODEL(double)

#undef G2P_INSTANTIATE_MODEL

}  // namespace g2p
