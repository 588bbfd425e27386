#include "g2p/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "g2p/error.hpp"

namespace g2p {

namespace {

// Items are decoded in chunks so the per-hypothesis caches stay bounded.
constexpr std::size_t kChunkItems = 64;

struct Hyp {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  int slot = -1;
};

struct Candidate {
  double log_prob;
  TokenId token;
  int parent;  // index into the item's live list
};

double rank_score(double log_prob, std::size_t length, double penalty) {
  if (penalty == 0.0 || length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), penalty);
}

// Higher score first, then lower token id, then lexicographically smaller
// parent sequence.
bool candidate_before(const Candidate& a, const Candidate& b, const std::vector<Hyp>& live) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.token != b.token) return a.token < b.token;
  const auto& pa = live[a.parent].tokens;
  const auto& pb = live[b.parent].tokens;
  return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
}

Prediction to_prediction(Hyp h, bool truncated) {
  Prediction p;
  p.log_prob = h.log_prob;
  p.truncated = truncated;
  std::string bytes;
  for (TokenId id : h.tokens) {
    if (is_byte_token(id)) bytes.push_back(static_cast<char>(id - kByteOffset));
  }
  auto text = decode_bytes(bytes);
  p.text = std::move(text.text);
  p.replaced = text.replaced;
  p.tokens = std::move(h.tokens);
  return p;
}

struct ItemState {
  std::vector<Hyp> live;
  std::vector<Hyp> finished;
  bool done = false;
};

void check_source(const TokenSequence& src, const ModelConfig& config) {
  validate_token_sequence(src);
  const auto n = src.unpadded_length();
  if (n == 0) fail(ErrorCode::kInvalidInput, "empty source sequence");
  if (n > static_cast<std::size_t>(config.max_src_len)) {
    fail(ErrorCode::kInvalidInput, "source of " + std::to_string(n) + " ids exceeds max_src_len " +
                                       std::to_string(config.max_src_len));
  }
}

int effective_max_len(const ModelConfig& model, const DecodeConfig& config) {
  return std::min(config.max_len, model.max_tgt_len);
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) fail(ErrorCode::kConfig, "beam_size must be >= 1");
  if (max_len < 1) fail(ErrorCode::kConfig, "max_len must be >= 1");
  if (!std::isfinite(length_penalty) || length_penalty < 0.0) {
    fail(ErrorCode::kConfig, "length_penalty must be finite and >= 0");
  }
}

bool is_generatable(TokenId id) { return id != kPad && id != kBos && id >= 0; }

ModelScorer::ModelScorer(const ModelParameters<float>& params,
                         std::span<const TokenSequence> sources)
    : params_(params), sources_(encode_sources(params, sources)) {}

std::vector<double> ModelScorer::advance(std::span<const int> items, std::span<const int> parents,
                                         std::span<const TokenId> tokens) {
  const std::size_t n = tokens.size();
  std::vector<int> children(slots_.size(), 0);
  for (int p : parents) {
    if (p >= 0) ++children[p];
  }
  std::vector<DecoderCache<float>> next(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int p = parents[i];
    if (p < 0) {
      next[i].keys.resize(params_.config.n_decoder_layers);
      next[i].values.resize(params_.config.n_decoder_layers);
    } else if (--children[p] == 0) {
      next[i] = std::move(slots_[p]);
    } else {
      next[i] = slots_[p];
    }
  }
  slots_ = std::move(next);

  std::vector<const EncodedSource<float>*> srcs(n);
  std::vector<DecoderCache<float>*> caches(n);
  for (std::size_t i = 0; i < n; ++i) {
    srcs[i] = &sources_[items[i]];
    caches[i] = &slots_[i];
  }
  auto logp = decoder_step<float>(params_, srcs, caches, tokens);
  std::vector<double> out(logp.values().begin(), logp.values().end());
  return out;
}

std::vector<BeamResult> run_beam_search(StepScorer& scorer, int n_items,
                                        const DecodeConfig& config) {
  config.validate();
  const int vocab = scorer.vocab_size();
  const auto beam = static_cast<std::size_t>(config.beam_size);
  const double penalty = config.length_penalty;

  std::vector<ItemState> state(n_items);
  std::vector<int> items, parents;
  std::vector<TokenId> tokens;
  for (int i = 0; i < n_items; ++i) {
    state[i].live.push_back(Hyp{{}, 0.0, i});
    items.push_back(i);
    parents.push_back(-1);
    tokens.push_back(kBos);
  }
  std::vector<double> logp = scorer.advance(items, parents, tokens);

  std::vector<Candidate> cands;
  for (int step = 0; step < config.max_len; ++step) {
    const bool last = step + 1 == config.max_len;
    items.clear();
    parents.clear();
    tokens.clear();
    std::vector<std::pair<int, std::size_t>> owners;  // (item, live index) per new slot

    for (int it = 0; it < n_items; ++it) {
      auto& st = state[it];
      if (st.done) continue;
      cands.clear();
      for (std::size_t h = 0; h < st.live.size(); ++h) {
        const double* row = logp.data() + static_cast<std::size_t>(st.live[h].slot) * vocab;
        for (TokenId t = 0; t < vocab; ++t) {
          if (!is_generatable(t)) continue;
          cands.push_back(Candidate{st.live[h].log_prob + row[t], t, static_cast<int>(h)});
        }
      }
      const std::size_t keep = std::min(beam, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                        [&](const Candidate& a, const Candidate& b) {
                          return candidate_before(a, b, st.live);
                        });
      std::vector<Hyp> next;
      for (std::size_t c = 0; c < keep; ++c) {
        Hyp h{st.live[cands[c].parent].tokens, cands[c].log_prob, st.live[cands[c].parent].slot};
        h.tokens.push_back(cands[c].token);
        if (cands[c].token == kEos) {
          st.finished.push_back(std::move(h));
        } else {
          next.push_back(std::move(h));
        }
      }
      st.live = std::move(next);

      if (st.live.empty() || last) {
        st.done = true;
      } else if (!st.finished.empty() && penalty == 0.0) {
        // Scores only decrease as tokens append.
        double best_finished = -std::numeric_limits<double>::infinity();
        for (const auto& f : st.finished) best_finished = std::max(best_finished, f.log_prob);
        if (st.live.front().log_prob <= best_finished) st.done = true;
      }
      if (st.done) continue;
      for (std::size_t h = 0; h < st.live.size(); ++h) {
        items.push_back(it);
        parents.push_back(st.live[h].slot);
        tokens.push_back(st.live[h].tokens.back());
        owners.emplace_back(it, h);
      }
    }
    if (tokens.empty()) break;
    logp = scorer.advance(items, parents, tokens);
    for (std::size_t s = 0; s < owners.size(); ++s) {
      state[owners[s].first].live[owners[s].second].slot = static_cast<int>(s);
    }
  }

  std::vector<BeamResult> results(n_items);
  auto order = [&](const Hyp& a, const Hyp& b) {
    const double sa = rank_score(a.log_prob, a.tokens.size(), penalty);
    const double sb = rank_score(b.log_prob, b.tokens.size(), penalty);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };
  for (int it = 0; it < n_items; ++it) {
    auto& st = state[it];
    const bool truncated = st.finished.empty();
    auto& pool = truncated ? st.live : st.finished;
    std::sort(pool.begin(), pool.end(), order);
    if (pool.size() > beam) pool.resize(beam);
    results[it].all_truncated = truncated;
    for (auto& h : pool) results[it].hypotheses.push_back(to_prediction(std::move(h), truncated));
  }
  return results;
}

Prediction run_greedy(StepScorer& scorer, const DecodeConfig& config) {
  if (config.max_len < 1) fail(ErrorCode::kConfig, "max_len must be >= 1");
  const int vocab = scorer.vocab_size();
  const int item = 0;
  int parent = -1;
  TokenId token = kBos;
  Hyp h;
  for (int step = 0; step < config.max_len; ++step) {
    auto row = scorer.advance({&item, 1}, {&parent, 1}, {&token, 1});
    parent = 0;
    // Same scoring arithmetic as a width-1 beam, ties to the lowest id.
    double best = -std::numeric_limits<double>::infinity();
    TokenId arg = -1;
    for (TokenId t = 0; t < vocab; ++t) {
      if (!is_generatable(t)) continue;
      const double s = h.log_prob + row[t];
      if (arg < 0 || s > best) {
        best = s;
        arg = t;
      }
    }
    h.tokens.push_back(arg);
    h.log_prob = best;
    if (arg == kEos) return to_prediction(std::move(h), false);
    token = arg;
  }
  return to_prediction(std::move(h), true);
}

Prediction greedy_decode(const ModelParameters<float>& params, const TokenSequence& src,
                         const DecodeConfig& config) {
  check_source(src, params.config);
  ModelScorer scorer(params, {&src, 1});
  DecodeConfig c = config;
  c.max_len = effective_max_len(params.config, config);
  return run_greedy(scorer, c);
}

BeamResult beam_search(const ModelParameters<float>& params, const TokenSequence& src,
                       const DecodeConfig& config) {
  check_source(src, params.config);
  ModelScorer scorer(params, {&src, 1});
  DecodeConfig c = config;
  c.max_len = effective_max_len(params.config, config);
  return std::move(run_beam_search(scorer, 1, c).front());
}

std::vector<BatchItemResult> batch_decode(const ModelParameters<float>& params,
                                          std::span<const TokenSequence> sources,
                                          const DecodeConfig& config) {
  config.validate();
  if (sources.empty()) fail(ErrorCode::kInvalidInput, "batch_decode needs at least one source");
  DecodeConfig c = config;
  c.max_len = effective_max_len(params.config, config);

  std::vector<BatchItemResult> out(sources.size());
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    try {
      check_source(sources[i], params.config);
      good.push_back(i);
    } catch (const Error& e) {
      out[i].error = e.what();
    }
  }
  for (std::size_t begin = 0; begin < good.size(); begin += kChunkItems) {
    const std::size_t end = std::min(good.size(), begin + kChunkItems);
    std::vector<TokenSequence> chunk;
    for (std::size_t j = begin; j < end; ++j) chunk.push_back(sources[good[j]]);
    ModelScorer scorer(params, chunk);
    auto results = run_beam_search(scorer, static_cast<int>(chunk.size()), c);
    for (std::size_t j = begin; j < end; ++j) out[good[j]].result = std::move(results[j - begin]);
  }
  return out;
}

std::vector<BatchItemResult> batch_greedy_decode(const ModelParameters<float>& params,
                                                 std::span<const TokenSequence> sources,
                                                 int max_len) {
  DecodeConfig c;
  c.beam_size = 1;
  c.max_len = max_len;
  return batch_decode(params, sources, c);
}

double sequence_log_prob(const ModelParameters<float>& params, const TokenSequence& src,
                         std::span<const TokenId> tokens) {
  check_source(src, params.config);
  ModelScorer scorer(params, {&src, 1});
  double total = 0.0;
  const int item = 0;
  int parent = -1;
  TokenId feed = kBos;
  for (TokenId t : tokens) {
    auto row = scorer.advance({&item, 1}, {&parent, 1}, {&feed, 1});
    if (t < 0 || t >= scorer.vocab_size()) fail(ErrorCode::kInvalidInput, "token id out of range");
    total += row[t];
    parent = 0;
    feed = t;
  }
  return total;
}

}  // namespace g2p
