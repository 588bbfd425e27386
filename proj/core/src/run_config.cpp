#include "g2p/run_config.hpp"

#include <fstream>
#include <set>

#include "g2p/error.hpp"

namespace g2p {

namespace {

using nlohmann::json;

// Reads declared fields out of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, section_ + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kConfig, section_ + "." + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(ErrorCode::kConfig, "unknown key " + section_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"n_encoder_layers", c.n_encoder_layers},
          {"n_decoder_layers", c.n_decoder_layers},
          {"max_src_len", c.max_src_len},
          {"max_tgt_len", c.max_tgt_len},
          {"rel_pos_buckets", c.rel_pos_buckets},
          {"rel_pos_max_distance", c.rel_pos_max_distance},
          {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  Reader r(j, "model");
  r.get("vocab_size", c.vocab_size);
  r.get("d_model", c.d_model);
  r.get("n_heads", c.n_heads);
  r.get("d_ff", c.d_ff);
  r.get("n_encoder_layers", c.n_encoder_layers);
  r.get("n_decoder_layers", c.n_decoder_layers);
  r.get("max_src_len", c.max_src_len);
  r.get("max_tgt_len", c.max_tgt_len);
  r.get("rel_pos_buckets", c.rel_pos_buckets);
  r.get("rel_pos_max_distance", c.rel_pos_max_distance);
  r.get("dropout", c.dropout);
  r.finish();
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"effective_batch_size", c.effective_batch_size},
          {"micro_batch_size", c.micro_batch_size},
          {"epochs", c.epochs},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"unk_mask_rate", c.unk_mask_rate},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"language_filter", c.language_filter},
          {"max_steps", c.max_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  Reader r(j, "train");
  r.get("learning_rate", c.learning_rate);
  r.get("effective_batch_size", c.effective_batch_size);
  r.get("micro_batch_size", c.micro_batch_size);
  r.get("epochs", c.epochs);
  r.get("weight_decay", c.weight_decay);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("unk_mask_rate", c.unk_mask_rate);
  r.get("seed", c.seed);
  r.get("eval_every", c.eval_every);
  r.get("language_filter", c.language_filter);
  r.get("max_steps", c.max_steps);
  r.finish();
  c.validate();
  return c;
}

nlohmann::json to_json(const DecodeConfig& c) {
  return {{"beam_size", c.beam_size}, {"max_len", c.max_len}, {"length_penalty", c.length_penalty}};
}

DecodeConfig decode_config_from_json(const nlohmann::json& j) {
  DecodeConfig c;
  Reader r(j, "decode");
  r.get("beam_size", c.beam_size);
  r.get("max_len", c.max_len);
  r.get("length_penalty", c.length_penalty);
  r.finish();
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"paths",
           {{"lexicon_dir", c.paths.lexicon_dir},
            {"split_manifest", c.paths.split_manifest},
            {"checkpoint_in", c.paths.checkpoint_in},
            {"checkpoint_out", c.paths.checkpoint_out},
            {"report_out", c.paths.report_out}}},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"decode", to_json(c.decode)},
          {"mode", {{"low_resource", c.mode.low_resource}, {"correlate", c.mode.correlate}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Reader top(j, "config");
  if (const auto* p = top.child("paths")) {
    Reader r(*p, "paths");
    r.get("lexicon_dir", c.paths.lexicon_dir);
    r.get("split_manifest", c.paths.split_manifest);
    r.get("checkpoint_in", c.paths.checkpoint_in);
    r.get("checkpoint_out", c.paths.checkpoint_out);
    r.get("report_out", c.paths.report_out);
    r.finish();
  }
  if (const auto* m = top.child("model")) c.model = model_config_from_json(*m);
  if (const auto* t = top.child("train")) c.train = train_config_from_json(*t);
  if (const auto* d = top.child("decode")) c.decode = decode_config_from_json(*d);
  if (const auto* m = top.child("mode")) {
    Reader r(*m, "mode");
    r.get("low_resource", c.mode.low_resource);
    r.get("correlate", c.mode.correlate);
    r.finish();
  }
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, "malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace g2p
