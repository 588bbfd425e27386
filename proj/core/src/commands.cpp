#include "g2p/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include "g2p/checkpoint.hpp"
#include "g2p/decoder.hpp"
#include "g2p/error.hpp"
#include "g2p/evaluation.hpp"

namespace g2p {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const fs::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

Lexicon read_lexicon(const fs::path& path, const LanguageTag& tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  try {
    return parse_dictionary(in, tag).lexicon;
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

IngestInput from_file_name(const fs::path& path) {
  const auto name = path.filename().string();
  if (!name.ends_with(".tsv")) {
    fail(ErrorCode::kInvalidInput, "cannot infer a language from " + path.string() +
                                       "; use TAG=PATH or name it <tag>.tsv");
  }
  const auto stem = name.substr(0, name.size() - 4);
  const auto dot = stem.find('.');
  const auto code = stem.substr(0, dot);
  if (!LanguageTag::is_valid(code)) {
    fail(ErrorCode::kInvalidTag, "file name " + name + " does not start with a language tag");
  }
  return {path, LanguageTag(code), dot == std::string::npos ? code : stem.substr(dot + 1)};
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

Checkpoint make_checkpoint(const ModelParameters<float>& params, const RunConfig& config,
                           std::int64_t step, json extra) {
  Checkpoint cp{params, config.train, step, std::move(extra)};
  return cp;
}

fs::path sibling(const fs::path& base, std::string_view suffix) {
  auto p = base;
  p += std::string(suffix);
  return p;
}

// Shared by train and finetune.
TrainOutcome run_training(const RunConfig& raw, std::optional<ModelParameters<float>> initial,
                          bool resume) {
  if (raw.paths.split_manifest.empty()) fail(ErrorCode::kConfig, "paths.split_manifest is required");
  if (raw.paths.checkpoint_out.empty()) fail(ErrorCode::kConfig, "paths.checkpoint_out is required");
  auto splits = load_splits(raw.paths.split_manifest, raw.train.language_filter);
  if (initial && splits.train.size() != 1) {
    fail(ErrorCode::kConfig, "finetune needs exactly one language, got " +
                                 std::to_string(splits.train.size()));
  }
  const RunConfig config = materialize(raw, splits.train.size());
  const fs::path out(config.paths.checkpoint_out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_atomic(sibling(out, ".config.json"), dump(to_json(config)));

  ModelParameters<float> start =
      initial ? std::move(*initial) : init_params<float>(config.model, config.train.seed);
  Trainer trainer(std::move(start), config.train, splits.train, splits.dev);

  const auto last = sibling(out, ".last");
  if (resume && fs::exists(last)) {
    auto cp = load_checkpoint(last);
    check_compatible(config.model, cp.params.config);
    if (cp.train != config.train) fail(ErrorCode::kIncompatible, "resume with a different train config");
    TrainerState state;
    state.params = std::move(cp.params);
    state.optimizer = load_optimizer_state(optimizer_path(last), config.model);
    state.best_params = load_checkpoint(out).params;
    state.epochs_done = cp.extra.at("epochs_done").get<int>();
    state.report = TrainReport::from_json(cp.extra.at("report"));
    trainer.restore(std::move(state));
  }

  json languages = json::array();
  for (const auto& tag : trainer.languages()) languages.push_back(tag.code());
  auto summary = [&](const TrainerState& s) {
    return json{{"languages", languages},
                {"seed", config.train.seed},
                {"epochs_done", s.epochs_done},
                {"report", s.report.to_json()},
                {"run_config", to_json(config)}};
  };
  auto save_all = [&](const TrainerState& s) {
    const auto extra = summary(s);
    save_checkpoint(out, make_checkpoint(s.best_params, config, s.report.optimizer_steps, extra));
    save_checkpoint(last, make_checkpoint(s.params, config, s.report.optimizer_steps, extra));
    save_optimizer_state(optimizer_path(last), s.optimizer, config.model);
  };
  trainer.run(save_all);
  save_all(trainer.state());

  const fs::path report_path =
      config.paths.report_out.empty() ? sibling(out, ".report.json") : fs::path(config.paths.report_out);
  auto report = trainer.report().to_json();
  report["languages"] = languages;
  report["seed"] = config.train.seed;
  report["run_config"] = to_json(config);
  write_file_atomic(report_path, dump(report));
  return {config, trainer.report()};
}

std::string format_logprob(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<IngestInput> parse_ingest_argument(std::string_view arg) {
  const auto eq = arg.find('=');
  if (eq != std::string_view::npos) {
    fs::path path(std::string(arg.substr(eq + 1)));
    return {IngestInput{path, LanguageTag(std::string(arg.substr(0, eq))), path.stem().string()}};
  }
  fs::path path{std::string(arg)};
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".tsv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<IngestInput> out;
    for (const auto& f : files) out.push_back(from_file_name(f));
    return out;
  }
  return {from_file_name(path)};
}

json run_ingest(const IngestOptions& options) {
  if (options.inputs.empty()) fail(ErrorCode::kInvalidInput, "no dictionary files to ingest");
  std::map<LanguageTag, std::vector<LexiconSource>> by_language;
  std::map<LanguageTag, json> source_stats;
  for (const auto& input : options.inputs) {
    std::ifstream in(input.path, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "cannot read " + input.path.string());
    ParseResult parsed{Lexicon(input.language), 0, {}};
    try {
      parsed = parse_dictionary(in, input.language);
    } catch (const Error& e) {
      fail(e.code(), "ingest failed for " + input.path.string() + ": " + e.what());
    }
    source_stats[input.language].push_back({{"source", input.source},
                                            {"file", input.path.filename().string()},
                                            {"lines", parsed.line_count},
                                            {"malformed_lines", parsed.malformed_lines.size()},
                                            {"words", parsed.lexicon.size()}});
    by_language[input.language].push_back({input.source, std::move(parsed.lexicon)});
  }

  fs::create_directories(options.out_dir);
  json languages = json::array();
  for (auto& [tag, sources] : by_language) {
    const Lexicon merged = merge(sources, options.priority);
    const auto file = tag.code() + ".tsv";
    write_file_atomic(options.out_dir / file, serialize(merged));
    languages.push_back({{"language", tag.code()},
                         {"path", file},
                         {"entries", merged.size()},
                         {"pronunciations", merged.pronunciation_count()},
                         {"sources", source_stats[tag]}});
  }
  json manifest{{"priority", options.priority}, {"languages", languages}};
  write_file_atomic(options.out_dir / "manifest.json", dump(manifest));
  return manifest;
}

PartitionOptions PartitionOptions::low_resource() {
  PartitionOptions o;
  const auto spec = SplitSpec::low_resource(0);
  o.dev_size = spec.dev_size;
  o.test_size = spec.test_size;
  o.min_entries = 0;
  return o;
}

json run_partition(const PartitionOptions& options) {
  const auto ingest_manifest = options.lexicon_dir / "manifest.json";
  if (!fs::exists(ingest_manifest)) {
    fail(ErrorCode::kInsufficientData, "no ingest manifest at " + ingest_manifest.string());
  }
  const auto manifest = read_json(ingest_manifest);
  fs::create_directories(options.out_dir);

  const SplitSpec spec{options.dev_size, options.test_size, options.seed};
  json eligible = json::array();
  json ineligible = json::array();
  try {
    for (const auto& entry : manifest.at("languages")) {
      const LanguageTag tag(entry.at("language").get<std::string>());
      const auto lexicon = read_lexicon(options.lexicon_dir / entry.at("path").get<std::string>(), tag);
      const std::size_t needed = spec.dev_size + spec.test_size + 1;
      if (lexicon.size() <= options.min_entries || lexicon.size() < needed) {
        ineligible.push_back({{"language", tag.code()}, {"entries", lexicon.size()}});
        continue;
      }
      const auto splits = partition(lexicon, spec);
      const fs::path dir(tag.code());
      fs::create_directories(options.out_dir / dir);
      json paths;
      for (const auto& [name, lex] : {std::pair<const char*, const Lexicon*>{"train", &splits.train},
                                      {"dev", &splits.dev},
                                      {"test", &splits.test}}) {
        const auto rel = (dir / (std::string(name) + ".tsv")).generic_string();
        write_file_atomic(options.out_dir / rel, serialize(*lex));
        paths[name] = rel;
      }
      eligible.push_back({{"language", tag.code()},
                          {"entries", lexicon.size()},
                          {"train", splits.train.size()},
                          {"dev", splits.dev.size()},
                          {"test", splits.test.size()},
                          {"paths", paths}});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "malformed ingest manifest: " + std::string(e.what()));
  }
  json out{{"seed", options.seed},
           {"dev_size", options.dev_size},
           {"test_size", options.test_size},
           {"min_entries", options.min_entries},
           {"languages", eligible},
           {"ineligible", ineligible}};
  write_file_atomic(options.out_dir / "splits.json", dump(out));
  return out;
}

SplitSet load_splits(const fs::path& manifest_path, const std::vector<std::string>& languages) {
  if (!fs::exists(manifest_path)) {
    fail(ErrorCode::kInsufficientData, "no split manifest at " + manifest_path.string());
  }
  const auto manifest = read_json(manifest_path);
  const auto base = manifest_path.parent_path();
  std::set<std::string> wanted(languages.begin(), languages.end());
  std::set<std::string> found;
  SplitSet out;
  try {
    for (const auto& entry : manifest.at("languages")) {
      const auto code = entry.at("language").get<std::string>();
      if (!wanted.empty() && !wanted.count(code)) continue;
      const LanguageTag tag(code);
      const auto& paths = entry.at("paths");
      out.train.push_back(read_lexicon(resolve(base, paths.at("train")), tag));
      out.dev.push_back(read_lexicon(resolve(base, paths.at("dev")), tag));
      out.test.push_back(read_lexicon(resolve(base, paths.at("test")), tag));
      found.insert(code);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "malformed split manifest: " + std::string(e.what()));
  }
  for (const auto& code : wanted) {
    if (!found.count(code)) fail(ErrorCode::kInsufficientData, "no splits for language " + code);
  }
  if (out.train.empty()) fail(ErrorCode::kInsufficientData, "split manifest lists no languages");
  return out;
}

RunConfig materialize(RunConfig config, std::size_t language_count) {
  if (language_count == 1) config.train.unk_mask_rate = 0.0;
  config.model.validate();
  config.train.validate();
  config.decode.validate();
  return config;
}

TrainOutcome run_train(const RunConfig& config, bool resume) {
  return run_training(config, std::nullopt, resume);
}

TrainOutcome run_finetune(const RunConfig& config, bool resume) {
  if (config.paths.checkpoint_in.empty()) fail(ErrorCode::kConfig, "paths.checkpoint_in is required");
  auto pretrained = load_checkpoint(config.paths.checkpoint_in).params;
  check_compatible(config.model, pretrained.config);
  pretrained.config.dropout = config.model.dropout;
  return run_training(config, std::move(pretrained), resume);
}

void run_predict(const PredictOptions& options, std::istream& in, std::ostream& out) {
  options.decode.validate();
  const LanguageTag tag(options.tag);
  const auto params = load_checkpoint(options.checkpoint).params;

  std::vector<std::string> words;
  std::vector<TokenSequence> sources;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto src = encode(line, tag);
    if (src.size() > static_cast<std::size_t>(params.config.max_src_len)) {
      fail(ErrorCode::kInvalidInput, "line " + std::to_string(line_no) + ": word too long");
    }
    words.push_back(line);
    sources.push_back(std::move(src));
  }
  if (words.empty()) return;
  const auto results = batch_decode(params, sources, options.decode);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!results[i].ok()) fail(ErrorCode::kInvalidInput, words[i] + ": " + results[i].error);
    const auto& best = results[i].result->best();
    out << words[i] << '\t' << best.text << '\t' << format_logprob(best.log_prob) << '\n';
  }
}

EvalReport run_eval(const RunConfig& config) {
  if (config.paths.checkpoint_in.empty()) fail(ErrorCode::kConfig, "paths.checkpoint_in is required");
  if (config.paths.split_manifest.empty()) fail(ErrorCode::kConfig, "paths.split_manifest is required");
  config.decode.validate();
  const auto params = load_checkpoint(config.paths.checkpoint_in).params;
  const auto splits = load_splits(config.paths.split_manifest, config.train.language_filter);
  auto report = evaluate(params, splits.test, config.decode);
  if (config.mode.correlate) {
    std::vector<std::pair<LanguageTag, std::size_t>> sizes;
    for (const auto& lex : splits.train) sizes.emplace_back(lex.language(), lex.size());
    attach_correlation(report, sizes);
  }
  const fs::path base = config.paths.report_out.empty()
                            ? sibling(config.paths.checkpoint_in, ".eval")
                            : fs::path(config.paths.report_out);
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  auto j = report.to_json();
  j["decode"] = to_json(config.decode);
  j["checkpoint"] = fs::path(config.paths.checkpoint_in).filename().string();
  j["seed"] = config.train.seed;
  write_file_atomic(sibling(base, ".json"), dump(j));
  write_file_atomic(sibling(base, ".txt"), report.to_text());
  return report;
}

}  // namespace g2p
