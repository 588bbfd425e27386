#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "g2p/lexicon.hpp"
#include "g2p/metrics.hpp"
#include "g2p/run_config.hpp"
#include "g2p/trainer.hpp"

// The pipeline steps behind the `g2p` command-line tool.
namespace g2p {

struct IngestInput {
  std::filesystem::path path;
  LanguageTag language;
  std::string source;
};

// `TAG=PATH`, or a PATH whose file name is `<tag>.tsv` or
// `<tag>.<source>.tsv`. A directory expands to every .tsv file in it.
std::vector<IngestInput> parse_ingest_argument(std::string_view arg);

struct IngestOptions {
  std::vector<IngestInput> inputs;
  std::vector<std::string> priority;  // source names, highest first
  std::filesystem::path out_dir;
};

// Writes `<out>/<tag>.tsv` per language and `<out>/manifest.json`, and
// returns the manifest.
nlohmann::json run_ingest(const IngestOptions& options);

struct PartitionOptions {
  std::filesystem::path lexicon_dir;  // holds the ingest manifest
  std::filesystem::path out_dir;
  std::size_t dev_size = 50;
  std::size_t test_size = 500;
  std::uint64_t seed = 0;
  std::size_t min_entries = 3000;  // eligibility needs strictly more words

  static PartitionOptions low_resource();  // 50/200, no size floor
};

// Writes `<out>/<tag>/{train,dev,test}.tsv` and `<out>/splits.json`.
nlohmann::json run_partition(const PartitionOptions& options);

struct SplitSet {
  std::vector<Lexicon> train;
  std::vector<Lexicon> dev;
  std::vector<Lexicon> test;
};

// Loads the splits named in a partition manifest, restricted to `languages`
// when non-empty (kInsufficientData for a language the manifest lacks).
SplitSet load_splits(const std::filesystem::path& manifest, const std::vector<std::string>& languages);

// Fills defaults that depend on the data: unk masking is switched off when
// exactly one language will be trained.
RunConfig materialize(RunConfig config, std::size_t language_count);

struct TrainOutcome {
  RunConfig config;  // materialized
  TrainReport report;
};

// Writes the selected checkpoint to paths.checkpoint_out, a periodic
// `<out>.last` (+ `.optim`) after each epoch, `<out>.config.json` and the
// report (paths.report_out or `<out>.report.json`). With `resume`, continues
// from `<out>.last` when it exists.
TrainOutcome run_train(const RunConfig& config, bool resume = false);

// As run_train, starting from paths.checkpoint_in with a fresh optimizer.
// Exactly one language must be selected.
TrainOutcome run_finetune(const RunConfig& config, bool resume = false);

struct PredictOptions {
  std::filesystem::path checkpoint;
  std::string tag;  // language code or "unk"
  DecodeConfig decode;
};

// One `word<TAB>pronunciation<TAB>logprob` line per non-blank input line.
void run_predict(const PredictOptions& options, std::istream& in, std::ostream& out);

// Beam-decodes the test splits with paths.checkpoint_in and writes
// `<report>.json` and `<report>.txt` (report defaults to `<checkpoint>.eval`).
EvalReport run_eval(const RunConfig& config);

}  // namespace g2p
