// g2p: ingest, partition, train, finetune, predict and eval.
//
// Exit status: 0 ok, 1 usage, 2 config, 3 data, 4 numeric, 5 storage.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "g2p/commands.hpp"
#include "g2p/error.hpp"
#include "g2p/run_config.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::vector<std::string> languages;
  std::uint64_t seed = 0;
  int beam = 0;
  std::string checkpoint;
  std::string out;
  std::string splits;
  std::string report;
  bool resume = false;
  bool correlate = false;
};

bool given(CLI::App* cmd, const std::string& name) {
  const auto* opt = cmd->get_option_no_throw(name);
  return opt && opt->count() > 0;
}

g2p::RunConfig load(const Overrides& o, CLI::App* cmd) {
  g2p::RunConfig c = o.config.empty() ? g2p::RunConfig{} : g2p::load_run_config(o.config);
  if (!o.languages.empty()) c.train.language_filter = o.languages;
  if (given(cmd, "--seed")) c.train.seed = o.seed;
  if (given(cmd, "--beam")) c.decode.beam_size = o.beam;
  if (!o.checkpoint.empty()) c.paths.checkpoint_in = o.checkpoint;
  if (!o.out.empty()) c.paths.checkpoint_out = o.out;
  if (!o.splits.empty()) c.paths.split_manifest = o.splits;
  if (!o.report.empty()) c.paths.report_out = o.report;
  if (o.correlate) c.mode.correlate = true;
  c.train.validate();
  c.decode.validate();
  return c;
}

void print_train_summary(const g2p::TrainOutcome& t) {
  const auto& r = t.report;
  std::cerr << "trained " << r.optimizer_steps << " steps on " << r.examples << " examples";
  if (r.skipped_examples) std::cerr << " (" << r.skipped_examples << " over-length skipped)";
  std::cerr << "\n";
  if (r.selected >= 0) {
    const auto& best = r.history[r.selected];
    std::cerr << "selected step " << best.step << ": dev PER " << best.dev_per << " WER "
              << best.dev_wer << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual grapheme-to-phoneme toolkit"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse and merge dictionaries into one lexicon per language");
  std::vector<std::string> ingest_inputs;
  std::vector<std::string> priority;
  std::string ingest_out;
  ingest->add_option("inputs", ingest_inputs, "TAG=PATH, <tag>[.<source>].tsv files or directories")
      ->required();
  ingest->add_option("--priority", priority, "Source names, highest priority first")->delimiter(',');
  ingest->add_option("--out", ingest_out, "Output lexicon directory")->required();

  // partition
  auto* part = app.add_subcommand("partition", "Split eligible languages into train/dev/test");
  std::string part_in, part_out;
  std::size_t dev = 50, test = 500, min_entries = 3000;
  std::uint64_t part_seed = 0;
  bool low_resource = false;
  part->add_option("--lexicons", part_in, "Ingest output directory")->required();
  part->add_option("--out", part_out, "Split output directory")->required();
  auto* dev_opt = part->add_option("--dev", dev, "Dev words per language");
  auto* test_opt = part->add_option("--test", test, "Test words per language");
  auto* min_opt = part->add_option("--min-entries", min_entries, "Eligible when strictly larger");
  part->add_option("--seed", part_seed, "Shuffle seed");
  part->add_flag("--low-resource", low_resource, "50/200 splits with no size floor");

  // train / finetune / eval share the run config
  Overrides train_o, fine_o, eval_o;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", train_o.config, "Run config JSON")->required();
  train->add_option("--languages", train_o.languages, "Restrict to these tags")->delimiter(',');
  train->add_option("--seed", train_o.seed, "Training seed");
  train->add_option("--out", train_o.out, "Checkpoint output path");
  train->add_option("--splits", train_o.splits, "Split manifest (splits.json)");
  train->add_flag("--resume", train_o.resume, "Continue from <out>.last if present");

  auto* fine = app.add_subcommand("finetune", "Fine-tune a checkpoint on one language");
  fine->add_option("--config", fine_o.config, "Run config JSON")->required();
  fine->add_option("--checkpoint", fine_o.checkpoint, "Pretrained checkpoint");
  fine->add_option("--languages", fine_o.languages, "Target language tag")->delimiter(',');
  fine->add_option("--seed", fine_o.seed, "Training seed");
  fine->add_option("--out", fine_o.out, "Checkpoint output path");
  fine->add_option("--splits", fine_o.splits, "Split manifest (splits.json)");
  fine->add_flag("--resume", fine_o.resume, "Continue from <out>.last if present");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the test splits");
  eval->add_option("--config", eval_o.config, "Run config JSON");
  eval->add_option("--checkpoint", eval_o.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--splits", eval_o.splits, "Split manifest (splits.json)");
  eval->add_option("--languages", eval_o.languages, "Restrict to these tags")->delimiter(',');
  eval->add_option("--beam", eval_o.beam, "Beam width")->check(CLI::PositiveNumber);
  eval->add_option("--report", eval_o.report, "Report path prefix (.json/.txt appended)");
  eval->add_flag("--correlate", eval_o.correlate, "Spearman rho of training size against PER");

  // predict
  auto* predict = app.add_subcommand("predict", "Transcribe words read from stdin or a file");
  g2p::PredictOptions pred;
  std::string pred_config, pred_input;
  int pred_beam = 0;
  predict->add_option("--checkpoint", pred.checkpoint, "Model checkpoint")->required();
  predict->add_option("--tag", pred.tag, "Language tag, or unk for zero-shot")->required();
  predict->add_option("--beam", pred_beam, "Beam width")->check(CLI::PositiveNumber);
  predict->add_option("--config", pred_config, "Run config JSON (decode section is used)");
  predict->add_option("--input", pred_input, "Word list, one per line (default stdin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(g2p::ExitStatus::kUsage);
  }

  try {
    if (*ingest) {
      g2p::IngestOptions opts;
      for (const auto& arg : ingest_inputs) {
        for (auto& in : g2p::parse_ingest_argument(arg)) opts.inputs.push_back(std::move(in));
      }
      opts.priority = priority;
      opts.out_dir = ingest_out;
      const auto manifest = g2p::run_ingest(opts);
      std::cerr << "ingested " << manifest["languages"].size() << " languages into " << ingest_out
                << "\n";
    } else if (*part) {
      g2p::PartitionOptions opts = low_resource ? g2p::PartitionOptions::low_resource()
                                                : g2p::PartitionOptions{};
      if (dev_opt->count()) opts.dev_size = dev;
      if (test_opt->count()) opts.test_size = test;
      if (min_opt->count()) opts.min_entries = min_entries;
      opts.seed = part_seed;
      opts.lexicon_dir = part_in;
      opts.out_dir = part_out;
      const auto manifest = g2p::run_partition(opts);
      std::cerr << manifest["languages"].size() << " eligible, " << manifest["ineligible"].size()
                << " ineligible\n";
    } else if (*train) {
      print_train_summary(g2p::run_train(load(train_o, train), train_o.resume));
    } else if (*fine) {
      print_train_summary(g2p::run_finetune(load(fine_o, fine), fine_o.resume));
    } else if (*eval) {
      std::cout << g2p::run_eval(load(eval_o, eval)).to_text();
    } else if (*predict) {
      if (!pred_config.empty()) pred.decode = g2p::load_run_config(pred_config).decode;
      if (predict->count("--beam")) pred.decode.beam_size = pred_beam;
      if (pred_input.empty()) {
        g2p::run_predict(pred, std::cin, std::cout);
      } else {
        std::ifstream in(pred_input);
        if (!in) g2p::fail(g2p::ErrorCode::kIo, "cannot read " + pred_input);
        g2p::run_predict(pred, in, std::cout);
      }
    }
  } catch (const g2p::Error& e) {
    std::cerr << "g2p: " << e.what() << "\n";
    return static_cast<int>(g2p::exit_status_for(e.code()));
  } catch (const fs::filesystem_error& e) {
    std::cerr << "g2p: " << e.what() << "\n";
    return static_cast<int>(g2p::ExitStatus::kStorage);
  } catch (const std::exception& e) {
    std::cerr << "g2p: " << e.what() << "\n";
    return static_cast<int>(g2p::ExitStatus::kData);
  }
  return 0;
}
