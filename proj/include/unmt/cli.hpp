#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "unmt/checkpoint.hpp"
#include "unmt/config.hpp"
#include "unmt/corpus.hpp"
#include "unmt/embeddings.hpp"
#include "unmt/train.hpp"

namespace unmt::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

inline constexpr const char* kEnvPrefix = "UNMT_";

// File names written by `synth` and read by `train`, `roundtrip`, `ablate`.
const std::vector<std::string>& dataset_files();

// Everything a training run consumes: the model and training keys plus where
// to read data and write results.
struct RunConfig {
  TrainingConfig training;
  std::string data;
  std::string out;
  // stage1, stage2 or both.
  std::string stage = "both";
  // Steps between state checkpoints; 0 writes one after each evaluation.
  std::size_t checkpoint_every = 0;

  void bind(KeyTable& table);
  void validate() const;
};

// Applies `file` (if non-empty), then PREFIX_* environment variables, then
// `overrides`. Returns the table's canonical dump.
std::string merge_run_config(RunConfig& config, const std::string& file, char** env,
                             const std::map<std::string, std::string>& overrides);

struct Dataset {
  Vocab vocab[2];
  MonolingualCorpus train[2];
  MonolingualCorpus dev[2];
  ParallelCorpus test;
  EmbeddingTable embeddings[2];
};

// Loads a synth-style directory. Missing files are reported together.
Dataset load_dataset(const std::filesystem::path& dir);

// Vocabularies travel inside checkpoints so translation needs no data dir.
void attach_vocab(Checkpoint& checkpoint, const Vocab& source, const Vocab& target);
Vocab checkpoint_vocab(const Checkpoint& checkpoint, Lang lang);

// BLEU score from a report line such as "BLEU = 12.34, ...".
double parse_bleu_report(const std::string& line);

struct RunOutcome {
  std::size_t stage1_steps = 0;
  std::size_t stage2_steps = 0;
  bool early_stopped = false;
  bool stage2_ran = false;
  Real best_round_trip = 0;
  std::size_t best_step = 0;
};

// Test BLEU of `model` on aligned pairs in one direction.
Real test_bleu(const DualModel& model, const ParallelCorpus& test, Lang from, std::size_t beam, Real alpha,
               std::size_t max_len);

// Dispatches argv to a subcommand and maps errors onto exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, char** env);

}  // namespace unmt::cli
