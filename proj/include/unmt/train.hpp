#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unmt/adversarial.hpp"
#include "unmt/config.hpp"
#include "unmt/corpus.hpp"
#include "unmt/decode.hpp"
#include "unmt/noise.hpp"

namespace unmt {

struct TrainingConfig {
  ModelConfig model;
  NoiseSchedule noise;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  std::size_t warmup = 400;
  double clip_norm = 5.0;
  // Longest generated sentence; also the global discriminators' length T.
  std::size_t max_len = 16;
  std::size_t eval_every = 500;
  // Dev sentences per language used for round-trip BLEU; 0 means all.
  std::size_t eval_size = 0;
  // 1 selects greedy decoding for round-trip evaluation.
  std::size_t eval_beam = 1;
  double alpha = 0.6;
  std::size_t stage1_steps = 20000;
  std::size_t stage2_steps = 2000;

  bool denoising = true;
  bool backtranslation = true;
  bool local_gan = true;
  bool global_gan = true;
  // Weight of the encoder fool losses; 0 keeps the discriminator update only.
  double fool_weight = 1.0;
  std::size_t local_hidden = 256;
  double local_learning_rate = 5e-4;

  std::string kernels = "2x64,3x64,4x64";
  double global_learning_rate = 1e-3;
  std::size_t global_pretrain_steps = 1000;
  std::size_t global_batch = 32;
  // Discriminator batches per generator batch in stage 2.
  std::size_t disc_per_gen = 1;
  double pg_learning_rate = 1e-4;

  std::uint64_t seed = 1;

  void validate() const;
  // Declares every key on `table`, bound to this object's fields.
  void bind(KeyTable& table);
};

// Round-trip BLEU for each direction and their mean.
struct RoundTripScore {
  Real source = 0;
  Real target = 0;
  Real mean = 0;
};

std::vector<TokenSequence> translate_corpus(const DualModel& model, Lang from,
                                            std::span<const TokenSequence> sentences,
                                            std::size_t beam, Real alpha, std::size_t max_len);

RoundTripScore round_trip_bleu(const DualModel& model, std::span<const TokenSequence> dev_source,
                               std::span<const TokenSequence> dev_target, std::size_t max_len,
                               std::size_t beam = 1, Real alpha = 0.6);

// True iff each of the last `patience` scores fails to exceed the best score
// recorded before it (strict comparison).
bool early_stop(std::span<const Real> history, std::size_t patience = 10);

// Cosine nearest neighbour in the other language's table; reserved and
// out-of-table ids are copied through, ties go to the lowest id.
class WordByWord {
 public:
  WordByWord(const EmbeddingTable& from, const EmbeddingTable& to);
  int nearest(int id) const;
  TokenSequence translate(const TokenSequence& sentence) const;

 private:
  std::vector<int> map_;
};

TokenSequence word_by_word_translate(const TokenSequence& sentence, const EmbeddingTable& from,
                                     const EmbeddingTable& to);

struct PseudoParallelBatch {
  // Inputs are machine translations in `input_lang`, targets the originals.
  Lang input_lang = Lang::Target;
  std::vector<TokenSequence> inputs;
  std::vector<TokenSequence> targets;
  std::size_t dropped_empty = 0;
};

// Greedy translations of monolingual `batch` (in `lang`), paired so the model
// learns to reconstruct the originals from them.
PseudoParallelBatch backtranslate_batch(Lang lang, std::span<const TokenSequence> batch,
                                        const DualModel& model, std::size_t max_len);

// Cyclic shuffled reader; each pass uses a fresh order derived from the seed
// and the pass number.
class BatchStream {
 public:
  BatchStream() = default;
  BatchStream(const std::vector<TokenSequence>* data, std::uint64_t seed);
  std::vector<TokenSequence> next(std::size_t count);
  std::size_t epoch() const { return epoch_; }
  std::size_t position() const { return position_; }
  void seek(std::size_t epoch, std::size_t position);

 private:
  void reshuffle();
  const std::vector<TokenSequence>* data_ = nullptr;
  std::uint64_t seed_ = 0;
  std::vector<std::size_t> order_;
  std::size_t epoch_ = 0;
  std::size_t position_ = 0;
};

// One metrics row; unset cells stay empty in the CSV.
struct MetricsRow {
  std::size_t step = 0;
  int stage = 1;
  std::optional<Real> ae_source, ae_target, bt_source, bt_target;
  std::optional<Real> local_disc, local_disc_accuracy, fool_source, fool_target;
  std::optional<Real> noise_bound;
  std::optional<Real> round_trip;
  std::optional<Real> g1_disc, g2_disc, g1_reward, g2_reward, g1_degenerate, g2_degenerate;
};

constexpr int kMetricsVersion = 1;
std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

struct TrainingState {
  int stage = 1;
  std::size_t step = 0;
  std::size_t stage2_step = 0;
  std::vector<Real> history;
  std::vector<std::size_t> history_steps;
  Real best_score = -1;
  std::size_t best_step = 0;
  bool globals_pretrained = false;
};

// Unsupervised two-stage trainer. Only monolingual corpora are accepted.
class Trainer {
 public:
  Trainer(TrainingConfig config, DualModel& model, MonolingualCorpus source,
          MonolingualCorpus target, MonolingualCorpus dev_source, MonolingualCorpus dev_target);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainingConfig& config() const { return config_; }
  const TrainingState& state() const { return state_; }
  DualModel& model() { return model_; }
  LocalDiscriminator& local_discriminator() { return local_; }
  GlobalDiscriminator* global_discriminator(Lang lang) { return globals_[index_of(lang)].get(); }

  // Receives every metrics row as it is produced.
  std::function<void(const MetricsRow&)> on_metrics;
  // Called after an evaluation that set a new best score.
  std::function<void()> on_best;

  MetricsRow stage1_step();
  // Round-trip BLEU on the dev sets; appends to the history and snapshots
  // the parameters when the score strictly improves.
  Real evaluate();
  bool stage1_converged() const { return early_stop(state_.history); }
  // Steps until early stopping or the step budget; evaluates every
  // eval_every steps. Returns true if early stopping fired.
  bool run_stage1();

  // Builds and pretrains both sentence discriminators.
  void prepare_stage2();
  MetricsRow stage2_step();
  void run_stage2();

  // Copies the best snapshot back into the model.
  void restore_best();

  Checkpoint state_checkpoint() const;
  void load_state(const Checkpoint& checkpoint);

 private:
  Real autoencoder_batch(Lang lang);
  std::optional<Real> backtranslation_batch(Lang lang);
  void local_gan_batch(MetricsRow& row);
  void gan_batch(Lang generated, MetricsRow& row);
  void emit(const MetricsRow& row);
  void ensure_globals();
  std::vector<Tensor> unique(std::vector<Tensor> params) const;

  TrainingConfig config_;
  DualModel& model_;
  MonolingualCorpus corpora_[2];
  MonolingualCorpus dev_[2];
  BatchStream streams_[2];
  Rng rng_;
  Adam adam_;
  Adam local_adam_;
  Adam pg_adam_;
  Adam global_adam_[2];
  LocalDiscriminator local_;
  std::unique_ptr<GlobalDiscriminator> globals_[2];
  TrainingState state_;
  std::vector<std::vector<Real>> best_;
};

// The model part of a training-state checkpoint, loadable with load_model.
// Model checkpoints pass through unchanged.
Checkpoint model_part(const Checkpoint& checkpoint);

struct SupervisedConfig {
  std::size_t steps = 1000;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  std::size_t warmup = 400;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
};

// Teacher-forced training in both directions on aligned pairs. Returns the
// mean of the two directional losses per step.
std::vector<Real> supervised_train(const ParallelCorpus& pairs, DualModel& model,
                                   const SupervisedConfig& config);

}  // namespace unmt
