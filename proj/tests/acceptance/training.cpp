#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <iostream>

#include "criteria.hpp"
#include "unmt/adversarial.hpp"
#include "unmt/cipher.hpp"
#include "unmt/train.hpp"

namespace unmt::acceptance {

namespace {

[[gnu::format(printf, 1, 2)]] std::string format(const char* fmt, ...) {
  char buffer[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buffer, sizeof buffer, fmt, args);
  va_end(args);
  return buffer;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Progress goes to stderr so stdout keeps one verdict line per criterion.
void progress(const std::string& line) { std::cerr << "  " << line << std::endl; }

// The toy language pair: vocabulary 100, lengths 4..12, 20k sentences per
// side, noise-free shared embeddings and light local reordering.
const CipherData& cipher() {
  static const CipherData data = [] {
    CipherSpec spec;
    spec.reorder_rate = 0.15;
    return gen_cipher_pair(spec);
  }();
  return data;
}

TrainingConfig toy_config(std::uint64_t seed) {
  TrainingConfig c;
  c.seed = seed;
  c.model.seed = seed;
  return c;
}

// Position-wise agreement, counting the length difference as errors.
struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  void add(const TokenSequence& hyp, const TokenSequence& ref) {
    const std::size_t n = std::max(hyp.size(), ref.size());
    for (std::size_t i = 0; i < std::min(hyp.size(), ref.size()); ++i) correct += hyp[i] == ref[i];
    total += n;
  }
  Real value() const { return total ? static_cast<Real>(correct) / static_cast<Real>(total) : 0.0; }
};

Real reconstruction_accuracy(const DualModel& model, const CipherData& data, std::size_t max_len) {
  TokenAccuracy acc;
  for (Lang lang : {Lang::Source, Lang::Target}) {
    const auto& dev = lang == Lang::Source ? data.dev_source.sentences : data.dev_target.sentences;
    const auto out = greedy_reconstruct(model, lang, dev, max_len);
    for (std::size_t i = 0; i < dev.size(); ++i) acc.add(out[i], dev[i]);
  }
  return acc.value();
}

constexpr std::size_t kTestBeam = 4;
constexpr Real kTestAlpha = 0.6;
constexpr std::size_t kTestMaxLen = 100;

Real test_bleu(const DualModel& model, const CipherData& data, Lang from) {
  const auto input = data.test.side(from);
  const auto reference = data.test.side(other(from));
  return bleu(translate_corpus(model, from, input, kTestBeam, kTestAlpha, kTestMaxLen), reference);
}

struct StageOneRun {
  Real best_round_trip = 0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  Real bleu_s2t = 0;
  Real bleu_t2s = 0;
  double seconds = 0;
};

StageOneRun train_stage_one(const TrainingConfig& config) {
  const CipherData& data = cipher();
  Stopwatch clock;
  DualModel model = tie_parameters(config.model, data.embeddings_source, data.embeddings_target);
  Trainer trainer(config, model, data.train_source, data.train_target, data.dev_source, data.dev_target);
  trainer.run_stage1();
  trainer.restore_best();
  StageOneRun run;
  run.best_round_trip = trainer.state().best_score;
  run.best_step = trainer.state().best_step;
  run.steps = trainer.state().step;
  run.bleu_s2t = test_bleu(model, data, Lang::Source);
  run.bleu_t2s = test_bleu(model, data, Lang::Target);
  run.seconds = clock.seconds();
  return run;
}

}  // namespace

Verdict denoising_convergence() {
  constexpr std::size_t kMaxSteps = 5000;
  constexpr std::size_t kCheckEvery = 500;
  const CipherData& data = cipher();
  TrainingConfig config = toy_config(1);
  config.backtranslation = false;
  config.local_gan = false;
  config.global_gan = false;
  config.eval_every = 0;
  Stopwatch clock;
  DualModel model = tie_parameters(config.model, data.embeddings_source, data.embeddings_target);
  Trainer trainer(config, model, data.train_source, data.train_target, data.dev_source, data.dev_target);
  Real accuracy = 0;
  std::size_t step = 0;
  while (step < kMaxSteps) {
    trainer.stage1_step();
    ++step;
    if (step % kCheckEvery == 0) {
      accuracy = reconstruction_accuracy(model, data, config.max_len);
      progress(format("denoising step %zu: reconstruction accuracy %.4f (%.0fs)", step, accuracy, clock.seconds()));
      if (accuracy >= 0.95) break;
    }
  }
  const double seconds = clock.seconds();
  return {accuracy >= 0.95 && seconds < 15 * 60,
          format("token accuracy %.4f after %zu auto-encoder steps, %.0fs", accuracy, step, seconds)};
}

Verdict cipher_end_to_end() {
  constexpr std::size_t kSteps = 1500;
  const CipherData& data = cipher();
  Stopwatch clock;

  // Baseline: nearest neighbour per token. Its oracle is the gold
  // dictionary applied token by token, which noise-free embeddings must
  // reproduce exactly.
  std::vector<int> gold(data.vocab_source.size(), -1), gold_inverse(data.vocab_target.size(), -1);
  for (const auto& [s, t] : data.dictionary) {
    gold[s] = t;
    gold_inverse[t] = s;
  }
  auto substitute = [](const TokenSequence& x, const std::vector<int>& map) {
    TokenSequence y;
    for (int id : x) y.push_back(id >= 0 && static_cast<std::size_t>(id) < map.size() && map[id] >= 0 ? map[id] : id);
    return y;
  };
  Real baseline[2], oracle[2];
  bool baseline_matches_oracle = true;
  for (Lang from : {Lang::Source, Lang::Target}) {
    const WordByWord wbw(from == Lang::Source ? data.embeddings_source : data.embeddings_target,
                         from == Lang::Source ? data.embeddings_target : data.embeddings_source);
    std::vector<TokenSequence> hyp, gold_hyp;
    for (const auto& x : data.test.side(from)) {
      hyp.push_back(wbw.translate(x));
      gold_hyp.push_back(substitute(x, from == Lang::Source ? gold : gold_inverse));
      baseline_matches_oracle = baseline_matches_oracle && hyp.back() == gold_hyp.back();
    }
    const auto reference = data.test.side(other(from));
    baseline[index_of(from)] = bleu(hyp, reference);
    oracle[index_of(from)] = bleu(gold_hyp, reference);
  }
  progress(format("word-by-word test BLEU s2t %.2f t2s %.2f (gold substitution %.2f / %.2f)", baseline[0],
                  baseline[1], oracle[0], oracle[1]));

  TrainingConfig config = toy_config(1);
  config.stage1_steps = kSteps;
  config.eval_every = 250;
  const StageOneRun run = train_stage_one(config);
  const double seconds = clock.seconds();
  const bool pass = baseline_matches_oracle && run.bleu_s2t > baseline[0] && run.bleu_t2s > baseline[1] &&
                    run.best_round_trip >= 60 && seconds < 2 * 3600;
  return {pass, format("test BLEU s2t %.2f / t2s %.2f vs word-by-word %.2f / %.2f (%s gold oracle); "
                       "round-trip %.2f at step %zu; %.0fs",
                       run.bleu_s2t, run.bleu_t2s, baseline[0], baseline[1],
                       baseline_matches_oracle ? "matches" : "differs from", run.best_round_trip, run.best_step,
                       seconds)};
}

Verdict weight_sharing() {
  constexpr std::size_t kSteps = 1000;
  const std::size_t layers = toy_config(1).model.stack.layers;
  const std::size_t settings[] = {0, 1, layers};
  Real mean[3] = {0, 0, 0};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (std::size_t i = 0; i < 3; ++i) {
      TrainingConfig config = toy_config(seed);
      config.model.stack.shared = settings[i];
      config.stage1_steps = kSteps;
      config.eval_every = 250;
      const StageOneRun run = train_stage_one(config);
      const Real score = 0.5 * (run.bleu_s2t + run.bleu_t2s);
      mean[i] += score / 3;
      progress(format("seed %llu m=%zu: test BLEU %.2f (s2t %.2f, t2s %.2f), round-trip %.2f, %.0fs",
                      static_cast<unsigned long long>(seed), settings[i], score, run.bleu_s2t, run.bleu_t2s,
                      run.best_round_trip, run.seconds));
    }
  }
  return {mean[1] >= mean[0] && mean[1] >= mean[2],
          format("mean test BLEU over 3 seeds: m=0 %.2f, m=1 %.2f, m=%zu %.2f", mean[0], mean[1], layers, mean[2])};
}

namespace {

// A fresh latent-language classifier fitted to frozen eval-mode encodings of
// training sentences, scored on sentences it has not seen.
Real probe_accuracy(const DualModel& model, const CipherData& data, std::uint64_t seed) {
  constexpr std::size_t kFit = 1000, kHeldOut = 200, kSteps = 400, kBatch = 32;
  auto encode = [&](Lang lang, std::span<const TokenSequence> batch) {
    NoGradGuard guard;
    return model.encode(lang, batch, Mode::Eval);
  };
  const auto& s = data.train_source.sentences;
  const auto& t = data.train_target.sentences;
  Rng rng(seed);
  LocalDiscriminator probe = LocalDiscriminator::init(model.config().stack.width, 256, rng);
  Adam adam(AdamConfig{5e-4});
  std::uniform_int_distribution<std::size_t> pick(0, kFit - 1);
  for (std::size_t step = 0; step < kSteps; ++step) {
    std::vector<TokenSequence> bs, bt;
    for (std::size_t i = 0; i < kBatch; ++i) {
      bs.push_back(s[pick(rng)]);
      bt.push_back(t[pick(rng)]);
    }
    const Latent ls = encode(Lang::Source, bs), lt = encode(Lang::Target, bt);
    adam.step(probe.parameters(), backward(local_disc_loss(ls, lt, probe)));
  }
  const std::span<const TokenSequence> hs(s.data() + kFit, kHeldOut), ht(t.data() + kFit, kHeldOut);
  return 0.5 * (local_disc_accuracy(encode(Lang::Source, hs), probe) +
                local_disc_accuracy(encode(Lang::Target, ht), probe));
}

}  // namespace

Verdict local_gan_dynamic() {
  constexpr std::size_t kSteps = 600;
  const CipherData& data = cipher();
  Real mean_without = 0, mean_with = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (bool fool : {false, true}) {
      Stopwatch clock;
      TrainingConfig config = toy_config(seed);
      config.fool_weight = fool ? 1.0 : 0.0;
      config.eval_every = 0;
      DualModel model = tie_parameters(config.model, data.embeddings_source, data.embeddings_target);
      Trainer trainer(config, model, data.train_source, data.train_target, data.dev_source, data.dev_target);
      for (std::size_t step = 0; step < kSteps; ++step) trainer.stage1_step();
      const Real acc = probe_accuracy(model, data, 100 + seed);
      (fool ? mean_with : mean_without) += acc / 3;
      progress(format("seed %llu fool losses %s: probe accuracy %.3f after %zu steps, %.0fs",
                      static_cast<unsigned long long>(seed), fool ? "on" : "off", acc, kSteps, clock.seconds()));
    }
  }
  const bool pass = mean_without >= 0.85 && mean_with >= 0.40 && mean_with <= 0.70;
  return {pass, format("mean probe accuracy over 3 seeds at step %zu: %.3f without fool losses, %.3f with", kSteps,
                       mean_without, mean_with)};
}

}  // namespace unmt::acceptance
