#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_support.hpp"
#include "unmt/cipher.hpp"
#include "unmt/errors.hpp"
#include "unmt/train.hpp"

using namespace unmt;
using unmt::testing::tiny_model_config;

namespace {

CipherData small_cipher() {
  CipherSpec s;
  s.vocab_size = 24;
  s.min_length = 3;
  s.max_length = 6;
  s.train_size = 300;
  s.dev_size = 12;
  s.test_size = 12;
  s.embedding_dim = 8;
  s.reorder_rate = 0.15;
  return gen_cipher_pair(s);
}

TrainingConfig small_config() {
  TrainingConfig c;
  c.model = tiny_model_config(2, 1);
  c.batch = 4;
  c.max_len = 8;
  c.eval_every = 0;
  c.local_hidden = 8;
  c.kernels = "2x4,3x4";
  c.global_pretrain_steps = 10;
  c.global_batch = 8;
  c.warmup = 10;
  return c;
}

struct Fixture {
  CipherData data = small_cipher();
  TrainingConfig config = small_config();
  DualModel model = tie_parameters(config.model, data.embeddings_source, data.embeddings_target);

  std::unique_ptr<Trainer> trainer() {
    return std::make_unique<Trainer>(config, model, data.train_source, data.train_target, data.dev_source,
                                     data.dev_target);
  }
};

std::vector<std::vector<Real>> snapshot(const DualModel& m) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

// Brute-force restatement of the stopping rule: each of the last p scores
// fails to beat everything before it.
bool rescan(const std::vector<Real>& h, std::size_t p) {
  if (h.size() <= p) return false;
  for (std::size_t i = h.size() - p; i < h.size(); ++i) {
    bool improved = true;
    for (std::size_t j = 0; j < i; ++j) improved = improved && h[i] > h[j];
    if (improved) return false;
  }
  return true;
}

}  // namespace

TEST(EarlyStop, Examples) {
  EXPECT_FALSE(early_stop(std::vector<Real>{10, 11, 12}));
  std::vector<Real> h{30};
  for (int i = 0; i < 9; ++i) h.push_back(20 + i);
  EXPECT_FALSE(early_stop(h));
  h.push_back(29.99);
  EXPECT_TRUE(early_stop(h));
  EXPECT_FALSE(early_stop(std::vector<Real>{}));
  std::vector<Real> ties(11, 5.0);
  EXPECT_TRUE(early_stop(ties));
}

TEST(EarlyStop, RandomHistoriesAgreeWithRescan) {
  Rng rng(1);
  std::uniform_int_distribution<int> len(0, 30), score(0, 8);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Real> h(len(rng));
    for (auto& x : h) x = score(rng);
    for (std::size_t p : {1u, 3u, 10u}) ASSERT_EQ(early_stop(h, p), rescan(h, p)) << trial;
  }
}

TEST(WordByWordBaseline, CipherTestSetBelowPerfectWithReordering) {
  CipherData d = small_cipher();
  std::vector<TokenSequence> hyp, ref;
  for (const auto& p : d.test.pairs) {
    hyp.push_back(word_by_word_translate(p.source, d.embeddings_source, d.embeddings_target));
    ref.push_back(p.target);
  }
  EXPECT_LT(bleu(hyp, ref), 100.0);
}

TEST(BackTranslation, PairsReconstructOriginalsFromGreedyTranslations) {
  Fixture f;
  std::vector<TokenSequence> batch(f.data.train_source.sentences.begin(), f.data.train_source.sentences.begin() + 6);
  PseudoParallelBatch b = backtranslate_batch(Lang::Source, batch, f.model, 8);
  EXPECT_EQ(b.input_lang, Lang::Target);
  auto greedy = greedy_decode(f.model, Lang::Source, batch, 8);
  std::size_t k = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (greedy[i].empty()) continue;
    EXPECT_EQ(b.inputs[k], greedy[i]);
    EXPECT_EQ(b.targets[k], batch[i]);
    ++k;
  }
  EXPECT_EQ(k + b.dropped_empty, batch.size());
  PseudoParallelBatch again = backtranslate_batch(Lang::Source, batch, f.model, 8);
  EXPECT_EQ(again.inputs, b.inputs);
  std::vector<TokenSequence> none;
  EXPECT_THROW(backtranslate_batch(Lang::Source, none, f.model, 8), ContractError);
}

TEST(Stage1, OneStepRecordsAllThreeLossFamilies) {
  Fixture f;
  auto t = f.trainer();
  std::vector<MetricsRow> rows;
  t->on_metrics = [&](const MetricsRow& r) { rows.push_back(r); };
  MetricsRow r = t->stage1_step();
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(r.ae_source && r.ae_target);
  EXPECT_TRUE(r.bt_source && r.bt_target);
  EXPECT_TRUE(r.local_disc && r.fool_source && r.fool_target && r.local_disc_accuracy);
  EXPECT_FALSE(r.g1_reward);
  EXPECT_EQ(r.step, 1u);
  EXPECT_EQ(t->state().step, 1u);
}

TEST(Stage1, NoiseBoundFollowsSchedule) {
  Fixture f;
  f.config.noise = NoiseSchedule{3, 2};
  f.config.backtranslation = false;
  f.config.local_gan = false;
  auto t = f.trainer();
  for (std::size_t step = 0; step < 6; ++step) {
    MetricsRow r = t->stage1_step();
    EXPECT_EQ(*r.noise_bound, 3.0 * (step / 2 + 1));
  }
}

TEST(Stage1, DisablingLocalGanLeavesItsColumnsEmpty) {
  Fixture f;
  f.config.local_gan = false;
  auto t = f.trainer();
  MetricsRow r = t->stage1_step();
  EXPECT_FALSE(r.local_disc || r.fool_source || r.fool_target);
  std::string line = metrics_line(r);
  const std::string header = metrics_header();
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), std::count(header.begin(), header.end(), ','));
}

TEST(Stage1, FoolWeightZeroKeepsDiscriminatorOnly) {
  Fixture f;
  f.config.fool_weight = 0;
  f.config.denoising = false;
  f.config.backtranslation = false;
  auto t = f.trainer();
  const auto before = snapshot(f.model);
  const auto d_before = t->local_discriminator().w1.values()[0];
  t->stage1_step();
  EXPECT_EQ(snapshot(f.model), before);
  EXPECT_NE(t->local_discriminator().w1.values()[0], d_before);
}

TEST(Stage1, SameSeedGivesIdenticalTrace) {
  std::string traces[2];
  for (auto& trace : traces) {
    Fixture f;
    auto t = f.trainer();
    t->on_metrics = [&](const MetricsRow& r) { trace += metrics_line(r) + "\n"; };
    for (int i = 0; i < 4; ++i) t->stage1_step();
  }
  EXPECT_EQ(traces[0], traces[1]);
  EXPECT_FALSE(traces[0].empty());
}

TEST(Stage1, ResumeFromCheckpointReproducesTrace) {
  std::string full, resumed;
  Checkpoint mid, mid_model;
  {
    Fixture f;
    auto t = f.trainer();
    for (int i = 0; i < 3; ++i) t->stage1_step();
    mid = t->state_checkpoint();
    mid_model = model_checkpoint(f.model);
    t->on_metrics = [&](const MetricsRow& r) { full += metrics_line(r) + "\n"; };
    for (int i = 0; i < 3; ++i) t->stage1_step();
  }
  {
    Fixture f;
    DualModel model = load_model(mid_model);
    Trainer t(f.config, model, f.data.train_source, f.data.train_target, f.data.dev_source, f.data.dev_target);
    t.load_state(mid);
    t.on_metrics = [&](const MetricsRow& r) { resumed += metrics_line(r) + "\n"; };
    for (int i = 0; i < 3; ++i) t.stage1_step();
  }
  EXPECT_EQ(full, resumed);
}

TEST(Stage2, UnreachableBeforeEarlyStop) {
  Fixture f;
  auto t = f.trainer();
  EXPECT_THROW(t->prepare_stage2(), ContractError);
  EXPECT_THROW(t->stage2_step(), ContractError);
  t->evaluate();
  EXPECT_THROW(t->prepare_stage2(), ContractError);
}

TEST(Stage2, EntersAfterTenFlatEvaluationsAndLogsBoundedRewards) {
  Fixture f;
  auto t = f.trainer();
  for (int i = 0; i < 11; ++i) t->evaluate();
  ASSERT_TRUE(t->stage1_converged());
  t->prepare_stage2();
  EXPECT_EQ(t->state().stage, 2);
  ASSERT_NE(t->global_discriminator(Lang::Source), nullptr);
  EXPECT_TRUE(t->global_discriminator(Lang::Target)->pretrained);
  for (int i = 0; i < 3; ++i) {
    MetricsRow r = t->stage2_step();
    ASSERT_TRUE(r.g1_reward && r.g2_reward);
    EXPECT_GE(*r.g1_reward, 0.0);
    EXPECT_LE(*r.g1_reward, 1.0);
    EXPECT_GE(*r.g2_reward, 0.0);
    EXPECT_LE(*r.g2_reward, 1.0);
    EXPECT_EQ(r.stage, 2);
  }
  EXPECT_THROW(t->stage1_step(), ContractError);
}

TEST(Stage2, FirstGlobalGanTouchesOnlyTargetEncoderSourceDecoderPath) {
  Fixture f;
  Rng rng(3);
  GlobalDiscriminator d(8, 8, parse_kernel_spec("2x4"), rng);
  d.pretrained = true;
  Adam adam(AdamConfig{0.01});
  std::vector<TokenSequence> batch(f.data.train_target.sentences.begin(), f.data.train_target.sentences.begin() + 8);
  std::map<std::string, std::vector<Real>> before;
  for (const auto& p : f.model.parameters()) before[p.name] = {p.tensor.values().begin(), p.tensor.values().end()};
  policy_gradient_update(f.model, Lang::Target, d, batch, adam, rng, 8);
  std::set<NodeId> allowed;
  for (const auto& p : f.model.path_parameters(Lang::Target, Lang::Source)) allowed.insert(p.id());
  std::size_t changed = 0;
  for (const auto& p : f.model.parameters()) {
    const bool same = std::vector<Real>(p.tensor.values().begin(), p.tensor.values().end()) == before[p.name];
    if (!allowed.count(p.tensor.id())) {
      EXPECT_TRUE(same) << p.name;
    }
    if (!same) ++changed;
  }
  EXPECT_GT(changed, 0u);
}

TEST(Stage2, UniformDiscriminatorLeavesGeneratorUnchanged) {
  Fixture f;
  Rng rng(4);
  GlobalDiscriminator d(8, 8, parse_kernel_spec("2x4"), rng);
  d.pretrained = true;
  for (auto& v : Tensor(d.projection()).mutable_values()) v = 0.0;
  // Make empty samples (reward 0) impossible.
  Tensor eos_bias = f.model.output(Lang::Source).b;
  eos_bias.mutable_values()[Vocab::kEos] = -1e3;
  Adam adam(AdamConfig{0.01});
  const auto before = snapshot(f.model);
  std::vector<TokenSequence> batch(f.data.train_target.sentences.begin(), f.data.train_target.sentences.begin() + 8);
  for (int step = 0; step < 50; ++step) {
    auto r = policy_gradient_update(f.model, Lang::Target, d, batch, adam, rng, 8);
    ASSERT_EQ(r.degenerate, 0u);
    for (Real x : r.rewards) ASSERT_EQ(x, 0.5);
  }
  EXPECT_EQ(snapshot(f.model), before);
}

TEST(RoundTrip, AverageOfDirectionsAndEmptyDevRejected) {
  Fixture f;
  RoundTripScore s = round_trip_bleu(f.model, f.data.dev_source.sentences, f.data.dev_target.sentences, 8);
  EXPECT_DOUBLE_EQ(s.mean, (s.source + s.target) / 2);
  std::vector<TokenSequence> none;
  EXPECT_THROW(round_trip_bleu(f.model, none, f.data.dev_target.sentences, 8), ConfigError);
}

TEST(RoundTrip, UntrainedModelScoresNearZero) {
  Fixture f;
  EXPECT_LT(round_trip_bleu(f.model, f.data.dev_source.sentences, f.data.dev_target.sentences, 8).mean, 5.0);
}

TEST(Supervised, LossDecreasesAndIsDeterministic) {
  std::vector<Real> runs[2];
  for (auto& losses : runs) {
    Fixture f;
    SupervisedConfig sc;
    sc.steps = 100;
    sc.batch = 8;
    sc.warmup = 10;
    losses = supervised_train(f.data.test, f.model, sc);
  }
  ASSERT_EQ(runs[0].size(), 100u);
  EXPECT_EQ(runs[0], runs[1]);
  Real head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += runs[0][i];
    tail += runs[0][90 + i];
  }
  EXPECT_LT(tail, 0.8 * head);
}

TEST(Metrics, HeaderIsVersionedAndFixed) {
  EXPECT_EQ(metrics_header(),
            "# unmt-metrics v1\nstep,stage,ae_s,ae_t,bt_s,bt_t,local_d,local_d_acc,fool_s,fool_t,noise_bound,"
            "round_trip_bleu,g1_d,g2_d,g1_reward,g2_reward,g1_degenerate,g2_degenerate");
  MetricsRow r;
  r.step = 7;
  r.ae_source = 1.5;
  EXPECT_EQ(metrics_line(r).substr(0, 10), "7,1,1.5,,,");
}

TEST(BatchStream, CyclesThroughEveryItemEachEpoch) {
  std::vector<TokenSequence> data;
  for (int i = 0; i < 10; ++i) data.push_back({i + 4});
  BatchStream s(&data, 3);
  std::multiset<int> seen;
  for (int i = 0; i < 5; ++i)
    for (const auto& x : s.next(4)) seen.insert(x[0]);
  for (int i = 4; i < 14; ++i) EXPECT_EQ(seen.count(i), 2u);
  BatchStream t(&data, 3);
  t.seek(s.epoch(), s.position());
  EXPECT_EQ(t.next(3), s.next(3));
}
