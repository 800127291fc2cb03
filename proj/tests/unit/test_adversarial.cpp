#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_support.hpp"
#include "unmt/adversarial.hpp"
#include "unmt/errors.hpp"

using namespace unmt;
using unmt::testing::grad_check;
using unmt::testing::random_sentence;
using unmt::testing::random_table;
using unmt::testing::random_tensor;
using unmt::testing::tiny_model_config;

namespace {

Latent make_latent(const Tensor& states, std::vector<std::size_t> lengths, Lang lang) {
  return Latent{states, Segments::from_lengths(lengths), lang};
}

void zero_out(const std::vector<Tensor>& ts) {
  for (Tensor t : ts)
    for (auto& v : t.mutable_values()) v = 0.0;
}

// Table whose content ids 4.. map to one-hot rows and reserved ids to zero.
EmbeddingTable one_hot_table(std::size_t symbols) {
  EmbeddingTable t;
  t.matrix = Tensor::zeros({Vocab::kReserved + symbols, symbols});
  for (std::size_t i = 0; i < symbols; ++i) t.matrix.mutable_values()[(Vocab::kReserved + i) * symbols + i] = 1.0;
  return t;
}

bool contains_pattern(const TokenSequence& s, const TokenSequence& p) {
  return std::search(s.begin(), s.end(), p.begin(), p.end()) != s.end();
}

}  // namespace

TEST(LocalDisc, ZeroWeightsGiveHalfHalf) {
  Rng rng(1);
  auto d = LocalDiscriminator::init(6, 16, rng);
  zero_out(d.parameters());
  Tensor p = local_disc_forward(make_latent(random_tensor({7, 6}, rng, false), {3, 4}, Lang::Source), d);
  for (Real v : p.values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(LocalDisc, ProbabilitiesSumToOne) {
  Rng rng(2);
  auto d = LocalDiscriminator::init(6, 16, rng);
  Tensor p = local_disc_forward(make_latent(random_tensor({9, 6}, rng, false, 5.0), {2, 3, 4}, Lang::Target), d);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(p.at(r, 0) + p.at(r, 1), 1.0, 1e-12);
}

TEST(LocalDisc, WidthMismatchIsDimensionError) {
  Rng rng(3);
  auto d = LocalDiscriminator::init(6, 16, rng);
  EXPECT_THROW(local_disc_forward(make_latent(Tensor::zeros({3, 5}), {3}, Lang::Source), d), DimensionError);
}

TEST(LocalDisc, UninformativeDiscriminatorLosses) {
  Rng rng(4);
  auto d = LocalDiscriminator::init(4, 8, rng);
  zero_out(d.parameters());
  for (int trial = 0; trial < 5; ++trial) {
    Latent s = make_latent(random_tensor({5, 4}, rng, false), {2, 3}, Lang::Source);
    Latent t = make_latent(random_tensor({4, 4}, rng, false), {4}, Lang::Target);
    const Real disc = local_disc_loss(s, t, d).item();
    const Real fool_s = encoder_fool_loss(s, d).item(), fool_t = encoder_fool_loss(t, d).item();
    EXPECT_NEAR(disc, 2 * std::log(2.0), 1e-12);
    EXPECT_NEAR(fool_s, std::log(2.0), 1e-12);
    EXPECT_NEAR(fool_t, std::log(2.0), 1e-12);
    EXPECT_NEAR(disc / 2 + fool_s, 2 * std::log(2.0), 1e-12);
  }
}

TEST(LocalDisc, PerfectDiscriminatorHasZeroLossAndFoolTargetsOtherLanguage) {
  LocalDiscriminator d{Tensor::matrix({{1, 0}, {0, 1}}), Tensor::zeros({2}), Tensor::matrix({{1, 0}, {0, 1}}),
                       Tensor::zeros({2}), Tensor::matrix({{100, 0}, {0, 100}}), Tensor::zeros({2})};
  Latent s = make_latent(Tensor::matrix({{1, 0}, {1, 0}}), {2}, Lang::Source);
  Latent t = make_latent(Tensor::matrix({{0, 1}}), {1}, Lang::Target);
  EXPECT_NEAR(local_disc_loss(s, t, d).item(), 0.0, 1e-12);
  EXPECT_NEAR(encoder_fool_loss(s, d).item(), 100.0, 1e-9);
  // Swapping the output rows makes the discriminator call source latents "t".
  d.w3 = Tensor::matrix({{0, 100}, {100, 0}});
  EXPECT_NEAR(encoder_fool_loss(s, d).item(), 0.0, 1e-12);
}

TEST(LocalDisc, LossGradientMatchesFiniteDifferences) {
  Rng rng(5);
  auto d = LocalDiscriminator::init(4, 6, rng);
  Latent s = make_latent(random_tensor({5, 4}, rng, false), {2, 3}, Lang::Source);
  Latent t = make_latent(random_tensor({3, 4}, rng, false), {1, 2}, Lang::Target);
  EXPECT_LT(grad_check([&] { return local_disc_loss(s, t, d); }, d.parameters()).max_relative_error, 1e-5);
}

TEST(LocalDisc, EmptyBatchIsContractError) {
  Rng rng(6);
  auto d = LocalDiscriminator::init(4, 6, rng);
  Latent empty = make_latent(Tensor::zeros({0, 4}), {}, Lang::Source);
  Latent t = make_latent(random_tensor({3, 4}, rng, false), {3}, Lang::Target);
  EXPECT_THROW(local_disc_loss(empty, t, d), ContractError);
  EXPECT_THROW(encoder_fool_loss(empty, d), ContractError);
}

TEST(LocalDisc, GradientPartitionBetweenEncoderAndDiscriminator) {
  Rng rng(7);
  DualModel m = tie_parameters(tiny_model_config(2, 1), random_table(9, 8, rng), random_table(9, 8, rng));
  auto d = LocalDiscriminator::init(8, 16, rng);
  std::vector<TokenSequence> xs{random_sentence(4, 9, rng), random_sentence(2, 9, rng)};
  Latent s = m.encode(Lang::Source, xs, Mode::Train, &rng);
  Latent t = m.encode(Lang::Target, xs, Mode::Train, &rng);

  GradientMap disc = backward(local_disc_loss(s, t, d));
  for (const auto& p : d.parameters()) EXPECT_TRUE(disc.contains(p));
  for (const auto& p : m.parameters()) EXPECT_FALSE(disc.contains(p.tensor)) << p.name;

  GradientMap fool = backward(add(encoder_fool_loss(s, d.frozen()), encoder_fool_loss(t, d.frozen())));
  for (const auto& p : d.parameters()) EXPECT_FALSE(fool.contains(p));
  EXPECT_TRUE(fool.contains(m.gate().w2));
  EXPECT_TRUE(fool.contains(m.encoder_layers(Lang::Target)[0].ff.w1));
  EXPECT_FALSE(fool.contains(m.decoder_layers(Lang::Target)[1].ff.w1));
}

TEST(LocalDisc, LearnsLinearlySeparableLatents) {
  Rng rng(8);
  auto d = LocalDiscriminator::init(4, 32, rng);
  Adam adam(AdamConfig{5e-3});
  std::normal_distribution<Real> noise(0, 0.3);
  auto batch = [&](Lang lang, std::size_t sentences) {
    std::vector<std::size_t> lengths;
    std::vector<Real> v;
    for (std::size_t i = 0; i < sentences; ++i) {
      lengths.push_back(1 + i % 4);
      for (std::size_t r = 0; r < lengths.back(); ++r)
        for (std::size_t c = 0; c < 4; ++c)
          v.push_back(noise(rng) + (c == 0 ? (lang == Lang::Source ? 1.0 : -1.0) : 0.0));
    }
    return make_latent(Tensor::from_values({v.size() / 4, 4}, v), lengths, lang);
  };
  for (int step = 0; step < 200; ++step) adam.step(d.parameters(), backward(local_disc_loss(batch(Lang::Source, 16), batch(Lang::Target, 16), d)));
  const Real acc = (local_disc_accuracy(batch(Lang::Source, 500), d) + local_disc_accuracy(batch(Lang::Target, 500), d)) / 2;
  EXPECT_GE(acc, 0.99);
}

TEST(KernelSpec, ParseAndPrintRoundTrip) {
  auto k = parse_kernel_spec("2x64,3x8");
  ASSERT_EQ(k.size(), 2u);
  EXPECT_EQ(k[1].window, 3u);
  EXPECT_EQ(k[1].count, 8u);
  EXPECT_EQ(kernel_spec_string(k), "2x64,3x8");
  EXPECT_THROW(parse_kernel_spec("3by4"), ConfigError);
  EXPECT_THROW(parse_kernel_spec(""), ConfigError);
}

TEST(PadToFixed, Examples) {
  EmbeddingTable table = one_hot_table(3);
  Tensor full = pad_to_fixed({4, 5, 6}, 3, table);
  EXPECT_EQ(full.rows(), 3u);
  EXPECT_EQ(full.at(2, 2), 1.0);
  Tensor empty = pad_to_fixed({}, 4, table);
  for (Real v : empty.values()) EXPECT_EQ(v, 0.0);
  Tensor part = pad_to_fixed({6, 4, 5}, 5, table);
  EXPECT_EQ(part.at(0, 2), 1.0);
  for (std::size_t r = 3; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(part.at(r, c), 0.0);
  EXPECT_THROW(pad_to_fixed({4, 4, 4, 4}, 3, table), DataError);
}

TEST(GlobalDisc, WindowLongerThanLengthIsConfigError) {
  Rng rng(9);
  EXPECT_THROW(GlobalDiscriminator(3, 4, {{4, 2}}, rng), ConfigError);
}

TEST(GlobalDisc, ZeroInputGivesHalfHalf) {
  Rng rng(10);
  GlobalDiscriminator d(5, 3, {{2, 4}, {3, 4}}, rng);
  Tensor p = d.forward(Tensor::zeros({10, 3}), Mode::Eval);
  for (Real v : p.values()) EXPECT_DOUBLE_EQ(v, 0.5);
  Tensor f = d.pooled_features(Tensor::zeros({5, 3}), Mode::Eval);
  EXPECT_EQ(f.cols(), 8u);
  for (Real v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(GlobalDisc, WindowThreeOnLengthFiveGivesThreePositions) {
  Tensor x = Tensor::zeros({5, 2});
  EXPECT_EQ(unfold_windows(x, 5, 3).rows(), 3u);
  EXPECT_EQ(unfold_windows(Tensor::zeros({10, 2}), 5, 3).rows(), 6u);
}

TEST(GlobalDisc, DetectorKernelFiresExactlyWhenPatternOccurs) {
  const std::size_t symbols = 3, length = 5;
  EmbeddingTable table = one_hot_table(symbols);
  const TokenSequence pattern{4, 6, 5};
  Rng rng(11);
  GlobalDiscriminator d(length, symbols, {{3, 1}}, rng);
  auto& k = d.kernels()[0];
  auto w = k.weight.mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < pattern.size(); ++i) w[i * symbols + (pattern[i] - Vocab::kReserved)] = 1.0;
  k.bias.mutable_values()[0] = -2.5;

  std::vector<TokenSequence> all{{}};
  std::size_t checked = 0;
  for (std::size_t n = 0; n <= length; ++n) {
    std::vector<TokenSequence> next;
    for (const auto& s : all) {
      const bool fires = d.pooled_features(pad_to_fixed(s, length, table), Mode::Eval).item() > 0;
      ASSERT_EQ(fires, contains_pattern(s, pattern)) << n;
      ++checked;
      for (int t = 4; t < 4 + static_cast<int>(symbols); ++t) {
        next.push_back(s);
        next.back().push_back(t);
      }
    }
    all = std::move(next);
  }
  EXPECT_EQ(checked, 1u + 3 + 9 + 27 + 81 + 243);
}

TEST(GlobalDisc, PaddingRowsDoNotMatter) {
  Rng rng(12);
  EmbeddingTable table = random_table(10, 4, rng);
  GlobalDiscriminator d(8, 4, {{2, 5}, {3, 5}}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    TokenSequence s = random_sentence(1 + trial % 6, 10, rng);
    Tensor a = d.forward(pad_to_fixed(s, 8, table), Mode::Eval);
    TokenSequence padded = s;
    padded.push_back(Vocab::kPad);
    Tensor b = d.forward(pad_to_fixed(padded, 8, table), Mode::Eval);
    EXPECT_EQ(a[0], b[0]);
    Tensor x = pad_to_fixed(s, 8, table);
    // Swap the last two (pad) rows.
    Tensor y = rows_gather(x, std::vector<int>{0, 1, 2, 3, 4, 5, 7, 6});
    if (s.size() <= 6) {
      EXPECT_EQ(d.forward(x, Mode::Eval)[0], d.forward(y, Mode::Eval)[0]);
    }
  }
}

TEST(GlobalDisc, TrainingSeparatesDisjointVocabularies) {
  Rng rng(13);
  EmbeddingTable table = random_table(24, 8, rng);
  std::vector<TokenSequence> real, generated;
  std::uniform_int_distribution<int> low(4, 13), high(14, 23), len(2, 8);
  for (int i = 0; i < 400; ++i) {
    TokenSequence a(len(rng)), b(len(rng));
    for (auto& t : a) t = low(rng);
    for (auto& t : b) t = high(rng);
    real.push_back(a);
    generated.push_back(b);
  }
  GlobalDiscriminator d(8, 8, {{2, 8}, {3, 8}}, rng);
  GlobalTrainConfig cfg;
  cfg.batch = 16;
  cfg.max_steps = 600;
  cfg.patience = 0;
  auto result = train_global_discriminator(d, real, generated, table, cfg);
  EXPECT_GE(result.best_accuracy, 0.99);
  EXPECT_GE(global_disc_accuracy(d, real, generated, table), 0.99);
}

TEST(GlobalDisc, IdenticalDistributionsStayNearChance) {
  Rng rng(14);
  EmbeddingTable table = random_table(24, 8, rng);
  std::vector<TokenSequence> real, generated;
  for (int i = 0; i < 2000; ++i) {
    real.push_back(random_sentence(2 + i % 6, 24, rng));
    generated.push_back(random_sentence(2 + (i * 7) % 6, 24, rng));
  }
  GlobalDiscriminator d(8, 8, {{2, 8}, {3, 8}}, rng);
  GlobalTrainConfig cfg;
  cfg.batch = 16;
  cfg.max_steps = 200;
  cfg.patience = 0;
  train_global_discriminator(d, {real.begin(), real.begin() + 1000}, {generated.begin(), generated.begin() + 1000},
                             table, cfg);
  const Real acc = global_disc_accuracy(d, std::span(real).subspan(1000), std::span(generated).subspan(1000), table);
  EXPECT_NEAR(acc, 0.5, 0.06);
}

TEST(GlobalDisc, StepUsesBalancedBatchesAndRejectsEmpty) {
  Rng rng(15);
  EmbeddingTable table = random_table(10, 4, rng);
  GlobalDiscriminator d(6, 4, {{2, 3}}, rng);
  Adam adam;
  std::vector<TokenSequence> real{{4, 5}}, gen{{6, 7}, {8}};
  EXPECT_THROW(global_disc_step(d, adam, real, gen, table), ContractError);
  std::vector<TokenSequence> none;
  EXPECT_THROW(train_global_discriminator(d, none, gen, table, GlobalTrainConfig{}), DataError);
}

TEST(Reinforce, EqualRewardAndBaselineGiveZeroGradient) {
  Tensor lp = Tensor::vector({-1.0, -2.5, -0.3}, true);
  std::vector<Real> r{0.4, 0.4, 0.4};
  GradientMap g = backward(reinforce_loss(lp, r, 0.4));
  for (Real v : g.at(lp).values()) EXPECT_EQ(v, 0.0);
}

TEST(Reinforce, BanditPolicyLearnsRewardedArm) {
  // Two logits, reward 1 for arm A and 0 for arm B.
  Tensor theta = Tensor::matrix({{0.0, 0.0}}, true);
  Adam adam(AdamConfig{0.01});
  Rng rng(16);
  Real last = 0.5;
  int reached = -1;
  for (int step = 0; step < 500; ++step) {
    Tensor logp = log_softmax_lastdim(theta);
    const Real pa = std::exp(logp.values()[0]);
    std::bernoulli_distribution pick_a(pa);
    std::vector<int> arms;
    std::vector<Real> rewards;
    for (int i = 0; i < 16; ++i) {
      arms.push_back(pick_a(rng) ? 0 : 1);
      rewards.push_back(arms.back() == 0 ? 1.0 : 0.0);
    }
    Real baseline = 0;
    for (Real r : rewards) baseline += r / rewards.size();
    Tensor chosen = pick(rows_gather(logp, std::vector<int>(16, 0)), arms);
    adam.step(std::vector<Tensor>{theta}, backward(reinforce_loss(chosen, rewards, baseline)));
    const Real now = std::exp(log_softmax_lastdim(theta).values()[0]);
    EXPECT_GE(now, last - 1e-12) << step;
    last = now;
    if (reached < 0 && now > 0.9) reached = step;
  }
  EXPECT_GE(reached, 0);
  EXPECT_GT(last, 0.9);
}

TEST(Reinforce, EmpiricalGradientMatchesExactExpectation) {
  const Real pa = 0.3;
  Tensor theta = Tensor::matrix({{std::log(pa), std::log(1 - pa)}}, true);
  Rng rng(17);
  std::bernoulli_distribution pick_a(pa);
  const int n = 10000;
  std::vector<int> arms;
  std::vector<Real> rewards;
  for (int i = 0; i < n; ++i) {
    arms.push_back(pick_a(rng) ? 0 : 1);
    rewards.push_back(arms.back() == 0 ? 1.0 : 0.2);
  }
  Tensor logp = log_softmax_lastdim(theta);
  Tensor chosen = pick(rows_gather(logp, std::vector<int>(n, 0)), arms);
  Tensor g = backward(reinforce_loss(chosen, rewards, 0.0)).at(theta);

  // Per-sample gradient of -R log p(y) w.r.t. theta is -R (onehot(y) - p).
  const Real p[2] = {pa, 1 - pa}, R[2] = {1.0, 0.2};
  for (int c = 0; c < 2; ++c) {
    Real mean = 0, second = 0;
    for (int y = 0; y < 2; ++y) {
      const Real gy = -R[y] * ((y == c ? 1.0 : 0.0) - p[c]);
      mean += p[y] * gy;
      second += p[y] * gy * gy;
    }
    const Real se = std::sqrt((second - mean * mean) / n);
    EXPECT_NEAR(g.values()[c], mean, 3 * se) << c;
  }
}

TEST(PolicyGradient, RequiresPretrainedDiscriminator) {
  Rng rng(18);
  DualModel m = tie_parameters(tiny_model_config(2, 1), random_table(9, 8, rng), random_table(9, 8, rng));
  GlobalDiscriminator d(8, 8, {{2, 4}}, rng);
  Adam adam;
  std::vector<TokenSequence> batch{{4, 5, 6}};
  EXPECT_THROW(policy_gradient_update(m, Lang::Source, d, batch, adam, rng, 8), ContractError);
}

TEST(PolicyGradient, RewardsBoundedAndEmptySamplesDegenerate) {
  Rng rng(19);
  DualModel m = tie_parameters(tiny_model_config(2, 1), random_table(9, 8, rng), random_table(9, 8, rng));
  GlobalDiscriminator d(8, 8, {{2, 4}}, rng);
  d.pretrained = true;
  Adam adam;
  std::vector<TokenSequence> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(random_sentence(3, 9, rng));
  auto r = policy_gradient_update(m, Lang::Source, d, batch, adam, rng, 8);
  ASSERT_EQ(r.rewards.size(), batch.size());
  for (Real v : r.rewards) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }

  // Force </s> as the first sampled token.
  Tensor b = m.output(Lang::Target).b;
  b.mutable_values()[Vocab::kEos] = 1e3;
  auto empty = policy_gradient_update(m, Lang::Source, d, batch, adam, rng, 8);
  EXPECT_EQ(empty.degenerate, batch.size());
  for (Real v : empty.rewards) EXPECT_EQ(v, 0.0);
}

TEST(GlobalDisc, CheckpointRestoresValuesAndBatchStatistics) {
  Rng rng(20);
  EmbeddingTable table = random_table(10, 4, rng);
  GlobalDiscriminator d(6, 4, {{2, 3}, {3, 2}}, rng);
  Adam adam;
  std::vector<TokenSequence> real{{4, 5}, {6, 7, 8}}, gen{{9, 4}, {5}};
  global_disc_step(d, adam, real, gen, table);
  d.pretrained = true;
  GlobalDiscriminator e(6, 4, {{2, 3}, {3, 2}}, rng);
  restore_global_disc(e, global_disc_checkpoint(d));
  EXPECT_TRUE(e.pretrained);
  EXPECT_EQ(e.kernels()[1].bn.running_var, d.kernels()[1].bn.running_var);
  Tensor x = pad_batch(real, 6, table);
  EXPECT_EQ(d.forward(x, Mode::Eval)[0], e.forward(x, Mode::Eval)[0]);
}
