#include "unmt/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unmt/autograd.hpp"
#include "unmt/decode.hpp"
#include "unmt/errors.hpp"
#include "unmt/init.hpp"

namespace unmt {

LocalDiscriminator LocalDiscriminator::init(std::size_t width, std::size_t hidden, Rng& rng) {
  LocalDiscriminator d;
  d.w1 = xavier_uniform(width, hidden, rng);
  d.b1 = zeros_param({hidden});
  d.w2 = xavier_uniform(hidden, hidden, rng);
  d.b2 = zeros_param({hidden});
  d.w3 = xavier_uniform(hidden, 2, rng);
  d.b3 = zeros_param({2});
  return d;
}

LocalDiscriminator LocalDiscriminator::frozen() const {
  return {w1.detach(), b1.detach(), w2.detach(), b2.detach(), w3.detach(), b3.detach()};
}

Tensor local_disc_logits(const Latent& latent, const LocalDiscriminator& d) {
  if (latent.states.cols() != d.width()) {
    throw DimensionError("local discriminator expects width " + std::to_string(d.width()) +
                         ", latent has " + std::to_string(latent.states.cols()));
  }
  Tensor pooled = segment_mean(latent.states, latent.segments);
  Tensor h = relu(linear(pooled, d.w1, d.b1));
  h = relu(linear(h, d.w2, d.b2));
  return linear(h, d.w3, d.b3);
}

Tensor local_disc_forward(const Latent& latent, const LocalDiscriminator& d) {
  return softmax_lastdim(local_disc_logits(latent, d));
}

namespace {

// -mean log p(label) over the batch.
Tensor class_nll(const Tensor& logits, int label) {
  std::vector<int> labels(logits.rows(), label);
  return cross_entropy(logits, labels);
}

void require_nonempty(const Latent& latent, const char* op) {
  if (latent.segments.count() == 0) throw ContractError(std::string(op) + ": empty batch");
}

int label_of(Lang lang) { return lang == Lang::Source ? kClassSource : kClassTarget; }

}  // namespace

Tensor local_disc_loss(const Latent& source, const Latent& target, const LocalDiscriminator& d) {
  require_nonempty(source, "local_disc_loss");
  require_nonempty(target, "local_disc_loss");
  const Latent s{source.states.detach(), source.segments, source.lang};
  const Latent t{target.states.detach(), target.segments, target.lang};
  return add(class_nll(local_disc_logits(s, d), kClassSource),
             class_nll(local_disc_logits(t, d), kClassTarget));
}

Tensor encoder_fool_loss(const Latent& latent, const LocalDiscriminator& d) {
  require_nonempty(latent, "encoder_fool_loss");
  return class_nll(local_disc_logits(latent, d.frozen()), label_of(other(latent.lang)));
}

Real local_disc_accuracy(const Latent& latent, const LocalDiscriminator& d) {
  NoGradGuard guard;
  Tensor logits = local_disc_logits({latent.states.detach(), latent.segments, latent.lang}, d);
  const int want = label_of(latent.lang);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int predicted = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
    correct += predicted == want;
  }
  return static_cast<Real>(correct) / static_cast<Real>(logits.rows());
}

std::vector<KernelSpec> parse_kernel_spec(const std::string& text) {
  std::vector<KernelSpec> kernels;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto x = item.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      KernelSpec k;
      k.window = std::stoul(item.substr(0, x), &used);
      if (used != x) throw std::invalid_argument(item);
      k.count = std::stoul(item.substr(x + 1), &used);
      if (used != item.size() - x - 1) throw std::invalid_argument(item);
      if (k.window == 0 || k.count == 0) throw std::invalid_argument(item);
      kernels.push_back(k);
    } catch (const std::exception&) {
      throw ConfigError("kernel spec '" + text + "' is not a comma list of <window>x<count>");
    }
  }
  if (kernels.empty()) throw ConfigError("kernel spec is empty");
  return kernels;
}

std::string kernel_spec_string(const std::vector<KernelSpec>& kernels) {
  std::string out;
  for (const auto& k : kernels) {
    if (!out.empty()) out += ',';
    out += std::to_string(k.window) + "x" + std::to_string(k.count);
  }
  return out;
}

Tensor pad_to_fixed(const TokenSequence& tokens, std::size_t length, const EmbeddingTable& table) {
  return pad_batch(std::span<const TokenSequence>(&tokens, 1), length, table);
}

Tensor pad_batch(std::span<const TokenSequence> batch, std::size_t length, const EmbeddingTable& table) {
  const std::size_t k = table.dim();
  std::vector<Real> out(batch.size() * length * k, 0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& tokens = batch[b];
    if (tokens.size() > length) {
      throw DataError("sentence of " + std::to_string(tokens.size()) +
                      " tokens exceeds the fixed discriminator length " + std::to_string(length));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const int id = tokens[i];
      if (id < 0 || static_cast<std::size_t>(id) >= table.size()) {
        throw DataError("token id " + std::to_string(id) + " outside the embedding table");
      }
      if (id == Vocab::kPad) continue;
      auto row = table.row(id);
      std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>((b * length + i) * k));
    }
  }
  return Tensor::from_values({batch.size() * length, k}, std::move(out));
}

GlobalDiscriminator::GlobalDiscriminator(std::size_t length, std::size_t embedding_dim,
                                         std::vector<KernelSpec> kernels, Rng& rng)
    : length_(length), dim_(embedding_dim) {
  if (kernels.empty()) throw ConfigError("global discriminator needs at least one kernel");
  for (const auto& spec : kernels) {
    if (spec.window == 0 || spec.window > length) {
      throw ConfigError("kernel window " + std::to_string(spec.window) +
                        " does not fit the fixed length " + std::to_string(length));
    }
    Kernel k;
    k.spec = spec;
    k.weight = xavier_uniform(spec.window * embedding_dim, spec.count, rng);
    k.bias = zeros_param({spec.count});
    k.bn_gain = ones_param({spec.count});
    k.bn_bias = zeros_param({spec.count});
    k.bn = BatchNormState(spec.count);
    kernels_.push_back(std::move(k));
  }
  v_ = xavier_uniform(features(), 2, rng);
}

std::size_t GlobalDiscriminator::features() const {
  std::size_t n = 0;
  for (const auto& k : kernels_) n += k.spec.count;
  return n;
}

std::vector<Tensor> GlobalDiscriminator::parameters() const {
  std::vector<Tensor> out;
  for (const auto& k : kernels_) out.insert(out.end(), {k.weight, k.bias, k.bn_gain, k.bn_bias});
  out.push_back(v_);
  return out;
}

std::vector<std::pair<std::string, Tensor>> GlobalDiscriminator::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    const auto& k = kernels_[i];
    const std::string p = "k" + std::to_string(i) + ".";
    out.emplace_back(p + "weight", k.weight);
    out.emplace_back(p + "bias", k.bias);
    out.emplace_back(p + "bn_gain", k.bn_gain);
    out.emplace_back(p + "bn_bias", k.bn_bias);
  }
  out.emplace_back("projection", v_);
  return out;
}

Tensor GlobalDiscriminator::pooled_features(const Tensor& x, Mode mode) {
  if (x.cols() != dim_ || x.rows() % length_ != 0 || x.rows() == 0) {
    throw DimensionError("global discriminator expects [batch*" + std::to_string(length_) + " x " +
                         std::to_string(dim_) + "], got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.rows() / length_;
  std::vector<Tensor> pooled;
  for (auto& k : kernels_) {
    const std::size_t per = length_ - k.spec.window + 1;
    Tensor c = linear(unfold_windows(x, length_, k.spec.window), k.weight, k.bias);
    c = relu(batch_norm(c, k.bn_gain, k.bn_bias, k.bn, mode));
    pooled.push_back(segment_max(c, Segments::uniform(batch, per)));
  }
  return pooled.size() == 1 ? pooled.front() : concat_cols(pooled);
}

Tensor GlobalDiscriminator::logits(const Tensor& x, Mode mode) {
  return matmul(pooled_features(x, mode), v_);
}

Tensor GlobalDiscriminator::forward(const Tensor& x, Mode mode) {
  return softmax_lastdim(logits(x, mode));
}

Tensor global_disc_forward(const Tensor& x, GlobalDiscriminator& d, Mode mode) {
  return d.forward(x, mode);
}

void append_global_disc(Checkpoint& ck, const GlobalDiscriminator& d, const std::string& prefix) {
  ck.metadata[prefix + "length"] = std::to_string(d.length());
  ck.metadata[prefix + "kernels"] = [&] {
    std::vector<KernelSpec> specs;
    for (const auto& k : d.kernels()) specs.push_back(k.spec);
    return kernel_spec_string(specs);
  }();
  ck.metadata[prefix + "pretrained"] = d.pretrained ? "1" : "0";
  for (const auto& [name, t] : d.named_tensors()) ck.tensors.emplace_back(prefix + name, t.clone());
  for (std::size_t i = 0; i < d.kernels().size(); ++i) {
    const auto& bn = d.kernels()[i].bn;
    const std::string p = prefix + "k" + std::to_string(i) + ".";
    ck.tensors.emplace_back(p + "running_mean",
                            Tensor::from_values({bn.running_mean.size()}, bn.running_mean));
    ck.tensors.emplace_back(p + "running_var", Tensor::from_values({bn.running_var.size()}, bn.running_var));
    ck.metadata[p + "bn_updates"] = std::to_string(bn.updates);
  }
}

Checkpoint global_disc_checkpoint(const GlobalDiscriminator& d) {
  Checkpoint ck;
  append_global_disc(ck, d, "");
  return ck;
}

void restore_global_disc(GlobalDiscriminator& d, const Checkpoint& ck, const std::string& prefix) {
  auto fetch = [&](const std::string& name) -> const Tensor& {
    const Tensor* t = ck.find(prefix + name);
    if (!t) throw DataError("checkpoint lacks '" + prefix + name + "'");
    return *t;
  };
  for (const auto& [name, t] : d.named_tensors()) {
    const Tensor& src = fetch(name);
    if (src.shape() != t.shape()) throw DataError("shape mismatch for '" + prefix + name + "'");
    Tensor dst = t;
    std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
  }
  for (std::size_t i = 0; i < d.kernels().size(); ++i) {
    auto& bn = d.kernels()[i].bn;
    const std::string p = "k" + std::to_string(i) + ".";
    auto mean = fetch(p + "running_mean").values();
    auto var = fetch(p + "running_var").values();
    if (mean.size() != bn.running_mean.size() || var.size() != bn.running_var.size()) {
      throw DataError("batch-norm statistics shape mismatch");
    }
    bn.running_mean.assign(mean.begin(), mean.end());
    bn.running_var.assign(var.begin(), var.end());
    bn.updates = std::stoull(ck.meta(prefix + p + "bn_updates"));
  }
  d.pretrained = ck.meta(prefix + "pretrained") == "1";
}

Real global_disc_accuracy(GlobalDiscriminator& d, std::span<const TokenSequence> real,
                          std::span<const TokenSequence> generated, const EmbeddingTable& table) {
  NoGradGuard guard;
  std::size_t correct = 0, total = 0;
  auto score = [&](std::span<const TokenSequence> batch, int label) {
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < batch.size(); start += kChunk) {
      auto chunk = batch.subspan(start, std::min(kChunk, batch.size() - start));
      Tensor logits = d.logits(pad_batch(chunk, d.length(), table), Mode::Eval);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const int predicted = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
        correct += predicted == label;
        ++total;
      }
    }
  };
  score(real, kClassTrue);
  score(generated, kClassGenerated);
  return total ? static_cast<Real>(correct) / static_cast<Real>(total) : 0.0;
}

Real global_disc_step(GlobalDiscriminator& d, Adam& adam, std::span<const TokenSequence> real,
                      std::span<const TokenSequence> generated, const EmbeddingTable& table) {
  if (real.empty() || generated.empty()) throw DataError("global discriminator batch needs both classes");
  if (real.size() != generated.size()) {
    throw ContractError("global discriminator batch is unbalanced: " + std::to_string(real.size()) + " true vs " +
                        std::to_string(generated.size()) + " generated");
  }
  std::vector<TokenSequence> batch(real.begin(), real.end());
  batch.insert(batch.end(), generated.begin(), generated.end());
  std::vector<int> labels(real.size(), kClassTrue);
  labels.insert(labels.end(), generated.size(), kClassGenerated);
  Tensor loss = cross_entropy(d.logits(pad_batch(batch, d.length(), table), Mode::Train), labels);
  const auto params = d.parameters();
  adam.step(params, backward(loss));
  return loss.item();
}

GlobalTrainResult train_global_discriminator(GlobalDiscriminator& d,
                                             const std::vector<TokenSequence>& real,
                                             const std::vector<TokenSequence>& generated,
                                             const EmbeddingTable& table,
                                             const GlobalTrainConfig& config) {
  if (real.empty() || generated.empty()) throw DataError("global discriminator needs true and generated data");
  if (config.batch < 2) throw ConfigError("global discriminator batch must be at least 2");
  Rng rng(config.seed);
  auto split = [&](const std::vector<TokenSequence>& data) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t held = static_cast<std::size_t>(config.held_out_fraction * static_cast<Real>(data.size()));
    held = std::min(std::max<std::size_t>(held, 1), data.size() > 1 ? data.size() - 1 : 0);
    std::pair<std::vector<TokenSequence>, std::vector<TokenSequence>> out;
    for (std::size_t i = 0; i < order.size(); ++i) (i < held ? out.second : out.first).push_back(data[order[i]]);
    if (out.first.empty()) out.first = out.second;
    return out;
  };
  auto [real_train, real_held] = split(real);
  auto [gen_train, gen_held] = split(generated);

  Adam adam(config.adam);
  GlobalTrainResult result;
  const std::size_t half = config.batch / 2;
  std::uniform_int_distribution<std::size_t> pick_real(0, real_train.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_gen(0, gen_train.size() - 1);
  std::size_t stale = 0;
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    std::vector<TokenSequence> r, g;
    for (std::size_t i = 0; i < half; ++i) r.push_back(real_train[pick_real(rng)]);
    for (std::size_t i = 0; i < half; ++i) g.push_back(gen_train[pick_gen(rng)]);
    global_disc_step(d, adam, r, g, table);
    result.steps = step;
    if (step % config.eval_every == 0 || step == config.max_steps) {
      const Real acc = global_disc_accuracy(d, real_held, gen_held, table);
      result.accuracy_history.push_back(acc);
      result.held_out_accuracy = acc;
      if (acc > result.best_accuracy) {
        result.best_accuracy = acc;
        stale = 0;
      } else if (config.patience && ++stale >= config.patience) {
        break;
      }
    }
  }
  d.pretrained = true;
  return result;
}

GlobalTrainResult pretrain_global_disc(const std::vector<TokenSequence>& true_corpus,
                                       const std::vector<TokenSequence>& other_corpus,
                                       const DualModel& model, GlobalDiscriminator& d, Lang lang,
                                       const GlobalTrainConfig& config) {
  if (true_corpus.empty() || other_corpus.empty()) throw DataError("pretraining needs nonempty corpora");
  std::vector<TokenSequence> generated;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < other_corpus.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, other_corpus.size() - start);
    auto out = greedy_decode(model, other(lang),
                             std::span<const TokenSequence>(other_corpus).subspan(start, n), d.length());
    generated.insert(generated.end(), out.begin(), out.end());
  }
  return train_global_discriminator(d, true_corpus, generated, model.embeddings(lang), config);
}

Tensor reinforce_loss(const Tensor& log_probs, std::span<const Real> rewards, Real baseline) {
  if (log_probs.numel() != rewards.size()) throw DimensionError("reinforce_loss: reward count mismatch");
  if (rewards.empty()) throw ContractError("reinforce_loss: empty batch");
  std::vector<Real> weights(rewards.size());
  const Real n = static_cast<Real>(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) weights[i] = -(rewards[i] - baseline) / n;
  return weighted_sum(log_probs, weights);
}

PolicyGradientResult policy_gradient_update(const DualModel& model, Lang from,
                                            GlobalDiscriminator& d, std::span<const TokenSequence> batch,
                                            Adam& optimizer, Rng& rng, std::size_t max_len,
                                            std::size_t schedule_step) {
  if (batch.empty()) throw ContractError("policy_gradient_update: empty batch");
  if (!d.pretrained) throw ContractError("policy gradient needs a pretrained discriminator");
  const Lang to = other(from);
  PolicyGradientResult result;
  result.samples = sample_decode(model, from, batch, max_len, rng);
  result.rewards.assign(batch.size(), 0.0);
  {
    NoGradGuard guard;
    std::vector<std::size_t> nonempty;
    std::vector<TokenSequence> scored;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (result.samples[i].empty()) {
        ++result.degenerate;
      } else {
        nonempty.push_back(i);
        scored.push_back(result.samples[i]);
      }
    }
    if (!scored.empty()) {
      Tensor p = d.forward(pad_batch(scored, d.length(), model.embeddings(to)), Mode::Eval);
      for (std::size_t j = 0; j < nonempty.size(); ++j) result.rewards[nonempty[j]] = p.at(j, kClassTrue);
    }
  }
  result.mean_reward = std::accumulate(result.rewards.begin(), result.rewards.end(), 0.0) /
                       static_cast<Real>(batch.size());
  Latent latent = model.encode(from, batch, Mode::Eval);
  Tensor lp = model.sequence_log_probs(to, latent, result.samples, Mode::Eval);
  Tensor loss = reinforce_loss(lp, result.rewards, result.mean_reward);
  result.loss = loss.item();
  const auto params = model.path_parameters(from, to);
  GradientMap grads = backward(loss);
  optimizer.step(params, grads, schedule_step);
  return result;
}

}  // namespace unmt
