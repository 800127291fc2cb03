#include "unmt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "unmt/autograd.hpp"
#include "unmt/errors.hpp"

namespace unmt {

void TrainingConfig::validate() const {
  model.validate();
  noise.validate();
  if (batch == 0) throw ConfigError("batch must be positive");
  if (learning_rate <= 0 || local_learning_rate <= 0 || global_learning_rate <= 0 || pg_learning_rate <= 0) {
    throw ConfigError("learning rates must be positive");
  }
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (max_len > model.max_positions) throw ConfigError("max_len exceeds max_positions");
  if (eval_beam == 0) throw ConfigError("eval_beam must be at least 1");
  if (alpha < 0) throw ConfigError("alpha must be nonnegative");
  if (fool_weight < 0) throw ConfigError("fool_weight must be nonnegative");
  if (local_hidden == 0) throw ConfigError("local_hidden must be positive");
  if (global_batch < 2) throw ConfigError("global_batch must be at least 2");
  for (const auto& k : parse_kernel_spec(kernels)) {
    if (k.window > max_len) {
      throw ConfigError("kernel window " + std::to_string(k.window) + " exceeds max_len " + std::to_string(max_len));
    }
  }
}

void TrainingConfig::bind(KeyTable& t) {
  t.declare("layers", "encoder/decoder layers per language", model.stack.layers);
  t.declare("share_layers", "tied top encoder / bottom decoder layers", model.stack.shared);
  t.declare("width", "model width (must equal the embedding dimension)", model.stack.width);
  t.declare("heads", "attention heads", model.stack.heads);
  t.declare("ff_width", "feed-forward hidden width", model.stack.ff_width);
  t.declare("dropout", "residual dropout rate", model.stack.dropout);
  t.declare("directional", "forward/backward masked encoder self-attention", model.directional);
  t.declare("strict_masks", "strict (p<q) rather than relaxed (p<=q) directional masks", model.strict_masks);
  t.declare("gate", "embedding-reinforced gate on the encoder output", model.use_gate);
  t.declare("max_positions", "positional-encoding table size", model.max_positions);
  t.declare("noise_k", "shuffle displacement factor", noise.k);
  t.declare("noise_s", "shuffle step divisor", noise.s);
  t.declare("batch", "sentences per sub-batch", batch);
  t.declare("lr", "peak learning rate", learning_rate);
  t.declare("warmup", "warmup steps of the learning-rate schedule (0 = constant)", warmup);
  t.declare("clip_norm", "global gradient-norm clip (0 = off)", clip_norm);
  t.declare("max_len", "longest generated sentence; global discriminator length", max_len);
  t.declare("eval_every", "steps between round-trip evaluations", eval_every);
  t.declare("eval_size", "dev sentences per language for evaluation (0 = all)", eval_size);
  t.declare("eval_beam", "beam for round-trip evaluation (1 = greedy)", eval_beam);
  t.declare("alpha", "length-penalty exponent", alpha);
  t.declare("stage1_steps", "stage-1 step budget", stage1_steps);
  t.declare("stage2_steps", "stage-2 step budget", stage2_steps);
  t.declare("denoising", "denoising auto-encoding sub-batches", denoising);
  t.declare("backtranslation", "back-translation sub-batches", backtranslation);
  t.declare("local_gan", "latent discriminator sub-batches", local_gan);
  t.declare("global_gan", "stage-2 sentence-discriminator fine-tuning", global_gan);
  t.declare("fool_weight", "weight of the encoder fool losses", fool_weight);
  t.declare("local_hidden", "latent discriminator hidden width", local_hidden);
  t.declare("local_lr", "latent discriminator learning rate", local_learning_rate);
  t.declare("kernels", "sentence discriminator kernels, <window>x<count> list", kernels);
  t.declare("global_lr", "sentence discriminator learning rate", global_learning_rate);
  t.declare("global_pretrain_steps", "sentence discriminator pretraining budget", global_pretrain_steps);
  t.declare("global_batch", "sentence discriminator batch", global_batch);
  t.declare("disc_per_gen", "discriminator batches per generator batch", disc_per_gen);
  t.declare("pg_lr", "policy-gradient learning rate", pg_learning_rate);
  t.declare("seed", "seed for initialisation, batching, noise and sampling", seed);
}

std::vector<TokenSequence> translate_corpus(const DualModel& model, Lang from,
                                            std::span<const TokenSequence> sentences,
                                            std::size_t beam, Real alpha, std::size_t max_len) {
  std::vector<TokenSequence> out(sentences.size());
  std::vector<std::size_t> index;
  std::vector<TokenSequence> nonempty;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].empty()) continue;
    index.push_back(i);
    nonempty.push_back(sentences[i]);
  }
  if (beam <= 1) {
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < nonempty.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, nonempty.size() - start);
      auto part = greedy_decode(model, from, std::span<const TokenSequence>(nonempty).subspan(start, n), max_len);
      for (std::size_t j = 0; j < n; ++j) out[index[start + j]] = std::move(part[j]);
    }
  } else {
    for (std::size_t j = 0; j < nonempty.size(); ++j) {
      out[index[j]] = beam_search(model, from, nonempty[j], beam, alpha, max_len);
    }
  }
  return out;
}

RoundTripScore round_trip_bleu(const DualModel& model, std::span<const TokenSequence> dev_source,
                               std::span<const TokenSequence> dev_target, std::size_t max_len,
                               std::size_t beam, Real alpha) {
  if (dev_source.empty() || dev_target.empty()) throw ConfigError("round-trip BLEU needs nonempty dev sets");
  RoundTripScore score;
  auto direction = [&](Lang lang, std::span<const TokenSequence> dev) {
    auto there = translate_corpus(model, lang, dev, beam, alpha, max_len);
    auto back = translate_corpus(model, other(lang), there, beam, alpha, max_len);
    return bleu(back, dev);
  };
  score.source = direction(Lang::Source, dev_source);
  score.target = direction(Lang::Target, dev_target);
  score.mean = 0.5 * (score.source + score.target);
  return score;
}

bool early_stop(std::span<const Real> history, std::size_t patience) {
  if (patience == 0 || history.size() <= patience) return false;
  const Real best_before = *std::max_element(history.begin(), history.end() - static_cast<std::ptrdiff_t>(patience));
  return *std::max_element(history.end() - static_cast<std::ptrdiff_t>(patience), history.end()) <= best_before;
}

WordByWord::WordByWord(const EmbeddingTable& from, const EmbeddingTable& to) {
  if (!from.matrix.defined() || !to.matrix.defined() || from.size() == 0 || to.size() == 0) {
    throw ConfigError("word-by-word translation needs nonempty embedding tables");
  }
  if (from.dim() != to.dim()) throw ConfigError("embedding tables differ in dimension");
  if (to.size() <= Vocab::kReserved) throw ConfigError("target embedding table has no content rows");
  const std::size_t k = to.dim();
  auto norm = [k](std::span<const Real> row) {
    Real n = 0;
    for (std::size_t j = 0; j < k; ++j) n += row[j] * row[j];
    return std::sqrt(n);
  };
  std::vector<Real> to_norm(to.size());
  for (std::size_t i = 0; i < to.size(); ++i) to_norm[i] = norm(to.row(static_cast<int>(i)));
  map_.resize(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (Vocab::is_reserved(static_cast<int>(i))) {
      map_[i] = static_cast<int>(i);
      continue;
    }
    auto a = from.row(static_cast<int>(i));
    const Real na = norm(a);
    int best = -1;
    Real best_cos = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = Vocab::kReserved; c < to.size(); ++c) {
      auto b = to.row(static_cast<int>(c));
      Real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += a[j] * b[j];
      const Real denom = na * to_norm[c];
      const Real cos = denom > 0 ? dot / denom : 0.0;
      if (cos > best_cos) {
        best_cos = cos;
        best = static_cast<int>(c);
      }
    }
    map_[i] = best;
  }
}

int WordByWord::nearest(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= map_.size()) return id;
  return map_[static_cast<std::size_t>(id)];
}

TokenSequence WordByWord::translate(const TokenSequence& sentence) const {
  TokenSequence out;
  out.reserve(sentence.size());
  for (int id : sentence) out.push_back(nearest(id));
  return out;
}

TokenSequence word_by_word_translate(const TokenSequence& sentence, const EmbeddingTable& from,
                                     const EmbeddingTable& to) {
  return WordByWord(from, to).translate(sentence);
}

PseudoParallelBatch backtranslate_batch(Lang lang, std::span<const TokenSequence> batch,
                                        const DualModel& model, std::size_t max_len) {
  if (batch.empty()) throw ContractError("backtranslate_batch: empty batch");
  PseudoParallelBatch out;
  out.input_lang = other(lang);
  auto translations = greedy_decode(model, lang, batch, max_len);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (translations[i].empty()) {
      ++out.dropped_empty;
      continue;
    }
    out.inputs.push_back(std::move(translations[i]));
    out.targets.push_back(batch[i]);
  }
  return out;
}

BatchStream::BatchStream(const std::vector<TokenSequence>* data, std::uint64_t seed)
    : data_(data), seed_(seed) {
  if (!data_ || data_->empty()) throw DataError("batch stream over an empty corpus");
  reshuffle();
}

void BatchStream::reshuffle() {
  order_.resize(data_->size());
  std::iota(order_.begin(), order_.end(), 0);
  Rng rng(seed_ * 1000003ULL + epoch_);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::vector<TokenSequence> BatchStream::next(std::size_t count) {
  std::vector<TokenSequence> out;
  out.reserve(count);
  while (out.size() < count) {
    if (position_ == order_.size()) {
      ++epoch_;
      position_ = 0;
      reshuffle();
    }
    out.push_back((*data_)[order_[position_++]]);
  }
  return out;
}

void BatchStream::seek(std::size_t epoch, std::size_t position) {
  if (position > data_->size()) throw DataError("batch stream position out of range");
  epoch_ = epoch;
  position_ = position;
  reshuffle();
}

namespace {

const char* const kMetricColumns[] = {
    "step",       "stage",      "ae_s",      "ae_t",      "bt_s",         "bt_t",
    "local_d",    "local_d_acc", "fool_s",   "fool_t",    "noise_bound",  "round_trip_bleu",
    "g1_d",       "g2_d",       "g1_reward", "g2_reward", "g1_degenerate", "g2_degenerate"};

std::string cell(const std::optional<Real>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

std::string metrics_header() {
  std::string out = "# unmt-metrics v" + std::to_string(kMetricsVersion) + "\n";
  bool first = true;
  for (const char* c : kMetricColumns) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out;
}

std::string metrics_line(const MetricsRow& r) {
  std::string out = std::to_string(r.step) + "," + std::to_string(r.stage);
  for (const auto* v : {&r.ae_source, &r.ae_target, &r.bt_source, &r.bt_target, &r.local_disc,
                        &r.local_disc_accuracy, &r.fool_source, &r.fool_target, &r.noise_bound,
                        &r.round_trip, &r.g1_disc, &r.g2_disc, &r.g1_reward, &r.g2_reward,
                        &r.g1_degenerate, &r.g2_degenerate}) {
    out += "," + cell(*v);
  }
  return out;
}

namespace {

AdamConfig adam_config(double lr, std::size_t warmup, double clip) {
  AdamConfig c;
  c.learning_rate = lr;
  c.warmup = warmup;
  c.clip_norm = clip;
  return c;
}

}  // namespace

Trainer::Trainer(TrainingConfig config, DualModel& model, MonolingualCorpus source,
                 MonolingualCorpus target, MonolingualCorpus dev_source, MonolingualCorpus dev_target)
    : config_(std::move(config)),
      model_(model),
      rng_(config_.seed),
      adam_(adam_config(config_.learning_rate, config_.warmup, config_.clip_norm)),
      local_adam_(adam_config(config_.local_learning_rate, 0, config_.clip_norm)),
      pg_adam_(adam_config(config_.pg_learning_rate, 0, config_.clip_norm)),
      global_adam_{Adam(adam_config(config_.global_learning_rate, 0, 0)),
                   Adam(adam_config(config_.global_learning_rate, 0, 0))} {
  config_.validate();
  if (source.lang != Lang::Source || dev_source.lang != Lang::Source || target.lang != Lang::Target ||
      dev_target.lang != Lang::Target) {
    throw ContractError("trainer corpora have the wrong language tags");
  }
  corpora_[0] = std::move(source);
  corpora_[1] = std::move(target);
  dev_[0] = std::move(dev_source);
  dev_[1] = std::move(dev_target);
  for (std::size_t i = 0; i < 2; ++i) {
    if (corpora_[i].empty()) throw DataError(std::string("empty ") + lang_name(static_cast<Lang>(i)) + " training corpus");
    if (config_.eval_size && dev_[i].sentences.size() > config_.eval_size) dev_[i].sentences.resize(config_.eval_size);
    streams_[i] = BatchStream(&corpora_[i].sentences, config_.seed * 2 + i);
  }
  Rng init(config_.seed + 0x5eed);
  local_ = LocalDiscriminator::init(model_.config().stack.width, config_.local_hidden, init);
}

std::vector<Tensor> Trainer::unique(std::vector<Tensor> params) const {
  std::set<NodeId> seen;
  std::vector<Tensor> out;
  for (auto& p : params)
    if (seen.insert(p.id()).second) out.push_back(std::move(p));
  return out;
}

void Trainer::emit(const MetricsRow& row) {
  if (on_metrics) on_metrics(row);
}

Real Trainer::autoencoder_batch(Lang lang) {
  auto batch = streams_[index_of(lang)].next(config_.batch);
  std::vector<TokenSequence> noisy;
  noisy.reserve(batch.size());
  for (const auto& s : batch) noisy.push_back(shuffle_sentence(s, state_.step, config_.noise, rng_));
  Latent latent = model_.encode(lang, noisy, Mode::Train, &rng_);
  Tensor loss = model_.decode_train(lang, latent, batch, Mode::Train, &rng_).loss;
  const auto params = model_.path_parameters(lang, lang);
  adam_.step(params, backward(loss), state_.step + 1);
  return loss.item();
}

std::optional<Real> Trainer::backtranslation_batch(Lang lang) {
  auto originals = streams_[index_of(lang)].next(config_.batch);
  PseudoParallelBatch pp = backtranslate_batch(lang, originals, model_, config_.max_len);
  if (pp.inputs.empty()) return std::nullopt;
  Latent latent = model_.encode(pp.input_lang, pp.inputs, Mode::Train, &rng_);
  Tensor loss = model_.decode_train(lang, latent, pp.targets, Mode::Train, &rng_).loss;
  const auto params = model_.path_parameters(pp.input_lang, lang);
  adam_.step(params, backward(loss), state_.step + 1);
  return loss.item();
}

void Trainer::local_gan_batch(MetricsRow& row) {
  auto bs = streams_[0].next(config_.batch);
  auto bt = streams_[1].next(config_.batch);
  Latent ls = model_.encode(Lang::Source, bs, Mode::Train, &rng_);
  Latent lt = model_.encode(Lang::Target, bt, Mode::Train, &rng_);
  row.local_disc_accuracy = 0.5 * (local_disc_accuracy(ls, local_) + local_disc_accuracy(lt, local_));
  Tensor d_loss = local_disc_loss(ls, lt, local_);
  const auto d_params = local_.parameters();
  local_adam_.step(d_params, backward(d_loss));
  row.local_disc = d_loss.item();
  if (config_.fool_weight > 0) {
    Tensor fs = encoder_fool_loss(ls, local_);
    Tensor ft = encoder_fool_loss(lt, local_);
    Tensor total = scale(add(fs, ft), config_.fool_weight);
    auto params = model_.encoder_parameters(Lang::Source);
    auto more = model_.encoder_parameters(Lang::Target);
    params.insert(params.end(), more.begin(), more.end());
    params = unique(std::move(params));
    adam_.step(params, backward(total), state_.step + 1);
    row.fool_source = fs.item();
    row.fool_target = ft.item();
  }
}

MetricsRow Trainer::stage1_step() {
  if (state_.stage != 1) throw ContractError("stage1_step called outside stage 1");
  MetricsRow row;
  row.stage = 1;
  row.noise_bound = static_cast<Real>(displacement_bound(state_.step, std::numeric_limits<std::size_t>::max(), config_.noise));
  if (config_.denoising) {
    row.ae_source = autoencoder_batch(Lang::Source);
    row.ae_target = autoencoder_batch(Lang::Target);
  }
  if (config_.backtranslation) {
    row.bt_source = backtranslation_batch(Lang::Source);
    row.bt_target = backtranslation_batch(Lang::Target);
  }
  if (config_.local_gan) local_gan_batch(row);
  ++state_.step;
  row.step = state_.step;
  if (config_.eval_every && state_.step % config_.eval_every == 0) row.round_trip = evaluate();
  emit(row);
  return row;
}

Real Trainer::evaluate() {
  const Real score = round_trip_bleu(model_, dev_[0].sentences, dev_[1].sentences, config_.max_len,
                                     config_.eval_beam, config_.alpha)
                         .mean;
  state_.history.push_back(score);
  state_.history_steps.push_back(state_.step);
  if (score > state_.best_score) {
    state_.best_score = score;
    state_.best_step = state_.step;
    best_.clear();
    for (const auto& p : model_.parameters()) best_.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    if (on_best) on_best();
  }
  return score;
}

bool Trainer::run_stage1() {
  while (state_.stage == 1 && state_.step < config_.stage1_steps) {
    stage1_step();
    if (stage1_converged()) return true;
  }
  return stage1_converged();
}

void Trainer::ensure_globals() {
  for (Lang lang : {Lang::Source, Lang::Target}) {
    auto& g = globals_[index_of(lang)];
    if (g) continue;
    Rng init(config_.seed + 0x6a0 + index_of(lang));
    g = std::make_unique<GlobalDiscriminator>(config_.max_len, model_.embeddings(lang).dim(),
                                              parse_kernel_spec(config_.kernels), init);
  }
}

void Trainer::prepare_stage2() {
  if (!config_.global_gan) throw ContractError("global GANs are disabled");
  if (!stage1_converged()) throw ContractError("stage 2 requires stage-1 early stopping");
  ensure_globals();
  constexpr std::size_t kPretrainSentences = 2000;
  auto subset = [&](Lang lang) {
    const auto& s = corpora_[index_of(lang)].sentences;
    return std::vector<TokenSequence>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(std::min(kPretrainSentences, s.size())));
  };
  for (Lang lang : {Lang::Source, Lang::Target}) {
    GlobalTrainConfig gc;
    gc.batch = config_.global_batch;
    gc.max_steps = config_.global_pretrain_steps;
    gc.adam = adam_config(config_.global_learning_rate, 0, 0);
    gc.seed = config_.seed + 17 + index_of(lang);
    pretrain_global_disc(subset(lang), subset(other(lang)), model_, *globals_[index_of(lang)], lang, gc);
  }
  state_.globals_pretrained = true;
  state_.stage = 2;
}

void Trainer::gan_batch(Lang generated, MetricsRow& row) {
  const Lang from = other(generated);
  GlobalDiscriminator& d = *globals_[index_of(generated)];
  auto src = streams_[index_of(from)].next(config_.batch);
  PolicyGradientResult pg = policy_gradient_update(model_, from, d, src, pg_adam_, rng_, config_.max_len,
                                                   state_.stage2_step + 1);
  std::vector<TokenSequence> fake;
  for (auto& s : pg.samples)
    if (!s.empty()) fake.push_back(std::move(s));
  std::optional<Real> d_loss;
  for (std::size_t k = 0; k < config_.disc_per_gen && fake.size() >= 1; ++k) {
    auto real = streams_[index_of(generated)].next(std::max<std::size_t>(fake.size(), 1));
    d_loss = global_disc_step(d, global_adam_[index_of(generated)], real, fake, model_.embeddings(generated));
  }
  if (generated == Lang::Source) {
    row.g1_reward = pg.mean_reward;
    row.g1_disc = d_loss;
    row.g1_degenerate = static_cast<Real>(pg.degenerate);
  } else {
    row.g2_reward = pg.mean_reward;
    row.g2_disc = d_loss;
    row.g2_degenerate = static_cast<Real>(pg.degenerate);
  }
}

MetricsRow Trainer::stage2_step() {
  if (state_.stage != 2 || !state_.globals_pretrained) {
    throw ContractError("stage 2 requires pretrained global discriminators");
  }
  MetricsRow row;
  row.stage = 2;
  gan_batch(Lang::Source, row);
  gan_batch(Lang::Target, row);
  ++state_.stage2_step;
  ++state_.step;
  row.step = state_.step;
  if (config_.eval_every && state_.stage2_step % config_.eval_every == 0) row.round_trip = evaluate();
  emit(row);
  return row;
}

void Trainer::run_stage2() {
  if (state_.stage == 1) prepare_stage2();
  while (state_.stage2_step < config_.stage2_steps) stage2_step();
}

void Trainer::restore_best() {
  if (best_.empty()) return;
  const auto& params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(best_[i].begin(), best_[i].end(), t.mutable_values().begin());
  }
}

namespace {

using Named = std::vector<std::pair<std::string, Tensor>>;

void append_adam(Checkpoint& ck, const std::string& prefix, const Adam& adam, const Named& named) {
  ck.metadata[prefix + "step"] = std::to_string(adam.state().step);
  for (const auto& [name, t] : named) {
    auto it = adam.state().moments.find(t.id());
    if (it == adam.state().moments.end()) continue;
    const auto& m = it->second;
    ck.tensors.emplace_back(prefix + name + ".m", Tensor::from_values({m.first.size()}, m.first));
    ck.tensors.emplace_back(prefix + name + ".v", Tensor::from_values({m.second.size()}, m.second));
    ck.metadata[prefix + name + ".updates"] = std::to_string(m.updates);
  }
}

void restore_adam(const Checkpoint& ck, const std::string& prefix, Adam& adam, const Named& named) {
  adam.state().moments.clear();
  adam.state().step = std::stoull(ck.meta(prefix + "step"));
  for (const auto& [name, t] : named) {
    const Tensor* m = ck.find(prefix + name + ".m");
    const Tensor* v = ck.find(prefix + name + ".v");
    if (!m || !v) continue;
    if (m->numel() != t.numel() || v->numel() != t.numel()) throw DataError("optimizer moment shape mismatch for " + name);
    ParamMoments pm;
    pm.first.assign(m->values().begin(), m->values().end());
    pm.second.assign(v->values().begin(), v->values().end());
    pm.updates = std::stoull(ck.meta(prefix + name + ".updates"));
    adam.state().moments[t.id()] = std::move(pm);
  }
}

Named model_named(const DualModel& model) {
  Named out;
  for (const auto& p : model.parameters()) out.emplace_back(p.name, p.tensor);
  return out;
}

Named local_named(const LocalDiscriminator& d) {
  const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
  Named out;
  const auto params = d.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) out.emplace_back(names[i], params[i]);
  return out;
}

std::string hex(Real v) {
  std::ostringstream out;
  out << std::hexfloat << v;
  return out.str();
}

}  // namespace

Checkpoint Trainer::state_checkpoint() const {
  Checkpoint ck = model_checkpoint(model_);
  auto& m = ck.metadata;
  m["state.stage"] = std::to_string(state_.stage);
  m["state.step"] = std::to_string(state_.step);
  m["state.stage2_step"] = std::to_string(state_.stage2_step);
  m["state.best_score"] = hex(state_.best_score);
  m["state.best_step"] = std::to_string(state_.best_step);
  m["state.globals_pretrained"] = state_.globals_pretrained ? "1" : "0";
  m["state.seed"] = std::to_string(config_.seed);
  ck.tensors.emplace_back("state.history", Tensor::from_values({state_.history.size()}, state_.history));
  std::vector<Real> steps(state_.history_steps.begin(), state_.history_steps.end());
  ck.tensors.emplace_back("state.history_steps", Tensor::from_values({steps.size()}, steps));
  {
    std::ostringstream out;
    out << rng_;
    m["state.rng"] = out.str();
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string p = std::string("stream.") + lang_name(static_cast<Lang>(i)) + ".";
    m[p + "epoch"] = std::to_string(streams_[i].epoch());
    m[p + "position"] = std::to_string(streams_[i].position());
  }
  append_adam(ck, "opt.model.", adam_, model_named(model_));
  append_adam(ck, "opt.pg.", pg_adam_, model_named(model_));
  for (const auto& [name, t] : local_named(local_)) ck.tensors.emplace_back("local." + name, t.clone());
  append_adam(ck, "opt.local.", local_adam_, local_named(local_));
  m["state.globals"] = globals_[0] ? "1" : "0";
  for (std::size_t i = 0; i < 2; ++i) {
    if (!globals_[i]) continue;
    const std::string p = std::string("global.") + lang_name(static_cast<Lang>(i)) + ".";
    append_global_disc(ck, *globals_[i], p);
    append_adam(ck, "opt." + p, global_adam_[i], globals_[i]->named_tensors());
  }
  if (!best_.empty()) {
    const auto& params = model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.tensors.emplace_back("best." + params[i].name, Tensor::from_values(params[i].tensor.shape(), best_[i]));
    }
  }
  return ck;
}

Checkpoint model_part(const Checkpoint& ck) {
  static const char* const kTrainerPrefixes[] = {"state.", "opt.", "local.", "global.", "best."};
  Checkpoint out;
  out.metadata = ck.metadata;
  for (const auto& [name, t] : ck.tensors) {
    const bool trainer_owned = std::any_of(std::begin(kTrainerPrefixes), std::end(kTrainerPrefixes),
                                           [&](const char* p) { return name.rfind(p, 0) == 0; });
    if (!trainer_owned) out.tensors.emplace_back(name, t);
  }
  return out;
}

void Trainer::load_state(const Checkpoint& ck) {
  {
    DualModel saved = load_model(model_part(ck));
    copy_parameters(saved, model_);
  }
  if (std::stoull(ck.meta("state.seed")) != config_.seed) throw ConfigError("checkpoint was written with a different seed");
  state_.stage = std::stoi(ck.meta("state.stage"));
  state_.step = std::stoull(ck.meta("state.step"));
  state_.stage2_step = std::stoull(ck.meta("state.stage2_step"));
  state_.best_score = std::strtod(ck.meta("state.best_score").c_str(), nullptr);
  state_.best_step = std::stoull(ck.meta("state.best_step"));
  state_.globals_pretrained = ck.meta("state.globals_pretrained") == "1";
  const Tensor* h = ck.find("state.history");
  const Tensor* hs = ck.find("state.history_steps");
  if (!h || !hs) throw DataError("checkpoint lacks the evaluation history");
  state_.history.assign(h->values().begin(), h->values().end());
  state_.history_steps.clear();
  for (Real v : hs->values()) state_.history_steps.push_back(static_cast<std::size_t>(v));
  {
    std::istringstream in(ck.meta("state.rng"));
    in >> rng_;
    if (!in) throw DataError("cannot parse the saved random state");
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string p = std::string("stream.") + lang_name(static_cast<Lang>(i)) + ".";
    streams_[i].seek(std::stoull(ck.meta(p + "epoch")), std::stoull(ck.meta(p + "position")));
  }
  restore_adam(ck, "opt.model.", adam_, model_named(model_));
  restore_adam(ck, "opt.pg.", pg_adam_, model_named(model_));
  for (const auto& [name, t] : local_named(local_)) {
    const Tensor* src = ck.find("local." + name);
    if (!src || src->shape() != t.shape()) throw DataError("checkpoint lacks local discriminator tensor " + name);
    Tensor dst = t;
    std::copy(src->values().begin(), src->values().end(), dst.mutable_values().begin());
  }
  restore_adam(ck, "opt.local.", local_adam_, local_named(local_));
  if (ck.meta("state.globals") == "1") {
    ensure_globals();
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string p = std::string("global.") + lang_name(static_cast<Lang>(i)) + ".";
      restore_global_disc(*globals_[i], ck, p);
      restore_adam(ck, "opt." + p, global_adam_[i], globals_[i]->named_tensors());
    }
  }
  best_.clear();
  for (const auto& p : model_.parameters()) {
    const Tensor* b = ck.find("best." + p.name);
    if (!b) {
      best_.clear();
      break;
    }
    best_.emplace_back(b->values().begin(), b->values().end());
  }
}

std::vector<Real> supervised_train(const ParallelCorpus& pairs, DualModel& model,
                                   const SupervisedConfig& config) {
  if (pairs.empty()) throw DataError("supervised training needs aligned pairs");
  if (config.batch == 0) throw ConfigError("batch must be positive");
  Adam adam(adam_config(config.learning_rate, config.warmup, config.clip_norm));
  Rng rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t position = 0;
  std::vector<Real> losses;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<TokenSequence> src, tgt;
    for (std::size_t i = 0; i < config.batch; ++i) {
      if (position == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        position = 0;
      }
      const auto& p = pairs.pairs[order[position++]];
      src.push_back(p.source);
      tgt.push_back(p.target);
    }
    Real total = 0;
    for (Lang from : {Lang::Source, Lang::Target}) {
      const auto& in = from == Lang::Source ? src : tgt;
      const auto& out = from == Lang::Source ? tgt : src;
      Latent latent = model.encode(from, in, Mode::Train, &rng);
      Tensor loss = model.decode_train(other(from), latent, out, Mode::Train, &rng).loss;
      const auto params = model.path_parameters(from, other(from));
      adam.step(params, backward(loss), step);
      total += loss.item();
    }
    losses.push_back(0.5 * total);
  }
  return losses;
}

}  // namespace unmt
