#include "unmt/dual_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "unmt/errors.hpp"
#include "unmt/init.hpp"

namespace unmt {

void SharedStackConfig::validate() const {
  if (layers == 0) throw ConfigError("model needs at least one layer");
  if (shared > layers) {
    throw ConfigError("shared layer count " + std::to_string(shared) + " exceeds layer count " +
                      std::to_string(layers));
  }
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (width % 2 != 0) throw ConfigError("model width must be even");
  if (ff_width == 0) throw ConfigError("feed-forward width must be positive");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
}

void ModelConfig::validate() const {
  stack.validate();
  if (max_positions == 0) throw ConfigError("max_positions must be positive");
}

FeedForwardParams FeedForwardParams::init(std::size_t width, std::size_t hidden, Rng& rng) {
  FeedForwardParams p;
  p.w1 = xavier_uniform(width, hidden, rng);
  p.b1 = zeros_param({hidden});
  p.w2 = xavier_uniform(hidden, width, rng);
  p.b2 = zeros_param({width});
  p.norm = LayerNormParams::init(width);
  return p;
}

Tensor gate_combine(const Tensor& e, const Tensor& h, const GateParams& gate, Tensor* gate_values) {
  if (e.shape() != h.shape()) {
    throw DimensionError("gate inputs differ in shape: " + shape_string(e.shape()) + " vs " +
                         shape_string(h.shape()));
  }
  Tensor g = sigmoid(add(linear(e, gate.w1, Tensor()), linear(h, gate.w2, gate.b)));
  if (gate_values) *gate_values = g;
  return add(e, mul(g, sub(h, e)));
}

namespace {

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p, const DropoutContext& dropout) {
  Tensor hidden = relu(linear(x, p.w1, p.b1));
  Tensor y = linear(hidden, p.w2, p.b2);
  return layer_norm(add(x, dropout.apply(y)), p.norm.gain, p.norm.bias);
}

EncoderLayer make_encoder_layer(const SharedStackConfig& c, Rng& rng) {
  return {DirectionalBlockParams::init(c.width, c.heads, rng),
          FeedForwardParams::init(c.width, c.ff_width, rng)};
}

DecoderLayer make_decoder_layer(const SharedStackConfig& c, Rng& rng) {
  DecoderLayer l;
  l.self = AttentionParams::init(c.width, c.heads, rng);
  l.self_norm = LayerNormParams::init(c.width);
  l.cross = AttentionParams::init(c.width, c.heads, rng);
  l.cross_norm = LayerNormParams::init(c.width);
  l.ff = FeedForwardParams::init(c.width, c.ff_width, rng);
  return l;
}

void push_attention(std::vector<NamedParameter>& out, const std::string& prefix,
                    const AttentionParams& p) {
  const auto names = AttentionParams::tensor_names();
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) out.push_back({prefix + names[i], tensors[i]});
}

void push_norm(std::vector<NamedParameter>& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + "gain", p.gain});
  out.push_back({prefix + "bias", p.bias});
}

void push_ff(std::vector<NamedParameter>& out, const std::string& prefix, const FeedForwardParams& p) {
  out.push_back({prefix + "w1", p.w1});
  out.push_back({prefix + "b1", p.b1});
  out.push_back({prefix + "w2", p.w2});
  out.push_back({prefix + "b2", p.b2});
  push_norm(out, prefix + "norm.", p.norm);
}

std::vector<NamedParameter> named_encoder_layer(const std::string& prefix, const EncoderLayer& l) {
  std::vector<NamedParameter> out;
  push_attention(out, prefix + "fwd.", l.attention.forward);
  push_norm(out, prefix + "fwd_norm.", l.attention.forward_norm);
  push_attention(out, prefix + "bwd.", l.attention.backward);
  push_norm(out, prefix + "bwd_norm.", l.attention.backward_norm);
  push_ff(out, prefix + "ff.", l.ff);
  return out;
}

std::vector<NamedParameter> named_decoder_layer(const std::string& prefix, const DecoderLayer& l) {
  std::vector<NamedParameter> out;
  push_attention(out, prefix + "self.", l.self);
  push_norm(out, prefix + "self_norm.", l.self_norm);
  push_attention(out, prefix + "cross.", l.cross);
  push_norm(out, prefix + "cross_norm.", l.cross_norm);
  push_ff(out, prefix + "ff.", l.ff);
  return out;
}

std::vector<Tensor> tensors_of(const std::vector<NamedParameter>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& p : named) out.push_back(p.tensor);
  return out;
}

}  // namespace

std::vector<Tensor> encoder_layer_tensors(const EncoderLayer& layer) {
  return tensors_of(named_encoder_layer("", layer));
}

std::vector<Tensor> decoder_layer_tensors(const DecoderLayer& layer) {
  return tensors_of(named_decoder_layer("", layer));
}

DualModel::DualModel(const ModelConfig& config, EmbeddingTable source, EmbeddingTable target)
    : config_(config) {
  config_.validate();
  tables_[0] = std::move(source);
  tables_[1] = std::move(target);
  const auto& c = config_.stack;
  for (const auto& t : tables_) {
    if (!t.matrix.defined() || t.size() == 0) throw ConfigError("model needs nonempty embedding tables");
    if (t.dim() != c.width) {
      throw ConfigError("embedding dimension " + std::to_string(t.dim()) +
                        " differs from model width " + std::to_string(c.width));
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    NoGradGuard guard;
    scaled_[i] = scale(tables_[i].matrix, embed_scale()).detach();
  }
  positions_ = positional_encoding(config_.max_positions, c.width);

  Rng rng(config_.seed);
  const std::size_t first_shared = c.layers - c.shared;
  std::vector<EncoderLayer> shared_enc;
  std::vector<DecoderLayer> shared_dec;
  for (std::size_t j = 0; j < c.shared; ++j) shared_enc.push_back(make_encoder_layer(c, rng));
  for (std::size_t j = 0; j < c.shared; ++j) shared_dec.push_back(make_decoder_layer(c, rng));
  for (std::size_t lang = 0; lang < 2; ++lang) {
    for (std::size_t j = 0; j < c.layers; ++j) {
      encoders_[lang].push_back(j >= first_shared ? shared_enc[j - first_shared]
                                                  : make_encoder_layer(c, rng));
    }
    for (std::size_t j = 0; j < c.layers; ++j) {
      decoders_[lang].push_back(j < c.shared ? shared_dec[j] : make_decoder_layer(c, rng));
    }
  }
  if (config_.use_gate) {
    gate_.w1 = xavier_uniform(c.width, c.width, rng);
    gate_.w2 = xavier_uniform(c.width, c.width, rng);
    gate_.b = zeros_param({c.width});
  }
  for (std::size_t lang = 0; lang < 2; ++lang) {
    outputs_[lang].w = xavier_uniform(c.width, tables_[lang].size(), rng);
    outputs_[lang].b = zeros_param({tables_[lang].size()});
  }
  register_all();
}

Real DualModel::embed_scale() const { return std::sqrt(static_cast<Real>(config_.stack.width)); }

void DualModel::register_all() {
  const auto& c = config_.stack;
  const std::size_t first_shared = c.layers - c.shared;
  auto add = [&](std::vector<NamedParameter> params) {
    for (auto& p : params) {
      if (names_.count(p.tensor.id())) continue;
      names_[p.tensor.id()] = p.name;
      registry_.push_back(std::move(p));
    }
  };
  for (std::size_t j = first_shared; j < c.layers; ++j) {
    add(named_encoder_layer("enc.shared." + std::to_string(j) + ".", encoders_[0][j]));
  }
  for (std::size_t j = 0; j < c.shared; ++j) {
    add(named_decoder_layer("dec.shared." + std::to_string(j) + ".", decoders_[0][j]));
  }
  for (Lang lang : {Lang::Source, Lang::Target}) {
    const std::string tag = lang_name(lang);
    for (std::size_t j = 0; j < first_shared; ++j) {
      add(named_encoder_layer("enc." + tag + "." + std::to_string(j) + ".", encoders_[index_of(lang)][j]));
    }
    for (std::size_t j = c.shared; j < c.layers; ++j) {
      add(named_decoder_layer("dec." + tag + "." + std::to_string(j) + ".", decoders_[index_of(lang)][j]));
    }
    add({{"out." + tag + ".w", outputs_[index_of(lang)].w}, {"out." + tag + ".b", outputs_[index_of(lang)].b}});
  }
  if (config_.use_gate) add({{"gate.w1", gate_.w1}, {"gate.w2", gate_.w2}, {"gate.b", gate_.b}});
}

std::vector<Tensor> DualModel::encoder_parameters(Lang lang) const {
  std::vector<Tensor> out;
  for (const auto& layer : encoders_[index_of(lang)]) {
    auto t = encoder_layer_tensors(layer);
    out.insert(out.end(), t.begin(), t.end());
  }
  if (config_.use_gate) out.insert(out.end(), {gate_.w1, gate_.w2, gate_.b});
  return out;
}

std::vector<Tensor> DualModel::decoder_parameters(Lang lang) const {
  std::vector<Tensor> out;
  for (const auto& layer : decoders_[index_of(lang)]) {
    auto t = decoder_layer_tensors(layer);
    out.insert(out.end(), t.begin(), t.end());
  }
  out.push_back(outputs_[index_of(lang)].w);
  out.push_back(outputs_[index_of(lang)].b);
  return out;
}

std::vector<Tensor> DualModel::path_parameters(Lang from, Lang to) const {
  auto out = encoder_parameters(from);
  auto dec = decoder_parameters(to);
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::size_t DualModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : registry_) n += p.tensor.numel();
  return n;
}

const NamedParameter* DualModel::find_parameter(const std::string& name) const {
  for (const auto& p : registry_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<std::string> DualModel::tie_groups() const {
  std::vector<std::string> groups;
  const auto& c = config_.stack;
  for (std::size_t j = 0; j < c.layers; ++j) {
    if (encoders_[0][j].ff.w1.id() == encoders_[1][j].ff.w1.id()) groups.push_back("enc." + std::to_string(j) + "=s,t");
  }
  for (std::size_t j = 0; j < c.layers; ++j) {
    if (decoders_[0][j].ff.w1.id() == decoders_[1][j].ff.w1.id()) groups.push_back("dec." + std::to_string(j) + "=s,t");
  }
  return groups;
}

void DualModel::check_tokens(Lang lang, const TokenSequence& tokens) const {
  const int v = static_cast<int>(vocab_size(lang));
  for (int id : tokens) {
    if (id < 0 || id >= v) {
      throw DataError("token id " + std::to_string(id) + " outside the " + lang_name(lang) +
                      " vocabulary of size " + std::to_string(v));
    }
  }
}

Tensor DualModel::packed_positions(const Segments& segments) const {
  const std::size_t d = config_.stack.width;
  std::vector<Real> out(segments.total() * d);
  auto pe = positions_.values();
  std::size_t row = 0;
  for (std::size_t len : segments.lengths) {
    if (len > config_.max_positions) {
      throw DataError("sequence of length " + std::to_string(len) + " exceeds max_positions " +
                      std::to_string(config_.max_positions));
    }
    std::copy(pe.begin(), pe.begin() + static_cast<std::ptrdiff_t>(len * d),
              out.begin() + static_cast<std::ptrdiff_t>(row * d));
    row += len;
  }
  return Tensor::from_values({segments.total(), d}, std::move(out));
}

Latent DualModel::encode(Lang lang, std::span<const TokenSequence> batch, Mode mode, Rng* rng) const {
  if (batch.empty()) throw ContractError("encode: empty batch");
  std::vector<std::size_t> lengths;
  std::vector<int> ids;
  for (const auto& s : batch) {
    if (s.empty()) throw DataError("encode: empty sentence");
    check_tokens(lang, s);
    lengths.push_back(s.size());
    ids.insert(ids.end(), s.begin(), s.end());
  }
  Segments seg = Segments::from_lengths(lengths);
  const DropoutContext drop{config_.stack.dropout, mode, rng};
  Tensor e = rows_gather(scaled_[index_of(lang)], ids);
  Tensor x = drop.apply(add(e, packed_positions(seg)));
  for (const auto& layer : encoders_[index_of(lang)]) {
    x = directional_block(x, seg, layer.attention, config_.strict_masks, config_.directional, drop);
    x = feed_forward(x, layer.ff, drop);
  }
  if (config_.use_gate) x = gate_combine(e, x, gate_);
  return {x, std::move(seg), lang};
}

Latent DualModel::encode(Lang lang, const TokenSequence& tokens, Mode mode, Rng* rng) const {
  return encode(lang, std::span<const TokenSequence>(&tokens, 1), mode, rng);
}

DecoderOutput DualModel::decoder_forward(Lang lang, const Latent& latent,
                                         std::span<const TokenSequence> targets, Mode mode,
                                         Rng* rng, bool allow_empty) const {
  if (targets.size() != latent.segments.count()) {
    throw DimensionError("decoder batch of " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(latent.segments.count()) + " encoded sentences");
  }
  std::vector<std::size_t> lengths;
  std::vector<int> inputs, outputs;
  for (const auto& t : targets) {
    if (t.empty() && !allow_empty) throw DataError("decode_train: empty target sentence");
    check_tokens(lang, t);
    lengths.push_back(t.size() + 1);
    inputs.push_back(Vocab::kBos);
    inputs.insert(inputs.end(), t.begin(), t.end());
    outputs.insert(outputs.end(), t.begin(), t.end());
    outputs.push_back(Vocab::kEos);
  }
  Segments seg = Segments::from_lengths(lengths);
  const DropoutContext drop{config_.stack.dropout, mode, rng};
  Tensor x = drop.apply(add(rows_gather(scaled_[index_of(lang)], inputs), packed_positions(seg)));
  for (const auto& layer : decoders_[index_of(lang)]) {
    Tensor a = multi_head(x, seg, layer.self, MaskKind::ForwardRelaxed);
    x = layer_norm(add(x, drop.apply(a)), layer.self_norm.gain, layer.self_norm.bias);
    Tensor c = multi_head_cross(x, seg, latent.states, latent.segments, layer.cross);
    x = layer_norm(add(x, drop.apply(c)), layer.cross_norm.gain, layer.cross_norm.bias);
    x = feed_forward(x, layer.ff, drop);
  }
  const auto& out = outputs_[index_of(lang)];
  DecoderOutput result;
  result.logits = linear(x, out.w, out.b);
  result.targets = std::move(outputs);
  result.segments = std::move(seg);
  return result;
}

DecoderOutput DualModel::decode_train(Lang lang, const Latent& latent,
                                      std::span<const TokenSequence> targets, Mode mode,
                                      Rng* rng) const {
  DecoderOutput out = decoder_forward(lang, latent, targets, mode, rng, false);
  out.loss = cross_entropy(out.logits, out.targets);
  return out;
}

Tensor DualModel::sequence_log_probs(Lang lang, const Latent& latent,
                                     std::span<const TokenSequence> targets, Mode mode,
                                     Rng* rng) const {
  DecoderOutput out = decoder_forward(lang, latent, targets, mode, rng, true);
  Tensor token_lp = pick(log_softmax_lastdim(out.logits), out.targets);
  Tensor summed = segment_sum(token_lp.reshape({out.targets.size(), 1}), out.segments);
  return summed.reshape({targets.size()});
}

DualModel tie_parameters(const ModelConfig& config, EmbeddingTable source, EmbeddingTable target) {
  return DualModel(config, std::move(source), std::move(target));
}

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ";") + p;
  return out;
}

}  // namespace

Checkpoint model_checkpoint(const DualModel& model) {
  const auto& c = model.config();
  Checkpoint ck;
  auto& m = ck.metadata;
  m["model.layers"] = std::to_string(c.stack.layers);
  m["model.shared"] = std::to_string(c.stack.shared);
  m["model.width"] = std::to_string(c.stack.width);
  m["model.heads"] = std::to_string(c.stack.heads);
  m["model.ff_width"] = std::to_string(c.stack.ff_width);
  std::ostringstream dropout;
  dropout << std::hexfloat << c.stack.dropout;
  m["model.dropout"] = dropout.str();
  m["model.directional"] = c.directional ? "1" : "0";
  m["model.strict_masks"] = c.strict_masks ? "1" : "0";
  m["model.use_gate"] = c.use_gate ? "1" : "0";
  m["model.max_positions"] = std::to_string(c.max_positions);
  m["model.seed"] = std::to_string(c.seed);
  m["model.ties"] = join(model.tie_groups());
  ck.tensors.emplace_back("embed.s", model.embeddings(Lang::Source).matrix);
  ck.tensors.emplace_back("embed.t", model.embeddings(Lang::Target).matrix);
  for (const auto& p : model.parameters()) ck.tensors.emplace_back(p.name, p.tensor.clone());
  return ck;
}

void copy_parameters(const DualModel& from, DualModel& to) {
  for (const auto& p : to.parameters()) {
    const NamedParameter* src = from.find_parameter(p.name);
    if (!src) throw DataError("missing parameter '" + p.name + "'");
    if (src->tensor.shape() != p.tensor.shape()) throw DataError("shape mismatch for '" + p.name + "'");
    Tensor dst = p.tensor;
    auto v = src->tensor.values();
    std::copy(v.begin(), v.end(), dst.mutable_values().begin());
  }
}

DualModel load_model(const Checkpoint& ck) {
  auto num = [&](const char* key) { return static_cast<std::size_t>(std::stoull(ck.meta(key))); };
  ModelConfig c;
  c.stack.layers = num("model.layers");
  c.stack.shared = num("model.shared");
  c.stack.width = num("model.width");
  c.stack.heads = num("model.heads");
  c.stack.ff_width = num("model.ff_width");
  c.stack.dropout = std::strtod(ck.meta("model.dropout").c_str(), nullptr);
  c.directional = ck.meta("model.directional") == "1";
  c.strict_masks = ck.meta("model.strict_masks") == "1";
  c.use_gate = ck.meta("model.use_gate") == "1";
  c.max_positions = num("model.max_positions");
  c.seed = num("model.seed");
  EmbeddingTable tables[2];
  for (Lang lang : {Lang::Source, Lang::Target}) {
    const Tensor* t = ck.find(std::string("embed.") + lang_name(lang));
    if (!t) throw DataError(std::string("checkpoint lacks embed.") + lang_name(lang));
    tables[index_of(lang)].matrix = t->clone();
    tables[index_of(lang)].normalized = true;
  }
  DualModel model(c, tables[0], tables[1]);
  if (join(model.tie_groups()) != ck.meta("model.ties")) {
    throw DataError("checkpoint tie groups '" + ck.meta("model.ties") +
                    "' do not match the rebuilt model");
  }
  std::set<std::string> expected;
  for (const auto& p : model.parameters()) {
    expected.insert(p.name);
    const Tensor* src = ck.find(p.name);
    if (!src) throw DataError("checkpoint lacks parameter '" + p.name + "'");
    if (src->shape() != p.tensor.shape()) throw DataError("shape mismatch for '" + p.name + "'");
    Tensor dst = p.tensor;
    auto v = src->values();
    std::copy(v.begin(), v.end(), dst.mutable_values().begin());
  }
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("embed.", 0) != 0 && !expected.count(name)) {
      throw DataError("unexpected parameter '" + name + "'");
    }
  }
  return model;
}

DecoderSession::DecoderSession(const DualModel& model, Lang lang, const Latent& memory,
                               std::vector<std::size_t> row_sources)
    : model_(model), lang_(lang), memory_segments_(memory.segments), sources_(std::move(row_sources)) {
  NoGradGuard guard;
  for (std::size_t s : sources_) {
    if (s >= memory_segments_.count()) throw DimensionError("decoder row refers to a missing source");
  }
  const auto& layers = model_.decoder_layers(lang_);
  for (const auto& layer : layers) {
    memory_keys_.push_back(linear(memory.states, layer.cross.wk, layer.cross.bk));
    memory_values_.push_back(linear(memory.states, layer.cross.wv, layer.cross.bv));
  }
  keys_.assign(layers.size(), std::vector<std::vector<Real>>(sources_.size()));
  values_ = keys_;
}

void DecoderSession::select(std::span<const std::size_t> rows) {
  std::vector<std::size_t> sources;
  for (std::size_t r : rows) {
    if (r >= sources_.size()) throw DimensionError("decoder session row out of range");
    sources.push_back(sources_[r]);
  }
  for (std::size_t l = 0; l < keys_.size(); ++l) {
    std::vector<std::vector<Real>> k, v;
    k.reserve(rows.size());
    v.reserve(rows.size());
    for (std::size_t r : rows) {
      k.push_back(keys_[l][r]);
      v.push_back(values_[l][r]);
    }
    keys_[l] = std::move(k);
    values_[l] = std::move(v);
  }
  sources_ = std::move(sources);
}

std::vector<Real> DecoderSession::step(std::span<const int> tokens) {
  NoGradGuard guard;
  const std::size_t rows = sources_.size();
  if (tokens.size() != rows) throw DimensionError("decoder step needs one token per row");
  const std::size_t d = model_.config().stack.width;
  if (position_ >= model_.config().max_positions) throw DataError("decoding exceeds max_positions");
  TokenSequence ids(tokens.begin(), tokens.end());
  model_.check_tokens(lang_, ids);

  Tensor x = rows_gather(model_.input_table(lang_), ids);
  {
    std::vector<Real> pe(rows * d);
    auto row = model_.positions().values().subspan(position_ * d, d);
    for (std::size_t r = 0; r < rows; ++r) std::copy(row.begin(), row.end(), pe.begin() + static_cast<std::ptrdiff_t>(r * d));
    x = add(x, Tensor::from_values({rows, d}, std::move(pe)));
  }
  const std::size_t len = position_ + 1;
  const Segments query_seg = Segments::uniform(rows, 1);
  const Segments cache_seg = Segments::uniform(rows, len);
  Segments memory_seg;
  for (std::size_t s : sources_) {
    memory_seg.offsets.push_back(memory_segments_.offsets[s]);
    memory_seg.lengths.push_back(memory_segments_.lengths[s]);
  }
  const auto& layers = model_.decoder_layers(lang_);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    Tensor q = linear(x, layer.self.wq, layer.self.bq);
    Tensor k = linear(x, layer.self.wk, layer.self.bk);
    Tensor v = linear(x, layer.self.wv, layer.self.bv);
    std::vector<Real> packed_k(rows * len * d), packed_v(rows * len * d);
    for (std::size_t r = 0; r < rows; ++r) {
      auto kr = k.values().subspan(r * d, d);
      auto vr = v.values().subspan(r * d, d);
      keys_[l][r].insert(keys_[l][r].end(), kr.begin(), kr.end());
      values_[l][r].insert(values_[l][r].end(), vr.begin(), vr.end());
      std::copy(keys_[l][r].begin(), keys_[l][r].end(), packed_k.begin() + static_cast<std::ptrdiff_t>(r * len * d));
      std::copy(values_[l][r].begin(), values_[l][r].end(), packed_v.begin() + static_cast<std::ptrdiff_t>(r * len * d));
    }
    Tensor ctx = attention(q, Tensor::from_values({rows * len, d}, std::move(packed_k)),
                           Tensor::from_values({rows * len, d}, std::move(packed_v)), query_seg,
                           cache_seg, layer.self.heads, MaskKind::None);
    x = layer_norm(add(x, linear(ctx, layer.self.wo, layer.self.bo)), layer.self_norm.gain,
                   layer.self_norm.bias);
    Tensor cq = linear(x, layer.cross.wq, layer.cross.bq);
    Tensor cross = attention(cq, memory_keys_[l], memory_values_[l], query_seg, memory_seg,
                             layer.cross.heads, MaskKind::None);
    x = layer_norm(add(x, linear(cross, layer.cross.wo, layer.cross.bo)), layer.cross_norm.gain,
                   layer.cross_norm.bias);
    x = feed_forward(x, layer.ff, DropoutContext{});
  }
  const auto& out = model_.output(lang_);
  Tensor lp = log_softmax_lastdim(linear(x, out.w, out.b));
  ++position_;
  auto values = lp.values();
  return {values.begin(), values.end()};
}

}  // namespace unmt
