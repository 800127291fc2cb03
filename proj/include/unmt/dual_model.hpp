#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "unmt/attention.hpp"
#include "unmt/checkpoint.hpp"
#include "unmt/embeddings.hpp"
#include "unmt/vocab.hpp"

namespace unmt {

struct SharedStackConfig {
  std::size_t layers = 3;
  // Encoder layers counted from the top, decoder layers from the bottom.
  std::size_t shared = 1;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t ff_width = 128;
  Real dropout = 0.1;

  void validate() const;
};

struct ModelConfig {
  SharedStackConfig stack;
  bool directional = true;
  bool strict_masks = true;
  bool use_gate = true;
  std::size_t max_positions = 256;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
  LayerNormParams norm;

  static FeedForwardParams init(std::size_t width, std::size_t hidden, Rng& rng);
};

struct EncoderLayer {
  DirectionalBlockParams attention;
  FeedForwardParams ff;
};

struct DecoderLayer {
  AttentionParams self;
  LayerNormParams self_norm;
  AttentionParams cross;
  LayerNormParams cross_norm;
  FeedForwardParams ff;
};

struct GateParams {
  Tensor w1, w2, b;
};

struct OutputProjection {
  Tensor w, b;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Encoder output H_r for a packed batch, tagged with its language.
struct Latent {
  Tensor states;
  Segments segments;
  Lang lang = Lang::Source;
};

struct DecoderOutput {
  Tensor logits;
  std::vector<int> targets;
  Segments segments;
  // Mean cross-entropy over every target position.
  Tensor loss;
};

// g = sigmoid(E W1 + H W2 + b); H_r = g * H + (1 - g) * E, elementwise.
Tensor gate_combine(const Tensor& e, const Tensor& h, const GateParams& gate,
                    Tensor* gate_values = nullptr);

// Two encoder/decoder pairs over fixed embedding tables. The top `shared`
// encoder layers and bottom `shared` decoder layers are the same tensors in
// both languages.
class DualModel {
 public:
  DualModel(const ModelConfig& config, EmbeddingTable source, EmbeddingTable target);

  const ModelConfig& config() const { return config_; }
  const EmbeddingTable& embeddings(Lang lang) const { return tables_[index_of(lang)]; }
  // The fixed table scaled by sqrt(width), as fed to the network.
  const Tensor& input_table(Lang lang) const { return scaled_[index_of(lang)]; }
  std::size_t vocab_size(Lang lang) const { return tables_[index_of(lang)].size(); }
  Real embed_scale() const;

  Latent encode(Lang lang, std::span<const TokenSequence> batch, Mode mode, Rng* rng = nullptr) const;
  Latent encode(Lang lang, const TokenSequence& tokens, Mode mode, Rng* rng = nullptr) const;
  // Teacher-forced decoding into `lang`: inputs <s> y, targets y </s>.
  DecoderOutput decode_train(Lang lang, const Latent& latent, std::span<const TokenSequence> targets,
                             Mode mode, Rng* rng = nullptr) const;
  // Sum of log p(y_t | y_<t, x) per sequence, </s> included; shape [batch].
  // Empty targets are allowed and score the lone </s>.
  Tensor sequence_log_probs(Lang lang, const Latent& latent, std::span<const TokenSequence> targets,
                            Mode mode, Rng* rng = nullptr) const;

  // Every trainable tensor exactly once.
  const std::vector<NamedParameter>& parameters() const { return registry_; }
  std::vector<Tensor> encoder_parameters(Lang lang) const;
  std::vector<Tensor> decoder_parameters(Lang lang) const;
  // Parameters reached by encoding `from` and decoding into `to`.
  std::vector<Tensor> path_parameters(Lang from, Lang to) const;
  std::size_t parameter_count() const;
  const NamedParameter* find_parameter(const std::string& name) const;

  // Human-readable tie groups: "enc.2=s,t", "dec.0=s,t".
  std::vector<std::string> tie_groups() const;

  const std::vector<EncoderLayer>& encoder_layers(Lang lang) const { return encoders_[index_of(lang)]; }
  const std::vector<DecoderLayer>& decoder_layers(Lang lang) const { return decoders_[index_of(lang)]; }
  const GateParams& gate() const { return gate_; }
  const OutputProjection& output(Lang lang) const { return outputs_[index_of(lang)]; }
  const Tensor& positions() const { return positions_; }

  void check_tokens(Lang lang, const TokenSequence& tokens) const;

 private:
  DecoderOutput decoder_forward(Lang lang, const Latent& latent, std::span<const TokenSequence> targets,
                                Mode mode, Rng* rng, bool allow_empty) const;
  Tensor packed_positions(const Segments& segments) const;
  void register_all();

  ModelConfig config_;
  EmbeddingTable tables_[2];
  Tensor scaled_[2];
  Tensor positions_;
  std::vector<EncoderLayer> encoders_[2];
  std::vector<DecoderLayer> decoders_[2];
  GateParams gate_;
  OutputProjection outputs_[2];
  std::vector<NamedParameter> registry_;
  std::map<NodeId, std::string> names_;
};

// Builds a model whose tie groups follow `config.stack.shared`.
DualModel tie_parameters(const ModelConfig& config, EmbeddingTable source, EmbeddingTable target);

std::vector<Tensor> encoder_layer_tensors(const EncoderLayer& layer);
std::vector<Tensor> decoder_layer_tensors(const DecoderLayer& layer);

Checkpoint model_checkpoint(const DualModel& model);
// Rebuilds the architecture from metadata, verifies the tie groups and copies
// every parameter value.
DualModel load_model(const Checkpoint& checkpoint);
void copy_parameters(const DualModel& from, DualModel& to);

// Incremental decoding with cached self-attention keys and values. Rows are
// hypotheses; each row attends one segment of the encoder memory.
class DecoderSession {
 public:
  DecoderSession(const DualModel& model, Lang lang, const Latent& memory,
                 std::vector<std::size_t> row_sources);

  std::size_t rows() const { return sources_.size(); }
  std::size_t position() const { return position_; }
  // Keeps (and reorders) rows by index into the current rows.
  void select(std::span<const std::size_t> rows);
  // Feeds one token per row; returns next-token log-probabilities [rows x V].
  std::vector<Real> step(std::span<const int> tokens);

 private:
  const DualModel& model_;
  Lang lang_;
  Segments memory_segments_;
  std::vector<std::size_t> sources_;
  std::vector<Tensor> memory_keys_, memory_values_;
  // [layer][row] -> flattened [position x width].
  std::vector<std::vector<std::vector<Real>>> keys_, values_;
  std::size_t position_ = 0;
};

}  // namespace unmt
