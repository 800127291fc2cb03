#pragma once

#include <span>
#include <string>
#include <vector>

#include "unmt/dual_model.hpp"
#include "unmt/optim.hpp"

namespace unmt {

// Class indices of the latent-space discriminator.
constexpr int kClassSource = 0;
constexpr int kClassTarget = 1;

// Language classifier on mean-pooled encoder states: two ReLU hidden layers
// and a 2-way softmax.
struct LocalDiscriminator {
  Tensor w1, b1, w2, b2, w3, b3;

  static LocalDiscriminator init(std::size_t width, std::size_t hidden, Rng& rng);
  std::size_t width() const { return w1.dim(0); }
  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2, w3, b3}; }
  // Same storage, no gradients.
  LocalDiscriminator frozen() const;
};

// Logits [batch x 2] from pooled latents.
Tensor local_disc_logits(const Latent& latent, const LocalDiscriminator& d);
// Probabilities [batch x 2] over {source, target}.
Tensor local_disc_forward(const Latent& latent, const LocalDiscriminator& d);
// -mean log p(s | source latents) - mean log p(t | target latents). Latents
// are detached, so only the discriminator receives gradients.
Tensor local_disc_loss(const Latent& source, const Latent& target, const LocalDiscriminator& d);
// -mean log p(other language | latents). The discriminator is frozen, so only
// the encoder receives gradients.
Tensor encoder_fool_loss(const Latent& latent, const LocalDiscriminator& d);
// Fraction of latents whose argmax class equals their language.
Real local_disc_accuracy(const Latent& latent, const LocalDiscriminator& d);

// Class indices of the sentence discriminators.
constexpr int kClassTrue = 0;
constexpr int kClassGenerated = 1;

struct KernelSpec {
  std::size_t window = 3;
  std::size_t count = 64;
};

std::vector<KernelSpec> parse_kernel_spec(const std::string& text);
std::string kernel_spec_string(const std::vector<KernelSpec>& kernels);

// [T x k] embedding rows of the tokens followed by zero rows. The padding id
// also maps to a zero row.
Tensor pad_to_fixed(const TokenSequence& tokens, std::size_t length, const EmbeddingTable& table);
Tensor pad_batch(std::span<const TokenSequence> batch, std::size_t length, const EmbeddingTable& table);

// Convolutional true-vs-generated sentence classifier: per kernel a window
// convolution, batch normalisation, ReLU and max-over-time pooling, then a
// bias-free projection to two classes.
class GlobalDiscriminator {
 public:
  struct Kernel {
    KernelSpec spec;
    Tensor weight, bias, bn_gain, bn_bias;
    BatchNormState bn;
  };

  GlobalDiscriminator() = default;
  GlobalDiscriminator(std::size_t length, std::size_t embedding_dim, std::vector<KernelSpec> kernels,
                      Rng& rng);

  std::size_t length() const { return length_; }
  std::size_t embedding_dim() const { return dim_; }
  std::size_t features() const;
  const std::vector<Kernel>& kernels() const { return kernels_; }
  std::vector<Kernel>& kernels() { return kernels_; }
  const Tensor& projection() const { return v_; }
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  bool pretrained = false;

  // x_c of every sentence in a packed [batch*T x k] input: [batch x features].
  Tensor pooled_features(const Tensor& x, Mode mode);
  Tensor logits(const Tensor& x, Mode mode);
  Tensor forward(const Tensor& x, Mode mode);

 private:
  std::size_t length_ = 0;
  std::size_t dim_ = 0;
  std::vector<Kernel> kernels_;
  Tensor v_;
};

Checkpoint global_disc_checkpoint(const GlobalDiscriminator& d);
// Restores values into an already-constructed discriminator of equal shape.
void restore_global_disc(GlobalDiscriminator& d, const Checkpoint& checkpoint, const std::string& prefix = "");
void append_global_disc(Checkpoint& checkpoint, const GlobalDiscriminator& d, const std::string& prefix);

Tensor global_disc_forward(const Tensor& x, GlobalDiscriminator& d, Mode mode);

struct GlobalTrainConfig {
  std::size_t batch = 32;
  std::size_t max_steps = 1000;
  std::size_t eval_every = 50;
  // Evaluations without a held-out improvement before stopping; 0 runs all
  // max_steps.
  std::size_t patience = 5;
  Real held_out_fraction = 0.1;
  AdamConfig adam{1e-3};
  std::uint64_t seed = 5;
};

struct GlobalTrainResult {
  std::size_t steps = 0;
  Real held_out_accuracy = 0;
  Real best_accuracy = 0;
  std::vector<Real> accuracy_history;
};

Real global_disc_accuracy(GlobalDiscriminator& d, std::span<const TokenSequence> real,
                          std::span<const TokenSequence> generated, const EmbeddingTable& table);
// One cross-entropy update on a batch of true and generated sentences, in
// equal numbers. Returns the loss.
Real global_disc_step(GlobalDiscriminator& d, Adam& adam, std::span<const TokenSequence> real,
                      std::span<const TokenSequence> generated, const EmbeddingTable& table);
// Trains on balanced batches, evaluating on a held-out slice of both sets.
GlobalTrainResult train_global_discriminator(GlobalDiscriminator& d,
                                             const std::vector<TokenSequence>& real,
                                             const std::vector<TokenSequence>& generated,
                                             const EmbeddingTable& table,
                                             const GlobalTrainConfig& config);
// True sentences of `lang` against greedy translations of `other_corpus`
// (written in the other language) produced by the model.
GlobalTrainResult pretrain_global_disc(const std::vector<TokenSequence>& true_corpus,
                                       const std::vector<TokenSequence>& other_corpus,
                                       const DualModel& model, GlobalDiscriminator& d, Lang lang,
                                       const GlobalTrainConfig& config);

// -mean_i (reward_i - baseline) * log_prob_i.
Tensor reinforce_loss(const Tensor& log_probs, std::span<const Real> rewards, Real baseline);

struct PolicyGradientResult {
  Real mean_reward = 0;
  Real loss = 0;
  std::size_t degenerate = 0;
  std::vector<TokenSequence> samples;
  std::vector<Real> rewards;
};

// Samples a translation of each source sentence into `other(from)`, rewards
// it with the discriminator's "true" probability (0 for empty samples) and
// takes one optimizer step on the generator path with the batch-mean
// baseline.
PolicyGradientResult policy_gradient_update(const DualModel& model, Lang from,
                                            GlobalDiscriminator& d, std::span<const TokenSequence> batch,
                                            Adam& optimizer, Rng& rng, std::size_t max_len,
                                            std::size_t schedule_step = 0);

}  // namespace unmt
