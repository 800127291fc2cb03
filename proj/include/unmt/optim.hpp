#pragma once

#include <map>
#include <span>
#include <vector>

#include "unmt/autograd.hpp"
#include "unmt/tensor.hpp"

namespace unmt {

struct AdamConfig {
  Real learning_rate = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.98;
  Real eps = 1e-9;
  // Steps of linear warmup before inverse-square-root decay; 0 keeps the
  // rate constant.
  std::size_t warmup = 0;
  // Global gradient-norm clip per step; 0 disables.
  Real clip_norm = 0;
};

struct ParamMoments {
  std::vector<Real> first;
  std::vector<Real> second;
  std::size_t updates = 0;
};

struct OptimizerState {
  std::map<NodeId, ParamMoments> moments;
  std::size_t step = 0;
};

// Rate at 1-based step: peaks at learning_rate when step == warmup.
Real scheduled_rate(const AdamConfig& config, std::size_t step);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every tensor in `params` in place. Each one must have an entry in
  // `grads`; moments are created lazily and bias-corrected per parameter.
  // A nonzero `schedule_step` replaces the update counter in the rate
  // schedule, for callers that take several updates per training step.
  void step(std::span<const Tensor> params, const GradientMap& grads, std::size_t schedule_step = 0);

  const AdamConfig& config() const { return config_; }
  OptimizerState& state() { return state_; }
  const OptimizerState& state() const { return state_; }

 private:
  AdamConfig config_;
  OptimizerState state_;
};

}  // namespace unmt
