#include "unmt/optim.hpp"

#include <cmath>

#include "unmt/errors.hpp"

namespace unmt {

Real scheduled_rate(const AdamConfig& config, std::size_t step) {
  if (config.warmup == 0) return config.learning_rate;
  const Real s = static_cast<Real>(std::max<std::size_t>(step, 1));
  const Real w = static_cast<Real>(config.warmup);
  return config.learning_rate * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

void Adam::step(std::span<const Tensor> params, const GradientMap& grads, std::size_t schedule_step) {
  std::vector<const Tensor*> gradients;
  gradients.reserve(params.size());
  for (const auto& p : params) {
    const Tensor* g = grads.find(p);
    if (!g) throw ContractError("adam_step: missing gradient for parameter " + std::to_string(p.id()));
    if (g->numel() != p.numel()) throw DimensionError("adam_step: gradient shape mismatch");
    gradients.push_back(g);
  }
  Real clip = 1.0;
  if (config_.clip_norm > 0) {
    Real norm2 = 0;
    for (const Tensor* g : gradients)
      for (Real v : g->values()) norm2 += v * v;
    const Real norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericError("adam_step: non-finite gradient norm");
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }

  ++state_.step;
  const Real rate = scheduled_rate(config_, schedule_step ? schedule_step : state_.step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor param = params[k];
    auto values = param.mutable_values();
    auto g = gradients[k]->values();
    auto& mom = state_.moments[param.id()];
    if (mom.first.empty()) {
      mom.first.assign(values.size(), 0.0);
      mom.second.assign(values.size(), 0.0);
    }
    ++mom.updates;
    const Real c1 = 1.0 - std::pow(config_.beta1, static_cast<Real>(mom.updates));
    const Real c2 = 1.0 - std::pow(config_.beta2, static_cast<Real>(mom.updates));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real gi = g[i] * clip;
      mom.first[i] = config_.beta1 * mom.first[i] + (1 - config_.beta1) * gi;
      mom.second[i] = config_.beta2 * mom.second[i] + (1 - config_.beta2) * gi * gi;
      const Real m_hat = mom.first[i] / c1;
      const Real v_hat = mom.second[i] / c2;
      values[i] -= rate * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace unmt
