#include "adkd/optim.hpp"

#include <cmath>

#include "adkd/errors.hpp"

namespace adkd::optim {

LinearSchedule::LinearSchedule(double peak, std::size_t total_steps, double warmup_fraction)
    : peak_(peak),
      total_(total_steps),
      warmup_(static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)))) {}

double LinearSchedule::at(std::size_t step) const {
  if (step >= total_) return 0.0;
  if (step < warmup_) {
    return peak_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
  }
  return peak_ * static_cast<double>(total_ - step) / static_cast<double>(total_ - warmup_);
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.values()) v *= s;
    }
  }
  return norm;
}

Adam::Adam(const std::vector<model::Parameter>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(std::vector<model::Parameter>& params, std::span<const Tensor> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam: parameter/gradient count mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.values();
    auto g = grads[i].values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    if (g.size() != w.size()) throw ShapeError("Adam: gradient shape for " + params[i].name);
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

}  // namespace adkd::optim
