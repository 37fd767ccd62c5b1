#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adkd/model.hpp"
#include "adkd/tensor.hpp"

namespace adkd::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Learning rate at 0-based step s of `total`: linear warmup over the first
// warmup_fraction of steps, then linear decay towards zero.
class LinearSchedule {
 public:
  LinearSchedule(double peak, std::size_t total_steps, double warmup_fraction);

  double at(std::size_t step) const;
  std::size_t total_steps() const { return total_; }
  std::size_t warmup_steps() const { return warmup_; }

 private:
  double peak_;
  std::size_t total_;
  std::size_t warmup_;
};

// Scales grads in place so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

class Adam {
 public:
  Adam(const std::vector<model::Parameter>& params, AdamConfig config = {});

  void step(std::vector<model::Parameter>& params, std::span<const Tensor> grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

}  // namespace adkd::optim
