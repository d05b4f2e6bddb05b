#pragma once

#include <cstdint>
#include <vector>

#include "rndiff/tensor.hpp"

namespace rndiff {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (applied directly to the parameter)
};

/// Adam with bias correction and decoupled weight decay. Deterministic: the
/// update only depends on parameters, gradients and step count.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamConfig cfg);

  /// One update from the gradients currently stored on the parameters.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace rndiff
