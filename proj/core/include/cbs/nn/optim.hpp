#pragma once

#include <span>
#include <vector>

#include "cbs/nn/tensor.hpp"

namespace cbs::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Param*> params, AdamOptions options);

  void zero_grad();
  void step();
  long steps() const noexcept { return t_; }

 private:
  std::vector<Param*> params_;
  AdamOptions opt_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long t_ = 0;
};

}  // namespace cbs::nn
