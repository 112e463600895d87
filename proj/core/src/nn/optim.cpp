#include "cbs/nn/optim.hpp"

#include <cmath>

namespace cbs::nn {

Adam::Adam(std::vector<Param*> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const Param* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->value;
    const Tensor& g = params_[k]->grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      w[i] -= opt_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.epsilon);
    }
  }
}

}  // namespace cbs::nn
