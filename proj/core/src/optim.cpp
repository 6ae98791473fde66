#include "frad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace frad {

Adam::Adam(std::vector<Tensor*> params) : Adam(std::move(params), Hyper()) {}

Adam::Adam(std::vector<Tensor*> params, Hyper hp) : hp_(hp), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor* p : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void Adam::step(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("optimizer step: expected one gradient per bound parameter");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& w = *params_[p];
    const Tensor* g = grads[p];
    if (g && g->numel() != w.numel()) {
      throw std::invalid_argument("optimizer step: gradient size does not match its parameter");
    }
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g ? g->data[i] : 0.0;
      m_[p][i] = hp_.beta1 * m_[p][i] + (1.0 - hp_.beta1) * gi;
      v_[p][i] = hp_.beta2 * v_[p][i] + (1.0 - hp_.beta2) * gi * gi;
      const double mhat = m_[p][i] / bc1;
      const double vhat = v_[p][i] / bc2;
      w.data[i] -= hp_.lr * mhat / (std::sqrt(vhat) + hp_.eps);
    }
  }
}

}  // namespace frad
