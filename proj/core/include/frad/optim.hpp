#ifndef FRAD_OPTIM_HPP
#define FRAD_OPTIM_HPP

#include <cstddef>
#include <vector>

#include "frad/tensor.hpp"

namespace frad {

// Adam with bias correction. The optimizer binds to parameter tensors by
// pointer; the bound tensors must stay alive and in place for the
// optimizer's lifetime (models keep their parameters in stable members).
class Adam {
 public:
  struct Hyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(std::vector<Tensor*> params);
  Adam(std::vector<Tensor*> params, Hyper hp);

  // One update from gradients in bind order. A null gradient is treated as
  // all-zero (the moment estimates still decay, as plain Adam would).
  void step(const std::vector<const Tensor*>& grads);

  std::size_t step_count() const { return t_; }

 private:
  Hyper hp_;
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace frad

#endif
