#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "frad/optim.hpp"
#include "frad/tensor.hpp"

using namespace frad;

namespace {

// Closed-form Adam reference for a single scalar parameter.
double adam_reference(double w0, const std::vector<double>& grads, Adam::Hyper hp) {
  double w = w0, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
    const double mh = m / (1.0 - std::pow(hp.beta1, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(hp.beta2, static_cast<double>(t)));
    w -= hp.lr * mh / (std::sqrt(vh) + hp.eps);
  }
  return w;
}

}  // namespace

TEST_CASE("single scalar parameter matches the closed-form recurrence") {
  Tensor w = Tensor::scalar(0.5);
  Adam::Hyper hp;
  Adam opt({&w}, hp);

  const std::vector<double> gs = {1.0, -0.3, 0.7, 0.01, -2.0};
  for (double g : gs) {
    Tensor grad = Tensor::scalar(g);
    opt.step({&grad});
  }
  const double expected = adam_reference(0.5, gs, hp);
  CHECK(w.at(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(opt.step_count() == gs.size());
}

TEST_CASE("first step moves each coordinate by roughly lr in the gradient's direction") {
  // With bias correction, step one reduces to lr * g / (|g| + eps).
  Tensor w = Tensor::row({1.0, -2.0, 3.0});
  Adam opt({&w});
  Tensor g = Tensor::row({0.4, -0.004, 0.0});
  opt.step({&g});
  CHECK(w.at(0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(w.at(1) == doctest::Approx(-2.0 + 1e-3).epsilon(1e-6));
  CHECK(w.at(2) == doctest::Approx(3.0));  // zero gradient: no movement
}

TEST_CASE("null gradient decays moments like a zero gradient") {
  Tensor w1 = Tensor::scalar(0.0), w2 = Tensor::scalar(0.0);
  Adam::Hyper hp;
  Adam a({&w1}, hp), b({&w2}, hp);

  Tensor g = Tensor::scalar(1.0), z = Tensor::scalar(0.0);
  a.step({&g});
  b.step({&g});
  a.step({nullptr});
  b.step({&z});
  a.step({&g});
  b.step({&g});
  CHECK(w1.at(0) == doctest::Approx(w2.at(0)).epsilon(1e-15));
}

TEST_CASE("converges on a convex quadratic") {
  // f(w) = (w - 3)^2, gradient 2(w - 3).
  Tensor w = Tensor::scalar(-4.0);
  Adam opt({&w}, {.lr = 0.05});
  for (int i = 0; i < 2000; ++i) {
    Tensor g = Tensor::scalar(2.0 * (w.at(0) - 3.0));
    opt.step({&g});
  }
  CHECK(w.at(0) == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("gradient count mismatch is rejected") {
  Tensor w = Tensor::scalar(0.0);
  Adam opt({&w});
  Tensor g = Tensor::scalar(1.0);
  CHECK_THROWS_AS(opt.step({&g, &g}), std::invalid_argument);
}

TEST_CASE("gradient shape mismatch is rejected") {
  Tensor w = Tensor::row({1.0, 2.0});
  Adam opt({&w});
  Tensor g = Tensor::row({1.0, 2.0, 3.0});
  CHECK_THROWS_AS(opt.step({&g}), std::invalid_argument);
}
