#include "frad/tensor.hpp"

#include <cmath>

#include "doctest.h"

using frad::Tensor;

TEST_CASE("tensor factories produce the advertised shapes") {
  Tensor z = Tensor::zeros({3, 4});
  CHECK(z.rank() == 2);
  CHECK(z.rows() == 3);
  CHECK(z.cols() == 4);
  CHECK(z.numel() == 12);
  for (double v : z.data) CHECK(v == 0.0);

  Tensor f = Tensor::full({5}, 2.5);
  CHECK(f.numel() == 5);
  CHECK(f.at(3) == 2.5);

  Tensor s = Tensor::scalar(-7.0);
  CHECK(s.is_scalar());
  CHECK(s.at(0) == -7.0);

  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(m.at(1, 0) == 3.0);
}

TEST_CASE("constructor rejects mismatched shape and data length") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), frad::ShapeError);
  CHECK_THROWS_AS(Tensor::matrix(2, 2, {1.0}), frad::ShapeError);
}

TEST_CASE("sign maps positives, negatives, and both zeros to +1/-1/0") {
  Tensor t = Tensor::row({3.5, -0.25, 0.0, -0.0, 1e-300});
  Tensor s = frad::sign(t);
  CHECK(s.at(0) == 1.0);
  CHECK(s.at(1) == -1.0);
  CHECK(s.at(2) == 0.0);
  CHECK(s.at(3) == 0.0);
  CHECK(s.at(4) == 1.0);
}

TEST_CASE("l2_norm and max_abs_diff behave on plain vectors") {
  CHECK(frad::l2_norm({3.0, 4.0}) == doctest::Approx(5.0));
  CHECK(frad::l2_norm({}) == 0.0);
  CHECK(frad::max_abs_diff({1.0, 2.0}, {1.5, 1.0}) == doctest::Approx(1.0));
}

TEST_CASE("all_finite flags NaN and infinity") {
  Tensor ok = Tensor::row({1.0, -2.0});
  CHECK(ok.all_finite());
  Tensor bad = Tensor::row({1.0, std::nan("")});
  CHECK_FALSE(bad.all_finite());
  Tensor inf = Tensor::row({1.0, INFINITY});
  CHECK_FALSE(inf.all_finite());
}

TEST_CASE("shape_str renders like a dimension list") {
  CHECK(frad::shape_str({64, 64}) == "[64, 64]");
  CHECK(frad::shape_str({}) == "[]");
}
