#ifndef FRAD_TENSOR_HPP
#define FRAD_TENSOR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace frad {

// Dense row-major tensor of 64-bit floats. The whole stack runs on doubles:
// the models are tiny and gradient checks need the precision.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);                      // shape [n]
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool is_scalar() const { return numel() == 1; }
  bool all_finite() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Elementwise sign: +1 / -1 / 0. sign(0) = 0 so a dead coordinate spends
// none of the perturbation budget.
Tensor sign(const Tensor& t);

double l2_norm(const std::vector<double>& v);
double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b);

// Shape violations carry the op name and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace frad

#endif
