#ifndef SVRE_TENSOR_HPP
#define SVRE_TENSOR_HPP

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace svre {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// Tensors are plain values: copying duplicates the payload and no operation
/// in the library mutates a tensor it did not create. A scalar is shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::VectorXd values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  double operator[](Index i) const { return values_[i]; }
  double& operator[](Index i) { return values_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  auto array() const { return values_.array(); }
  auto array() { return values_.array(); }

  ConstRowMatrixMap matrix(Index rows, Index cols) const;
  RowMatrixMap matrix(Index rows, Index cols);

  /// Same payload viewed under a different shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  Eigen::VectorXd values_;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor operator*(const Tensor& a, double s);

/// Element-wise sign with sign(0) = 0.
Tensor sign(const Tensor& a);
double l1_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);

/// Byte-level identity of shape and payload (distinguishes -0.0 from 0.0).
bool bit_identical(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

}  // namespace svre

#endif  // SVRE_TENSOR_HPP
