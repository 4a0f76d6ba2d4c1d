#include "svre/tensor.hpp"

#include "svre/errors.hpp"

#include <cstring>
#include <sstream>

namespace svre {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_ = Eigen::VectorXd::Zero(shape_size(shape_));
}

Tensor::Tensor(Shape shape, Eigen::VectorXd values) : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("payload of " + std::to_string(values_.size()) + " values does not fit shape " +
                     shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::Map<const Eigen::VectorXd>(values.begin(), static_cast<Index>(values.size()))) {}

Tensor Tensor::constant(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.values_.setConstant(value);
  return t;
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

ConstRowMatrixMap Tensor::matrix(Index rows, Index cols) const {
  if (rows * cols != values_.size()) throw ShapeError("matrix view does not match tensor size");
  return ConstRowMatrixMap(values_.data(), rows, cols);
}

RowMatrixMap Tensor::matrix(Index rows, Index cols) {
  if (rows * cols != values_.size()) throw ShapeError("matrix view does not match tensor size");
  return RowMatrixMap(values_.data(), rows, cols);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.values_ == b.values_; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(context) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "operator+");
  return Tensor(a.shape(), a.values() + b.values());
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "operator-");
  return Tensor(a.shape(), a.values() - b.values());
}

Tensor operator*(double s, const Tensor& a) { return Tensor(a.shape(), s * a.values()); }
Tensor operator*(const Tensor& a, double s) { return s * a; }

Tensor sign(const Tensor& a) {
  Eigen::VectorXd out = a.values().unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
  return Tensor(a.shape(), std::move(out));
}

double l1_norm(const Tensor& a) { return a.values().lpNorm<1>(); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  return (a.values() - b.values()).lpNorm<Eigen::Infinity>();
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  return a.values().dot(b.values());
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

}  // namespace svre
