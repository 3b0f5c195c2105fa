#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace strokenet {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major (last dim fastest) array of doubles. Rank >= 1, all dims >= 1.
class Tensor {
 public:
  // A single zero. Exists so Tensor can live in standard containers.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }
  static Tensor ones_like(const Tensor& t) { return Tensor(t.shape(), 1.0); }
  // Builds a rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Bounds-checked multi-index access.
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

enum class BinaryOp { add, sub, mul };
enum class ReduceOp { sum, mean, max };

// Applies op elementwise. b must either match a's shape or broadcast into it:
// b's dims align with a's trailing dims and each is equal or 1.
Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::mul); }

Tensor scale(const Tensor& a, double factor);

// (m x k) * (k x n) -> (m x n)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Reduces over `axes` (empty set returns a copy). Reduced dims are dropped unless
// keep_dims is set; reducing every axis without keep_dims yields shape {1}.
Tensor reduce(const Tensor& a, const std::vector<std::size_t>& axes, ReduceOp op,
              bool keep_dims = false);

// Joins rank-2 tensors along the column axis.
Tensor concat_columns(const Tensor& a, const Tensor& b);
// Columns [begin, end) of a rank-2 tensor.
Tensor slice_columns(const Tensor& a, std::size_t begin, std::size_t end);

// Stacks same-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
// Row `index` of the leading axis, with the leading axis kept as size 1.
Tensor take_leading(const Tensor& a, std::size_t index);

}  // namespace strokenet
