#include "strokenet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "strokenet/errors.hpp"

namespace strokenet {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be >= 1, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor() : shape_{1}, data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("matrix needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("ragged matrix rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw IndexError("index rank " + std::to_string(index.size()) + " != tensor rank " +
                     std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) {
      throw IndexError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis) + " of shape " + shape_to_string(shape_));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                     shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return ShapeError("cannot broadcast " + shape_to_string(sb) + " onto " + shape_to_string(sa));
  };
  if (sb.size() > sa.size()) throw mismatch();
  const std::size_t offset = sa.size() - sb.size();
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[i] != sa[offset + i] && sb[i] != 1) throw mismatch();
  }

  auto apply = [op](double x, double y) {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
    }
    return 0.0;
  };

  Tensor out(sa);
  auto dst = out.mutable_data();
  auto xa = a.data();
  auto xb = b.data();
  if (sa == sb) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = apply(xa[i], xb[i]);
    return out;
  }

  // Strides of b expressed in a's index space (0 where b broadcasts).
  std::vector<std::size_t> bstride(sa.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = sb.size(); i-- > 0;) {
    bstride[offset + i] = sb[i] == 1 ? 0 : s;
    s *= sb[i];
  }
  std::vector<std::size_t> idx(sa.size(), 0);
  std::size_t bpos = 0;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = apply(xa[i], xb[bpos]);
    for (std::size_t ax = sa.size(); ax-- > 0;) {
      ++idx[ax];
      bpos += bstride[ax];
      if (idx[ax] < sa[ax]) break;
      bpos -= bstride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a);
  for (auto& v : out.mutable_data()) v *= factor;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul needs (m,k)x(k,n), got " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  auto cd = c.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd.data() + p * n;
      double* crow = cd.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose needs rank 2, got " + shape_to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

Tensor reduce(const Tensor& a, const std::vector<std::size_t>& axes, ReduceOp op, bool keep_dims) {
  const Shape& sa = a.shape();
  std::vector<bool> reduced(sa.size(), false);
  for (auto ax : axes) {
    if (ax >= sa.size()) {
      throw IndexError("reduce axis " + std::to_string(ax) + " out of range for shape " +
                       shape_to_string(sa));
    }
    reduced[ax] = true;
  }
  if (axes.empty()) return a;

  Shape kept(sa);
  std::size_t count = 1;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (reduced[i]) {
      kept[i] = 1;
      count *= sa[i];
    }
  }
  const double init = op == ReduceOp::max ? -std::numeric_limits<double>::infinity() : 0.0;
  Tensor out(kept, init);

  std::vector<std::size_t> ostride(sa.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = sa.size(); i-- > 0;) {
    ostride[i] = reduced[i] ? 0 : s;
    s *= kept[i];
  }
  std::vector<std::size_t> idx(sa.size(), 0);
  std::size_t opos = 0;
  auto src = a.data();
  auto dst = out.mutable_data();
  // Means accumulate offsets from the first element of each group, so constant groups are exact.
  std::vector<double> anchor;
  std::vector<bool> anchored;
  if (op == ReduceOp::mean) {
    anchor.assign(dst.size(), 0.0);
    anchored.assign(dst.size(), false);
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (op == ReduceOp::max) {
      dst[opos] = std::max(dst[opos], src[i]);
    } else if (op == ReduceOp::mean) {
      if (!anchored[opos]) {
        anchor[opos] = src[i];
        anchored[opos] = true;
      }
      dst[opos] += src[i] - anchor[opos];
    } else {
      dst[opos] += src[i];
    }
    for (std::size_t ax = sa.size(); ax-- > 0;) {
      ++idx[ax];
      opos += ostride[ax];
      if (idx[ax] < sa[ax]) break;
      opos -= ostride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  if (op == ReduceOp::mean) {
    for (std::size_t o = 0; o < dst.size(); ++o) dst[o] = anchor[o] + dst[o] / static_cast<double>(count);
  }
  if (keep_dims) return out;

  Shape squeezed;
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (!reduced[i]) squeezed.push_back(sa[i]);
  if (squeezed.empty()) squeezed.push_back(1);
  return out.reshaped(std::move(squeezed));
}

Tensor concat_columns(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_columns needs equal-row matrices, got " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  }
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * ca, ca, out.mutable_data().begin() + r * (ca + cb));
    std::copy_n(b.data().begin() + r * cb, cb, out.mutable_data().begin() + r * (ca + cb) + ca);
  }
  return out;
}

Tensor slice_columns(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.dim(1)) {
    throw ShapeError("bad column slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + shape_to_string(a.shape()));
  }
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.data().begin() + r * cols + begin, w, out.mutable_data().begin() + r * w);
  return out;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack needs at least one tensor");
  const Shape& inner = items.front().shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> values;
  values.reserve(shape_numel(shape));
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack shape mismatch: " + shape_to_string(t.shape()) + " vs " +
                       shape_to_string(inner));
    }
    values.insert(values.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(values));
}

Tensor take_leading(const Tensor& a, std::size_t index) {
  if (index >= a.dim(0)) {
    throw IndexError("leading index " + std::to_string(index) + " out of range for " +
                     shape_to_string(a.shape()));
  }
  Shape shape(a.shape());
  shape[0] = 1;
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(a.data().begin() + index * n, a.data().begin() + (index + 1) * n);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace strokenet
