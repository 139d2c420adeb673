#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace gefl {

// Dense row-major array of doubles. Most of the library works with rank-2
// tensors (a batch of rows); rows() is the leading extent and cols() the
// product of the remaining ones.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  // Throws NumericError naming `what` if any element is NaN or Inf.
  void require_finite(std::string_view what) const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// [a | b] column-wise; both must have the same number of rows.
Tensor hconcat(const Tensor& a, const Tensor& b);

// Columns [first, first + count) of a rank-2 tensor.
Tensor slice_cols(const Tensor& t, std::size_t first, std::size_t count);

// Rows picked by index, in the given order.
Tensor select_rows(const Tensor& t, std::span<const std::size_t> indices);

// One-hot encoding of labels over `classes`; a label equal to -1 encodes as all zeros.
Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace gefl
