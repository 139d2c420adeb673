#include "gefl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "gefl/errors.hpp"

namespace gefl {

namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_positive_extents(const std::vector<std::size_t>& shape) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  require_positive_extents(shape_);
  data_.assign(extent_product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require_positive_extents(shape_);
  if (extent_product(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape product " + std::to_string(extent_product(shape_)));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

void Tensor::require_finite(std::string_view what) const {
  for (double v : data_)
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + std::string(what));
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("hconcat: row counts differ");
  const auto ca = a.cols();
  const auto cb = b.cols();
  Tensor out = Tensor::matrix(a.rows(), ca + cb);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    auto ra = a.row(r);
    auto rb = b.row(r);
    std::copy(ra.begin(), ra.end(), dst.begin());
    std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return out;
}

Tensor slice_cols(const Tensor& t, std::size_t first, std::size_t count) {
  if (first + count > t.cols() || count == 0) throw ShapeError("slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(t.rows(), count);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto src = t.row(r).subspan(first, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Tensor select_rows(const Tensor& t, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("select_rows: empty selection");
  Tensor out = Tensor::matrix(indices.size(), t.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) throw ShapeError("select_rows: index out of range");
    auto src = t.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  if (labels.empty() || classes == 0) throw ShapeError("one_hot: empty labels or zero classes");
  Tensor out = Tensor::matrix(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y == -1) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    out(i, static_cast<std::size_t>(y)) = 1.0;
  }
  return out;
}

}  // namespace gefl
