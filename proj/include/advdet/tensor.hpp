#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advdet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// The element count always equals the product of the extents, and every
/// extent is positive. A default-constructed tensor is empty (shape {}, no
/// data) and is only useful as a placeholder.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(std::initializer_list<std::size_t> shape,
         std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  // Slice along the leading axis: rows [begin, begin + count).
  Tensor rows(std::size_t begin, std::size_t count) const;
  // Shape of one leading-axis slice.
  Shape row_shape() const;
  std::size_t row_size() const;

  void fill(double v);

  // Throws NumericError naming `what` if any element is NaN or infinite.
  void check_finite(const std::string& what) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
// Inverse of stack for a single index.
Tensor unstack_one(const Tensor& batch, std::size_t index);

double norm_l2(std::span<const double> v);
double norm_linf(std::span<const double> v);
double distance_l2(std::span<const double> a, std::span<const double> b);
double distance_linf(std::span<const double> a, std::span<const double> b);

}  // namespace advdet
