#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace clcs {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Scalars have an empty shape and one element.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  std::optional<std::vector<T>> grad;

  Tensor() : values(1, T(0)) {}
  Tensor(Shape s, std::vector<T> v, bool track = false);

  static Tensor zeros(Shape s) { return full(std::move(s), T(0)); }
  static Tensor full(Shape s, T value);
  static Tensor scalar(T value) { return Tensor({}, {value}); }

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool is_scalar() const { return values.size() == 1; }
  T item() const;

  void zero_grad();
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape, std::vector<U>(values.begin(), values.end()), requires_grad);
    return out;
  }
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace clcs
