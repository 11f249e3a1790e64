#include "clcs/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace clcs {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> v, bool track)
    : shape(std::move(s)), values(std::move(v)), requires_grad(track) {
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_string(shape));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape s, T value) {
  const auto n = shape_numel(s);
  return Tensor(std::move(s), std::vector<T>(n, value));
}

template <typename T>
T Tensor<T>::item() const {
  if (values.size() != 1) {
    throw std::logic_error("tensor: item() on non-scalar of shape " + shape_string(shape));
  }
  return values.front();
}

template <typename T>
void Tensor<T>::zero_grad() {
  grad.emplace(values.size(), T(0));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  if (grad) {
    for (T v : *grad) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace clcs
