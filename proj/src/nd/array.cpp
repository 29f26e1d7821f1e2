#include "wmmoe/nd/array.hpp"

#include <cmath>
#include <sstream>

namespace wmmoe::nd {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

Index normalize_axis(Index axis, Index rank) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

template <typename T>
Array<T>::Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
  for (Index d : shape_) {
    if (d <= 0) throw DimensionError("array dimensions must be positive, got " + to_string(shape_));
  }
  if (numel(shape_) != static_cast<Index>(data.size())) {
    throw DimensionError("shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                         " elements but data has " + std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<T>>(std::move(data));
}

template <typename T>
Array<T> Array<T>::full(Shape shape, T value) {
  const Index n = numel(shape);
  return Array(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
}

template <typename T>
Index Array<T>::dim(Index axis) const {
  return shape_[static_cast<std::size_t>(normalize_axis(axis, rank()))];
}

template <typename T>
T Array<T>::at(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank()) {
    throw DimensionError("index rank " + std::to_string(idx.size()) + " does not match shape " +
                         to_string(shape_));
  }
  Index flat = 0;
  std::size_t k = 0;
  for (Index i : idx) {
    const Index d = shape_[k++];
    if (i < 0 || i >= d) throw DimensionError("index out of range for shape " + to_string(shape_));
    flat = flat * d + i;
  }
  return (*data_)[static_cast<std::size_t>(flat)];
}

template <typename T>
T Array<T>::item() const {
  if (size() != 1) throw ContractError("item() on array of shape " + to_string(shape_));
  return (*data_)[0];
}

template <typename T>
Array<T> Array<T>::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Array out = *this;
  out.shape_ = std::move(shape);
  return out;
}

template class Array<float>;
template class Array<double>;

}  // namespace wmmoe::nd
