#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmmoe::nd {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Raised when operand shapes are incompatible. The message carries both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid layer or model configuration (e.g. head count not dividing width).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

/// Dense row-major array. The payload is shared and never mutated after
/// construction, so copies are cheap and arrays behave as values.
template <typename T>
class Array {
 public:
  Array() : Array(Shape{}, std::vector<T>{T(0)}) {}
  Array(Shape shape, std::vector<T> data);

  static Array zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Array full(Shape shape, T value);
  static Array scalar(T value) { return Array(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  /// Dimension size; negative axes count from the back.
  Index dim(Index axis) const;
  Index size() const { return static_cast<Index>(data_->size()); }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  const T* ptr() const { return data_->data(); }
  T operator[](Index i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  T at(std::initializer_list<Index> idx) const;
  T item() const;

  /// Same payload viewed with a new shape of equal element count.
  Array reshaped(Shape shape) const;

  template <typename U>
  Array<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return Array<U>(shape_, std::move(out));
  }

  std::vector<T> to_vector() const { return *data_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
};

/// Normalizes a possibly negative axis against `rank`; throws DimensionError if out of range.
Index normalize_axis(Index axis, Index rank);

extern template class Array<float>;
extern template class Array<double>;

}  // namespace wmmoe::nd
