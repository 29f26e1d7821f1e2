#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wmmoe/nd/array.hpp"
#include "wmmoe/nd/rng.hpp"

namespace wmmoe::nd {

template <typename T>
class Tape;

/// Named trainable (or frozen) tensor. Values are replaced wholesale by the
/// optimizer; `grad` accumulates across backward passes until cleared.
template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  std::vector<T> grad;
  bool frozen = false;

  void zero_grad() { grad.assign(static_cast<std::size_t>(value.size()), T(0)); }
};

/// Handle to a node recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Array<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index rank() const { return value().rank(); }
  Index size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

struct TapeOptions {
  /// Record backward closures. Off for pure inference.
  bool record = true;
  /// Enables dropout and noise injection.
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Ordered record of primitive ops. Node ids are assigned in creation order,
/// so every parent precedes its children and a reverse sweep is a valid
/// topological traversal.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const T>)>;

  explicit Tape(TapeOptions options = {});
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return options_.record; }
  bool training() const { return options_.training; }
  RngStream& rng() { return rng_; }

  Var<T> constant(Array<T> value);
  /// Free leaf, used for gradient checks and inputs that need gradients.
  Var<T> leaf(Array<T> value, bool requires_grad = true);
  /// Leaf bound to a parameter; backward adds into `param.grad` unless frozen.
  Var<T> param(Parameter<T>& param);

  /// Records an op output. `backward` is dropped when no parent needs gradients.
  Var<T> push(Array<T> value, std::vector<int> parents, Backward backward);
  bool any_requires_grad(std::initializer_list<Var<T>> vars) const;

  const Array<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient buffer of node `id`, zero-allocated on first use.
  std::span<T> grad_buffer(int id);

  /// Reverse sweep from a scalar loss. Parameter leaves receive their gradients.
  void backward(const Var<T>& loss);
  /// Gradient of the last backward() with respect to `v`; zeros if unreachable.
  Array<T> grad(const Var<T>& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array<T> value;
    std::vector<int> parents;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  TapeOptions options_;
  RngStream rng_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool backward_done_ = false;
};

template <typename T>
const Array<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace wmmoe::nd
