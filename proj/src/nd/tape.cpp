#include "wmmoe/nd/tape.hpp"

namespace wmmoe::nd {

template <typename T>
Tape<T>::Tape(TapeOptions options) : options_(options), rng_(options.seed, options.stream) {
  nodes_.reserve(1024);
}

template <typename T>
Var<T> Tape<T>::constant(Array<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Array<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, requires_grad && options_.record});
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  const bool rg = options_.record && !p.frozen;
  nodes_.push_back(Node{p.value, {}, {}, rg ? &p : nullptr, rg});
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<Var<T>> vars) const {
  if (!options_.record) return false;
  for (const auto& v : vars) {
    if (v.valid() && requires_grad(v.id())) return true;
  }
  return false;
}

template <typename T>
Var<T> Tape<T>::push(Array<T> value, std::vector<int> parents, Backward backward) {
  bool rg = false;
  if (options_.record) {
    for (int p : parents) rg = rg || nodes_[static_cast<std::size_t>(p)].requires_grad;
  }
  if (!rg) {
    backward = nullptr;
    parents.clear();
  }
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), nullptr, rg});
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
std::span<T> Tape<T>::grad_buffer(int id) {
  auto& g = grads_[static_cast<std::size_t>(id)];
  if (g.empty()) g.assign(static_cast<std::size_t>(value(id).size()), T(0));
  return {g.data(), g.size()};
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  backward_done_ = true;
  if (!requires_grad(loss.id())) return;
  grad_buffer(loss.id())[0] = T(1);
  for (int id = loss.id(); id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    if (node.backward) {
      node.backward(*this, std::span<const T>(g.data(), g.size()));
    } else if (node.param != nullptr) {
      auto& pg = node.param->grad;
      if (pg.size() != g.size()) pg.assign(g.size(), T(0));
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  }
}

template <typename T>
Array<T> Tape<T>::grad(const Var<T>& v) const {
  const auto& shape = v.shape();
  if (!backward_done_ || static_cast<std::size_t>(v.id()) >= grads_.size() ||
      grads_[static_cast<std::size_t>(v.id())].empty()) {
    return Array<T>::zeros(shape);
  }
  return Array<T>(shape, grads_[static_cast<std::size_t>(v.id())]);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace wmmoe::nd
