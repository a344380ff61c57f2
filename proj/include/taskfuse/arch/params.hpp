#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "taskfuse/core/tape.hpp"
#include "taskfuse/core/tensor.hpp"
#include "taskfuse/core/vecops.hpp"

namespace taskfuse {

// Named parameter tensors in a fixed insertion order. The flat vector view
// (flatten/unflatten, gradient collection) always follows that order, so a
// store built the same way maps to the same layout.
class ParamStore {
public:
  int add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    const int id = static_cast<int>(values_.size());
    index_.emplace(name, id);
    names_.push_back(name);
    values_.push_back(std::move(t));
    return id;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }

  Tensor& get(const std::string& name) { return values_[static_cast<std::size_t>(index_of(name))]; }
  const Tensor& get(const std::string& name) const {
    return values_[static_cast<std::size_t>(index_of(name))];
  }

  std::size_t count() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }

  long total_elements() const {
    long n = 0;
    for (const Tensor& t : values_) n += t.numel();
    return n;
  }

  VecD flatten() const {
    VecD flat;
    flat.reserve(static_cast<std::size_t>(total_elements()));
    for (const Tensor& t : values_) flat.insert(flat.end(), t.v.begin(), t.v.end());
    return flat;
  }

  void unflatten(const VecD& flat) {
    if (flat.size() != static_cast<std::size_t>(total_elements()))
      throw std::invalid_argument("unflatten: element count mismatch");
    std::size_t off = 0;
    for (Tensor& t : values_) {
      std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + t.v.size()),
                t.v.begin());
      off += t.v.size();
    }
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> index_;
};

// Tape leaves for every tensor in a store, in store order.
struct BoundParams {
  const ParamStore* store = nullptr;
  std::vector<ad::Var> vars;

  ad::Var var(const std::string& name) const {
    return vars[static_cast<std::size_t>(store->index_of(name))];
  }
};

inline BoundParams bind_params(ad::Tape& tape, const ParamStore& store, bool requires_grad = true) {
  BoundParams b;
  b.store = &store;
  b.vars.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i)
    b.vars.push_back(ad::leaf(tape, store.value(i), requires_grad));
  return b;
}

// Flat gradient in store order; call after tape.backward().
inline VecD collect_param_grads(const ad::Tape& tape, const BoundParams& bound) {
  VecD flat;
  flat.reserve(static_cast<std::size_t>(bound.store->total_elements()));
  for (const ad::Var& v : bound.vars) {
    Tensor g = tape.grad(v.id);
    flat.insert(flat.end(), g.v.begin(), g.v.end());
  }
  return flat;
}

inline void sgd_step(ParamStore& store, const VecD& grad, double lr) {
  if (grad.size() != static_cast<std::size_t>(store.total_elements()))
    throw std::invalid_argument("sgd_step: gradient size mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < store.count(); ++i) {
    Tensor& t = store.value(i);
    for (auto& x : t.v) x -= lr * grad[off++];
  }
}

}  // namespace taskfuse
