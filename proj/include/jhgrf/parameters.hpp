#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "jhgrf/random.hpp"
#include "jhgrf/tensor.hpp"

namespace jhgrf {

// Ordered registry of named trainable tensors. Order is registration order,
// which fixes checkpoint layout and optimizer state layout.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };
  using Snapshot = std::vector<std::vector<double>>;

  // Registers `tensor` (marked as a trainable leaf) and returns the handle.
  Tensor add(std::string name, Tensor tensor);

  Tensor uniform(std::string name, Shape shape, double bound, Rng& rng);
  // Glorot-uniform over the last two axes.
  Tensor glorot(std::string name, Shape shape, Rng& rng);
  Tensor constant(std::string name, Shape shape, double value);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const Tensor* find(std::string_view name) const;
  // Entries whose name starts with `prefix`.
  std::vector<Entry> with_prefix(std::string_view prefix) const;

  void zero_grad();

  Snapshot snapshot() const;
  void restore(const Snapshot& snapshot);

 private:
  std::vector<Entry> entries_;
};

}  // namespace jhgrf
