#include "jhgrf/parameters.hpp"

#include <algorithm>
#include <cmath>

namespace jhgrf {

Tensor ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name " + name);
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

Tensor ParameterSet::uniform(std::string name, Shape shape, double bound, Rng& rng) {
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return add(std::move(name), Tensor::parameter(std::move(shape), std::move(values)));
}

Tensor ParameterSet::glorot(std::string name, Shape shape, Rng& rng) {
  const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[shape.size() - 2]) : 1.0;
  const double fan_out = static_cast<double>(shape.back());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform(std::move(name), std::move(shape), bound, rng);
}

Tensor ParameterSet::constant(std::string name, Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return add(std::move(name), Tensor::parameter(std::move(shape), std::vector<double>(n, value)));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

const Tensor* ParameterSet::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

std::vector<ParameterSet::Entry> ParameterSet::with_prefix(std::string_view prefix) const {
  std::vector<Entry> out;
  for (const auto& e : entries_) {
    if (std::string_view(e.name).substr(0, prefix.size()) == prefix) out.push_back(e);
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.clear_grad();
}

ParameterSet::Snapshot ParameterSet::snapshot() const {
  Snapshot s;
  s.reserve(entries_.size());
  for (const auto& e : entries_) s.push_back(e.tensor.to_vector());
  return s;
}

void ParameterSet::restore(const Snapshot& snapshot) {
  if (snapshot.size() != entries_.size()) throw ShapeMismatch("snapshot size mismatch");
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    auto dst = entries_[k].tensor.mutable_values();
    if (dst.size() != snapshot[k].size()) throw ShapeMismatch("snapshot entry mismatch");
    std::copy(snapshot[k].begin(), snapshot[k].end(), dst.begin());
  }
}

}  // namespace jhgrf
