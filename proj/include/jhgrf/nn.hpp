#pragma once

#include <string>
#include <string_view>

#include "jhgrf/random.hpp"
#include "jhgrf/tensor.hpp"

namespace jhgrf {

enum class Activation { identity, sigmoid };

Activation parse_activation(std::string_view name);
std::string to_string(Activation activation);
Tensor activate(const Tensor& t, Activation activation);

// Per-forward-pass switches. Dropout only fires when training and an rng is
// supplied; evaluation passes are deterministic.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(Rng& rng) { return {true, &rng}; }
};

// Inverted dropout with a constant Bernoulli mask.
Tensor dropout(const Tensor& t, double rate, ForwardMode mode);

// Normalises each vector along the last axis to zero mean and unit variance,
// then applies scale/shift (both shaped [d]).
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps);

// Normalises along `axis` independently for every other index.
Tensor normalize_axis(const Tensor& x, int axis, double eps);

}  // namespace jhgrf
