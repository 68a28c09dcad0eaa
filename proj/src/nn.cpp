#include "jhgrf/nn.hpp"

namespace jhgrf {

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "' (identity|sigmoid)");
}

std::string to_string(Activation activation) {
  return activation == Activation::sigmoid ? "sigmoid" : "identity";
}

Tensor activate(const Tensor& t, Activation activation) {
  return activation == Activation::sigmoid ? sigmoid(t) : t;
}

Tensor dropout(const Tensor& t, double rate, ForwardMode mode) {
  if (!mode.training || mode.rng == nullptr || rate <= 0.0) return t;
  const double keep = 1.0 - rate;
  std::vector<double> mask(t.size());
  for (double& v : mask) v = mode.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return t * Tensor::from(t.shape(), std::move(mask));
}

Tensor normalize_axis(const Tensor& x, int axis, double eps) {
  const Tensor centered = x - mean(x, axis, true);
  const Tensor var = mean(square(centered), axis, true);
  return centered / sqrt(var + eps);
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
  return normalize_axis(x, -1, eps) * scale + shift;
}

}  // namespace jhgrf
