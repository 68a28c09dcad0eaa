#include "jhgrf/hgrl.hpp"

namespace jhgrf {

HgrlParams HgrlParams::create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                              std::size_t hgat_heads, std::size_t hgat_layers, Rng& rng) {
  if (hgat_layers == 0) throw ConfigError("HgRL needs at least one HgAT layer");
  HgrlParams p;
  p.wu = params.glorot(prefix + "wu", {2 * dim, dim}, rng);
  p.wr = params.glorot(prefix + "wr", {2 * dim, dim}, rng);
  p.wc = params.glorot(prefix + "wc", {2 * dim, dim}, rng);
  p.bu = params.constant(prefix + "bu", {dim}, 0.0);
  p.br = params.constant(prefix + "br", {dim}, 0.0);
  p.bc = params.constant(prefix + "bc", {dim}, 0.0);
  for (std::size_t l = 0; l < hgat_layers; ++l) {
    p.hgat.push_back(HgatLayerParams::create(params, prefix + "hgat" + std::to_string(l) + ".",
                                             dim, hgat_heads, rng));
  }
  return p;
}

Tensor hgat_stack(const Tensor& x, const IncidenceMatrix& incidence,
                  const std::vector<HgatLayerParams>& layers, const HgatOptions& options,
                  ForwardMode mode) {
  Tensor h = x;
  for (const auto& layer : layers) h = hgat_forward(h, incidence, layer, options, mode);
  return h;
}

Tensor gru_step(const Tensor& x_t, const Tensor& h_prev, const IncidenceMatrix& incidence,
                const HgrlParams& params, const HgatOptions& options, ForwardMode mode) {
  if (x_t.shape() != h_prev.shape() || (x_t.rank() != 2 && x_t.rank() != 3)) {
    throw ShapeMismatch("gru_step: input " + shape_string(x_t.shape()) + " vs state " +
                        shape_string(h_prev.shape()));
  }
  Shape with_time = x_t.shape();
  with_time.insert(with_time.end() - 1, 1);
  const Tensor f = reshape(hgat_stack(reshape(x_t, with_time), incidence, params.hgat, options, mode),
                           x_t.shape());
  const Tensor fh = concat_lastdim(f, h_prev);
  const Tensor u = sigmoid(matmul(fh, params.wu) + params.bu);
  const Tensor r = sigmoid(matmul(fh, params.wr) + params.br);
  const Tensor c = tanh(matmul(concat_lastdim(f, r * h_prev), params.wc) + params.bc);
  return u * h_prev + (1.0 - u) * c;
}

Tensor hgrl_unroll(const Tensor& window, const IncidenceMatrix& incidence, const HgrlParams& params,
                   const HgatOptions& options, ForwardMode mode) {
  if (window.rank() != 3 && window.rank() != 4) {
    throw ShapeMismatch("hgrl_unroll expects [n, L, d] or [B, n, L, d], got " +
                        shape_string(window.shape()));
  }
  const int time_axis = static_cast<int>(window.rank()) - 2;
  Shape state_shape = window.shape();
  state_shape.erase(state_shape.begin() + time_axis);
  Tensor h = Tensor::zeros(state_shape);
  std::vector<Tensor> states;
  for (std::size_t t = 0; t < window.dim(time_axis); ++t) {
    h = gru_step(select(window, time_axis, t), h, incidence, params, options, mode);
    states.push_back(h);
  }
  return stack(states, time_axis);
}

}  // namespace jhgrf
