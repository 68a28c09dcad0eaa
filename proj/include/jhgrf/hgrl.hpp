#pragma once

#include <string>
#include <vector>

#include "jhgrf/hgat.hpp"

namespace jhgrf {

// Hypergraph GRU: the gate input transform f(I, X) is a stack of HgAT layers.
struct HgrlParams {
  Tensor wu, wr, wc;  // 2d x d
  Tensor bu, br, bc;  // [d]
  std::vector<HgatLayerParams> hgat;

  static HgrlParams create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                           std::size_t hgat_heads, std::size_t hgat_layers, Rng& rng);
  std::size_t dim() const { return bu.dim(0); }
};

// Applies the HgAT stack to [n, L, d] or [B, n, L, d] features.
Tensor hgat_stack(const Tensor& x, const IncidenceMatrix& incidence,
                  const std::vector<HgatLayerParams>& layers, const HgatOptions& options,
                  ForwardMode mode);

// x_t, h_prev: [n, d] or [B, n, d].
//   U = sigmoid([f || H] Wu + Bu), R = sigmoid([f || H] Wr + Br)
//   C = tanh([f || R*H] Wc + Bc),  H' = U*H + (1-U)*C
Tensor gru_step(const Tensor& x_t, const Tensor& h_prev, const IncidenceMatrix& incidence,
                const HgrlParams& params, const HgatOptions& options = {}, ForwardMode mode = {});

// window: [n, L, d] or [B, n, L, d]; the hidden state starts at zero and the
// stacked states H_1..H_L are returned in the input's shape.
Tensor hgrl_unroll(const Tensor& window, const IncidenceMatrix& incidence, const HgrlParams& params,
                   const HgatOptions& options = {}, ForwardMode mode = {});

}  // namespace jhgrf
