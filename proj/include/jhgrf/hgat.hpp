#pragma once

#include <string>
#include <vector>

#include "jhgrf/nn.hpp"
#include "jhgrf/parameters.hpp"
#include "jhgrf/structure.hpp"

namespace jhgrf {

// Feature tensors are [n, L, d] or batched [B, n, L, d]; L is the time axis.
// Hyperedge tensors mirror them with m in place of n.

struct HgatHead {
  Tensor w0;  // d x d, node message
  Tensor w1;  // d x d, hyperedge message
  Tensor w2;  // d x d, score projection
  Tensor w3;  // [2d], score vector over (node, hyperedge) pairs
};

struct HgatLayerParams {
  std::vector<HgatHead> heads;
  Tensor norm_scale;  // [d]
  Tensor norm_shift;  // [d]
  Tensor fs, bs;      // gate projection of the updated features
  Tensor fg, bg;      // gate projection of the layer input

  static HgatLayerParams create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                                std::size_t heads, Rng& rng);
  std::size_t dim() const { return norm_scale.dim(0); }
};

struct HgatOptions {
  double dropout = 0.1;
  double norm_eps = 1e-5;
  Activation fuse_activation = Activation::sigmoid;
};

// Per-head attention of hyperedges over nodes, [B, m, n] (batch axis kept
// even for unbatched input). Rows of empty hyperedges are zero.
std::vector<Tensor> intra_edge_attention(const Tensor& node_feats, const IncidenceMatrix& incidence,
                                         const HgatLayerParams& params);

// Head-summed hyperedge representations.
Tensor intra_edge_aggregate(const Tensor& node_feats, const IncidenceMatrix& incidence,
                            const HgatLayerParams& params);

// Per-head attention of nodes over hyperedges, [B, n, m]. Rows of isolated
// nodes are zero.
std::vector<Tensor> inter_edge_attention(const Tensor& node_feats, const Tensor& edge_feats,
                                         const IncidenceMatrix& incidence,
                                         const HgatLayerParams& params);

Tensor inter_edge_aggregate(const Tensor& node_feats, const Tensor& edge_feats,
                            const IncidenceMatrix& incidence, const HgatLayerParams& params);

// act(g * updated + (1 - g) * original), g = sigmoid(updated fs + bs + original fg + bg).
Tensor gated_fuse(const Tensor& updated, const Tensor& original, const HgatLayerParams& params,
                  Activation activation = Activation::sigmoid);

Tensor hgat_forward(const Tensor& node_feats, const IncidenceMatrix& incidence,
                    const HgatLayerParams& params, const HgatOptions& options = {},
                    ForwardMode mode = {});

}  // namespace jhgrf
