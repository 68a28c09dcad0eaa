#include "jhgrf/hgat.hpp"

#include <cmath>

namespace jhgrf {

namespace {

// Lifts [n, L, d] to [1, n, L, d]; reports whether it did.
Tensor as_batched(const Tensor& x, bool& lifted) {
  lifted = x.rank() == 3;
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeMismatch("expected [n, L, d] or [B, n, L, d], got " + shape_string(x.shape()));
  }
  return lifted ? reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
}

Tensor unbatch(const Tensor& x, bool lifted) {
  return lifted ? reshape(x, {x.dim(1), x.dim(2), x.dim(3)}) : x;
}

void check_incidence(const Tensor& x4, const IncidenceMatrix& incidence, std::size_t dim) {
  if (incidence.weights.rank() != 2 || incidence.nodes() != x4.dim(1)) {
    throw ShapeMismatch("incidence " + shape_string(incidence.weights.shape()) +
                        " does not match node features " + shape_string(x4.shape()));
  }
  if (x4.dim(3) != dim) {
    throw ShapeMismatch("feature width " + std::to_string(x4.dim(3)) + " != layer width " +
                        std::to_string(dim));
  }
}

// 1 for hyperedges with any positive membership, else 0; shape [m, 1].
Tensor edge_present(const IncidenceMatrix& incidence) {
  const std::size_t n = incidence.nodes(), m = incidence.edges();
  std::vector<double> on(m, 0.0);
  const auto w = incidence.weights.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (w[i * m + j] > 0.0) on[j] = 1.0;
  return Tensor::from({m, 1}, std::move(on));
}

Tensor flatten_time(const Tensor& x4) {
  return reshape(x4, {x4.dim(0), x4.dim(1), x4.dim(2) * x4.dim(3)});
}

std::vector<Tensor> intra_attention_batched(const Tensor& x4, const Tensor& incidence_t,
                                            const HgatLayerParams& params,
                                            std::vector<Tensor>* messages) {
  const std::size_t batch = x4.dim(0), n = x4.dim(1), m = incidence_t.dim(0);
  std::vector<Tensor> out;
  for (const auto& head : params.heads) {
    Tensor msg = matmul(x4, head.w0);
    Tensor score = mean(reshape(relu(msg), {batch, n, x4.dim(2) * x4.dim(3)}), -1);
    Tensor logits = broadcast_to(reshape(score, {batch, 1, n}), {batch, m, n});
    out.push_back(weighted_softmax_lastdim(logits, broadcast_to(incidence_t, {batch, m, n})));
    if (messages) messages->push_back(flatten_time(msg));
  }
  return out;
}

Tensor intra_batched(const Tensor& x4, const IncidenceMatrix& incidence,
                     const HgatLayerParams& params) {
  std::vector<Tensor> msgs;
  const Tensor inc_t = transpose(incidence.weights, 0, 1);
  const auto alpha = intra_attention_batched(x4, inc_t, params, &msgs);
  const Tensor present = edge_present(incidence);
  Tensor total;
  for (std::size_t z = 0; z < alpha.size(); ++z) {
    Tensor h = sigmoid(matmul(alpha[z], msgs[z])) * present;
    total = total.defined() ? total + h : h;
  }
  return reshape(total, {x4.dim(0), incidence.edges(), x4.dim(2), x4.dim(3)});
}

std::vector<Tensor> inter_attention_batched(const Tensor& x4, const Tensor& e4,
                                            const IncidenceMatrix& incidence,
                                            const HgatLayerParams& params) {
  const std::size_t batch = x4.dim(0), n = x4.dim(1), m = e4.dim(1), d = x4.dim(3);
  const std::size_t steps = x4.dim(2);
  std::vector<Tensor> out;
  for (const auto& head : params.heads) {
    const Tensor w3a = reshape(narrow(head.w3, 0, 0, d), {d, 1});
    const Tensor w3b = reshape(narrow(head.w3, 0, d, d), {d, 1});
    // phi_ij = mean_t relu(w3a . W2 h_i(t) + w3b . W2 h_j(t))
    const Tensor s = reshape(matmul(matmul(x4, head.w2), w3a), {batch, n, 1, steps});
    const Tensor t = reshape(matmul(matmul(e4, head.w2), w3b), {batch, 1, m, steps});
    const Tensor phi = mean(relu(s + t), -1);
    out.push_back(weighted_softmax_lastdim(phi, broadcast_to(incidence.weights, {batch, n, m})));
  }
  return out;
}

Tensor inter_batched(const Tensor& x4, const Tensor& e4, const IncidenceMatrix& incidence,
                     const HgatLayerParams& params) {
  const auto beta = inter_attention_batched(x4, e4, incidence, params);
  Tensor total;
  for (std::size_t z = 0; z < beta.size(); ++z) {
    const auto& head = params.heads[z];
    const Tensor edge_msg = flatten_time(matmul(e4, head.w1));
    const Tensor pooled = reshape(matmul(beta[z], edge_msg), x4.shape());
    Tensor h = relu(matmul(x4, head.w0) + pooled);
    total = total.defined() ? total + h : h;
  }
  return total;
}

Tensor edges_batched(const Tensor& e, std::size_t batch, bool& lifted) {
  Tensor e4 = as_batched(e, lifted);
  if (e4.dim(0) != batch) throw ShapeMismatch("hyperedge batch does not match node batch");
  return e4;
}

}  // namespace

HgatLayerParams HgatLayerParams::create(ParameterSet& params, const std::string& prefix,
                                        std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0) throw ConfigError("HgAT needs at least one head");
  HgatLayerParams p;
  for (std::size_t z = 0; z < heads; ++z) {
    const std::string h = prefix + "head" + std::to_string(z) + ".";
    HgatHead head;
    head.w0 = params.glorot(h + "w0", {dim, dim}, rng);
    head.w1 = params.glorot(h + "w1", {dim, dim}, rng);
    head.w2 = params.glorot(h + "w2", {dim, dim}, rng);
    head.w3 = params.uniform(h + "w3", {2 * dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    p.heads.push_back(std::move(head));
  }
  p.norm_scale = params.constant(prefix + "norm_scale", {dim}, 1.0);
  p.norm_shift = params.constant(prefix + "norm_shift", {dim}, 0.0);
  p.fs = params.glorot(prefix + "fs", {dim, dim}, rng);
  p.bs = params.constant(prefix + "bs", {dim}, 0.0);
  p.fg = params.glorot(prefix + "fg", {dim, dim}, rng);
  p.bg = params.constant(prefix + "bg", {dim}, 0.0);
  return p;
}

std::vector<Tensor> intra_edge_attention(const Tensor& node_feats, const IncidenceMatrix& incidence,
                                         const HgatLayerParams& params) {
  bool lifted = false;
  const Tensor x4 = as_batched(node_feats, lifted);
  check_incidence(x4, incidence, params.dim());
  return intra_attention_batched(x4, transpose(incidence.weights, 0, 1), params, nullptr);
}

Tensor intra_edge_aggregate(const Tensor& node_feats, const IncidenceMatrix& incidence,
                            const HgatLayerParams& params) {
  bool lifted = false;
  const Tensor x4 = as_batched(node_feats, lifted);
  check_incidence(x4, incidence, params.dim());
  return unbatch(intra_batched(x4, incidence, params), lifted);
}

std::vector<Tensor> inter_edge_attention(const Tensor& node_feats, const Tensor& edge_feats,
                                         const IncidenceMatrix& incidence,
                                         const HgatLayerParams& params) {
  bool lifted = false, edge_lifted = false;
  const Tensor x4 = as_batched(node_feats, lifted);
  check_incidence(x4, incidence, params.dim());
  const Tensor e4 = edges_batched(edge_feats, x4.dim(0), edge_lifted);
  return inter_attention_batched(x4, e4, incidence, params);
}

Tensor inter_edge_aggregate(const Tensor& node_feats, const Tensor& edge_feats,
                            const IncidenceMatrix& incidence, const HgatLayerParams& params) {
  bool lifted = false, edge_lifted = false;
  const Tensor x4 = as_batched(node_feats, lifted);
  check_incidence(x4, incidence, params.dim());
  const Tensor e4 = edges_batched(edge_feats, x4.dim(0), edge_lifted);
  if (e4.dim(1) != incidence.edges() || e4.dim(2) != x4.dim(2) || e4.dim(3) != x4.dim(3)) {
    throw ShapeMismatch("hyperedge features " + shape_string(edge_feats.shape()) +
                        " do not match incidence/node features");
  }
  return unbatch(inter_batched(x4, e4, incidence, params), lifted);
}

Tensor gated_fuse(const Tensor& updated, const Tensor& original, const HgatLayerParams& params,
                  Activation activation) {
  if (updated.shape() != original.shape()) {
    throw ShapeMismatch("gated_fuse: " + shape_string(updated.shape()) + " vs " +
                        shape_string(original.shape()));
  }
  const Tensor g = sigmoid(matmul(updated, params.fs) + params.bs + matmul(original, params.fg) +
                           params.bg);
  return activate(g * updated + (1.0 - g) * original, activation);
}

Tensor hgat_forward(const Tensor& node_feats, const IncidenceMatrix& incidence,
                    const HgatLayerParams& params, const HgatOptions& options, ForwardMode mode) {
  bool lifted = false;
  const Tensor x4 = as_batched(node_feats, lifted);
  check_incidence(x4, incidence, params.dim());
  const Tensor edges = intra_batched(x4, incidence, params);
  Tensor nodes = inter_batched(x4, edges, incidence, params);
  nodes = normalize_axis(nodes, 1, options.norm_eps) * params.norm_scale + params.norm_shift;
  nodes = dropout(nodes, options.dropout, mode);
  return unbatch(gated_fuse(nodes, x4, params, options.fuse_activation), lifted);
}

}  // namespace jhgrf
