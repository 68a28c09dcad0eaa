#include "jhgrf/sttn.hpp"

#include <cmath>

namespace jhgrf {

namespace {

Tensor as_batched(const Tensor& x) {
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() == 4) return x;
  throw ShapeMismatch("expected [n, L, d] or [B, n, L, d], got " + shape_string(x.shape()));
}

// Moves the attended axis next to the features: [B, other, S, d].
Tensor to_sequence(const Tensor& x4, AttentionAxis axis) {
  return axis == AttentionAxis::time ? x4 : permute(x4, {0, 2, 1, 3});
}

Tensor from_sequence(const Tensor& s4, AttentionAxis axis) {
  return axis == AttentionAxis::time ? s4 : permute(s4, {0, 2, 1, 3});
}

// [B, N, S, d] -> [B, N, h, S, h_d]
Tensor split_heads(const Tensor& t, std::size_t heads) {
  const std::size_t hd = t.dim(3) / heads;
  return permute(reshape(t, {t.dim(0), t.dim(1), t.dim(2), heads, hd}), {0, 1, 3, 2, 4});
}

Tensor merge_heads(const Tensor& t) {
  const Tensor p = permute(t, {0, 1, 3, 2, 4});
  return reshape(p, {p.dim(0), p.dim(1), p.dim(2), p.dim(3) * p.dim(4)});
}

void check_dim(const Tensor& x4, const AttentionParams& params) {
  if (x4.dim(3) != params.dim()) {
    throw ShapeMismatch("feature width " + std::to_string(x4.dim(3)) + " != attention width " +
                        std::to_string(params.dim()));
  }
}

Tensor weights_seq(const Tensor& seq, const AttentionParams& params) {
  const std::size_t hd = params.dim() / params.heads;
  const Tensor q = split_heads(matmul(seq, params.wq), params.heads);
  const Tensor k = split_heads(matmul(seq, params.wk), params.heads);
  const Tensor energy = matmul(q, transpose(k, -1, -2)) * (1.0 / std::sqrt(static_cast<double>(hd)));
  return softmax_lastdim(energy);
}

Tensor attention_seq(const Tensor& seq, const AttentionParams& params) {
  const Tensor v = split_heads(matmul(seq, params.wv), params.heads);
  return matmul(merge_heads(matmul(weights_seq(seq, params), v)), params.wo);
}

Tensor mlp(const Tensor& x, const AttentionParams& p) {
  return matmul(relu(matmul(x, p.mlp_w1) + p.mlp_b1), p.mlp_w2) + p.mlp_b2;
}

}  // namespace

AttentionParams AttentionParams::create(ParameterSet& params, const std::string& prefix,
                                        std::size_t dim, std::size_t heads, std::size_t ff_dim,
                                        Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide d (" +
                      std::to_string(dim) + ")");
  }
  AttentionParams p;
  p.heads = heads;
  p.wq = params.glorot(prefix + "wq", {dim, dim}, rng);
  p.wk = params.glorot(prefix + "wk", {dim, dim}, rng);
  p.wv = params.glorot(prefix + "wv", {dim, dim}, rng);
  p.wo = params.glorot(prefix + "wo", {dim, dim}, rng);
  p.ln1_scale = params.constant(prefix + "ln1_scale", {dim}, 1.0);
  p.ln1_shift = params.constant(prefix + "ln1_shift", {dim}, 0.0);
  p.ln2_scale = params.constant(prefix + "ln2_scale", {dim}, 1.0);
  p.ln2_shift = params.constant(prefix + "ln2_shift", {dim}, 0.0);
  p.mlp_w1 = params.glorot(prefix + "mlp_w1", {dim, ff_dim}, rng);
  p.mlp_b1 = params.constant(prefix + "mlp_b1", {ff_dim}, 0.0);
  p.mlp_w2 = params.glorot(prefix + "mlp_w2", {ff_dim, dim}, rng);
  p.mlp_b2 = params.constant(prefix + "mlp_b2", {dim}, 0.0);
  // Residual branches start near zero so a fresh block is close to identity.
  for (double& v : p.wo.mutable_values()) v *= kResidualInitScale;
  for (double& v : p.mlp_w2.mutable_values()) v *= kResidualInitScale;
  return p;
}

Tensor attention_weights(const Tensor& x, AttentionAxis axis, const AttentionParams& params) {
  const Tensor x4 = as_batched(x);
  check_dim(x4, params);
  return weights_seq(to_sequence(x4, axis), params);
}

Tensor multihead_attention(const Tensor& x, AttentionAxis axis, const AttentionParams& params) {
  const Tensor x4 = as_batched(x);
  check_dim(x4, params);
  return reshape(from_sequence(attention_seq(to_sequence(x4, axis), params), axis), x.shape());
}

Tensor encoder_block(const Tensor& x, AttentionAxis axis, const AttentionParams& params,
                     const EncoderOptions& options) {
  const Tensor x4 = as_batched(x);
  check_dim(x4, params);
  const Tensor seq = to_sequence(x4, axis);
  const double eps = options.ln_eps;
  Tensor z;
  if (options.post_norm) {
    const Tensor y = layer_norm(seq + attention_seq(seq, params), params.ln1_scale,
                                params.ln1_shift, eps);
    z = layer_norm(y + mlp(y, params), params.ln2_scale, params.ln2_shift, eps);
  } else {
    const Tensor y =
        seq + attention_seq(layer_norm(seq, params.ln1_scale, params.ln1_shift, eps), params);
    z = y + mlp(layer_norm(y, params.ln2_scale, params.ln2_shift, eps), params);
  }
  if (options.initial_connection) z = z + seq;
  return reshape(from_sequence(z, axis), x.shape());
}

SttnParams SttnParams::create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                              std::size_t heads, std::size_t temporal_blocks,
                              std::size_t spatial_blocks, Rng& rng) {
  SttnParams p;
  for (std::size_t b = 0; b < temporal_blocks; ++b) {
    p.temporal.push_back(AttentionParams::create(
        params, prefix + "temporal" + std::to_string(b) + ".", dim, heads, 2 * dim, rng));
  }
  for (std::size_t b = 0; b < spatial_blocks; ++b) {
    p.spatial.push_back(AttentionParams::create(
        params, prefix + "spatial" + std::to_string(b) + ".", dim, heads, 2 * dim, rng));
  }
  return p;
}

Tensor sttn_forward(const Tensor& x, const SttnParams& params, const EncoderOptions& options) {
  Tensor h = x;
  for (const auto& block : params.temporal) h = encoder_block(h, AttentionAxis::time, block, options);
  for (const auto& block : params.spatial) h = encoder_block(h, AttentionAxis::nodes, block, options);
  return h;
}

}  // namespace jhgrf
