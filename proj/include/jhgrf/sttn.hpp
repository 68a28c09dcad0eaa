#pragma once

#include <string>
#include <vector>

#include "jhgrf/nn.hpp"
#include "jhgrf/parameters.hpp"

namespace jhgrf {

// Features are [n, L, d] or [B, n, L, d]. Temporal attention runs along L
// within each series; spatial attention runs along n within each step.
enum class AttentionAxis { time, nodes };

// Scale applied to the Glorot init of the attention output and second MLP
// weights.
inline constexpr double kResidualInitScale = 0.1;

struct AttentionParams {
  std::size_t heads = 1;
  Tensor wq, wk, wv, wo;      // d x d, bias-free
  Tensor ln1_scale, ln1_shift;  // [d]
  Tensor ln2_scale, ln2_shift;  // [d]
  Tensor mlp_w1, mlp_b1;        // d x d_ff, [d_ff]
  Tensor mlp_w2, mlp_b2;        // d_ff x d, [d]

  // ConfigError unless heads divides dim.
  static AttentionParams create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                                std::size_t heads, std::size_t ff_dim, Rng& rng);
  std::size_t dim() const { return wq.dim(0); }
};

struct EncoderOptions {
  bool post_norm = false;
  bool initial_connection = true;
  double ln_eps = 1e-8;
};

// softmax(Q K^T / sqrt(h_d)) for every head: [..., h, S, S] where S is the
// attended axis and the leading axes enumerate the other axis.
Tensor attention_weights(const Tensor& x, AttentionAxis axis, const AttentionParams& params);

Tensor multihead_attention(const Tensor& x, AttentionAxis axis, const AttentionParams& params);

Tensor encoder_block(const Tensor& x, AttentionAxis axis, const AttentionParams& params,
                     const EncoderOptions& options = {});

struct SttnParams {
  std::vector<AttentionParams> temporal;
  std::vector<AttentionParams> spatial;

  static SttnParams create(ParameterSet& params, const std::string& prefix, std::size_t dim,
                           std::size_t heads, std::size_t temporal_blocks,
                           std::size_t spatial_blocks, Rng& rng);
};

// Temporal blocks, then spatial blocks.
Tensor sttn_forward(const Tensor& x, const SttnParams& params, const EncoderOptions& options = {});

}  // namespace jhgrf
