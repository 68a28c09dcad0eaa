#include <gtest/gtest.h>

#include <cmath>

#include "jhgrf/grad_check.hpp"
#include "jhgrf/sttn.hpp"
#include "test_util.hpp"

using namespace jhgrf;
using jhgrf::testing::fill;
using jhgrf::testing::max_abs_diff;
using jhgrf::testing::permute_rows;
using jhgrf::testing::random_tensor;

namespace {

struct Block {
  ParameterSet params;
  AttentionParams p;
  Block(std::size_t d, std::size_t heads, std::uint64_t seed) {
    Rng rng(seed);
    p = AttentionParams::create(params, "att.", d, heads, 2 * d, rng);
  }
  void zero_weights() {
    for (Tensor* t : {&p.wq, &p.wk, &p.wv, &p.wo, &p.mlp_w1, &p.mlp_w2, &p.mlp_b1, &p.mlp_b2}) {
      fill(*t, 0.0);
    }
  }
};

struct Net {
  ParameterSet params;
  SttnParams p;
  Net(std::size_t d, std::size_t heads, std::uint64_t seed) {
    Rng rng(seed);
    p = SttnParams::create(params, "sttn.", d, heads, 1, 1, rng);
  }
};

}  // namespace

TEST(Attention, HeadsMustDivideWidth) {
  ParameterSet params;
  Rng rng(0);
  EXPECT_THROW(AttentionParams::create(params, "a.", 18, 4, 36, rng), ConfigError);
  EXPECT_NO_THROW(AttentionParams::create(params, "b.", 18, 2, 36, rng));
}

TEST(Attention, SingletonSequence) {
  Block block(4, 2, 1);
  Rng rng(2);
  auto x = random_tensor({3, 1, 4}, rng);
  for (double v : attention_weights(x, AttentionAxis::time, block.p).to_vector()) EXPECT_EQ(v, 1.0);
  auto expected = matmul(matmul(x, block.p.wv), block.p.wo);
  EXPECT_LT(max_abs_diff(multihead_attention(x, AttentionAxis::time, block.p), expected), 1e-15);
}

TEST(Attention, IdenticalPositionsSplitEvenly) {
  Block block(4, 2, 3);
  Rng rng(4);
  auto row = random_tensor({1, 1, 4}, rng);
  auto x = concat({row, row}, 0);  // two identical nodes
  for (double v : attention_weights(x, AttentionAxis::nodes, block.p).to_vector()) {
    EXPECT_DOUBLE_EQ(v, 0.5);
  }
}

TEST(Attention, ScaledEnergyGivesTwoThirds) {
  Block block(2, 1, 5);
  jhgrf::testing::set_identity(block.p.wq);
  jhgrf::testing::set_identity(block.p.wk);
  const double k = std::sqrt(2.0) * std::log(2.0);
  for (double& v : block.p.wk.mutable_values()) v *= k;
  auto x = build_tensor({1, 2, 2}, {1, 0, 0, 0});
  auto w = attention_weights(x, AttentionAxis::time, block.p);
  EXPECT_NEAR(w.at({0, 0, 0, 0, 0}), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.at({0, 0, 0, 0, 1}), 1.0 / 3.0, 1e-15);
}

TEST(EncoderBlock, ZeroWeightsResidualPaths) {
  Block block(4, 2, 6);
  block.zero_weights();
  Rng rng(7);
  auto x = random_tensor({3, 2, 4}, rng);
  EXPECT_LT(max_abs_diff(encoder_block(x, AttentionAxis::time, block.p), 2.0 * x), 1e-15);
  EncoderOptions off;
  off.initial_connection = false;
  EXPECT_EQ(encoder_block(x, AttentionAxis::nodes, block.p, off).to_vector(), x.to_vector());
}

TEST(EncoderBlock, ShapesAndGradCheck) {
  Rng rng(8);
  for (auto shape : {Shape{3, 2, 4}, Shape{1, 5, 4}, Shape{2, 3, 1, 4}}) {
    Block block(4, 2, 9);
    EXPECT_EQ(encoder_block(random_tensor(shape, rng), AttentionAxis::nodes, block.p).shape(), shape);
  }
  for (bool post : {false, true}) {
    Block block(4, 2, 10);
    auto x = random_tensor({3, 2, 4}, rng);
    auto target = random_tensor({3, 2, 4}, rng);
    EncoderOptions opts;
    opts.post_norm = post;
    opts.ln_eps = 1e-5;
    for (auto axis : {AttentionAxis::time, AttentionAxis::nodes}) {
      auto loss = [&] { return sum(square(encoder_block(x, axis, block.p, opts) - target)); };
      EXPECT_LT(grad_check_parameters(loss, block.params.entries(), 1e-5).max_rel_error, 1e-4);
    }
  }
}

TEST(SttnForward, ZeroWeightsIdentity) {
  Net net(4, 2, 11);
  for (auto& e : net.params.entries()) {
    if (e.name.find("ln") == std::string::npos) fill(const_cast<Tensor&>(e.tensor), 0.0);
  }
  Rng rng(12);
  auto x = random_tensor({3, 2, 4}, rng);
  EncoderOptions off;
  off.initial_connection = false;
  EXPECT_EQ(sttn_forward(x, net.p, off).to_vector(), x.to_vector());
}

TEST(SttnForward, NodePermutationEquivariance) {
  Net net(4, 2, 13);
  Rng rng(14);
  auto x = random_tensor({4, 3, 4}, rng);
  const std::vector<std::size_t> perm{1, 3, 0, 2};
  auto a = permute_rows(sttn_forward(x, net.p), 0, perm);
  auto b = sttn_forward(permute_rows(x, 0, perm), net.p);
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(SttnForward, SingleNodeSpatialClosedForm) {
  Net net(4, 2, 15);
  Rng rng(16);
  auto x = random_tensor({1, 3, 4}, rng);
  const EncoderOptions opts;
  const auto& sp = net.p.spatial[0];
  auto h = encoder_block(x, AttentionAxis::time, net.p.temporal[0], opts);
  auto ln1 = layer_norm(h, sp.ln1_scale, sp.ln1_shift, opts.ln_eps);
  auto y = h + matmul(matmul(ln1, sp.wv), sp.wo);
  auto ln2 = layer_norm(y, sp.ln2_scale, sp.ln2_shift, opts.ln_eps);
  auto z = y + matmul(relu(matmul(ln2, sp.mlp_w1) + sp.mlp_b1), sp.mlp_w2) + sp.mlp_b2 + h;
  EXPECT_LT(max_abs_diff(sttn_forward(x, net.p, opts), z), 1e-12);
}

TEST(SttnAttention, DistributionsSumToOne) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Block block(4, 2, seed);
    Rng rng(seed + 7);
    auto x = random_tensor({2, 5, 3, 4}, rng, -4, 4);
    for (auto axis : {AttentionAxis::time, AttentionAxis::nodes}) {
      auto w = attention_weights(x, axis, block.p);
      for (double s : sum(w, -1).to_vector()) EXPECT_NEAR(s, 1.0, 1e-9);
      for (double v : w.to_vector()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

// d out[i', t', :] / d x[i, t, :] must vanish across series for temporal
// blocks and across steps for spatial blocks.
TEST(SttnAttention, AxisIsolationByGradient) {
  Block block(4, 2, 17);
  Rng rng(18);
  const Tensor x0 = random_tensor({3, 4, 4}, rng);
  for (auto axis : {AttentionAxis::time, AttentionAxis::nodes}) {
    for (std::size_t probe = 0; probe < 3; ++probe) {
      auto x = Tensor::parameter(x0.shape(), x0.to_vector());
      Tape tape;
      Tensor loss;
      {
        auto rec = tape.record();
        auto out = encoder_block(x, axis, block.p);
        loss = axis == AttentionAxis::time ? sum(select(out, 0, probe)) : sum(select(out, 1, probe));
      }
      backward(loss, tape);
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t t = 0; t < 4; ++t)
          for (std::size_t k = 0; k < 4; ++k) {
            const bool other = axis == AttentionAxis::time ? i != probe : t != probe;
            const double g = x.grad()[(i * 4 + t) * 4 + k];
            if (other) EXPECT_EQ(g, 0.0);
          }
    }
  }
}

TEST(LayerNorm, UnitVarianceBeforeAffine) {
  Rng rng(19);
  auto x = random_tensor({50, 18}, rng, -3, 3);
  auto y = normalize_axis(x, -1, EncoderOptions{}.ln_eps);
  for (std::size_t r = 0; r < 50; ++r) {
    double m = 0, v = 0;
    for (std::size_t k = 0; k < 18; ++k) m += y.at({r, k}) / 18;
    for (std::size_t k = 0; k < 18; ++k) v += (y.at({r, k}) - m) * (y.at({r, k}) - m) / 18;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}
