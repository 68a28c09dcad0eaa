#include "jhgrf/forecaster.hpp"

#include <cmath>

namespace jhgrf {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

// Constant 0/1 mask as a tensor plus its observed count; all-ones if absent.
Tensor resolve_mask(const Tensor& mask, const Tensor& like, const char* op, double& observed) {
  Tensor m = mask.defined() ? mask.detach() : Tensor::full(like.shape(), 1.0);
  require_same(m, like, op);
  observed = 0.0;
  for (double v : m.values()) {
    if (v != 0.0 && v != 1.0) throw DomainError(std::string(op) + ": mask entries must be 0 or 1");
    observed += v;
  }
  if (observed == 0.0) throw EmptyMask(std::string(op) + ": no observed entries");
  return m;
}

// Masked-out targets are replaced by the prediction's detached value so the
// loss never touches them; the mask then zeroes their (already zero) terms.
Tensor fill_masked(const Tensor& target, const Tensor& mask, const Tensor& fallback) {
  std::vector<double> v(target.size());
  const auto t = target.values(), mk = mask.values(), f = fallback.values();
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = mk[k] != 0.0 ? t[k] : f[k];
  return Tensor::from(target.shape(), std::move(v));
}

}  // namespace

Tensor project_input(const Tensor& x, const ProjectionParams& params) {
  if (x.rank() < 3 || x.dim(-1) != params.w0.dim(0) || x.dim(-2) != params.w2.dim(0)) {
    throw ShapeMismatch("project_input: input " + shape_string(x.shape()) + " vs channels " +
                        std::to_string(params.w0.dim(0)) + ", look-back " +
                        std::to_string(params.w2.dim(0)));
  }
  const Tensor gated = sigmoid(matmul(x, params.w0)) * matmul(x, params.w1);
  return transpose(matmul(transpose(gated, -1, -2), params.w2), -1, -2);
}

Tensor fuse_experts(const Tensor& h, const Tensor& out, const FusionParams& params,
                    Activation activation) {
  require_same(h, out, "fuse_experts");
  const Tensor g = sigmoid(matmul(h, params.fs) + params.bs + matmul(out, params.fg) + params.bg);
  return activate(g * h + (1.0 - g) * out, activation);
}

Readout readout(const Tensor& fused, const ReadoutParams& params) {
  Readout r;
  r.mean = matmul(fused, params.w) + params.b;
  if (params.var_w.defined()) {
    r.logvar = log(exp(matmul(fused, params.var_w) + params.var_b) + kVarianceFloor);
  }
  return r;
}

Tensor mae_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same(pred, target, "mae_loss");
  double observed = 0.0;
  const Tensor m = resolve_mask(mask, target, "mae_loss", observed);
  const Tensor t = fill_masked(target, m, pred.detach());
  return sum(abs(pred - t) * m) * (1.0 / observed);
}

Tensor gaussian_nll_loss(const Tensor& mu, const Tensor& logvar, const Tensor& target,
                         const Tensor& mask) {
  require_same(mu, target, "gaussian_nll_loss");
  require_same(logvar, target, "gaussian_nll_loss");
  double observed = 0.0;
  const Tensor m = resolve_mask(mask, target, "gaussian_nll_loss", observed);
  const Tensor t = fill_masked(target, m, mu.detach());
  const Tensor per = logvar * 0.5 + square(t - mu) * exp(-logvar) * 0.5;
  return sum(per * m) * (1.0 / observed);
}

Forecaster::Forecaster(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng(seed).derive("model-init");
  const std::size_t d = config_.d;
  const std::size_t c_in = config_.c + 1;  // channels plus the observation-mask channel
  projection_.w0 = params_.glorot(std::string(kProjection) + "w0", {c_in, d}, rng);
  projection_.w1 = params_.glorot(std::string(kProjection) + "w1", {c_in, d}, rng);
  projection_.w2 =
      params_.glorot(std::string(kProjection) + "w2", {config_.tau, config_.upsilon}, rng);
  bank_ = EmbeddingBank::create(params_, kStructure, config_.n, config_.m, d, rng);
  hgrl_ = HgrlParams::create(params_, kHgrl, d, config_.hgat_heads, config_.hgat_layers, rng);
  sttn_ = SttnParams::create(params_, kSttn, d, config_.attn_heads, config_.temporal_blocks,
                             config_.spatial_blocks, rng);
  const std::string f = kFusion;
  fusion_.fs = params_.glorot(f + "fs", {d, d}, rng);
  fusion_.bs = params_.constant(f + "bs", {d}, 0.0);
  fusion_.fg = params_.glorot(f + "fg", {d, d}, rng);
  fusion_.bg = params_.constant(f + "bg", {d}, 0.0);
  const std::string r = kReadout;
  readout_.w = params_.glorot(r + "w", {d, config_.c}, rng);
  readout_.b = params_.constant(r + "b", {config_.c}, 0.0);
  if (config_.uncertainty) {
    readout_.var_w = params_.glorot(r + "var_w", {d, config_.c}, rng);
    readout_.var_b = params_.constant(r + "var_b", {config_.c}, 0.0);
  }
}

Tensor Forecaster::connection_probabilities() const { return pairwise_probabilities(bank_); }

IncidenceMatrix Forecaster::incidence(ForwardMode mode) const {
  const Tensor probs = connection_probabilities();
  IncidenceMatrix inc = mode.training && mode.rng != nullptr
                            ? sample_incidence(probs, config_.gamma, config_.gumbel_eps, *mode.rng)
                            : deterministic_incidence(probs, config_.gamma, config_.gumbel_eps);
  if (config_.straight_through) inc = straight_through_incidence(inc);
  return inc;
}

ModelOutput Forecaster::forward(const Tensor& inputs, const Tensor& input_mask,
                                ForwardMode mode) const {
  Tensor x = inputs;
  Tensor mask = input_mask.defined() ? input_mask : Tensor::full(inputs.shape(), 1.0);
  if (x.rank() == 3) {
    x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    mask = reshape(mask, x.shape());
  }
  const Shape expected{x.dim(0), config_.n, config_.tau, config_.c};
  if (x.rank() != 4 || x.shape() != expected || mask.shape() != expected) {
    throw ShapeMismatch("forward: expected inputs " + shape_string(expected) + ", got " +
                        shape_string(inputs.shape()));
  }
  const Tensor observed = mean(mask.detach(), -1, true);
  const Tensor xbar = project_input(concat_lastdim(x * mask.detach(), observed), projection_);

  HgatOptions hopts;
  hopts.dropout = config_.dropout;
  hopts.fuse_activation = config_.hgat_activation;
  EncoderOptions eopts;
  eopts.post_norm = config_.post_norm;
  eopts.initial_connection = config_.initial_connection;

  ModelOutput out;
  const Ablation ab = config_.ablation;
  Tensor hyper, trans;
  if (ab != Ablation::no_spatial && ab != Ablation::no_sthgcn) {
    out.incidence = incidence(mode);
    hyper = ab == Ablation::no_temporal ? hgat_stack(xbar, out.incidence, hgrl_.hgat, hopts, mode)
                                        : hgrl_unroll(xbar, out.incidence, hgrl_, hopts, mode);
  }
  if (ab != Ablation::no_spatial && ab != Ablation::no_sttn) {
    trans = xbar;
    if (ab != Ablation::no_temporal) {
      for (const auto& b : sttn_.temporal) trans = encoder_block(trans, AttentionAxis::time, b, eopts);
    }
    for (const auto& b : sttn_.spatial) trans = encoder_block(trans, AttentionAxis::nodes, b, eopts);
  }
  Tensor fused;
  switch (ab) {
    case Ablation::no_spatial: fused = xbar; break;
    case Ablation::no_sthgcn: fused = activate(trans, config_.output_activation); break;
    case Ablation::no_sttn: fused = activate(hyper, config_.output_activation); break;
    default: fused = fuse_experts(hyper, trans, fusion_, config_.output_activation); break;
  }
  const Readout r = readout(fused, readout_);
  out.mean = r.mean;
  out.logvar = r.logvar;
  return out;
}

}  // namespace jhgrf
