#pragma once

#include <cstdint>
#include <optional>

#include "jhgrf/hgrl.hpp"
#include "jhgrf/model_config.hpp"
#include "jhgrf/sttn.hpp"
#include "jhgrf/structure.hpp"

namespace jhgrf {

inline constexpr double kVarianceFloor = 1e-6;

struct ProjectionParams {
  Tensor w0;  // c_in x d, gate
  Tensor w1;  // c_in x d, value
  Tensor w2;  // tau x upsilon, time map
};

// (sigmoid(X W0) * X W1) W2 with W0/W1 on the channel axis and W2 on the time
// axis: [..., n, tau, c_in] -> [..., n, upsilon, d].
Tensor project_input(const Tensor& x, const ProjectionParams& params);

struct FusionParams {
  Tensor fs, bs;  // applied to the STHgCN expert
  Tensor fg, bg;  // applied to the STTN expert
};

// act(g * h + (1 - g) * out), g = sigmoid(h fs + bs + out fg + bg).
Tensor fuse_experts(const Tensor& h, const Tensor& out, const FusionParams& params,
                    Activation activation);

struct ReadoutParams {
  Tensor w, b;          // d x c, [c]
  Tensor var_w, var_b;  // present only with the uncertainty head
};

struct Readout {
  Tensor mean;
  Tensor logvar;  // log(exp(raw) + 1e-6); undefined without the uncertainty head
};

Readout readout(const Tensor& fused, const ReadoutParams& params);

// Mean |pred - target| over entries with mask 1. Masked targets are ignored
// entirely (never read into the arithmetic). EmptyMask if nothing is observed.
Tensor mae_loss(const Tensor& pred, const Tensor& target, const Tensor& mask = {});

// Mean of logvar / 2 + (target - mu)^2 / (2 exp(logvar)) over observed entries.
Tensor gaussian_nll_loss(const Tensor& mu, const Tensor& logvar, const Tensor& target,
                         const Tensor& mask = {});

struct ModelOutput {
  Tensor mean;    // [B, n, upsilon, c], normalized scale
  Tensor logvar;  // same shape when uncertainty is on
  IncidenceMatrix incidence;  // undefined weights when the ablation skips structure
};

// The full network. Parameters are created in a fixed order from `seed`.
class Forecaster {
 public:
  Forecaster(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // inputs/input_mask: [B, n, tau, c] or [n, tau, c]. A training mode draws
  // Gumbel noise and dropout masks from mode.rng; evaluation is deterministic.
  ModelOutput forward(const Tensor& inputs, const Tensor& input_mask, ForwardMode mode) const;

  // Incidence used by the STHgCN path for the given mode.
  IncidenceMatrix incidence(ForwardMode mode) const;
  Tensor connection_probabilities() const;

  // Parameter prefixes used by each sub-network.
  static constexpr const char* kProjection = "proj.";
  static constexpr const char* kStructure = "struct.";
  static constexpr const char* kHgrl = "hgrl.";
  static constexpr const char* kSttn = "sttn.";
  static constexpr const char* kFusion = "fuse.";
  static constexpr const char* kReadout = "readout.";

 private:
  ModelConfig config_;
  ParameterSet params_;
  ProjectionParams projection_;
  EmbeddingBank bank_;
  HgrlParams hgrl_;
  SttnParams sttn_;
  FusionParams fusion_;
  ReadoutParams readout_;
};

}  // namespace jhgrf
