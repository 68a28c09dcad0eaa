#pragma once

#include <string_view>

#include "jhgrf/parameters.hpp"
#include "jhgrf/random.hpp"
#include "jhgrf/tensor.hpp"

namespace jhgrf {

inline constexpr double kDefaultGumbelTemperature = 0.05;
inline constexpr double kDefaultGumbelEpsilon = 1e-8;
inline constexpr double kDefaultHardenThreshold = 0.5;

// Trainable hypernode (n x d) and hyperedge (m x d) embeddings.
struct EmbeddingBank {
  Tensor node_embeddings;
  Tensor edge_embeddings;

  // i.i.d. U(-1/sqrt(d), 1/sqrt(d)); rows with norm below 1e-8 are redrawn.
  static EmbeddingBank create(ParameterSet& params, std::string_view prefix, std::size_t nodes,
                              std::size_t edges, std::size_t dim, Rng& rng);
};

enum class IncidenceMode { soft, hard };

// n x m membership weights in [0, 1]; {0, 1} in hard mode.
struct IncidenceMatrix {
  Tensor weights;
  IncidenceMode mode = IncidenceMode::soft;

  std::size_t nodes() const { return weights.dim(0); }
  std::size_t edges() const { return weights.dim(1); }
  // Fraction of (node, edge) pairs with weight >= threshold.
  double density(double threshold = kDefaultHardenThreshold) const;
};

// S[i][j] = (cos(z_i, z_j) + 1) / 2, in [0, 1]. Throws ZeroNormEmbedding.
Tensor pairwise_similarity(const EmbeddingBank& bank);

// n x m x 2: channel 0 = sigmoid(S), channel 1 = sigmoid(1 - S).
Tensor pairwise_probabilities(const EmbeddingBank& bank);

// n x m x 2 i.i.d. Gumbel(0, 1) draws.
Tensor sample_gumbel_noise(std::size_t nodes, std::size_t edges, Rng& rng);

// Both categories (connect, disconnect) of the relaxation below, n x m x 2.
Tensor gumbel_softmax_categories(const Tensor& probs, const Tensor& noise, double gamma,
                                 double epsilon = kDefaultGumbelEpsilon);
// Two-category Gumbel-softmax with explicit noise:
//   w = softmax((noise + probs + epsilon) / gamma)[connect].
// Throws InvalidTemperature for gamma <= 0.
IncidenceMatrix gumbel_softmax_incidence(const Tensor& probs, const Tensor& noise, double gamma,
                                         double epsilon = kDefaultGumbelEpsilon);

// Draws fresh Gumbel noise from `rng`; differentiable in `probs`.
IncidenceMatrix sample_incidence(const Tensor& probs, double gamma, double epsilon, Rng& rng);

// Noise-free relaxation used at evaluation: deterministic given the embeddings.
IncidenceMatrix deterministic_incidence(const Tensor& probs, double gamma,
                                        double epsilon = kDefaultGumbelEpsilon);

// 1 where the soft weight is >= threshold. Not differentiable.
IncidenceMatrix harden_incidence(const IncidenceMatrix& soft,
                                 double threshold = kDefaultHardenThreshold);

// Hard values forward, soft gradient backward.
IncidenceMatrix straight_through_incidence(const IncidenceMatrix& soft,
                                           double threshold = kDefaultHardenThreshold);

}  // namespace jhgrf
