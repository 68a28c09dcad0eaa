#include "jhgrf/structure.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace jhgrf {

namespace {

constexpr double kMinNorm = 1e-8;

double row_norm(std::span<const double> values, std::size_t row, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t k = 0; k < dim; ++k) acc += values[row * dim + k] * values[row * dim + k];
  return std::sqrt(acc);
}

Tensor init_embeddings(ParameterSet& params, std::string name, std::size_t rows, std::size_t dim,
                       Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> values(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    do {
      for (std::size_t k = 0; k < dim; ++k) values[r * dim + k] = rng.uniform(-bound, bound);
    } while (row_norm(values, r, dim) < kMinNorm);
  }
  return params.add(std::move(name), Tensor::parameter({rows, dim}, std::move(values)));
}

Tensor row_norms(const Tensor& z, const char* which) {
  const std::size_t rows = z.dim(0);
  const std::size_t dim = z.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_norm(z.values(), r, dim) < kMinNorm) {
      throw ZeroNormEmbedding(std::string(which) + " embedding " + std::to_string(r) +
                              " has (near) zero norm");
    }
  }
  return sqrt(sum(square(z), -1));
}

void check_temperature(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidTemperature("Gumbel-softmax temperature must be > 0, got " +
                             std::to_string(gamma));
  }
}

void check_probs(const Tensor& probs) {
  if (probs.rank() != 3 || probs.dim(2) != 2) {
    throw ShapeMismatch("incidence probabilities must be n x m x 2, got " +
                        shape_string(probs.shape()));
  }
}

}  // namespace

EmbeddingBank EmbeddingBank::create(ParameterSet& params, std::string_view prefix,
                                    std::size_t nodes, std::size_t edges, std::size_t dim,
                                    Rng& rng) {
  EmbeddingBank bank;
  bank.node_embeddings = init_embeddings(params, std::string(prefix) + "node_embeddings", nodes,
                                         dim, rng);
  bank.edge_embeddings = init_embeddings(params, std::string(prefix) + "edge_embeddings", edges,
                                         dim, rng);
  return bank;
}

double IncidenceMatrix::density(double threshold) const {
  const auto w = weights.values();
  if (w.empty()) return 0.0;
  std::size_t on = 0;
  for (double v : w) on += v >= threshold ? 1 : 0;
  return static_cast<double>(on) / static_cast<double>(w.size());
}

Tensor pairwise_similarity(const EmbeddingBank& bank) {
  const Tensor& zn = bank.node_embeddings;
  const Tensor& ze = bank.edge_embeddings;
  if (zn.rank() != 2 || ze.rank() != 2 || zn.dim(1) != ze.dim(1)) {
    throw ShapeMismatch("embedding banks must be n x d and m x d");
  }
  const Tensor nn = reshape(row_norms(zn, "node"), {zn.dim(0), 1});
  const Tensor ne = reshape(row_norms(ze, "edge"), {1, ze.dim(0)});
  const Tensor cosine = matmul(zn, transpose(ze, 0, 1)) / (nn * ne);
  return (cosine + 1.0) * 0.5;
}

Tensor pairwise_probabilities(const EmbeddingBank& bank) {
  const Tensor s = pairwise_similarity(bank);
  return stack({sigmoid(s), sigmoid(1.0 - s)}, -1);
}

Tensor sample_gumbel_noise(std::size_t nodes, std::size_t edges, Rng& rng) {
  std::vector<double> g(nodes * edges * 2);
  for (double& v : g) v = rng.gumbel();
  return Tensor::from({nodes, edges, 2}, std::move(g));
}

Tensor gumbel_softmax_categories(const Tensor& probs, const Tensor& noise, double gamma,
                                 double epsilon) {
  check_temperature(gamma);
  check_probs(probs);
  return softmax_lastdim(((probs + noise) + epsilon) * (1.0 / gamma));
}

IncidenceMatrix gumbel_softmax_incidence(const Tensor& probs, const Tensor& noise, double gamma,
                                         double epsilon) {
  return {select(gumbel_softmax_categories(probs, noise, gamma, epsilon), -1, 0),
          IncidenceMode::soft};
}

IncidenceMatrix sample_incidence(const Tensor& probs, double gamma, double epsilon, Rng& rng) {
  check_temperature(gamma);
  check_probs(probs);
  return gumbel_softmax_incidence(probs, sample_gumbel_noise(probs.dim(0), probs.dim(1), rng),
                                  gamma, epsilon);
}

IncidenceMatrix deterministic_incidence(const Tensor& probs, double gamma, double epsilon) {
  check_temperature(gamma);
  check_probs(probs);
  const Tensor logits = (probs + epsilon) * (1.0 / gamma);
  return {select(softmax_lastdim(logits), -1, 0), IncidenceMode::soft};
}

IncidenceMatrix harden_incidence(const IncidenceMatrix& soft, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("harden threshold must lie in (0, 1)");
  }
  std::vector<double> hard(soft.weights.size());
  const auto w = soft.weights.values();
  for (std::size_t k = 0; k < hard.size(); ++k) hard[k] = w[k] >= threshold ? 1.0 : 0.0;
  return {Tensor::from(soft.weights.shape(), std::move(hard)), IncidenceMode::hard};
}

IncidenceMatrix straight_through_incidence(const IncidenceMatrix& soft, double threshold) {
  const IncidenceMatrix hard = harden_incidence(soft, threshold);
  return {straight_through(hard.weights, soft.weights), IncidenceMode::hard};
}

}  // namespace jhgrf
