#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "jhgrf/nn.hpp"

namespace jhgrf {

enum class Ablation { full, no_spatial, no_temporal, no_sthgcn, no_sttn };

Ablation parse_ablation(std::string_view name);
std::string to_string(Ablation ablation);
inline constexpr Ablation kAllAblations[] = {Ablation::full, Ablation::no_spatial,
                                             Ablation::no_temporal, Ablation::no_sthgcn,
                                             Ablation::no_sttn};

using KeyValues = std::map<std::string, std::string, std::less<>>;

struct ModelConfig {
  std::size_t n = 1;         // series
  std::size_t c = 1;         // channels per series
  std::size_t tau = 12;      // look-back
  std::size_t upsilon = 12;  // horizon
  std::size_t d = 18;
  std::size_t m = 5;
  std::size_t hgat_heads = 2;
  std::size_t hgat_layers = 1;
  std::size_t attn_heads = 2;
  std::size_t temporal_blocks = 1;
  std::size_t spatial_blocks = 1;
  double gamma = 0.05;
  double gumbel_eps = 1e-8;
  double dropout = 0.1;
  Ablation ablation = Ablation::full;
  bool uncertainty = false;
  Activation output_activation = Activation::identity;
  Activation hgat_activation = Activation::sigmoid;
  bool straight_through = false;
  bool post_norm = false;
  bool initial_connection = true;

  // ConfigError (or InvalidTemperature) on violated invariants.
  void validate() const;

  // "model."-prefixed keys; values printed with round-trip precision.
  KeyValues to_key_values() const;
  // Applies every "model."-prefixed key; unknown model keys are ConfigErrors.
  void apply(std::string_view key, std::string_view value);

  bool operator==(const ModelConfig&) const = default;
};

// Strict parsers shared by every config surface; ConfigError on bad input.
std::size_t parse_count(std::string_view key, std::string_view value);
double parse_real(std::string_view key, std::string_view value);
bool parse_flag(std::string_view key, std::string_view value);
std::string format_real(double value);

}  // namespace jhgrf
