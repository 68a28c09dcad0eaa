#include "jhgrf/model_config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace jhgrf {

Ablation parse_ablation(std::string_view name) {
  for (Ablation a : kAllAblations) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation '" + std::string(name) +
                    "' (full|no_spatial|no_temporal|no_sthgcn|no_sttn)");
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::full: return "full";
    case Ablation::no_spatial: return "no_spatial";
    case Ablation::no_temporal: return "no_temporal";
    case Ablation::no_sthgcn: return "no_sthgcn";
    case Ablation::no_sttn: return "no_sttn";
  }
  return "full";
}

std::size_t parse_count(std::string_view key, std::string_view value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(value) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  const std::string text(value);
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + text + "'");
  }
  return out;
}

bool parse_flag(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError(std::string(key) + ": expected true/false, got '" + std::string(value) + "'");
}

std::string format_real(double value) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
  };
  positive(n, "n");
  positive(c, "c");
  positive(tau, "tau");
  positive(upsilon, "upsilon");
  positive(d, "d");
  positive(m, "m");
  positive(hgat_heads, "hgat_heads");
  positive(hgat_layers, "hgat_layers");
  positive(attn_heads, "attn_heads");
  if (d % attn_heads != 0) {
    throw ConfigError("model.d (" + std::to_string(d) + ") must be divisible by model.attn_heads (" +
                      std::to_string(attn_heads) + ")");
  }
  if (!(gamma > 0.0)) throw InvalidTemperature("model.gamma must be > 0");
  if (gumbel_eps < 0.0) throw ConfigError("model.gumbel_eps must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"model.n", std::to_string(n)},
      {"model.c", std::to_string(c)},
      {"model.tau", std::to_string(tau)},
      {"model.upsilon", std::to_string(upsilon)},
      {"model.d", std::to_string(d)},
      {"model.m", std::to_string(m)},
      {"model.hgat_heads", std::to_string(hgat_heads)},
      {"model.hgat_layers", std::to_string(hgat_layers)},
      {"model.attn_heads", std::to_string(attn_heads)},
      {"model.temporal_blocks", std::to_string(temporal_blocks)},
      {"model.spatial_blocks", std::to_string(spatial_blocks)},
      {"model.gamma", format_real(gamma)},
      {"model.gumbel_eps", format_real(gumbel_eps)},
      {"model.dropout", format_real(dropout)},
      {"model.ablation", to_string(ablation)},
      {"model.uncertainty", uncertainty ? "true" : "false"},
      {"model.output_activation", to_string(output_activation)},
      {"model.hgat_activation", to_string(hgat_activation)},
      {"model.straight_through", straight_through ? "true" : "false"},
      {"model.post_norm", post_norm ? "true" : "false"},
      {"model.initial_connection", initial_connection ? "true" : "false"},
  };
}

void ModelConfig::apply(std::string_view key, std::string_view value) {
  const std::string_view k = key.substr(key.find('.') + 1);
  if (k == "n") n = parse_count(key, value);
  else if (k == "c") c = parse_count(key, value);
  else if (k == "tau") tau = parse_count(key, value);
  else if (k == "upsilon") upsilon = parse_count(key, value);
  else if (k == "d") d = parse_count(key, value);
  else if (k == "m") m = parse_count(key, value);
  else if (k == "hgat_heads") hgat_heads = parse_count(key, value);
  else if (k == "hgat_layers") hgat_layers = parse_count(key, value);
  else if (k == "attn_heads") attn_heads = parse_count(key, value);
  else if (k == "temporal_blocks") temporal_blocks = parse_count(key, value);
  else if (k == "spatial_blocks") spatial_blocks = parse_count(key, value);
  else if (k == "gamma") gamma = parse_real(key, value);
  else if (k == "gumbel_eps") gumbel_eps = parse_real(key, value);
  else if (k == "dropout") dropout = parse_real(key, value);
  else if (k == "ablation") ablation = parse_ablation(value);
  else if (k == "uncertainty") uncertainty = parse_flag(key, value);
  else if (k == "output_activation") output_activation = parse_activation(value);
  else if (k == "hgat_activation") hgat_activation = parse_activation(value);
  else if (k == "straight_through") straight_through = parse_flag(key, value);
  else if (k == "post_norm") post_norm = parse_flag(key, value);
  else if (k == "initial_connection") initial_connection = parse_flag(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace jhgrf
