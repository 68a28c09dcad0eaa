#include "jhgrf/data.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace jhgrf {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_row(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    cells.emplace_back(trim(line.substr(begin, comma - begin)));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return cells;
}

bool is_time_column(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) {
    return static_cast<char>(std::tolower(ch));
  });
  return name == "timestamp" || name == "time" || name == "date" || name == "datetime";
}

// Splits "base.chK" into (base, K).
std::optional<std::pair<std::string, std::size_t>> channel_suffix(const std::string& name) {
  const auto dot = name.rfind(".ch");
  if (dot == std::string::npos || dot == 0 || dot + 3 >= name.size()) return std::nullopt;
  std::size_t k = 0;
  for (std::size_t p = dot + 3; p < name.size(); ++p) {
    if (!std::isdigit(static_cast<unsigned char>(name[p]))) return std::nullopt;
    k = k * 10 + static_cast<std::size_t>(name[p] - '0');
  }
  return std::pair{name.substr(0, dot), k};
}

bool timestamps_increasing(const std::vector<std::string>& ts) {
  bool numeric = true;
  std::vector<double> nums;
  for (const auto& s : ts) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      numeric = false;
      break;
    }
    nums.push_back(v);
  }
  for (std::size_t t = 1; t < ts.size(); ++t) {
    if (numeric ? !(nums[t] > nums[t - 1]) : !(ts[t] > ts[t - 1])) return false;
  }
  return true;
}

std::string scope_name(SplitScope s) {
  switch (s) {
    case SplitScope::whole: return "whole";
    case SplitScope::train: return "train";
    case SplitScope::val: return "val";
    case SplitScope::test: return "test";
  }
  return "whole";
}

}  // namespace

SeriesTable::SeriesTable(std::vector<std::string> series_names, std::size_t channel_count,
                         std::size_t length)
    : names(std::move(series_names)),
      channels(channel_count),
      values(length * names.size() * channel_count, 0.0),
      observed(length * names.size() * channel_count, 1) {}

std::size_t SeriesTable::length() const {
  const std::size_t row = names.size() * channels;
  return row == 0 ? 0 : values.size() / row;
}

std::size_t SeriesTable::observed_count() const {
  return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), 1));
}

SeriesTable SeriesTable::slice(std::size_t begin, std::size_t count, SplitScope new_scope) const {
  if (begin + count > length()) throw DataError("slice exceeds table length");
  SeriesTable out(names, channels, count);
  const std::size_t row = names.size() * channels;
  std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(begin * row), count * row,
              out.values.begin());
  std::copy_n(observed.begin() + static_cast<std::ptrdiff_t>(begin * row), count * row,
              out.observed.begin());
  if (timestamps) {
    out.timestamps.emplace(timestamps->begin() + static_cast<std::ptrdiff_t>(begin),
                           timestamps->begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  out.scope = new_scope;
  return out;
}

SeriesTable parse_csv(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty file");
  auto header = split_row(line);
  const bool has_time = !header.empty() && is_time_column(header.front());
  const std::size_t first = has_time ? 1 : 0;
  if (header.size() <= first) throw ParseError(source + ": no series columns in header");

  // Resolve channel groups: either every column carries a .chK suffix or none.
  std::vector<std::string> names;
  std::vector<std::pair<std::size_t, std::size_t>> slot;  // column -> (series, channel)
  std::size_t channels = 1;
  std::size_t suffixed = 0;
  for (std::size_t col = first; col < header.size(); ++col) {
    suffixed += channel_suffix(header[col]) ? 1 : 0;
  }
  if (suffixed == 0) {
    for (std::size_t col = first; col < header.size(); ++col) {
      if (header[col].empty()) throw ParseError(source + ": row 1, column " + std::to_string(col + 1) + ": empty series name");
      names.push_back(header[col]);
      slot.emplace_back(names.size() - 1, 0);
    }
  } else if (suffixed == header.size() - first) {
    std::map<std::string, std::vector<std::size_t>> seen;
    for (std::size_t col = first; col < header.size(); ++col) {
      auto [base, k] = *channel_suffix(header[col]);
      auto it = std::find(names.begin(), names.end(), base);
      if (it == names.end()) {
        names.push_back(base);
        it = names.end() - 1;
      }
      seen[base].push_back(k);
      slot.emplace_back(static_cast<std::size_t>(it - names.begin()), k);
    }
    channels = seen.begin()->second.size();
    for (auto& [base, ks] : seen) {
      std::sort(ks.begin(), ks.end());
      for (std::size_t k = 0; k < ks.size(); ++k) {
        if (ks.size() != channels || ks[k] != k) {
          throw ParseError(source + ": row 1: series '" + base +
                           "' must have channels .ch0 .. .ch" + std::to_string(channels - 1));
        }
      }
    }
  } else {
    throw ParseError(source + ": row 1: mix of channel-suffixed and plain columns");
  }

  SeriesTable table(names, channels, 0);
  std::vector<std::string> stamps;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw RaggedRows(source + ": row " + std::to_string(row_no) + " has " +
                       std::to_string(cells.size()) + " cells, header has " +
                       std::to_string(header.size()));
    }
    if (has_time) stamps.push_back(cells[0]);
    const std::size_t base = table.values.size();
    table.values.resize(base + names.size() * channels, 0.0);
    table.observed.resize(base + names.size() * channels, 1);
    for (std::size_t col = first; col < cells.size(); ++col) {
      const auto [series, channel] = slot[col - first];
      const std::size_t at = base + series * channels + channel;
      const std::string& cell = cells[col];
      if (cell.empty()) {
        table.observed[at] = 0;
        continue;
      }
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError(source + ": row " + std::to_string(row_no) + ", column " +
                         std::to_string(col + 1) + ": cannot parse '" + cell + "'");
      }
      table.values[at] = v;
    }
  }
  if (has_time) {
    if (!timestamps_increasing(stamps)) {
      throw ParseError(source + ": timestamps are not strictly increasing");
    }
    table.timestamps = std::move(stamps);
  }
  return table;
}

SeriesTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read data file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

void write_csv(const std::filesystem::path& path, const SeriesTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  bool first = true;
  auto sep = [&] {
    if (!first) out << ',';
    first = false;
  };
  if (table.timestamps) sep(), out << "timestamp";
  for (const auto& name : table.names) {
    for (std::size_t k = 0; k < table.channels; ++k) {
      sep();
      out << name;
      if (table.channels > 1) out << ".ch" << k;
    }
  }
  out << '\n';
  for (std::size_t t = 0; t < table.length(); ++t) {
    first = true;
    if (table.timestamps) sep(), out << (*table.timestamps)[t];
    for (std::size_t i = 0; i < table.series(); ++i) {
      for (std::size_t k = 0; k < table.channels; ++k) {
        sep();
        if (table.is_observed(t, i, k)) out << table.value(t, i, k);
      }
    }
    out << '\n';
  }
}

Splits split_chronological(const SeriesTable& table, std::array<std::size_t, 3> ratio,
                           std::size_t min_length) {
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  if (total == 0 || ratio[0] == 0 || ratio[1] == 0 || ratio[2] == 0) {
    throw ConfigError("split ratios must be three positive integers");
  }
  const std::size_t len = table.length();
  const std::size_t val = len * ratio[1] / total;
  const std::size_t test = len * ratio[2] / total;
  const std::size_t train = len - val - test;
  if (std::min({train, val, test}) < min_length) {
    throw TooShort("series of length " + std::to_string(len) + " split " + std::to_string(train) +
                   "/" + std::to_string(val) + "/" + std::to_string(test) +
                   " leaves a part shorter than " + std::to_string(min_length));
  }
  return {table.slice(0, train, SplitScope::train), table.slice(train, val, SplitScope::val),
          table.slice(train + val, test, SplitScope::test)};
}

std::vector<std::size_t> make_windows(const SeriesTable& table, std::size_t tau,
                                      std::size_t upsilon, std::size_t stride) {
  if (tau == 0 || upsilon == 0 || stride == 0) {
    throw ConfigError("tau, upsilon and stride must be >= 1");
  }
  const std::size_t len = table.length();
  if (len < tau + upsilon) {
    throw TooShort("length " + std::to_string(len) + " < tau + upsilon = " +
                   std::to_string(tau + upsilon));
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + tau + upsilon <= len; s += stride) starts.push_back(s);
  return starts;
}

bool has_observed_target(const SeriesTable& table, std::size_t start, std::size_t tau,
                         std::size_t upsilon) {
  const std::size_t row = table.series() * table.channels;
  const auto begin = table.observed.begin() + static_cast<std::ptrdiff_t>((start + tau) * row);
  return std::find(begin, begin + static_cast<std::ptrdiff_t>(upsilon * row), 1) !=
         begin + static_cast<std::ptrdiff_t>(upsilon * row);
}

WindowBatch gather_windows(const SeriesTable& table, std::span<const std::size_t> starts,
                           std::size_t tau, std::size_t upsilon) {
  const std::size_t b = starts.size(), n = table.series(), c = table.channels;
  std::vector<double> x(b * n * tau * c), xm(x.size()), y(b * n * upsilon * c), ym(y.size());
  for (std::size_t w = 0; w < b; ++w) {
    const std::size_t s = starts[w];
    if (s + tau + upsilon > table.length()) throw DataError("window exceeds table");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t t = 0; t < tau; ++t) {
          const std::size_t at = ((w * n + i) * tau + t) * c + k;
          const bool obs = table.is_observed(s + t, i, k);
          x[at] = obs ? table.value(s + t, i, k) : 0.0;
          xm[at] = obs ? 1.0 : 0.0;
        }
        for (std::size_t t = 0; t < upsilon; ++t) {
          const std::size_t at = ((w * n + i) * upsilon + t) * c + k;
          const bool obs = table.is_observed(s + tau + t, i, k);
          y[at] = obs ? table.value(s + tau + t, i, k) : 0.0;
          ym[at] = obs ? 1.0 : 0.0;
        }
      }
  }
  return {Tensor::from({b, n, tau, c}, std::move(x)), Tensor::from({b, n, upsilon, c}, std::move(y)),
          Tensor::from({b, n, tau, c}, std::move(xm)),
          Tensor::from({b, n, upsilon, c}, std::move(ym))};
}

NormalizerKind parse_normalizer_kind(std::string_view name) {
  if (name == "zscore") return NormalizerKind::zscore;
  if (name == "minmax") return NormalizerKind::minmax;
  throw ConfigError("unknown normalizer '" + std::string(name) + "' (zscore|minmax)");
}

std::string to_string(NormalizerKind kind) {
  return kind == NormalizerKind::minmax ? "minmax" : "zscore";
}

Normalizer Normalizer::fit(const SeriesTable& table, NormalizerKind kind) {
  if (table.scope != SplitScope::train && table.scope != SplitScope::whole) {
    throw DataError("normalizer may only be fitted on the training split, got the " +
                    scope_name(table.scope) + " split");
  }
  constexpr double kFloor = 1e-8;
  Normalizer nz;
  nz.kind_ = kind;
  nz.series_ = table.series();
  nz.channels_ = table.channels;
  nz.offset_.assign(nz.series_ * nz.channels_, 0.0);
  nz.scale_.assign(nz.series_ * nz.channels_, 1.0);
  for (std::size_t i = 0; i < nz.series_; ++i) {
    for (std::size_t k = 0; k < nz.channels_; ++k) {
      double count = 0, total = 0, lo = INFINITY, hi = -INFINITY;
      for (std::size_t t = 0; t < table.length(); ++t) {
        if (!table.is_observed(t, i, k)) continue;
        const double v = table.value(t, i, k);
        count += 1;
        total += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (count == 0) continue;
      const std::size_t at = i * nz.channels_ + k;
      if (kind == NormalizerKind::zscore) {
        const double mean = total / count;
        double ss = 0;
        for (std::size_t t = 0; t < table.length(); ++t) {
          if (table.is_observed(t, i, k)) ss += (table.value(t, i, k) - mean) * (table.value(t, i, k) - mean);
        }
        nz.offset_[at] = mean;
        nz.scale_[at] = std::max(std::sqrt(ss / count), kFloor);
      } else {
        nz.offset_[at] = lo;
        nz.scale_[at] = std::max(hi - lo, kFloor);
      }
    }
  }
  return nz;
}

SeriesTable Normalizer::normalize(const SeriesTable& table) const {
  if (table.series() != series_ || table.channels != channels_) {
    throw DataError("normalizer fitted for a different series layout");
  }
  SeriesTable out = table;
  for (std::size_t at = 0; at < out.values.size(); ++at) {
    const std::size_t slot = at % (series_ * channels_);
    out.values[at] = (out.values[at] - offset_[slot]) / scale_[slot];
  }
  return out;
}

SeriesTable Normalizer::denormalize(const SeriesTable& table) const {
  SeriesTable out = table;
  for (std::size_t at = 0; at < out.values.size(); ++at) {
    const std::size_t slot = at % (series_ * channels_);
    out.values[at] = out.values[at] * scale_[slot] + offset_[slot];
  }
  return out;
}

double Normalizer::denormalize(double v, std::size_t series, std::size_t channel) const {
  const std::size_t at = series * channels_ + channel;
  return v * scale_[at] + offset_[at];
}

std::vector<double> Normalizer::denormalize(const Tensor& t) const {
  if (t.rank() < 3 || t.dim(-1) != channels_ || t.dim(-3) != series_) {
    throw ShapeMismatch("denormalize: " + shape_string(t.shape()) + " does not end in [n, L, c]");
  }
  const std::size_t steps = t.dim(-2);
  std::vector<double> out(t.size());
  const auto v = t.values();
  for (std::size_t at = 0; at < out.size(); ++at) {
    const std::size_t k = at % channels_;
    const std::size_t i = (at / (channels_ * steps)) % series_;
    out[at] = denormalize(v[at], i, k);
  }
  return out;
}

std::vector<double> Normalizer::denormalize_scale(const Tensor& sigma) const {
  if (sigma.rank() < 3 || sigma.dim(-1) != channels_ || sigma.dim(-3) != series_) {
    throw ShapeMismatch("denormalize_scale: unexpected shape " + shape_string(sigma.shape()));
  }
  const std::size_t steps = sigma.dim(-2);
  std::vector<double> out(sigma.size());
  const auto v = sigma.values();
  for (std::size_t at = 0; at < out.size(); ++at) {
    const std::size_t k = at % channels_;
    const std::size_t i = (at / (channels_ * steps)) % series_;
    out[at] = v[at] * scale_[i * channels_ + k];
  }
  return out;
}

void Normalizer::store(Checkpoint& checkpoint) const {
  checkpoint.config["data.normalizer"] = to_string(kind_);
  checkpoint.arrays.push_back({"normalizer.offset", {series_, channels_}, offset_});
  checkpoint.arrays.push_back({"normalizer.scale", {series_, channels_}, scale_});
}

Normalizer Normalizer::restore(const Checkpoint& checkpoint) {
  const auto* offset = checkpoint.find("normalizer.offset");
  const auto* scale = checkpoint.find("normalizer.scale");
  const auto kind = checkpoint.config.find("data.normalizer");
  if (!offset || !scale || kind == checkpoint.config.end() || offset->shape.size() != 2 ||
      offset->shape != scale->shape) {
    throw CheckpointError("checkpoint carries no usable normalizer");
  }
  Normalizer nz;
  nz.kind_ = parse_normalizer_kind(kind->second);
  nz.series_ = offset->shape[0];
  nz.channels_ = offset->shape[1];
  nz.offset_ = offset->values;
  nz.scale_ = scale->values;
  return nz;
}

LagMode parse_lag_mode(std::string_view name) {
  if (name == "staggered") return LagMode::staggered;
  if (name == "leader") return LagMode::leader;
  throw ConfigError("unknown lag mode '" + std::string(name) + "' (staggered|leader)");
}

std::string to_string(LagMode mode) { return mode == LagMode::leader ? "leader" : "staggered"; }

MissingPattern parse_missing_pattern(std::string_view name) {
  if (name == "none") return MissingPattern::none;
  if (name == "point") return MissingPattern::point;
  if (name == "block") return MissingPattern::block;
  throw ConfigError("unknown missing pattern '" + std::string(name) + "' (none|point|block)");
}

std::string to_string(MissingPattern pattern) {
  switch (pattern) {
    case MissingPattern::none: return "none";
    case MissingPattern::point: return "point";
    case MissingPattern::block: return "block";
  }
  return "none";
}

SeriesTable apply_missingness(const SeriesTable& table, MissingPattern pattern, double ratio,
                              double sensor_fail_prob, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("missing ratio must lie in [0, 1)");
  if (!(sensor_fail_prob >= 0.0 && sensor_fail_prob < 1.0)) {
    throw ConfigError("sensor failure probability must lie in [0, 1)");
  }
  SeriesTable out = table;
  const std::size_t len = out.length(), n = out.series(), c = out.channels;
  const auto target = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(out.observed_count())));

  if (pattern == MissingPattern::point && target > 0) {
    std::vector<std::size_t> candidates;
    for (std::size_t at = 0; at < out.observed.size(); ++at) {
      if (out.observed[at]) candidates.push_back(at);
    }
    // Partial Fisher-Yates: the first `target` picks are a uniform subset.
    for (std::size_t k = 0; k < target; ++k) {
      std::swap(candidates[k], candidates[k + rng.index(candidates.size() - k)]);
      out.observed[candidates[k]] = 0;
    }
  } else if (pattern == MissingPattern::block && target > 0) {
    std::size_t masked = 0;
    while (masked < target) {
      const std::size_t lane = rng.index(n * c);
      const std::size_t start = rng.index(len);
      const std::size_t run = rng.geometric(1.0 / kMeanBlockLength);
      for (std::size_t t = start; t < std::min(len, start + run) && masked < target; ++t) {
        const std::size_t at = t * n * c + lane;
        if (out.observed[at]) {
          out.observed[at] = 0;
          ++masked;
        }
      }
    }
  }

  if (sensor_fail_prob > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < len; ++t) {
        if (rng.uniform() >= sensor_fail_prob) continue;
        const std::size_t run = rng.geometric(1.0 / kMeanBlockLength);
        for (std::size_t u = t; u < std::min(len, t + run); ++u)
          for (std::size_t k = 0; k < c; ++k) out.observed[out.index(u, i, k)] = 0;
      }
    }
  }
  return out;
}

SyntheticData generate_synthetic(const SyntheticOptions& options, Rng& rng) {
  const std::size_t n = options.n, g = options.groups, len = options.length;
  if (g == 0 || n % g != 0) throw ConfigError("synthetic: groups must divide n");
  const std::size_t per_group = n / g;
  const auto lag_of = [&](std::size_t member) {
    if (options.lag_mode == LagMode::leader) return member == 0 ? 0 : options.lag_step;
    return member * options.lag_step;
  };
  const std::size_t max_lag = lag_of(per_group - 1);

  // Drivers are generated on an extended axis so lagged copies stay defined.
  const std::size_t span = len + max_lag;
  std::vector<std::vector<double>> drivers(g, std::vector<double>(span));
  const double rho = 0.9;
  for (std::size_t k = 0; k < g; ++k) {
    const double period = 12.0 + 7.0 * static_cast<double>(k);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double ar = rng.normal();
    for (std::size_t t = 0; t < span; ++t) {
      ar = rho * ar + std::sqrt(1.0 - rho * rho) * rng.normal();
      drivers[k][t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase) +
                      options.random_component * ar;
    }
  }

  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("s" + std::to_string(i));
  SyntheticData out{SeriesTable(names, 1, len), std::vector<double>(n * g, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t group = i / per_group;
    const std::size_t lag = lag_of(i % per_group);
    out.incidence[i * g + group] = 1.0;
    for (std::size_t t = 0; t < len; ++t) {
      out.table.values[out.table.index(t, i, 0)] =
          options.amplitude * drivers[group][t + max_lag - lag] + options.noise_std * rng.normal();
    }
  }
  return out;
}

}  // namespace jhgrf
