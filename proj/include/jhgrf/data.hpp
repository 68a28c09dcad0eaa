#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jhgrf/checkpoint.hpp"
#include "jhgrf/random.hpp"
#include "jhgrf/tensor.hpp"

namespace jhgrf {

enum class SplitScope { whole, train, val, test };

// T x n x c observations with a parallel observation mask (1 = observed).
// Missing entries keep whatever value they had; consumers zero-fill them.
struct SeriesTable {
  std::vector<std::string> names;
  std::size_t channels = 1;
  std::optional<std::vector<std::string>> timestamps;
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  SplitScope scope = SplitScope::whole;

  SeriesTable() = default;
  SeriesTable(std::vector<std::string> names, std::size_t channels, std::size_t length);

  std::size_t length() const;
  std::size_t series() const { return names.size(); }
  std::size_t index(std::size_t t, std::size_t i, std::size_t k) const {
    return (t * names.size() + i) * channels + k;
  }
  double value(std::size_t t, std::size_t i, std::size_t k = 0) const {
    return values[index(t, i, k)];
  }
  bool is_observed(std::size_t t, std::size_t i, std::size_t k = 0) const {
    return observed[index(t, i, k)] != 0;
  }
  std::size_t observed_count() const;
  // Rows [begin, begin + count).
  SeriesTable slice(std::size_t begin, std::size_t count, SplitScope scope) const;
};

// Wide CSV: header of series names (optionally a leading timestamp/time/date
// column), one row per step, empty cell = missing. Columns named
// `<series>.ch<k>` are grouped into channels of one series.
SeriesTable load_csv(const std::filesystem::path& path);
SeriesTable parse_csv(std::string_view text, const std::string& source = "<memory>");
void write_csv(const std::filesystem::path& path, const SeriesTable& table);

struct Splits {
  SeriesTable train, val, test;
};

// Sizes floor(T r_k / sum r) for val and test, the remainder to train.
// TooShort if any part is shorter than `min_length`.
Splits split_chronological(const SeriesTable& table, std::array<std::size_t, 3> ratio,
                           std::size_t min_length = 1);

// Start offsets of every window: floor((T - tau - upsilon) / stride) + 1.
std::vector<std::size_t> make_windows(const SeriesTable& table, std::size_t tau,
                                      std::size_t upsilon, std::size_t stride = 1);

bool has_observed_target(const SeriesTable& table, std::size_t start, std::size_t tau,
                         std::size_t upsilon);

// b x n x tau x c inputs and b x n x upsilon x c targets; unobserved values
// are zero-filled and flagged 0 in the masks.
struct WindowBatch {
  Tensor inputs, targets, input_mask, target_mask;
  std::size_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
};

WindowBatch gather_windows(const SeriesTable& table, std::span<const std::size_t> starts,
                           std::size_t tau, std::size_t upsilon);

enum class NormalizerKind { zscore, minmax };
NormalizerKind parse_normalizer_kind(std::string_view name);
std::string to_string(NormalizerKind kind);

// Per (series, channel) affine map x -> (x - offset) / scale, fitted on
// observed training entries only.
class Normalizer {
 public:
  Normalizer() = default;
  // DataError unless the table is the training split (or an unsplit table).
  static Normalizer fit(const SeriesTable& table, NormalizerKind kind);

  NormalizerKind kind() const { return kind_; }
  std::size_t series() const { return series_; }
  std::size_t channels() const { return channels_; }
  const std::vector<double>& offsets() const { return offset_; }
  const std::vector<double>& scales() const { return scale_; }

  SeriesTable normalize(const SeriesTable& table) const;
  SeriesTable denormalize(const SeriesTable& table) const;
  double denormalize(double v, std::size_t series, std::size_t channel) const;
  // Values shaped [..., n, L, c].
  std::vector<double> denormalize(const Tensor& t) const;
  // Standard deviations shaped [..., n, L, c] rescaled to data units.
  std::vector<double> denormalize_scale(const Tensor& sigma) const;

  void store(Checkpoint& checkpoint) const;
  static Normalizer restore(const Checkpoint& checkpoint);

 private:
  NormalizerKind kind_ = NormalizerKind::zscore;
  std::size_t series_ = 0, channels_ = 0;
  std::vector<double> offset_, scale_;
};

enum class MissingPattern { none, point, block };
MissingPattern parse_missing_pattern(std::string_view name);
std::string to_string(MissingPattern pattern);

inline constexpr double kMeanBlockLength = 10.0;

// Masks additional entries; never unmasks and never changes values.
//   point: exactly floor(ratio * observed) observed entries, uniformly.
//   block: geometric runs (mean 10) on random (series, channel) lanes until
//          exactly floor(ratio * observed) entries are newly masked.
// Independently every (series, step) starts a whole-series outage with
// probability sensor_fail_prob, lasting a geometric (mean 10) number of steps.
SeriesTable apply_missingness(const SeriesTable& table, MissingPattern pattern, double ratio,
                              double sensor_fail_prob, Rng& rng);

// staggered: member k of a group lags the driver by k * lag_step.
// leader: member 0 follows the driver, every other member lags it by lag_step.
enum class LagMode { staggered, leader };
LagMode parse_lag_mode(std::string_view name);
std::string to_string(LagMode mode);

struct SyntheticOptions {
  std::size_t n = 8;
  std::size_t length = 400;
  std::size_t groups = 2;         // planted hyperedges; must divide n
  double noise_std = 0.05;
  double amplitude = 2.0;
  double random_component = 0.0;  // weight of a smooth AR(1) driver term
  std::size_t lag_step = 1;
  LagMode lag_mode = LagMode::staggered;
};

struct SyntheticData {
  SeriesTable table;
  std::vector<double> incidence;  // n x groups, 0/1
};

// Each group shares a seasonal driver (distinct periods); series within a
// group are lagged copies of it plus Gaussian noise.
SyntheticData generate_synthetic(const SyntheticOptions& options, Rng& rng);

}  // namespace jhgrf
