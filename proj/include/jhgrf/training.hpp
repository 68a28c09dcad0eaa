#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "jhgrf/checkpoint.hpp"
#include "jhgrf/data.hpp"
#include "jhgrf/forecaster.hpp"

namespace jhgrf {

enum class LossKind { mae, gaussian_nll };
LossKind parse_loss_kind(std::string_view name);
std::string to_string(LossKind kind);

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.5;
  std::size_t early_stop_patience = 10;
  double grad_clip = 5.0;  // 0 disables
  LossKind loss = LossKind::mae;
  std::size_t stride = 1;
  std::size_t max_steps = 0;  // 0: no cap
  std::uint64_t seed = 0;

  void validate() const;
  KeyValues to_key_values() const;
  void apply(std::string_view key, std::string_view value);
};

// Gradient copies with absent gradients read as zeros.
using GradientSet = std::vector<std::vector<double>>;
GradientSet collect_gradients(const ParameterSet& params);
double global_norm(const GradientSet& grads);
// Rescales in place so the global norm is at most max_norm; returns the norm
// before clipping. max_norm <= 0 leaves the gradients untouched.
double clip_by_global_norm(GradientSet& grads, double max_norm);

class Adam {
 public:
  explicit Adam(const ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One bias-corrected update from the parameters' current gradients.
  // Returns the gradient norm before clipping.
  double step(ParameterSet& params, double lr, double grad_clip);
  // Same, from explicit gradients.
  void apply(ParameterSet& params, const GradientSet& grads, double lr);

  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  GradientSet m_, v_;
};

// Multiplies the rate by `factor` after `patience` consecutive epochs without
// strict improvement, then restarts the count.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, std::size_t patience, double factor = 0.5);
  double lr() const { return lr_; }
  // Returns true when the rate was reduced.
  bool observe(double metric);

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = INFINITY;
  std::size_t bad_epochs_ = 0;
};

struct MetricReport {
  std::vector<double> mae, rmse, mape;  // per horizon step
  double mae_all = 0.0, rmse_all = 0.0, mape_all = 0.0;
  std::size_t count = 0;
};

// Metrics over entries with mask 1; data laid out [..., upsilon, c]. MAPE is
// in percent and skips |target| < 1e-8. EmptyEvaluation when nothing is
// observed.
MetricReport compute_metrics(std::span<const double> forecast, std::span<const double> target,
                             std::span<const double> mask, std::size_t upsilon,
                             std::size_t channels);

// Original-scale forecasts for a set of windows, laid out [W, n, upsilon, c].
struct ForecastSet {
  std::vector<std::size_t> starts;
  Shape shape;
  std::vector<double> point, sigma, truth, mask;
};

ForecastSet predict(const Forecaster& model, const SeriesTable& normalized,
                    const Normalizer& normalizer, std::span<const std::size_t> starts,
                    std::size_t batch_size = 64);
MetricReport score(const ForecastSet& forecasts);

// All windows of `normalized` with at least one observed target.
std::vector<std::size_t> evaluation_windows(const SeriesTable& normalized, const ModelConfig& config,
                                            std::size_t stride = 1);
MetricReport evaluate(const Forecaster& model, const SeriesTable& normalized,
                      const Normalizer& normalizer, std::size_t stride = 1);

// Chronological split with a normalizer fitted on the training part; every
// part is returned normalized.
struct PreparedData {
  Normalizer normalizer;
  SeriesTable train, val, test;
};

PreparedData prepare_data(const SeriesTable& table, std::array<std::size_t, 3> ratio,
                          NormalizerKind kind, std::size_t min_length);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  double best_val_mae = INFINITY;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

// Trains on normalized splits; the model ends holding the best-validation
// parameters. Diverged on a non-finite loss.
TrainResult train(Forecaster& model, const SeriesTable& train_split, const SeriesTable& val_split,
                  const Normalizer& normalizer, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Scalar loss of one batch under `config.loss`.
Tensor batch_loss(const Forecaster& model, const WindowBatch& batch, LossKind loss,
                  ForwardMode mode);

}  // namespace jhgrf
