#include "jhgrf/training.hpp"

#include <algorithm>
#include <cmath>

namespace jhgrf {

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mae") return LossKind::mae;
  if (name == "gaussian_nll") return LossKind::gaussian_nll;
  throw ConfigError("unknown loss '" + std::string(name) + "' (mae|gaussian_nll)");
}

std::string to_string(LossKind kind) { return kind == LossKind::mae ? "mae" : "gaussian_nll"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (plateau_patience < 1) throw ConfigError("train.plateau_patience must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw ConfigError("train.plateau_factor must lie in (0, 1)");
  }
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (stride < 1) throw ConfigError("train.stride must be >= 1");
}

KeyValues TrainConfig::to_key_values() const {
  return {
      {"train.epochs", std::to_string(epochs)},
      {"train.lr", format_real(lr)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.plateau_patience", std::to_string(plateau_patience)},
      {"train.plateau_factor", format_real(plateau_factor)},
      {"train.early_stop_patience", std::to_string(early_stop_patience)},
      {"train.grad_clip", format_real(grad_clip)},
      {"train.loss", to_string(loss)},
      {"train.stride", std::to_string(stride)},
      {"train.max_steps", std::to_string(max_steps)},
  };
}

void TrainConfig::apply(std::string_view key, std::string_view value) {
  const std::string_view k = key.substr(key.find('.') + 1);
  if (k == "epochs") epochs = parse_count(key, value);
  else if (k == "lr") lr = parse_real(key, value);
  else if (k == "batch_size") batch_size = parse_count(key, value);
  else if (k == "plateau_patience") plateau_patience = parse_count(key, value);
  else if (k == "plateau_factor") plateau_factor = parse_real(key, value);
  else if (k == "early_stop_patience") early_stop_patience = parse_count(key, value);
  else if (k == "grad_clip") grad_clip = parse_real(key, value);
  else if (k == "loss") loss = parse_loss_kind(value);
  else if (k == "stride") stride = parse_count(key, value);
  else if (k == "max_steps") max_steps = parse_count(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

GradientSet collect_gradients(const ParameterSet& params) {
  GradientSet grads;
  for (const auto& e : params.entries()) {
    if (e.tensor.has_grad()) {
      grads.emplace_back(e.tensor.grad().begin(), e.tensor.grad().end());
    } else {
      grads.emplace_back(e.tensor.size(), 0.0);
    }
  }
  return grads;
}

double global_norm(const GradientSet& grads) {
  double acc = 0.0;
  for (const auto& g : grads)
    for (double v : g) acc += v * v;
  return std::sqrt(acc);
}

double clip_by_global_norm(GradientSet& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g) v *= k;
  }
  return norm;
}

Adam::Adam(const ParameterSet& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.tensor.size(), 0.0);
    v_.emplace_back(e.tensor.size(), 0.0);
  }
}

double Adam::step(ParameterSet& params, double lr, double grad_clip) {
  GradientSet grads = collect_gradients(params);
  const double norm = clip_by_global_norm(grads, grad_clip);
  apply(params, grads, lr);
  return norm;
}

void Adam::apply(ParameterSet& params, const GradientSet& grads, double lr) {
  if (grads.size() != m_.size()) throw ShapeMismatch("Adam: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    Tensor t = params.entries()[p].tensor;
    auto values = t.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grads[p][k];
      m_[p][k] = beta1_ * m_[p][k] + (1.0 - beta1_) * g;
      v_[p][k] = beta2_ * v_[p][k] + (1.0 - beta2_) * g * g;
      values[k] -= lr * (m_[p][k] / c1) / (std::sqrt(v_[p][k] / c2) + eps_);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr, std::size_t patience, double factor)
    : lr_(lr), patience_(patience), factor_(factor) {}

bool PlateauScheduler::observe(double metric) {
  if (metric < best_) {
    best_ = metric;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  lr_ *= factor_;
  bad_epochs_ = 0;
  return true;
}

MetricReport compute_metrics(std::span<const double> forecast, std::span<const double> target,
                             std::span<const double> mask, std::size_t upsilon,
                             std::size_t channels) {
  if (forecast.size() != target.size() || mask.size() != target.size()) {
    throw ShapeMismatch("compute_metrics: forecast, target and mask sizes differ");
  }
  std::vector<double> abs_sum(upsilon, 0.0), sq_sum(upsilon, 0.0), pct_sum(upsilon, 0.0);
  std::vector<double> count(upsilon, 0.0), pct_count(upsilon, 0.0);
  for (std::size_t at = 0; at < target.size(); ++at) {
    if (mask[at] == 0.0) continue;
    const std::size_t step = (at / channels) % upsilon;
    const double err = forecast[at] - target[at];
    abs_sum[step] += std::fabs(err);
    sq_sum[step] += err * err;
    count[step] += 1.0;
    if (std::fabs(target[at]) >= 1e-8) {
      pct_sum[step] += std::fabs(err / target[at]);
      pct_count[step] += 1.0;
    }
  }
  MetricReport r;
  double a = 0, s = 0, p = 0, c = 0, pc = 0;
  for (std::size_t h = 0; h < upsilon; ++h) {
    r.mae.push_back(count[h] > 0 ? abs_sum[h] / count[h] : NAN);
    r.rmse.push_back(count[h] > 0 ? std::sqrt(sq_sum[h] / count[h]) : NAN);
    r.mape.push_back(pct_count[h] > 0 ? 100.0 * pct_sum[h] / pct_count[h] : NAN);
    a += abs_sum[h], s += sq_sum[h], p += pct_sum[h], c += count[h], pc += pct_count[h];
  }
  if (c == 0) throw EmptyEvaluation("no observed target entries to evaluate");
  r.count = static_cast<std::size_t>(c);
  r.mae_all = a / c;
  r.rmse_all = std::sqrt(s / c);
  r.mape_all = pc > 0 ? 100.0 * p / pc : NAN;
  return r;
}

std::vector<std::size_t> evaluation_windows(const SeriesTable& normalized, const ModelConfig& config,
                                            std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t s : make_windows(normalized, config.tau, config.upsilon, stride)) {
    if (has_observed_target(normalized, s, config.tau, config.upsilon)) out.push_back(s);
  }
  return out;
}

ForecastSet predict(const Forecaster& model, const SeriesTable& normalized,
                    const Normalizer& normalizer, std::span<const std::size_t> starts,
                    std::size_t batch_size) {
  const auto& cfg = model.config();
  ForecastSet fs;
  fs.starts.assign(starts.begin(), starts.end());
  fs.shape = {starts.size(), cfg.n, cfg.upsilon, cfg.c};
  NoGradGuard no_grad;
  for (std::size_t b = 0; b < starts.size(); b += batch_size) {
    const auto chunk = starts.subspan(b, std::min(batch_size, starts.size() - b));
    const WindowBatch batch = gather_windows(normalized, chunk, cfg.tau, cfg.upsilon);
    const ModelOutput out = model.forward(batch.inputs, batch.input_mask, ForwardMode::eval());
    auto point = normalizer.denormalize(out.mean);
    auto truth = normalizer.denormalize(batch.targets);
    fs.point.insert(fs.point.end(), point.begin(), point.end());
    fs.truth.insert(fs.truth.end(), truth.begin(), truth.end());
    fs.mask.insert(fs.mask.end(), batch.target_mask.values().begin(),
                   batch.target_mask.values().end());
    if (out.logvar.defined()) {
      const Tensor sigma = exp(out.logvar * 0.5);
      auto s = normalizer.denormalize_scale(sigma);
      fs.sigma.insert(fs.sigma.end(), s.begin(), s.end());
    }
  }
  return fs;
}

MetricReport score(const ForecastSet& forecasts) {
  if (forecasts.shape.empty() || forecasts.point.empty()) {
    throw EmptyEvaluation("no windows to evaluate");
  }
  return compute_metrics(forecasts.point, forecasts.truth, forecasts.mask, forecasts.shape[2],
                         forecasts.shape[3]);
}

MetricReport evaluate(const Forecaster& model, const SeriesTable& normalized,
                      const Normalizer& normalizer, std::size_t stride) {
  const auto starts = evaluation_windows(normalized, model.config(), stride);
  if (starts.empty()) throw EmptyEvaluation("no window with an observed target");
  return score(predict(model, normalized, normalizer, starts));
}

PreparedData prepare_data(const SeriesTable& table, std::array<std::size_t, 3> ratio,
                          NormalizerKind kind, std::size_t min_length) {
  Splits splits = split_chronological(table, ratio, min_length);
  PreparedData out;
  out.normalizer = Normalizer::fit(splits.train, kind);
  out.train = out.normalizer.normalize(splits.train);
  out.val = out.normalizer.normalize(splits.val);
  out.test = out.normalizer.normalize(splits.test);
  return out;
}

Tensor batch_loss(const Forecaster& model, const WindowBatch& batch, LossKind loss,
                  ForwardMode mode) {
  const ModelOutput out = model.forward(batch.inputs, batch.input_mask, mode);
  if (loss == LossKind::gaussian_nll) {
    if (!out.logvar.defined()) {
      throw ConfigError("gaussian_nll loss needs model.uncertainty = true");
    }
    return gaussian_nll_loss(out.mean, out.logvar, batch.targets, batch.target_mask);
  }
  return mae_loss(out.mean, batch.targets, batch.target_mask);
}

TrainResult train(Forecaster& model, const SeriesTable& train_split, const SeriesTable& val_split,
                  const Normalizer& normalizer, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  const ModelConfig& mc = model.config();
  if (config.loss == LossKind::gaussian_nll && !mc.uncertainty) {
    throw ConfigError("train.loss = gaussian_nll needs model.uncertainty = true");
  }
  std::vector<std::size_t> starts = evaluation_windows(train_split, mc, config.stride);
  if (starts.empty()) throw EmptyEvaluation("training split has no usable window");
  if (evaluation_windows(val_split, mc, 1).empty()) {
    throw EmptyEvaluation("validation split has no usable window");
  }

  Rng rng = Rng(config.seed).derive("train");
  Adam adam(model.parameters());
  PlateauScheduler scheduler(config.lr, config.plateau_patience, config.plateau_factor);
  TrainResult result;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t k = starts.size(); k > 1; --k) std::swap(starts[k - 1], starts[rng.index(k)]);
    const double lr = scheduler.lr();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < starts.size(); b += config.batch_size) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) break;
      const std::span<const std::size_t> chunk(starts.data() + b,
                                               std::min(config.batch_size, starts.size() - b));
      const WindowBatch batch = gather_windows(train_split, chunk, mc.tau, mc.upsilon);
      model.parameters().zero_grad();
      Tape tape;
      const auto diverged = [&] {
        return Diverged("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                        std::to_string(result.steps + 1));
      };
      Tensor loss;
      double value = NAN;
      try {
        {
          auto recording = tape.record();
          loss = batch_loss(model, batch, config.loss, ForwardMode::train(rng));
        }
        value = loss.item();
        if (std::isfinite(value)) backward(loss, tape);
      } catch (const NonFiniteValue&) {
        throw diverged();
      }
      if (!std::isfinite(value)) throw diverged();
      adam.step(model.parameters(), lr, config.grad_clip);
      loss_sum += value;
      ++batches;
      ++result.steps;
    }
    if (batches == 0) break;
    const double val_mae = evaluate(model, val_split, normalizer).mae_all;
    if (!std::isfinite(val_mae)) {
      throw Diverged("non-finite validation MAE at epoch " + std::to_string(epoch));
    }
    const HistoryRow row{epoch, loss_sum / static_cast<double>(batches), val_mae, lr};
    result.history.push_back(row);
    if (val_mae < result.best_val_mae) {
      result.best_val_mae = val_mae;
      result.best_epoch = epoch;
      result.best = make_checkpoint(mc, model.parameters());
      normalizer.store(result.best);
      since_best = 0;
    } else {
      ++since_best;
    }
    if (on_epoch) on_epoch(row);
    scheduler.observe(val_mae);
    if (since_best >= config.early_stop_patience) break;
  }
  model.parameters().zero_grad();
  if (!result.best.arrays.empty()) restore_parameters(result.best, model.parameters());
  return result;
}

}  // namespace jhgrf
