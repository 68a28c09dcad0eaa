#include "jhgrf/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace jhgrf {

namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::array<std::size_t, 3> parse_split(std::string_view key, std::string_view value) {
  std::array<std::size_t, 3> out{};
  std::size_t part = 0, begin = 0;
  for (std::size_t k = 0; k <= value.size(); ++k) {
    if (k == value.size() || value[k] == ',' || value[k] == ':') {
      if (part == 3) throw ConfigError(std::string(key) + " needs three parts like 7,1,2");
      out[part++] = parse_count(key, trim(value.substr(begin, k - begin)));
      begin = k + 1;
    }
  }
  if (part != 3) throw ConfigError(std::string(key) + " needs three parts like 7,1,2");
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  return out;
}

std::string cell(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

void log_config(const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  auto file = open_out(out_dir / "config.txt");
  write_key_values(file, rc.to_key_values());
  log << "resolved config:\n";
  write_key_values(log, rc.to_key_values());
}

void write_history(const fs::path& path, const std::vector<HistoryRow>& history) {
  auto out = open_out(path);
  out << "epoch,train_loss,val_mae,lr\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << cell(r.train_loss) << ',' << cell(r.val_mae) << ',' << cell(r.lr)
        << '\n';
  }
}

void write_metrics(const fs::path& path, const MetricReport& r) {
  auto out = open_out(path);
  out << "horizon,mae,rmse,mape\n";
  for (std::size_t h = 0; h < r.mae.size(); ++h) {
    out << h + 1 << ',' << cell(r.mae[h]) << ',' << cell(r.rmse[h]) << ',' << cell(r.mape[h])
        << '\n';
  }
  out << "all," << cell(r.mae_all) << ',' << cell(r.rmse_all) << ',' << cell(r.mape_all) << '\n';
}

// Raw table after the configured missingness, with the model bound to its shape.
SeriesTable load_table(RunConfig& rc) {
  if (rc.data.path.empty()) throw ConfigError("data.path is required");
  SeriesTable table = load_csv(rc.data.path);
  if (rc.data.missing != MissingPattern::none || rc.data.sensor_fail_prob > 0.0) {
    Rng rng = Rng(rc.seed).derive("missing");
    table = apply_missingness(table, rc.data.missing, rc.data.missing_ratio,
                              rc.data.sensor_fail_prob, rng);
  }
  rc.model.n = table.series();
  rc.model.c = table.channels;
  rc.model.validate();
  return table;
}

std::size_t min_split_length(const ModelConfig& m) { return m.tau + m.upsilon; }

void check_model(const ModelConfig& expected, const ModelConfig& stored) {
  if (expected == stored) return;
  const KeyValues a = expected.to_key_values(), b = stored.to_key_values();
  std::string diff;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    const std::string other = it == b.end() ? "<absent>" : it->second;
    if (other != v) diff += " " + k + " (config " + v + ", checkpoint " + other + ")";
  }
  throw CheckpointMismatch("checkpoint does not match the model config:" + diff);
}

struct Loaded {
  Forecaster model;
  Normalizer normalizer;
  SeriesTable test;  // normalized
};

Loaded load_trained(RunConfig& rc, const fs::path& checkpoint_path) {
  const SeriesTable table = load_table(rc);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  check_model(rc.model, checkpoint_model_config(ckpt));
  Forecaster model(rc.model, rc.seed);
  restore_parameters(ckpt, model.parameters());
  Normalizer normalizer = Normalizer::restore(ckpt);
  if (normalizer.series() != rc.model.n || normalizer.channels() != rc.model.c) {
    throw CheckpointMismatch("checkpoint normalizer does not match the data shape");
  }
  SeriesTable test =
      normalizer.normalize(split_chronological(table, rc.data.split, min_split_length(rc.model)).test);
  return {std::move(model), std::move(normalizer), std::move(test)};
}

fs::path checkpoint_path(const RunSpec& spec) {
  return spec.checkpoint.empty() ? spec.out_dir / "checkpoint.ckpt" : fs::path(spec.checkpoint);
}

// Trains one model into `dir`; returns its test-split metrics.
MetricReport train_into(RunConfig rc, const SeriesTable& table, const fs::path& dir,
                        std::ostream& log) {
  fs::create_directories(dir);
  const PreparedData data = prepare_data(table, rc.data.split, rc.data.normalizer,
                                         min_split_length(rc.model));
  Forecaster model(rc.model, rc.seed);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  const TrainResult result =
      train(model, data.train, data.val, data.normalizer, tc, [&](const HistoryRow& r) {
        log << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_mae " << r.val_mae
            << " lr " << r.lr << '\n';
      });
  save_checkpoint(dir / "checkpoint.ckpt", result.best);
  write_history(dir / "history.csv", result.history);
  const MetricReport report = evaluate(model, data.test, data.normalizer);
  write_metrics(dir / "metrics.csv", report);
  log << "best epoch " << result.best_epoch << " val_mae " << result.best_val_mae << "; test mae "
      << report.mae_all << " rmse " << report.rmse_all << " mape " << report.mape_all << '\n';
  return report;
}

int cmd_train(const RunSpec& spec, RunConfig rc, std::ostream& log) {
  const SeriesTable table = load_table(rc);
  log_config(rc, spec.out_dir, log);
  train_into(rc, table, spec.out_dir, log);
  return kExitOk;
}

int cmd_evaluate(const RunSpec& spec, RunConfig rc, std::ostream& log) {
  Loaded loaded = load_trained(rc, checkpoint_path(spec));
  log_config(rc, spec.out_dir, log);
  const MetricReport report = evaluate(loaded.model, loaded.test, loaded.normalizer);
  write_metrics(spec.out_dir / "metrics.csv", report);
  log << "test mae " << report.mae_all << " rmse " << report.rmse_all << " mape "
      << report.mape_all << '\n';
  return kExitOk;
}

std::string file_stem(const std::string& name) {
  std::string out = name;
  for (char& ch : out) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') {
      ch = '_';
    }
  }
  return out.empty() ? "series" : out;
}

int cmd_forecast(const RunSpec& spec, RunConfig rc, std::ostream& log) {
  Loaded loaded = load_trained(rc, checkpoint_path(spec));
  log_config(rc, spec.out_dir, log);
  const ModelConfig& m = rc.model;
  // Windows tile the test period so consecutive forecasts line up.
  const auto starts = make_windows(loaded.test, m.tau, m.upsilon, m.upsilon);
  const ForecastSet set = predict(loaded.model, loaded.test, loaded.normalizer, starts);
  const fs::path dir = spec.out_dir / "forecast";
  fs::create_directories(dir);
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t k = 0; k < m.c; ++k) {
      std::string stem = file_stem(loaded.test.names[i]);
      if (m.c > 1) stem += ".ch" + std::to_string(k);
      auto out = open_out(dir / (stem + ".csv"));
      out << "step,truth,point,sigma\n";
      for (std::size_t w = 0; w < starts.size(); ++w) {
        for (std::size_t h = 0; h < m.upsilon; ++h) {
          const std::size_t at = ((w * m.n + i) * m.upsilon + h) * m.c + k;
          out << starts[w] + m.tau + h << ',' << (set.mask[at] != 0.0 ? cell(set.truth[at]) : "")
              << ',' << cell(set.point[at]) << ',' << (set.sigma.empty() ? "" : cell(set.sigma[at]))
              << '\n';
        }
      }
    }
  }
  log << "wrote " << starts.size() << " windows per series to " << dir.string() << '\n';
  return kExitOk;
}

int exit_code(const std::exception& e);

int cmd_ablate(const RunSpec& spec, RunConfig rc, std::ostream& log) {
  const SeriesTable table = load_table(rc);
  log_config(rc, spec.out_dir, log);
  struct Row {
    Ablation variant;
    std::optional<MetricReport> report;
    std::string status;
  };
  std::vector<Row> rows;
  int code = kExitOk;
  const auto write_summary = [&] {
    auto out = open_out(spec.out_dir / "ablation.csv");
    out << "variant,mae,rmse,mape,mae_delta_pct,rmse_delta_pct,mape_delta_pct,status\n";
    const MetricReport* full = nullptr;
    for (const auto& r : rows)
      if (r.variant == Ablation::full && r.report) full = &*r.report;
    const auto delta = [&](double v, double base) {
      return full ? cell((v - base) / base * 100.0) : std::string();
    };
    for (const auto& r : rows) {
      out << to_string(r.variant) << ',';
      if (r.report) {
        const auto& m = *r.report;
        out << cell(m.mae_all) << ',' << cell(m.rmse_all) << ',' << cell(m.mape_all) << ',';
        out << (full ? delta(m.mae_all, full->mae_all) : "") << ','
            << (full ? delta(m.rmse_all, full->rmse_all) : "") << ','
            << (full ? delta(m.mape_all, full->mape_all) : "") << ',';
      } else {
        out << ",,,,,,";
      }
      out << r.status << '\n';
    }
  };
  for (Ablation variant : kAllAblations) {
    RunConfig v = rc;
    v.model.ablation = variant;
    log << "== " << to_string(variant) << '\n';
    Row row{variant, std::nullopt, "ok"};
    try {
      row.report = train_into(v, table, spec.out_dir / to_string(variant), log);
    } catch (const std::exception& e) {
      log << "error: " << to_string(variant) << ": " << e.what() << '\n';
      row.status = "failed";
      if (code == kExitOk) code = exit_code(e);
    }
    rows.push_back(std::move(row));
    write_summary();
  }
  return code;
}

int cmd_gen_synthetic(const RunSpec& spec, RunConfig rc, std::ostream& log) {
  log_config(rc, spec.out_dir, log);
  Rng rng = Rng(rc.seed).derive("synthetic");
  const SyntheticData data = generate_synthetic(rc.synthetic, rng);
  write_csv(spec.out_dir / "synthetic.csv", data.table);
  auto out = open_out(spec.out_dir / "incidence.csv");
  const std::size_t groups = rc.synthetic.groups;
  for (std::size_t i = 0; i < rc.synthetic.n; ++i) {
    for (std::size_t q = 0; q < groups; ++q) {
      out << (q ? "," : "") << data.incidence[i * groups + q];
    }
    out << '\n';
  }
  log << "wrote " << (spec.out_dir / "synthetic.csv").string() << '\n';
  return kExitOk;
}

void write_matrix(const fs::path& path, const IncidenceMatrix& inc) {
  auto out = open_out(path);
  const auto values = inc.weights.values();
  for (std::size_t i = 0; i < inc.nodes(); ++i) {
    for (std::size_t q = 0; q < inc.edges(); ++q) {
      out << (q ? "," : "") << cell(values[i * inc.edges() + q]);
    }
    out << '\n';
  }
}

int cmd_export_structure(const RunSpec& spec, RunConfig rc, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path(spec));
  const ModelConfig stored = checkpoint_model_config(ckpt);
  rc.model = stored;
  log_config(rc, spec.out_dir, log);
  Forecaster model(stored, rc.seed);
  restore_parameters(ckpt, model.parameters());
  const IncidenceMatrix soft = model.incidence(ForwardMode::eval());
  write_matrix(spec.out_dir / "structure_soft.csv", soft);
  write_matrix(spec.out_dir / "structure_hard.csv", harden_incidence(soft));
  log << "incidence density " << soft.density() << '\n';
  return kExitOk;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const CheckpointError*>(&e)) return kExitCheckpoint;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const EmptyEvaluation*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const Diverged*>(&e)) return kExitDiverged;
  return kExitFailure;
}

}  // namespace

KeyValues RunConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  kv.merge(train.to_key_values());
  kv["data.path"] = data.path;
  kv["data.normalizer"] = to_string(data.normalizer);
  kv["data.split"] = std::to_string(data.split[0]) + "," + std::to_string(data.split[1]) + "," +
                     std::to_string(data.split[2]);
  kv["data.missing"] = to_string(data.missing);
  kv["data.missing_ratio"] = format_real(data.missing_ratio);
  kv["data.sensor_fail_prob"] = format_real(data.sensor_fail_prob);
  kv["synthetic.n"] = std::to_string(synthetic.n);
  kv["synthetic.length"] = std::to_string(synthetic.length);
  kv["synthetic.groups"] = std::to_string(synthetic.groups);
  kv["synthetic.noise_std"] = format_real(synthetic.noise_std);
  kv["synthetic.amplitude"] = format_real(synthetic.amplitude);
  kv["synthetic.random_component"] = format_real(synthetic.random_component);
  kv["synthetic.lag_step"] = std::to_string(synthetic.lag_step);
  kv["synthetic.lag_mode"] = to_string(synthetic.lag_mode);
  kv["seed"] = std::to_string(seed);
  return kv;
}

void RunConfig::apply(std::string_view key, std::string_view value) {
  const auto starts = [&](std::string_view p) { return key.substr(0, p.size()) == p; };
  const std::string_view k = key.substr(key.find('.') + 1);
  if (key == "seed") {
    seed = parse_count(key, value);
  } else if (starts("model.")) {
    model.apply(key, value);
  } else if (starts("train.") && k != "seed") {
    train.apply(key, value);
  } else if (starts("data.")) {
    if (k == "path") data.path = std::string(value);
    else if (k == "normalizer") data.normalizer = parse_normalizer_kind(value);
    else if (k == "split") data.split = parse_split(key, value);
    else if (k == "missing") data.missing = parse_missing_pattern(value);
    else if (k == "missing_ratio") data.missing_ratio = parse_real(key, value);
    else if (k == "sensor_fail_prob") data.sensor_fail_prob = parse_real(key, value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
  } else if (starts("synthetic.")) {
    if (k == "n") synthetic.n = parse_count(key, value);
    else if (k == "length") synthetic.length = parse_count(key, value);
    else if (k == "groups") synthetic.groups = parse_count(key, value);
    else if (k == "noise_std") synthetic.noise_std = parse_real(key, value);
    else if (k == "amplitude") synthetic.amplitude = parse_real(key, value);
    else if (k == "random_component") synthetic.random_component = parse_real(key, value);
    else if (k == "lag_step") synthetic.lag_step = parse_count(key, value);
    else if (k == "lag_mode") synthetic.lag_mode = parse_lag_mode(value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

void RunConfig::validate() const {
  train.validate();
  if (!(data.missing_ratio >= 0.0 && data.missing_ratio < 1.0)) {
    throw ConfigError("data.missing_ratio must lie in [0, 1)");
  }
  if (!(data.sensor_fail_prob >= 0.0 && data.sensor_fail_prob < 1.0)) {
    throw ConfigError("data.sensor_fail_prob must lie in [0, 1)");
  }
  if (data.split[0] == 0 || data.split[1] == 0 || data.split[2] == 0) {
    throw ConfigError("data.split parts must be positive");
  }
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& source) {
  std::size_t line_no = 0, begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(begin, end - begin);
    begin = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      config.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), path.string());
}

RunConfig resolve(const RunSpec& spec) {
  RunConfig rc;
  if (!spec.config_path.empty()) apply_config_file(rc, spec.config_path);
  for (const auto& kv : spec.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.apply(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (spec.seed) rc.seed = *spec.seed;
  if (spec.ablation) rc.model.ablation = parse_ablation(*spec.ablation);
  if (spec.loss) rc.train.loss = parse_loss_kind(*spec.loss);
  if (spec.missing) rc.data.missing = parse_missing_pattern(*spec.missing);
  if (spec.missing_ratio) rc.data.missing_ratio = *spec.missing_ratio;
  if (spec.output_activation) rc.model.output_activation = parse_activation(*spec.output_activation);
  if (rc.train.loss == LossKind::gaussian_nll) rc.model.uncertainty = true;
  rc.validate();
  return rc;
}

int run_command(const RunSpec& spec, std::ostream& log) {
  try {
    RunConfig rc = resolve(spec);
    switch (spec.command) {
      case Command::train: return cmd_train(spec, rc, log);
      case Command::evaluate: return cmd_evaluate(spec, rc, log);
      case Command::forecast: return cmd_forecast(spec, rc, log);
      case Command::ablate: return cmd_ablate(spec, rc, log);
      case Command::gen_synthetic: return cmd_gen_synthetic(spec, rc, log);
      case Command::export_structure: return cmd_export_structure(spec, rc, log);
    }
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return kExitFailure;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  CLI::App app{"Hypergraph structure-learning spatiotemporal forecaster"};
  app.require_subcommand(1);
  RunSpec spec;
  std::uint64_t seed = 0;
  std::string ablation, loss, missing, activation;
  double missing_ratio = 0.0;
  std::string out_dir = spec.out_dir.string();

  struct Entry {
    const char* name;
    const char* help;
    Command command;
  };
  const std::vector<Entry> commands = {
      {"train", "train a model and write checkpoint, history and test metrics", Command::train},
      {"forecast", "write per-series forecasts over the test split", Command::forecast},
      {"evaluate", "score a checkpoint on the test split", Command::evaluate},
      {"ablate", "train every ablation variant and summarize", Command::ablate},
      {"gen-synthetic", "write a planted-structure synthetic dataset", Command::gen_synthetic},
      {"export-structure", "write the learned incidence matrix", Command::export_structure},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, command] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", spec.config_path, "key = value config file");
    sub->add_option("--set", spec.overrides, "override as key=value (repeatable)");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--checkpoint", spec.checkpoint, "checkpoint file (default <out>/checkpoint.ckpt)");
    sub->add_option("--ablation", ablation, "full|no_spatial|no_temporal|no_sthgcn|no_sttn");
    sub->add_option("--loss", loss, "mae|gaussian_nll");
    sub->add_option("--missing", missing, "none|point|block");
    sub->add_option("--missing-ratio", missing_ratio, "fraction of observed entries to mask");
    sub->add_option("--output-activation", activation, "identity|sigmoid");
    sub->callback([&spec, command = command] { spec.command = command; });
    subs.push_back(sub);
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      for (CLI::App* sub : subs)
        if (sub->parsed()) out << sub->help();
      return kExitOk;
    }
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  spec.out_dir = out_dir;
  for (CLI::App* sub : subs) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) spec.seed = seed;
    if (sub->count("--ablation")) spec.ablation = ablation;
    if (sub->count("--loss")) spec.loss = loss;
    if (sub->count("--missing")) spec.missing = missing;
    if (sub->count("--missing-ratio")) spec.missing_ratio = missing_ratio;
    if (sub->count("--output-activation")) spec.output_activation = activation;
  }
  return run_command(spec, log);
}

}  // namespace jhgrf
