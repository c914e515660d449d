#include "wpmixer/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wpmixer/errors.hpp"

namespace wpmixer {

namespace {

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << body;
  if (!f) throw IoError("failed writing '" + path + "'");
}

SeriesTable load_standardized(const RunConfig& cfg, Standardization* st_out) {
  SeriesTable table = load_csv(cfg.data_path);
  Standardization st = train_stats(table, cfg.n_train);
  apply_standardization(table, st);
  if (st_out) *st_out = std::move(st);
  return table;
}

}  // namespace

std::string metrics_csv_header() { return "dataset,horizon,seed,split,mse,mae\n"; }

std::string metrics_csv_row(const RunConfig& cfg, const std::string& split, double mse,
                            double mae) {
  std::ostringstream out;
  out << cfg.data_name << "," << cfg.horizon << "," << cfg.seed << "," << split << ","
      << format_double(mse) << "," << format_double(mae) << "\n";
  return out.str();
}

TrainReport run_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  Standardization st;
  SeriesTable table = load_standardized(cfg, &st);

  WPMixerModel model(cfg.to_model_config(table.channels()), cfg.seed);
  log << "training on " << cfg.data_path << " (" << table.rows() << " rows, "
      << table.channels() << " channels), " << model.parameter_count() << " parameters\n";

  RunPaths paths{cfg.out_dir};
  std::filesystem::create_directories(paths.dir);

  TrainReport final_report;
  auto on_epoch = [&](const EpochRow& r) {
    char line[192];
    std::snprintf(line, sizeof(line),
                  "epoch %lld/%lld  train %.6f  val_mse %.6f  val_mae %.6f  lr %.2e  %.1fs\n",
                  static_cast<long long>(r.epoch), static_cast<long long>(cfg.epochs),
                  r.train_loss, r.val_mse, r.val_mae, r.lr, r.seconds);
    log << line << std::flush;
    final_report.rows.push_back(r);
    write_file(paths.train_report(), train_report_csv(final_report));
  };
  auto on_best = [&](const TrainReport& rep) {
    final_report.best_epoch = rep.best_epoch;
    final_report.best_val_mse = rep.best_val_mse;
    save_checkpoint(paths.checkpoint(), make_checkpoint(cfg, model, st, table.columns));
  };

  TrainReport report = train_model(model, table, cfg, on_epoch, on_best);
  write_file(paths.train_report(), train_report_csv(report));
  log << "best val_mse " << format_double(report.best_val_mse) << " at epoch "
      << report.best_epoch << "; checkpoint " << paths.checkpoint() << "\n";
  return report;
}

void run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& metrics_path, std::ostream& log) {
  Checkpoint ck = load_checkpoint(checkpoint_path);

  RunConfig stored = ck.config;
  stored.out_dir = cfg.out_dir;  // the output location may legitimately differ
  std::vector<std::string> diff = diff_config_fields(stored, cfg);
  if (!diff.empty()) {
    std::string fields;
    for (const std::string& d : diff) fields += (fields.empty() ? "" : ", ") + d;
    throw ConfigError("config does not match the checkpoint; differing fields: " + fields);
  }

  SeriesTable table = load_csv(cfg.data_path);
  apply_standardization(table, restore_standardization(ck));
  WPMixerModel model(ck.config.to_model_config(table.channels()), ck.config.seed);
  restore_model(model, ck);

  std::string csv = metrics_csv_header();
  for (Part part : {Part::val, Part::test}) {
    auto [mse, mae] = evaluate_split(model, table, cfg, part);
    csv += metrics_csv_row(cfg, part_name(part), mse, mae);
    log << part_name(part) << "  mse " << format_double(mse) << "  mae " << format_double(mae)
        << "\n";
  }
  std::filesystem::path mp(metrics_path);
  if (mp.has_parent_path()) std::filesystem::create_directories(mp.parent_path());
  write_file(metrics_path, csv);
}

void run_predict(const std::string& checkpoint_path, const std::string& input_csv,
                 const std::string& output_csv, std::ostream& log) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  SeriesTable table = load_csv(input_csv);

  const int64_t L = ck.config.lookback, T = ck.config.horizon;
  if (table.rows() < L)
    throw DataError("prediction requires at least " + std::to_string(L) + " rows (lookback), '" +
                    input_csv + "' has " + std::to_string(table.rows()));
  if (table.columns != ck.columns) {
    std::string want;
    for (const std::string& c : ck.columns) want += (want.empty() ? "" : ",") + c;
    std::string got;
    for (const std::string& c : table.columns) got += (got.empty() ? "" : ",") + c;
    throw DataError("input columns (" + got + ") do not match the checkpoint's (" + want + ")");
  }

  const Standardization st = restore_standardization(ck);
  const int64_t C = table.channels();
  WPMixerModel model(ck.config.to_model_config(C), ck.config.seed);
  restore_model(model, ck);

  // Standardize the trailing lookback window with the stored train stats.
  Tensor x({1, C, L});
  const int64_t start = table.rows() - L;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < L; ++i)
      x.at({0, c, i}) =
          (table.values.at({start + i, c}) - st.mean.data()[c]) / st.std.data()[c];

  Tensor pred = model.predict(x);  // (1, C, T), standardized units

  std::ostringstream out;
  for (size_t c = 0; c < table.columns.size(); ++c)
    out << (c ? "," : "") << table.columns[c];
  out << "\n";
  for (int64_t tstep = 0; tstep < T; ++tstep) {
    for (int64_t c = 0; c < C; ++c)
      out << (c ? "," : "")
          << format_double(pred.at({0, c, tstep}) * st.std.data()[c] + st.mean.data()[c]);
    out << "\n";
  }
  std::filesystem::path op(output_csv);
  if (op.has_parent_path()) std::filesystem::create_directories(op.parent_path());
  write_file(output_csv, out.str());
  log << "wrote " << T << " forecast rows x " << C << " channels to " << output_csv << "\n";
}

}  // namespace wpmixer
