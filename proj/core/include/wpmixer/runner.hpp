#pragma once

#include <ostream>
#include <string>

#include "wpmixer/checkpoint.hpp"
#include "wpmixer/config.hpp"
#include "wpmixer/training.hpp"

namespace wpmixer {

// Artifact layout inside a run's output directory.
struct RunPaths {
  std::string dir;
  std::string checkpoint() const { return dir + "/model.ckpt"; }
  std::string train_report() const { return dir + "/train_report.csv"; }
  std::string metrics() const { return dir + "/metrics.csv"; }
};

// Metrics rows use the fixed schema dataset,horizon,seed,split,mse,mae.
std::string metrics_csv_header();
std::string metrics_csv_row(const RunConfig& cfg, const std::string& split, double mse,
                            double mae);

// Loads the dataset, standardizes with train-split statistics, trains, keeps
// the best-validation checkpoint in cfg.out_dir, and writes the per-epoch
// report CSV after every epoch.  Logs one line per epoch to `log`.
TrainReport run_train(const RunConfig& cfg, std::ostream& log);

// Restores a checkpoint, verifies it matches cfg (every field except
// output.dir; mismatches raise ConfigError enumerating the fields), evaluates
// the val and test splits, and writes the metrics CSV to metrics_path.
void run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& metrics_path, std::ostream& log);

// Forecasts the horizon following the last lookback window of input_csv (raw
// units in, raw units out via the stored train statistics) and writes the
// horizon x channels table to output_csv.
void run_predict(const std::string& checkpoint_path, const std::string& input_csv,
                 const std::string& output_csv, std::ostream& log);

}  // namespace wpmixer
