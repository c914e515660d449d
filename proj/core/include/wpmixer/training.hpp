#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "wpmixer/config.hpp"
#include "wpmixer/data.hpp"
#include "wpmixer/model.hpp"
#include "wpmixer/tape.hpp"

namespace wpmixer {

// Warmup-then-decay learning rate: epochs 1..3 run at the base rate, after
// that each epoch multiplies by 0.9 (epoch is 1-based).
double lr_at(int64_t epoch, double base_lr);

// Adam with bias correction; hyperparameters are fixed by contract.
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor> m, v;  // one slot per parameter, in registry order
  void init(const std::vector<Parameter*>& params);
};

// One update over all parameters from their accumulated gradients.
// A non-finite gradient raises NumericError naming the parameter.
void adam_step(AdamState& state, const std::vector<Parameter*>& params, double lr);

// NumericError naming the first parameter holding a non-finite gradient.
void check_finite_gradients(const std::vector<Parameter*>& params);

// Global-norm gradient clipping; max_norm <= 0 leaves gradients untouched.
void clip_gradients(const std::vector<Parameter*>& params, double max_norm);

// Training objective on the tape (mean over batch x channel x horizon).
Val loss_node(Tape& t, LossKind kind, Val pred, Val target, double smooth_l1_beta);

struct EpochRow {
  int64_t epoch = 0;       // 1-based
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  uint64_t seed = 0;
};

struct TrainReport {
  std::vector<EpochRow> rows;
  int64_t best_epoch = -1;  // epoch with the lowest validation MSE
  double best_val_mse = std::numeric_limits<double>::infinity();
};

// CSV with one row per epoch (header included).
std::string train_report_csv(const TrainReport& report);

// Runs eval-mode forward over every window of the part in fixed-size chunks
// and returns {MSE, MAE} in standardized units.
std::pair<double, double> evaluate_split(WPMixerModel& model, const SeriesTable& table,
                                         const RunConfig& cfg, Part part);

using EpochCallback = std::function<void(const EpochRow&)>;
// Invoked whenever validation MSE strictly improves, after the epoch row is
// recorded; used by callers to persist the current best parameters.
using BestCallback = std::function<void(const TrainReport&)>;

// Full training loop: seeded shuffling, micro-batch gradient accumulation,
// the schedule above, Adam, optional clipping, per-epoch validation, and
// divergence aborts.  `table` must already be standardized.
TrainReport train_model(WPMixerModel& model, const SeriesTable& table, const RunConfig& cfg,
                        const EpochCallback& on_epoch = nullptr,
                        const BestCallback& on_best = nullptr);

}  // namespace wpmixer
