#include "wpmixer/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "wpmixer/errors.hpp"
#include "wpmixer/rng.hpp"

namespace wpmixer {

double lr_at(int64_t epoch, double base_lr) {
  if (epoch < 1) throw ContractError("epoch numbering starts at 1");
  if (epoch <= 3) return base_lr;
  return base_lr * std::pow(0.9, static_cast<double>(epoch - 3));
}

void AdamState::init(const std::vector<Parameter*>& params) {
  step = 0;
  m.clear();
  v.clear();
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Parameter* p : params) {
    m.push_back(Tensor::full(p->value.shape(), 0.0));
    v.push_back(Tensor::full(p->value.shape(), 0.0));
  }
}

void check_finite_gradients(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params) {
    const double* g = p->grad.data();
    const int64_t n = p->grad.size();
    for (int64_t i = 0; i < n; ++i)
      if (!std::isfinite(g[i]))
        throw NumericError("non-finite gradient in parameter '" + p->name + "'");
  }
}

void clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const Parameter* p : params) {
    const double* g = p->grad.data();
    const int64_t n = p->grad.size();
    for (int64_t i = 0; i < n; ++i) sq += g[i] * g[i];
  }
  double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  double scale = max_norm / norm;
  for (Parameter* p : params) {
    double* g = p->grad.data();
    const int64_t n = p->grad.size();
    for (int64_t i = 0; i < n; ++i) g[i] *= scale;
  }
}

void adam_step(AdamState& state, const std::vector<Parameter*>& params, double lr) {
  if (state.m.size() != params.size())
    throw ContractError("adam state holds " + std::to_string(state.m.size()) +
                        " slots for " + std::to_string(params.size()) + " parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter* p = params[i];
    double* w = p->value.data();
    const double* g = p->grad.data();
    double* mi = state.m[i].data();
    double* vi = state.v[i].data();
    const int64_t n = p->value.size();
    for (int64_t j = 0; j < n; ++j) {
      if (!std::isfinite(g[j]))
        throw NumericError("non-finite gradient in parameter '" + p->name + "'");
      mi[j] = AdamState::beta1 * mi[j] + (1.0 - AdamState::beta1) * g[j];
      vi[j] = AdamState::beta2 * vi[j] + (1.0 - AdamState::beta2) * g[j] * g[j];
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + AdamState::eps);
    }
  }
}

Val loss_node(Tape& t, LossKind kind, Val pred, Val target, double smooth_l1_beta) {
  if (kind == LossKind::smooth_l1) return t.smooth_l1(pred, target, smooth_l1_beta);
  return t.mse(pred, target);
}

std::string train_report_csv(const TrainReport& report) {
  std::ostringstream out;
  out << "epoch,train_loss,val_mse,val_mae,lr,seconds,seed\n";
  char secbuf[32];
  for (const EpochRow& r : report.rows) {
    std::snprintf(secbuf, sizeof(secbuf), "%.3f", r.seconds);
    out << r.epoch << "," << format_double(r.train_loss) << "," << format_double(r.val_mse)
        << "," << format_double(r.val_mae) << "," << format_double(r.lr) << "," << secbuf
        << "," << r.seed << "\n";
  }
  return out.str();
}

namespace {

int64_t eval_chunk_size(const RunConfig& cfg) {
  int64_t chunk = cfg.micro_batch > 0 ? cfg.micro_batch : cfg.batch;
  return std::max<int64_t>(1, std::min<int64_t>(chunk, 256));
}

}  // namespace

std::pair<double, double> evaluate_split(WPMixerModel& model, const SeriesTable& table,
                                         const RunConfig& cfg, Part part) {
  SplitSpec split{cfg.n_train, cfg.n_val, cfg.n_test, cfg.strict_splits};
  std::vector<WindowIndex> idx =
      window_indices(table.rows(), split, cfg.lookback, cfg.horizon, part);
  const int64_t chunk = eval_chunk_size(cfg);
  Rng unused(0);  // eval mode never draws from the dropout stream
  MetricAccumulator acc;
  Tensor x, y;
  for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(chunk)) {
    const size_t count = std::min<size_t>(static_cast<size_t>(chunk), idx.size() - at);
    gather_windows(table, idx, at, count, cfg.lookback, cfg.horizon, &x, &y);
    Tape t;
    Val pred = model.forward(t, t.leaf(x.clone()), Mode::eval, unused);
    acc.add(t.val(pred), y);
  }
  return {acc.mse(), acc.mae()};
}

TrainReport train_model(WPMixerModel& model, const SeriesTable& table, const RunConfig& cfg,
                        const EpochCallback& on_epoch, const BestCallback& on_best) {
  cfg.validate();
  SplitSpec split{cfg.n_train, cfg.n_val, cfg.n_test, cfg.strict_splits};
  std::vector<WindowIndex> train_idx =
      window_indices(table.rows(), split, cfg.lookback, cfg.horizon, Part::train);
  const int64_t n_windows = static_cast<int64_t>(train_idx.size());

  const std::vector<Parameter*>& params = model.parameters();
  AdamState adam;
  adam.init(params);
  SeedStreams seeds{cfg.seed};

  TrainReport report;
  Tensor x, y;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg.base_lr);

    Rng shuffle_rng = seeds.stream("shuffle", static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(train_idx);
    Rng dropout_rng = seeds.stream("dropout", static_cast<uint64_t>(epoch));

    double loss_sum = 0.0;  // sum over windows of their per-window mean loss
    int64_t batch_index = 0;
    for (int64_t at = 0; at < n_windows; at += cfg.batch, ++batch_index) {
      const int64_t batch_count = std::min<int64_t>(cfg.batch, n_windows - at);
      const int64_t micro = cfg.micro_batch > 0 ? std::min(cfg.micro_batch, batch_count)
                                                : batch_count;
      for (Parameter* p : params) p->zero_grad();
      for (int64_t off = 0; off < batch_count; off += micro) {
        const int64_t n_k = std::min(micro, batch_count - off);
        gather_windows(table, train_idx, static_cast<size_t>(at + off),
                       static_cast<size_t>(n_k), cfg.lookback, cfg.horizon, &x, &y);
        Tape t;
        Val pred = model.forward(t, t.leaf(x.clone()), Mode::train, dropout_rng);
        Val loss = loss_node(t, cfg.loss, pred, t.leaf(y.clone()), cfg.smooth_l1_beta);
        const double loss_value = t.val(loss).data()[0];
        if (!std::isfinite(loss_value))
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(batch_index + 1));
        loss_sum += loss_value * static_cast<double>(n_k);
        // Micro-batches contribute n_k/N of the batch-mean objective.
        t.backward(loss, static_cast<double>(n_k) / static_cast<double>(batch_count));
      }
      check_finite_gradients(params);
      clip_gradients(params, cfg.grad_clip);
      adam_step(adam, params, lr);
    }

    auto [val_mse, val_mae] = evaluate_split(model, table, cfg, Part::val);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    EpochRow row{epoch, loss_sum / static_cast<double>(n_windows), val_mse, val_mae, lr,
                 seconds, cfg.seed};
    report.rows.push_back(row);
    if (on_epoch) on_epoch(row);
    if (val_mse < report.best_val_mse) {
      report.best_val_mse = val_mse;
      report.best_epoch = epoch;
      if (on_best) on_best(report);
    }
    if (cfg.stop_loss > 0.0 && row.train_loss < cfg.stop_loss) break;
  }
  return report;
}

}  // namespace wpmixer
