#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wpmixer/rng.hpp"
#include "wpmixer/tensor.hpp"

namespace wpmixer {

enum class Mode { train, eval };

// Trainable value: tensor plus an always-allocated gradient of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Running statistics owned by a batch-norm layer (not trainable).
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized = false;
};

// Handle to a node on the tape.
struct Val {
  int id = -1;
  bool ok() const { return id >= 0; }
};

// Reverse-mode differentiation tape.  Ops append nodes in topological order;
// backward() walks them once in reverse, freeing saved values as it goes.
// One tape per forward/backward pass; reset() or destruction releases memory.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input; pass needs_grad = true to collect an input gradient.
  Val leaf(Tensor t, bool needs_grad = false);
  Val param(Parameter& p);

  const Tensor& val(Val v) const;
  // Gradient accumulated on a leaf/param node; valid after backward().
  const Tensor& grad_of(Val v);

  // --- elementwise / structural ---
  Val add(Val a, Val b);
  Val mul(Val a, Val b);
  Val scale(Val a, double s);
  Val gelu(Val x);
  Val dropout(Val x, double p, Mode mode, Rng& rng);
  Val permute(Val x, std::vector<int> axes);
  Val reshape(Val x, Shape s);
  Val sum(Val x);

  // --- dense layers ---
  // y[..., j] = sum_k x[..., k] w[k, j] + b[j]
  Val linear(Val x, Val w, Val b);
  // Channel axis holds the normalized features; statistics pool every other
  // axis.  Train mode uses batch statistics (biased variance) and updates the
  // running buffers; eval mode consumes them.
  Val batch_norm(Val x, Val gamma, Val beta, BatchNormState& state, Mode mode, int channel_axis,
                 double momentum = 0.1, double eps = 1e-5);

  // --- patching ---
  // (B, C, L) -> (B, C, N, P): pad with S repeats of the last value, then
  // slide a length-P window with stride S; N = floor((L + S - P)/S) + 1.
  Val patch(Val x, int64_t P, int64_t S);

  // --- filter-bank transforms (leading axes are batch, last axis is time) ---
  // Zero-padded convolution with each filter, keeping odd output indices;
  // output length floor((L + F - 1)/2).  Returns (lo-pass, hi-pass).
  std::pair<Val, Val> analysis_conv(Val x, const std::vector<double>& lo,
                                    const std::vector<double>& hi);
  // Upsample-by-2 transposed convolution with both filters, summed, trimmed
  // to target_len (offset F-2); exact adjoint bookkeeping of analysis_conv.
  Val synthesis_conv(Val a, Val d, const std::vector<double>& rec_lo,
                     const std::vector<double>& rec_hi, int64_t target_len);

  // --- per-instance statistics over the trailing (time) axis of (B, C, L) ---
  // Returns mu (B, C) and sigma = sqrt(biased var + eps) (B, C).
  std::pair<Val, Val> instance_stats(Val x, double eps);
  Val standardize(Val x, Val mu, Val sigma);      // (x - mu) / sigma
  Val destandardize(Val y, Val mu, Val sigma);    // y * sigma + mu
  // Per-channel affine over axis 1: w[c] * x + b[c], and its inverse.
  Val channel_affine(Val x, Val w, Val b);
  Val channel_affine_inv(Val y, Val w, Val b);

  // --- losses (mean reduction over all elements) ---
  Val smooth_l1(Val pred, Val target, double beta = 1.0);
  Val mse(Val pred, Val target);

  // Seeds the scalar loss gradient with `seed` (use n_micro/n_batch for exact
  // gradient accumulation across micro-batches) and back-propagates.  Saved
  // activations and interior gradients are freed on the fly; leaf and
  // parameter gradients stay queryable until reset().
  void backward(Val loss, double seed = 1.0);

  void reset();
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor out;
    Tensor grad;
    std::function<void(Tape&, const Tensor&)> back;
    Parameter* bound = nullptr;
    bool needs_grad = false;
    bool is_leaf = false;
  };

  Val push(Tensor out, bool needs_grad, std::function<void(Tape&, const Tensor&)> back);
  Node& node(Val v);
  const Node& node(Val v) const;
  bool wants_grad(Val v) const { return node(v).needs_grad; }
  void add_grad(int id, Tensor&& g);
  void add_grad_accum(int id, const Tensor& g);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace wpmixer
