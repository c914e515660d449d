#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "wpmixer/normalization.hpp"
#include "wpmixer/rng.hpp"
#include "wpmixer/tape.hpp"
#include "wpmixer/wavelet.hpp"

namespace wpmixer {

// Which axis the four per-module batch norms (and the stack batch norm)
// treat as channels on the (B, C, N, d) mixer layout.
enum class BnAxis { embedding, variate };

struct ModelConfig {
  int64_t channels = 0;   // C: variates
  int64_t lookback = 0;   // L
  int64_t horizon = 0;    // T
  std::string wavelet = "db2";
  int level = 1;          // m
  int64_t patch_len = 16; // P
  int64_t stride = 8;     // S
  int64_t embed_dim = 16; // d
  int64_t t_factor = 5;   // patch-mixer hidden multiplier
  int64_t d_factor = 5;   // embedding-mixer hidden multiplier
  double mixer_dropout = 0.0;
  double embed_dropout = 0.0;
  bool inner_revin_affine = true;
  BnAxis bn_axis = BnAxis::embedding;

  // Ablation switches (all on = full model).
  bool use_decomposition = true;
  bool use_patching = true;
  bool use_embedding = true;
  bool use_patch_mixer = true;
  bool use_embedding_mixer = true;

  // ConfigError on any violated constraint (ranges, wavelet name,
  // decomposition depth for both lookback and horizon, patch feasibility).
  void validate() const;
};

// Optional test instrumentation for forward().
struct ForwardHooks {
  bool identity_gelu = false;   // replace GELU with identity (linear skeleton)
  bool identity_revin = false;  // bypass outer and inner normalization
  // When set, receives each branch's (B, C, T_i) prediction in branch order.
  std::vector<Tensor>* branch_outputs = nullptr;
};

// Geometry of one resolution branch.
struct BranchDims {
  int64_t coeff_len = 0;   // L_i
  int64_t target_len = 0;  // T_i
  int64_t patch_in = 0;    // width entering the embedding (P, or L_i unpatched)
  int64_t n_patches = 0;   // N_i
  int64_t embed = 0;       // effective d for this branch
};

// Branch geometry for a config without building the model (also validates
// decomposition depth and patch feasibility).
std::vector<BranchDims> model_branch_dims(const ModelConfig& cfg);

// Multi-resolution patch/embedding mixer forecaster.
//
// forward: outer normalize -> multi-level analysis -> per branch
// [inner normalize -> patch -> embed -> mixer stack -> head -> inner
// denormalize] -> synthesis to horizon length -> outer denormalize.
class WPMixerModel {
 public:
  WPMixerModel(ModelConfig cfg, uint64_t seed);
  WPMixerModel(const WPMixerModel&) = delete;
  WPMixerModel& operator=(const WPMixerModel&) = delete;

  // x: (B, C, lookback) -> (B, C, horizon).
  Val forward(Tape& t, Val x, Mode mode, Rng& dropout_rng, const ForwardHooks* hooks = nullptr);

  // Eval-mode convenience on plain tensors (own tape, no gradients).
  Tensor predict(const Tensor& x);

  const ModelConfig& config() const { return cfg_; }
  const FilterBank& bank() const { return bank_; }
  int branch_count() const { return static_cast<int>(branches_.size()); }
  const std::vector<BranchDims>& branch_dims() const { return dims_; }

  // Registry in creation order; addresses stable for the model's lifetime.
  const std::vector<Parameter*>& parameters() { return registry_; }
  int64_t parameter_count() const;

  // Closed form of parameter_count() as a pure function of the config:
  //   2C (outer affine)
  // + per branch: [2C inner affine] + [embed: patch_in*d + d]
  //             + 2 * mixer_module + stack BN (2*bn), head (N*d*T_i + T_i)
  // with mixer_module = [patch part: 2*bn + N*(N*t_f) + N*t_f + (N*t_f)*N + N]
  //                   + [embed part: 2*bn + d*(d*d_f) + d*d_f + (d*d_f)*d + d]
  // where bn = d or C per bn_axis and bracketed groups drop with their flag.
  static int64_t expected_parameter_count(const ModelConfig& cfg);

  // Named batch-norm running statistics, for checkpointing.
  std::vector<std::pair<std::string, BatchNormState*>> bn_states();

 private:
  struct MixerModule {
    // patch-mixing half (absent when ablated off)
    std::unique_ptr<Parameter> patch_bn_gamma, patch_bn_beta;
    BatchNormState patch_bn;
    std::unique_ptr<Parameter> patch_w1, patch_b1, patch_w2, patch_b2;
    // embedding-mixing half (absent when ablated off)
    std::unique_ptr<Parameter> embed_bn_gamma, embed_bn_beta;
    BatchNormState embed_bn;
    std::unique_ptr<Parameter> embed_w1, embed_b1, embed_w2, embed_b2;
  };

  struct Branch {
    BranchDims dims;
    std::unique_ptr<Revin> revin;
    std::unique_ptr<Parameter> embed_w, embed_b;
    MixerModule mixer[2];
    std::unique_ptr<Parameter> stack_bn_gamma, stack_bn_beta;
    BatchNormState stack_bn;
    std::unique_ptr<Parameter> head_w, head_b;
  };

  Val run_branch(Tape& t, Branch& br, int index, Val coeff, Mode mode, Rng& rng,
                 const ForwardHooks* hooks);
  Val run_mixer(Tape& t, Branch& br, MixerModule& mm, Val x, Mode mode, Rng& rng,
                const ForwardHooks* hooks);

  ModelConfig cfg_;
  FilterBank bank_;
  SeedStreams seeds_;
  ForwardHooks no_hooks_;
  Revin outer_revin_;
  std::vector<Branch> branches_;
  std::vector<BranchDims> dims_;
  std::vector<Parameter*> registry_;
};

}  // namespace wpmixer
