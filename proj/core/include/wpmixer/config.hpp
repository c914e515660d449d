#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wpmixer/model.hpp"

namespace wpmixer {

enum class LossKind { smooth_l1, mse };

// Full run description, mirroring the sectioned key = value config file.
// Channels are not part of the config; they come from the dataset.
struct RunConfig {
  // [data]
  std::string data_path;
  std::string data_name;
  int64_t n_train = 0;
  int64_t n_val = 0;
  int64_t n_test = 0;
  bool strict_splits = false;  // false: val/test inputs reach back across the boundary

  // [model]
  int64_t lookback = 512;
  int64_t horizon = 96;
  std::string wavelet = "db2";
  int level = 1;
  int64_t patch_len = 16;
  int64_t stride = 8;
  int64_t embed_dim = 16;
  int64_t t_factor = 5;
  int64_t d_factor = 5;
  double mixer_dropout = 0.0;
  double embed_dropout = 0.0;
  BnAxis bn_axis = BnAxis::embedding;
  bool inner_revin_affine = true;

  // [ablation]
  bool decomposition = true;
  bool patching = true;
  bool embedding = true;
  bool patch_mixer = true;
  bool embedding_mixer = true;

  // [train]
  LossKind loss = LossKind::smooth_l1;
  double base_lr = 1e-3;
  int64_t batch = 32;
  int64_t micro_batch = 0;  // 0: process each batch in one piece
  int64_t epochs = 10;
  uint64_t seed = 1;
  double smooth_l1_beta = 1.0;
  double grad_clip = 0.0;  // 0: off; else cap on the global gradient norm
  double stop_loss = 0.0;  // 0: off; else stop once an epoch's train loss drops below

  // [output]
  std::string out_dir = "out";

  // Range/consistency checks for non-model fields (model checks happen in
  // ModelConfig::validate once channels are known).  Throws ConfigError.
  void validate() const;

  ModelConfig to_model_config(int64_t channels) const;

  // Canonical sectioned text; parse(serialize(c)) == c exactly.
  std::string serialize() const;
  static RunConfig parse(const std::string& text);   // ConfigError w/ line numbers
  static RunConfig parse_file(const std::string& path);  // IoError when unreadable

  // Applies WPMIXER_<SECTION>_<KEY> environment overrides; unknown
  // WPMIXER_-prefixed variables are rejected (typo protection).
  void apply_env_overrides();
  // Single key override ("section.key", value in file syntax).
  void set_field(const std::string& dotted_key, const std::string& value);
};

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

// Dotted section.key names whose serialized values differ between a and b.
std::vector<std::string> diff_config_fields(const RunConfig& a, const RunConfig& b);

}  // namespace wpmixer
