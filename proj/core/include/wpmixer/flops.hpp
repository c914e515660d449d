#pragma once

#include <cstdint>
#include <string>

#include "wpmixer/model.hpp"

namespace wpmixer {

// Analytic floating-point operation count for one eval-mode forward pass of a
// batch.  Conventions (documented in the README):
//   - one multiply-accumulate = 2 FLOPs,
//   - batch-norm and GELU cost 2 FLOPs per element,
//   - counted: analysis/synthesis filter convolutions, patch embedding,
//     mixer MLPs, batch norms, forecasting heads, GELUs,
//   - excluded: instance normalization, residual additions, dropout, biases.
struct FlopBreakdown {
  int64_t analysis = 0;         // multi-level forward transform
  int64_t synthesis = 0;        // reconstruction back to the horizon
  int64_t embedding = 0;        // per-branch patch embedding linears
  int64_t patch_mixer = 0;      // token-mixing MLPs (both mixer modules)
  int64_t embedding_mixer = 0;  // embedding-mixing MLPs (both mixer modules)
  int64_t batch_norm = 0;
  int64_t gelu = 0;
  int64_t head = 0;

  int64_t total() const {
    return analysis + synthesis + embedding + patch_mixer + embedding_mixer + batch_norm +
           gelu + head;
  }
};

FlopBreakdown count_flops(const ModelConfig& cfg, int64_t batch);

// Human-readable table with per-component GFLOPs and the total.
std::string format_flops(const FlopBreakdown& fb, int64_t batch);

}  // namespace wpmixer
