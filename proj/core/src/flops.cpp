#include "wpmixer/flops.hpp"

#include <cstdio>
#include <sstream>

#include "wpmixer/errors.hpp"
#include "wpmixer/wavelet.hpp"

namespace wpmixer {

FlopBreakdown count_flops(const ModelConfig& cfg, int64_t batch) {
  if (batch < 1) throw ConfigError("flop count needs batch >= 1");
  const FilterBank fb = filter_bank(cfg.wavelet);
  const std::vector<BranchDims> dims = model_branch_dims(cfg);
  const int64_t B = batch, C = cfg.channels, F = fb.length();

  FlopBreakdown out;
  if (cfg.use_decomposition) {
    // Each analysis level runs two filters of F taps per output sample; the
    // synthesis mirrors that on the horizon-side coefficient lengths.
    int64_t len = cfg.lookback;
    for (int l = 0; l < cfg.level; ++l) {
      len = coeff_len(len, F);
      out.analysis += 4 * B * C * len * F;
    }
    len = cfg.horizon;
    for (int l = 0; l < cfg.level; ++l) {
      len = coeff_len(len, F);
      out.synthesis += 4 * B * C * len * F;
    }
  }

  for (const BranchDims& d : dims) {
    const int64_t N = d.n_patches, P = d.patch_in, E = d.embed, T = d.target_len;
    if (cfg.use_embedding) out.embedding += 2 * B * C * N * P * E;
    // Two mixer modules per branch.
    if (cfg.use_patch_mixer) {
      out.patch_mixer += 2 * (4 * B * E * C * N * N * cfg.t_factor);
      out.gelu += 2 * (2 * B * E * C * N * cfg.t_factor);
      out.batch_norm += 2 * (2 * B * C * N * E);
    }
    if (cfg.use_embedding_mixer) {
      out.embedding_mixer += 2 * (4 * B * C * N * E * E * cfg.d_factor);
      out.gelu += 2 * (2 * B * C * N * E * cfg.d_factor);
      out.batch_norm += 2 * (2 * B * C * N * E);
    }
    out.batch_norm += 2 * B * C * N * E;  // the stack norm after the two modules
    out.head += 2 * B * C * N * E * T;
  }
  return out;
}

std::string format_flops(const FlopBreakdown& fb, int64_t batch) {
  std::ostringstream out;
  auto row = [&](const char* name, int64_t v) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-16s %14.4f GFLOPs\n", name, static_cast<double>(v) / 1e9);
    out << buf;
  };
  out << "forward pass, batch " << batch << "\n";
  row("analysis", fb.analysis);
  row("synthesis", fb.synthesis);
  row("embedding", fb.embedding);
  row("patch_mixer", fb.patch_mixer);
  row("embedding_mixer", fb.embedding_mixer);
  row("batch_norm", fb.batch_norm);
  row("gelu", fb.gelu);
  row("head", fb.head);
  row("total", fb.total());
  return out.str();
}

}  // namespace wpmixer
