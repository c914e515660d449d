#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wpmixer/config.hpp"
#include "wpmixer/data.hpp"
#include "wpmixer/model.hpp"

namespace wpmixer {

// Self-describing model snapshot: the run config it was trained with, the
// dataset's value column names, and every named tensor (parameters, batch-norm
// running statistics, and the train-split standardization stats as
// "data.mean" / "data.std").  Serialized little-endian; a text manifest with
// per-tensor CRC32 checksums is written alongside as "<path>.manifest".
struct Checkpoint {
  RunConfig config;
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order preserved

  const Tensor* find(const std::string& name) const;
};

uint32_t crc32(const void* data, size_t n, uint32_t seed = 0);

void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Reads and structurally validates a checkpoint; when "<path>.manifest"
// exists, every tensor's checksum is verified against it.  Truncation,
// malformed headers, or checksum mismatches raise IoError.
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of the model's current parameters and batch-norm running stats.
Checkpoint make_checkpoint(const RunConfig& cfg, WPMixerModel& model, const Standardization& st,
                           const std::vector<std::string>& columns);

// Writes parameters and running stats back into a freshly constructed model.
// Missing, extra, or misshapen tensors raise IoError naming them.
void restore_model(WPMixerModel& model, const Checkpoint& ck);

// Extracts "data.mean" / "data.std"; IoError when absent.
Standardization restore_standardization(const Checkpoint& ck);

}  // namespace wpmixer
