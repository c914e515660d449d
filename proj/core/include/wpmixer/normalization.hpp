#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wpmixer/tape.hpp"

namespace wpmixer {

// Reversible per-instance normalization over the trailing (time) axis of a
// (B, C, L) tensor, with an optional learnable per-channel affine map.  The
// statistics captured by normalize() are reused by the paired denormalize()
// call, which may act on a different trailing length (the forecast).
class Revin {
 public:
  // Parameter names are <prefix>.weight / <prefix>.bias when affine is on.
  Revin(std::string prefix, int64_t channels, bool affine, double eps = 1e-5);

  // Per-forward statistics; normalize() fills it, denormalize() consumes it.
  struct Handle {
    Val mu, sigma;
    bool valid = false;
  };

  Val normalize(Tape& t, Val x, Handle& h);
  // ContractError when the handle was never filled by normalize().
  Val denormalize(Tape& t, Val y, const Handle& h);

  void collect(std::vector<Parameter*>& out);
  int64_t channels() const { return channels_; }
  bool affine() const { return affine_; }

 private:
  int64_t channels_;
  bool affine_;
  double eps_;
  Parameter weight_, bias_;
};

}  // namespace wpmixer
