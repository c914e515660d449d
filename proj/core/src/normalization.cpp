#include "wpmixer/normalization.hpp"

#include "wpmixer/errors.hpp"

namespace wpmixer {

Revin::Revin(std::string prefix, int64_t channels, bool affine, double eps)
    : channels_(channels),
      affine_(affine),
      eps_(eps),
      weight_(prefix + ".weight", Tensor::full({channels}, 1.0)),
      bias_(prefix + ".bias", Tensor({channels})) {}

Val Revin::normalize(Tape& t, Val x, Handle& h) {
  const Tensor& tx = t.val(x);
  if (tx.rank() != 3 || tx.dim(1) != channels_)
    throw DimensionError("revin normalize expects (B, " + std::to_string(channels_) +
                         ", L); got " + shape_str(tx.shape()));
  auto [mu, sigma] = t.instance_stats(x, eps_);
  h.mu = mu;
  h.sigma = sigma;
  h.valid = true;
  Val y = t.standardize(x, mu, sigma);
  if (affine_) y = t.channel_affine(y, t.param(weight_), t.param(bias_));
  return y;
}

Val Revin::denormalize(Tape& t, Val y, const Handle& h) {
  if (!h.valid)
    throw ContractError("revin denormalize called without a prior normalize in this pass");
  const Tensor& ty = t.val(y);
  if (ty.rank() != 3 || ty.dim(1) != channels_)
    throw DimensionError("revin denormalize expects (B, " + std::to_string(channels_) +
                         ", L'); got " + shape_str(ty.shape()));
  Val z = y;
  if (affine_) z = t.channel_affine_inv(z, t.param(weight_), t.param(bias_));
  return t.destandardize(z, h.mu, h.sigma);
}

void Revin::collect(std::vector<Parameter*>& out) {
  if (affine_) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
}

}  // namespace wpmixer
