#include "wpmixer/model.hpp"

#include <cmath>

#include "wpmixer/errors.hpp"

namespace wpmixer {

namespace {

std::vector<BranchDims> compute_dims(const ModelConfig& cfg, const FilterBank& fb) {
  std::vector<int64_t> Ls, Ts;
  if (cfg.use_decomposition) {
    Ls = decomposed_lengths(cfg.lookback, fb, cfg.level);
    Ts = decomposed_lengths(cfg.horizon, fb, cfg.level);
  } else {
    Ls = {cfg.lookback};
    Ts = {cfg.horizon};
  }
  std::vector<BranchDims> dims(Ls.size());
  for (size_t i = 0; i < Ls.size(); ++i) {
    BranchDims& d = dims[i];
    d.coeff_len = Ls[i];
    d.target_len = Ts[i];
    if (cfg.use_patching) {
      if (d.coeff_len + cfg.stride < cfg.patch_len)
        throw ConfigError("branch " + std::to_string(i) + ": coefficient length " +
                          std::to_string(d.coeff_len) + " too short for patch_len=" +
                          std::to_string(cfg.patch_len) + " stride=" + std::to_string(cfg.stride));
      d.patch_in = cfg.patch_len;
      d.n_patches = (d.coeff_len + cfg.stride - cfg.patch_len) / cfg.stride + 1;
    } else {
      d.patch_in = d.coeff_len;
      d.n_patches = 1;
    }
    d.embed = cfg.use_embedding ? cfg.embed_dim : d.patch_in;
  }
  return dims;
}

Tensor uniform_init(Shape s, int64_t fan_in, Rng rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

std::vector<BranchDims> model_branch_dims(const ModelConfig& cfg) {
  cfg.validate();
  return compute_dims(cfg, filter_bank(cfg.wavelet));
}

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("channels must be >= 1; got " + std::to_string(channels));
  if (lookback < 1) throw ConfigError("lookback must be >= 1; got " + std::to_string(lookback));
  if (horizon < 1) throw ConfigError("horizon must be >= 1; got " + std::to_string(horizon));
  if (use_patching) {
    if (stride < 1 || patch_len < 1 || stride > patch_len)
      throw ConfigError("patching requires 1 <= stride <= patch_len; got patch_len=" +
                        std::to_string(patch_len) + " stride=" + std::to_string(stride));
  }
  if (use_embedding && embed_dim < 1)
    throw ConfigError("embed_dim must be >= 1; got " + std::to_string(embed_dim));
  if (use_patch_mixer && t_factor < 1)
    throw ConfigError("t_factor must be >= 1; got " + std::to_string(t_factor));
  if (use_embedding_mixer && d_factor < 1)
    throw ConfigError("d_factor must be >= 1; got " + std::to_string(d_factor));
  if (mixer_dropout < 0.0 || mixer_dropout >= 1.0)
    throw ConfigError("mixer_dropout must lie in [0, 1); got " + std::to_string(mixer_dropout));
  if (embed_dropout < 0.0 || embed_dropout >= 1.0)
    throw ConfigError("embed_dropout must lie in [0, 1); got " + std::to_string(embed_dropout));
  FilterBank fb = filter_bank(wavelet);  // ConfigError on unknown name
  if (use_decomposition && level < 1)
    throw ConfigError("decomposition level must be >= 1; got " + std::to_string(level));
  compute_dims(*this, fb);  // depth + patch feasibility for lookback and horizon
}

WPMixerModel::WPMixerModel(ModelConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)),
      bank_(filter_bank(cfg_.wavelet)),
      seeds_{seed},
      outer_revin_("revin", cfg_.channels, /*affine=*/true) {
  cfg_.validate();
  verify_filter_bank(bank_);
  dims_ = compute_dims(cfg_, bank_);

  outer_revin_.collect(registry_);

  auto init_stream = [&](const std::string& name) { return seeds_.stream("init/" + name); };
  auto make_linear = [&](const std::string& prefix, int64_t in, int64_t out,
                         std::unique_ptr<Parameter>& w, std::unique_ptr<Parameter>& b) {
    w = std::make_unique<Parameter>(prefix + ".weight",
                                    uniform_init({in, out}, in, init_stream(prefix + ".weight")));
    b = std::make_unique<Parameter>(prefix + ".bias",
                                    uniform_init({out}, in, init_stream(prefix + ".bias")));
    registry_.push_back(w.get());
    registry_.push_back(b.get());
  };
  auto make_bn = [&](const std::string& prefix, int64_t n, std::unique_ptr<Parameter>& g,
                     std::unique_ptr<Parameter>& b, BatchNormState& s) {
    g = std::make_unique<Parameter>(prefix + ".gamma", Tensor::full({n}, 1.0));
    b = std::make_unique<Parameter>(prefix + ".beta", Tensor({n}));
    registry_.push_back(g.get());
    registry_.push_back(b.get());
    // Preallocated at the conventional 0/1 start so checkpoint restoration
    // can validate shapes; `initialized` stays false until a train step.
    s.running_mean = Tensor(Shape{n});
    s.running_var = Tensor::full(Shape{n}, 1.0);
    s.initialized = false;
  };

  branches_.reserve(dims_.size());
  for (size_t k = 0; k < dims_.size(); ++k) {
    branches_.emplace_back();
    Branch& br = branches_.back();
    br.dims = dims_[k];
    const std::string bp = "branch" + std::to_string(k);
    const int64_t bn_n = cfg_.bn_axis == BnAxis::embedding ? br.dims.embed : cfg_.channels;

    br.revin = std::make_unique<Revin>(bp + ".revin", cfg_.channels, cfg_.inner_revin_affine);
    br.revin->collect(registry_);
    if (cfg_.use_embedding)
      make_linear(bp + ".embed", br.dims.patch_in, br.dims.embed, br.embed_w, br.embed_b);
    for (int j = 0; j < 2; ++j) {
      MixerModule& mm = br.mixer[j];
      const std::string mp = bp + ".mixer" + std::to_string(j + 1);
      if (cfg_.use_patch_mixer) {
        make_bn(mp + ".patch_bn", bn_n, mm.patch_bn_gamma, mm.patch_bn_beta, mm.patch_bn);
        make_linear(mp + ".patch_l1", br.dims.n_patches, br.dims.n_patches * cfg_.t_factor,
                    mm.patch_w1, mm.patch_b1);
        make_linear(mp + ".patch_l2", br.dims.n_patches * cfg_.t_factor, br.dims.n_patches,
                    mm.patch_w2, mm.patch_b2);
      }
      if (cfg_.use_embedding_mixer) {
        make_bn(mp + ".embed_bn", bn_n, mm.embed_bn_gamma, mm.embed_bn_beta, mm.embed_bn);
        make_linear(mp + ".embed_l1", br.dims.embed, br.dims.embed * cfg_.d_factor, mm.embed_w1,
                    mm.embed_b1);
        make_linear(mp + ".embed_l2", br.dims.embed * cfg_.d_factor, br.dims.embed, mm.embed_w2,
                    mm.embed_b2);
      }
    }
    make_bn(bp + ".stack_bn", bn_n, br.stack_bn_gamma, br.stack_bn_beta, br.stack_bn);
    make_linear(bp + ".head", br.dims.n_patches * br.dims.embed, br.dims.target_len, br.head_w,
                br.head_b);
  }
}

Val WPMixerModel::run_mixer(Tape& t, Branch& br, MixerModule& mm, Val x, Mode mode, Rng& rng,
                            const ForwardHooks* hooks) {
  const int ca = cfg_.bn_axis == BnAxis::embedding ? 3 : 1;
  Val cur = x;  // (B, C, N, d)
  if (cfg_.use_patch_mixer) {
    Val bn = t.batch_norm(cur, t.param(*mm.patch_bn_gamma), t.param(*mm.patch_bn_beta),
                          mm.patch_bn, mode, ca);
    Val perm = t.permute(bn, {0, 3, 1, 2});  // (B, d, C, N)
    Val h = t.linear(perm, t.param(*mm.patch_w1), t.param(*mm.patch_b1));
    if (!hooks->identity_gelu) h = t.gelu(h);
    h = t.linear(h, t.param(*mm.patch_w2), t.param(*mm.patch_b2));
    h = t.dropout(h, cfg_.mixer_dropout, mode, rng);
    cur = t.permute(h, {0, 2, 3, 1});  // back to (B, C, N, d); no residual here
  }
  if (cfg_.use_embedding_mixer) {
    Val bn = t.batch_norm(cur, t.param(*mm.embed_bn_gamma), t.param(*mm.embed_bn_beta),
                          mm.embed_bn, mode, ca);
    Val h = t.linear(bn, t.param(*mm.embed_w1), t.param(*mm.embed_b1));
    if (!hooks->identity_gelu) h = t.gelu(h);
    h = t.linear(h, t.param(*mm.embed_w2), t.param(*mm.embed_b2));
    h = t.dropout(h, cfg_.mixer_dropout, mode, rng);
    cur = t.add(bn, h);  // residual from the post-norm tensor
  }
  return cur;
}

Val WPMixerModel::run_branch(Tape& t, Branch& br, int index, Val coeff, Mode mode, Rng& rng,
                             const ForwardHooks* hooks) {
  (void)index;
  Revin::Handle h;
  Val cur = coeff;  // (B, C, L_i)
  if (!hooks->identity_revin) cur = br.revin->normalize(t, cur, h);
  if (cfg_.use_patching) {
    cur = t.patch(cur, cfg_.patch_len, cfg_.stride);
  } else {
    const Tensor& tc = t.val(cur);
    cur = t.reshape(cur, {tc.dim(0), tc.dim(1), 1, tc.dim(2)});  // one whole-series patch
  }
  if (cfg_.use_embedding) {
    cur = t.linear(cur, t.param(*br.embed_w), t.param(*br.embed_b));
    cur = t.dropout(cur, cfg_.embed_dropout, mode, rng);
  }
  // y1 = Mixer(x); y2 = BN(y1 + Mixer(y1))
  Val y1 = run_mixer(t, br, br.mixer[0], cur, mode, rng, hooks);
  Val y2 = run_mixer(t, br, br.mixer[1], y1, mode, rng, hooks);
  const int ca = cfg_.bn_axis == BnAxis::embedding ? 3 : 1;
  Val stacked = t.batch_norm(t.add(y1, y2), t.param(*br.stack_bn_gamma),
                             t.param(*br.stack_bn_beta), br.stack_bn, mode, ca);
  const Tensor& ts = t.val(stacked);
  Val flat = t.reshape(stacked, {ts.dim(0), ts.dim(1), ts.dim(2) * ts.dim(3)});
  Val out = t.linear(flat, t.param(*br.head_w), t.param(*br.head_b));  // (B, C, T_i)
  if (!hooks->identity_revin) out = br.revin->denormalize(t, out, h);
  return out;
}

Val WPMixerModel::forward(Tape& t, Val x, Mode mode, Rng& dropout_rng, const ForwardHooks* hooks) {
  if (!hooks) hooks = &no_hooks_;
  const Tensor& tx = t.val(x);
  if (tx.rank() != 3 || tx.dim(1) != cfg_.channels || tx.dim(2) != cfg_.lookback)
    throw DimensionError("forward expects (B, " + std::to_string(cfg_.channels) + ", " +
                         std::to_string(cfg_.lookback) + "); got " + shape_str(tx.shape()));
  Revin::Handle oh;
  Val cur = x;
  if (!hooks->identity_revin) cur = outer_revin_.normalize(t, cur, oh);
  std::vector<Val> coeffs;
  if (cfg_.use_decomposition) {
    coeffs = decompose(t, cur, bank_, cfg_.level);
  } else {
    coeffs = {cur};
  }
  std::vector<Val> preds;
  preds.reserve(coeffs.size());
  for (size_t k = 0; k < branches_.size(); ++k) {
    try {
      preds.push_back(run_branch(t, branches_[k], static_cast<int>(k), coeffs[k], mode,
                                 dropout_rng, hooks));
    } catch (const DimensionError& e) {
      throw DimensionError("branch " + std::to_string(k) + ": " + e.what());
    }
    if (hooks->branch_outputs) hooks->branch_outputs->push_back(t.val(preds.back()).clone());
  }
  Val out = cfg_.use_decomposition ? reconstruct(t, preds, bank_, cfg_.horizon) : preds[0];
  if (!hooks->identity_revin) out = outer_revin_.denormalize(t, out, oh);
  return out;
}

Tensor WPMixerModel::predict(const Tensor& x) {
  Tape t;
  Rng rng(0);  // eval mode never consumes it
  Val out = forward(t, t.leaf(x), Mode::eval, rng);
  return t.val(out).clone();
}

int64_t WPMixerModel::parameter_count() const {
  int64_t total = 0;
  for (const Parameter* p : registry_) total += p->value.size();
  return total;
}

int64_t WPMixerModel::expected_parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const FilterBank fb = filter_bank(cfg.wavelet);
  const auto dims = compute_dims(cfg, fb);
  const int64_t C = cfg.channels;
  int64_t total = 2 * C;  // outer affine
  for (const BranchDims& d : dims) {
    const int64_t bn = cfg.bn_axis == BnAxis::embedding ? d.embed : C;
    if (cfg.inner_revin_affine) total += 2 * C;
    if (cfg.use_embedding) total += d.patch_in * d.embed + d.embed;
    int64_t module = 0;
    if (cfg.use_patch_mixer) {
      const int64_t hidden = d.n_patches * cfg.t_factor;
      module += 2 * bn + d.n_patches * hidden + hidden + hidden * d.n_patches + d.n_patches;
    }
    if (cfg.use_embedding_mixer) {
      const int64_t hidden = d.embed * cfg.d_factor;
      module += 2 * bn + d.embed * hidden + hidden + hidden * d.embed + d.embed;
    }
    total += 2 * module;
    total += 2 * bn;  // stack norm
    total += d.n_patches * d.embed * d.target_len + d.target_len;  // head
  }
  return total;
}

std::vector<std::pair<std::string, BatchNormState*>> WPMixerModel::bn_states() {
  std::vector<std::pair<std::string, BatchNormState*>> out;
  for (size_t k = 0; k < branches_.size(); ++k) {
    Branch& br = branches_[k];
    const std::string bp = "branch" + std::to_string(k);
    for (int j = 0; j < 2; ++j) {
      const std::string mp = bp + ".mixer" + std::to_string(j + 1);
      if (cfg_.use_patch_mixer) out.emplace_back(mp + ".patch_bn", &br.mixer[j].patch_bn);
      if (cfg_.use_embedding_mixer) out.emplace_back(mp + ".embed_bn", &br.mixer[j].embed_bn);
    }
    out.emplace_back(bp + ".stack_bn", &br.stack_bn);
  }
  return out;
}

}  // namespace wpmixer
