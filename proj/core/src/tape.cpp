#include "wpmixer/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "blas_api.hpp"
#include "wpmixer/errors.hpp"

namespace wpmixer {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

Val Tape::push(Tensor out, bool needs_grad, std::function<void(Tape&, const Tensor&)> back) {
  if (consumed_) throw ContractError("tape already consumed by backward(); reset() first");
  Node n;
  n.out = std::move(out);
  n.needs_grad = needs_grad;
  n.back = needs_grad ? std::move(back) : nullptr;
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Val v) {
  if (!v.ok() || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("invalid tape value handle");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Val v) const {
  if (!v.ok() || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("invalid tape value handle");
  return nodes_[static_cast<size_t>(v.id)];
}

Val Tape::leaf(Tensor t, bool needs_grad) {
  Val v = push(std::move(t), needs_grad, nullptr);
  node(v).is_leaf = true;
  return v;
}

Val Tape::param(Parameter& p) {
  Val v = push(p.value, true, nullptr);
  Node& n = node(v);
  n.is_leaf = true;
  n.bound = &p;
  return v;
}

const Tensor& Tape::val(Val v) const {
  const Node& n = node(v);
  if (!n.out.defined()) throw ContractError("tape value already released by backward()");
  return n.out;
}

const Tensor& Tape::grad_of(Val v) {
  Node& n = node(v);
  if (!n.is_leaf) throw ContractError("grad_of is only available for leaf/parameter nodes");
  if (!n.grad.defined()) n.grad = Tensor(n.out.shape());
  return n.grad;
}

void Tape::add_grad(int id, Tensor&& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad && !n.is_leaf) return;
  if (!n.grad.defined()) {
    n.grad = std::move(g);
  } else {
    blas::axpy(n.grad.size(), 1.0, g.data(), n.grad.data());
  }
}

void Tape::add_grad_accum(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad && !n.is_leaf) return;
  if (!n.grad.defined()) {
    n.grad = g.clone();
  } else {
    blas::axpy(n.grad.size(), 1.0, g.data(), n.grad.data());
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(Val loss, double seed) {
  if (consumed_) throw ContractError("backward called twice; reset() the tape first");
  Node& ln = node(loss);
  if (ln.out.size() != 1)
    throw ContractError("backward requires a scalar loss; got shape " + shape_str(ln.out.shape()));
  consumed_ = true;
  add_grad(loss.id, Tensor::from(ln.out.shape(), {seed}));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.defined()) {
      if (n.back) n.back(*this, n.grad);
      if (n.bound) blas::axpy(n.grad.size(), 1.0, n.grad.data(), n.bound->grad.data());
    }
    if (!n.is_leaf) {
      // Saved closures and interior tensors are dead past this point; the
      // root's value stays readable (training loops log it after backward).
      n.grad = Tensor{};
      if (i != loss.id) n.out = Tensor{};
      n.back = nullptr;
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise / structural
// ---------------------------------------------------------------------------

Val Tape::add(Val a, Val b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_same_shape(ta, tb, "add");
  Tensor out = ta.clone();
  blas::axpy(out.size(), 1.0, tb.data(), out.data());
  bool ng = wants_grad(a) || wants_grad(b);
  int ia = a.id, ib = b.id;
  return push(std::move(out), ng, [ia, ib](Tape& t, const Tensor& gy) {
    t.add_grad_accum(ia, gy);
    t.add_grad_accum(ib, gy);
  });
}

Val Tape::mul(Val a, Val b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_same_shape(ta, tb, "mul");
  Tensor out(ta.shape());
  const double* pa = ta.data();
  const double* pb = tb.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  bool ng = wants_grad(a) || wants_grad(b);
  bool nga = wants_grad(a), ngb = wants_grad(b);
  Tensor sa = ta, sb = tb;
  int ia = a.id, ib = b.id;
  return push(std::move(out), ng, [=](Tape& t, const Tensor& gy) {
    if (nga) {
      Tensor g(sa.shape());
      const double* pg = gy.data();
      const double* pn = sb.data();
      double* pd = g.data();
      for (int64_t i = 0; i < g.size(); ++i) pd[i] = pg[i] * pn[i];
      t.add_grad(ia, std::move(g));
    }
    if (ngb) {
      Tensor g(sb.shape());
      const double* pg = gy.data();
      const double* pn = sa.data();
      double* pd = g.data();
      for (int64_t i = 0; i < g.size(); ++i) pd[i] = pg[i] * pn[i];
      t.add_grad(ib, std::move(g));
    }
  });
}

Val Tape::scale(Val a, double s) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  const double* pa = ta.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * s;
  int ia = a.id;
  return push(std::move(out), wants_grad(a), [ia, s](Tape& t, const Tensor& gy) {
    Tensor g(gy.shape());
    const double* pg = gy.data();
    double* pd = g.data();
    for (int64_t i = 0; i < g.size(); ++i) pd[i] = pg[i] * s;
    t.add_grad(ia, std::move(g));
  });
}

Val Tape::gelu(Val x) {
  const Tensor& tx = val(x);
  const int64_t n = tx.size();
  Tensor out(tx.shape());
  {
    Tensor tmp(tx.shape());
    const double* px = tx.data();
    double* pt = tmp.data();
    for (int64_t i = 0; i < n; ++i) pt[i] = px[i] * kInvSqrt2;
    blas::verf(n, pt, out.data());
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = 0.5 * px[i] * (1.0 + po[i]);
  }
  Tensor sx = tx;
  int ix = x.id;
  return push(std::move(out), wants_grad(x), [sx, ix](Tape& t, const Tensor& gy) {
    const int64_t m = sx.size();
    Tensor g(sx.shape());
    Tensor tmp(sx.shape());
    const double* px = sx.data();
    double* pt = tmp.data();
    double* pd = g.data();
    // Phi(x) into g
    for (int64_t i = 0; i < m; ++i) pt[i] = px[i] * kInvSqrt2;
    blas::verf(m, pt, pd);
    for (int64_t i = 0; i < m; ++i) pd[i] = 0.5 * (1.0 + pd[i]);
    // + x * phi(x), phi via vectorized exp
    for (int64_t i = 0; i < m; ++i) pt[i] = -0.5 * px[i] * px[i];
    blas::vexp(m, pt, pt);
    const double* pg = gy.data();
    for (int64_t i = 0; i < m; ++i) pd[i] = pg[i] * (pd[i] + px[i] * pt[i] * kInvSqrt2Pi);
    t.add_grad(ix, std::move(g));
  });
}

Val Tape::dropout(Val x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must lie in [0, 1); got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;  // exact identity
  const Tensor& tx = val(x);
  const int64_t n = tx.size();
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n));
  const double scale = 1.0 / (1.0 - p);
  Tensor out(tx.shape());
  const double* px = tx.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    uint8_t keep = rng.uniform() >= p ? 1 : 0;
    (*mask)[static_cast<size_t>(i)] = keep;
    po[i] = keep ? px[i] * scale : 0.0;
  }
  int ix = x.id;
  return push(std::move(out), wants_grad(x), [mask, scale, ix](Tape& t, const Tensor& gy) {
    Tensor g(gy.shape());
    const double* pg = gy.data();
    double* pd = g.data();
    for (int64_t i = 0; i < g.size(); ++i)
      pd[i] = (*mask)[static_cast<size_t>(i)] ? pg[i] * scale : 0.0;
    t.add_grad(ix, std::move(g));
  });
}

namespace {
// Permute kernel: out has shape in.shape permuted by axes (out dim k = in dim axes[k]).
Tensor permute_kernel(const Tensor& in, const std::vector<int>& axes) {
  const int r = in.rank();
  Shape oshape(static_cast<size_t>(r));
  for (int k = 0; k < r; ++k) oshape[static_cast<size_t>(k)] = in.dim(axes[static_cast<size_t>(k)]);
  Tensor out(oshape);
  // strides of input
  std::vector<int64_t> istr(static_cast<size_t>(r), 1);
  for (int k = r - 2; k >= 0; --k)
    istr[static_cast<size_t>(k)] = istr[static_cast<size_t>(k + 1)] * in.dim(k + 1);
  // input stride per output axis
  std::vector<int64_t> ostr(static_cast<size_t>(r));
  for (int k = 0; k < r; ++k) ostr[static_cast<size_t>(k)] = istr[static_cast<size_t>(axes[static_cast<size_t>(k)])];
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  const double* pi = in.data();
  double* po = out.data();
  const int64_t n = out.size();
  int64_t src = 0;
  for (int64_t o = 0; o < n; ++o) {
    po[o] = pi[src];
    // odometer increment
    for (int k = r - 1; k >= 0; --k) {
      idx[static_cast<size_t>(k)]++;
      src += ostr[static_cast<size_t>(k)];
      if (idx[static_cast<size_t>(k)] < oshape[static_cast<size_t>(k)]) break;
      src -= ostr[static_cast<size_t>(k)] * oshape[static_cast<size_t>(k)];
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  return out;
}
}  // namespace

Val Tape::permute(Val x, std::vector<int> axes) {
  const Tensor& tx = val(x);
  const int r = tx.rank();
  if (static_cast<int>(axes.size()) != r)
    throw DimensionError("permute: axes count " + std::to_string(axes.size()) + " vs rank " +
                         std::to_string(r));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[static_cast<size_t>(a)])
      throw DimensionError("permute: axes are not a permutation of 0.." + std::to_string(r - 1));
    seen[static_cast<size_t>(a)] = true;
  }
  Tensor out = permute_kernel(tx, axes);
  std::vector<int> inv(static_cast<size_t>(r));
  for (int k = 0; k < r; ++k) inv[static_cast<size_t>(axes[static_cast<size_t>(k)])] = k;
  int ix = x.id;
  return push(std::move(out), wants_grad(x), [inv, ix](Tape& t, const Tensor& gy) {
    t.add_grad(ix, permute_kernel(gy, inv));
  });
}

Val Tape::reshape(Val x, Shape s) {
  const Tensor& tx = val(x);
  Tensor out = tx.reshaped(std::move(s));  // shares the buffer
  Shape xshape = tx.shape();
  int ix = x.id;
  return push(std::move(out), wants_grad(x), [xshape, ix](Tape& t, const Tensor& gy) {
    t.add_grad(ix, gy.reshaped(xshape));
  });
}

Val Tape::sum(Val x) {
  const Tensor& tx = val(x);
  double s = 0.0;
  const double* px = tx.data();
  for (int64_t i = 0; i < tx.size(); ++i) s += px[i];
  Shape xshape = tx.shape();
  int ix = x.id;
  return push(Tensor::from({1}, {s}), wants_grad(x), [xshape, ix](Tape& t, const Tensor& gy) {
    t.add_grad(ix, Tensor::full(xshape, gy.data()[0]));
  });
}

// ---------------------------------------------------------------------------
// dense layers
// ---------------------------------------------------------------------------

Val Tape::linear(Val x, Val w, Val b) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  if (tw.rank() != 2)
    throw DimensionError("linear: weight must be rank 2; got " + shape_str(tw.shape()));
  const int64_t in = tw.dim(0);
  const int64_t out_f = tw.dim(1);
  if (tx.rank() < 1 || tx.dim(tx.rank() - 1) != in)
    throw DimensionError("linear: input " + shape_str(tx.shape()) + " incompatible with weight " +
                         shape_str(tw.shape()));
  if (tb.rank() != 1 || tb.dim(0) != out_f)
    throw DimensionError("linear: bias " + shape_str(tb.shape()) + " incompatible with weight " +
                         shape_str(tw.shape()));
  const int64_t rows = tx.size() / in;
  Shape oshape = tx.shape();
  oshape.back() = out_f;
  Tensor out(oshape);
  blas::gemm_rm(false, false, static_cast<int>(rows), static_cast<int>(out_f), static_cast<int>(in),
                1.0, tx.data(), tw.data(), 0.0, out.data());
  {
    double* po = out.data();
    const double* pb = tb.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < out_f; ++j) po[r * out_f + j] += pb[j];
  }
  Tensor sx = tx, sw = tw;
  const bool ngx = wants_grad(x), ngw = wants_grad(w), ngb = wants_grad(b);
  int ix = x.id, iw = w.id, ib = b.id;
  return push(std::move(out), ngx || ngw || ngb, [=](Tape& t, const Tensor& gy) {
    if (ngx) {
      Tensor gx(sx.shape());
      blas::gemm_rm(false, true, static_cast<int>(rows), static_cast<int>(in),
                    static_cast<int>(out_f), 1.0, gy.data(), sw.data(), 0.0, gx.data());
      t.add_grad(ix, std::move(gx));
    }
    if (ngw) {
      Tensor gw(sw.shape());
      blas::gemm_rm(true, false, static_cast<int>(in), static_cast<int>(out_f),
                    static_cast<int>(rows), 1.0, sx.data(), gy.data(), 0.0, gw.data());
      t.add_grad(iw, std::move(gw));
    }
    if (ngb) {
      Tensor gb(Shape{out_f});
      double* pg = gb.data();
      const double* py = gy.data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < out_f; ++j) pg[j] += py[r * out_f + j];
      t.add_grad(ib, std::move(gb));
    }
  });
}

Val Tape::batch_norm(Val x, Val gamma, Val beta, BatchNormState& state, Mode mode,
                     int channel_axis, double momentum, double eps) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gamma);
  const Tensor& tb = val(beta);
  const int r = tx.rank();
  if (channel_axis < 0 || channel_axis >= r)
    throw DimensionError("batch_norm: channel axis " + std::to_string(channel_axis) +
                         " out of range for rank " + std::to_string(r));
  const int64_t C = tx.dim(channel_axis);
  if (tg.rank() != 1 || tg.dim(0) != C || tb.rank() != 1 || tb.dim(0) != C)
    throw DimensionError("batch_norm: gamma/beta must have shape (" + std::to_string(C) + ")");
  int64_t outer = 1, inner = 1;
  for (int k = 0; k < channel_axis; ++k) outer *= tx.dim(k);
  for (int k = channel_axis + 1; k < r; ++k) inner *= tx.dim(k);
  const int64_t n = outer * inner;  // pooled sample count per channel

  const double* px = tx.data();
  const double* pg = tg.data();
  const double* pb = tb.data();

  if (mode == Mode::train) {
    if (n < 2)
      throw ContractError("batch_norm train mode needs >= 2 pooled samples per channel; got " +
                          std::to_string(n));
    std::vector<double> mean(static_cast<size_t>(C), 0.0), var(static_cast<size_t>(C), 0.0);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t c = 0; c < C; ++c) {
        const double* row = px + (o * C + c) * inner;
        double acc = 0.0;
        for (int64_t i = 0; i < inner; ++i) acc += row[i];
        mean[static_cast<size_t>(c)] += acc;
      }
    for (int64_t c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(n);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t c = 0; c < C; ++c) {
        const double* row = px + (o * C + c) * inner;
        const double m = mean[static_cast<size_t>(c)];
        double acc = 0.0;
        for (int64_t i = 0; i < inner; ++i) {
          const double d = row[i] - m;
          acc += d * d;
        }
        var[static_cast<size_t>(c)] += acc;
      }
    for (int64_t c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= static_cast<double>(n);

    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c)
      (*invstd)[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

    Tensor xhat(tx.shape());
    Tensor out(tx.shape());
    double* ph = xhat.data();
    double* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t c = 0; c < C; ++c) {
        const size_t cs = static_cast<size_t>(c);
        const int64_t base = (o * C + c) * inner;
        const double m = mean[cs], is = (*invstd)[cs], g = pg[cs], bt = pb[cs];
        for (int64_t i = 0; i < inner; ++i) {
          const double h = (px[base + i] - m) * is;
          ph[base + i] = h;
          po[base + i] = g * h + bt;
        }
      }

    // Running stats: biased batch variance is rescaled to the unbiased form
    // for the running buffer (the usual library convention).
    if (!state.initialized) {
      if (state.running_mean.size() != C) state.running_mean = Tensor(Shape{C});
      if (state.running_var.size() != C) state.running_var = Tensor::full(Shape{C}, 1.0);
      state.initialized = true;
    }
    double* rm = state.running_mean.data();
    double* rv = state.running_var.data();
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (int64_t c = 0; c < C; ++c) {
      const size_t cs = static_cast<size_t>(c);
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mean[cs];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * var[cs] * unbias;
    }

    Tensor sg = tg;
    const bool ngx = wants_grad(x), ngg = wants_grad(gamma), ngb = wants_grad(beta);
    int ix = x.id, ig = gamma.id, ib = beta.id;
    return push(std::move(out), ngx || ngg || ngb,
                [=, xh = std::move(xhat)](Tape& t, const Tensor& gy) {
      const double* py = gy.data();
      const double* phh = xh.data();
      std::vector<double> sum_gy(static_cast<size_t>(C), 0.0), sum_gyh(static_cast<size_t>(C), 0.0);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (o * C + c) * inner;
          double a = 0.0, bsum = 0.0;
          for (int64_t i = 0; i < inner; ++i) {
            a += py[base + i];
            bsum += py[base + i] * phh[base + i];
          }
          sum_gy[static_cast<size_t>(c)] += a;
          sum_gyh[static_cast<size_t>(c)] += bsum;
        }
      if (ngx) {
        Tensor gx(xh.shape());
        double* pd = gx.data();
        const double* pgv = sg.data();
        const double dn = static_cast<double>(n);
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t c = 0; c < C; ++c) {
            const size_t cs = static_cast<size_t>(c);
            const int64_t base = (o * C + c) * inner;
            const double k1 = sum_gy[cs] / dn, k2 = sum_gyh[cs] / dn;
            const double gis = pgv[cs] * (*invstd)[cs];
            for (int64_t i = 0; i < inner; ++i)
              pd[base + i] = gis * (py[base + i] - k1 - phh[base + i] * k2);
          }
        t.add_grad(ix, std::move(gx));
      }
      if (ngg) {
        Tensor gg(Shape{C});
        for (int64_t c = 0; c < C; ++c) gg.data()[c] = sum_gyh[static_cast<size_t>(c)];
        t.add_grad(ig, std::move(gg));
      }
      if (ngb) {
        Tensor gb(Shape{C});
        for (int64_t c = 0; c < C; ++c) gb.data()[c] = sum_gy[static_cast<size_t>(c)];
        t.add_grad(ib, std::move(gb));
      }
    });
  }

  // eval mode
  if (!state.initialized)
    throw ContractError("batch_norm eval mode before any train-mode update (uninitialized stats)");
  const double* rm = state.running_mean.data();
  const double* rv = state.running_var.data();
  auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  auto rmean = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    (*invstd)[static_cast<size_t>(c)] = 1.0 / std::sqrt(rv[c] + eps);
    (*rmean)[static_cast<size_t>(c)] = rm[c];
  }
  Tensor out(tx.shape());
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t c = 0; c < C; ++c) {
      const size_t cs = static_cast<size_t>(c);
      const int64_t base = (o * C + c) * inner;
      const double m = (*rmean)[cs], is = (*invstd)[cs], g = pg[cs], bt = pb[cs];
      for (int64_t i = 0; i < inner; ++i) po[base + i] = g * (px[base + i] - m) * is + bt;
    }
  Tensor sx = tx, sg = tg;
  const bool ngx = wants_grad(x), ngg = wants_grad(gamma), ngb = wants_grad(beta);
  int ix = x.id, ig = gamma.id, ib = beta.id;
  return push(std::move(out), ngx || ngg || ngb, [=](Tape& t, const Tensor& gy) {
    const double* py = gy.data();
    const double* pxx = sx.data();
    const double* pgv = sg.data();
    Tensor gx;
    double* pd = nullptr;
    if (ngx) {
      gx = Tensor(sx.shape());
      pd = gx.data();
    }
    std::vector<double> sum_gy(static_cast<size_t>(C), 0.0), sum_gyh(static_cast<size_t>(C), 0.0);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t c = 0; c < C; ++c) {
        const size_t cs = static_cast<size_t>(c);
        const int64_t base = (o * C + c) * inner;
        const double m = (*rmean)[cs], is = (*invstd)[cs];
        double a = 0.0, bsum = 0.0;
        for (int64_t i = 0; i < inner; ++i) {
          const double gyv = py[base + i];
          a += gyv;
          bsum += gyv * (pxx[base + i] - m) * is;
          if (pd) pd[base + i] = gyv * pgv[cs] * is;
        }
        sum_gy[cs] += a;
        sum_gyh[cs] += bsum;
      }
    if (ngx) t.add_grad(ix, std::move(gx));
    if (ngg) {
      Tensor gg(Shape{C});
      for (int64_t c = 0; c < C; ++c) gg.data()[c] = sum_gyh[static_cast<size_t>(c)];
      t.add_grad(ig, std::move(gg));
    }
    if (ngb) {
      Tensor gb(Shape{C});
      for (int64_t c = 0; c < C; ++c) gb.data()[c] = sum_gy[static_cast<size_t>(c)];
      t.add_grad(ib, std::move(gb));
    }
  });
}

// ---------------------------------------------------------------------------
// patching
// ---------------------------------------------------------------------------

Val Tape::patch(Val x, int64_t P, int64_t S) {
  const Tensor& tx = val(x);
  if (tx.rank() != 3)
    throw DimensionError("patch expects (B, C, L); got " + shape_str(tx.shape()));
  const int64_t B = tx.dim(0), C = tx.dim(1), L = tx.dim(2);
  if (P < 1 || S < 1 || S > P)
    throw ConfigError("patch requires 1 <= stride <= patch_len; got P=" + std::to_string(P) +
                      " S=" + std::to_string(S));
  if (L + S < P)
    throw ConfigError("series length " + std::to_string(L) + " too short for patch P=" +
                      std::to_string(P) + " S=" + std::to_string(S));
  const int64_t N = (L + S - P) / S + 1;
  Tensor out(Shape{B, C, N, P});
  const double* px = tx.data();
  double* po = out.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double* row = px + (b * C + c) * L;
      double* orow = po + ((b * C + c) * N) * P;
      for (int64_t nn = 0; nn < N; ++nn)
        for (int64_t p = 0; p < P; ++p) {
          int64_t src = nn * S + p;
          orow[nn * P + p] = row[src < L ? src : L - 1];
        }
    }
  int ix = x.id;
  return push(std::move(out), wants_grad(x), [=](Tape& t, const Tensor& gy) {
    Tensor gx(Shape{B, C, L});
    const double* py = gy.data();
    double* pd = gx.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        double* row = pd + (b * C + c) * L;
        const double* yrow = py + ((b * C + c) * N) * P;
        for (int64_t nn = 0; nn < N; ++nn)
          for (int64_t p = 0; p < P; ++p) {
            int64_t src = nn * S + p;
            row[src < L ? src : L - 1] += yrow[nn * P + p];
          }
      }
    t.add_grad(ix, std::move(gx));
  });
}

// ---------------------------------------------------------------------------
// filter-bank transforms
// ---------------------------------------------------------------------------

std::pair<Val, Val> Tape::analysis_conv(Val x, const std::vector<double>& lo,
                                        const std::vector<double>& hi) {
  const Tensor& tx = val(x);
  if (tx.rank() < 1 || tx.dim(tx.rank() - 1) < 1)
    throw ContractError("analysis_conv on empty input");
  if (lo.size() != hi.size() || lo.empty())
    throw ContractError("analysis_conv: filter lengths differ or are zero");
  const int64_t L = tx.dim(tx.rank() - 1);
  const int64_t F = static_cast<int64_t>(lo.size());
  const int64_t rows = tx.size() / L;
  const int64_t Lc = (L + F - 1) / 2;
  Shape oshape = tx.shape();
  oshape.back() = Lc;

  auto run = [&](const std::vector<double>& f) {
    Tensor out(oshape);
    const double* px = tx.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* xr = px + r * L;
      double* yr = po + r * Lc;
      for (int64_t i = 0; i < Lc; ++i) {
        const int64_t center = 2 * i + 1;
        double acc = 0.0;
        const int64_t jlo = std::max<int64_t>(0, center - (L - 1));
        const int64_t jhi = std::min<int64_t>(F - 1, center);
        for (int64_t j = jlo; j <= jhi; ++j) acc += f[static_cast<size_t>(j)] * xr[center - j];
        yr[i] = acc;
      }
    }
    return out;
  };

  Tensor a = run(lo);
  Tensor d = run(hi);
  const bool ng = wants_grad(x);
  int ix = x.id;
  Shape xshape = tx.shape();
  auto make_back = [=](std::vector<double> f) {
    return [=](Tape& t, const Tensor& gy) {
      Tensor gx(xshape);
      const double* py = gy.data();
      double* pd = gx.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* yr = py + r * Lc;
        double* xr = pd + r * L;
        for (int64_t i = 0; i < Lc; ++i) {
          const int64_t center = 2 * i + 1;
          const int64_t jlo = std::max<int64_t>(0, center - (L - 1));
          const int64_t jhi = std::min<int64_t>(F - 1, center);
          const double g = yr[i];
          for (int64_t j = jlo; j <= jhi; ++j) xr[center - j] += f[static_cast<size_t>(j)] * g;
        }
      }
      t.add_grad(ix, std::move(gx));
    };
  };
  Val va = push(std::move(a), ng, make_back(lo));
  Val vd = push(std::move(d), ng, make_back(hi));
  return {va, vd};
}

Val Tape::synthesis_conv(Val a, Val d, const std::vector<double>& rec_lo,
                         const std::vector<double>& rec_hi, int64_t target_len) {
  const Tensor& ta = val(a);
  const Tensor& td = val(d);
  require_same_shape(ta, td, "synthesis_conv");
  if (rec_lo.size() != rec_hi.size() || rec_lo.empty())
    throw ContractError("synthesis_conv: filter lengths differ or are zero");
  const int64_t Lc = ta.dim(ta.rank() - 1);
  const int64_t F = static_cast<int64_t>(rec_lo.size());
  const int64_t rows = ta.size() / Lc;
  if (target_len < 1 || target_len > 2 * Lc)
    throw ContractError("synthesis_conv: target length " + std::to_string(target_len) +
                        " incompatible with coefficient length " + std::to_string(Lc));
  const int64_t off = F - 2;
  Shape oshape = ta.shape();
  oshape.back() = target_len;
  Tensor out(oshape);
  {
    std::vector<double> full(static_cast<size_t>(2 * Lc + F - 2), 0.0);
    const double* pa = ta.data();
    const double* pd = td.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      std::fill(full.begin(), full.end(), 0.0);
      const double* ar = pa + r * Lc;
      const double* dr = pd + r * Lc;
      for (int64_t i = 0; i < Lc; ++i) {
        const double av = ar[i], dv = dr[i];
        double* base = full.data() + 2 * i;
        for (int64_t j = 0; j < F; ++j)
          base[j] += av * rec_lo[static_cast<size_t>(j)] + dv * rec_hi[static_cast<size_t>(j)];
      }
      double* yr = po + r * target_len;
      for (int64_t tpos = 0; tpos < target_len; ++tpos) yr[tpos] = full[static_cast<size_t>(off + tpos)];
    }
  }
  const bool nga = wants_grad(a), ngd = wants_grad(d);
  int ia = a.id, id_ = d.id;
  Shape cshape = ta.shape();
  auto back_one = [=](const std::vector<double>& f, const Tensor& gy) {
    Tensor g(cshape);
    const double* py = gy.data();
    double* pd = g.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = py + r * target_len;
      double* cr = pd + r * Lc;
      for (int64_t i = 0; i < Lc; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < F; ++j) {
          const int64_t tpos = 2 * i + j - off;
          if (tpos >= 0 && tpos < target_len) acc += f[static_cast<size_t>(j)] * yr[tpos];
        }
        cr[i] = acc;
      }
    }
    return g;
  };
  return push(std::move(out), nga || ngd,
              [=, lo = rec_lo, hi = rec_hi](Tape& t, const Tensor& gy) {
    if (nga) t.add_grad(ia, back_one(lo, gy));
    if (ngd) t.add_grad(id_, back_one(hi, gy));
  });
}

// ---------------------------------------------------------------------------
// per-instance statistics and affine maps
// ---------------------------------------------------------------------------

std::pair<Val, Val> Tape::instance_stats(Val x, double eps) {
  const Tensor& tx = val(x);
  if (tx.rank() < 2)
    throw DimensionError("instance_stats expects rank >= 2; got " + shape_str(tx.shape()));
  const int64_t L = tx.dim(tx.rank() - 1);
  const int64_t rows = tx.size() / L;
  Shape sshape(tx.shape().begin(), tx.shape().end() - 1);
  Tensor mu(sshape), sigma(sshape);
  const double* px = tx.data();
  double* pm = mu.data();
  double* ps = sigma.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * L;
    double m = 0.0;
    for (int64_t l = 0; l < L; ++l) m += row[l];
    m /= static_cast<double>(L);
    double v = 0.0;
    for (int64_t l = 0; l < L; ++l) {
      const double dd = row[l] - m;
      v += dd * dd;
    }
    v /= static_cast<double>(L);
    pm[r] = m;
    ps[r] = std::sqrt(v + eps);
  }
  const bool ng = wants_grad(x);
  int ix = x.id;
  Tensor sx = tx, smu = mu, ssg = sigma;
  Shape xshape = tx.shape();
  Val vmu = push(std::move(mu), ng, [=](Tape& t, const Tensor& gy) {
    Tensor gx(xshape);
    const double* py = gy.data();
    double* pd = gx.data();
    const double invL = 1.0 / static_cast<double>(L);
    for (int64_t r = 0; r < rows; ++r) {
      const double g = py[r] * invL;
      double* row = pd + r * L;
      for (int64_t l = 0; l < L; ++l) row[l] = g;
    }
    t.add_grad(ix, std::move(gx));
  });
  Val vsg = push(std::move(sigma), ng, [=](Tape& t, const Tensor& gy) {
    Tensor gx(xshape);
    const double* py = gy.data();
    const double* pxx = sx.data();
    const double* pmm = smu.data();
    const double* pss = ssg.data();
    double* pd = gx.data();
    const double invL = 1.0 / static_cast<double>(L);
    for (int64_t r = 0; r < rows; ++r) {
      const double g = py[r] * invL / pss[r];
      const double m = pmm[r];
      const double* row = pxx + r * L;
      double* grow = pd + r * L;
      for (int64_t l = 0; l < L; ++l) grow[l] = g * (row[l] - m);
    }
    t.add_grad(ix, std::move(gx));
  });
  return {vmu, vsg};
}

namespace {
void check_stat_shapes(const Tensor& x, const Tensor& mu, const Tensor& sigma, const char* op) {
  if (x.rank() < 2) throw DimensionError(std::string(op) + " expects rank >= 2 input");
  const int64_t rows = x.size() / x.dim(x.rank() - 1);
  if (mu.size() != rows || sigma.size() != rows)
    throw DimensionError(std::string(op) + ": stats cover " + std::to_string(mu.size()) +
                         " rows but input has " + std::to_string(rows));
}
}  // namespace

Val Tape::standardize(Val x, Val mu, Val sigma) {
  const Tensor& tx = val(x);
  const Tensor& tm = val(mu);
  const Tensor& ts = val(sigma);
  check_stat_shapes(tx, tm, ts, "standardize");
  const int64_t L = tx.dim(tx.rank() - 1);
  const int64_t rows = tx.size() / L;
  Tensor out(tx.shape());
  {
    const double* px = tx.data();
    const double* pm = tm.data();
    const double* ps = ts.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double m = pm[r], inv = 1.0 / ps[r];
      const double* row = px + r * L;
      double* orow = po + r * L;
      for (int64_t l = 0; l < L; ++l) orow[l] = (row[l] - m) * inv;
    }
  }
  const bool ngx = wants_grad(x), ngm = wants_grad(mu), ngs = wants_grad(sigma);
  int ix = x.id, im = mu.id, is = sigma.id;
  Tensor sy = out, ss = ts;
  return push(std::move(out), ngx || ngm || ngs, [=](Tape& t, const Tensor& gy) {
    const double* py = gy.data();
    const double* ps = ss.data();
    const double* pyv = sy.data();
    if (ngx) {
      Tensor gx(sy.shape());
      double* pd = gx.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double inv = 1.0 / ps[r];
        for (int64_t l = 0; l < L; ++l) pd[r * L + l] = py[r * L + l] * inv;
      }
      t.add_grad(ix, std::move(gx));
    }
    if (ngm) {
      Tensor gm(ss.shape());
      double* pd = gm.data();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t l = 0; l < L; ++l) acc += py[r * L + l];
        pd[r] = -acc / ps[r];
      }
      t.add_grad(im, std::move(gm));
    }
    if (ngs) {
      Tensor gs(ss.shape());
      double* pd = gs.data();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t l = 0; l < L; ++l) acc += py[r * L + l] * pyv[r * L + l];
        pd[r] = -acc / ps[r];
      }
      t.add_grad(is, std::move(gs));
    }
  });
}

Val Tape::destandardize(Val y, Val mu, Val sigma) {
  const Tensor& ty = val(y);
  const Tensor& tm = val(mu);
  const Tensor& ts = val(sigma);
  check_stat_shapes(ty, tm, ts, "destandardize");
  const int64_t L = ty.dim(ty.rank() - 1);
  const int64_t rows = ty.size() / L;
  Tensor out(ty.shape());
  {
    const double* py = ty.data();
    const double* pm = tm.data();
    const double* ps = ts.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double m = pm[r], s = ps[r];
      for (int64_t l = 0; l < L; ++l) po[r * L + l] = py[r * L + l] * s + m;
    }
  }
  const bool ngy = wants_grad(y), ngm = wants_grad(mu), ngs = wants_grad(sigma);
  int iy = y.id, im = mu.id, is = sigma.id;
  Tensor sy = ty, ss = ts;
  return push(std::move(out), ngy || ngm || ngs, [=](Tape& t, const Tensor& gy) {
    const double* pg = gy.data();
    const double* ps = ss.data();
    const double* pyv = sy.data();
    if (ngy) {
      Tensor g(sy.shape());
      double* pd = g.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double s = ps[r];
        for (int64_t l = 0; l < L; ++l) pd[r * L + l] = pg[r * L + l] * s;
      }
      t.add_grad(iy, std::move(g));
    }
    if (ngm) {
      Tensor gm(ss.shape());
      double* pd = gm.data();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t l = 0; l < L; ++l) acc += pg[r * L + l];
        pd[r] = acc;
      }
      t.add_grad(im, std::move(gm));
    }
    if (ngs) {
      Tensor gs(ss.shape());
      double* pd = gs.data();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t l = 0; l < L; ++l) acc += pg[r * L + l] * pyv[r * L + l];
        pd[r] = acc;
      }
      t.add_grad(is, std::move(gs));
    }
  });
}

namespace {
void check_channel_affine(const Tensor& x, const Tensor& w, const Tensor& b, const char* op) {
  if (x.rank() < 2) throw DimensionError(std::string(op) + " expects rank >= 2 input");
  const int64_t C = x.dim(1);
  if (w.rank() != 1 || w.dim(0) != C || b.rank() != 1 || b.dim(0) != C)
    throw DimensionError(std::string(op) + ": weight/bias must have shape (" + std::to_string(C) +
                         "); got " + shape_str(w.shape()) + " / " + shape_str(b.shape()));
}
}  // namespace

Val Tape::channel_affine(Val x, Val w, Val b) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  check_channel_affine(tx, tw, tb, "channel_affine");
  const int64_t B = tx.dim(0), C = tx.dim(1);
  const int64_t inner = tx.size() / (B * C);
  Tensor out(tx.shape());
  {
    const double* px = tx.data();
    const double* pw = tw.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t c = 0; c < C; ++c) {
        const int64_t base = (bb * C + c) * inner;
        const double wv = pw[c], bv = pb[c];
        for (int64_t i = 0; i < inner; ++i) po[base + i] = wv * px[base + i] + bv;
      }
  }
  const bool ngx = wants_grad(x), ngw = wants_grad(w), ngb = wants_grad(b);
  int ix = x.id, iw = w.id, ib = b.id;
  Tensor sx = tx, sw = tw;
  return push(std::move(out), ngx || ngw || ngb, [=](Tape& t, const Tensor& gy) {
    const double* pg = gy.data();
    const double* pw = sw.data();
    const double* px = sx.data();
    if (ngx) {
      Tensor gx(sx.shape());
      double* pd = gx.data();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (bb * C + c) * inner;
          const double wv = pw[c];
          for (int64_t i = 0; i < inner; ++i) pd[base + i] = pg[base + i] * wv;
        }
      t.add_grad(ix, std::move(gx));
    }
    if (ngw) {
      Tensor gw(Shape{C});
      double* pd = gw.data();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (bb * C + c) * inner;
          double acc = 0.0;
          for (int64_t i = 0; i < inner; ++i) acc += pg[base + i] * px[base + i];
          pd[c] += acc;
        }
      t.add_grad(iw, std::move(gw));
    }
    if (ngb) {
      Tensor gb(Shape{C});
      double* pd = gb.data();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (bb * C + c) * inner;
          double acc = 0.0;
          for (int64_t i = 0; i < inner; ++i) acc += pg[base + i];
          pd[c] += acc;
        }
      t.add_grad(ib, std::move(gb));
    }
  });
}

Val Tape::channel_affine_inv(Val y, Val w, Val b) {
  const Tensor& ty = val(y);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  check_channel_affine(ty, tw, tb, "channel_affine_inv");
  const int64_t B = ty.dim(0), C = ty.dim(1);
  const int64_t inner = ty.size() / (B * C);
  Tensor out(ty.shape());
  {
    const double* py = ty.data();
    const double* pw = tw.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (int64_t bb = 0; bb < B; ++bb)
      for (int64_t c = 0; c < C; ++c) {
        const int64_t base = (bb * C + c) * inner;
        const double inv = 1.0 / pw[c], bv = pb[c];
        for (int64_t i = 0; i < inner; ++i) po[base + i] = (py[base + i] - bv) * inv;
      }
  }
  const bool ngy = wants_grad(y), ngw = wants_grad(w), ngb = wants_grad(b);
  int iy = y.id, iw = w.id, ib = b.id;
  Tensor so = out, sw = tw;
  return push(std::move(out), ngy || ngw || ngb, [=](Tape& t, const Tensor& gy) {
    const double* pg = gy.data();
    const double* pw = sw.data();
    const double* pov = so.data();
    if (ngy) {
      Tensor g(so.shape());
      double* pd = g.data();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (bb * C + c) * inner;
          const double inv = 1.0 / pw[c];
          for (int64_t i = 0; i < inner; ++i) pd[base + i] = pg[base + i] * inv;
        }
      t.add_grad(iy, std::move(g));
    }
    if (ngw) {
      Tensor gw(Shape{C});
      double* pd = gw.data();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (bb * C + c) * inner;
          const double inv = 1.0 / pw[c];
          double acc = 0.0;
          for (int64_t i = 0; i < inner; ++i) acc += pg[base + i] * pov[base + i];
          pd[c] += -acc * inv;
        }
      t.add_grad(iw, std::move(gw));
    }
    if (ngb) {
      Tensor gb(Shape{C});
      double* pd = gb.data();
      for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (bb * C + c) * inner;
          const double inv = 1.0 / pw[c];
          double acc = 0.0;
          for (int64_t i = 0; i < inner; ++i) acc += pg[base + i];
          pd[c] += -acc * inv;
        }
      t.add_grad(ib, std::move(gb));
    }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Val Tape::smooth_l1(Val pred, Val target, double beta) {
  if (beta <= 0.0) throw ConfigError("smooth_l1 threshold must be positive");
  const Tensor& tp = val(pred);
  const Tensor& tt = val(target);
  if (!tp.same_shape(tt))
    throw ContractError("smooth_l1: shape mismatch " + shape_str(tp.shape()) + " vs " +
                        shape_str(tt.shape()));
  const int64_t n = tp.size();
  Tensor e(tp.shape());
  double acc = 0.0;
  {
    const double* pp = tp.data();
    const double* pt = tt.data();
    double* pe = e.data();
    for (int64_t i = 0; i < n; ++i) {
      const double d = pp[i] - pt[i];
      pe[i] = d;
      const double a = std::fabs(d);
      acc += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
    }
  }
  const bool ngp = wants_grad(pred), ngt = wants_grad(target);
  int ip = pred.id, it = target.id;
  return push(Tensor::from({1}, {acc / static_cast<double>(n)}), ngp || ngt,
              [=, se = std::move(e)](Tape& t, const Tensor& gy) {
    const double g = gy.data()[0] / static_cast<double>(n);
    const double* pe = se.data();
    auto fill = [&](double sign) {
      Tensor gr(se.shape());
      double* pd = gr.data();
      for (int64_t i = 0; i < n; ++i) {
        const double d = pe[i];
        pd[i] = sign * g * (std::fabs(d) < beta ? d / beta : (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)));
      }
      return gr;
    };
    if (ngp) t.add_grad(ip, fill(1.0));
    if (ngt) t.add_grad(it, fill(-1.0));
  });
}

Val Tape::mse(Val pred, Val target) {
  const Tensor& tp = val(pred);
  const Tensor& tt = val(target);
  if (!tp.same_shape(tt))
    throw ContractError("mse: shape mismatch " + shape_str(tp.shape()) + " vs " +
                        shape_str(tt.shape()));
  const int64_t n = tp.size();
  Tensor e(tp.shape());
  double acc = 0.0;
  {
    const double* pp = tp.data();
    const double* pt = tt.data();
    double* pe = e.data();
    for (int64_t i = 0; i < n; ++i) {
      const double d = pp[i] - pt[i];
      pe[i] = d;
      acc += d * d;
    }
  }
  const bool ngp = wants_grad(pred), ngt = wants_grad(target);
  int ip = pred.id, it = target.id;
  return push(Tensor::from({1}, {acc / static_cast<double>(n)}), ngp || ngt,
              [=, se = std::move(e)](Tape& t, const Tensor& gy) {
    const double g = 2.0 * gy.data()[0] / static_cast<double>(n);
    const double* pe = se.data();
    auto fill = [&](double sign) {
      Tensor gr(se.shape());
      double* pd = gr.data();
      for (int64_t i = 0; i < n; ++i) pd[i] = sign * g * pe[i];
      return gr;
    };
    if (ngp) t.add_grad(ip, fill(1.0));
    if (ngt) t.add_grad(it, fill(-1.0));
  });
}

}  // namespace wpmixer
