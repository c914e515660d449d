#include "wpmixer/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "wpmixer/errors.hpp"
#include "wpmixer/model.hpp"
#include "wpmixer/normalization.hpp"
#include "wpmixer/rng.hpp"
#include "wpmixer/tape.hpp"
#include "wpmixer/tensor.hpp"

namespace wpmixer {

double roundtrip_error(const FilterBank& fb, int64_t len, int level) {
  Rng rng(0x9e3779b97f4a7c15ULL ^ (static_cast<uint64_t>(len) << 8) ^
          static_cast<uint64_t>(level));
  Tensor x({1, 1, len});
  for (int64_t i = 0; i < len; ++i) x.data()[i] = rng.normal();
  Tape t;
  Val v = t.leaf(x);
  std::vector<Val> coeffs = decompose(t, v, fb, level);
  Val back = reconstruct(t, coeffs, fb, len);
  return max_abs_diff(t.val(back), x);
}

double roundtrip_suite(std::ostream* out) {
  const int64_t lengths[] = {96, 336, 512, 1200};
  double worst = 0.0;
  for (const std::string& name : supported_wavelets()) {
    const FilterBank fb = filter_bank(name);
    double bank_worst = 0.0;
    for (int level = 1; level <= 5; ++level)
      for (int64_t len : lengths)
        bank_worst = std::max(bank_worst, roundtrip_error(fb, len, level));
    if (out) {
      char line[96];
      std::snprintf(line, sizeof(line), "  %-8s worst round-trip error %.3e\n", name.c_str(),
                    bank_worst);
      *out << line;
    }
    worst = std::max(worst, bank_worst);
  }
  return worst;
}

GradCheckReport toy_gradient_check(double step) {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.lookback = 32;
  cfg.horizon = 8;
  cfg.wavelet = "db2";
  cfg.level = 1;
  cfg.patch_len = 8;
  cfg.stride = 4;
  cfg.embed_dim = 8;
  cfg.t_factor = 2;
  cfg.d_factor = 2;

  WPMixerModel m(cfg, 42);
  Rng xr(3);
  Tensor x({4, 2, 32}), y({4, 2, 8});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = xr.normal();
  for (int64_t i = 0; i < y.size(); ++i) y.data()[i] = xr.normal() * 0.5;

  auto loss_value = [&]() {
    Tape t;
    Rng r(0);
    Val out = m.forward(t, t.leaf(x), Mode::train, r);
    return t.val(t.smooth_l1(out, t.leaf(y), 1.0)).data()[0];
  };

  for (Parameter* p : m.parameters()) p->zero_grad();
  {
    Tape t;
    Rng r(0);
    Val out = m.forward(t, t.leaf(x), Mode::train, r);
    t.backward(t.smooth_l1(out, t.leaf(y), 1.0));
  }

  GradCheckReport rep;
  for (Parameter* p : m.parameters()) {
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + step;
      const double fp = loss_value();
      p->value.data()[i] = keep - step;
      const double fm = loss_value();
      p->value.data()[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double ga = p->grad.data()[i];
      const double rel = std::fabs(ga - fd) / std::max({std::fabs(ga), std::fabs(fd), 1e-6});
      ++rep.checked;
      if (rel > rep.worst_rel) {
        rep.worst_rel = rel;
        rep.worst_param = p->name;
      }
    }
  }
  return rep;
}

double revin_roundtrip_error() {
  double worst = 0.0;
  for (bool affine : {false, true}) {
    Revin rv("selftest.revin", 3, affine);
    if (affine) {
      // exercise a non-identity affine map
      std::vector<Parameter*> ps;
      rv.collect(ps);
      Rng pr(17);
      for (Parameter* p : ps)
        for (int64_t i = 0; i < p->value.size(); ++i)
          p->value.data()[i] = pr.uniform(0.5, 1.5);
    }
    Rng rng(5);
    Tensor x({2, 3, 16});
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal() * 3.0 + 1.0;
    Tape t;
    Revin::Handle h;
    Val n = rv.normalize(t, t.leaf(x), h);
    Val back = rv.denormalize(t, n, h);
    worst = std::max(worst, max_abs_diff(t.val(back), x));
  }
  return worst;
}

bool run_selftest(std::ostream& out) {
  bool ok = true;
  auto report = [&](const char* name, bool pass, double value, const char* fmt) {
    char line[128];
    std::snprintf(line, sizeof(line), fmt, value);
    out << (pass ? "PASS" : "FAIL") << "  " << name << "  " << line << "\n";
    ok = ok && pass;
  };

  try {
    for (const std::string& name : supported_wavelets()) verify_filter_bank(filter_bank(name));
    out << "PASS  filter-table verification  (all banks)\n";
  } catch (const Error& e) {
    out << "FAIL  filter-table verification  " << e.what() << "\n";
    ok = false;
  }

  const double pr = roundtrip_suite(nullptr);
  report("wavelet round-trip suite", pr < 1e-8, pr, "worst %.3e (< 1e-8)");

  const GradCheckReport g = toy_gradient_check();
  report("toy-model gradient check", g.worst_rel < 1e-4, g.worst_rel, "worst rel %.3e (< 1e-4)");

  const double rr = revin_roundtrip_error();
  report("instance-norm round trip", rr < 1e-9, rr, "worst %.3e (< 1e-9)");

  return ok;
}

}  // namespace wpmixer
