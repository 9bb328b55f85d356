#include "fet/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "fet/rng.hpp"

namespace fet {

namespace {
double evaluate(const std::function<Var(Tape&)>& f) {
  Tape tape(Precision::f64);
  return f(tape).value().item();
}
}  // namespace

GradCheckResult grad_check(const std::function<Var(Tape&)>& f, const std::vector<Tensor*>& params,
                           const GradCheckOptions& opt) {
  if (opt.h < 1e-7 || opt.h > 1e-3) throw ConfigError("grad_check step must lie in [1e-7, 1e-3]");
  std::vector<std::vector<double>> analytic;
  double f0 = 0.0;
  {
    Tape tape(Precision::f64);
    Var loss = f(tape);
    f0 = loss.value().item();
    tape.backward(loss);
    for (Tensor* p : params) {
      Var leaf = tape.param(*p);
      const auto& g = tape.grad(leaf);
      analytic.push_back(g.empty() ? std::vector<double>(p->size(), 0.0) : g);
    }
  }

  const double eps = std::numeric_limits<double>::epsilon();
  const double noise = opt.noise_factor * eps * (std::abs(f0) + 1.0) / opt.h;
  Rng rng(opt.seed, 0x6772616463686bULL);
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    std::size_t keep = opt.max_coords_per_param;
    if (opt.sample_fraction > 0) {
      keep = static_cast<std::size_t>(std::ceil(opt.sample_fraction * static_cast<double>(coords.size())));
    }
    if (keep > 0 && coords.size() > keep) {
      rng.shuffle(coords);
      coords.resize(keep);
    }
    for (std::size_t i : coords) {
      const double orig = p.data[i];
      p.data[i] = orig + opt.h;
      const double fp = evaluate(f);
      p.data[i] = orig - opt.h;
      const double fm = evaluate(f);
      p.data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double right = (fp - f0) / opt.h, left = (f0 - fm) / opt.h;
      if (std::abs(right - left) > opt.kink_tol * (1.0 + std::abs(right) + std::abs(left))) {
        ++res.kinks_skipped;
        continue;
      }
      const double a = analytic[pi][i];
      if (std::abs(a) < noise && std::abs(numeric) < noise) {
        ++res.below_noise;
        continue;
      }
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++res.checked;
      if (err > res.max_rel_error || res.worst.empty()) {
        res.max_rel_error = std::max(err, res.max_rel_error);
        res.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace fet
