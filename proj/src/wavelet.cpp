#include "fet/wavelet.hpp"

#include "fet/ops.hpp"

namespace fet::wavelet {

namespace {

void check_source(const Shape& s) {
  if (s.size() != 3) throw DimensionError("dwt2 expects H x W x C, got " + shape_str(s));
  if (s[0] % 2 != 0 || s[1] % 2 != 0) {
    throw DimensionError("dwt2 needs even spatial extents, got " + shape_str(s) +
                         "; pad with edge replication before the transform");
  }
}

// Forward analysis into a 4 x H/2 x W/2 x C stack ordered LL, LH, HL, HH.
void analyze(const double* x, double* stack, std::size_t H, std::size_t W, std::size_t C) {
  const std::size_t h2 = H / 2, w2 = W / 2, band = h2 * w2 * C;
  for (std::size_t i = 0; i < h2; ++i) {
    for (std::size_t j = 0; j < w2; ++j) {
      const double* a = x + ((2 * i) * W + 2 * j) * C;
      const double* b = a + C;
      const double* c = x + ((2 * i + 1) * W + 2 * j) * C;
      const double* d = c + C;
      const std::size_t o = (i * w2 + j) * C;
      for (std::size_t k = 0; k < C; ++k) {
        stack[o + k] = 0.5 * (a[k] + b[k] + c[k] + d[k]);
        stack[band + o + k] = 0.5 * (a[k] + b[k] - c[k] - d[k]);
        stack[2 * band + o + k] = 0.5 * (a[k] - b[k] + c[k] - d[k]);
        stack[3 * band + o + k] = 0.5 * (a[k] - b[k] - c[k] + d[k]);
      }
    }
  }
}

// Exact inverse (and adjoint) of analyze; accumulates into x.
void synthesize_add(const double* stack, double* x, std::size_t H, std::size_t W, std::size_t C) {
  const std::size_t h2 = H / 2, w2 = W / 2, band = h2 * w2 * C;
  for (std::size_t i = 0; i < h2; ++i) {
    for (std::size_t j = 0; j < w2; ++j) {
      double* a = x + ((2 * i) * W + 2 * j) * C;
      double* b = a + C;
      double* c = x + ((2 * i + 1) * W + 2 * j) * C;
      double* d = c + C;
      const std::size_t o = (i * w2 + j) * C;
      for (std::size_t k = 0; k < C; ++k) {
        const double ll = stack[o + k], lh = stack[band + o + k];
        const double hl = stack[2 * band + o + k], hh = stack[3 * band + o + k];
        a[k] += 0.5 * (ll + lh + hl + hh);
        b[k] += 0.5 * (ll + lh - hl - hh);
        c[k] += 0.5 * (ll - lh + hl - hh);
        d[k] += 0.5 * (ll - lh - hl + hh);
      }
    }
  }
}

}  // namespace

SubbandTensors dwt2(const Tensor& x) {
  check_source(x.shape);
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const Shape band{H / 2, W / 2, C};
  std::vector<double> stack(4 * numel(band));
  analyze(x.data.data(), stack.data(), H, W, C);
  const std::size_t n = numel(band);
  auto part = [&](std::size_t k) {
    return Tensor(band, std::vector<double>(stack.begin() + static_cast<std::ptrdiff_t>(k * n),
                                            stack.begin() + static_cast<std::ptrdiff_t>((k + 1) * n)));
  };
  return SubbandTensors{part(0), part(1), part(2), part(3), x.shape};
}

Tensor idwt2(const SubbandTensors& s) {
  const Shape& band = s.ll.shape;
  if (band.size() != 3 || s.lh.shape != band || s.hl.shape != band || s.hh.shape != band) {
    throw DimensionError("idwt2: subband shapes differ: " + shape_str(s.ll.shape) + ", " + shape_str(s.lh.shape) +
                         ", " + shape_str(s.hl.shape) + ", " + shape_str(s.hh.shape));
  }
  const std::size_t H = 2 * band[0], W = 2 * band[1], C = band[2];
  const std::size_t n = numel(band);
  std::vector<double> stack;
  stack.reserve(4 * n);
  for (const Tensor* t : {&s.ll, &s.lh, &s.hl, &s.hh}) stack.insert(stack.end(), t->data.begin(), t->data.end());
  Tensor out({H, W, C});
  synthesize_add(stack.data(), out.data.data(), H, W, C);
  return out;
}

WaveletSubbands dwt2(Var x) {
  check_source(x.shape());
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor stack({4, H / 2, W / 2, C});
  analyze(x.value().data.data(), stack.data.data(), H, W, C);
  const auto xid = x.id();
  Var s = x.tape().record(std::move(stack), {x}, [xid, H, W, C](Tape& t, std::uint32_t self) {
    // Orthonormal: the adjoint is the inverse.
    synthesize_add(t.grad(self).data(), t.grad_accum(xid).data(), H, W, C);
  });
  auto parts = ops::split(s, 0, {1, 1, 1, 1});
  const Shape band{H / 2, W / 2, C};
  return WaveletSubbands{ops::reshape(parts[0], band), ops::reshape(parts[1], band), ops::reshape(parts[2], band),
                         ops::reshape(parts[3], band), x.shape()};
}

Var idwt2(const WaveletSubbands& s) {
  const Shape& band = s.ll.shape();
  if (band.size() != 3 || s.lh.shape() != band || s.hl.shape() != band || s.hh.shape() != band) {
    throw DimensionError("idwt2: subband shapes differ: " + shape_str(s.ll.shape()) + ", " +
                         shape_str(s.lh.shape()) + ", " + shape_str(s.hl.shape()) + ", " + shape_str(s.hh.shape()));
  }
  const std::size_t H = 2 * band[0], W = 2 * band[1], C = band[2];
  const Shape stacked{1, band[0], band[1], C};
  Var stack = ops::concat({ops::reshape(s.ll, stacked), ops::reshape(s.lh, stacked), ops::reshape(s.hl, stacked),
                           ops::reshape(s.hh, stacked)},
                          0);
  Tensor out({H, W, C});
  synthesize_add(stack.value().data.data(), out.data.data(), H, W, C);
  const auto sid = stack.id();
  return stack.tape().record(std::move(out), {stack}, [sid, H, W, C](Tape& t, std::uint32_t self) {
    auto& gs = t.grad_accum(sid);
    std::vector<double> local(gs.size(), 0.0);
    analyze(t.grad(self).data(), local.data(), H, W, C);
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += local[i];
  });
}

}  // namespace fet::wavelet
