#include "fet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace fet::ops {

namespace {

struct BroadcastIndex {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

BroadcastIndex make_broadcast(const Shape& a, const Shape& b) {
  BroadcastIndex bi;
  if (a == b) {
    bi.out = a;
    bi.same = true;
    return bi;
  }
  bi.out = broadcast_shape(a, b);
  const std::size_t r = bi.out.size();
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  {
    const auto st = strides_of(a);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != 1) sa[r - a.size() + i] = st[i];
    }
  }
  {
    const auto st = strides_of(b);
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b[i] != 1) sb[r - b.size() + i] = st[i];
    }
  }
  const std::size_t n = numel(bi.out);
  bi.ia.resize(n);
  bi.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    bi.ia[flat] = oa;
    bi.ib[flat] = ob;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < bi.out[ax]) break;
      oa -= sa[ax] * idx[ax];
      ob -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return bi;
}

enum class BinOp { add, sub, mul, div };

Var binary(Var a, Var b, BinOp op) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  auto bi = make_broadcast(a.shape(), b.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  Tensor out(bi.out);
  const std::size_t n = out.size();
  auto ia = [&](std::size_t i) { return bi.same ? i : bi.ia[i]; };
  auto ib = [&](std::size_t i) { return bi.same ? i : bi.ib[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[ia(i)], y = bv[ib(i)];
    switch (op) {
      case BinOp::add: out.data[i] = x + y; break;
      case BinOp::sub: out.data[i] = x - y; break;
      case BinOp::mul: out.data[i] = x * y; break;
      case BinOp::div: out.data[i] = x / y; break;
    }
  }
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, op, bi = std::move(bi)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(aid).data;
    const auto& bv = t.value(bid).data;
    const std::size_t n = g.size();
    auto ia = [&](std::size_t i) { return bi.same ? i : bi.ia[i]; };
    auto ib = [&](std::size_t i) { return bi.same ? i : bi.ib[i]; };
    if (t.needs_grad(aid)) {
      auto& ga = t.grad_accum(aid);
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case BinOp::add:
          case BinOp::sub: ga[ia(i)] += g[i]; break;
          case BinOp::mul: ga[ia(i)] += g[i] * bv[ib(i)]; break;
          case BinOp::div: ga[ia(i)] += g[i] / bv[ib(i)]; break;
        }
      }
    }
    if (t.needs_grad(bid)) {
      auto& gb = t.grad_accum(bid);
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case BinOp::add: gb[ib(i)] += g[i]; break;
          case BinOp::sub: gb[ib(i)] -= g[i]; break;
          case BinOp::mul: gb[ib(i)] += g[i] * av[ia(i)]; break;
          case BinOp::div: {
            const double y = bv[ib(i)];
            gb[ib(i)] -= g[i] * av[ia(i)] / (y * y);
            break;
          }
        }
      }
    }
  });
}

// f maps x -> y; df maps (x, y) -> dy/dx.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const auto& av = a.value().data;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = f(av[i]);
  const auto aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, df](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(aid).data;
    const auto& y = t.value(self).data;
    auto& ga = t.grad_accum(aid);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit axis_split(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_hwc(Var x, const char* what) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(what) + " expects an H x W x C tensor, got " + shape_str(x.shape()));
  }
}

// Linear map along one spatial axis given per-output (index, weight) taps.
struct AxisTaps {
  std::vector<std::vector<std::pair<std::size_t, double>>> taps;  // per output position
};

Var apply_axis_taps(Var x, std::size_t axis, std::size_t out_len, AxisTaps taps) {
  const auto& s = x.shape();
  const auto sp = axis_split(s, axis);
  Shape out_shape = s;
  out_shape[axis] = out_len;
  Tensor out(out_shape);
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t p = 0; p < out_len; ++p) {
      double* dst = &out.data[(o * out_len + p) * sp.inner];
      for (auto [src, w] : taps.taps[p]) {
        const double* from = &xv[(o * sp.len + src) * sp.inner];
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += w * from[i];
      }
    }
  }
  const auto xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, sp, out_len, taps = std::move(taps)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_accum(xid);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t p = 0; p < out_len; ++p) {
        const double* from = &g[(o * out_len + p) * sp.inner];
        for (auto [src, w] : taps.taps[p]) {
          double* dst = &gx[(o * sp.len + src) * sp.inner];
          for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += w * from[i];
        }
      }
    }
  });
}

AxisTaps bilinear_taps(std::size_t in, std::size_t out) {
  AxisTaps t;
  t.taps.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    if (i1 == i0 || frac == 0.0) {
      t.taps[o].emplace_back(i0, 1.0);
    } else {
      t.taps[o].emplace_back(i0, 1.0 - frac);
      t.taps[o].emplace_back(i1, frac);
    }
  }
  return t;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcast-compatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Var add(Var a, Var b) { return binary(a, b, BinOp::add); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::sub); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::mul); }
Var div(Var a, Var b) { return binary(a, b, BinOp::div); }

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var a) {
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(Var a) {
  const auto& av = a.value().data;
  double s = 0.0;
  for (double v : av) s += v;
  const auto aid = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [aid](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_accum(aid)) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var sum_axis(Var a, std::size_t axis, bool keepdim) {
  const auto sp = axis_split(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor out(out_shape);
  const auto& av = a.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t k = 0; k < sp.len; ++k) {
      const double* src = &av[(o * sp.len + k) * sp.inner];
      double* dst = &out.data[o * sp.inner];
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  const auto aid = a.id();
  return a.tape().record(std::move(out), {a}, [aid, sp](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_accum(aid);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t k = 0; k < sp.len; ++k) {
        double* dst = &ga[(o * sp.len + k) * sp.inner];
        const double* src = &g[o * sp.inner];
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var mean_axis(Var a, std::size_t axis, bool keepdim) {
  const double len = static_cast<double>(a.shape().at(axis));
  return scale(sum_axis(a, axis, keepdim), 1.0 / len);
}

Var matmul(Var a, Var b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, p});
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &out.data[i * p];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      const double* brow = &bv[kk * p];
      for (std::size_t j = 0; j < p; ++j) row[j] += aik * brow[j];
    }
  }
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, m, k, p](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(aid).data;
    const auto& bv = t.value(bid).data;
    if (t.needs_grad(aid)) {
      auto& ga = t.grad_accum(aid);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = &g[i * p];
          const double* brow = &bv[kk * p];
          for (std::size_t j = 0; j < p; ++j) s += grow[j] * brow[j];
          ga[i * k + kk] += s;
        }
      }
    }
    if (t.needs_grad(bid)) {
      auto& gb = t.grad_accum(bid);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * p];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = av[i * k + kk];
          double* dst = &gb[kk * p];
          for (std::size_t j = 0; j < p; ++j) dst[j] += aik * grow[j];
        }
      }
    }
  });
}

Var linear(Var x, Var w, std::optional<Var> bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::size_t in = w.dim(0), outc = w.dim(1);
  if (bias && (bias->size() != outc)) {
    throw DimensionError("linear: bias " + shape_str(bias->shape()) + " vs " + std::to_string(outc) + " outputs");
  }
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outc;
  Tensor out(out_shape);
  const auto& xv = x.value().data;
  const auto& wv = w.value().data;
  const double* bv = bias ? bias->value().data.data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = &out.data[r * outc];
    if (bv) std::copy(bv, bv + outc, dst);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xv[r * in + i];
      if (xi == 0.0) continue;
      const double* wrow = &wv[i * outc];
      for (std::size_t j = 0; j < outc; ++j) dst[j] += xi * wrow[j];
    }
  }
  const auto xid = x.id(), wid = w.id();
  const std::optional<std::uint32_t> bid = bias ? std::optional<std::uint32_t>(bias->id()) : std::nullopt;
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [xid, wid, bid, rows, in, outc](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xid).data;
    const auto& wv = t.value(wid).data;
    if (t.needs_grad(xid)) {
      auto& gx = t.grad_accum(xid);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = &g[r * outc];
        for (std::size_t i = 0; i < in; ++i) {
          const double* wrow = &wv[i * outc];
          double s = 0.0;
          for (std::size_t j = 0; j < outc; ++j) s += grow[j] * wrow[j];
          gx[r * in + i] += s;
        }
      }
    }
    if (t.needs_grad(wid)) {
      auto& gw = t.grad_accum(wid);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = &g[r * outc];
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xv[r * in + i];
          if (xi == 0.0) continue;
          double* dst = &gw[i * outc];
          for (std::size_t j = 0; j < outc; ++j) dst[j] += xi * grow[j];
        }
      }
    }
    if (bid && t.needs_grad(*bid)) {
      auto& gb = t.grad_accum(*bid);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < outc; ++j) gb[j] += g[r * outc + j];
      }
    }
  });
}

Var softmax(Var x, std::size_t axis) {
  const auto sp = axis_split(x.shape(), axis);
  Tensor out(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        const double e = std::exp(xv[base + k * sp.inner] - mx);
        out.data[base + k * sp.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k) out.data[base + k * sp.inner] /= s;
    }
  }
  const auto xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, sp](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& gx = t.grad_accum(xid);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.len; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          const std::size_t at = base + k * sp.inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var x, std::size_t axis) {
  const auto sp = axis_split(x.shape(), axis);
  Tensor out(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.len; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) s += std::exp(xv[base + k * sp.inner] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t k = 0; k < sp.len; ++k) out.data[base + k * sp.inner] = xv[base + k * sp.inner] - lse;
    }
  }
  const auto xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, sp](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    auto& gx = t.grad_accum(xid);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.len * sp.inner + i;
        double gs = 0.0;
        for (std::size_t k = 0; k < sp.len; ++k) gs += g[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.len; ++k) {
          const std::size_t at = base + k * sp.inner;
          gx[at] += g[at] - std::exp(y[at]) * gs;
        }
      }
    }
  });
}

Var layernorm(Var x, Var gamma, Var beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layernorm on a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layernorm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " vs feature size " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  const auto& xv = x.value().data;
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  Tensor out(x.shape());
  std::vector<double> xhat(x.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * d];
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * rstd[r];
      out.data[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  const auto xid = x.id(), gid = gamma.id(), bid = beta.id();
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [xid, gid, bid, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t,
                                                                                                 std::uint32_t self) {
                           const auto& g = t.grad(self);
                           const auto& gv = t.value(gid).data;
                           if (t.needs_grad(xid)) {
                             auto& gx = t.grad_accum(xid);
                             for (std::size_t r = 0; r < rows; ++r) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t i = 0; i < d; ++i) {
                                 const double dxh = g[r * d + i] * gv[i];
                                 m1 += dxh;
                                 m2 += dxh * xhat[r * d + i];
                               }
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               for (std::size_t i = 0; i < d; ++i) {
                                 const double dxh = g[r * d + i] * gv[i];
                                 gx[r * d + i] += rstd[r] * (dxh - m1 - xhat[r * d + i] * m2);
                               }
                             }
                           }
                           if (t.needs_grad(gid)) {
                             auto& gg = t.grad_accum(gid);
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
                             }
                           }
                           if (t.needs_grad(bid)) {
                             auto& gb = t.grad_accum(bid);
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
                             }
                           }
                         });
}

Var conv2d(Var x, Var kernel, std::optional<Var> bias, Conv2dOptions opt) {
  require_hwc(x, "conv2d");
  if (kernel.rank() != 4) throw DimensionError("conv2d kernel must be kh x kw x Cin/groups x Cout");
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cig = kernel.dim(2), Cout = kernel.dim(3);
  const std::size_t groups = opt.groups, stride = opt.stride, pad = opt.padding;
  if (groups == 0 || stride == 0 || Cin % groups != 0 || Cout % groups != 0 || Cin / groups != cig) {
    throw DimensionError("conv2d: input channels " + std::to_string(Cin) + ", kernel " + shape_str(kernel.shape()) +
                         " and groups " + std::to_string(groups) + " are inconsistent");
  }
  if (bias && bias->size() != Cout) throw DimensionError("conv2d: bias size differs from output channels");
  if (H + 2 * pad < kh || W + 2 * pad < kw) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  const std::size_t cog = Cout / groups;
  Tensor out({Ho, Wo, Cout});
  const auto& xv = x.value().data;
  const auto& kv = kernel.value().data;
  if (bias) {
    const auto& bv = bias->value().data;
    for (std::size_t p = 0; p < Ho * Wo; ++p) std::copy(bv.begin(), bv.end(), &out.data[p * Cout]);
  }
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* dst = &out.data[(oy * Wo + ox) * Cout];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* src = &xv[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin];
          const double* kbase = &kv[(ky * kw + kx) * cig * Cout];
          for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t ci = 0; ci < cig; ++ci) {
              const double xval = src[g * cig + ci];
              const double* krow = kbase + ci * Cout + g * cog;
              double* d = dst + g * cog;
              for (std::size_t co = 0; co < cog; ++co) d[co] += xval * krow[co];
            }
          }
        }
      }
    }
  }
  const auto xid = x.id(), kid = kernel.id();
  const std::optional<std::uint32_t> bid = bias ? std::optional<std::uint32_t>(bias->id()) : std::nullopt;
  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(
      std::move(out), inputs,
      [=](Tape& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(xid).data;
        const auto& kv = t.value(kid).data;
        const bool want_x = t.needs_grad(xid), want_k = t.needs_grad(kid);
        std::vector<double>* gx = want_x ? &t.grad_accum(xid) : nullptr;
        std::vector<double>* gk = want_k ? &t.grad_accum(kid) : nullptr;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double* go = &g[(oy * Wo + ox) * Cout];
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
                const std::size_t koff = (ky * kw + kx) * cig * Cout;
                for (std::size_t gi = 0; gi < groups; ++gi) {
                  for (std::size_t ci = 0; ci < cig; ++ci) {
                    const std::size_t xi = xoff + gi * cig + ci;
                    const std::size_t kr = koff + ci * Cout + gi * cog;
                    const double* gg = go + gi * cog;
                    if (gx) {
                      double s = 0.0;
                      for (std::size_t co = 0; co < cog; ++co) s += gg[co] * kv[kr + co];
                      (*gx)[xi] += s;
                    }
                    if (gk) {
                      const double xval = xv[xi];
                      for (std::size_t co = 0; co < cog; ++co) (*gk)[kr + co] += xval * gg[co];
                    }
                  }
                }
              }
            }
          }
        }
        if (bid && t.needs_grad(*bid)) {
          auto& gb = t.grad_accum(*bid);
          for (std::size_t p = 0; p < Ho * Wo; ++p) {
            for (std::size_t co = 0; co < Cout; ++co) gb[co] += g[p * Cout + co];
          }
        }
      });
}

Var conv_across_axis(Var x, Var kernel, std::optional<Var> bias, StackMode mode) {
  if (x.rank() != 4 || x.dim(0) != 3) {
    throw DimensionError("conv_across_axis expects a 3 x H x W x C stack, got " + shape_str(x.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2), C = x.dim(3);
  const bool shared = kernel.rank() == 1;
  if (!((shared && kernel.dim(0) == 3) || (kernel.rank() == 2 && kernel.dim(0) == 3 && kernel.dim(1) == C))) {
    throw DimensionError("conv_across_axis kernel must be [3] or [3," + std::to_string(C) + "], got " +
                         shape_str(kernel.shape()));
  }
  if (bias && bias->size() != C) throw DimensionError("conv_across_axis bias must have C entries");
  const std::size_t out_ext = mode == StackMode::fuse ? 1 : 3;
  Tensor out({out_ext, x.dim(1), x.dim(2), C});
  const auto& xv = x.value().data;
  const auto& kv = kernel.value().data;
  auto tap = [&kv, shared, C](std::size_t t, std::size_t c) { return shared ? kv[t] : kv[t * C + c]; };
  // Output slot s reads stack slot s + t - offset.
  const std::ptrdiff_t offset = mode == StackMode::fuse ? 0 : 1;
  for (std::size_t s = 0; s < out_ext; ++s) {
    for (std::size_t t = 0; t < 3; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + t) - offset;
      if (src < 0 || src >= 3) continue;
      for (std::size_t p = 0; p < plane; ++p) {
        double* d = &out.data[(s * plane + p) * C];
        const double* from = &xv[(static_cast<std::size_t>(src) * plane + p) * C];
        for (std::size_t c = 0; c < C; ++c) d[c] += tap(t, c) * from[c];
      }
    }
    if (bias) {
      const auto& bv = bias->value().data;
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < C; ++c) out.data[(s * plane + p) * C + c] += bv[c];
      }
    }
  }
  const auto xid = x.id(), kid = kernel.id();
  const std::optional<std::uint32_t> bid = bias ? std::optional<std::uint32_t>(bias->id()) : std::nullopt;
  std::vector<Var> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return x.tape().record(std::move(out), inputs, [=](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xid).data;
    const auto& kv = t.value(kid).data;
    std::vector<double>* gx = t.needs_grad(xid) ? &t.grad_accum(xid) : nullptr;
    std::vector<double>* gk = t.needs_grad(kid) ? &t.grad_accum(kid) : nullptr;
    for (std::size_t s = 0; s < out_ext; ++s) {
      for (std::size_t tt = 0; tt < 3; ++tt) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + tt) - offset;
        if (src < 0 || src >= 3) continue;
        for (std::size_t p = 0; p < plane; ++p) {
          const double* go = &g[(s * plane + p) * C];
          const std::size_t xo = (static_cast<std::size_t>(src) * plane + p) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t ki = shared ? tt : tt * C + c;
            if (gx) (*gx)[xo + c] += kv[ki] * go[c];
            if (gk) (*gk)[ki] += xv[xo + c] * go[c];
          }
        }
      }
    }
    if (bid && t.needs_grad(*bid)) {
      auto& gb = t.grad_accum(*bid);
      for (std::size_t s = 0; s < out_ext; ++s) {
        for (std::size_t p = 0; p < plane; ++p) {
          for (std::size_t c = 0; c < C; ++c) gb[c] += g[(s * plane + p) * C + c];
        }
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  Tensor out(std::move(shape), x.value().data);
  const auto xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_accum(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var transpose(Var x, std::vector<std::size_t> perm) {
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) throw DimensionError("transpose: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  const auto in_strides = strides_of(s);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[perm[i]];
  const std::size_t n = x.size();
  std::vector<std::size_t> map(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      map[flat] = off;
      for (std::size_t ax = r; ax-- > 0;) {
        ++idx[ax];
        off += src_stride[ax];
        if (idx[ax] < out_shape[ax]) break;
        off -= src_stride[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  }
  Tensor out(out_shape);
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < n; ++i) out.data[i] = xv[map[i]];
  const auto xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, map = std::move(map)](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_accum(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
  });
}

Var transpose2d(Var x) {
  if (x.rank() != 2) throw DimensionError("transpose2d expects rank 2, got " + shape_str(x.shape()));
  return transpose(x, {1, 0});
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[axis] += s[axis];
  }
  const auto sp = axis_split(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> lens;
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    const auto& pv = p.value().data;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(&pv[o * len * sp.inner], len * sp.inner, &out.data[(o * sp.len + at) * sp.inner]);
    }
    at += len;
    ids.push_back(p.id());
    lens.push_back(len);
  }
  return parts.front().tape().record(std::move(out), parts, [sp, ids, lens](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    std::size_t at = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        auto& gp = t.grad_accum(ids[k]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = &g[(o * sp.len + at) * sp.inner];
          double* dst = &gp[o * lens[k] * sp.inner];
          for (std::size_t i = 0; i < lens[k] * sp.inner; ++i) dst[i] += src[i];
        }
      }
      at += lens[k];
    }
  });
}

std::vector<Var> split(Var x, std::size_t axis, const std::vector<std::size_t>& sizes) {
  const auto sp = axis_split(x.shape(), axis);
  std::size_t total = 0;
  for (auto s : sizes) {
    if (s == 0) throw DimensionError("split: zero-sized part");
    total += s;
  }
  if (total != sp.len) {
    throw DimensionError("split sizes sum to " + std::to_string(total) + " but axis extent is " +
                         std::to_string(sp.len));
  }
  std::vector<Var> parts;
  std::size_t at = 0;
  const auto xid = x.id();
  for (auto len : sizes) {
    Shape s = x.shape();
    s[axis] = len;
    Tensor out(s);
    const auto& xv = x.value().data;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(&xv[(o * sp.len + at) * sp.inner], len * sp.inner, &out.data[o * len * sp.inner]);
    }
    parts.push_back(x.tape().record(std::move(out), {x}, [xid, sp, at, len](Tape& t, std::uint32_t self) {
      const auto& g = t.grad(self);
      auto& gx = t.grad_accum(xid);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = &g[o * len * sp.inner];
        double* dst = &gx[(o * sp.len + at) * sp.inner];
        for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
      }
    }));
    at += len;
  }
  return parts;
}

Var flatten_spatial(Var x) {
  require_hwc(x, "flatten_spatial");
  return reshape(x, {x.dim(0) * x.dim(1), x.dim(2)});
}

Var unflatten_spatial(Var x, std::size_t height, std::size_t width) {
  if (x.rank() != 2 || x.dim(0) != height * width) {
    throw DimensionError("unflatten_spatial: " + shape_str(x.shape()) + " is not (" + std::to_string(height) + "*" +
                         std::to_string(width) + ") x C");
  }
  return reshape(x, {height, width, x.dim(1)});
}

Var resample(Var x, Resample mode) {
  require_hwc(x, "resample");
  const std::size_t H = x.dim(0), W = x.dim(1);
  switch (mode) {
    case Resample::down2_avg: {
      if (H % 2 != 0 || W % 2 != 0) {
        throw DimensionError("down2_avg requires even extents, got " + shape_str(x.shape()));
      }
      AxisTaps th, tw;
      th.taps.resize(H / 2);
      for (std::size_t o = 0; o < H / 2; ++o) th.taps[o] = {{2 * o, 0.5}, {2 * o + 1, 0.5}};
      tw.taps.resize(W / 2);
      for (std::size_t o = 0; o < W / 2; ++o) tw.taps[o] = {{2 * o, 0.5}, {2 * o + 1, 0.5}};
      return apply_axis_taps(apply_axis_taps(x, 0, H / 2, std::move(th)), 1, W / 2, std::move(tw));
    }
    case Resample::up2_nearest: {
      AxisTaps th, tw;
      th.taps.resize(2 * H);
      for (std::size_t o = 0; o < 2 * H; ++o) th.taps[o] = {{o / 2, 1.0}};
      tw.taps.resize(2 * W);
      for (std::size_t o = 0; o < 2 * W; ++o) tw.taps[o] = {{o / 2, 1.0}};
      return apply_axis_taps(apply_axis_taps(x, 0, 2 * H, std::move(th)), 1, 2 * W, std::move(tw));
    }
    case Resample::up2_bilinear:
      return resize_bilinear(x, 2 * H, 2 * W);
  }
  throw ContractError("unknown resample mode");
}

Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
  require_hwc(x, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear to an empty extent");
  Var y = apply_axis_taps(x, 0, out_h, bilinear_taps(x.dim(0), out_h));
  return apply_axis_taps(y, 1, out_w, bilinear_taps(x.dim(1), out_w));
}

Var pad_edge(Var x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
  require_hwc(x, "pad_edge");
  const std::size_t H = x.dim(0), W = x.dim(1);
  AxisTaps th, tw;
  for (std::size_t o = 0; o < H + top + bottom; ++o) {
    const auto src = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(top), 0,
                                   static_cast<std::ptrdiff_t>(H) - 1));
    th.taps.push_back({{src, 1.0}});
  }
  for (std::size_t o = 0; o < W + left + right; ++o) {
    const auto src = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(left), 0,
                                   static_cast<std::ptrdiff_t>(W) - 1));
    tw.taps.push_back({{src, 1.0}});
  }
  Var y = apply_axis_taps(x, 0, H + top + bottom, std::move(th));
  return apply_axis_taps(y, 1, W + left + right, std::move(tw));
}

Var crop(Var x, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  require_hwc(x, "crop");
  if (top + height > x.dim(0) || left + width > x.dim(1) || height == 0 || width == 0) {
    throw DimensionError("crop window outside " + shape_str(x.shape()));
  }
  AxisTaps th, tw;
  for (std::size_t o = 0; o < height; ++o) th.taps.push_back({{top + o, 1.0}});
  for (std::size_t o = 0; o < width; ++o) tw.taps.push_back({{left + o, 1.0}});
  Var y = apply_axis_taps(x, 0, height, std::move(th));
  return apply_axis_taps(y, 1, width, std::move(tw));
}

Var blur_separable(Var x, std::span<const double> kernel) {
  require_hwc(x, "blur_separable");
  if (kernel.size() % 2 != 1) throw DimensionError("blur kernel length must be odd");
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  auto taps_for = [&](std::size_t n) {
    AxisTaps t;
    t.taps.resize(n);
    for (std::size_t o = 0; o < n; ++o) {
      for (std::size_t j = 0; j < kernel.size(); ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o) + static_cast<std::ptrdiff_t>(j) - radius;
        const auto clamped =
            static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(src, 0, static_cast<std::ptrdiff_t>(n) - 1));
        t.taps[o].emplace_back(clamped, kernel[j]);
      }
    }
    return t;
  };
  Var y = apply_axis_taps(x, 0, x.dim(0), taps_for(x.dim(0)));
  return apply_axis_taps(y, 1, x.dim(1), taps_for(x.dim(1)));
}

}  // namespace fet::ops
