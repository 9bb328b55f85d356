#include "fet/attention.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>

#include "fet/init.hpp"
#include "fet/ops.hpp"

namespace fet::attention {

using namespace fet::ops;

void AttentionParams::validate() const {
  const std::size_t d = dim();
  if (num_heads == 0 || d == 0 || d % num_heads != 0) {
    throw ConfigError("attention dim " + std::to_string(d) + " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  }
  for (const Tensor* w : {&wq, &wk, &wv, &wo}) {
    if (w->shape != Shape{d, d}) throw DimensionError("attention weights must be D x D, got " + shape_str(w->shape));
    if (!w->all_finite()) throw ConfigError("attention weights contain non-finite values");
  }
}

AttentionParams init_attention(std::size_t dim, std::size_t num_heads, Rng& rng, double stddev, bool zero_output) {
  AttentionParams p;
  p.num_heads = num_heads;
  p.wq = init::trunc_normal({dim, dim}, stddev, rng);
  p.wk = init::trunc_normal({dim, dim}, stddev, rng);
  p.wv = init::trunc_normal({dim, dim}, stddev, rng);
  p.wo = zero_output ? Tensor({dim, dim}) : init::trunc_normal({dim, dim}, stddev, rng);
  p.validate();
  return p;
}

Var scaled_dot_attention(Var q, Var k, Var v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention operands must be n x d");
  if (q.dim(1) != k.dim(1)) throw DimensionError("query/key widths differ");
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("key and value lengths differ: " + shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Var scores = scale(matmul(q, transpose2d(k)), s);
  return matmul(softmax(scores, 1), v);
}

Var efficient_attention(Var q, Var k, Var v, NormalizerChoice, std::size_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionError("attention operands must be n x d");
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("key and value lengths differ: " + shape_str(k.shape()) + " vs " + shape_str(v.shape()));
  }
  if (q.dim(1) != k.dim(1)) throw DimensionError("query/key widths differ");
  if (heads == 0 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
    throw ConfigError("efficient attention width not divisible by head count");
  }
  auto one_head = [](Var qh, Var kh, Var vh) {
    Var context = matmul(transpose2d(softmax(kh, 0)), vh);
    return matmul(softmax(qh, 1), context);
  };
  if (heads == 1) return one_head(q, k, v);
  const std::vector<std::size_t> qs(heads, q.dim(1) / heads), vs(heads, v.dim(1) / heads);
  auto qh = split(q, 1, qs), kh = split(k, 1, qs), vh = split(v, 1, vs);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) outs.push_back(one_head(qh[h], kh[h], vh[h]));
  return concat(outs, 1);
}

Var standard_mhsa(Var x, AttentionParams& p, std::optional<Var> query_offset) {
  p.validate();
  if (x.rank() != 2 || x.dim(1) != p.dim()) {
    throw DimensionError("standard_mhsa: input " + shape_str(x.shape()) + " vs model width " +
                         std::to_string(p.dim()));
  }
  Tape& t = x.tape();
  Var q = linear(x, t.param(p.wq));
  if (query_offset) q = add(q, *query_offset);
  Var k = linear(x, t.param(p.wk));
  Var v = linear(x, t.param(p.wv));
  Var heads_out;
  if (p.num_heads == 1) {
    heads_out = scaled_dot_attention(q, k, v);
  } else {
    const std::vector<std::size_t> sizes(p.num_heads, p.head_dim());
    auto qh = split(q, 1, sizes), kh = split(k, 1, sizes), vh = split(v, 1, sizes);
    std::vector<Var> heads;
    for (std::size_t h = 0; h < p.num_heads; ++h) heads.push_back(scaled_dot_attention(qh[h], kh[h], vh[h]));
    heads_out = concat(heads, 1);
  }
  return linear(heads_out, t.param(p.wo));
}

Var efficient_self_attention(Var x, AttentionParams& p) {
  p.validate();
  if (x.rank() != 2 || x.dim(1) != p.dim()) {
    throw DimensionError("efficient_self_attention: input " + shape_str(x.shape()) + " vs model width " +
                         std::to_string(p.dim()));
  }
  Tape& t = x.tape();
  Var q = linear(x, t.param(p.wq));
  Var k = linear(x, t.param(p.wk));
  Var v = linear(x, t.param(p.wv));
  return linear(efficient_attention(q, k, v, {}, p.num_heads), t.param(p.wo));
}

std::string kind_name(Kind k) { return k == Kind::standard ? "standard" : "efficient"; }

std::vector<ProbeRow> complexity_probe(Kind kind, const std::vector<std::size_t>& n_list, std::size_t dim,
                                       std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("complexity_probe needs at least one trial");
  if (n_list.size() < 4 || !std::is_sorted(n_list.begin(), n_list.end()) ||
      std::adjacent_find(n_list.begin(), n_list.end()) != n_list.end() || n_list.front() == 0) {
    throw ConfigError("complexity_probe needs at least 4 strictly ascending positive lengths");
  }
  std::vector<ProbeRow> rows;
  Rng rng(seed, 0x70726f6265ULL);
  for (std::size_t n : n_list) {
    std::vector<double> times;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      auto make = [&] {
        Tensor t({n, dim});
        for (auto& v : t.data) v = rng.normal();
        return t;
      };
      Tensor qt = make(), kt = make(), vt = make();
      Tape tape;
      Var q = tape.constant(std::move(qt)), k = tape.constant(std::move(kt)), v = tape.constant(std::move(vt));
      const auto start = std::chrono::steady_clock::now();
      Var out = kind == Kind::standard ? scaled_dot_attention(q, k, v) : efficient_attention(q, k, v);
      const auto stop = std::chrono::steady_clock::now();
      if (!out.value().all_finite()) throw ContractError("complexity_probe produced non-finite output");
      times.push_back(std::chrono::duration<double>(stop - start).count());
    }
    std::sort(times.begin(), times.end());
    const double median =
        times.size() % 2 ? times[times.size() / 2] : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    rows.push_back({kind, n, dim, median});
  }
  return rows;
}

double fit_loglog_slope(const std::vector<ProbeRow>& rows) {
  if (rows.size() < 2) throw ConfigError("slope fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double m = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double x = std::log(static_cast<double>(r.n));
    const double y = std::log(std::max(r.median_seconds, 1e-12));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

void write_probe_csv(std::ostream& os, const std::vector<ProbeRow>& rows, bool header) {
  if (header) os << "impl,n,D,median_seconds\n";
  for (const auto& r : rows) {
    os << kind_name(r.kind) << ',' << r.n << ',' << r.dim << ',' << std::setprecision(9) << r.median_seconds << '\n';
  }
}

}  // namespace fet::attention
