#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fet/autodiff.hpp"
#include "fet/rng.hpp"

namespace fet::attention {

/// Projection weights shared by both attention forms. All are D x D.
struct AttentionParams {
  Tensor wq, wk, wv, wo;
  std::size_t num_heads = 1;

  std::size_t dim() const { return wq.shape.empty() ? 0 : wq.dim(0); }
  std::size_t head_dim() const { return dim() / num_heads; }
  void validate() const;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
  }
};

AttentionParams init_attention(std::size_t dim, std::size_t num_heads, Rng& rng, double stddev = 0.02,
                               bool zero_output = false);

// rho_q normalizes each query row over channels; rho_k normalizes each key
// channel over positions. This is the only supported pairing.
struct NormalizerChoice {
  enum class Query { softmax_over_channels } for_q = Query::softmax_over_channels;
  enum class Key { softmax_over_positions } for_k = Key::softmax_over_positions;
};

// Softmax(Q K^T / sqrt(d)) V for one head, no projections.
Var scaled_dot_attention(Var q, Var k, Var v);

// rho_q(Q) (rho_k(K)^T V). The D x D context rho_k(K)^T V is formed first, so
// the cost is linear in both sequence lengths. `heads` > 1 splits channels.
Var efficient_attention(Var q, Var k, Var v, NormalizerChoice norm = {}, std::size_t heads = 1);

// Multi-head softmax self-attention: heads of x*wq, x*wk, x*wv, concatenated
// and projected by wo. `query_offset` (1 x D) is added to every projected query row.
Var standard_mhsa(Var x, AttentionParams& p, std::optional<Var> query_offset = std::nullopt);

// Efficient self-attention with the same projections: rho_q(xWq)(rho_k(xWk)^T xWv) Wo.
Var efficient_self_attention(Var x, AttentionParams& p);

enum class Kind { standard, efficient };
std::string kind_name(Kind k);

struct ProbeRow {
  Kind kind;
  std::size_t n;
  std::size_t dim;
  double median_seconds;
};

// Times the attention core on random n x D inputs; median over `trials`.
std::vector<ProbeRow> complexity_probe(Kind kind, const std::vector<std::size_t>& n_list, std::size_t dim,
                                       std::size_t trials, std::uint64_t seed = 0);
// Least-squares slope of log(median_seconds) against log(n).
double fit_loglog_slope(const std::vector<ProbeRow>& rows);
// `impl,n,D,median_seconds`
void write_probe_csv(std::ostream& os, const std::vector<ProbeRow>& rows, bool header = true);

}  // namespace fet::attention
