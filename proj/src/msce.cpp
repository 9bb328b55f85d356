#include "fet/msce.hpp"

#include "fet/init.hpp"
#include "fet/ops.hpp"

namespace fet::msce {

using namespace fet::ops;

void StagePyramid::validate() const {
  if (stages.size() != kStages) {
    throw DimensionError("stage pyramid needs exactly 4 stages, got " + std::to_string(stages.size()));
  }
  for (std::size_t i = 0; i < kStages; ++i) {
    const Var& s = stages[i];
    if (!s.valid() || s.rank() != 3) throw DimensionError("stage " + std::to_string(i + 1) + " is not H x W x C");
    if (!s.value().all_finite()) throw NumericError("stage " + std::to_string(i + 1) + " has non-finite values");
    if (i > 0) {
      const Var& prev = stages[i - 1];
      if (prev.dim(0) != 2 * s.dim(0) || prev.dim(1) != 2 * s.dim(1)) {
        throw DimensionError("stage " + std::to_string(i + 1) + " extent " + shape_str(s.shape()) +
                             " is not half of " + shape_str(prev.shape()));
      }
    }
  }
}

SeParams init_se(std::size_t channels, std::size_t ratio, Rng& rng) {
  if (ratio == 0 || channels % ratio != 0) {
    throw ConfigError("SE ratio " + std::to_string(ratio) + " does not divide " + std::to_string(channels) +
                      " channels");
  }
  const std::size_t hidden = channels / ratio;
  return SeParams{init::trunc_normal({channels, hidden}, 0.02, rng), Tensor({hidden}),
                  init::trunc_normal({hidden, channels}, 0.02, rng), Tensor({channels})};
}

Var se_gate(Var x, SeParams& p) {
  if (x.rank() != 3) throw DimensionError("se_block expects H x W x C, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(2);
  if (p.w1.rank() != 2 || p.w1.dim(0) != c || p.w2.rank() != 2 || p.w2.dim(1) != c || p.w1.dim(1) != p.w2.dim(0)) {
    throw ConfigError("SE weights " + shape_str(p.w1.shape) + "/" + shape_str(p.w2.shape) + " do not fit " +
                      std::to_string(c) + " channels");
  }
  Tape& t = x.tape();
  Var squeezed = reshape(mean_axis(flatten_spatial(x), 0), {1, c});
  Var hidden = relu(linear(squeezed, t.param(p.w1), t.param(p.b1)));
  Var gate = sigmoid(linear(hidden, t.param(p.w2), t.param(p.b2)));
  return reshape(gate, {c});
}

Var se_block(Var x, SeParams& p) { return mul(x, se_gate(x, p)); }

MsceParams init_msce(const std::array<std::size_t, kStages>& stage_dims, Rng& rng, const MsceOptions& opt) {
  MsceParams p;
  const std::size_t c = stage_dims[0];
  p.common_dim = c;
  p.block_kind = opt.block_kind;
  p.se_ratio = opt.se_ratio;
  const bool random_all = opt.scheme == InitScheme::random_all;
  const double proj_std = random_all ? 1.0 / std::sqrt(static_cast<double>(c)) : 0.02;
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::size_t ci = stage_dims[i];
    p.proj_in[i] = init::trunc_normal({ci, c}, random_all ? 1.0 / std::sqrt(static_cast<double>(ci)) : 0.02, rng);
    p.proj_out[i] = init::trunc_normal({c, ci}, proj_std, rng);
    if (opt.block_kind == StageBlock::fet) {
      p.fet_blocks.push_back(init_fet_block(ci, rng, opt.pyramid_levels, opt.gauss_sigma, opt.scheme));
      p.query_proj[i] = init::trunc_normal({c, ci / 4}, proj_std, rng);
    } else {
      const double s = random_all ? 1.0 / std::sqrt(static_cast<double>(ci)) : 0.02;
      p.std_blocks.push_back(attention::init_attention(ci, opt.standard_heads, rng, s, !random_all));
      p.query_proj[i] = init::trunc_normal({c, ci}, proj_std, rng);
    }
    p.se[i] = init_se(ci, opt.se_ratio, rng);
  }
  p.fusion_ln = init_layernorm(c);
  p.fusion_attn = attention::init_attention(c, 1, rng, proj_std, !random_all);
  return p;
}

FusionResult fuse_stages(const StagePyramid& p, MsceParams& params) {
  p.validate();
  Tape& t = p.stages.front().tape();
  std::vector<Var> tokens;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < kStages; ++i) {
    const Var& s = p.stages[i];
    if (params.proj_in[i].dim(0) != s.dim(2)) {
      throw DimensionError("stage " + std::to_string(i + 1) + " has " + std::to_string(s.dim(2)) +
                           " channels, bridge expects " + std::to_string(params.proj_in[i].dim(0)));
    }
    tokens.push_back(linear(flatten_spatial(s), t.param(params.proj_in[i])));
    counts.push_back(s.dim(0) * s.dim(1));
  }
  Var seq = concat(tokens, 0);
  Var context = attention::efficient_self_attention(layernorm(seq, params.fusion_ln), params.fusion_attn);
  Var fused = add(seq, context);

  auto pieces = split(context, 0, counts);
  FusionResult out;
  out.tokens = fused;
  for (std::size_t i = 0; i < kStages; ++i) {
    const Var& s = p.stages[i];
    Var back = linear(pieces[i], t.param(params.proj_out[i]));
    out.stages.stages.push_back(add(s, unflatten_spatial(back, s.dim(0), s.dim(1))));
  }
  return out;
}

Var global_query(Var tokens, Var projection) {
  if (tokens.rank() != 2 || tokens.dim(0) == 0) throw DimensionError("global_query expects N x C tokens");
  Var pooled = reshape(mean_axis(tokens, 0), {1, tokens.dim(1)});
  return matmul(pooled, projection);
}

namespace {

Var stage_standard_block(Var x, attention::AttentionParams& p, Var query) {
  Var tokens = flatten_spatial(x);
  Var out = add(tokens, attention::standard_mhsa(tokens, p, query));
  return unflatten_spatial(out, x.dim(0), x.dim(1));
}

}  // namespace

StagePyramid msce_bridge(const StagePyramid& p, MsceParams& params) {
  auto fusion = fuse_stages(p, params);
  Tape& t = fusion.tokens.tape();
  StagePyramid out;
  for (std::size_t i = 0; i < kStages; ++i) {
    Var stage = fusion.stages.stages[i];
    Var query = global_query(fusion.tokens, t.param(params.query_proj[i]));
    // the deepest stage can be 1 x 1; the padded branch handles odd extents
    Var refined = params.block_kind == StageBlock::fet
                      ? add(stage, fet_branch_padded(stage, params.fet_blocks[i], query))
                      : stage_standard_block(stage, params.std_blocks[i], query);
    out.stages.push_back(se_block(refined, params.se[i]));
  }
  return out;
}

}  // namespace fet::msce
