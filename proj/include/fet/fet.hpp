#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fet/attention.hpp"
#include "fet/autodiff.hpp"
#include "fet/rng.hpp"
#include "fet/wavelet.hpp"

namespace fet {

// identity_residual zeroes the last projection of every residual branch so a
// fresh layer is the identity map; random_all draws every weight at unit-gain
// scale (used by the spectral probe, which studies untrained layers).
enum class InitScheme { identity_residual, random_all };

/// Learnable weights of one frequency-enhancement block at model width D.
/// C = D / 4 is the reduced width the whole block works in.
struct FetBlockParams {
  Tensor reduce, reduce_bias;      // D x C, C
  Tensor hf_mix_a, hf_mix_a_bias;  // 3 x C taps fusing the LH/HL/HH stack, C
  Tensor hf_mix_b, hf_mix_b_bias;  // C, C: extent-1 mixing after the pyramid
  Tensor kv_conv, kv_bias;         // 3 x 3 x 2C x 2C, 2C
  Tensor wq;                       // D x C
  Tensor wo, wo_bias;              // C x D, D
  std::size_t pyramid_levels = 3;
  double gauss_sigma = 1.0;
  std::size_t heads = 1;

  std::size_t dim() const { return reduce.shape.empty() ? 0 : reduce.dim(0); }
  std::size_t reduced() const { return dim() / 4; }
  void validate() const;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "reduce", reduce);
    f(prefix + "reduce_bias", reduce_bias);
    f(prefix + "hf_mix_a", hf_mix_a);
    f(prefix + "hf_mix_a_bias", hf_mix_a_bias);
    f(prefix + "hf_mix_b", hf_mix_b);
    f(prefix + "hf_mix_b_bias", hf_mix_b_bias);
    f(prefix + "kv_conv", kv_conv);
    f(prefix + "kv_bias", kv_bias);
    f(prefix + "wq", wq);
    f(prefix + "wo", wo);
    f(prefix + "wo_bias", wo_bias);
  }
};

FetBlockParams init_fet_block(std::size_t dim, Rng& rng, std::size_t pyramid_levels = 3, double gauss_sigma = 1.0,
                              InitScheme scheme = InitScheme::identity_residual);

/// Mix-FFN: pointwise expand (ratio 4), 3x3 depthwise conv, GELU, pointwise contract.
struct MixFfnParams {
  Tensor w1, b1, dw, dw_bias, w2, b2;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "w1", w1);
    f(prefix + "b1", b1);
    f(prefix + "dw", dw);
    f(prefix + "dw_bias", dw_bias);
    f(prefix + "w2", w2);
    f(prefix + "b2", b2);
  }
};

MixFfnParams init_mix_ffn(std::size_t dim, Rng& rng, InitScheme scheme = InitScheme::identity_residual,
                          std::size_t ratio = 4);

struct LayerNormParams {
  Tensor gamma, beta;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
};

LayerNormParams init_layernorm(std::size_t dim);
Var layernorm(Var x, LayerNormParams& p);

struct FetLayerParams {
  LayerNormParams ln1, ln2;
  FetBlockParams block;
  MixFfnParams ffn;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    ln1.for_each_param(prefix + "ln1.", f);
    block.for_each_param(prefix + "block.", f);
    ln2.for_each_param(prefix + "ln2.", f);
    ffn.for_each_param(prefix + "ffn.", f);
  }
};

FetLayerParams init_fet_layer(std::size_t dim, Rng& rng, std::size_t pyramid_levels = 3, double gauss_sigma = 1.0,
                              InitScheme scheme = InitScheme::identity_residual);

// Normalized 1D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);
// Number of blur+halve steps an H x W map supports (each step needs even extents).
std::size_t max_pyramid_levels(std::size_t height, std::size_t width);
// Level 0 is `hf`; level l is blur(level l-1) followed by 2x2 averaging.
std::vector<Var> gaussian_pyramid(Var hf, std::size_t levels, double sigma);

struct BoundaryMap {
  Var gate;      // H' x W' x C, values in [0, 1]
  Var fused_hf;  // output of the first stack mixing, H' x W' x C
  std::size_t levels_used = 0;
};

// Stack LH/HL/HH, fuse with hf_mix_a, sum the bilinearly upsampled Gaussian
// pyramid, mix with hf_mix_b and squash with the logistic function.
BoundaryMap boundary_attention(const wavelet::WaveletSubbands& sub, FetBlockParams& p);

// The attention branch of the block, without the residual:
//   reduce -> DWT -> boundary gate; K,V from conv3x3([LL, fused HF]); V += gate;
//   Q = x wq (+ query_offset); efficient attention; project by wo.
// x: H x W x D with H, W even. query_offset: 1 x C.
Var fet_branch(Var x, FetBlockParams& p, std::optional<Var> query_offset = std::nullopt);
// x + fet_branch(x).
Var fet_block(Var x, FetBlockParams& p, std::optional<Var> query_offset = std::nullopt);
// fet_branch for maps with odd extents: replicates the last row/column up to
// even extents, runs the branch and crops back. Even inputs pass straight through.
Var fet_branch_padded(Var x, FetBlockParams& p, std::optional<Var> query_offset = std::nullopt);

Var mix_ffn(Var x, MixFfnParams& p);

/// Token-form tensor n x D with the spatial extent it was flattened from.
struct Tokens {
  Var x;
  std::size_t height = 0;
  std::size_t width = 0;
};

// x + FET(LN(x)), then + MixFFN(LN(.)). Returns tokens in the same layout.
// Odd spatial extents go through fet_branch_padded.
Tokens fet_layer(const Tokens& in, FetLayerParams& p);

// Plain transformer layer at matched width: x + MHSA(LN(x)), then + MLP(LN(.)).
struct MlpParams {
  Tensor w1, b1, w2, b2;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "w1", w1);
    f(prefix + "b1", b1);
    f(prefix + "w2", w2);
    f(prefix + "b2", b2);
  }
};

MlpParams init_mlp(std::size_t dim, Rng& rng, InitScheme scheme = InitScheme::identity_residual,
                   std::size_t ratio = 4);
Var mlp(Var x, MlpParams& p);

struct StandardLayerParams {
  LayerNormParams ln1, ln2;
  attention::AttentionParams attn;
  MlpParams ffn;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    ln1.for_each_param(prefix + "ln1.", f);
    attn.for_each_param(prefix + "attn.", f);
    ln2.for_each_param(prefix + "ln2.", f);
    ffn.for_each_param(prefix + "ffn.", f);
  }
};

StandardLayerParams init_standard_layer(std::size_t dim, std::size_t num_heads, Rng& rng,
                                        InitScheme scheme = InitScheme::identity_residual);
Tokens standard_layer(const Tokens& in, StandardLayerParams& p);

}  // namespace fet
