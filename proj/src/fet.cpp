#include "fet/fet.hpp"

#include <cmath>

#include "fet/init.hpp"
#include "fet/ops.hpp"

namespace fet {

using namespace fet::ops;

namespace {

Tensor projection(Shape shape, Rng& rng, InitScheme scheme) {
  if (scheme == InitScheme::random_all) {
    return init::trunc_normal(shape, 1.0 / std::sqrt(static_cast<double>(shape.front())), rng);
  }
  return init::trunc_normal(std::move(shape), 0.02, rng);
}

Tensor output_projection(Shape shape, Rng& rng, InitScheme scheme) {
  if (scheme == InitScheme::random_all) return projection(std::move(shape), rng, scheme);
  return Tensor(std::move(shape));
}

Var bind(Var like, Tensor& t) { return like.tape().param(t); }

}  // namespace

void FetBlockParams::validate() const {
  const std::size_t d = dim();
  if (d == 0 || d % 4 != 0) throw ConfigError("FET block width must be divisible by 4, got " + std::to_string(d));
  const std::size_t c = d / 4;
  auto expect = [](const Tensor& t, const Shape& s, const char* name) {
    if (t.shape != s) {
      throw DimensionError(std::string("FET block ") + name + " has shape " + shape_str(t.shape) + ", expected " +
                           shape_str(s));
    }
  };
  expect(reduce, {d, c}, "reduce");
  expect(reduce_bias, {c}, "reduce_bias");
  expect(hf_mix_a, {3, c}, "hf_mix_a");
  expect(hf_mix_a_bias, {c}, "hf_mix_a_bias");
  expect(hf_mix_b, {c}, "hf_mix_b");
  expect(hf_mix_b_bias, {c}, "hf_mix_b_bias");
  expect(kv_conv, {3, 3, 2 * c, 2 * c}, "kv_conv");
  expect(kv_bias, {2 * c}, "kv_bias");
  expect(wq, {d, c}, "wq");
  expect(wo, {c, d}, "wo");
  expect(wo_bias, {d}, "wo_bias");
  if (gauss_sigma <= 0.0) throw ConfigError("gauss_sigma must be positive");
  if (pyramid_levels < 1) throw ConfigError("pyramid_levels must be >= 1");
  if (heads == 0 || c % heads != 0) throw ConfigError("FET heads must divide D/4");
}

FetBlockParams init_fet_block(std::size_t dim, Rng& rng, std::size_t pyramid_levels, double gauss_sigma,
                              InitScheme scheme) {
  if (dim == 0 || dim % 4 != 0) throw ConfigError("FET block width must be divisible by 4, got " + std::to_string(dim));
  const std::size_t c = dim / 4;
  FetBlockParams p;
  p.reduce = projection({dim, c}, rng, scheme);
  p.reduce_bias = Tensor({c});
  p.hf_mix_a = init::kaiming({3, c}, rng);
  p.hf_mix_a_bias = Tensor({c});
  p.hf_mix_b = init::kaiming({c}, rng);
  p.hf_mix_b_bias = Tensor({c});
  p.kv_conv = init::kaiming({3, 3, 2 * c, 2 * c}, rng);
  p.kv_bias = Tensor({2 * c});
  p.wq = projection({dim, c}, rng, scheme);
  p.wo = output_projection({c, dim}, rng, scheme);
  p.wo_bias = Tensor({dim});
  p.pyramid_levels = pyramid_levels;
  p.gauss_sigma = gauss_sigma;
  p.validate();
  return p;
}

MixFfnParams init_mix_ffn(std::size_t dim, Rng& rng, InitScheme scheme, std::size_t ratio) {
  const std::size_t hidden = dim * ratio;
  MixFfnParams p;
  p.w1 = projection({dim, hidden}, rng, scheme);
  p.b1 = Tensor({hidden});
  p.dw = init::kaiming({3, 3, 1, hidden}, rng);
  p.dw_bias = Tensor({hidden});
  p.w2 = output_projection({hidden, dim}, rng, scheme);
  p.b2 = Tensor({dim});
  return p;
}

LayerNormParams init_layernorm(std::size_t dim) { return {init::ones({dim}), Tensor({dim})}; }

Var layernorm(Var x, LayerNormParams& p) { return ops::layernorm(x, bind(x, p.gamma), bind(x, p.beta)); }

FetLayerParams init_fet_layer(std::size_t dim, Rng& rng, std::size_t pyramid_levels, double gauss_sigma,
                              InitScheme scheme) {
  FetLayerParams p;
  p.ln1 = init_layernorm(dim);
  p.block = init_fet_block(dim, rng, pyramid_levels, gauss_sigma, scheme);
  p.ln2 = init_layernorm(dim);
  p.ffn = init_mix_ffn(dim, rng, scheme);
  return p;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("Gaussian sigma must be positive");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k;
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k.push_back(v);
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

std::size_t max_pyramid_levels(std::size_t height, std::size_t width) {
  std::size_t levels = 0;
  while (height >= 2 && width >= 2 && height % 2 == 0 && width % 2 == 0) {
    height /= 2;
    width /= 2;
    ++levels;
  }
  return levels;
}

std::vector<Var> gaussian_pyramid(Var hf, std::size_t levels, double sigma) {
  if (hf.rank() != 3) throw DimensionError("gaussian_pyramid expects H x W x C, got " + shape_str(hf.shape()));
  if (levels > max_pyramid_levels(hf.dim(0), hf.dim(1))) {
    throw DimensionError("gaussian_pyramid: " + std::to_string(levels) + " levels too deep for " +
                         shape_str(hf.shape()));
  }
  const auto kernel = gaussian_kernel(sigma);
  std::vector<Var> out{hf};
  for (std::size_t l = 0; l < levels; ++l) {
    out.push_back(resample(blur_separable(out.back(), kernel), Resample::down2_avg));
  }
  return out;
}

BoundaryMap boundary_attention(const wavelet::WaveletSubbands& sub, FetBlockParams& p) {
  const Shape band = sub.lh.shape();
  if (band.size() != 3 || sub.hl.shape() != band || sub.hh.shape() != band || sub.ll.shape() != band) {
    throw DimensionError("boundary_attention: subband shapes differ");
  }
  if (band[2] != p.reduced()) {
    throw DimensionError("boundary_attention: subbands carry " + std::to_string(band[2]) + " channels, block expects " +
                         std::to_string(p.reduced()));
  }
  const std::size_t h = band[0], w = band[1], c = band[2];
  const Shape slot{1, h, w, c};
  Var stack = concat({reshape(sub.lh, slot), reshape(sub.hl, slot), reshape(sub.hh, slot)}, 0);
  Var fused = conv_across_axis(stack, bind(stack, p.hf_mix_a), bind(stack, p.hf_mix_a_bias), StackMode::fuse);
  fused = reshape(fused, band);

  const std::size_t levels = std::min(p.pyramid_levels, max_pyramid_levels(h, w));
  auto pyramid = gaussian_pyramid(fused, levels, p.gauss_sigma);
  Var acc = pyramid.front();
  for (std::size_t l = 1; l < pyramid.size(); ++l) acc = add(acc, resize_bilinear(pyramid[l], h, w));

  Var pre = add(mul(acc, bind(acc, p.hf_mix_b)), bind(acc, p.hf_mix_b_bias));
  return BoundaryMap{sigmoid(pre), fused, levels};
}

Var fet_branch(Var x, FetBlockParams& p, std::optional<Var> query_offset) {
  p.validate();
  if (x.rank() != 3 || x.dim(2) != p.dim()) {
    throw DimensionError("fet_block: input " + shape_str(x.shape()) + " vs block width " + std::to_string(p.dim()));
  }
  const std::size_t H = x.dim(0), W = x.dim(1), c = p.reduced();
  Var reduced = linear(x, bind(x, p.reduce), bind(x, p.reduce_bias));
  auto sub = wavelet::dwt2(reduced);
  auto boundary = boundary_attention(sub, p);

  Var kv_in = concat({sub.ll, boundary.fused_hf}, 2);
  Var kv = conv2d(kv_in, bind(x, p.kv_conv), bind(x, p.kv_bias), {.stride = 1, .padding = 1, .groups = 1});
  auto kv_parts = split(kv, 2, {c, c});
  Var values = add(kv_parts[1], boundary.gate);

  Var q = linear(flatten_spatial(x), bind(x, p.wq));
  if (query_offset) {
    if (query_offset->size() != c) {
      throw DimensionError("fet_block: query offset " + shape_str(query_offset->shape()) + " vs reduced width " +
                           std::to_string(c));
    }
    q = add(q, reshape(*query_offset, {1, c}));
  }
  Var attended = attention::efficient_attention(q, flatten_spatial(kv_parts[0]), flatten_spatial(values), {}, p.heads);
  Var projected = linear(attended, bind(x, p.wo), bind(x, p.wo_bias));
  return unflatten_spatial(projected, H, W);
}

Var fet_block(Var x, FetBlockParams& p, std::optional<Var> query_offset) {
  return add(x, fet_branch(x, p, query_offset));
}

Var fet_branch_padded(Var x, FetBlockParams& p, std::optional<Var> query_offset) {
  if (x.rank() != 3) throw DimensionError("fet_block expects H x W x D, got " + shape_str(x.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1);
  if (H % 2 == 0 && W % 2 == 0) return fet_branch(x, p, query_offset);
  Var padded = pad_edge(x, 0, H % 2, 0, W % 2);
  return crop(fet_branch(padded, p, query_offset), 0, 0, H, W);
}

Var mix_ffn(Var x, MixFfnParams& p) {
  if (x.rank() != 3) throw DimensionError("mix_ffn expects H x W x D, got " + shape_str(x.shape()));
  const std::size_t hidden = p.w1.dim(1);
  Var h = linear(x, bind(x, p.w1), bind(x, p.b1));
  h = conv2d(h, bind(x, p.dw), bind(x, p.dw_bias), {.stride = 1, .padding = 1, .groups = hidden});
  h = gelu(h);
  return linear(h, bind(x, p.w2), bind(x, p.b2));
}

namespace {
void check_tokens(const Tokens& in) {
  if (!in.x.valid() || in.height == 0 || in.width == 0) {
    throw ContractError("token tensor is missing its spatial extent");
  }
  if (in.x.rank() != 2 || in.x.dim(0) != in.height * in.width) {
    throw ContractError("token tensor " + shape_str(in.x.shape()) + " does not match extent " +
                        std::to_string(in.height) + "x" + std::to_string(in.width));
  }
}
}  // namespace

Tokens fet_layer(const Tokens& in, FetLayerParams& p) {
  check_tokens(in);
  Var x = unflatten_spatial(in.x, in.height, in.width);
  Var y = add(x, fet_branch_padded(layernorm(x, p.ln1), p.block));
  Var z = add(y, mix_ffn(layernorm(y, p.ln2), p.ffn));
  return Tokens{flatten_spatial(z), in.height, in.width};
}

MlpParams init_mlp(std::size_t dim, Rng& rng, InitScheme scheme, std::size_t ratio) {
  const std::size_t hidden = dim * ratio;
  MlpParams p;
  p.w1 = projection({dim, hidden}, rng, scheme);
  p.b1 = Tensor({hidden});
  p.w2 = output_projection({hidden, dim}, rng, scheme);
  p.b2 = Tensor({dim});
  return p;
}

Var mlp(Var x, MlpParams& p) {
  return linear(gelu(linear(x, bind(x, p.w1), bind(x, p.b1))), bind(x, p.w2), bind(x, p.b2));
}

StandardLayerParams init_standard_layer(std::size_t dim, std::size_t num_heads, Rng& rng, InitScheme scheme) {
  StandardLayerParams p;
  p.ln1 = init_layernorm(dim);
  const double stddev = scheme == InitScheme::random_all ? 1.0 / std::sqrt(static_cast<double>(dim)) : 0.02;
  p.attn = attention::init_attention(dim, num_heads, rng, stddev, scheme == InitScheme::identity_residual);
  p.ln2 = init_layernorm(dim);
  p.ffn = init_mlp(dim, rng, scheme);
  return p;
}

Tokens standard_layer(const Tokens& in, StandardLayerParams& p) {
  check_tokens(in);
  Var y = add(in.x, attention::standard_mhsa(layernorm(in.x, p.ln1), p.attn));
  Var z = add(y, mlp(layernorm(y, p.ln2), p.ffn));
  return Tokens{z, in.height, in.width};
}

}  // namespace fet
