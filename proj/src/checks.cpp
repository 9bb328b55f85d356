#include "fet/checks.hpp"

#include <functional>
#include <memory>

#include "fet/attention.hpp"
#include "fet/fet.hpp"
#include "fet/model.hpp"
#include "fet/msce.hpp"
#include "fet/ops.hpp"
#include "fet/rng.hpp"
#include "fet/wavelet.hpp"

namespace fet::checks {

using namespace fet::ops;

namespace {

Tensor rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Entries in [-1, -0.2] u [0.2, 1], away from the ReLU kink.
Tensor off_zero(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) {
    v = rng.uniform(0.2, 1.0);
    if (rng.uniform() < 0.5) v = -v;
  }
  return t;
}

// Contracts any output with fixed pseudo-random weights so every output entry matters.
Var probe(Var out) {
  if (out.size() == 1) return sum(out);
  Rng w(0x70726f6265ULL, out.size());
  Tensor r(out.shape());
  for (double& v : r.data) v = w.uniform(-1.0, 1.0);
  return sum(mul(out, out.tape().constant(std::move(r))));
}

using Body = std::function<Var(Tape&, std::vector<Var>&)>;

struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  Body body;
};

CheckRow run(Case& c, double tol, const GradCheckOptions& opt = {}) {
  std::vector<Tensor*> ptrs;
  for (auto& t : c.inputs) ptrs.push_back(&t);
  auto f = [&c](Tape& tape) {
    std::vector<Var> vars;
    for (auto& t : c.inputs) vars.push_back(tape.param(t));
    return probe(c.body(tape, vars));
  };
  return CheckRow{c.name, tol, grad_check(f, ptrs, opt)};
}

// Overwrites every parameter with uniform noise so no gradient path starts at zero.
template <class P>
std::vector<Tensor*> randomize(P& params, Rng& rng, double amp = 0.5) {
  std::vector<Tensor*> out;
  params.for_each_param("", [&](const std::string&, Tensor& t) {
    for (double& v : t.data) v = rng.uniform(-amp, amp);
    out.push_back(&t);
  });
  return out;
}

}  // namespace

std::vector<CheckRow> op_suite(std::uint64_t seed, double tol) {
  Rng rng(seed, 0x6f7073ULL);
  auto R = [&](Shape s, double lo = -1.0, double hi = 1.0) { return rand_tensor(std::move(s), rng, lo, hi); };
  std::vector<Case> cases;
  auto unary = [&](std::string name, Shape s, std::function<Var(Var)> g, double lo = -1.0, double hi = 1.0) {
    cases.push_back({std::move(name), {R(std::move(s), lo, hi)}, [g](Tape&, std::vector<Var>& v) { return g(v[0]); }});
  };
  auto binary = [&](std::string name, Shape a, Shape b, std::function<Var(Var, Var)> g, double blo = -1.0,
                    double bhi = 1.0) {
    cases.push_back({std::move(name), {R(std::move(a)), R(std::move(b), blo, bhi)},
                     [g](Tape&, std::vector<Var>& v) { return g(v[0], v[1]); }});
  };

  binary("add_broadcast", {3, 4}, {4}, add);
  binary("add_broadcast_both", {2, 3, 1}, {1, 4}, add);
  binary("sub_broadcast", {2, 3, 4}, {3, 1}, sub);
  binary("mul_broadcast", {3, 4}, {3, 1}, mul);
  binary("div_broadcast", {3, 4}, {4}, div, 0.5, 1.5);
  unary("scale", {5}, [](Var a) { return scale(a, -1.7); });
  unary("add_scalar", {5}, [](Var a) { return add_scalar(a, 0.3); });
  unary("neg", {5}, neg);
  unary("sigmoid", {6}, sigmoid, -3.0, 3.0);
  unary("gelu", {6}, gelu, -3.0, 3.0);
  unary("exp", {6}, ops::exp);
  unary("log", {6}, ops::log, 0.5, 2.0);
  cases.push_back({"relu", {off_zero({8}, rng)}, [](Tape&, std::vector<Var>& v) { return relu(v[0]); }});
  unary("square", {6}, square);
  unary("sum", {3, 4}, [](Var a) { return scale(sum(a), 0.7); });
  unary("mean", {3, 4}, [](Var a) { return scale(mean(a), 1.3); });
  unary("sum_axis0", {3, 4, 2}, [](Var a) { return sum_axis(a, 0); });
  unary("sum_axis1_keepdim", {3, 4, 2}, [](Var a) { return sum_axis(a, 1, true); });
  unary("mean_axis2", {3, 4, 2}, [](Var a) { return mean_axis(a, 2); });
  binary("matmul", {3, 4}, {4, 2}, matmul);
  cases.push_back({"linear_bias", {R({2, 3, 4}), R({4, 5}), R({5})},
                   [](Tape&, std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }});
  unary("softmax_axis0", {3, 4}, [](Var a) { return softmax(a, 0); }, -2.0, 2.0);
  unary("softmax_axis1", {3, 4}, [](Var a) { return softmax(a, 1); }, -2.0, 2.0);
  unary("log_softmax_axis1", {3, 4}, [](Var a) { return log_softmax(a, 1); }, -2.0, 2.0);
  cases.push_back({"layernorm", {R({3, 6}), R({6}, 0.5, 1.5), R({6})},
                   [](Tape&, std::vector<Var>& v) { return layernorm(v[0], v[1], v[2]); }});
  cases.push_back({"conv2d_3x3_pad1", {R({5, 5, 2}), R({3, 3, 2, 3}), R({3})}, [](Tape&, std::vector<Var>& v) {
                     return conv2d(v[0], v[1], v[2], {.stride = 1, .padding = 1, .groups = 1});
                   }});
  cases.push_back({"conv2d_2x2_stride2", {R({6, 6, 2}), R({2, 2, 2, 4})}, [](Tape&, std::vector<Var>& v) {
                     return conv2d(v[0], v[1], std::nullopt, {.stride = 2, .padding = 0, .groups = 1});
                   }});
  cases.push_back({"conv2d_depthwise", {R({4, 4, 4}), R({3, 3, 1, 4}), R({4})}, [](Tape&, std::vector<Var>& v) {
                     return conv2d(v[0], v[1], v[2], {.stride = 1, .padding = 1, .groups = 4});
                   }});
  cases.push_back({"conv_across_axis_fuse", {R({3, 2, 2, 3}), R({3, 3}), R({3})}, [](Tape&, std::vector<Var>& v) {
                     return conv_across_axis(v[0], v[1], v[2], StackMode::fuse);
                   }});
  cases.push_back({"conv_across_axis_preserve", {R({3, 2, 2, 3}), R({3})}, [](Tape&, std::vector<Var>& v) {
                     return conv_across_axis(v[0], v[1], std::nullopt, StackMode::preserve);
                   }});
  unary("reshape", {2, 3, 4}, [](Var a) { return reshape(a, {4, 6}); });
  unary("transpose", {2, 3, 4}, [](Var a) { return transpose(a, {2, 0, 1}); });
  unary("transpose2d", {3, 5}, transpose2d);
  binary("concat_axis1", {2, 3, 2}, {2, 1, 2}, [](Var a, Var b) { return concat({a, b}, 1); });
  unary("split", {2, 5}, [](Var a) {
    auto p = split(a, 1, {2, 3});
    return add(sum_axis(p[0], 1), scale(sum_axis(p[1], 1), 2.0));
  });
  unary("flatten_unflatten", {3, 2, 4}, [](Var a) {
    Var t = flatten_spatial(a);
    return unflatten_spatial(mul(t, t), 3, 2);
  });
  unary("down2_avg", {4, 6, 2}, [](Var a) { return resample(a, Resample::down2_avg); });
  unary("up2_nearest", {3, 2, 2}, [](Var a) { return resample(a, Resample::up2_nearest); });
  unary("up2_bilinear", {3, 2, 2}, [](Var a) { return resample(a, Resample::up2_bilinear); });
  unary("resize_bilinear", {4, 4, 2}, [](Var a) { return resize_bilinear(a, 7, 5); });
  unary("pad_edge", {3, 3, 2}, [](Var a) { return pad_edge(a, 1, 0, 0, 2); });
  unary("crop", {5, 5, 2}, [](Var a) { return crop(a, 1, 1, 3, 2); });
  unary("blur_separable", {5, 5, 2}, [](Var a) {
    const auto k = gaussian_kernel(1.0);
    return blur_separable(a, k);
  });
  unary("dwt2", {4, 6, 2}, [](Var a) {
    auto s = wavelet::dwt2(a);
    return concat({s.ll, s.lh, s.hl, s.hh}, 2);
  });
  cases.push_back({"idwt2", {R({2, 3, 2}), R({2, 3, 2}), R({2, 3, 2}), R({2, 3, 2})},
                   [](Tape&, std::vector<Var>& v) {
                     return wavelet::idwt2(wavelet::WaveletSubbands{v[0], v[1], v[2], v[3], {4, 6, 2}});
                   }});
  unary("gaussian_pyramid", {8, 8, 2}, [](Var a) {
    auto levels = gaussian_pyramid(a, 2, 1.0);
    Var acc = levels[0];
    for (std::size_t l = 1; l < levels.size(); ++l) acc = add(acc, resize_bilinear(levels[l], 8, 8));
    return acc;
  });
  cases.push_back({"scaled_dot_attention", {R({4, 3}), R({5, 3}), R({5, 2})},
                   [](Tape&, std::vector<Var>& v) { return attention::scaled_dot_attention(v[0], v[1], v[2]); }});
  cases.push_back({"efficient_attention", {R({4, 6}), R({5, 6}), R({5, 6})},
                   [](Tape&, std::vector<Var>& v) { return attention::efficient_attention(v[0], v[1], v[2]); }});
  cases.push_back({"efficient_attention_2heads", {R({4, 6}), R({5, 6}), R({5, 6})},
                   [](Tape&, std::vector<Var>& v) { return attention::efficient_attention(v[0], v[1], v[2], {}, 2); }});
  cases.push_back({"global_query", {R({5, 4}), R({4, 3})},
                   [](Tape&, std::vector<Var>& v) { return msce::global_query(v[0], v[1]); }});
  {
    // losses: logits are the parameter, the one-hot target is fixed
    Tensor target({3, 3, 4});
    for (std::size_t p = 0; p < 9; ++p) target.data[p * 4 + rng.below(4)] = 1.0;
    auto loss_case = [&](std::string name, std::function<Var(Var, Var)> g) {
      cases.push_back({std::move(name), {R({3, 3, 4}, -2.0, 2.0)}, [g, target](Tape& t, std::vector<Var>& v) {
                         return g(v[0], t.constant(target));
                       }});
    };
    loss_case("dice_loss", [](Var l, Var t) { return model::dice_loss(l, t); });
    loss_case("cross_entropy", model::cross_entropy);
    loss_case("combined_loss", [](Var l, Var t) { return model::combined_loss(l, t).total; });
  }

  std::vector<CheckRow> rows;
  for (auto& c : cases) rows.push_back(run(c, tol));

  // blocks with their own parameters
  {
    Rng prng(seed, 0x6d6861ULL);
    auto p = attention::init_attention(8, 2, prng, 0.5);
    Tensor x = R({4, 8}), offset = R({1, 8});
    auto ptrs = randomize(p, prng);
    ptrs.push_back(&x);
    ptrs.push_back(&offset);
    auto f = [&](Tape& t) { return probe(attention::standard_mhsa(t.param(x), p, t.param(offset))); };
    rows.push_back({"standard_mhsa", tol, grad_check(f, ptrs)});
    auto g = [&](Tape& t) { return probe(attention::efficient_self_attention(t.param(x), p)); };
    ptrs.pop_back();
    rows.push_back({"efficient_self_attention", tol, grad_check(g, ptrs)});
  }
  {
    Rng prng(seed, 0x7365ULL);
    auto p = msce::init_se(8, 4, prng);
    Tensor x = R({3, 3, 8});
    auto ptrs = randomize(p, prng);
    ptrs.push_back(&x);
    auto f = [&](Tape& t) { return probe(msce::se_block(t.param(x), p)); };
    rows.push_back({"se_block", tol, grad_check(f, ptrs)});
  }
  {
    Rng prng(seed, 0x666666ULL);
    auto p = init_mix_ffn(4, prng, InitScheme::random_all);
    Tensor x = R({4, 4, 4});
    auto ptrs = randomize(p, prng);
    ptrs.push_back(&x);
    auto f = [&](Tape& t) { return probe(mix_ffn(t.param(x), p)); };
    rows.push_back({"mix_ffn", tol, grad_check(f, ptrs)});
  }
  {
    Rng prng(seed, 0x6c6eULL);
    auto p = init_layernorm(6);
    Tensor x = R({2, 6});
    auto ptrs = randomize(p, prng);
    ptrs.push_back(&x);
    auto f = [&](Tape& t) { return probe(layernorm(t.param(x), p)); };
    rows.push_back({"layernorm_params", tol, grad_check(f, ptrs)});
  }
  return rows;
}

CheckRow fet_block_check(std::uint64_t seed, double tol) {
  Rng rng(seed, 0x666574ULL);
  auto p = init_fet_block(8, rng, 3, 1.0, InitScheme::random_all);
  Tensor x = rand_tensor({4, 4, 8}, rng);
  auto ptrs = randomize(p, rng);
  ptrs.push_back(&x);
  auto f = [&](Tape& t) { return probe(fet_block(t.param(x), p)); };
  return {"fet_block", tol, grad_check(f, ptrs)};
}

CheckRow msce_check(std::uint64_t seed, double tol) {
  Rng rng(seed, 0x6d736365ULL);
  const std::array<std::size_t, msce::kStages> dims{8, 16, 24, 32};
  msce::MsceOptions opt;
  opt.scheme = InitScheme::random_all;
  auto p = msce::init_msce(dims, rng, opt);
  std::vector<Tensor> stages;
  for (std::size_t i = 0; i < msce::kStages; ++i) {
    const std::size_t e = 8 >> i;
    stages.push_back(rand_tensor({e, e, dims[i]}, rng));
  }
  auto ptrs = randomize(p, rng, 0.3);
  for (auto& s : stages) ptrs.push_back(&s);
  auto f = [&](Tape& t) {
    msce::StagePyramid pyr;
    for (auto& s : stages) pyr.stages.push_back(t.param(s));
    auto out = msce::msce_bridge(pyr, p);
    Var acc = probe(out.stages[0]);
    for (std::size_t i = 1; i < out.stages.size(); ++i) acc = add(acc, probe(out.stages[i]));
    return acc;
  };
  GradCheckOptions gopt;
  gopt.max_coords_per_param = 6;
  gopt.seed = seed;
  return {"msce_bridge", tol, grad_check(f, ptrs, gopt)};
}

CheckRow model_check(std::uint64_t seed, double fraction, double tol) {
  model::ModelConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.stage_dims = {8, 16, 24, 32};
  model::SegmentationModel m(cfg, seed);
  Rng rng(seed, 0x6d6f64ULL);
  std::vector<Tensor*> ptrs;
  for (auto& [name, t] : m.named_parameters()) {
    // biases and zero-initialized projections would otherwise cut gradient paths
    for (double& v : t->data) v += rng.uniform(-0.05, 0.05);
    ptrs.push_back(t);
  }
  Tensor x = rand_tensor({32, 32, 1}, rng, 0.0, 1.0);
  std::vector<int> labels(32 * 32);
  for (int& l : labels) l = static_cast<int>(rng.below(cfg.num_classes));
  const Tensor target = model::one_hot(labels, 32, 32, cfg.num_classes);
  auto f = [&](Tape& t) { return model::combined_loss(m.forward(t.constant(x)), t.constant(target)).total; };
  GradCheckOptions gopt;
  gopt.sample_fraction = fraction;
  gopt.seed = seed;
  // Slopes through the bridge queries can sit near 1e-9, where a few ulps of loss
  // roundoff already dominate the central difference. Those are counted as
  // below-noise instead of checked: the floor is 1e5 eps (|f|+1) / h, ~7e-7 here.
  gopt.h = 1e-4;
  gopt.noise_factor = 1e5;
  return {"model", tol, grad_check(f, ptrs, gopt)};
}

}  // namespace fet::checks
