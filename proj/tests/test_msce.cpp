#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fet/checks.hpp"
#include "fet/msce.hpp"
#include "fet/ops.hpp"
#include "oracles.hpp"

using namespace fet;
using namespace fet::msce;

namespace {

struct Pyramid {
  std::vector<Tensor> values;
  StagePyramid on(Tape& t) {
    StagePyramid p;
    for (auto& v : values) p.stages.push_back(t.constant(v));
    return p;
  }
};

Pyramid random_pyramid(std::size_t top, const std::array<std::size_t, 4>& dims, Rng& rng) {
  Pyramid p;
  for (std::size_t i = 0; i < 4; ++i) p.values.push_back(oracle::random_tensor({top >> i, top >> i, dims[i]}, rng));
  return p;
}

void zero(Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); }

}  // namespace

TEST(FuseStages, ZeroOutputProjectionIsIdentity) {
  Rng rng(1);
  const std::array<std::size_t, 4> dims{8, 16, 32, 64};
  auto params = init_msce(dims, rng, {.scheme = InitScheme::random_all});
  zero(params.fusion_attn.wo);
  auto pyr = random_pyramid(8, dims, rng);
  Tape tape;
  const auto out = fuse_stages(pyr.on(tape), params);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out.stages.stages[i].value().data, pyr.values[i].data);
}

TEST(FuseStages, ShapeRoundTrip) {
  Rng rng(2);
  const std::array<std::size_t, 4> dims{32, 64, 128, 256};
  auto params = init_msce(dims, rng, {.scheme = InitScheme::random_all});
  auto pyr = random_pyramid(56, dims, rng);
  Tape tape;
  const auto out = fuse_stages(pyr.on(tape), params);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out.stages.stages[i].shape(), pyr.values[i].shape);
  EXPECT_EQ(out.tokens.shape(), (Shape{56 * 56 + 28 * 28 + 14 * 14 + 7 * 7, 32}));
}

TEST(FuseStages, PyramidViolations) {
  Rng rng(3);
  const std::array<std::size_t, 4> dims{8, 16, 32, 64};
  auto params = init_msce(dims, rng);
  Tape tape;
  auto pyr = random_pyramid(8, dims, rng);
  StagePyramid three = pyr.on(tape);
  three.stages.pop_back();
  EXPECT_THROW(fuse_stages(three, params), DimensionError);
  pyr.values[2] = Tensor({3, 3, 32});
  EXPECT_THROW(fuse_stages(pyr.on(tape), params), DimensionError);
  auto wrong = random_pyramid(8, {8, 16, 32, 32}, rng);
  EXPECT_THROW(fuse_stages(wrong.on(tape), params), DimensionError);
}

// Perturbing the deepest stage must move the shallowest one.
TEST(FuseStages, CrossStageSensitivity) {
  const std::array<std::size_t, 4> dims{8, 16, 32, 64};
  int moved = 0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    auto params = init_msce(dims, rng, {.scheme = InitScheme::random_all});
    auto pyr = random_pyramid(8, dims, rng);
    Tape tape;
    const Tensor before = fuse_stages(pyr.on(tape), params).stages.stages[0].value();
    for (double& v : pyr.values[3].data) v += rng.uniform(-0.5, 0.5);
    const Tensor after = fuse_stages(pyr.on(tape), params).stages.stages[0].value();
    if (oracle::max_abs_diff(before, after) > 1e-9) ++moved;
  }
  EXPECT_GE(moved, static_cast<int>(0.95 * seeds));
}

TEST(GlobalQuery, Examples) {
  Rng rng(4);
  Tensor row = oracle::random_tensor({1, 6}, rng), proj = oracle::random_tensor({6, 3}, rng);
  Tensor same({5, 6});
  for (std::size_t i = 0; i < 5; ++i) std::copy(row.data.begin(), row.data.end(), same.data.begin() + i * 6);
  Tape tape;
  const Tensor a = global_query(tape.constant(same), tape.constant(proj)).value();
  EXPECT_LE(oracle::max_abs_diff(a, oracle::tensor(oracle::matmul(oracle::rows(row), oracle::rows(proj)))), 1e-14);

  Tensor tokens = oracle::random_tensor({9, 6}, rng);
  const Tensor q = global_query(tape.constant(tokens), tape.constant(proj)).value();
  std::vector<std::vector<double>> mean(1, std::vector<double>(6, 0.0));
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 6; ++j) mean[0][j] += tokens.at({i, j}) / 9.0;
  EXPECT_LE(oracle::max_abs_diff(q, oracle::tensor(oracle::matmul(mean, oracle::rows(proj)))), 1e-12);

  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(perm);
    Tensor shuffled({9, 6});
    for (std::size_t i = 0; i < 9; ++i)
      std::copy_n(tokens.data.begin() + perm[i] * 6, 6, shuffled.data.begin() + i * 6);
    const Tensor qp = global_query(tape.constant(shuffled), tape.constant(proj)).value();
    // summation order changes, so allow the last bits to differ
    EXPECT_LE(oracle::max_abs_diff(q, qp), 1e-15);
  }
}

TEST(SeBlock, ZeroWeightsHalveInput) {
  Rng rng(5);
  auto p = init_se(8, 4, rng);
  zero(p.w1);
  zero(p.w2);
  Tensor x = oracle::random_tensor({4, 4, 8}, rng);
  Tape tape;
  const Tensor y = se_block(tape.constant(x), p).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data[i], x.data[i] / 2);
}

TEST(SeBlock, MatchesNaiveLoopAndGatesAreInterior) {
  Rng rng(6);
  const std::size_t H = 3, W = 5, C = 8, R = 2;
  SeParams p{oracle::random_tensor({C, C / R}, rng), oracle::random_tensor({C / R}, rng),
             oracle::random_tensor({C / R, C}, rng), oracle::random_tensor({C}, rng)};
  Tensor x = oracle::random_tensor({H, W, C}, rng, -3, 3);
  Tape tape;
  const Tensor y = se_block(tape.constant(x), p).value();
  std::vector<double> pool(C, 0.0), hid(C / R), gate(C);
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < C; ++c) pool[c] += x.data[i * C + c] / double(H * W);
  for (std::size_t h = 0; h < C / R; ++h) {
    double a = p.b1.data[h];
    for (std::size_t c = 0; c < C; ++c) a += pool[c] * p.w1.at({c, h});
    hid[h] = std::max(a, 0.0);
  }
  for (std::size_t c = 0; c < C; ++c) {
    double a = p.b2.data[c];
    for (std::size_t h = 0; h < C / R; ++h) a += hid[h] * p.w2.at({h, c});
    gate[c] = 1.0 / (1.0 + std::exp(-a));
    EXPECT_GT(gate[c], 0.0);
    EXPECT_LT(gate[c], 1.0);
  }
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(y.data[i * C + c], x.data[i * C + c] * gate[c], 1e-10);

  for (int trial = 0; trial < 10; ++trial) {
    Tensor big = oracle::random_tensor({2, 2, C}, rng, -1e3, 1e3);
    for (double g : se_gate(tape.constant(big), p).value().data) {
      EXPECT_GE(g, 0.0);
      EXPECT_LE(g, 1.0);
    }
  }
}

TEST(SeBlock, RatioMustDivide) {
  Rng rng(7);
  EXPECT_THROW(init_se(10, 4, rng), ConfigError);
}

TEST(MsceBridge, ZeroResidualsLeaveOnlyTheSeHalf) {
  Rng rng(8);
  const std::array<std::size_t, 4> dims{8, 16, 32, 64};
  auto params = init_msce(dims, rng, {.scheme = InitScheme::random_all});
  zero(params.fusion_attn.wo);
  for (auto& b : params.fet_blocks) {
    zero(b.wo);
    zero(b.wo_bias);
  }
  for (auto& s : params.se) {
    zero(s.w1);
    zero(s.b1);
    zero(s.w2);
    zero(s.b2);
  }
  auto pyr = random_pyramid(8, dims, rng);
  Tape tape;
  const auto out = msce_bridge(pyr.on(tape), params);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < pyr.values[i].size(); ++k)
      EXPECT_EQ(out.stages[i].value().data[k], 0.5 * pyr.values[i].data[k]);
}

TEST(MsceBridge, ShapeContract) {
  Rng rng(9);
  const std::array<std::size_t, 4> dims{16, 32, 64, 128};
  for (auto kind : {StageBlock::fet, StageBlock::standard}) {
    auto params = init_msce(dims, rng, {.block_kind = kind, .scheme = InitScheme::random_all});
    auto pyr = random_pyramid(16, dims, rng);
    Tape tape;
    const auto out = msce_bridge(pyr.on(tape), params);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(out.stages[i].shape(), pyr.values[i].shape);
      EXPECT_TRUE(out.stages[i].value().all_finite());
    }
  }
}

TEST(MsceBridge, Gradient) {
  // the full sampled check over every parameter lives in checks::msce_check
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto row = checks::msce_check(seed);
    EXPECT_TRUE(row.pass()) << row.result.worst << " " << row.result.max_rel_error;
  }
}
