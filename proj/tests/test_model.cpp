#include <gtest/gtest.h>

#include <cmath>

#include "fet/checks.hpp"
#include "fet/model.hpp"
#include "fet/ops.hpp"
#include "oracles.hpp"

using namespace fet;
using namespace fet::model;

namespace {

LabelMap labels(std::size_t h, std::size_t w, std::vector<int> v) { return {h, w, std::move(v)}; }

Mask mask(std::size_t h, std::size_t w, const std::vector<int>& on) {
  Mask m{h, w, std::vector<std::uint8_t>(on.size())};
  for (std::size_t i = 0; i < on.size(); ++i) m.on[i] = static_cast<std::uint8_t>(on[i]);
  return m;
}

ModelConfig toy() { return ModelConfig{}; }

}  // namespace

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(toy().validate());
  auto c = toy();
  c.height = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.stage_dims = {16, 32, 32, 64};
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.stage_dims = {16, 30, 64, 128};
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(SegmentationModel(c, 0), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = toy();
  c.layer_kind = LayerKind::standard;
  c.use_msce = false;
  c.head = HeadKind::expand;
  c.stage_depths = {2, 1, 1, 3};
  const auto j = to_json(c);
  EXPECT_EQ(to_json(model_config_from_json(j)), j);
  EXPECT_DOUBLE_EQ(j.at("w_dice").get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(j.at("w_ce").get<double>(), 0.4);
}

TEST(Patches, ShapeArithmetic) {
  Rng rng(1);
  Tape tape;
  const std::size_t d = 8;
  auto x = tape.constant(oracle::random_tensor({224, 224, 1}, rng));
  auto e = patch_embed(x, tape.constant(oracle::random_tensor({4, 4, 1, d}, rng)), tape.constant(Tensor({d})));
  EXPECT_EQ(e.shape(), (Shape{56, 56, d}));
  auto m = patch_merge(e, tape.constant(oracle::random_tensor({2, 2, d, 2 * d}, rng)), tape.constant(Tensor({2 * d})));
  EXPECT_EQ(m.shape(), (Shape{28, 28, 2 * d}));
  auto u = patch_expand(m, tape.constant(oracle::random_tensor({2 * d, d}, rng)), tape.constant(Tensor({d})));
  EXPECT_EQ(u.shape(), (Shape{56, 56, d}));
  EXPECT_THROW(patch_embed(tape.constant(Tensor({10, 12, 1})), tape.constant(Tensor({4, 4, 1, d})),
                           tape.constant(Tensor({d}))),
               DimensionError);
  EXPECT_THROW(patch_merge(tape.constant(Tensor({5, 6, d})), tape.constant(Tensor({2, 2, d, 2 * d})),
                           tape.constant(Tensor({2 * d}))),
               DimensionError);
}

TEST(Forward, OutputShapeAndDeterminism) {
  for (auto kind : {LayerKind::fet, LayerKind::standard}) {
    auto cfg = toy();
    cfg.layer_kind = kind;
    SegmentationModel m(cfg, 3);
    Rng rng(2);
    Tensor x = oracle::random_tensor({64, 64, 1}, rng, 0, 1);
    Tape t1, t2;
    const Tensor a = m.forward(t1.constant(x)).value();
    const Tensor b = m.forward(t2.constant(x)).value();
    EXPECT_EQ(a.shape, (Shape{64, 64, 4}));
    EXPECT_TRUE(a.all_finite());
    EXPECT_EQ(a.data, b.data);
    // softmax over the class axis sums to one
    Tape t3;
    const Tensor p = ops::softmax(t3.constant(a), 2).value();
    for (std::size_t i = 0; i < 64 * 64; ++i)
      EXPECT_NEAR(p.data[4 * i] + p.data[4 * i + 1] + p.data[4 * i + 2] + p.data[4 * i + 3], 1.0, 1e-12);
  }
}

TEST(Forward, SameSeedSameParameters) {
  SegmentationModel a(toy(), 7), b(toy(), 7), c(toy(), 8);
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second->data, pb[i].second->data);
    differs = differs || pa[i].second->data != pc[i].second->data;
  }
  EXPECT_TRUE(differs);
}

TEST(Forward, HeadVariantsAndNoBridge) {
  Rng rng(4);
  Tensor x = oracle::random_tensor({32, 32, 1}, rng, 0, 1);
  for (auto head : {HeadKind::bilinear, HeadKind::stem, HeadKind::expand}) {
    for (bool bridge : {true, false}) {
      auto cfg = toy();
      cfg.height = cfg.width = 32;
      cfg.head = head;
      cfg.use_msce = bridge;
      SegmentationModel m(cfg, 1);
      Tape t;
      EXPECT_EQ(m.forward(t.constant(x)).shape(), (Shape{32, 32, 4}));
    }
  }
}

TEST(Forward, SampledGradientCheck) {
  const auto row = checks::model_check(0);
  EXPECT_TRUE(row.pass()) << row.result.worst << " " << row.result.max_rel_error;
}

TEST(DiceLoss, Examples) {
  Tape tape;
  const auto target = one_hot({0, 1, 1, 0}, 2, 2, 2);
  Tensor perfect({2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) perfect.data[2 * i + (i == 1 || i == 2)] = 60.0;
  EXPECT_LE(dice_loss(tape.constant(perfect), tape.constant(target)).value().item(), 1e-6);
  Tensor wrong({2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) wrong.data[2 * i + !(i == 1 || i == 2)] = 60.0;
  EXPECT_NEAR(dice_loss(tape.constant(wrong), tape.constant(target)).value().item(), 1.0, 1e-5);  // s / (4 + s) per class

  // uniform prediction, all-class-0 target on 4 pixels:
  // class 0: (2*2 + s)/(2 + 4 + s); class 1: s/(2 + s)
  const double s = 1e-5;
  const double expected = 1.0 - 0.5 * ((4.0 + s) / (6.0 + s) + s / (2.0 + s));
  const auto zeros = one_hot({0, 0, 0, 0}, 2, 2, 2);
  EXPECT_NEAR(dice_loss(tape.constant(Tensor({2, 2, 2})), tape.constant(zeros)).value().item(), expected, 1e-15);
  EXPECT_THROW(dice_loss(tape.constant(Tensor({2, 2, 3})), tape.constant(zeros)), DimensionError);
}

TEST(CombinedLoss, WeightsAndRecomputation) {
  Rng rng(5);
  Tensor logits = oracle::random_tensor({4, 3, 5}, rng, -3, 3);
  std::vector<int> lab(12);
  for (int& l : lab) l = static_cast<int>(rng.below(5));
  const Tensor target = one_hot(lab, 4, 3, 5);
  Tape tape;
  const auto terms = combined_loss(tape.constant(logits), tape.constant(target));
  EXPECT_EQ(terms.total.value().item(), 0.6 * terms.dice.value().item() + 0.4 * terms.ce.value().item());
  EXPECT_GE(terms.total.value().item(), 0.0);

  // independent recomputation from the definitions
  double ce = 0.0;
  std::vector<double> inter(5, 0.0), ps(5, 0.0), ts(5, 0.0);
  for (std::size_t i = 0; i < 12; ++i) {
    double mx = -1e300, z = 0.0;
    for (std::size_t k = 0; k < 5; ++k) mx = std::max(mx, logits.data[5 * i + k]);
    for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits.data[5 * i + k] - mx);
    for (std::size_t k = 0; k < 5; ++k) {
      const double p = std::exp(logits.data[5 * i + k] - mx) / z, t = k == std::size_t(lab[i]) ? 1.0 : 0.0;
      inter[k] += p * t;
      ps[k] += p;
      ts[k] += t;
    }
    ce -= (logits.data[5 * i + lab[i]] - mx - std::log(z)) / 12.0;
  }
  double dice = 0.0;
  for (std::size_t k = 0; k < 5; ++k) dice += (2 * inter[k] + 1e-5) / (ps[k] + ts[k] + 1e-5) / 5.0;
  EXPECT_NEAR(terms.ce.value().item(), ce, 1e-10);
  EXPECT_NEAR(terms.dice.value().item(), 1.0 - dice, 1e-10);
  EXPECT_NEAR(terms.total.value().item(), 0.6 * (1.0 - dice) + 0.4 * ce, 1e-10);

  Tensor sure({4, 3, 5});
  for (std::size_t i = 0; i < 12; ++i) sure.data[5 * i + lab[i]] = 50.0;
  EXPECT_LE(combined_loss(tape.constant(sure), tape.constant(target)).total.value().item(), 1e-6);
}

TEST(Metrics, DiceExamples) {
  const auto a = labels(2, 2, {1, 1, 0, 0}), b = labels(2, 2, {1, 0, 0, 0});
  EXPECT_EQ(metric_dsc(a, a, 1), 1.0);
  EXPECT_NEAR(metric_dsc(b, a, 1), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(metric_dsc(a, b, 1), metric_dsc(b, a, 1));
  EXPECT_EQ(metric_dsc(a, b, 3), 1.0);  // both empty
}

TEST(Metrics, HausdorffOfShiftedSquare) {
  // 2x2 square at (1,1) vs the same square one pixel right, on a 4x4 grid
  const std::vector<int> a{0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0};
  const std::vector<int> b{0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0};
  const double hd = metric_hausdorff(mask(4, 4, a), mask(4, 4, b));
  EXPECT_DOUBLE_EQ(hd, oracle::hausdorff(a, b, 4, 4));
  EXPECT_DOUBLE_EQ(hd, 1.0);
  EXPECT_EQ(metric_hausdorff(mask(4, 4, b), mask(4, 4, a)), hd);
  EXPECT_EQ(metric_hausdorff(mask(4, 4, a), mask(4, 4, a)), 0.0);
}

TEST(Metrics, HausdorffMatchesBruteForceOnRandomMasks) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const int H = 4 + static_cast<int>(rng.below(8)), W = 4 + static_cast<int>(rng.below(8));
    std::vector<int> a(H * W), b(H * W);
    for (int& v : a) v = rng.uniform() < 0.4;
    for (int& v : b) v = rng.uniform() < 0.4;
    a[0] = b[H * W - 1] = 1;  // never empty
    EXPECT_NEAR(metric_hausdorff(mask(H, W, a), mask(H, W, b)), oracle::hausdorff(a, b, H, W), 1e-12);
  }
}

TEST(Metrics, EmptyMaskConventions) {
  const std::vector<int> none(16, 0), one{1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(metric_hausdorff(mask(4, 4, none), mask(4, 4, none)), 0.0);
  EXPECT_DOUBLE_EQ(metric_hausdorff(mask(4, 4, none), mask(4, 4, one)), std::hypot(4.0, 4.0));
  EXPECT_DOUBLE_EQ(metric_hausdorff(mask(4, 4, one), mask(4, 4, none)), std::hypot(4.0, 4.0));
}

TEST(Sgd, SingleStepAndMomentumSeries) {
  Tensor p({1}, {0.0});
  p.ensure_grad()[0] = 1.0;
  Sgd plain(0.1, 0.0, 0.0);
  plain.step({{"p", &p}});
  EXPECT_DOUBLE_EQ(p.data[0], -0.1);

  Tensor q({1}, {0.0});
  q.ensure_grad()[0] = 1.0;
  Sgd mom(0.1, 0.9, 0.0);
  mom.step({{"q", &q}});
  mom.step({{"q", &q}});
  // v1 = 1, v2 = 1.9; p = -0.1 (1 + 1.9)
  EXPECT_DOUBLE_EQ(q.data[0], -0.1 * (1.0 + 1.9));
  EXPECT_DOUBLE_EQ(mom.buffers()[0].data[0], 1.9);

  Tensor r({1}, {2.0});
  r.ensure_grad()[0] = 0.0;
  Sgd decay(0.5, 0.0, 0.1);
  decay.step({{"r", &r}});
  EXPECT_DOUBLE_EQ(r.data[0], 2.0 - 0.5 * 0.2);
}

TEST(Sgd, QuadraticBowlConverges) {
  Rng rng(7);
  Tensor p = oracle::random_tensor({10}, rng, -1, 1);
  Sgd opt(0.05, 0.9, 0.0);
  for (int step = 0; step < 200; ++step) {
    p.ensure_grad() = p.data;  // grad of 0.5 |p|^2
    opt.step({{"p", &p}});
  }
  EXPECT_LT(std::sqrt(p.squared_norm()), 1e-3);
}

TEST(OneHot, RejectsBadLabels) {
  EXPECT_THROW(one_hot({0, 4}, 1, 2, 4), DimensionError);
  EXPECT_THROW(one_hot({0, 1, 2}, 1, 2, 4), DimensionError);
}
