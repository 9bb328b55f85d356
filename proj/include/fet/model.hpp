#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fet/fet.hpp"
#include "fet/msce.hpp"

namespace fet::model {

enum class LayerKind { fet, standard };
enum class HeadKind { bilinear, stem, expand };
std::string head_kind_name(HeadKind k);
HeadKind parse_head_kind(const std::string& s);

struct ModelConfig {
  std::size_t height = 64, width = 64, channels = 1;
  std::array<std::size_t, 4> stage_depths{1, 1, 1, 1};
  std::array<std::size_t, 4> stage_dims{16, 32, 64, 128};
  std::size_t num_classes = 4;
  std::size_t pyramid_levels = 3;
  double gauss_sigma = 1.0;
  std::size_t se_ratio = 4;
  double w_dice = 0.6;
  double w_ce = 0.4;
  bool use_msce = true;
  LayerKind layer_kind = LayerKind::fet;
  std::size_t standard_heads = 2;
  // bilinear: upsample decoder features 4x, pointwise classifier.
  // stem: as bilinear, with a 3x3 full-resolution conv of the input concatenated in.
  // expand: learned 4x patch expansion (pixel shuffle) to head_channels, then classify.
  HeadKind head = HeadKind::stem;
  std::size_t head_channels = 8;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LayerStack {
  std::vector<FetLayerParams> fet;
  std::vector<StandardLayerParams> standard;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < fet.size(); ++i) fet[i].for_each_param(prefix + std::to_string(i) + ".", f);
    for (std::size_t i = 0; i < standard.size(); ++i) {
      standard[i].for_each_param(prefix + std::to_string(i) + ".", f);
    }
  }
};

struct ModelParams {
  Tensor embed_w, embed_b;                     // 4 x 4 x Cin x d1, d1
  std::array<LayerStack, 4> encoder;
  std::array<Tensor, 3> merge_w, merge_b;      // 2 x 2 x d_i x d_{i+1}
  msce::MsceParams bridge;                     // present when use_msce
  std::array<Tensor, 3> expand_w, expand_b;    // d_{i+1} x d_i (pointwise after 2x upsampling)
  std::array<Tensor, 3> fuse_w, fuse_b;        // 2 d_i x d_i (skip + expanded path)
  std::array<LayerStack, 3> decoder;           // stages 1..3
  Tensor stem_w, stem_b;                       // stem head: 3 x 3 x Cin x k
  Tensor up4_w, up4_b;                         // expand head: d1 x 16k
  Tensor head_w, head_b;                       // (d1 | d1 + k | k) x classes

  template <class F>
  void for_each_param(F&& f, bool with_bridge) {
    f("embed.w", embed_w);
    f("embed.b", embed_b);
    for (std::size_t s = 0; s < 4; ++s) {
      encoder[s].for_each_param("enc" + std::to_string(s + 1) + ".", f);
      if (s < 3) {
        f("merge" + std::to_string(s + 1) + ".w", merge_w[s]);
        f("merge" + std::to_string(s + 1) + ".b", merge_b[s]);
      }
    }
    if (with_bridge) bridge.for_each_param("msce.", f);
    for (std::size_t s = 3; s-- > 0;) {
      const std::string tag = std::to_string(s + 1);
      f("expand" + tag + ".w", expand_w[s]);
      f("expand" + tag + ".b", expand_b[s]);
      f("fuse" + tag + ".w", fuse_w[s]);
      f("fuse" + tag + ".b", fuse_b[s]);
      decoder[s].for_each_param("dec" + tag + ".", f);
    }
    if (stem_w.rank() > 0) {  // default-constructed unless the head uses it
      f("stem.w", stem_w);
      f("stem.b", stem_b);
    }
    if (up4_w.rank() > 0) {
      f("up4.w", up4_w);
      f("up4.b", up4_b);
    }
    f("head.w", head_w);
    f("head.b", head_b);
  }
};

/// Configuration plus parameters of the U-shaped segmentation network.
class SegmentationModel {
 public:
  SegmentationModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }

  // Named parameters in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::size_t parameter_count();

  // x: H x W x Cin -> logits H x W x classes.
  Var forward(Var x);

 private:
  Var run_stack(Var x, LayerStack& stack);

  ModelConfig cfg_;
  ModelParams params_;
};

Var patch_embed(Var x, Var w, Var b);
Var patch_merge(Var x, Var w, Var b);
Var patch_expand(Var x, Var w, Var b);

// ---- losses -----------------------------------------------------------------

// Soft Dice over softmax(logits), averaged across classes. logits, onehot: H x W x K.
Var dice_loss(Var logits, Var target_onehot, double smooth = 1e-5);
// Mean pixelwise negative log-softmax of the target class.
Var cross_entropy(Var logits, Var target_onehot);

struct LossTerms {
  Var total, dice, ce;
};
LossTerms combined_loss(Var logits, Var target_onehot, double w_dice = 0.6, double w_ce = 0.4);

Tensor one_hot(const std::vector<int>& labels, std::size_t height, std::size_t width, std::size_t classes);

// ---- metrics ----------------------------------------------------------------

struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<int> labels;
};

LabelMap argmax_labels(const Tensor& logits);

// 2|A n B| / (|A| + |B|) for class c; 1 when both masks are empty.
double metric_dsc(const LabelMap& pred, const LabelMap& target, int c);

struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> on;

  static Mask of_class(const LabelMap& m, int c);
};

// Symmetric Hausdorff distance between mask boundaries (pixels with a
// 4-neighbor outside the mask). 0 when both masks are empty; the image
// diagonal when exactly one is.
double metric_hausdorff(const Mask& pred, const Mask& target);

// ---- optimizer --------------------------------------------------------------

/// v <- mu v + g + lambda p;  p <- p - lr v.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay) : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<std::pair<std::string, Tensor*>>& params, Precision precision = Precision::f64);

  std::vector<Tensor>& buffers() { return buffers_; }
  double lr() const { return lr_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor> buffers_;
};

}  // namespace fet::model
