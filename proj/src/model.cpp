#include "fet/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fet/init.hpp"
#include "fet/ops.hpp"

namespace fet::model {

using namespace fet::ops;

namespace {
const char* layer_kind_name(LayerKind k) { return k == LayerKind::fet ? "fet" : "standard"; }
}  // namespace

void ModelConfig::validate() const {
  if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("input extent " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be divisible by 32");
  }
  if (channels == 0) throw ConfigError("input needs at least one channel");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_dims[i] == 0 || stage_dims[i] % 4 != 0) {
      throw ConfigError("stage_dims[" + std::to_string(i) + "] = " + std::to_string(stage_dims[i]) +
                        " must be a positive multiple of 4");
    }
    if (i > 0 && stage_dims[i] <= stage_dims[i - 1]) throw ConfigError("stage_dims must be strictly increasing");
    if (se_ratio == 0 || stage_dims[i] % se_ratio != 0) throw ConfigError("se_ratio must divide every stage width");
    if (layer_kind == LayerKind::standard && (standard_heads == 0 || stage_dims[i] % standard_heads != 0)) {
      throw ConfigError("standard_heads must divide every stage width");
    }
  }
  if (pyramid_levels < 1) throw ConfigError("pyramid_levels must be >= 1");
  if (head != HeadKind::bilinear && head_channels == 0) throw ConfigError("head_channels must be positive");
  if (!(gauss_sigma > 0.0)) throw ConfigError("gauss_sigma must be positive");
  if (w_dice < 0.0 || w_ce < 0.0) throw ConfigError("loss weights must be non-negative");
}

std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::bilinear: return "bilinear";
    case HeadKind::stem: return "stem";
    case HeadKind::expand: return "expand";
  }
  return "?";
}

HeadKind parse_head_kind(const std::string& s) {
  if (s == "bilinear") return HeadKind::bilinear;
  if (s == "stem") return HeadKind::stem;
  if (s == "expand") return HeadKind::expand;
  throw ConfigError("unknown head '" + s + "' (bilinear, stem or expand)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"height", c.height},
                        {"width", c.width},
                        {"channels", c.channels},
                        {"stage_depths", c.stage_depths},
                        {"stage_dims", c.stage_dims},
                        {"num_classes", c.num_classes},
                        {"pyramid_levels", c.pyramid_levels},
                        {"gauss_sigma", c.gauss_sigma},
                        {"se_ratio", c.se_ratio},
                        {"w_dice", c.w_dice},
                        {"w_ce", c.w_ce},
                        {"use_msce", c.use_msce},
                        {"layer_kind", layer_kind_name(c.layer_kind)},
                        {"standard_heads", c.standard_heads},
                        {"head", head_kind_name(c.head)},
                        {"head_channels", c.head_channels}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.channels = j.value("channels", c.channels);
    if (j.contains("stage_depths")) c.stage_depths = j.at("stage_depths").get<std::array<std::size_t, 4>>();
    if (j.contains("stage_dims")) c.stage_dims = j.at("stage_dims").get<std::array<std::size_t, 4>>();
    c.num_classes = j.value("num_classes", c.num_classes);
    c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
    c.gauss_sigma = j.value("gauss_sigma", c.gauss_sigma);
    c.se_ratio = j.value("se_ratio", c.se_ratio);
    c.w_dice = j.value("w_dice", c.w_dice);
    c.w_ce = j.value("w_ce", c.w_ce);
    c.use_msce = j.value("use_msce", c.use_msce);
    c.head = parse_head_kind(j.value("head", head_kind_name(c.head)));
    c.head_channels = j.value("head_channels", c.head_channels);
    const std::string kind = j.value("layer_kind", std::string("fet"));
    if (kind == "fet") {
      c.layer_kind = LayerKind::fet;
    } else if (kind == "standard") {
      c.layer_kind = LayerKind::standard;
    } else {
      throw ConfigError("unknown layer_kind '" + kind + "'");
    }
    c.standard_heads = j.value("standard_heads", c.standard_heads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

Var patch_embed(Var x, Var w, Var b) {
  if (x.rank() != 3 || x.dim(0) % 4 != 0 || x.dim(1) % 4 != 0) {
    throw DimensionError("patch_embed needs extents divisible by 4, got " + shape_str(x.shape()));
  }
  return conv2d(x, w, b, {.stride = 4, .padding = 0, .groups = 1});
}

Var patch_merge(Var x, Var w, Var b) {
  if (x.rank() != 3 || x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0) {
    throw DimensionError("patch_merge needs even extents, got " + shape_str(x.shape()));
  }
  return conv2d(x, w, b, {.stride = 2, .padding = 0, .groups = 1});
}

Var patch_expand(Var x, Var w, Var b) { return linear(resample(x, Resample::up2_bilinear), w, b); }

SegmentationModel::SegmentationModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng root(seed, 0x6d6f64656cULL);
  const auto& d = cfg_.stage_dims;
  auto make_stack = [&](std::size_t dim, std::size_t depth, Rng& rng) {
    LayerStack s;
    for (std::size_t l = 0; l < depth; ++l) {
      if (cfg_.layer_kind == LayerKind::fet) {
        s.fet.push_back(init_fet_layer(dim, rng, cfg_.pyramid_levels, cfg_.gauss_sigma));
      } else {
        s.standard.push_back(init_standard_layer(dim, cfg_.standard_heads, rng));
      }
    }
    return s;
  };
  Rng rng = root.split(1);
  params_.embed_w = init::kaiming({4, 4, cfg_.channels, d[0]}, rng, 1.0);
  params_.embed_b = Tensor({d[0]});
  for (std::size_t s = 0; s < 4; ++s) {
    params_.encoder[s] = make_stack(d[s], cfg_.stage_depths[s], rng);
    if (s < 3) {
      params_.merge_w[s] = init::kaiming({2, 2, d[s], d[s + 1]}, rng, 1.0);
      params_.merge_b[s] = Tensor({d[s + 1]});
    }
  }
  Rng bridge_rng = root.split(2);
  if (cfg_.use_msce) {
    msce::MsceOptions opt;
    opt.pyramid_levels = cfg_.pyramid_levels;
    opt.gauss_sigma = cfg_.gauss_sigma;
    opt.se_ratio = cfg_.se_ratio;
    opt.block_kind = cfg_.layer_kind == LayerKind::fet ? msce::StageBlock::fet : msce::StageBlock::standard;
    opt.standard_heads = cfg_.standard_heads;
    params_.bridge = msce::init_msce(d, bridge_rng, opt);
  }
  Rng dec_rng = root.split(3);
  for (std::size_t s = 3; s-- > 0;) {
    params_.expand_w[s] = init::kaiming({d[s + 1], d[s]}, dec_rng, 1.0);
    params_.expand_b[s] = Tensor({d[s]});
    params_.fuse_w[s] = init::kaiming({2 * d[s], d[s]}, dec_rng, 1.0);
    params_.fuse_b[s] = Tensor({d[s]});
    params_.decoder[s] = make_stack(d[s], cfg_.stage_depths[s], dec_rng);
  }
  const std::size_t k = cfg_.head_channels;
  std::size_t head_in = d[0];
  if (cfg_.head == HeadKind::stem) {
    params_.stem_w = init::kaiming({3, 3, cfg_.channels, k}, dec_rng);
    params_.stem_b = Tensor({k});
    head_in += k;
  } else if (cfg_.head == HeadKind::expand) {
    params_.up4_w = init::kaiming({d[0], 16 * k}, dec_rng, 1.0);
    params_.up4_b = Tensor({16 * k});
    head_in = k;
  }
  params_.head_w = init::kaiming({head_in, cfg_.num_classes}, dec_rng, 1.0);
  params_.head_b = Tensor({cfg_.num_classes});
}

std::vector<std::pair<std::string, Tensor*>> SegmentationModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  params_.for_each_param([&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); }, cfg_.use_msce);
  return out;
}

std::size_t SegmentationModel::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t->size();
  return n;
}

Var SegmentationModel::run_stack(Var x, LayerStack& stack) {
  Tokens tok{flatten_spatial(x), x.dim(0), x.dim(1)};
  for (auto& layer : stack.fet) tok = fet_layer(tok, layer);
  for (auto& layer : stack.standard) tok = standard_layer(tok, layer);
  return unflatten_spatial(tok.x, tok.height, tok.width);
}

Var SegmentationModel::forward(Var x) {
  if (x.rank() != 3 || x.dim(0) != cfg_.height || x.dim(1) != cfg_.width || x.dim(2) != cfg_.channels) {
    throw DimensionError("model input " + shape_str(x.shape()) + " does not match configured " +
                         std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) + "x" +
                         std::to_string(cfg_.channels));
  }
  Tape& t = x.tape();
  auto& p = params_;
  std::vector<Var> feats;
  Var f = patch_embed(x, t.param(p.embed_w), t.param(p.embed_b));
  feats.push_back(run_stack(f, p.encoder[0]));
  for (std::size_t s = 1; s < 4; ++s) {
    f = patch_merge(feats.back(), t.param(p.merge_w[s - 1]), t.param(p.merge_b[s - 1]));
    feats.push_back(run_stack(f, p.encoder[s]));
  }
  std::vector<Var> skips = feats;
  if (cfg_.use_msce) skips = msce::msce_bridge(msce::StagePyramid{feats}, p.bridge).stages;

  Var y = skips[3];
  for (std::size_t s = 3; s-- > 0;) {
    Var up = patch_expand(y, t.param(p.expand_w[s]), t.param(p.expand_b[s]));
    Var merged = linear(concat({up, skips[s]}, 2), t.param(p.fuse_w[s]), t.param(p.fuse_b[s]));
    y = run_stack(merged, p.decoder[s]);
  }
  if (cfg_.head == HeadKind::bilinear) {
    // Pointwise classification commutes with bilinear interpolation (weights
    // sum to one), so classify at stage-1 resolution and upsample the logits.
    Var logits = linear(y, t.param(p.head_w), t.param(p.head_b));
    return resize_bilinear(logits, cfg_.height, cfg_.width);
  }
  if (cfg_.head == HeadKind::stem) {
    // Stride-4 features cannot place a 1-2 px structure; the stem conv gives the
    // pointwise head pixel-level evidence to do it.
    Var stem = gelu(conv2d(x, t.param(p.stem_w), t.param(p.stem_b), {.stride = 1, .padding = 1, .groups = 1}));
    Var up = resize_bilinear(y, cfg_.height, cfg_.width);
    return linear(concat({up, stem}, 2), t.param(p.head_w), t.param(p.head_b));
  }
  // each stage-1 token emits its own 4 x 4 patch of head features
  const std::size_t h = y.dim(0), w = y.dim(1), k = cfg_.head_channels;
  Var patches = reshape(linear(y, t.param(p.up4_w), t.param(p.up4_b)), {h, w, 4, 4, k});
  Var full = reshape(transpose(patches, {0, 2, 1, 3, 4}), {4 * h, 4 * w, k});
  return linear(full, t.param(p.head_w), t.param(p.head_b));
}

// ---- losses -----------------------------------------------------------------

namespace {
void check_pair(Var logits, Var target, const char* what) {
  if (logits.shape() != target.shape() || logits.rank() != 3) {
    throw DimensionError(std::string(what) + ": logits " + shape_str(logits.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
}
}  // namespace

Var dice_loss(Var logits, Var target_onehot, double smooth) {
  check_pair(logits, target_onehot, "dice_loss");
  const std::size_t n = logits.dim(0) * logits.dim(1), k = logits.dim(2);
  Var probs = softmax(reshape(logits, {n, k}), 1);
  Var target = reshape(target_onehot, {n, k});
  Var inter = sum_axis(mul(probs, target), 0);
  Var denom = add(sum_axis(probs, 0), sum_axis(target, 0));
  Var dice = div(add_scalar(scale(inter, 2.0), smooth), add_scalar(denom, smooth));
  return add_scalar(neg(mean(dice)), 1.0);
}

Var cross_entropy(Var logits, Var target_onehot) {
  check_pair(logits, target_onehot, "cross_entropy");
  const std::size_t n = logits.dim(0) * logits.dim(1), k = logits.dim(2);
  Var logp = log_softmax(reshape(logits, {n, k}), 1);
  return scale(sum(mul(logp, reshape(target_onehot, {n, k}))), -1.0 / static_cast<double>(n));
}

LossTerms combined_loss(Var logits, Var target_onehot, double w_dice, double w_ce) {
  Var d = dice_loss(logits, target_onehot);
  Var c = cross_entropy(logits, target_onehot);
  return LossTerms{add(scale(d, w_dice), scale(c, w_ce)), d, c};
}

Tensor one_hot(const std::vector<int>& labels, std::size_t height, std::size_t width, std::size_t classes) {
  if (labels.size() != height * width) throw DimensionError("one_hot: label count does not match extent");
  Tensor t({height, width, classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DimensionError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) +
                           ")");
    }
    t.data[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

// ---- metrics ----------------------------------------------------------------

LabelMap argmax_labels(const Tensor& logits) {
  if (logits.rank() != 3) throw DimensionError("argmax_labels expects H x W x K");
  LabelMap m{logits.dim(0), logits.dim(1), {}};
  const std::size_t k = logits.dim(2);
  m.labels.resize(m.height * m.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const double* row = &logits.data[i * k];
    m.labels[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return m;
}

double metric_dsc(const LabelMap& pred, const LabelMap& target, int c) {
  if (pred.labels.size() != target.labels.size()) throw DimensionError("metric_dsc: label maps differ in size");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == c, t = target.labels[i] == c;
    a += p;
    b += t;
    both += p && t;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

Mask Mask::of_class(const LabelMap& m, int c) {
  Mask out{m.height, m.width, std::vector<std::uint8_t>(m.labels.size(), 0)};
  for (std::size_t i = 0; i < m.labels.size(); ++i) out.on[i] = m.labels[i] == c;
  return out;
}

namespace {
std::vector<std::pair<double, double>> boundary_points(const Mask& m) {
  std::vector<std::pair<double, double>> pts;
  auto inside = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(m.height) &&
           x < static_cast<std::ptrdiff_t>(m.width) && m.on[static_cast<std::size_t>(y) * m.width +
                                                             static_cast<std::size_t>(x)];
  };
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.on[y * m.width + x]) continue;
      const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
      if (!inside(yy - 1, xx) || !inside(yy + 1, xx) || !inside(yy, xx - 1) || !inside(yy, xx + 1)) {
        pts.emplace_back(static_cast<double>(y), static_cast<double>(x));
      }
    }
  }
  return pts;
}

double directed(const std::vector<std::pair<double, double>>& from, const std::vector<std::pair<double, double>>& to) {
  double worst = 0.0;
  for (auto [y, x] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [v, u] : to) best = std::min(best, (y - v) * (y - v) + (x - u) * (x - u));
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}
}  // namespace

double metric_hausdorff(const Mask& pred, const Mask& target) {
  if (pred.height != target.height || pred.width != target.width) {
    throw DimensionError("metric_hausdorff: masks differ in size");
  }
  const auto a = boundary_points(pred), b = boundary_points(target);
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) {
    return std::hypot(static_cast<double>(pred.height), static_cast<double>(pred.width));
  }
  return std::max(directed(a, b), directed(b, a));
}

// ---- optimizer --------------------------------------------------------------

void Sgd::step(const std::vector<std::pair<std::string, Tensor*>>& params, Precision precision) {
  if (buffers_.empty()) {
    for (const auto& [name, t] : params) buffers_.emplace_back(t->shape);
  }
  if (buffers_.size() != params.size()) throw ContractError("Sgd: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    Tensor& v = buffers_[i];
    const auto& g = p.ensure_grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      v.data[k] = round_to(precision, momentum_ * v.data[k] + g[k] + weight_decay_ * p.data[k]);
      p.data[k] = round_to(precision, p.data[k] - lr_ * v.data[k]);
    }
  }
}

}  // namespace fet::model
