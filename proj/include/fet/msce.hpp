#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "fet/attention.hpp"
#include "fet/fet.hpp"

namespace fet::msce {

inline constexpr std::size_t kStages = 4;

/// Encoder features F_1..F_4 (H_i x W_i x C_i), each stage half the extent of the previous.
struct StagePyramid {
  std::vector<Var> stages;
  void validate() const;
};

struct SeParams {
  Tensor w1, b1, w2, b2;  // C x C/r, C/r, C/r x C, C

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    f(prefix + "w1", w1);
    f(prefix + "b1", b1);
    f(prefix + "w2", w2);
    f(prefix + "b2", b2);
  }
};

SeParams init_se(std::size_t channels, std::size_t ratio, Rng& rng);

// Squeeze (global average pool), excite (C -> C/r -> ReLU -> C -> logistic), rescale channels.
Var se_block(Var x, SeParams& p);
// The per-channel gate in (0, 1), shape [C].
Var se_gate(Var x, SeParams& p);

enum class StageBlock { fet, standard };

struct MsceParams {
  std::size_t common_dim = 0;
  std::array<Tensor, kStages> proj_in;   // C_i x C
  std::array<Tensor, kStages> proj_out;  // C x C_i
  LayerNormParams fusion_ln;
  attention::AttentionParams fusion_attn;  // efficient, C x C
  std::array<Tensor, kStages> query_proj;  // C x (query width of stage block)
  StageBlock block_kind = StageBlock::fet;
  std::vector<FetBlockParams> fet_blocks;             // block_kind == fet
  std::vector<attention::AttentionParams> std_blocks;  // block_kind == standard
  std::array<SeParams, kStages> se;
  std::size_t se_ratio = 4;

  template <class F>
  void for_each_param(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::string s = prefix + "stage" + std::to_string(i + 1) + ".";
      f(s + "proj_in", proj_in[i]);
      f(s + "proj_out", proj_out[i]);
      f(s + "query_proj", query_proj[i]);
      if (block_kind == StageBlock::fet) {
        fet_blocks[i].for_each_param(s + "fet.", f);
      } else {
        std_blocks[i].for_each_param(s + "attn.", f);
      }
      se[i].for_each_param(s + "se.", f);
    }
    fusion_ln.for_each_param(prefix + "fusion_ln.", f);
    fusion_attn.for_each_param(prefix + "fusion_attn.", f);
  }
};

struct MsceOptions {
  std::size_t pyramid_levels = 3;
  double gauss_sigma = 1.0;
  std::size_t se_ratio = 4;
  StageBlock block_kind = StageBlock::fet;
  std::size_t standard_heads = 2;
  InitScheme scheme = InitScheme::identity_residual;
};

// Common fusion depth is the stage-1 width.
MsceParams init_msce(const std::array<std::size_t, kStages>& stage_dims, Rng& rng, const MsceOptions& opt = {});

struct FusionResult {
  StagePyramid stages;  // F_i + back-projected fused context, original shapes
  Var tokens;           // fused token sequence after attention, (sum n_i) x C
};

// Project each stage to the common depth, concatenate token sequences, apply
// LN + efficient attention, split back and add to each stage residually.
FusionResult fuse_stages(const StagePyramid& p, MsceParams& params);

// Mean over tokens followed by a learned projection: 1 x C_out.
Var global_query(Var tokens, Var projection);

// Full bridge: fusion, per-stage block driven by the global query, then SE.
StagePyramid msce_bridge(const StagePyramid& p, MsceParams& params);

}  // namespace fet::msce
