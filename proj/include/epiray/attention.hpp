#pragma once

#include <optional>
#include <vector>

#include "epiray/epipolar.hpp"
#include "epiray/types.hpp"

namespace epiray::attention {

/// q is (hw x c) for one query frame, k/v are (N*hw x c) over all frames.
/// head_dim feeds the 1/sqrt(d) logit scale.
struct AttentionInput {
  MatX q;
  MatX k;
  MatX v;
  int head_dim = 0;
};

/// Learnable key/value rows appended to every attention call, R x c each.
struct RegisterTokens {
  MatX keys;
  MatX values;

  int count() const { return static_cast<int>(keys.rows()); }
  static RegisterTokens none(int channels) {
    return RegisterTokens{MatX::Zero(0, channels), MatX::Zero(0, channels)};
  }
};

struct AttentionOutput {
  MatX out;
  std::optional<MatX> weights;  // (hw x (N*hw + R)), kept on request
};

/// Softmax attention with boolean masking. Masked logits get a -1e9
/// sentinel before the softmax and their weights are zeroed exactly.
/// Throws when a mask row has no true entry.
AttentionOutput masked_attention(const AttentionInput& input,
                                 const RegisterTokens& regs,
                                 const epipolar::EpipolarMask& mask,
                                 bool keep_weights = false);

/// Mask bits allowing each query pixel to see only its own location in
/// every frame, registers last.
MaskBits same_location_mask_bits(int hw, int n_frames, int n_registers);

/// masked_attention under the same-location mask.
AttentionOutput temporal_attention(const AttentionInput& input,
                                   const RegisterTokens& regs,
                                   bool keep_weights = false);

/// masked_attention under the all-true mask.
AttentionOutput full_attention(const AttentionInput& input,
                               const RegisterTokens& regs,
                               bool keep_weights = false);

struct LayerNorm {
  RowVecX gamma;
  RowVecX beta;
  double eps = 1e-5;

  MatX operator()(const MatX& x) const;
  static LayerNorm identity(int channels);
};

struct LinearLayer {
  MatX weight;  // in x out
  RowVecX bias;

  MatX operator()(const MatX& x) const;
  static LinearLayer zero(int in, int out);
};

struct SelfAttentionParams {
  MatX wq, wk, wv, wo;  // c x c
  int n_heads = 1;
};

struct CrossAttentionParams {
  MatX wq, wk, wv, wo;  // query maps c x c; key/value map c_ctx x c
  int n_heads = 1;
};

struct FeedForward {
  LinearLayer in;   // c -> hidden
  LinearLayer out;  // hidden -> c
};

MatX gelu(const MatX& x);

/// Dense multi-head self attention over the rows of x.
MatX self_attention(const MatX& x, const SelfAttentionParams& p);

/// Multi-head attention of x rows against context rows.
MatX cross_attention(const MatX& x, const MatX& context,
                     const CrossAttentionParams& p);

/// Multi-head masked attention: per-head slices of the projected q/k/v and
/// register rows run through the single-head kernel, outputs concatenated.
MatX multi_head_masked_attention(const MatX& q, const MatX& k, const MatX& v,
                                 const RegisterTokens& regs,
                                 const epipolar::EpipolarMask& mask,
                                 int n_heads);

struct SpatialBlockParams {
  LayerNorm ln_self;
  SelfAttentionParams self_attn;
  LayerNorm ln_cross;
  CrossAttentionParams cross_attn;
  LayerNorm ln_ffn;
  FeedForward ffn;
};

/// x += SelfAttn(PreNorm(x)); x += CrossAttn(PreNorm(x), ctx);
/// x += FFN(PreNorm(x)).
MatX spatial_block(const MatX& x, const MatX& context,
                   const SpatialBlockParams& p);

struct TemporalBlockParams {
  LinearLayer plucker_proj;  // 6 -> c
  LayerNorm ln_x;
  LayerNorm ln_p;
  LinearLayer fuse;  // c -> c
  LayerNorm ln_epi;
  SelfAttentionParams epi_attn;
  RegisterTokens registers;
  LayerNorm ln_t1;
  SelfAttentionParams self1;
  LayerNorm ln_t2;
  SelfAttentionParams self2;
  LayerNorm ln_ffn;
  FeedForward ffn;
};

/// Residual block over all frames' tokens (N*hw x c):
///   x += Linear(PreNorm(x) + PreNorm(proj(plucker)))
///   x += EpipolarAttn(PreNorm(x), masks)          [per query frame]
///   x += SelfAttn1(PreNorm(x))                    [same-location, temporal]
///   x += SelfAttn2(PreNorm(x))
///   x += FFN(PreNorm(x))
/// masks holds one EpipolarMask per query frame at a single level.
MatX temporal_block_with_camera(const MatX& x, const MatX& plucker6,
                                const std::vector<epipolar::EpipolarMask>& masks,
                                const TemporalBlockParams& p);

}  // namespace epiray::attention
