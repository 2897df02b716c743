#include "epiray/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace epiray::attention {

namespace {

constexpr double kMaskSentinel = -1e9;

/// Single-head kernel on raw bits; registers already appended to k/v by
/// the caller.
MatX masked_softmax_attention(const MatX& q, const MatX& kv_keys,
                              const MatX& kv_values, int head_dim,
                              const MaskBits& bits, MatX* weights_out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  MatX logits = (q * kv_keys.transpose()) * scale;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!bits.row(r).any()) {
      throw std::invalid_argument(
          "masked_attention: mask row with no true entry");
    }
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (!bits(r, c)) {
        logits(r, c) = kMaskSentinel;
      }
    }
    const double row_max = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      double wv = bits(r, c) ? std::exp(logits(r, c) - row_max) : 0.0;
      logits(r, c) = wv;
      sum += wv;
    }
    logits.row(r) /= sum;
  }
  if (weights_out != nullptr) {
    *weights_out = logits;
  }
  return logits * kv_values;
}

}  // namespace

AttentionOutput masked_attention(const AttentionInput& input,
                                 const RegisterTokens& regs,
                                 const epipolar::EpipolarMask& mask,
                                 bool keep_weights) {
  const Eigen::Index hw = input.q.rows();
  const Eigen::Index keys = input.k.rows() + regs.count();
  if (mask.bits.rows() != hw || mask.bits.cols() != keys) {
    throw std::invalid_argument("masked_attention: mask shape mismatch");
  }
  if (input.head_dim <= 0) {
    throw std::invalid_argument("masked_attention: head_dim must be > 0");
  }
  MatX k(keys, input.k.cols());
  k << input.k, regs.keys;
  MatX v(keys, input.v.cols());
  v << input.v, regs.values;

  AttentionOutput out;
  MatX weights;
  out.out = masked_softmax_attention(input.q, k, v, input.head_dim, mask.bits,
                                     keep_weights ? &weights : nullptr);
  if (keep_weights) {
    out.weights = std::move(weights);
  }
  return out;
}

MaskBits same_location_mask_bits(int hw, int n_frames, int n_registers) {
  MaskBits bits = MaskBits::Constant(
      hw, static_cast<Eigen::Index>(n_frames) * hw + n_registers, false);
  for (int p = 0; p < hw; ++p) {
    for (int j = 0; j < n_frames; ++j) {
      bits(p, static_cast<Eigen::Index>(j) * hw + p) = true;
    }
  }
  bits.rightCols(n_registers) = true;
  return bits;
}

namespace {

epipolar::EpipolarMask wrap_bits(MaskBits bits, int hw, int n_frames,
                                 int n_registers) {
  epipolar::EpipolarMask mask;
  mask.h = 1;
  mask.w = hw;
  mask.n_frames = n_frames;
  mask.n_registers = n_registers;
  mask.bits = std::move(bits);
  return mask;
}

}  // namespace

AttentionOutput temporal_attention(const AttentionInput& input,
                                   const RegisterTokens& regs,
                                   bool keep_weights) {
  const int hw = static_cast<int>(input.q.rows());
  const int n = static_cast<int>(input.k.rows()) / hw;
  return masked_attention(
      input, regs,
      wrap_bits(same_location_mask_bits(hw, n, regs.count()), hw, n,
                regs.count()),
      keep_weights);
}

AttentionOutput full_attention(const AttentionInput& input,
                               const RegisterTokens& regs,
                               bool keep_weights) {
  const int hw = static_cast<int>(input.q.rows());
  const int n = static_cast<int>(input.k.rows()) / hw;
  MaskBits bits = MaskBits::Constant(
      hw, input.k.rows() + regs.count(), true);
  return masked_attention(input, regs,
                          wrap_bits(std::move(bits), hw, n, regs.count()),
                          keep_weights);
}

MatX LayerNorm::operator()(const MatX& x) const {
  MatX y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    y.row(r) =
        ((x.row(r).array() - mean) * inv * gamma.array() + beta.array())
            .matrix();
  }
  return y;
}

LayerNorm LayerNorm::identity(int channels) {
  return LayerNorm{RowVecX::Ones(channels), RowVecX::Zero(channels)};
}

MatX LinearLayer::operator()(const MatX& x) const {
  return (x * weight).rowwise() + bias;
}

LinearLayer LinearLayer::zero(int in, int out) {
  return LinearLayer{MatX::Zero(in, out), RowVecX::Zero(out)};
}

MatX gelu(const MatX& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  });
}

MatX multi_head_masked_attention(const MatX& q, const MatX& k, const MatX& v,
                                 const RegisterTokens& regs,
                                 const epipolar::EpipolarMask& mask,
                                 int n_heads) {
  const Eigen::Index c = q.cols();
  if (n_heads < 1 || c % n_heads != 0) {
    throw std::invalid_argument(
        "multi_head_masked_attention: channels must divide n_heads");
  }
  const Eigen::Index dh = c / n_heads;
  MatX out(q.rows(), c);
  for (int h = 0; h < n_heads; ++h) {
    AttentionInput head;
    head.q = q.middleCols(h * dh, dh);
    head.k = k.middleCols(h * dh, dh);
    head.v = v.middleCols(h * dh, dh);
    head.head_dim = static_cast<int>(dh);
    RegisterTokens head_regs{regs.keys.middleCols(h * dh, dh),
                             regs.values.middleCols(h * dh, dh)};
    out.middleCols(h * dh, dh) =
        masked_attention(head, head_regs, mask).out;
  }
  return out;
}

MatX self_attention(const MatX& x, const SelfAttentionParams& p) {
  const MatX q = x * p.wq;
  const MatX k = x * p.wk;
  const MatX v = x * p.wv;
  const int hw = static_cast<int>(x.rows());
  epipolar::EpipolarMask all_true =
      wrap_bits(MaskBits::Constant(hw, hw, true), hw, 1, 0);
  const RegisterTokens no_regs = RegisterTokens::none(static_cast<int>(q.cols()));
  return multi_head_masked_attention(q, k, v, no_regs, all_true, p.n_heads) *
         p.wo;
}

MatX cross_attention(const MatX& x, const MatX& context,
                     const CrossAttentionParams& p) {
  const MatX q = x * p.wq;
  const MatX k = context * p.wk;
  const MatX v = context * p.wv;
  MaskBits bits = MaskBits::Constant(x.rows(), context.rows(), true);
  epipolar::EpipolarMask all_true = wrap_bits(
      std::move(bits), static_cast<int>(x.rows()), 1, 0);
  const RegisterTokens no_regs = RegisterTokens::none(static_cast<int>(q.cols()));
  return multi_head_masked_attention(q, k, v, no_regs, all_true, p.n_heads) *
         p.wo;
}

MatX spatial_block(const MatX& x, const MatX& context,
                   const SpatialBlockParams& p) {
  MatX h = x;
  h += self_attention(p.ln_self(h), p.self_attn);
  h += cross_attention(p.ln_cross(h), context, p.cross_attn);
  h += p.ffn.out(gelu(p.ffn.in(p.ln_ffn(h))));
  return h;
}

namespace {

/// Same-location attention across frames: each pixel's F-row group runs
/// dense self attention with shared projections.
MatX temporal_self_attention(const MatX& x, int n_frames, int hw,
                             const SelfAttentionParams& p) {
  MatX out(x.rows(), x.cols());
  MatX group(n_frames, x.cols());
  for (int pix = 0; pix < hw; ++pix) {
    for (int f = 0; f < n_frames; ++f) {
      group.row(f) = x.row(static_cast<Eigen::Index>(f) * hw + pix);
    }
    const MatX g = self_attention(group, p);
    for (int f = 0; f < n_frames; ++f) {
      out.row(static_cast<Eigen::Index>(f) * hw + pix) = g.row(f);
    }
  }
  return out;
}

}  // namespace

MatX temporal_block_with_camera(const MatX& x, const MatX& plucker6,
                                const std::vector<epipolar::EpipolarMask>& masks,
                                const TemporalBlockParams& p) {
  if (masks.empty()) {
    throw std::invalid_argument("temporal_block_with_camera: no masks");
  }
  const int n_frames = masks.front().n_frames;
  const int hw = masks.front().h * masks.front().w;
  if (x.rows() != static_cast<Eigen::Index>(n_frames) * hw) {
    throw std::invalid_argument(
        "temporal_block_with_camera: token count does not match masks");
  }

  MatX h = x;
  h += p.fuse(p.ln_x(h) + p.ln_p(p.plucker_proj(plucker6)));

  {
    const MatX xn = p.ln_epi(h);
    const MatX k = xn * p.epi_attn.wk;
    const MatX v = xn * p.epi_attn.wv;
    MatX epi_out(h.rows(), h.cols());
    for (int i = 0; i < n_frames; ++i) {
      const MatX q = xn.middleRows(static_cast<Eigen::Index>(i) * hw, hw) *
                     p.epi_attn.wq;
      epi_out.middleRows(static_cast<Eigen::Index>(i) * hw, hw) =
          multi_head_masked_attention(q, k, v, p.registers, masks[i],
                                      p.epi_attn.n_heads) *
          p.epi_attn.wo;
    }
    h += epi_out;
  }

  h += temporal_self_attention(p.ln_t1(h), n_frames, hw, p.self1);
  h += temporal_self_attention(p.ln_t2(h), n_frames, hw, p.self2);
  h += p.ffn.out(gelu(p.ffn.in(p.ln_ffn(h))));
  return h;
}

}  // namespace epiray::attention
