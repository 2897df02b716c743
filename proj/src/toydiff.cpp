#include "epiray/toydiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace epiray::toydiff {

double NoiseSchedule::sigma(double t) const {
  const double a = alpha(t);
  return std::sqrt(std::max(0.0, 1.0 - a * a));
}

NoiseSchedule NoiseSchedule::cosine() {
  return NoiseSchedule{[](double t) { return std::cos(M_PI * t / 2.0); }};
}

LatentVideo LatentVideo::zeros(int frames, int h, int w, int channels) {
  LatentVideo v;
  v.frames = frames;
  v.h = h;
  v.w = w;
  v.channels = channels;
  v.z = MatX::Zero(static_cast<Eigen::Index>(frames) * h * w, channels);
  return v;
}

LatentVideo forward_noise(const LatentVideo& z0, double t,
                          const LatentVideo& eps,
                          const NoiseSchedule& schedule) {
  if (t < 0.0 || t > 1.0) {
    throw std::invalid_argument("forward_noise: t must be in [0,1]");
  }
  if (eps.z.rows() != z0.z.rows() || eps.z.cols() != z0.z.cols()) {
    throw std::invalid_argument("forward_noise: eps shape mismatch");
  }
  LatentVideo out = z0;
  out.z = schedule.alpha(t) * z0.z + schedule.sigma(t) * eps.z;
  return out;
}

AttentionVariant variant_from_string(const std::string& name) {
  if (name == "epipolar") return AttentionVariant::epipolar;
  if (name == "reference_only") return AttentionVariant::reference_only;
  if (name == "full") return AttentionVariant::full;
  if (name == "temporal") return AttentionVariant::temporal;
  throw std::invalid_argument(
      "unknown attention variant '" + name +
      "' (valid: epipolar, reference_only, full, temporal)");
}

std::string to_string(AttentionVariant variant) {
  switch (variant) {
    case AttentionVariant::epipolar: return "epipolar";
    case AttentionVariant::reference_only: return "reference_only";
    case AttentionVariant::full: return "full";
    case AttentionVariant::temporal: return "temporal";
  }
  return "unknown";
}

std::vector<epipolar::EpipolarMask> variant_masks(
    AttentionVariant variant, const std::vector<geometry::CameraFrame>& frames,
    int h, int w, double delta, int n_registers) {
  const int n = static_cast<int>(frames.size());
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  std::vector<epipolar::EpipolarMask> masks;
  masks.reserve(n);
  for (int i = 0; i < n; ++i) {
    switch (variant) {
      case AttentionVariant::epipolar:
        masks.push_back(epipolar::build_mask(frames, i, h, w, delta,
                                             n_registers));
        break;
      case AttentionVariant::reference_only:
        masks.push_back(epipolar::reference_frame_mask(frames, i, h, w, delta,
                                                       n_registers));
        break;
      case AttentionVariant::full: {
        epipolar::EpipolarMask m;
        m.h = h;
        m.w = w;
        m.n_frames = n;
        m.n_registers = n_registers;
        m.query_frame = i;
        m.bits = MaskBits::Constant(hw, n * hw + n_registers, true);
        masks.push_back(std::move(m));
        break;
      }
      case AttentionVariant::temporal: {
        epipolar::EpipolarMask m;
        m.h = h;
        m.w = w;
        m.n_frames = n;
        m.n_registers = n_registers;
        m.query_frame = i;
        m.bits = attention::same_location_mask_bits(static_cast<int>(hw), n,
                                                    n_registers);
        masks.push_back(std::move(m));
        break;
      }
    }
  }
  return masks;
}

namespace {

attention::SelfAttentionParams random_attention(RandomGen& rng, int c,
                                                int n_heads) {
  const double s = 1.0 / std::sqrt(static_cast<double>(c));
  attention::SelfAttentionParams p;
  p.wq = rng.normal_matrix(c, c, s);
  p.wk = rng.normal_matrix(c, c, s);
  p.wv = rng.normal_matrix(c, c, s);
  p.wo = rng.normal_matrix(c, c, 0.1 * s);
  p.n_heads = n_heads;
  return p;
}

attention::LinearLayer random_linear(RandomGen& rng, int in, int out,
                                     double scale) {
  return attention::LinearLayer{rng.normal_matrix(in, out, scale),
                                RowVecX::Zero(out)};
}

}  // namespace

ToyDenoiser ToyDenoiser::init(const DenoiserConfig& config,
                              std::uint64_t seed) {
  RandomGen rng(seed);
  const int c = config.model_width;
  ToyDenoiser model;
  model.config = config;
  model.input_proj = random_linear(
      rng, config.feature_channels, c,
      1.0 / std::sqrt(static_cast<double>(config.feature_channels)));

  attention::TemporalBlockParams& b = model.block;
  b.plucker_proj = random_linear(rng, 6, c, 1.0 / std::sqrt(6.0));
  b.ln_x = attention::LayerNorm::identity(c);
  b.ln_p = attention::LayerNorm::identity(c);
  b.fuse = random_linear(rng, c, c, 0.1 / std::sqrt(static_cast<double>(c)));
  b.ln_epi = attention::LayerNorm::identity(c);
  b.epi_attn = random_attention(rng, c, config.n_heads);
  b.registers = attention::RegisterTokens{
      rng.normal_matrix(config.n_registers, c,
                        1.0 / std::sqrt(static_cast<double>(c))),
      rng.normal_matrix(config.n_registers, c,
                        1.0 / std::sqrt(static_cast<double>(c)))};
  b.ln_t1 = attention::LayerNorm::identity(c);
  b.self1 = random_attention(rng, c, config.n_heads);
  b.ln_t2 = attention::LayerNorm::identity(c);
  b.self2 = random_attention(rng, c, config.n_heads);
  b.ln_ffn = attention::LayerNorm::identity(c);
  b.ffn.in = random_linear(rng, c, config.ffn_hidden,
                           1.0 / std::sqrt(static_cast<double>(c)));
  b.ffn.out =
      random_linear(rng, config.ffn_hidden, c,
                    0.1 / std::sqrt(static_cast<double>(config.ffn_hidden)));

  model.output_proj =
      random_linear(rng, c, config.feature_channels,
                    0.01 / std::sqrt(static_cast<double>(c)));
  return model;
}

int ToyDenoiser::parameter_count() const {
  auto linear = [](const attention::LinearLayer& l) {
    return l.weight.size() + l.bias.size();
  };
  auto ln = [](const attention::LayerNorm& l) {
    return l.gamma.size() + l.beta.size();
  };
  auto attn = [](const attention::SelfAttentionParams& a) {
    return a.wq.size() + a.wk.size() + a.wv.size() + a.wo.size();
  };
  Eigen::Index n = linear(input_proj) + linear(output_proj);
  n += linear(block.plucker_proj) + ln(block.ln_x) + ln(block.ln_p) +
       linear(block.fuse);
  n += ln(block.ln_epi) + attn(block.epi_attn) + block.registers.keys.size() +
       block.registers.values.size();
  n += ln(block.ln_t1) + attn(block.self1) + ln(block.ln_t2) +
       attn(block.self2);
  n += ln(block.ln_ffn) + linear(block.ffn.in) + linear(block.ffn.out);
  return static_cast<int>(n);
}

MatX ToyDenoiser::forward(const MatX& zt, const MatX& plucker6,
                          const std::vector<epipolar::EpipolarMask>& masks,
                          std::optional<guidance::GuidanceScales>) const {
  const MatX x = input_proj(zt);
  const MatX h = attention::temporal_block_with_camera(x, plucker6, masks,
                                                       block);
  return output_proj(h);
}

namespace {

struct LinearNodes {
  int w = -1, b = -1;
};
struct LayerNormNodes {
  int gamma = -1, beta = -1;
};
struct AttnNodes {
  int wq = -1, wk = -1, wv = -1, wo = -1;
  int n_heads = 1;
};

struct DenoiserNodes {
  LinearNodes input, plucker, fuse, out;
  LayerNormNodes ln_x, ln_p, ln_epi, ln_t1, ln_t2, ln_ffn;
  AttnNodes epi, self1, self2;
  int reg_k = -1, reg_v = -1;
  LinearNodes ffn_in, ffn_out;
};

LinearNodes bind(Tape& t, attention::LinearLayer& l) {
  return LinearNodes{t.param(l.weight), t.param(l.bias)};
}

LayerNormNodes bind(Tape& t, attention::LayerNorm& l) {
  return LayerNormNodes{t.param(l.gamma), t.param(l.beta)};
}

AttnNodes bind(Tape& t, attention::SelfAttentionParams& a) {
  return AttnNodes{t.param(a.wq), t.param(a.wk), t.param(a.wv), t.param(a.wo),
                   a.n_heads};
}

DenoiserNodes bind_denoiser(Tape& t, ToyDenoiser& m) {
  DenoiserNodes n;
  n.input = bind(t, m.input_proj);
  n.plucker = bind(t, m.block.plucker_proj);
  n.ln_x = bind(t, m.block.ln_x);
  n.ln_p = bind(t, m.block.ln_p);
  n.fuse = bind(t, m.block.fuse);
  n.ln_epi = bind(t, m.block.ln_epi);
  n.epi = bind(t, m.block.epi_attn);
  n.reg_k = t.param(m.block.registers.keys);
  n.reg_v = t.param(m.block.registers.values);
  n.ln_t1 = bind(t, m.block.ln_t1);
  n.self1 = bind(t, m.block.self1);
  n.ln_t2 = bind(t, m.block.ln_t2);
  n.self2 = bind(t, m.block.self2);
  n.ln_ffn = bind(t, m.block.ln_ffn);
  n.ffn_in = bind(t, m.block.ffn.in);
  n.ffn_out = bind(t, m.block.ffn.out);
  n.out = bind(t, m.output_proj);
  return n;
}

int tape_linear(Tape& t, int x, const LinearNodes& l) {
  return t.add_rowvec(t.matmul(x, l.w), l.b);
}

int tape_layer_norm(Tape& t, int x, const LayerNormNodes& l) {
  return t.layer_norm(x, l.gamma, l.beta);
}

/// Multi-head attention of pre-normalized tokens against keys/values kk/vv
/// (register rows already appended) under `bits`; result is projected by wo.
int tape_attention(Tape& t, int x_norm, int kk, int vv, const AttnNodes& a,
                   const MaskBits& bits) {
  const Eigen::Index c = t.value(x_norm).cols();
  const Eigen::Index dh = c / a.n_heads;
  const int q = t.matmul(x_norm, a.wq);
  int heads = -1;
  for (int h = 0; h < a.n_heads; ++h) {
    const int qh = t.cols(q, h * dh, dh);
    const int kh = t.cols(kk, h * dh, dh);
    const int vh = t.cols(vv, h * dh, dh);
    const int logits = t.scale(t.matmul(qh, t.transpose(kh)),
                               1.0 / std::sqrt(static_cast<double>(dh)));
    const int w = t.masked_softmax(logits, &bits);
    const int oh = t.matmul(w, vh);
    heads = (heads < 0) ? oh : t.hcat(heads, oh);
  }
  return t.matmul(heads, a.wo);
}

MaskBits stacked_epipolar_bits(
    const std::vector<epipolar::EpipolarMask>& masks) {
  const Eigen::Index hw = masks.front().bits.rows();
  const Eigen::Index cols = masks.front().bits.cols();
  MaskBits bits(hw * static_cast<Eigen::Index>(masks.size()), cols);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    bits.middleRows(static_cast<Eigen::Index>(i) * hw, hw) = masks[i].bits;
  }
  return bits;
}

MaskBits full_same_location_bits(int n_frames, int hw) {
  const Eigen::Index total = static_cast<Eigen::Index>(n_frames) * hw;
  MaskBits bits = MaskBits::Constant(total, total, false);
  for (int i = 0; i < n_frames; ++i) {
    for (int p = 0; p < hw; ++p) {
      for (int j = 0; j < n_frames; ++j) {
        bits(static_cast<Eigen::Index>(i) * hw + p,
             static_cast<Eigen::Index>(j) * hw + p) = true;
      }
    }
  }
  return bits;
}

int forward_denoiser(Tape& t, const DenoiserNodes& n, const MatX& zt,
                     const MatX& plucker6,
                     const std::vector<epipolar::EpipolarMask>& masks) {
  const int n_frames = masks.front().n_frames;
  const int hw = masks.front().h * masks.front().w;

  const int zt_node = t.constant(zt);
  const int p6_node = t.constant(plucker6);

  int x = tape_linear(t, zt_node, n.input);
  const int p = tape_linear(t, p6_node, n.plucker);
  x = t.add(x, tape_linear(t, t.add(tape_layer_norm(t, x, n.ln_x),
                                    tape_layer_norm(t, p, n.ln_p)),
                           n.fuse));

  {
    const MaskBits bits = stacked_epipolar_bits(masks);
    const int xn = tape_layer_norm(t, x, n.ln_epi);
    const int kk = t.vcat(t.matmul(xn, n.epi.wk), n.reg_k);
    const int vv = t.vcat(t.matmul(xn, n.epi.wv), n.reg_v);
    x = t.add(x, tape_attention(t, xn, kk, vv, n.epi, bits));
  }

  const MaskBits same_loc = full_same_location_bits(n_frames, hw);
  const std::pair<const LayerNormNodes*, const AttnNodes*> temporal_passes[] =
      {{&n.ln_t1, &n.self1}, {&n.ln_t2, &n.self2}};
  for (const auto& [ln, attn] : temporal_passes) {
    const int xn = tape_layer_norm(t, x, *ln);
    const int kk = t.matmul(xn, attn->wk);
    const int vv = t.matmul(xn, attn->wv);
    x = t.add(x, tape_attention(t, xn, kk, vv, *attn, same_loc));
  }

  {
    const int xn = tape_layer_norm(t, x, n.ln_ffn);
    const int hdn = t.gelu(tape_linear(t, xn, n.ffn_in));
    x = t.add(x, tape_linear(t, hdn, n.ffn_out));
  }
  return tape_linear(t, x, n.out);
}

}  // namespace

int ToyDenoiser::forward_tape(Tape& tape, const MatX& zt, const MatX& plucker6,
                              const std::vector<epipolar::EpipolarMask>& masks) {
  const DenoiserNodes nodes = bind_denoiser(tape, *this);
  return forward_denoiser(tape, nodes, zt, plucker6, masks);
}

SyntheticScene make_synthetic_scene(int n_points,
                                    const metrics::Trajectory& trajectory,
                                    int h, int w, int channels,
                                    std::uint64_t seed) {
  if (n_points < 1 || trajectory.size() < 2) {
    throw std::invalid_argument("make_synthetic_scene: bad parameters");
  }
  const int frames = trajectory.size();
  RandomGen rng(seed);

  SyntheticScene scene;
  scene.trajectory = trajectory;
  scene.cameras.reserve(frames);
  for (const geometry::CameraPose& c2w : trajectory.frames) {
    geometry::CameraFrame frame;
    frame.intrinsics = geometry::CameraIntrinsics{
        static_cast<double>(w), static_cast<double>(w),
        w / 2.0,               h / 2.0,
        w,                     h};
    frame.pose = geometry::camera_to_world(c2w);  // invert to world-to-camera
    scene.cameras.push_back(frame);
  }

  scene.features = rng.normal_matrix(n_points, channels);
  scene.points.resize(n_points, 3);
  for (int i = 0; i < n_points; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double z = rng.uniform(2.0, 6.0);
      const double x = rng.uniform(-0.45, 0.45) * z;
      const double y = rng.uniform(-0.45, 0.45) * z * h / w;
      const Vec3 p(x, y, z);
      placed = true;
      for (const geometry::CameraFrame& cam : scene.cameras) {
        const Vec3 in_cam = cam.pose.rotation * p + cam.pose.translation;
        if (in_cam.z() < 0.1) {
          placed = false;
          break;
        }
      }
      if (placed) {
        scene.points.row(i) = p.transpose();
      }
    }
    if (!placed) {
      throw std::runtime_error(
          "make_synthetic_scene: could not place a point in front of all "
          "cameras");
    }
  }

  scene.z0 = LatentVideo::zeros(frames, h, w, channels);
  scene.visibility =
      Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
          frames, n_points, false);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < n_points; ++i) {
      const auto uv =
          geometry::project_point(scene.cameras[f], scene.points.row(i));
      if (!uv.has_value()) {
        continue;
      }
      const int px = static_cast<int>(std::floor(uv->x()));
      const int py = static_cast<int>(std::floor(uv->y()));
      if (px < 0 || px >= w || py < 0 || py >= h) {
        continue;
      }
      scene.z0.z.row(f * hw + static_cast<Eigen::Index>(py) * w + px) +=
          scene.features.row(i);
      scene.visibility(f, i) = true;
    }
  }

  scene.plucker6.resize(static_cast<Eigen::Index>(frames) * hw, 6);
  for (int f = 0; f < frames; ++f) {
    scene.plucker6.middleRows(f * hw, hw) =
        geometry::plucker_grid(scene.cameras[f], h, w, f).rays;
  }
  return scene;
}

TimeSampler uniform_time() { return uniform_time(0.0, 1.0); }

TimeSampler uniform_time(double t_min, double t_max) {
  return [t_min, t_max](RandomGen& rng) { return rng.uniform(t_min, t_max); };
}

std::pair<double, int> diffusion_loss(
    ToyDenoiser& model, const std::vector<SyntheticScene>& batch,
    const std::vector<std::vector<epipolar::EpipolarMask>>& batch_masks,
    const TimeSampler& t_sampler, RandomGen& rng,
    const NoiseSchedule& schedule, Tape* tape) {
  if (batch.empty() || batch.size() != batch_masks.size()) {
    throw std::invalid_argument("diffusion_loss: empty or mismatched batch");
  }
  if (tape != nullptr) {
    const DenoiserNodes nodes = bind_denoiser(*tape, model);
    int total = -1;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const SyntheticScene& scene = batch[s];
      const double t = t_sampler(rng);
      const MatX eps =
          rng.normal_matrix(scene.z0.z.rows(), scene.z0.z.cols());
      const MatX zt =
          schedule.alpha(t) * scene.z0.z + schedule.sigma(t) * eps;
      const int pred =
          forward_denoiser(*tape, nodes, zt, scene.plucker6, batch_masks[s]);
      const int mse = tape->mean_sq_error(pred, eps);
      total = (total < 0) ? mse : tape->add(total, mse);
    }
    const int loss =
        tape->scale(total, 1.0 / static_cast<double>(batch.size()));
    return {tape->scalar(loss), loss};
  }

  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const SyntheticScene& scene = batch[s];
    const double t = t_sampler(rng);
    const MatX eps = rng.normal_matrix(scene.z0.z.rows(), scene.z0.z.cols());
    const MatX zt = schedule.alpha(t) * scene.z0.z + schedule.sigma(t) * eps;
    const MatX pred = model.forward(zt, scene.plucker6, batch_masks[s]);
    total += (pred - eps).squaredNorm() / static_cast<double>(eps.size());
  }
  return {total / static_cast<double>(batch.size()), -1};
}

namespace {

struct ValDraw {
  double t = 0.0;
  MatX eps;
};

double eval_val_loss(const ToyDenoiser& model,
                     const std::vector<SyntheticScene>& scenes,
                     const std::vector<std::vector<epipolar::EpipolarMask>>&
                         batch_masks,
                     const std::vector<std::vector<ValDraw>>& draws,
                     const NoiseSchedule& schedule) {
  double total = 0.0;
  int count = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    for (const ValDraw& d : draws[s]) {
      const MatX zt =
          schedule.alpha(d.t) * scenes[s].z0.z + schedule.sigma(d.t) * d.eps;
      const MatX pred =
          model.forward(zt, scenes[s].plucker6, batch_masks[s]);
      total += (pred - d.eps).squaredNorm() / static_cast<double>(d.eps.size());
      ++count;
    }
  }
  return total / count;
}

}  // namespace

AblationResult ablation_run(const AblationConfig& config) {
  if (config.variants.empty()) {
    throw std::invalid_argument("ablation_run: no variants");
  }
  const NoiseSchedule schedule = NoiseSchedule::cosine();
  const metrics::Trajectory trajectory = io::synth_trajectory(
      config.trajectory, config.frames, config.seed, config.trajectory_params);

  std::vector<SyntheticScene> scenes;
  scenes.reserve(config.n_scenes);
  for (int s = 0; s < config.n_scenes; ++s) {
    scenes.push_back(make_synthetic_scene(
        config.n_points, trajectory, config.h, config.w,
        config.feature_channels,
        config.seed ^ (0x9e3779b97f4a7c15ULL * (s + 1))));
  }

  // Fixed high-noise validation draws, shared across variants.
  std::vector<std::vector<ValDraw>> val_draws(scenes.size());
  {
    RandomGen vrng(config.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      for (int d = 0; d < config.val_draws_per_scene; ++d) {
        ValDraw draw;
        draw.t = vrng.uniform(config.val_t_min, config.val_t_max);
        draw.eps = vrng.normal_matrix(scenes[s].z0.z.rows(),
                                      scenes[s].z0.z.cols());
        val_draws[s].push_back(std::move(draw));
      }
    }
  }

  AblationResult result;
  result.config = config;
  for (AttentionVariant variant : config.variants) {
    DenoiserConfig dc;
    dc.feature_channels = config.feature_channels;
    dc.model_width = config.model_width;
    dc.ffn_hidden = config.ffn_hidden;
    dc.n_registers = config.n_registers;
    dc.n_heads = config.n_heads;
    dc.variant = variant;
    dc.delta = config.delta;

    const std::vector<epipolar::EpipolarMask> masks = variant_masks(
        variant, scenes.front().cameras, config.h, config.w, config.delta,
        config.n_registers);
    const std::vector<std::vector<epipolar::EpipolarMask>> batch_masks(
        scenes.size(), masks);

    ToyDenoiser model = ToyDenoiser::init(dc, config.seed);
    RandomGen train_rng(config.seed ^ 0x5deece66dULL);
    const TimeSampler t_sampler = uniform_time();

    VariantCurve curve;
    curve.variant = variant;

    const double initial_train =
        diffusion_loss(model, scenes, batch_masks, t_sampler, train_rng,
                       schedule, nullptr)
            .first;
    curve.initial_train_loss = initial_train;
    double last_train = initial_train;
    curve.points.push_back(CheckpointLoss{
        0, initial_train,
        eval_val_loss(model, scenes, batch_masks, val_draws, schedule)});

    try {
      for (int step = 1; step <= config.steps; ++step) {
        Tape tape;
        const auto [loss, node] = diffusion_loss(
            model, scenes, batch_masks, t_sampler, train_rng, schedule, &tape);
        last_train = loss;
        if (loss > 10.0 * initial_train) {
          curve.diverged = true;
          break;
        }
        tape.backward(node);
        tape.sgd_step(config.learning_rate);
        if (step % config.checkpoint_every == 0 || step == config.steps) {
          curve.points.push_back(CheckpointLoss{
              step, loss,
              eval_val_loss(model, scenes, batch_masks, val_draws, schedule)});
        }
      }
    } catch (const std::runtime_error&) {
      // Non-finite forward value; treat as divergence and keep going with
      // the remaining variants.
      curve.diverged = true;
    }

    curve.final_train_loss = last_train;
    curve.final_val_loss = curve.points.back().val_loss_high_noise;
    result.curves.push_back(std::move(curve));
  }
  return result;
}

void write_curves_csv(const AblationResult& result,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_curves_csv: cannot open " + path.string());
  }
  out.precision(17);
  out << "step,variant,t_bucket,loss\n";
  for (const VariantCurve& curve : result.curves) {
    for (const CheckpointLoss& p : curve.points) {
      out << p.step << "," << to_string(curve.variant) << ",train," << p.train_loss
          << "\n";
      out << p.step << "," << to_string(curve.variant) << ",val_high_noise,"
          << p.val_loss_high_noise << "\n";
    }
  }
}

namespace {

nlohmann::json config_to_json(const AblationConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["steps"] = c.steps;
  j["checkpoint_every"] = c.checkpoint_every;
  std::vector<std::string> variants;
  for (AttentionVariant v : c.variants) {
    variants.push_back(to_string(v));
  }
  j["variants"] = variants;
  j["n_scenes"] = c.n_scenes;
  j["n_points"] = c.n_points;
  j["frames"] = c.frames;
  j["h"] = c.h;
  j["w"] = c.w;
  j["feature_channels"] = c.feature_channels;
  j["trajectory"] = io::to_string(c.trajectory);
  j["trajectory_params"] = {
      {"translation_step", c.trajectory_params.translation_step},
      {"pan_deg_per_frame", c.trajectory_params.pan_deg_per_frame},
      {"orbit_radius", c.trajectory_params.orbit_radius},
      {"orbit_deg_per_frame", c.trajectory_params.orbit_deg_per_frame},
      {"smooth_noise", c.trajectory_params.smooth_noise}};
  j["model_width"] = c.model_width;
  j["ffn_hidden"] = c.ffn_hidden;
  j["n_registers"] = c.n_registers;
  j["n_heads"] = c.n_heads;
  j["delta"] = c.delta;
  j["learning_rate"] = c.learning_rate;
  j["val_draws_per_scene"] = c.val_draws_per_scene;
  j["val_t_min"] = c.val_t_min;
  j["val_t_max"] = c.val_t_max;
  return j;
}

}  // namespace

void write_ablation_summary_json(const AblationResult& result,
                                 const std::filesystem::path& path) {
  nlohmann::json j;
  j["config"] = config_to_json(result.config);
  nlohmann::json curves = nlohmann::json::array();
  std::vector<std::pair<double, std::string>> order;
  for (const VariantCurve& c : result.curves) {
    nlohmann::json jc;
    jc["variant"] = to_string(c.variant);
    jc["diverged"] = c.diverged;
    jc["initial_train_loss"] = c.initial_train_loss;
    jc["final_train_loss"] = c.final_train_loss;
    jc["final_val_loss_high_noise"] = c.final_val_loss;
    curves.push_back(std::move(jc));
    if (!c.diverged) {
      order.emplace_back(c.final_val_loss, to_string(c.variant));
    }
  }
  j["curves"] = std::move(curves);
  std::sort(order.begin(), order.end());
  std::vector<std::string> ranking;
  for (const auto& [loss, name] : order) {
    ranking.push_back(name);
  }
  j["ranking_by_val_loss"] = ranking;

  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_ablation_summary_json: cannot open " +
                             path.string());
  }
  out << j.dump(2) << "\n";
}

AblationConfig ablation_config_from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("ablation config: cannot open " + path.string());
  }
  nlohmann::json j;
  in >> j;
  AblationConfig c;
  c.seed = j.value("seed", c.seed);
  c.steps = j.value("steps", c.steps);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  if (j.contains("variants")) {
    c.variants.clear();
    for (const auto& v : j["variants"]) {
      c.variants.push_back(variant_from_string(v.get<std::string>()));
    }
  }
  c.n_scenes = j.value("n_scenes", c.n_scenes);
  c.n_points = j.value("n_points", c.n_points);
  c.frames = j.value("frames", c.frames);
  c.h = j.value("h", c.h);
  c.w = j.value("w", c.w);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  if (j.contains("trajectory")) {
    c.trajectory =
        io::trajectory_kind_from_string(j["trajectory"].get<std::string>());
  }
  if (j.contains("trajectory_params")) {
    const auto& p = j["trajectory_params"];
    c.trajectory_params.translation_step =
        p.value("translation_step", c.trajectory_params.translation_step);
    c.trajectory_params.pan_deg_per_frame =
        p.value("pan_deg_per_frame", c.trajectory_params.pan_deg_per_frame);
    c.trajectory_params.orbit_radius =
        p.value("orbit_radius", c.trajectory_params.orbit_radius);
    c.trajectory_params.orbit_deg_per_frame = p.value(
        "orbit_deg_per_frame", c.trajectory_params.orbit_deg_per_frame);
    c.trajectory_params.smooth_noise =
        p.value("smooth_noise", c.trajectory_params.smooth_noise);
  }
  c.model_width = j.value("model_width", c.model_width);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.n_registers = j.value("n_registers", c.n_registers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.delta = j.value("delta", c.delta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.val_draws_per_scene = j.value("val_draws_per_scene", c.val_draws_per_scene);
  c.val_t_min = j.value("val_t_min", c.val_t_min);
  c.val_t_max = j.value("val_t_max", c.val_t_max);
  return c;
}

void write_ablation_config_json(const AblationConfig& config,
                                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_ablation_config_json: cannot open " +
                             path.string());
  }
  out << config_to_json(config).dump(2) << "\n";
}

}  // namespace epiray::toydiff
