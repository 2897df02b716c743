#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "epiray/attention.hpp"
#include "epiray/epipolar.hpp"
#include "epiray/guidance.hpp"
#include "epiray/metrics.hpp"
#include "epiray/io.hpp"
#include "epiray/random.hpp"
#include "epiray/tape.hpp"
#include "epiray/types.hpp"

namespace epiray::toydiff {

/// alpha(t) on [0,1] with sigma(t) = sqrt(1 - alpha^2).
struct NoiseSchedule {
  std::function<double(double)> alpha;

  double sigma(double t) const;
  static NoiseSchedule cosine();  // alpha(t) = cos(pi t / 2)
};

/// F x H x W x C tensor stored as (F*H*W) x C, pixel order row-major per
/// frame.
struct LatentVideo {
  MatX z;
  int frames = 0;
  int h = 0;
  int w = 0;
  int channels = 0;

  static LatentVideo zeros(int frames, int h, int w, int channels);
};

/// z_t = alpha(t) z0 + sigma(t) eps.
LatentVideo forward_noise(const LatentVideo& z0, double t,
                          const LatentVideo& eps,
                          const NoiseSchedule& schedule);

enum class AttentionVariant { epipolar, reference_only, full, temporal };

AttentionVariant variant_from_string(const std::string& name);
std::string to_string(AttentionVariant variant);

/// Masks for the cross-frame attention slot of the block, one per query
/// frame: the chosen strategy decides which key pixels stay visible.
std::vector<epipolar::EpipolarMask> variant_masks(
    AttentionVariant variant, const std::vector<geometry::CameraFrame>& frames,
    int h, int w, double delta, int n_registers);

struct DenoiserConfig {
  int feature_channels = 4;
  int model_width = 16;
  int ffn_hidden = 32;
  int n_registers = 2;
  int n_heads = 1;
  AttentionVariant variant = AttentionVariant::epipolar;
  double delta = 0.7071067811865476;
};

/// One camera-conditioned temporal block between linear input/output maps.
/// The optional guidance scales are reserved conditioning inputs; they are
/// accepted so callers can thread scale-distilled models through the same
/// signature, and are unused by the forward pass.
struct ToyDenoiser {
  DenoiserConfig config;
  attention::LinearLayer input_proj;
  attention::TemporalBlockParams block;
  attention::LinearLayer output_proj;

  static ToyDenoiser init(const DenoiserConfig& config, std::uint64_t seed);

  int parameter_count() const;

  /// Reference forward pass through the attention module.
  MatX forward(const MatX& zt, const MatX& plucker6,
               const std::vector<epipolar::EpipolarMask>& masks,
               std::optional<guidance::GuidanceScales> scales =
                   std::nullopt) const;

  /// Differentiable twin of forward; binds every parameter to `tape` and
  /// returns the prediction node.
  int forward_tape(Tape& tape, const MatX& zt, const MatX& plucker6,
                   const std::vector<epipolar::EpipolarMask>& masks);
};

/// Noised multi-view features with known geometry: n_points random 3D
/// points, each carrying a fixed feature vector splatted onto its projected
/// pixel in every frame it is visible in.
struct SyntheticScene {
  LatentVideo z0;
  std::vector<geometry::CameraFrame> cameras;  // world-to-camera, grid res
  MatX plucker6;                               // (F*h*w) x 6
  MatX points;                                 // n_points x 3, world
  MatX features;                               // n_points x channels
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> visibility;  // F x n
  metrics::Trajectory trajectory;
};

SyntheticScene make_synthetic_scene(int n_points,
                                    const metrics::Trajectory& trajectory,
                                    int h, int w, int channels,
                                    std::uint64_t seed);

using TimeSampler = std::function<double(RandomGen&)>;
TimeSampler uniform_time();
TimeSampler uniform_time(double t_min, double t_max);

/// Mean over the batch of |eps - model(z_t)|^2 / numel with t and eps drawn
/// per scene. When `tape` is non-null the graph is recorded there and
/// parameter gradients are available after tape->backward(<return node>).
/// Returns (loss value, loss node or -1).
std::pair<double, int> diffusion_loss(
    ToyDenoiser& model, const std::vector<SyntheticScene>& batch,
    const std::vector<std::vector<epipolar::EpipolarMask>>& batch_masks,
    const TimeSampler& t_sampler, RandomGen& rng,
    const NoiseSchedule& schedule, Tape* tape);

struct AblationConfig {
  std::uint64_t seed = 1;
  int steps = 500;
  int checkpoint_every = 50;
  std::vector<AttentionVariant> variants = {
      AttentionVariant::epipolar, AttentionVariant::reference_only,
      AttentionVariant::full, AttentionVariant::temporal};

  int n_scenes = 4;
  int n_points = 24;
  int frames = 8;
  int h = 4;
  int w = 4;
  int feature_channels = 4;
  io::TrajectoryKind trajectory = io::TrajectoryKind::orbit;
  io::SynthParams trajectory_params;

  int model_width = 16;
  int ffn_hidden = 32;
  int n_registers = 2;
  int n_heads = 1;
  double delta = 0.7071067811865476;
  double learning_rate = 1e-2;

  int val_draws_per_scene = 16;
  double val_t_min = 0.7;
  double val_t_max = 1.0;
};

struct CheckpointLoss {
  int step = 0;
  double train_loss = 0.0;
  double val_loss_high_noise = 0.0;
};

struct VariantCurve {
  AttentionVariant variant;
  std::vector<CheckpointLoss> points;
  bool diverged = false;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
};

struct AblationResult {
  AblationConfig config;
  std::vector<VariantCurve> curves;
};

/// Trains one model per variant from identical initialization, data order
/// and noise draws; validation uses fixed high-noise draws shared across
/// variants. Divergence (loss > 10x initial) stops that variant only.
AblationResult ablation_run(const AblationConfig& config);

void write_curves_csv(const AblationResult& result,
                      const std::filesystem::path& path);
void write_ablation_summary_json(const AblationResult& result,
                                 const std::filesystem::path& path);

AblationConfig ablation_config_from_json_file(
    const std::filesystem::path& path);
void write_ablation_config_json(const AblationConfig& config,
                                const std::filesystem::path& path);

}  // namespace epiray::toydiff
