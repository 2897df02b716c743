#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "epiray/toydiff.hpp"

using namespace epiray;
using namespace epiray::toydiff;

namespace {

/// Convenience wrapper for single-op gradient checks: builds the graph with
/// `graph` (binding params to the tape), reduces the result to a scalar via
/// mean_sq_error against zero, and compares analytic vs. finite-difference
/// gradients of every parameter.
double check_op_gradients(std::vector<MatX>& params,
                          const std::function<int(Tape&, std::vector<int>&)>&
                              graph,
                          double h = 1e-5) {
  auto build = [&](Tape& tape) {
    std::vector<int> ids;
    ids.reserve(params.size());
    for (MatX& p : params) {
      ids.push_back(tape.param(p));
    }
    return graph(tape, ids);
  };
  Tape tape;
  const int out = build(tape);
  const int loss = tape.mean_sq_error(
      out, MatX::Zero(tape.value(out).rows(), tape.value(out).cols()));
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const MatX analytic = tape.grad(tape.bound_params()[p].second);
    for (Eigen::Index r = 0; r < params[p].rows(); ++r) {
      for (Eigen::Index c = 0; c < params[p].cols(); ++c) {
        const double saved = params[p](r, c);
        auto eval = [&]() {
          Tape t2;
          const int o = build(t2);
          const int l = t2.mean_sq_error(
              o, MatX::Zero(t2.value(o).rows(), t2.value(o).cols()));
          return t2.scalar(l);
        };
        params[p](r, c) = saved + h;
        const double up = eval();
        params[p](r, c) = saved - h;
        const double down = eval();
        params[p](r, c) = saved;
        const double fd = (up - down) / (2.0 * h);
        const double err =
            std::abs(fd - analytic(r, c)) /
            std::max({1.0, std::abs(fd), std::abs(analytic(r, c))});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

SyntheticScene small_scene(int frames = 2, int h = 2, int w = 2, int c = 2,
                           std::uint64_t seed = 5) {
  const metrics::Trajectory traj = io::synth_trajectory(
      io::TrajectoryKind::orbit, frames, seed,
      io::SynthParams{.orbit_deg_per_frame = 8.0});
  return make_synthetic_scene(6, traj, h, w, c, seed);
}

}  // namespace

TEST_CASE("cosine schedule") {
  const NoiseSchedule s = NoiseSchedule::cosine();
  CHECK(s.alpha(0.0) == doctest::Approx(1.0));
  CHECK(s.alpha(1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.alpha(0.5) == doctest::Approx(0.7071067811865476).epsilon(1e-12));
  SUBCASE("alpha^2 + sigma^2 = 1 on a dense sweep") {
    for (int i = 0; i <= 1000; ++i) {
      const double t = i / 1000.0;
      const double a = s.alpha(t);
      const double sg = s.sigma(t);
      CHECK(std::abs(a * a + sg * sg - 1.0) < 1e-12);
    }
  }
  SUBCASE("alpha is monotone nonincreasing") {
    double prev = s.alpha(0.0);
    for (int i = 1; i <= 100; ++i) {
      const double cur = s.alpha(i / 100.0);
      CHECK(cur <= prev + 1e-15);
      prev = cur;
    }
  }
}

TEST_CASE("forward_noise") {
  RandomGen rng(501);
  const NoiseSchedule s = NoiseSchedule::cosine();
  LatentVideo z0 = LatentVideo::zeros(2, 2, 2, 3);
  z0.z = rng.normal_matrix(8, 3);
  LatentVideo eps = z0;
  eps.z = rng.normal_matrix(8, 3);

  SUBCASE("t = 0 returns z0 exactly") {
    const LatentVideo zt = forward_noise(z0, 0.0, eps, s);
    CHECK((zt.z - z0.z).norm() == 0.0);
  }
  SUBCASE("t = 1 returns eps under the cosine schedule") {
    const LatentVideo zt = forward_noise(z0, 1.0, eps, s);
    CHECK((zt.z - eps.z).norm() < 1e-12);
  }
  SUBCASE("t = 0.5 scales by cos(pi/4)") {
    LatentVideo one = LatentVideo::zeros(1, 1, 1, 1);
    one.z(0, 0) = 1.0;
    LatentVideo zero_eps = LatentVideo::zeros(1, 1, 1, 1);
    const LatentVideo zt = forward_noise(one, 0.5, zero_eps, s);
    CHECK(zt.z(0, 0) == doctest::Approx(0.70710678).epsilon(1e-7));
  }
  SUBCASE("linearity in z0 under a shared noise draw") {
    LatentVideo x = z0, y = z0;
    x.z = rng.normal_matrix(8, 3);
    y.z = rng.normal_matrix(8, 3);
    LatentVideo combo = z0;
    const double a = 0.3, b = -1.7;
    combo.z = a * x.z + b * y.z;
    const MatX lhs = forward_noise(combo, 0.37, eps, s).z;
    const MatX rhs = a * forward_noise(x, 0.37, eps, s).z +
                     b * forward_noise(y, 0.37, eps, s).z +
                     (1.0 - a - b) * s.sigma(0.37) * eps.z;
    CHECK((lhs - rhs).norm() < 1e-12);
  }
}

TEST_CASE("tape op gradients match finite differences") {
  RandomGen rng(503);
  SUBCASE("matmul") {
    std::vector<MatX> params{rng.normal_matrix(3, 4), rng.normal_matrix(4, 2)};
    const double err = check_op_gradients(params, [](Tape& t,
                                                     std::vector<int>& p) {
      return t.matmul(p[0], p[1]);
    });
    CHECK(err < 1e-5);
  }
  SUBCASE("add, sub, scale") {
    std::vector<MatX> params{rng.normal_matrix(3, 3), rng.normal_matrix(3, 3)};
    const double err =
        check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
          return t.scale(t.sub(t.add(p[0], p[1]), p[1]), 2.5);
        });
    CHECK(err < 1e-5);
  }
  SUBCASE("add_rowvec") {
    std::vector<MatX> params{rng.normal_matrix(4, 3), rng.normal_matrix(1, 3)};
    const double err =
        check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
          return t.add_rowvec(p[0], p[1]);
        });
    CHECK(err < 1e-5);
  }
  SUBCASE("hadamard") {
    std::vector<MatX> params{rng.normal_matrix(4, 4), rng.normal_matrix(4, 4)};
    const double err =
        check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
          return t.hadamard(p[0], p[1]);
        });
    CHECK(err < 1e-5);
  }
  SUBCASE("gelu") {
    std::vector<MatX> params{rng.normal_matrix(5, 3)};
    const double err = check_op_gradients(
        params,
        [](Tape& t, std::vector<int>& p) { return t.gelu(p[0]); });
    CHECK(err < 1e-5);
  }
  SUBCASE("transpose and hcat/vcat/cols/rows") {
    std::vector<MatX> params{rng.normal_matrix(3, 4), rng.normal_matrix(3, 4)};
    const double err =
        check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
          const int v = t.vcat(p[0], p[1]);
          const int hc = t.hcat(t.rows(v, 1, 3), t.rows(v, 2, 3));
          return t.transpose(t.cols(hc, 1, 5));
        });
    CHECK(err < 1e-5);
  }
  SUBCASE("layer_norm") {
    std::vector<MatX> params{rng.normal_matrix(6, 5, 2.0),
                             rng.normal_matrix(1, 5),
                             rng.normal_matrix(1, 5)};
    const double err =
        check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
          return t.layer_norm(p[0], p[1], p[2]);
        });
    CHECK(err < 1e-5);
  }
  SUBCASE("masked_softmax dense and masked") {
    std::vector<MatX> params{rng.normal_matrix(4, 6)};
    const double dense_err =
        check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
          return t.masked_softmax(p[0], nullptr);
        });
    CHECK(dense_err < 1e-5);

    MaskBits bits = MaskBits::Constant(4, 6, true);
    bits(0, 1) = false;
    bits(2, 3) = false;
    bits(2, 4) = false;
    const double masked_err =
        check_op_gradients(params, [&bits](Tape& t, std::vector<int>& p) {
          return t.masked_softmax(p[0], &bits);
        });
    CHECK(masked_err < 1e-5);
  }
  SUBCASE("random composite shapes up to 8x8x4") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      RandomGen g(seed);
      const int n = 2 + static_cast<int>(g.uniform(0.0, 6.0));
      const int c = 2 + static_cast<int>(g.uniform(0.0, 6.0));
      const int k = 2 + static_cast<int>(g.uniform(0.0, 2.0));
      std::vector<MatX> params{g.normal_matrix(n, c), g.normal_matrix(c, k),
                               g.normal_matrix(1, k)};
      const double err =
          check_op_gradients(params, [](Tape& t, std::vector<int>& p) {
            return t.gelu(t.add_rowvec(t.matmul(p[0], p[1]), p[2]));
          });
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("tape aborts with the op name on non-finite values") {
  Tape tape;
  MatX bad(1, 1);
  bad << 1e308;
  const int a = tape.constant(bad);
  try {
    tape.matmul(tape.matmul(a, a), a);  // overflows to inf
    FAIL("expected abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("denoiser tape forward matches the reference forward") {
  DenoiserConfig config;
  config.feature_channels = 3;
  config.model_width = 8;
  config.ffn_hidden = 12;
  config.n_registers = 2;
  config.variant = AttentionVariant::epipolar;
  ToyDenoiser model = ToyDenoiser::init(config, 99);

  const SyntheticScene scene = small_scene(3, 2, 2, 3, 11);
  const auto masks =
      variant_masks(config.variant, scene.cameras, 2, 2, config.delta,
                    config.n_registers);
  RandomGen rng(107);
  const MatX zt = rng.normal_matrix(scene.z0.z.rows(), scene.z0.z.cols());

  const MatX ref = model.forward(zt, scene.plucker6, masks);
  Tape tape;
  const int node = model.forward_tape(tape, zt, scene.plucker6, masks);
  CHECK((tape.value(node) - ref).norm() < 1e-12);
}

TEST_CASE("denoiser gradient check on a small instance") {
  DenoiserConfig config;
  config.feature_channels = 2;
  config.model_width = 4;
  config.ffn_hidden = 4;
  config.n_registers = 1;
  config.variant = AttentionVariant::epipolar;
  ToyDenoiser model = ToyDenoiser::init(config, 7);
  CHECK(model.parameter_count() >= 100);

  const SyntheticScene scene = small_scene(2, 2, 2, 2, 13);
  const auto masks = variant_masks(config.variant, scene.cameras, 2, 2,
                                   config.delta, config.n_registers);
  RandomGen rng(11);
  const MatX zt = rng.normal_matrix(scene.z0.z.rows(), scene.z0.z.cols());
  const MatX target = rng.normal_matrix(scene.z0.z.rows(),
                                        scene.z0.z.cols());

  Tape tape;
  const int pred = model.forward_tape(tape, zt, scene.plucker6, masks);
  const int loss = tape.mean_sq_error(pred, target);
  tape.backward(loss);

  auto eval = [&]() {
    Tape t2;
    const int p = model.forward_tape(t2, zt, scene.plucker6, masks);
    return t2.scalar(t2.mean_sq_error(p, target));
  };

  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& [ref, node] : tape.bound_params()) {
    const MatX analytic = tape.grad(node);
    for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
      for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
        double* entry = std::holds_alternative<MatX*>(ref)
                            ? &(*std::get<MatX*>(ref))(r, c)
                            : &(*std::get<RowVecX*>(ref))(c);
        const double saved = *entry;
        *entry = saved + h;
        const double up = eval();
        *entry = saved - h;
        const double down = eval();
        *entry = saved;
        const double fd = (up - down) / (2.0 * h);
        const double err =
            std::abs(fd - analytic(r, c)) /
            std::max({1.0, std::abs(fd), std::abs(analytic(r, c))});
        worst = std::max(worst, err);
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("make_synthetic_scene") {
  SUBCASE("static camera gives identical grids across frames") {
    metrics::Trajectory still;
    still.frames.resize(3);
    const SyntheticScene scene = make_synthetic_scene(5, still, 4, 4, 2, 21);
    const Eigen::Index hw = 16;
    for (int f = 1; f < 3; ++f) {
      CHECK((scene.z0.z.middleRows(f * hw, hw) -
             scene.z0.z.middleRows(0, hw))
                .norm() == 0.0);
    }
  }
  SUBCASE("same seed gives identical output") {
    const metrics::Trajectory traj =
        io::synth_trajectory(io::TrajectoryKind::orbit, 4, 9);
    const SyntheticScene a = make_synthetic_scene(8, traj, 4, 4, 3, 33);
    const SyntheticScene b = make_synthetic_scene(8, traj, 4, 4, 3, 33);
    CHECK((a.z0.z - b.z0.z).norm() == 0.0);
    CHECK((a.plucker6 - b.plucker6).norm() == 0.0);
  }
  SUBCASE("features land on the projected pixel") {
    const metrics::Trajectory traj =
        io::synth_trajectory(io::TrajectoryKind::dolly, 3, 5);
    const SyntheticScene scene = make_synthetic_scene(4, traj, 6, 6, 2, 41);
    const Eigen::Index hw = 36;
    for (int f = 0; f < 3; ++f) {
      for (int i = 0; i < 4; ++i) {
        if (!scene.visibility(f, i)) {
          continue;
        }
        const auto uv = geometry::project_point(scene.cameras[f],
                                                scene.points.row(i));
        REQUIRE(uv.has_value());
        const int px = static_cast<int>(std::floor(uv->x()));
        const int py = static_cast<int>(std::floor(uv->y()));
        // The splatted pixel must contain this feature (possibly summed
        // with other points landing there).
        const MatX row = scene.z0.z.row(f * hw + py * 6 + px);
        CHECK(row.norm() > 0.0);
      }
    }
  }
}

TEST_CASE("diffusion_loss") {
  const NoiseSchedule schedule = NoiseSchedule::cosine();
  SUBCASE("identity wiring at t = 1 gives zero loss") {
    // At t = 1 the noised input equals the noise itself; with an identity
    // input map, a zeroed block and an identity output map the model
    // reproduces eps exactly.
    DenoiserConfig config;
    config.feature_channels = 2;
    config.model_width = 2;
    config.ffn_hidden = 2;
    config.n_registers = 1;
    ToyDenoiser model = ToyDenoiser::init(config, 1);
    model.input_proj.weight = MatX::Identity(2, 2);
    model.input_proj.bias = RowVecX::Zero(2);
    model.output_proj.weight = MatX::Identity(2, 2);
    model.output_proj.bias = RowVecX::Zero(2);
    auto zero_attn = [](attention::SelfAttentionParams& a) {
      a.wq.setZero();
      a.wk.setZero();
      a.wv.setZero();
      a.wo.setZero();
    };
    model.block.plucker_proj.weight.setZero();
    model.block.fuse.weight.setZero();
    zero_attn(model.block.epi_attn);
    zero_attn(model.block.self1);
    zero_attn(model.block.self2);
    model.block.ffn.in.weight.setZero();
    model.block.ffn.out.weight.setZero();

    const SyntheticScene scene = small_scene(2, 2, 2, 2, 17);
    const auto masks = variant_masks(config.variant, scene.cameras, 2, 2,
                                     config.delta, config.n_registers);
    RandomGen rng(19);
    const auto [loss, node] = diffusion_loss(
        model, {scene}, {masks}, [](RandomGen&) { return 1.0; }, rng,
        schedule, nullptr);
    CHECK(loss < 1e-20);
    CHECK(node == -1);
  }
  SUBCASE("zero model loss approximates E|eps|^2 = 1") {
    DenoiserConfig config;
    config.feature_channels = 2;
    config.model_width = 4;
    config.ffn_hidden = 4;
    config.n_registers = 1;
    ToyDenoiser model = ToyDenoiser::init(config, 3);
    model.output_proj.weight.setZero();
    model.output_proj.bias.setZero();

    const SyntheticScene scene = small_scene(2, 4, 4, 2, 23);
    const auto masks = variant_masks(config.variant, scene.cameras, 4, 4,
                                     config.delta, config.n_registers);
    RandomGen rng(29);
    double total = 0.0;
    const int reps = 160;  // 160 draws x 64 entries ~ 1e4 samples
    for (int i = 0; i < reps; ++i) {
      total += diffusion_loss(model, {scene}, {masks}, uniform_time(), rng,
                              schedule, nullptr)
                   .first;
    }
    CHECK(total / reps == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("tape and plain paths agree on the loss value") {
    DenoiserConfig config;
    config.feature_channels = 2;
    config.model_width = 4;
    config.ffn_hidden = 6;
    config.n_registers = 1;
    ToyDenoiser model = ToyDenoiser::init(config, 31);
    const SyntheticScene scene = small_scene(2, 2, 2, 2, 37);
    const auto masks = variant_masks(config.variant, scene.cameras, 2, 2,
                                     config.delta, config.n_registers);
    RandomGen rng_a(41);
    RandomGen rng_b(41);
    Tape tape;
    const auto [with_tape, node] = diffusion_loss(
        model, {scene}, {masks}, uniform_time(), rng_a, schedule, &tape);
    const auto [plain, no_node] = diffusion_loss(
        model, {scene}, {masks}, uniform_time(), rng_b, schedule, nullptr);
    CHECK(with_tape == doctest::Approx(plain).epsilon(1e-12));
    CHECK(node >= 0);
    CHECK(no_node == -1);
  }
}

TEST_CASE("training reduces the loss and is deterministic") {
  AblationConfig config;
  config.seed = 424242;
  config.steps = 60;
  config.checkpoint_every = 30;
  config.variants = {AttentionVariant::epipolar};
  config.n_scenes = 2;
  config.n_points = 10;
  config.frames = 4;
  config.h = 3;
  config.w = 3;
  config.feature_channels = 3;
  config.model_width = 8;
  config.ffn_hidden = 12;
  config.val_draws_per_scene = 4;

  const AblationResult a = ablation_run(config);
  const AblationResult b = ablation_run(config);
  REQUIRE(a.curves.size() == 1);
  CHECK_FALSE(a.curves[0].diverged);
  CHECK(a.curves[0].final_train_loss < a.curves[0].initial_train_loss);
  // Bit-identical reruns under the same seed.
  CHECK(a.curves[0].final_train_loss == b.curves[0].final_train_loss);
  CHECK(a.curves[0].final_val_loss == b.curves[0].final_val_loss);
  REQUIRE(a.curves[0].points.size() == b.curves[0].points.size());
  for (std::size_t i = 0; i < a.curves[0].points.size(); ++i) {
    CHECK(a.curves[0].points[i].train_loss == b.curves[0].points[i].train_loss);
    CHECK(a.curves[0].points[i].val_loss_high_noise ==
          b.curves[0].points[i].val_loss_high_noise);
  }
}

TEST_CASE("zero-step ablation returns initial losses only") {
  AblationConfig config;
  config.steps = 0;
  config.variants = {AttentionVariant::temporal};
  config.n_scenes = 1;
  config.n_points = 6;
  config.frames = 3;
  config.h = 2;
  config.w = 2;
  config.feature_channels = 2;
  config.model_width = 4;
  config.ffn_hidden = 4;
  config.val_draws_per_scene = 2;
  const AblationResult result = ablation_run(config);
  REQUIRE(result.curves.size() == 1);
  CHECK(result.curves[0].points.size() == 1);
  CHECK(result.curves[0].points[0].step == 0);
  CHECK(result.curves[0].final_train_loss ==
        result.curves[0].initial_train_loss);
}

TEST_CASE("ablation config json round trip") {
  AblationConfig config;
  config.seed = 77;
  config.steps = 123;
  config.variants = {AttentionVariant::epipolar, AttentionVariant::full};
  config.trajectory = io::TrajectoryKind::dolly;
  config.delta = 1.25;
  const auto path =
      std::filesystem::temp_directory_path() / "epiray_ablation.json";
  write_ablation_config_json(config, path);
  const AblationConfig back = ablation_config_from_json_file(path);
  CHECK(back.seed == 77);
  CHECK(back.steps == 123);
  REQUIRE(back.variants.size() == 2);
  CHECK(back.variants[1] == AttentionVariant::full);
  CHECK(back.trajectory == io::TrajectoryKind::dolly);
  CHECK(back.delta == 1.25);
  std::filesystem::remove(path);
}
