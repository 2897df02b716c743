#include "epiray/cli.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epiray/epipolar.hpp"
#include "epiray/geometry.hpp"
#include "epiray/io.hpp"
#include "epiray/metrics.hpp"
#include "epiray/toydiff.hpp"

namespace epiray::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

std::vector<std::pair<int, int>> parse_resolutions(const std::string& spec) {
  std::vector<std::pair<int, int>> out;
  std::istringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) {
      throw CLI::ValidationError("--resolutions",
                                 "expected HxW entries like 16x16");
    }
    const int h = std::stoi(item.substr(0, x));
    const int w = std::stoi(item.substr(x + 1));
    if (h < 1 || w < 1) {
      throw CLI::ValidationError("--resolutions", "sizes must be >= 1");
    }
    out.emplace_back(h, w);
  }
  if (out.empty()) {
    throw CLI::ValidationError("--resolutions", "no entries");
  }
  return out;
}

std::vector<geometry::CameraFrame> load_frames(const std::string& pose_path,
                                               int width, int height,
                                               int max_frames) {
  const io::PoseFile file = io::load_pose_file(pose_path);
  if (file.records.empty()) {
    throw std::runtime_error("pose file has no records: " + pose_path);
  }
  std::vector<geometry::CameraFrame> frames;
  const int n = max_frames > 0
                    ? std::min<int>(max_frames, file.records.size())
                    : static_cast<int>(file.records.size());
  frames.reserve(n);
  for (int i = 0; i < n; ++i) {
    frames.push_back(io::to_camera_frame(file.records[i], width, height));
  }
  return frames;
}

std::vector<std::string> default_names(int n, const std::string& pattern) {
  std::vector<std::string> names;
  names.reserve(n);
  for (int i = 0; i < n; ++i) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern.c_str(), i);
    names.emplace_back(buf);
  }
  return names;
}

struct MaskArgs {
  std::string poses;
  std::string out_dir;
  std::string resolutions = "16x16,8x8";
  std::string delta = "0.7071067811865476";
  int frames = 0;
  int registers = 2;
  int width = 256;
  int height = 256;
  bool pgm_all_pixels = false;
};

int cmd_mask(const MaskArgs& args) {
  const auto resolutions = parse_resolutions(args.resolutions);
  double delta;
  if (args.delta == "max") {
    delta = std::numeric_limits<double>::max();
  } else {
    delta = std::stod(args.delta);
    if (delta <= 0.0) {
      std::cerr << "error: --delta must be positive\n";
      return kUsageError;
    }
  }
  const auto frames =
      load_frames(args.poses, args.width, args.height, args.frames);
  fs::create_directories(args.out_dir);

  const epipolar::EpipolarMaskSet set = epipolar::build_mask_set(
      frames, resolutions, epipolar::constant_delta(delta), args.registers);
  const fs::path epim = fs::path(args.out_dir) / "masks.epim";
  epipolar::write_mask_set(set, epim);

  for (std::size_t li = 0; li < set.levels.size(); ++li) {
    const epipolar::MaskLevel& level = set.levels[li];
    double density = 0.0;
    for (std::size_t f = 0; f < level.masks.size(); ++f) {
      density += epipolar::mask_density(level.masks[f]);
      const int hw = level.h * level.w;
      const int center = (level.h / 2) * level.w + level.w / 2;
      if (args.pgm_all_pixels) {
        for (int p = 0; p < hw; ++p) {
          char name[128];
          std::snprintf(name, sizeof(name), "mask_L%zu_f%zu_p%04d.pgm", li, f,
                        p);
          epipolar::write_mask_row_pgm(level.masks[f], p,
                                       fs::path(args.out_dir) / name);
        }
      } else {
        char name[128];
        std::snprintf(name, sizeof(name), "mask_L%zu_f%zu_center.pgm", li, f);
        epipolar::write_mask_row_pgm(level.masks[f], center,
                                     fs::path(args.out_dir) / name);
      }
    }
    density /= static_cast<double>(level.masks.size());
    std::cout << "level " << li << " (" << level.h << "x" << level.w
              << ") delta=" << level.delta << " density=" << density << "\n";
  }
  std::cout << "wrote " << epim.string() << "\n";
  return kOk;
}

struct PluckerArgs {
  std::string poses;
  std::string out_dir;
  int h = 16;
  int w = 16;
  int frames = 0;
  int width = 256;
  int height = 256;
};

int cmd_plucker(const PluckerArgs& args) {
  const auto frames =
      load_frames(args.poses, args.width, args.height, args.frames);
  fs::create_directories(args.out_dir);

  std::vector<geometry::PluckerGrid> grids;
  grids.reserve(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    grids.push_back(
        geometry::plucker_grid(frames[f], args.h, args.w, static_cast<int>(f)));
  }

  // Invariant sweep before anything is written.
  for (const geometry::PluckerGrid& grid : grids) {
    for (int r = 0; r < grid.h; ++r) {
      for (int c = 0; c < grid.w; ++c) {
        const geometry::PluckerRay ray = grid.at(r, c);
        if (std::abs(ray.direction.norm() - 1.0) > 1e-9 ||
            std::abs(ray.moment.dot(ray.direction)) > 1e-9) {
          throw std::runtime_error("plucker grid failed ray invariants");
        }
      }
    }
  }

  const fs::path bin_path = fs::path(args.out_dir) / "plucker.bin";
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot open " + bin_path.string());
    }
    out.write("PLKG", 4);
    const std::uint32_t header[4] = {1u,
                                     static_cast<std::uint32_t>(grids.size()),
                                     static_cast<std::uint32_t>(args.h),
                                     static_cast<std::uint32_t>(args.w)};
    for (std::uint32_t v : header) {
      unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                            static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff),
                            static_cast<unsigned char>((v >> 24) & 0xff)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
    for (const geometry::PluckerGrid& grid : grids) {
      for (Eigen::Index i = 0; i < grid.rays.rows(); ++i) {
        for (int ch = 0; ch < 6; ++ch) {
          const double v = grid.rays(i, ch);
          std::uint64_t u;
          std::memcpy(&u, &v, sizeof(u));
          unsigned char b[8];
          for (int k = 0; k < 8; ++k) {
            b[k] = static_cast<unsigned char>((u >> (8 * k)) & 0xff);
          }
          out.write(reinterpret_cast<const char*>(b), 8);
        }
      }
    }
  }

  const fs::path csv_path = fs::path(args.out_dir) / "plucker.csv";
  {
    std::ofstream out(csv_path);
    out.precision(17);
    out << "frame,row,col,mx,my,mz,dx,dy,dz\n";
    for (const geometry::PluckerGrid& grid : grids) {
      for (int r = 0; r < grid.h; ++r) {
        for (int c = 0; c < grid.w; ++c) {
          const auto row = grid.rays.row(static_cast<Eigen::Index>(r) *
                                             grid.w + c);
          out << grid.frame_index << "," << r << "," << c;
          for (int ch = 0; ch < 6; ++ch) {
            out << "," << row(ch);
          }
          out << "\n";
        }
      }
    }
  }
  std::cout << "wrote " << bin_path.string() << " and " << csv_path.string()
            << "\n";
  return kOk;
}

struct EvalArgs {
  std::string gt;
  std::vector<std::string> trials;
  std::string out_dir;
  std::string sample_id;
  std::string name_pattern = "frame_%06d.png";
  int width = 256;
  int height = 256;
};

int cmd_eval(const EvalArgs& args) {
  const io::PoseFile gt_file = io::load_pose_file(args.gt);
  if (gt_file.records.size() < 2) {
    throw std::runtime_error("ground truth needs at least 2 poses: " +
                             args.gt);
  }
  const int n = static_cast<int>(gt_file.records.size());
  metrics::Trajectory gt_traj;
  for (const io::PoseFileRecord& rec : gt_file.records) {
    const geometry::CameraFrame frame =
        io::to_camera_frame(rec, args.width, args.height);
    gt_traj.frames.push_back(geometry::camera_to_world(frame.pose));
  }

  const std::vector<std::string> names = default_names(n, args.name_pattern);
  const std::string sample_id =
      args.sample_id.empty() ? fs::path(args.gt).stem().string()
                             : args.sample_id;

  metrics::SampleTrials sample;
  sample.sample_id = sample_id;
  for (const std::string& trial_dir : args.trials) {
    try {
      const io::SfmModel model = io::load_sfm_model(trial_dir);
      const io::TrajectoryResult est = io::to_trajectory(model, names);
      if (!est.ok()) {
        std::cerr << "trial " << trial_dir << ": " << est.error << "\n";
        sample.trials.push_back(std::nullopt);
        continue;
      }
      const metrics::TrajectoryPair pair = metrics::make_canonical_pair(
          gt_traj, metrics::orthonormalized(*est.trajectory));
      sample.trials.push_back(metrics::evaluate(pair));
    } catch (const std::exception& e) {
      std::cerr << "trial " << trial_dir << ": " << e.what() << "\n";
      sample.trials.push_back(std::nullopt);
    }
  }

  fs::create_directories(args.out_dir);
  const std::vector<metrics::SampleTrials> samples{sample};
  metrics::write_report_csv(samples, fs::path(args.out_dir) / "report.csv");
  const metrics::DatasetSummary summary = metrics::aggregate(samples);
  metrics::write_summary_json(summary,
                              fs::path(args.out_dir) / "summary.json");
  io::write_trajectory_json(metrics::canonicalize(gt_traj),
                            fs::path(args.out_dir) / "gt_canonical.json");

  for (const metrics::SampleSummary& s : summary.samples) {
    if (s.succeeded) {
      std::cout << s.sample_id << ": rot_err=" << s.mean.rot_err
                << " trans_err=" << s.mean.trans_err
                << " cam_mc=" << s.mean.cam_mc << " (" << s.n_success << "/"
                << s.n_trials << " trials)\n";
    } else {
      std::cout << s.sample_id << ": all trials failed\n";
    }
  }
  return kOk;
}

struct AblateArgs {
  std::string config;
  std::string out_dir;
  int steps_override = -1;
  std::optional<std::uint64_t> seed_override;
};

int cmd_ablate(const AblateArgs& args) {
  toydiff::AblationConfig config =
      args.config.empty()
          ? toydiff::AblationConfig{}
          : toydiff::ablation_config_from_json_file(args.config);
  if (args.steps_override >= 0) {
    config.steps = args.steps_override;
  }
  if (args.seed_override.has_value()) {
    config.seed = *args.seed_override;
  }

  const toydiff::AblationResult result = toydiff::ablation_run(config);

  fs::create_directories(args.out_dir);
  toydiff::write_curves_csv(result, fs::path(args.out_dir) / "curves.csv");
  toydiff::write_ablation_summary_json(
      result, fs::path(args.out_dir) / "summary.json");
  toydiff::write_ablation_config_json(config,
                                      fs::path(args.out_dir) / "config.json");

  for (const toydiff::VariantCurve& curve : result.curves) {
    std::cout << toydiff::to_string(curve.variant) << ": initial="
              << curve.initial_train_loss
              << " final_train=" << curve.final_train_loss
              << " final_val_high_noise=" << curve.final_val_loss
              << (curve.diverged ? " DIVERGED" : "") << "\n";
  }
  return kOk;
}

struct GlomapArgs {
  std::string poses;
  std::string images = "images";
  std::string workspace = "workspace";
  int width = 256;
  int height = 256;
};

int cmd_glomap_args(const GlomapArgs& args) {
  const auto frames = load_frames(args.poses, args.width, args.height, 1);
  for (const std::string& cmd :
       io::glomap_invocation(frames.front().intrinsics, args.images,
                             args.workspace)) {
    std::cout << cmd << "\n";
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Epipolar-constrained camera conditioning toolkit"};
  app.require_subcommand(1);

  MaskArgs mask_args;
  CLI::App* mask = app.add_subcommand(
      "mask", "Build multi-resolution epipolar attention masks");
  mask->add_option("--poses", mask_args.poses, "camera pose file")
      ->required()
      ->check(CLI::ExistingFile);
  mask->add_option("--out", mask_args.out_dir, "output directory")->required();
  mask->add_option("--resolutions", mask_args.resolutions,
                   "comma-separated HxW levels");
  mask->add_option("--delta", mask_args.delta,
                   "distance threshold in feature pixels, or 'max'");
  mask->add_option("--frames", mask_args.frames,
                   "use only the first N records (0 = all)");
  mask->add_option("--registers", mask_args.registers, "register token count")
      ->check(CLI::NonNegativeNumber);
  mask->add_option("--width", mask_args.width, "working resolution width");
  mask->add_option("--height", mask_args.height, "working resolution height");
  mask->add_flag("--pgm-all-pixels", mask_args.pgm_all_pixels,
                 "write a preview for every query pixel");

  PluckerArgs plucker_args;
  CLI::App* plucker =
      app.add_subcommand("plucker", "Dump per-pixel ray embeddings");
  plucker->add_option("--poses", plucker_args.poses, "camera pose file")
      ->required()
      ->check(CLI::ExistingFile);
  plucker->add_option("--out", plucker_args.out_dir, "output directory")
      ->required();
  plucker->add_option("--h", plucker_args.h, "grid height")
      ->check(CLI::PositiveNumber);
  plucker->add_option("--w", plucker_args.w, "grid width")
      ->check(CLI::PositiveNumber);
  plucker->add_option("--frames", plucker_args.frames,
                      "use only the first N records (0 = all)");
  plucker->add_option("--width", plucker_args.width,
                      "working resolution width");
  plucker->add_option("--height", plucker_args.height,
                      "working resolution height");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "Score estimated trajectories against ground truth");
  eval->add_option("--gt", eval_args.gt, "ground-truth camera pose file")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--trial", eval_args.trials,
                   "mapper output directory (repeatable)")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--out", eval_args.out_dir, "output directory")->required();
  eval->add_option("--sample-id", eval_args.sample_id,
                   "sample name in reports (default: gt file stem)");
  eval->add_option("--name-pattern", eval_args.name_pattern,
                   "printf pattern for expected image names");
  eval->add_option("--width", eval_args.width, "working resolution width");
  eval->add_option("--height", eval_args.height, "working resolution height");

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Train attention variants on synthetic scenes");
  ablate->add_option("--config", ablate_args.config, "run config JSON")
      ->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_args.out_dir, "output directory")
      ->required();
  ablate->add_option("--steps", ablate_args.steps_override,
                     "override training steps");
  ablate->add_option("--seed", ablate_args.seed_override, "override seed");

  GlomapArgs glomap_args;
  CLI::App* glomap = app.add_subcommand(
      "glomap-args", "Print the mapper invocation for a clip");
  glomap->add_option("--poses", glomap_args.poses, "camera pose file")
      ->required()
      ->check(CLI::ExistingFile);
  glomap->add_option("--images", glomap_args.images, "image directory");
  glomap->add_option("--workspace", glomap_args.workspace,
                     "mapper workspace directory");
  glomap->add_option("--width", glomap_args.width, "working resolution width");
  glomap->add_option("--height", glomap_args.height,
                     "working resolution height");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (mask->parsed()) return cmd_mask(mask_args);
    if (plucker->parsed()) return cmd_plucker(plucker_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (ablate->parsed()) return cmd_ablate(ablate_args);
    if (glomap->parsed()) return cmd_glomap_args(glomap_args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace epiray::cli
