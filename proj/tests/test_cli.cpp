#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "epiray/cli.hpp"
#include "epiray/epipolar.hpp"
#include "epiray/io.hpp"

using namespace epiray;
namespace fs = std::filesystem;

namespace {

fs::path make_workdir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Two identity-intrinsics frames with a half-unit x baseline.
void write_fixture_poses(const fs::path& path) {
  std::ofstream out(path);
  out << "https://example.com/fixture\n";
  out << "0 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n";
  out << "33367 0.5 0.5 0.5 0.5 0 0 1 0 0 -0.5 0 1 0 0 0 0 1 0\n";
}

}  // namespace

TEST_CASE("cli mask command") {
  const fs::path dir = make_workdir("epiray_cli_mask");
  write_fixture_poses(dir / "poses.txt");
  SUBCASE("writes masks and reports density") {
    const int rc = cli::run({"mask", "--poses", (dir / "poses.txt").string(),
                             "--out", (dir / "out").string(), "--resolutions",
                             "4x4", "--delta", "0.71"});
    CHECK(rc == 0);
    CHECK(fs::exists(dir / "out" / "masks.epim"));
    CHECK(fs::exists(dir / "out" / "mask_L0_f0_center.pgm"));
    const auto set = epipolar::read_mask_set(dir / "out" / "masks.epim");
    CHECK(set.levels.size() == 1);
    CHECK(set.levels[0].masks.size() == 2);
  }
  SUBCASE("delta max yields density one") {
    const int rc = cli::run({"mask", "--poses", (dir / "poses.txt").string(),
                             "--out", (dir / "dense").string(),
                             "--resolutions", "4x4", "--delta", "max"});
    CHECK(rc == 0);
    const auto set = epipolar::read_mask_set(dir / "dense" / "masks.epim");
    for (const auto& mask : set.levels[0].masks) {
      CHECK(epipolar::mask_density(mask) == 1.0);
    }
  }
  SUBCASE("missing pose file exits with code 2") {
    const int rc = cli::run({"mask", "--poses",
                             (dir / "does_not_exist.txt").string(), "--out",
                             (dir / "x").string()});
    CHECK(rc == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli plucker command") {
  const fs::path dir = make_workdir("epiray_cli_plucker");
  write_fixture_poses(dir / "poses.txt");
  SUBCASE("writes binary and csv dumps") {
    const int rc = cli::run({"plucker", "--poses",
                             (dir / "poses.txt").string(), "--out",
                             (dir / "out").string(), "--h", "4", "--w", "4"});
    CHECK(rc == 0);
    CHECK(fs::exists(dir / "out" / "plucker.bin"));
    CHECK(fs::exists(dir / "out" / "plucker.csv"));
    std::ifstream csv(dir / "out" / "plucker.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "frame,row,col,mx,my,mz,dx,dy,dz");
    int rows = 0;
    std::string line;
    while (std::getline(csv, line)) {
      if (!line.empty()) ++rows;
    }
    CHECK(rows == 2 * 16);
  }
  SUBCASE("invalid grid size exits with code 2") {
    const int rc = cli::run({"plucker", "--poses",
                             (dir / "poses.txt").string(), "--out",
                             (dir / "out2").string(), "--h", "0"});
    CHECK(rc == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli eval command end to end") {
  const fs::path dir = make_workdir("epiray_cli_eval");
  // Ground truth: an orbit clip serialized into the pose-file format
  // (world-to-camera, normalized intrinsics).
  const metrics::Trajectory traj =
      io::synth_trajectory(io::TrajectoryKind::orbit, 8, 3);
  io::PoseFile gt;
  std::vector<geometry::CameraFrame> frames;
  std::vector<std::string> names;
  for (int i = 0; i < traj.size(); ++i) {
    const geometry::CameraPose w2c = geometry::camera_to_world(traj.frames[i]);
    io::PoseFileRecord rec;
    rec.timestamp = i;
    rec.fx = rec.fy = 0.5;
    rec.cx = rec.cy = 0.5;
    rec.pose.leftCols<3>() = w2c.rotation;
    rec.pose.col(3) = w2c.translation;
    gt.records.push_back(rec);

    geometry::CameraFrame f;
    f.intrinsics = geometry::CameraIntrinsics{128, 128, 128, 128, 256, 256};
    f.pose = w2c;
    frames.push_back(f);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "frame_%06d.png", i);
    names.emplace_back(buf);
  }
  {
    std::ofstream out(dir / "gt.txt");
    out << io::serialize_pose_file(gt);
  }
  io::write_sfm_model(dir / "trial0", frames, names, 9);
  fs::create_directories(dir / "trial1_broken");
  {
    std::ofstream cams(dir / "trial1_broken" / "cameras.txt");
    cams << "1 SIMPLE_PINHOLE 256 256 128 128 128\n";
    std::ofstream imgs(dir / "trial1_broken" / "images.txt");
    imgs << "1 1 0 0 0 0 0 0 1 frame_000000.png\n\n";  // others missing
  }

  const int rc = cli::run({"eval", "--gt", (dir / "gt.txt").string(),
                           "--trial", (dir / "trial0").string(), "--trial",
                           (dir / "trial1_broken").string(), "--out",
                           (dir / "report").string()});
  CHECK(rc == 0);
  CHECK(fs::exists(dir / "report" / "report.csv"));
  CHECK(fs::exists(dir / "report" / "summary.json"));
  CHECK(fs::exists(dir / "report" / "gt_canonical.json"));

  std::ifstream csv(dir / "report" / "report.csv");
  std::string header, row0, row1;
  std::getline(csv, header);
  std::getline(csv, row0);
  std::getline(csv, row1);
  CHECK(row0.find("ok") != std::string::npos);
  CHECK(row1.find("failed") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli ablate with zero steps") {
  const fs::path dir = make_workdir("epiray_cli_ablate");
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"seed": 5, "steps": 0, "variants": ["temporal"],
               "n_scenes": 1, "n_points": 6, "frames": 3, "h": 2, "w": 2,
               "feature_channels": 2, "model_width": 4, "ffn_hidden": 4,
               "val_draws_per_scene": 2})";
  }
  const int rc = cli::run({"ablate", "--config",
                           (dir / "config.json").string(), "--out",
                           (dir / "out").string()});
  CHECK(rc == 0);
  CHECK(fs::exists(dir / "out" / "curves.csv"));
  CHECK(fs::exists(dir / "out" / "summary.json"));
  CHECK(fs::exists(dir / "out" / "config.json"));
  SUBCASE("unknown variant name lists the valid ones") {
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"variants": ["spherical"]})";
    cfg.close();
    const int bad = cli::run({"ablate", "--config", (dir / "bad.json").string(),
                              "--out", (dir / "out2").string()});
    CHECK(bad == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli glomap-args prints three commands") {
  const fs::path dir = make_workdir("epiray_cli_glomap");
  write_fixture_poses(dir / "poses.txt");
  const int rc = cli::run({"glomap-args", "--poses",
                           (dir / "poses.txt").string()});
  CHECK(rc == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli rejects unknown subcommands and flags") {
  CHECK(cli::run({"unknown-subcommand"}) == 2);
  CHECK(cli::run({"mask", "--bogus-flag", "1"}) == 2);
  CHECK(cli::run({}) == 2);
}
