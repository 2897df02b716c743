#include "epiray/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "epiray/random.hpp"

namespace epiray::io {

namespace {

bool is_blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') {
      return true;
    }
    if (!std::isspace(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return true;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

}  // namespace

PoseFile parse_pose_file(const std::string& text) {
  PoseFile file;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank_or_comment(line)) {
      continue;
    }
    std::istringstream fields(line);
    if (first_content_line) {
      first_content_line = false;
      // A leading URL header is permitted and recorded.
      std::string head;
      fields >> head;
      if (!head.empty() && !std::isdigit(static_cast<unsigned char>(head[0])) &&
          head[0] != '-' && head[0] != '+' && head[0] != '.') {
        file.url = head;
        continue;
      }
      fields.clear();
      fields.seekg(0);
    }
    std::vector<double> values;
    double v;
    while (fields >> v) {
      values.push_back(v);
    }
    if (!fields.eof()) {
      throw std::runtime_error("pose file line " + std::to_string(line_no) +
                               ": non-numeric field");
    }
    if (values.size() != 19) {
      throw std::runtime_error("pose file line " + std::to_string(line_no) +
                               ": expected 19 fields, got " +
                               std::to_string(values.size()));
    }
    PoseFileRecord rec;
    rec.timestamp = static_cast<std::int64_t>(std::llround(values[0]));
    rec.fx = values[1];
    rec.fy = values[2];
    rec.cx = values[3];
    rec.cy = values[4];
    rec.reserved0 = values[5];
    rec.reserved1 = values[6];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        rec.pose(r, c) = values[7 + 4 * r + c];
      }
    }
    const Mat3 rot = rec.pose.leftCols<3>();
    const double ortho_residual =
        (rot.transpose() * rot - Mat3::Identity()).norm();
    if (ortho_residual > 1e-3) {
      file.warnings.push_back("line " + std::to_string(line_no) +
                              ": rotation orthonormality residual " +
                              format_double(ortho_residual, 3));
    }
    file.records.push_back(rec);
  }
  return file;
}

PoseFile load_pose_file(const std::filesystem::path& path) {
  return parse_pose_file(read_file(path));
}

std::string serialize_pose_file(const PoseFile& file) {
  std::ostringstream out;
  if (!file.url.empty()) {
    out << file.url << "\n";
  }
  for (const PoseFileRecord& rec : file.records) {
    out << rec.timestamp;
    for (double v : {rec.fx, rec.fy, rec.cx, rec.cy, rec.reserved0,
                     rec.reserved1}) {
      out << " " << format_double(v, 17);
    }
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        out << " " << format_double(rec.pose(r, c), 17);
      }
    }
    out << "\n";
  }
  return out.str();
}

geometry::CameraIntrinsics denormalize_intrinsics(const PoseFileRecord& rec,
                                                  int width, int height) {
  return geometry::CameraIntrinsics{rec.fx * width, rec.fy * height,
                                    rec.cx * width, rec.cy * height,
                                    width,          height};
}

geometry::CameraIntrinsics center_crop(const geometry::CameraIntrinsics& k,
                                       int crop_w, int crop_h) {
  const double off_x = (k.width - crop_w) / 2.0;
  const double off_y = (k.height - crop_h) / 2.0;
  return geometry::CameraIntrinsics{k.fx,           k.fy, k.cx - off_x,
                                    k.cy - off_y,   crop_w, crop_h};
}

geometry::CameraFrame to_camera_frame(const PoseFileRecord& rec, int width,
                                      int height) {
  geometry::CameraFrame frame;
  frame.intrinsics = denormalize_intrinsics(rec, width, height);
  frame.pose.rotation = rec.pose.leftCols<3>();
  frame.pose.translation = rec.pose.col(3);
  frame.timestamp = rec.timestamp;
  return frame;
}

const SfmImage* SfmModel::find_image(const std::string& name) const {
  for (const SfmImage& img : images) {
    if (img.name == name) {
      return &img;
    }
  }
  return nullptr;
}

Mat3 quaternion_to_rotation(const Vec4& q_wxyz) {
  const Eigen::Quaterniond q(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
  return q.normalized().toRotationMatrix();
}

Vec4 rotation_to_quaternion(const Mat3& r) {
  const Eigen::Quaterniond q(r);
  return Vec4(q.w(), q.x(), q.y(), q.z());
}

SfmModel parse_sfm_model(const std::string& cameras_text,
                         const std::string& images_text) {
  SfmModel model;

  {
    std::istringstream in(cameras_text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank_or_comment(line)) {
        continue;
      }
      std::istringstream fields(line);
      SfmCamera cam;
      int width = 0;
      int height = 0;
      if (!(fields >> cam.camera_id >> cam.model >> width >> height)) {
        throw std::runtime_error("cameras.txt line " +
                                 std::to_string(line_no) + ": bad header");
      }
      std::vector<double> params;
      double v;
      while (fields >> v) {
        params.push_back(v);
      }
      if (cam.model == "SIMPLE_PINHOLE" && params.size() == 3) {
        cam.intrinsics = geometry::CameraIntrinsics{
            params[0], params[0], params[1], params[2], width, height};
      } else if (cam.model == "PINHOLE" && params.size() == 4) {
        cam.intrinsics = geometry::CameraIntrinsics{
            params[0], params[1], params[2], params[3], width, height};
      } else {
        throw std::runtime_error("cameras.txt line " +
                                 std::to_string(line_no) +
                                 ": unsupported camera model " + cam.model);
      }
      model.cameras[cam.camera_id] = cam;
    }
  }

  {
    std::istringstream in(images_text);
    std::string line;
    int line_no = 0;
    bool expecting_points = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (expecting_points) {
        // 2D point line, ignored (may be empty).
        expecting_points = false;
        continue;
      }
      if (is_blank_or_comment(line)) {
        continue;
      }
      std::istringstream fields(line);
      SfmImage img;
      if (!(fields >> img.image_id >> img.quat[0] >> img.quat[1] >>
            img.quat[2] >> img.quat[3] >> img.translation[0] >>
            img.translation[1] >> img.translation[2] >> img.camera_id)) {
        throw std::runtime_error("images.txt line " + std::to_string(line_no) +
                                 ": bad image line");
      }
      std::string name;
      std::getline(fields, name);
      const auto start = name.find_first_not_of(" \t");
      img.name = start == std::string::npos ? "" : name.substr(start);
      const double qnorm = img.quat.norm();
      if (qnorm < 1e-12) {
        throw std::runtime_error("images.txt line " + std::to_string(line_no) +
                                 ": zero quaternion");
      }
      img.quat /= qnorm;
      if (!model.cameras.count(img.camera_id)) {
        throw std::runtime_error("images.txt line " + std::to_string(line_no) +
                                 ": image references unknown camera " +
                                 std::to_string(img.camera_id));
      }
      model.images.push_back(std::move(img));
      expecting_points = true;
    }
  }
  return model;
}

SfmModel load_sfm_model(const std::filesystem::path& dir) {
  return parse_sfm_model(read_file(dir / "cameras.txt"),
                         read_file(dir / "images.txt"));
}

void write_sfm_model(const std::filesystem::path& dir,
                     const std::vector<geometry::CameraFrame>& frames,
                     const std::vector<std::string>& names, int digits) {
  if (frames.size() != names.size()) {
    throw std::invalid_argument("write_sfm_model: frames/names size mismatch");
  }
  std::filesystem::create_directories(dir);

  bool shared = true;
  for (const geometry::CameraFrame& f : frames) {
    const auto& k0 = frames.front().intrinsics;
    const auto& k = f.intrinsics;
    if (k.fx != k0.fx || k.fy != k0.fy || k.cx != k0.cx || k.cy != k0.cy ||
        k.width != k0.width || k.height != k0.height) {
      shared = false;
      break;
    }
  }

  auto write_camera = [&](std::ostream& out, int id,
                          const geometry::CameraIntrinsics& k) {
    if (k.fx == k.fy) {
      out << id << " SIMPLE_PINHOLE " << k.width << " " << k.height << " "
          << format_double(k.fx, digits) << " " << format_double(k.cx, digits)
          << " " << format_double(k.cy, digits) << "\n";
    } else {
      out << id << " PINHOLE " << k.width << " " << k.height << " "
          << format_double(k.fx, digits) << " " << format_double(k.fy, digits)
          << " " << format_double(k.cx, digits) << " "
          << format_double(k.cy, digits) << "\n";
    }
  };

  {
    std::ofstream out(dir / "cameras.txt");
    if (!out) {
      throw std::runtime_error("write_sfm_model: cannot open cameras.txt");
    }
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
    if (shared && !frames.empty()) {
      write_camera(out, 1, frames.front().intrinsics);
    } else {
      for (std::size_t i = 0; i < frames.size(); ++i) {
        write_camera(out, static_cast<int>(i) + 1, frames[i].intrinsics);
      }
    }
  }
  {
    std::ofstream out(dir / "images.txt");
    if (!out) {
      throw std::runtime_error("write_sfm_model: cannot open images.txt");
    }
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const Vec4 q = rotation_to_quaternion(frames[i].pose.rotation);
      const Vec3& t = frames[i].pose.translation;
      out << (i + 1);
      for (int qi = 0; qi < 4; ++qi) {
        out << " " << format_double(q[qi], digits);
      }
      for (int ti = 0; ti < 3; ++ti) {
        out << " " << format_double(t[ti], digits);
      }
      out << " " << (shared ? 1 : static_cast<int>(i) + 1) << " " << names[i]
          << "\n\n";
    }
  }
}

TrajectoryResult to_trajectory(const SfmModel& model,
                               const std::vector<std::string>& expected_names) {
  metrics::Trajectory traj;
  traj.frames.reserve(expected_names.size());
  for (const std::string& name : expected_names) {
    const SfmImage* img = model.find_image(name);
    if (img == nullptr) {
      return TrajectoryResult{std::nullopt, "missing frame " + name};
    }
    geometry::CameraPose w2c;
    w2c.rotation = quaternion_to_rotation(img->quat);
    w2c.translation = img->translation;
    if (!w2c.translation.allFinite() || !w2c.rotation.allFinite()) {
      return TrajectoryResult{std::nullopt, "non-finite pose for " + name};
    }
    traj.frames.push_back(geometry::camera_to_world(w2c));
  }
  return TrajectoryResult{std::move(traj), ""};
}

std::vector<int> sample_strided(int total, int stride, int n, int start) {
  if (stride < 1 || n < 1 || start < 0) {
    throw std::out_of_range("sample_strided: bad parameters");
  }
  const int last = start + (n - 1) * stride;
  if (last >= total) {
    throw std::out_of_range("sample_strided: needs " + std::to_string(last + 1) +
                            " frames, have " + std::to_string(total));
  }
  std::vector<int> indices(n);
  for (int i = 0; i < n; ++i) {
    indices[i] = start + i * stride;
  }
  return indices;
}

namespace {

Mat3 look_at_rotation(const Vec3& position, const Vec3& target,
                      const Vec3& up) {
  const Vec3 forward = (target - position).normalized();
  const Vec3 right = up.cross(forward).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

}  // namespace

metrics::Trajectory synth_trajectory(TrajectoryKind kind, int n,
                                     std::uint64_t seed,
                                     const SynthParams& params) {
  if (n < 2) {
    throw std::invalid_argument("synth_trajectory: need n >= 2");
  }
  metrics::Trajectory traj;
  traj.frames.resize(n);
  switch (kind) {
    case TrajectoryKind::dolly: {
      for (int i = 0; i < n; ++i) {
        traj.frames[i].rotation = Mat3::Identity();
        traj.frames[i].translation =
            Vec3(0, 0, params.translation_step * i);
      }
      break;
    }
    case TrajectoryKind::pan: {
      const double step = params.pan_deg_per_frame * M_PI / 180.0;
      for (int i = 0; i < n; ++i) {
        traj.frames[i].rotation =
            Eigen::AngleAxisd(step * i, Vec3::UnitY()).toRotationMatrix();
        traj.frames[i].translation = Vec3::Zero();
      }
      break;
    }
    case TrajectoryKind::orbit: {
      const double step = params.orbit_deg_per_frame * M_PI / 180.0;
      const double r = params.orbit_radius;
      const Vec3 center(0, 0, r);
      for (int i = 0; i < n; ++i) {
        const double phi = step * i;
        const Vec3 pos(-r * std::sin(phi), 0.0, r - r * std::cos(phi));
        traj.frames[i].rotation = look_at_rotation(pos, center, Vec3::UnitY());
        traj.frames[i].translation = pos;
      }
      break;
    }
    case TrajectoryKind::random_smooth: {
      RandomGen rng(seed);
      const Vec3 omega = rng.normal_vec3(0.02);
      const Vec3 vel = rng.normal_vec3(params.translation_step * 0.5);
      traj.frames[0].rotation = Mat3::Identity();
      traj.frames[0].translation = Vec3::Zero();
      for (int i = 1; i < n; ++i) {
        const Vec3 w = omega + rng.normal_vec3(0.02 * params.smooth_noise);
        const double angle = w.norm();
        Mat3 dr = Mat3::Identity();
        if (angle > 1e-12) {
          dr = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
        }
        traj.frames[i].rotation = traj.frames[i - 1].rotation * dr;
        traj.frames[i].translation =
            traj.frames[i - 1].translation + vel +
            rng.normal_vec3(params.translation_step * 0.5 *
                            params.smooth_noise);
      }
      break;
    }
  }
  return traj;
}

TrajectoryKind trajectory_kind_from_string(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::orbit;
  if (name == "dolly") return TrajectoryKind::dolly;
  if (name == "pan") return TrajectoryKind::pan;
  if (name == "random_smooth") return TrajectoryKind::random_smooth;
  throw std::invalid_argument(
      "unknown trajectory kind '" + name +
      "' (valid: orbit, dolly, pan, random_smooth)");
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::orbit: return "orbit";
    case TrajectoryKind::dolly: return "dolly";
    case TrajectoryKind::pan: return "pan";
    case TrajectoryKind::random_smooth: return "random_smooth";
  }
  return "unknown";
}

void write_trajectory_json(const metrics::Trajectory& t,
                           const std::filesystem::path& path) {
  nlohmann::json frames = nlohmann::json::array();
  for (const geometry::CameraPose& pose : t.frames) {
    nlohmann::json jf;
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        r[3 * i + j] = pose.rotation(i, j);
      }
    }
    jf["R"] = r;
    jf["T"] = {pose.translation[0], pose.translation[1],
               pose.translation[2]};
    frames.push_back(std::move(jf));
  }
  nlohmann::json j;
  j["frames"] = std::move(frames);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_trajectory_json: cannot open " +
                             path.string());
  }
  out << j.dump(2) << "\n";
}

metrics::Trajectory read_trajectory_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("read_trajectory_json: cannot open " +
                             path.string());
  }
  nlohmann::json j;
  in >> j;
  metrics::Trajectory t;
  for (const nlohmann::json& jf : j.at("frames")) {
    geometry::CameraPose pose;
    const auto& r = jf.at("R");
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) {
        pose.rotation(i, c) = r.at(3 * i + c).get<double>();
      }
    }
    const auto& tj = jf.at("T");
    pose.translation =
        Vec3(tj.at(0).get<double>(), tj.at(1).get<double>(),
             tj.at(2).get<double>());
    t.frames.push_back(pose);
  }
  return t;
}

std::vector<std::string> glomap_invocation(
    const geometry::CameraIntrinsics& k, const std::string& image_dir,
    const std::string& workspace_dir) {
  std::ostringstream params;
  const char* model = nullptr;
  if (k.fx == k.fy) {
    model = "SIMPLE_PINHOLE";
    params << format_double(k.fx, 12) << "," << format_double(k.cx, 12) << ","
           << format_double(k.cy, 12);
  } else {
    model = "PINHOLE";
    params << format_double(k.fx, 12) << "," << format_double(k.fy, 12) << ","
           << format_double(k.cx, 12) << "," << format_double(k.cy, 12);
  }
  const std::string db = workspace_dir + "/database.db";
  std::vector<std::string> cmds;
  cmds.push_back("colmap feature_extractor --database_path " + db +
                 " --image_path " + image_dir +
                 " --ImageReader.camera_model " + model +
                 " --ImageReader.single_camera 1" +
                 " --ImageReader.camera_params \"" + params.str() + "\"" +
                 " --SiftExtraction.estimate_affine_shape 1" +
                 " --SiftExtraction.domain_size_pooling 1");
  cmds.push_back("colmap exhaustive_matcher --database_path " + db +
                 " --SiftMatching.guided_matching 1" +
                 " --SiftMatching.max_num_matches 65536");
  cmds.push_back("glomap mapper --database_path " + db + " --image_path " +
                 image_dir + " --output_path " + workspace_dir + "/sparse" +
                 " --BundleAdjustment.optimize_intrinsics 0" +
                 " --RelPoseEstimation.max_epipolar_error 4");
  return cmds;
}

}  // namespace epiray::io
