#include "erpgs/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/LU>
#include <spdlog/spdlog.h>
#include <tbb/parallel_for.h>

#include "erpgs/error.hpp"
#include "erpgs/image_io.hpp"
#include "json.hpp"
#include "ply.hpp"

namespace erpgs {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* split_name(Split s) { return s == Split::kTest ? "test" : "train"; }

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw LoadError(where, key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw LoadError(where, key, e.what());
  }
}

Vec4 quat_from_json(const json& view, const std::string& where) {
  if (view.contains("q")) {
    const auto q = require<std::vector<double>>(view, "q", where);
    if (q.size() != 4) throw LoadError(where, "q", "expected 4 values (w, x, y, z)");
    return {q[0], q[1], q[2], q[3]};
  }
  if (view.contains("R")) {
    const auto rows = require<std::vector<std::vector<double>>>(view, "R", where);
    if (rows.size() != 3) throw LoadError(where, "R", "expected a 3x3 matrix");
    Mat3 R;
    for (int r = 0; r < 3; ++r) {
      if (rows[r].size() != 3) throw LoadError(where, "R", "expected a 3x3 matrix");
      for (int c = 0; c < 3; ++c) R(r, c) = rows[r][c];
    }
    const double err = (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (err > kPoseTolerance || R.determinant() <= 0.0) {
      throw LoadError(where, "R", "rotation is not orthonormal (max |R R^T - I| = " + std::to_string(err) + ")");
    }
    return rotation_to_quat(R);
  }
  throw LoadError(where, "q", "missing pose rotation (q or R)");
}

std::vector<std::string> checkpoint_names(int sh_degree) {
  std::vector<std::string> names{"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  const int rest = 3 * (sh_coeff_count(sh_degree) - 1);
  for (int i = 0; i < rest; ++i) names.push_back("f_rest_" + std::to_string(i));
  names.push_back("opacity");
  for (int i = 0; i < 3; ++i) names.push_back("scale_" + std::to_string(i));
  for (int i = 0; i < 4; ++i) names.push_back("rot_" + std::to_string(i));
  return names;
}

int comment_int(const ply::VertexTable& t, const std::string& key, int fallback) {
  for (const auto& c : t.comments) {
    std::istringstream s(c);
    std::string k;
    int v;
    if (s >> k >> v && k == key) return v;
  }
  return fallback;
}

}  // namespace

// ---------------------------------------------------------------------------
// Point clouds and checkpoints

PointCloud read_points_ply(const fs::path& path) {
  const ply::VertexTable t = ply::read(path);
  const int x = t.find("x"), y = t.find("y"), z = t.find("z");
  if (x < 0 || y < 0 || z < 0) throw LoadError(path.string(), "x,y,z", "missing vertex coordinates");
  const int r = t.find("red"), g = t.find("green"), b = t.find("blue");
  const bool has_color = r >= 0 && g >= 0 && b >= 0;
  double color_scale = 1.0;
  if (has_color) {
    const auto type = t.properties[r].type;
    if (type == ply::ScalarType::kUint8) color_scale = 1.0 / 255.0;
    else if (type == ply::ScalarType::kUint16) color_scale = 1.0 / 65535.0;
  }
  PointCloud pc;
  for (std::size_t i = 0; i < t.count; ++i) {
    pc.xyz.emplace_back(t.at(i, x), t.at(i, y), t.at(i, z));
    pc.rgb.push_back(has_color ? Vec3(Vec3(t.at(i, r), t.at(i, g), t.at(i, b)) * color_scale) : Vec3(0.5, 0.5, 0.5));
  }
  return pc;
}

void write_points_ply(const fs::path& path, const PointCloud& points) {
  ply::VertexTable t;
  t.properties = {{"x", ply::ScalarType::kFloat64},    {"y", ply::ScalarType::kFloat64},
                  {"z", ply::ScalarType::kFloat64},    {"red", ply::ScalarType::kUint8},
                  {"green", ply::ScalarType::kUint8},  {"blue", ply::ScalarType::kUint8}};
  t.count = points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int k = 0; k < 3; ++k) t.values.push_back(points.xyz[i][k]);
    for (int k = 0; k < 3; ++k) t.values.push_back(std::clamp(points.rgb[i][k], 0.0, 1.0) * 255.0);
  }
  ply::write(path, t);
}

void save_checkpoint(const GaussianCloud& cloud, const fs::path& path) {
  const int degree = cloud.max_sh_degree();
  const int rest = sh_coeff_count(degree) - 1;
  ply::VertexTable t;
  t.comments = {"erpgs_checkpoint " + std::to_string(kCheckpointVersion),
                "sh_degree " + std::to_string(degree),
                "active_sh_degree " + std::to_string(cloud.active_sh_degree())};
  for (const auto& n : checkpoint_names(degree)) t.properties.push_back({n, ply::ScalarType::kFloat64});
  t.count = cloud.size();
  t.values.reserve(t.count * t.properties.size());
  for (const Gaussian3D& g : cloud.gaussians()) {
    for (int k = 0; k < 3; ++k) t.values.push_back(g.mu[k]);
    for (int k = 0; k < 3; ++k) t.values.push_back(0.0);
    for (int c = 0; c < 3; ++c) t.values.push_back(g.sh(0, c));
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k <= rest; ++k) t.values.push_back(g.sh(k, c));
    t.values.push_back(g.logit_opacity);
    for (int k = 0; k < 3; ++k) t.values.push_back(g.log_scale[k]);
    for (int k = 0; k < 4; ++k) t.values.push_back(g.rot[k]);
  }
  ply::write(path, t);
}

GaussianCloud load_checkpoint(const fs::path& path) {
  const ply::VertexTable t = ply::read(path);
  const int version = comment_int(t, "erpgs_checkpoint", kCheckpointVersion);
  if (version != kCheckpointVersion) {
    throw LoadError(path.string(), "version", "unsupported checkpoint version " + std::to_string(version));
  }
  int rest_count = 0;
  while (t.find("f_rest_" + std::to_string(rest_count)) >= 0) ++rest_count;
  int degree = -1;
  for (int d = 0; d <= kMaxShDegree; ++d) {
    if (3 * (sh_coeff_count(d) - 1) == rest_count) degree = d;
  }
  if (degree < 0) {
    throw LoadError(path.string(), "f_rest", std::to_string(rest_count) + " f_rest properties match no SH degree");
  }
  std::vector<std::string> missing;
  std::vector<int> col;
  for (const auto& n : checkpoint_names(degree)) {
    const int c = t.find(n);
    if (c < 0 && n[0] != 'n') missing.push_back(n);
    col.push_back(c);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw LoadError(path.string(), list, "missing properties: " + list);
  }
  GaussianCloud cloud(degree);
  cloud.set_active_sh_degree(comment_int(t, "active_sh_degree", degree));
  const int rest = sh_coeff_count(degree) - 1;
  for (std::size_t i = 0; i < t.count; ++i) {
    Gaussian3D g;
    int k = 0;
    auto next = [&] { return t.at(i, col[k++]); };
    for (int j = 0; j < 3; ++j) g.mu[j] = next();
    k += 3;  // normals are not stored in the model
    for (int c = 0; c < 3; ++c) g.sh(0, c) = next();
    for (int c = 0; c < 3; ++c)
      for (int j = 1; j <= rest; ++j) g.sh(j, c) = next();
    g.logit_opacity = next();
    for (int j = 0; j < 3; ++j) g.log_scale[j] = next();
    for (int j = 0; j < 4; ++j) g.rot[j] = next();
    cloud.push_back(g);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Manifest

CameraPose make_pose(const Vec4& q, const Vec3& t, const ErpImageGeom& geom, const std::string& where) {
  const double n = q.norm();
  if (!(std::abs(n - 1.0) <= kPoseTolerance)) {
    throw LoadError(where, "q", "rotation quaternion is not unit length (norm " + std::to_string(n) + ")");
  }
  if (!t.allFinite()) throw LoadError(where, "t", "non-finite translation");
  return {quat_to_rotation(q / n), t, geom};
}

CameraPose read_pose_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "", "cannot open pose file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.string(), "", std::string("invalid JSON: ") + e.what());
  }
  const std::string where = path.string();
  const ErpImageGeom geom{require<int>(j, "width", where), require<int>(j, "height", where)};
  try {
    geom.validate();
  } catch (const std::invalid_argument& e) {
    throw LoadError(where, "width", e.what());
  }
  const auto t = require<std::vector<double>>(j, "t", where);
  if (t.size() != 3) throw LoadError(where, "t", "expected 3 values");
  return make_pose(quat_from_json(j, where), Vec3(t[0], t[1], t[2]), geom, where);
}

SceneManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "", "cannot open manifest");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.string(), "", std::string("invalid JSON: ") + e.what());
  }
  const std::string where = path.string();
  SceneManifest m;
  m.base_dir = path.parent_path();
  m.version = require<int>(j, "version", where);
  if (m.version != kManifestVersion) {
    throw LoadError(where, "version", "unsupported manifest version " + std::to_string(m.version));
  }
  const auto convention = j.value("pose_convention", std::string("world_to_camera"));
  if (convention != "world_to_camera") {
    throw LoadError(where, "pose_convention", "only world_to_camera poses are supported");
  }
  m.scene = j.value("scene", std::string());
  m.width = require<int>(j, "width", where);
  m.height = require<int>(j, "height", where);
  if (j.contains("points") && !j["points"].is_null()) m.points = require<std::string>(j, "points", where);
  if (!j.contains("views") || !j["views"].is_array()) throw LoadError(where, "views", "missing view list");
  for (std::size_t i = 0; i < j["views"].size(); ++i) {
    const json& v = j["views"][i];
    ManifestView view;
    view.name = v.value("name", "view_" + std::to_string(i));
    const std::string vw = where + " view '" + view.name + "'";
    view.image = require<std::string>(v, "image", vw);
    if (v.contains("mask") && !v["mask"].is_null()) view.mask = fs::path(require<std::string>(v, "mask", vw));
    view.q = quat_from_json(v, vw);
    const auto t = require<std::vector<double>>(v, "t", vw);
    if (t.size() != 3) throw LoadError(vw, "t", "expected 3 values");
    view.t = Vec3(t[0], t[1], t[2]);
    const auto split = v.value("split", std::string("train"));
    if (split != "train" && split != "test") throw LoadError(vw, "split", "expected 'train' or 'test'");
    view.split = split == "test" ? Split::kTest : Split::kTrain;
    m.views.push_back(std::move(view));
  }
  return m;
}

void write_manifest(const fs::path& path, const SceneManifest& m) {
  json j;
  j["version"] = m.version;
  j["scene"] = m.scene;
  j["pose_convention"] = "world_to_camera";
  j["width"] = m.width;
  j["height"] = m.height;
  if (!m.points.empty()) j["points"] = m.points.generic_string();
  j["views"] = json::array();
  for (const auto& v : m.views) {
    json jv;
    jv["name"] = v.name;
    jv["image"] = v.image.generic_string();
    if (v.mask) jv["mask"] = v.mask->generic_string();
    jv["q"] = {v.q[0], v.q[1], v.q[2], v.q[3]};
    jv["t"] = {v.t[0], v.t[1], v.t[2]};
    jv["split"] = split_name(v.split);
    j["views"].push_back(jv);
  }
  std::ofstream out(path);
  if (!out) throw LoadError(path.string(), "", "cannot open for writing");
  out << j.dump(2) << "\n";
}

std::vector<int> Dataset::indices(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(static_cast<int>(i));
  }
  return out;
}

Dataset load_scene(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw LoadError(manifest_path.string(), "", "manifest not found");
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const SceneManifest& m = ds.manifest;
  const std::string where = manifest_path.string();
  const ErpImageGeom geom = m.geom();
  try {
    geom.validate();
  } catch (const std::invalid_argument& e) {
    throw LoadError(where, "width", e.what());
  }
  if (geom.width != 2 * geom.height) {
    spdlog::warn("{}: {}x{} is not a 2:1 equirectangular image", where, geom.width, geom.height);
  }
  if (m.views.empty()) throw LoadError(where, "views", "no views");

  for (const auto& v : m.views) {
    const fs::path img = m.base_dir / v.image;
    if (!fs::exists(img)) throw LoadError(img.string(), "image", "file not found (view '" + v.name + "')");
    if (v.mask && !fs::exists(m.base_dir / *v.mask)) {
      throw LoadError((m.base_dir / *v.mask).string(), "mask", "file not found (view '" + v.name + "')");
    }
  }
  if (!m.points.empty()) {
    const fs::path pts = m.base_dir / m.points;
    if (!fs::exists(pts)) throw LoadError(pts.string(), "points", "file not found");
    ds.points = read_points_ply(pts);
  }

  auto weight = std::make_shared<const Image>(distortion_weight_map(geom));
  ds.samples.resize(m.views.size());
  tbb::parallel_for(std::size_t{0}, m.views.size(), [&](std::size_t i) {
    const ManifestView& v = m.views[i];
    TrainSample& s = ds.samples[i];
    s.name = v.name;
    s.split = v.split;
    s.pose = make_pose(v.q, v.t, geom, where + " view '" + v.name + "'");
    const fs::path img = m.base_dir / v.image;
    PngInfo info;
    s.image = read_png(img, 3, &info);
    s.bit_depth = info.bit_depth;
    if (s.image.width() != geom.width || s.image.height() != geom.height) {
      throw LoadError(img.string(), "image", "size " + std::to_string(s.image.width()) + "x" +
                                                 std::to_string(s.image.height()) + " does not match manifest " +
                                                 std::to_string(geom.width) + "x" + std::to_string(geom.height));
    }
    s.wm.weight = weight;
    if (v.mask) {
      const fs::path mp = m.base_dir / *v.mask;
      Image mask = read_png(mp, 1);
      if (mask.width() != geom.width || mask.height() != geom.height) {
        throw LoadError(mp.string(), "mask", "mask size does not match the manifest");
      }
      for (double& x : mask.data()) x = x > 0.5 ? 1.0 : 0.0;
      s.wm.mask = std::move(mask);
      s.has_mask = true;
    } else {
      s.wm.mask = Image(geom.width, geom.height, 1, 1.0);
    }
    try {
      s.wm.validate();
    } catch (const std::invalid_argument& e) {
      throw LoadError(v.mask ? (m.base_dir / *v.mask).string() : img.string(), "mask", e.what());
    }
  });
  return ds;
}

// ---------------------------------------------------------------------------
// COLMAP text import

namespace {

std::vector<std::string> data_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "", "cannot open");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

fs::path convert_colmap(const ColmapImport& in) {
  SceneManifest m;
  m.scene = in.scene;
  m.width = in.width;
  m.height = in.height;

  if (m.width <= 0 || m.height <= 0) {
    const fs::path cams = in.images_txt.parent_path() / "cameras.txt";
    if (fs::exists(cams)) {
      for (const auto& line : data_lines(cams)) {
        std::istringstream s(line);
        int id, w, h;
        std::string model;
        if (s >> id >> model >> w >> h) {
          m.width = w;
          m.height = h;
          break;
        }
      }
    }
  }

  const auto lines = data_lines(in.images_txt);
  std::vector<ManifestView> views;
  // Image records alternate with (possibly empty) 2D point lines.
  for (std::size_t i = 0; i < lines.size(); i += 2) {
    if (lines[i].empty()) {
      --i;  // tolerate blank separators
      continue;
    }
    std::istringstream s(lines[i]);
    long id, cam;
    double qw, qx, qy, qz, tx, ty, tz;
    std::string name;
    if (!(s >> id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> cam >> name)) {
      throw LoadError(in.images_txt.string(), "line " + std::to_string(i + 1), "malformed image record");
    }
    ManifestView v;
    v.name = fs::path(name).stem().string();
    v.image = in.image_dir / name;
    v.q = Vec4(qw, qx, qy, qz).normalized();
    v.t = Vec3(tx, ty, tz);
    views.push_back(v);
  }
  std::sort(views.begin(), views.end(), [](const auto& a, const auto& b) { return a.image < b.image; });
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (in.test_every > 0 && i % in.test_every == static_cast<std::size_t>(in.test_every - 1)) {
      views[i].split = Split::kTest;
    }
  }
  m.views = std::move(views);
  if (m.views.empty()) throw LoadError(in.images_txt.string(), "", "no image records");

  if (m.width <= 0 || m.height <= 0) {
    fs::path first = m.views.front().image;
    if (first.is_relative()) first = in.out_dir / first;
    const PngInfo info = read_png_info(first);
    m.width = info.width;
    m.height = info.height;
  }

  PointCloud pc;
  for (const auto& line : data_lines(in.points3d_txt)) {
    std::istringstream s(line);
    long id;
    double x, y, z;
    int r, g, b;
    if (!(s >> id >> x >> y >> z >> r >> g >> b)) continue;
    pc.xyz.emplace_back(x, y, z);
    pc.rgb.push_back(Vec3(r, g, b) / 255.0);
  }
  if (pc.size() == 0) throw LoadError(in.points3d_txt.string(), "", "no 3D points");

  fs::create_directories(in.out_dir);
  m.points = "points.ply";
  write_points_ply(in.out_dir / m.points, pc);
  const fs::path manifest = in.out_dir / "scene.json";
  write_manifest(manifest, m);
  return manifest;
}

}  // namespace erpgs
