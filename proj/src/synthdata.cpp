#include "conr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "conr/raster.hpp"
#include "conr/rng.hpp"

namespace conr {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 random_color(Rng& r, double lo = 0.05, double hi = 0.95) {
  const double a = r.uniform(lo, hi), b = r.uniform(lo, hi), c = r.uniform(lo, hi);
  return Vec3(a, b, c);
}

Joint make_joint(std::string name, int parent, Vec3 pivot, Vec3 lo, Vec3 hi) {
  return Joint{std::move(name), parent, pivot, lo, hi};
}

struct MeshBuilder {
  MeshApose& mesh;

  int vertex(const Vec3& p, const Vec3& color, int joint) {
    mesh.vertices.push_back(p);
    mesh.colors.push_back(color);
    mesh.vertex_joint.push_back(joint);
    return static_cast<int>(mesh.vertices.size()) - 1;
  }

  // Winding chosen so the normal points away from `inside` (parts are convex).
  void triangle(int a, int b, int c, const Vec3& inside) {
    const auto& v = mesh.vertices;
    const Vec3 n = (v[b] - v[a]).cross(v[c] - v[a]);
    const Vec3 centroid = (v[a] + v[b] + v[c]) / 3.0;
    if (n.dot(centroid - inside) >= 0.0)
      mesh.triangles.push_back({a, b, c});
    else
      mesh.triangles.push_back({a, c, b});
  }

  void box(const Part& p) {
    const Mat3 rot = rotation_xyz(p.tilt);
    const Vec3 axes[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    for (int axis = 0; axis < 3; ++axis) {
      for (int sign : {1, -1}) {
        const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
        const Vec3 n = sign * axes[axis];
        const Vec3 color = (axis == 2 && sign > 0) ? p.accent : p.color;
        int ids[4];
        const int corners[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
        for (int k = 0; k < 4; ++k) {
          Vec3 local = n.cwiseProduct(p.half_size) + corners[k][0] * axes[ua].cwiseProduct(p.half_size) +
                       corners[k][1] * axes[va].cwiseProduct(p.half_size);
          if (p.shape == PartShape::kFrustum && local.y() > 0.0) {
            local.x() *= p.taper;
            local.z() *= p.taper;
          }
          ids[k] = vertex(p.center + rot * local, color, p.joint);
        }
        triangle(ids[0], ids[1], ids[2], p.center);
        triangle(ids[0], ids[2], ids[3], p.center);
      }
    }
  }

  void sphere(const Part& p) {
    constexpr int kRings = 8, kSegments = 12;
    const Mat3 rot = rotation_xyz(p.tilt);
    auto color_at = [&](const Vec3& local) {
      // Upper cap and the back of the head take the accent (hair) color.
      const bool hair = local.y() > -0.2 * p.half_size.y() || local.z() < -0.3 * p.half_size.z();
      return hair ? p.accent : p.color;
    };
    auto add = [&](const Vec3& unit) {
      const Vec3 local = unit.cwiseProduct(p.half_size);
      return vertex(p.center + rot * local, color_at(local), p.joint);
    };
    const int top = add(Vec3::UnitY());
    std::vector<std::vector<int>> rings;
    for (int k = 1; k < kRings; ++k) {
      const double phi = kPi * k / kRings;
      std::vector<int> ring;
      for (int s = 0; s < kSegments; ++s) {
        const double theta = 2.0 * kPi * s / kSegments;
        ring.push_back(add(Vec3(std::sin(phi) * std::sin(theta), std::cos(phi), std::sin(phi) * std::cos(theta))));
      }
      rings.push_back(std::move(ring));
    }
    const int bottom = add(-Vec3::UnitY());
    for (int s = 0; s < kSegments; ++s) {
      const int s1 = (s + 1) % kSegments;
      triangle(top, rings.front()[s], rings.front()[s1], p.center);
      triangle(bottom, rings.back()[s1], rings.back()[s], p.center);
      for (std::size_t k = 0; k + 1 < rings.size(); ++k) {
        triangle(rings[k][s], rings[k + 1][s], rings[k + 1][s1], p.center);
        triangle(rings[k][s], rings[k + 1][s1], rings[k][s1], p.center);
      }
    }
  }
};

CharacterSpec gen_uncentered(std::uint64_t seed) {
  Rng r(derive_seed(seed, hash_name("character")));
  CharacterSpec c;
  c.seed = seed;

  const double leg_upper = r.uniform(0.32, 0.42), leg_lower = r.uniform(0.32, 0.42), leg_r = r.uniform(0.055, 0.08);
  const double torso_hw = r.uniform(0.15, 0.22), torso_hh = r.uniform(0.24, 0.30), torso_hd = r.uniform(0.09, 0.13);
  const double head_rx = r.uniform(0.14, 0.19), head_ry = head_rx * r.uniform(0.95, 1.15);
  const double arm_upper = r.uniform(0.25, 0.33), arm_lower = r.uniform(0.23, 0.30), arm_r = r.uniform(0.045, 0.065);
  const double a_angle = r.uniform(0.55, 0.75);
  const bool skirt = r.bernoulli(0.5);
  const double skirt_len = r.uniform(0.2, 0.3), skirt_flare = r.uniform(1.3, 1.7);
  const int fins = r.uniform_int(0, 2);
  const int lone_fin_side = r.bernoulli(0.5) ? 1 : -1;

  const Vec3 skin(r.uniform(0.85, 1.0), r.uniform(0.70, 0.85), r.uniform(0.60, 0.75));
  const Vec3 hair = random_color(r), top = random_color(r), accent = random_color(r), legs = random_color(r);
  const Vec3 skirt_color = random_color(r), sleeve = random_color(r);

  const double hip_y = leg_upper + leg_lower;
  const double neck_y = hip_y + 2.0 * torso_hh;
  const double head_y = neck_y + 0.95 * head_ry;
  const double hip_x = 0.55 * torso_hw;
  const double shoulder_y = neck_y - 0.05;
  const double shoulder_x = torso_hw + 0.5 * arm_r;

  auto& J = c.skeleton.joints;
  J.push_back(make_joint("root", -1, Vec3(0, hip_y, 0), Vec3(-0.25, -0.4, -0.15), Vec3(0.25, 0.4, 0.15)));
  J.push_back(make_joint("head", 0, Vec3(0, neck_y, 0), Vec3(-0.4, -0.7, -0.3), Vec3(0.4, 0.7, 0.3)));
  for (int side : {1, -1}) {
    const std::string s = side > 0 ? "l_" : "r_";
    const Vec3 shoulder(side * shoulder_x, shoulder_y, 0);
    const Vec3 dir(side * std::sin(a_angle), -std::cos(a_angle), 0);
    const Vec3 elbow = shoulder + arm_upper * dir;
    const int js = static_cast<int>(J.size());
    J.push_back(make_joint(s + "shoulder", 0, shoulder, Vec3(-1.2, -0.4, side > 0 ? -0.5 : -1.2),
                           Vec3(0.9, 0.4, side > 0 ? 1.2 : 0.5)));
    J.push_back(make_joint(s + "elbow", js, elbow, Vec3(-1.6, -0.3, -0.3), Vec3(0.0, 0.3, 0.3)));
    const Vec3 tilt(0, 0, side * a_angle);
    c.parts.push_back(Part{s + "upper_arm", PartShape::kBox, js, shoulder + 0.5 * arm_upper * dir,
                           Vec3(arm_r, 0.5 * arm_upper, arm_r), tilt, 1.0, sleeve, sleeve});
    c.parts.push_back(Part{s + "forearm", PartShape::kBox, js + 1, elbow + 0.5 * arm_lower * dir,
                           Vec3(0.85 * arm_r, 0.5 * arm_lower, 0.85 * arm_r), tilt, 1.0, skin, skin});
  }
  for (int side : {1, -1}) {
    const std::string s = side > 0 ? "l_" : "r_";
    const Vec3 hip(side * hip_x, hip_y, 0), knee(side * hip_x, leg_lower, 0);
    const int jh = static_cast<int>(J.size());
    J.push_back(make_joint(s + "hip", 0, hip, Vec3(-1.0, -0.3, side > 0 ? -0.1 : -0.5),
                           Vec3(0.6, 0.3, side > 0 ? 0.5 : 0.1)));
    J.push_back(make_joint(s + "knee", jh, knee, Vec3(0.0, 0.0, 0.0), Vec3(1.5, 0.0, 0.0)));
    c.parts.push_back(Part{s + "thigh", PartShape::kBox, jh, Vec3(side * hip_x, hip_y - 0.5 * leg_upper, 0),
                           Vec3(leg_r, 0.5 * leg_upper, leg_r), Vec3::Zero(), 1.0, legs, legs});
    c.parts.push_back(Part{s + "shin", PartShape::kBox, jh + 1, Vec3(side * hip_x, 0.5 * leg_lower, 0),
                           Vec3(0.9 * leg_r, 0.5 * leg_lower, 0.9 * leg_r), Vec3::Zero(), 1.0, 0.8 * legs, 0.8 * legs});
  }
  c.parts.push_back(Part{"torso", PartShape::kBox, 0, Vec3(0, hip_y + torso_hh, 0), Vec3(torso_hw, torso_hh, torso_hd),
                         Vec3::Zero(), 1.0, top, accent});
  c.parts.push_back(Part{"head", PartShape::kSphere, 1, Vec3(0, head_y, 0), Vec3(head_rx, head_ry, head_rx),
                         Vec3::Zero(), 1.0, skin, hair});
  if (skirt) {
    const double top_w = 1.02 * torso_hw, top_d = 1.05 * torso_hd;
    const double half_h = 0.5 * (skirt_len + 0.05);
    c.parts.push_back(Part{"skirt", PartShape::kFrustum, 0, Vec3(0, hip_y + 0.05 - half_h, 0),
                           Vec3(top_w * skirt_flare, half_h, top_d * skirt_flare), Vec3::Zero(), 1.0 / skirt_flare,
                           skirt_color, skirt_color});
  }
  for (int f = 0; f < fins; ++f) {
    const int side = fins == 1 ? lone_fin_side : (f == 0 ? 1 : -1);
    const double fin_h = r.uniform(0.07, 0.12);
    const Vec3 base(side * 0.55 * head_rx, head_y + 0.75 * head_ry, 0);
    const Vec3 tilt(0, 0, -side * 0.3);
    const Vec3 up = rotation_xyz(tilt) * Vec3::UnitY();
    J.push_back(make_joint("fin_" + std::to_string(f), 1, base, Vec3(-0.4, 0.0, -0.4), Vec3(0.4, 0.0, 0.4)));
    c.parts.push_back(Part{"fin_" + std::to_string(f), PartShape::kBox, static_cast<int>(J.size()) - 1,
                           base + fin_h * up, Vec3(0.03, fin_h, 0.015), tilt, 1.0, hair, hair});
  }
  return c;
}

}  // namespace

void CharacterSpec::validate() const {
  skeleton.validate();
  if (parts.empty()) throw ContractError("character has no parts");
  for (const auto& p : parts) {
    if (p.joint < 0 || p.joint >= static_cast<int>(skeleton.joints.size()))
      throw ContractError("part '" + p.name + "' references an unknown joint");
    if (!(p.half_size.array() > 0.0).all()) throw ContractError("part '" + p.name + "' has a non-positive size");
    if (!(p.taper > 0.0)) throw ContractError("part '" + p.name + "' has a non-positive taper");
  }
  if (!(yaw_limit >= 0.0)) throw ContractError("negative yaw limit");
}

bool CharacterSpec::operator==(const CharacterSpec& o) const {
  if (seed != o.seed || yaw_limit != o.yaw_limit || parts.size() != o.parts.size() ||
      skeleton.joints.size() != o.skeleton.joints.size())
    return false;
  for (std::size_t j = 0; j < skeleton.joints.size(); ++j) {
    const auto &a = skeleton.joints[j], &b = o.skeleton.joints[j];
    if (a.name != b.name || a.parent != b.parent || a.pivot != b.pivot || a.min_angle != b.min_angle ||
        a.max_angle != b.max_angle)
      return false;
  }
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto &a = parts[k], &b = o.parts[k];
    if (a.name != b.name || a.shape != b.shape || a.joint != b.joint || a.center != b.center ||
        a.half_size != b.half_size || a.tilt != b.tilt || a.taper != b.taper || a.color != b.color ||
        a.accent != b.accent)
      return false;
  }
  return true;
}

MeshApose build_mesh(const CharacterSpec& spec) {
  spec.validate();
  MeshApose mesh;
  mesh.skeleton = spec.skeleton;
  MeshBuilder b{mesh};
  for (const auto& p : spec.parts) {
    if (p.shape == PartShape::kSphere)
      b.sphere(p);
    else
      b.box(p);
  }
  mesh.validate();
  return mesh;
}

CharacterSpec gen_character(std::uint64_t seed) {
  CharacterSpec c = gen_uncentered(seed);
  const MeshApose m = build_mesh(c);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : m.vertices) {
    lo = std::min(lo, v.y());
    hi = std::max(hi, v.y());
  }
  const Vec3 shift(0, -0.5 * (lo + hi), 0);
  for (auto& j : c.skeleton.joints) j.pivot += shift;
  for (auto& p : c.parts) p.center += shift;
  return c;
}

Pose gen_pose(std::uint64_t seed, const CharacterSpec& spec) {
  Rng r(derive_seed(seed, hash_name("pose")));
  Pose p;
  for (const auto& j : spec.skeleton.joints) {
    Vec3 a;
    for (int k = 0; k < 3; ++k) a[k] = r.uniform(j.min_angle[k], j.max_angle[k]);
    p.angles.push_back(a);
  }
  p.yaw = r.uniform(-spec.yaw_limit, spec.yaw_limit);
  return p;
}

RgbaImage gen_background(std::uint64_t seed, int height, int width) {
  if (height < 1 || width < 1) throw ContractError("background size must be positive");
  Rng r(derive_seed(seed, hash_name("background")));
  const Vec3 c0 = random_color(r, 0.0, 1.0), c1 = random_color(r, 0.0, 1.0);
  const double angle = r.uniform(0.0, 2.0 * kPi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  constexpr int kGrid = 5;
  double noise[kGrid][kGrid];
  for (auto& row : noise)
    for (double& v : row) v = r.uniform(-1.0, 1.0);
  const double amp = r.uniform(0.05, 0.15);

  RgbaImage img(height, width);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double u = (j + 0.5) / width, v = (i + 0.5) / height;
      const double t = std::clamp(0.5 + (u - 0.5) * dx + (v - 0.5) * dy, 0.0, 1.0);
      const double gx = u * (kGrid - 1), gy = v * (kGrid - 1);
      const int x0 = std::min(static_cast<int>(gx), kGrid - 2), y0 = std::min(static_cast<int>(gy), kGrid - 2);
      const double fx = gx - x0, fy = gy - y0;
      const double n = (1 - fy) * ((1 - fx) * noise[y0][x0] + fx * noise[y0][x0 + 1]) +
                       fy * ((1 - fx) * noise[y0 + 1][x0] + fx * noise[y0 + 1][x0 + 1]);
      const Vec3 c = (1.0 - t) * c0 + t * c1 + Vec3::Constant(amp * n);
      for (int k = 0; k < 3; ++k) img.at(i, j, k) = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
      img.at(i, j, 3) = 1.0f;
    }
  }
  return img;
}

double framing_height(const MeshApose& mesh) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& v : mesh.vertices) {
    lo = std::min(lo, v.y());
    hi = std::max(hi, v.y());
  }
  // Raised arms and yaw reach past the rest silhouette.
  return 1.2 * (hi - lo);
}

CropWindow random_crop_window(std::uint64_t seed, int resolution) {
  Rng r(derive_seed(seed, hash_name("crop")));
  CropWindow w;
  w.size = resolution * 7 / 8;
  w.top = r.uniform_int(0, resolution - w.size);
  w.left = r.uniform_int(0, resolution - w.size);
  return w;
}

UdpImage apply_crop(const UdpImage& u, const CropWindow& w) {
  if (w.size == 0) return u;
  UdpImage out(u.height, u.width);
  for (int i = 0; i < u.height; ++i) {
    const int si = w.top + i * w.size / u.height;
    for (int j = 0; j < u.width; ++j) {
      const int sj = w.left + j * w.size / u.width;
      for (int c = 0; c < 4; ++c) out.at(i, j, c) = u.at(si, sj, c);
    }
  }
  return out;
}

RgbaImage apply_crop(const RgbaImage& img, const CropWindow& w) {
  if (w.size == 0) return img;
  RgbaImage out(img.height, img.width);
  const double sy = static_cast<double>(w.size) / img.height, sx = static_cast<double>(w.size) / img.width;
  for (int i = 0; i < img.height; ++i) {
    const double y = std::clamp(w.top + (i + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = std::min(static_cast<int>(y), img.height - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - y0;
    for (int j = 0; j < img.width; ++j) {
      const double x = std::clamp(w.left + (j + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = std::min(static_cast<int>(x), img.width - 1), x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - x0;
      const int ys[4] = {y0, y0, y1, y1}, xs[4] = {x0, x1, x0, x1};
      const double ws[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      double acc[4] = {0, 0, 0, 0};
      for (int k = 0; k < 4; ++k) {
        const double a = img.at(ys[k], xs[k], 3);
        for (int c = 0; c < 3; ++c) acc[c] += ws[k] * a * img.at(ys[k], xs[k], c);
        acc[3] += ws[k] * a;
      }
      out.at(i, j, 3) = static_cast<float>(acc[3]);
      for (int c = 0; c < 3; ++c)
        out.at(i, j, c) = acc[3] > 0.0 ? static_cast<float>(std::clamp(acc[c] / acc[3], 0.0, 1.0)) : 0.0f;
    }
  }
  return out;
}

PoseRender render_pose(const MeshApose& mesh, const LandmarkSet& lms, const Pose& pose, int resolution) {
  if (resolution < 16) throw ConfigError("resolution must be at least 16");
  const Camera cam = default_camera(resolution, resolution, framing_height(mesh));
  const auto pm = pose_mesh(mesh, pose);
  return {rasterize_rgba(pm, cam), rasterize_udp(pm, lms, cam)};
}

TrainingSample assemble_sample(std::span<const PoseRender* const> sheet, const PoseRender& target, int k,
                               std::uint64_t seed, int resolution, const SampleOptions& opt) {
  if (sheet.empty() || k < 1) throw ConfigError("a sample needs m >= 1 and k >= 1");
  if (resolution < 16) throw ConfigError("resolution must be at least 16");
  auto window = [&](std::uint64_t stream) {
    return opt.random_crop ? random_crop_window(derive_seed(seed, stream), resolution) : CropWindow{};
  };
  TrainingSample s;
  s.has_udp_gt = opt.has_udp_gt;
  for (std::size_t i = 0; i < sheet.size(); ++i) s.sheet.push_back(apply_crop(sheet[i]->rgba, window(1000 + i)));
  const CropWindow tw = window(2000);
  s.target = apply_crop(target.rgba, tw);
  if (opt.has_udp_gt) s.target_udp = apply_crop(target.udp, tw);
  for (int j = 0; j < k; ++j) {
    const auto bg = gen_background(derive_seed(seed, 3000 + j), resolution, resolution);
    s.augmented.push_back(apply_crop(composite_over(target.rgba, bg), tw));
  }
  return s;
}

TrainingSample make_sample(const MeshApose& mesh, const LandmarkSet& lms, const CharacterSpec& spec, int m, int k,
                           std::uint64_t seed, int resolution, const SampleOptions& opt) {
  if (m < 1 || k < 1) throw ConfigError("make_sample needs m >= 1 and k >= 1");
  if (resolution < 16) throw ConfigError("resolution must be at least 16");
  std::vector<PoseRender> renders;
  for (int i = 0; i <= m; ++i) renders.push_back(render_pose(mesh, lms, gen_pose(derive_seed(seed, i), spec), resolution));
  std::vector<const PoseRender*> sheet;
  for (int i = 0; i < m; ++i) sheet.push_back(&renders[i]);
  return assemble_sample(sheet, renders[m], k, seed, resolution, opt);
}

TrainingSample make_sample(const CharacterSpec& spec, int m, int k, std::uint64_t seed, int resolution,
                           const SampleOptions& opt) {
  const MeshApose mesh = build_mesh(spec);
  const LandmarkSet lms = bake_landmarks(mesh);
  return make_sample(mesh, lms, spec, m, k, seed, resolution, opt);
}

Split split_dataset(const std::vector<std::uint64_t>& seeds, int ratio, std::uint64_t shuffle_seed) {
  if (ratio < 1) throw ConfigError("split ratio must be at least 1");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("character seeds must be unique");
  const std::size_t n = seeds.size();
  if (n < static_cast<std::size_t>(ratio) + 1)
    throw ConfigError("need at least " + std::to_string(ratio + 1) + " characters for a " + std::to_string(ratio) +
                      ":1 split, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng r(derive_seed(shuffle_seed, hash_name("split")));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[r.uniform_int(0, static_cast<int>(i))]);
  const std::size_t n_val = n / (ratio + 1);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  Split s;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? s.val : s.train).push_back(seeds[i]);
  return s;
}

}  // namespace conr
