#include "conr/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conr/errors.hpp"

namespace conr {

namespace {

struct P2 {
  double x, y;
};

double edge(const P2& a, const P2& b, const P2& p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

// Screen y grows downward; with positive area the top edge runs left to right
// and left edges run upward.
bool top_left(const P2& a, const P2& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

bool covers(double w, bool tl) { return w > 0.0 || (w == 0.0 && tl); }

}  // namespace

Fragments rasterize_fragments(std::span<const Vec3> positions, std::span<const std::array<int, 3>> triangles,
                              const Camera& cam) {
  cam.validate();
  const int h = cam.height, w = cam.width;
  Fragments fr;
  fr.height = h;
  fr.width = w;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  fr.triangle.assign(n, -1);
  fr.depth.assign(n, std::numeric_limits<double>::infinity());
  fr.vertex.assign(n, {-1, -1, -1});
  fr.bary.assign(n, {0.0, 0.0, 0.0});

  std::vector<Projected> proj(positions.size());
  for (std::size_t v = 0; v < positions.size(); ++v) proj[v] = project(cam, positions[v]);
  const bool persp = cam.mode == Projection::kPerspective;

  for (std::size_t t = 0; t < triangles.size(); ++t) {
    std::array<int, 3> vid = triangles[t];
    for (int v : vid)
      if (v < 0 || static_cast<std::size_t>(v) >= positions.size()) throw ContractError("triangle index out of range");
    if (proj[vid[0]].behind || proj[vid[1]].behind || proj[vid[2]].behind) continue;
    P2 a{proj[vid[0]].x, proj[vid[0]].y}, b{proj[vid[1]].x, proj[vid[1]].y}, c{proj[vid[2]].x, proj[vid[2]].y};
    double area = edge(a, b, c);
    if (area == 0.0 || !std::isfinite(area)) continue;
    if (area < 0.0) {
      std::swap(b, c);
      std::swap(vid[1], vid[2]);
      area = -area;
    }
    const double za = proj[vid[0]].depth, zb = proj[vid[1]].depth, zc = proj[vid[2]].depth;
    const bool tl0 = top_left(b, c), tl1 = top_left(c, a), tl2 = top_left(a, b);

    const double minx = std::min({a.x, b.x, c.x}), maxx = std::max({a.x, b.x, c.x});
    const double miny = std::min({a.y, b.y, c.y}), maxy = std::max({a.y, b.y, c.y});
    const int j0 = std::max(0, static_cast<int>(std::floor(minx - 0.5)));
    const int j1 = std::min(w - 1, static_cast<int>(std::ceil(maxx - 0.5)));
    const int i0 = std::max(0, static_cast<int>(std::floor(miny - 0.5)));
    const int i1 = std::min(h - 1, static_cast<int>(std::ceil(maxy - 0.5)));
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const P2 p{j + 0.5, i + 0.5};
        const double w0 = edge(b, c, p), w1 = edge(c, a, p), w2 = edge(a, b, p);
        if (!covers(w0, tl0) || !covers(w1, tl1) || !covers(w2, tl2)) continue;
        const double l0 = w0 / area, l1 = w1 / area, l2 = w2 / area;
        double z;
        std::array<double, 3> bc;
        if (persp) {
          const double q0 = l0 / za, q1 = l1 / zb, q2 = l2 / zc;
          z = 1.0 / (q0 + q1 + q2);
          bc = {q0 * z, q1 * z, q2 * z};
        } else {
          z = l0 * za + l1 * zb + l2 * zc;
          bc = {l0, l1, l2};
        }
        const std::size_t px = static_cast<std::size_t>(i) * w + j;
        if (!(z < fr.depth[px])) continue;
        fr.depth[px] = z;
        fr.triangle[px] = static_cast<int>(t);
        fr.vertex[px] = vid;
        fr.bary[px] = bc;
      }
    }
  }
  return fr;
}

UdpImage rasterize_udp(const PosedMesh& pm, const LandmarkSet& lms, const Camera& cam) {
  if (!pm.rest) throw ContractError("posed mesh has no rest mesh");
  if (lms.values.size() != pm.positions.size()) throw ContractError("landmark count differs from vertex count");
  const auto fr = rasterize_fragments(pm.positions, pm.rest->triangles, cam);
  UdpImage out(cam.height, cam.width);
  for (int i = 0; i < cam.height; ++i) {
    for (int j = 0; j < cam.width; ++j) {
      const std::size_t px = static_cast<std::size_t>(i) * cam.width + j;
      const int t = fr.triangle[px];
      if (t < 0) continue;
      const auto& v = fr.vertex[px];
      const auto& bc = fr.bary[px];
      const Vec3 lm = bc[0] * lms.values[v[0]] + bc[1] * lms.values[v[1]] + bc[2] * lms.values[v[2]];
      for (int c = 0; c < 3; ++c) out.at(i, j, c) = static_cast<float>(std::clamp(lm[c], 0.0, 1.0));
      out.at(i, j, 3) = 1.0f;
    }
  }
  return out;
}

Vec3 light_direction() { return Vec3(0.25, 0.5, 1.0).normalized(); }

RgbaImage rasterize_rgba(const PosedMesh& pm, const Camera& cam) {
  if (!pm.rest) throw ContractError("posed mesh has no rest mesh");
  const auto& mesh = *pm.rest;
  const auto fr = rasterize_fragments(pm.positions, mesh.triangles, cam);
  const Vec3 light = light_direction();
  std::vector<double> shade(mesh.triangles.size(), 0.3);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3 n = (pm.positions[tri[1]] - pm.positions[tri[0]]).cross(pm.positions[tri[2]] - pm.positions[tri[0]]);
    const double len = n.norm();
    if (len > 0.0) shade[t] = std::max(0.3, n.dot(light) / len);
  }
  RgbaImage out(cam.height, cam.width);
  for (int i = 0; i < cam.height; ++i) {
    for (int j = 0; j < cam.width; ++j) {
      const std::size_t px = static_cast<std::size_t>(i) * cam.width + j;
      const int t = fr.triangle[px];
      if (t < 0) continue;
      const auto& v = fr.vertex[px];
      const auto& bc = fr.bary[px];
      const Vec3 col = shade[t] * (bc[0] * mesh.colors[v[0]] + bc[1] * mesh.colors[v[1]] + bc[2] * mesh.colors[v[2]]);
      for (int c = 0; c < 3; ++c) out.at(i, j, c) = static_cast<float>(std::clamp(col[c], 0.0, 1.0));
      out.at(i, j, 3) = 1.0f;
    }
  }
  return out;
}

}  // namespace conr
