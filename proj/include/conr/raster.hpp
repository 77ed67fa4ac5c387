#pragma once

#include <array>
#include <span>
#include <vector>

#include "conr/camera.hpp"
#include "conr/image.hpp"
#include "conr/mesh.hpp"

namespace conr {

/// Per-pixel winner of the depth test.
struct Fragments {
  int height = 0;
  int width = 0;
  std::vector<int> triangle;  // -1 where nothing is drawn
  std::vector<double> depth;
  // Corners in positive-area winding order and their perspective-correct weights.
  std::vector<std::array<int, 3>> vertex;
  std::vector<std::array<double, 3>> bary;
};

/// Pixel centers at (j + 0.5, i + 0.5) with a top-left fill rule, no culling,
/// strict depth test so the lower triangle index wins ties. Triangles with a
/// vertex behind a perspective camera are dropped.
Fragments rasterize_fragments(std::span<const Vec3> positions, std::span<const std::array<int, 3>> triangles,
                              const Camera& cam);

UdpImage rasterize_udp(const PosedMesh& pm, const LandmarkSet& lms, const Camera& cam);

/// Unit vector pointing at the light.
Vec3 light_direction();

/// Interpolated vertex colors times max(0.3, n.l) of the face normal.
RgbaImage rasterize_rgba(const PosedMesh& pm, const Camera& cam);

}  // namespace conr
