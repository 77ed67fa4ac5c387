#pragma once

#include "conr/geometry.hpp"

namespace conr {

enum class Projection { kOrthographic, kPerspective };

struct Camera {
  Vec3 eye{0.0, 0.0, 10.0};
  Vec3 look_at{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  Projection mode = Projection::kOrthographic;
  double scale = 1.0;  // orthographic: pixels per world unit
  double fov_y = 0.8;  // perspective: vertical field of view in radians
  int height = 64;
  int width = 64;

  void validate() const;
};

struct Projected {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;  // along the viewing direction, grows away from the camera
  bool behind = false;
};

Projected project(const Camera& cam, const Vec3& p);

/// Front-facing orthographic camera framing a character of `height` world
/// units with a small border.
Camera default_camera(int height_px, int width_px, double character_height);

}  // namespace conr
