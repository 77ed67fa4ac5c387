#include "conr/camera.hpp"

#include <algorithm>
#include <cmath>

#include "conr/errors.hpp"

namespace conr {

void Camera::validate() const {
  if (height < 1 || width < 1) throw ConfigError("camera viewport must be at least 1x1");
  if ((eye - look_at).norm() == 0.0) throw ConfigError("camera eye coincides with look_at");
  if (mode == Projection::kOrthographic && !(scale > 0.0)) throw ConfigError("orthographic scale must be positive");
  if (mode == Projection::kPerspective && !(fov_y > 0.0 && fov_y < 3.1)) throw ConfigError("field of view out of range");
  const Vec3 f = (look_at - eye).normalized();
  if (f.cross(up).norm() < 1e-12) throw ConfigError("camera up vector is parallel to the view direction");
}

Projected project(const Camera& cam, const Vec3& p) {
  const Vec3 f = (cam.look_at - cam.eye).normalized();
  const Vec3 r = f.cross(cam.up).normalized();
  const Vec3 u = r.cross(f);
  const Vec3 d = p - cam.eye;
  const double xc = d.dot(r), yc = d.dot(u), zc = d.dot(f);
  Projected out;
  out.depth = zc;
  if (cam.mode == Projection::kOrthographic) {
    out.x = 0.5 * cam.width + cam.scale * xc;
    out.y = 0.5 * cam.height - cam.scale * yc;
    return out;
  }
  constexpr double kNear = 1e-6;
  if (zc <= kNear) {
    out.behind = true;
    return out;
  }
  const double focal = 0.5 * cam.height / std::tan(0.5 * cam.fov_y);
  out.x = 0.5 * cam.width + focal * xc / zc;
  out.y = 0.5 * cam.height - focal * yc / zc;
  return out;
}

Camera default_camera(int height_px, int width_px, double character_height) {
  Camera c;
  c.height = height_px;
  c.width = width_px;
  c.eye = Vec3(0.0, 0.0, 10.0);
  c.look_at = Vec3::Zero();
  c.scale = 0.9 * std::min(height_px, width_px) / character_height;
  return c;
}

}  // namespace conr
