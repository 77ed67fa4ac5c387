#pragma once

#include <array>
#include <string>
#include <vector>

#include "conr/geometry.hpp"

namespace conr {

struct Joint {
  std::string name;
  int parent = -1;  // -1 only for the root; parents precede children
  Vec3 pivot = Vec3::Zero();
  Vec3 min_angle = Vec3::Zero();  // radians, per axis
  Vec3 max_angle = Vec3::Zero();
};

struct Skeleton {
  std::vector<Joint> joints;

  int find(const std::string& name) const;  // -1 when absent
  void validate() const;
};

/// Character in A-pose at the world origin. Every vertex follows exactly one
/// joint rigidly.
struct MeshApose {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> colors;
  std::vector<int> vertex_joint;
  Skeleton skeleton;

  void validate() const;
};

/// Per-vertex pose-independent surface coordinates in [0,1]^3.
struct LandmarkSet {
  std::vector<Vec3> values;
};

/// Per-joint Euler angles (see rotation_xyz) plus a global yaw about +y.
/// Missing trailing joints are at rest.
struct Pose {
  std::vector<Vec3> angles;
  double yaw = 0.0;

  static Pose identity(const Skeleton& s) { return Pose{std::vector<Vec3>(s.joints.size(), Vec3::Zero()), 0.0}; }
  bool within_limits(const Skeleton& s, double tol = 1e-12) const;
};

struct PosedMesh {
  std::vector<Vec3> positions;
  const MeshApose* rest = nullptr;  // triangles, colors and joints live here
};

/// Bounding box of the A-pose, widened by half a percent on every side, mapped
/// to the unit cube.
LandmarkSet bake_landmarks(const MeshApose& mesh);

/// World transform of every joint under `pose`.
std::vector<Affine> joint_transforms(const Skeleton& s, const Pose& pose);

PosedMesh pose_mesh(const MeshApose& mesh, const Pose& pose);

}  // namespace conr
