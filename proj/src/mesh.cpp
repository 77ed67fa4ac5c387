#include "conr/mesh.hpp"

#include <algorithm>
#include <limits>

#include "conr/errors.hpp"

namespace conr {

int Skeleton::find(const std::string& name) const {
  for (std::size_t j = 0; j < joints.size(); ++j)
    if (joints[j].name == name) return static_cast<int>(j);
  return -1;
}

void Skeleton::validate() const {
  if (joints.empty()) throw ContractError("skeleton has no joints");
  for (std::size_t j = 0; j < joints.size(); ++j) {
    const int p = joints[j].parent;
    if (j == 0 ? p != -1 : (p < 0 || p >= static_cast<int>(j)))
      throw ContractError("joint '" + joints[j].name + "' has an invalid parent");
    for (int a = 0; a < 3; ++a)
      if (joints[j].min_angle[a] > joints[j].max_angle[a])
        throw ContractError("joint '" + joints[j].name + "' has inverted limits");
  }
}

void MeshApose::validate() const {
  if (triangles.empty()) throw ContractError("mesh has no triangles");
  const int nv = static_cast<int>(vertices.size());
  for (const auto& t : triangles)
    for (int v : t)
      if (v < 0 || v >= nv) throw ContractError("triangle index " + std::to_string(v) + " out of range");
  if (colors.size() != vertices.size()) throw ContractError("mesh color count differs from vertex count");
  if (vertex_joint.size() != vertices.size()) throw ContractError("mesh joint assignment count differs from vertex count");
  skeleton.validate();
  const int nj = static_cast<int>(skeleton.joints.size());
  for (int j : vertex_joint)
    if (j < 0 || j >= nj) throw ContractError("vertex bound to unknown joint " + std::to_string(j));
}

bool Pose::within_limits(const Skeleton& s, double tol) const {
  if (angles.size() > s.joints.size()) return false;
  for (std::size_t j = 0; j < angles.size(); ++j)
    for (int a = 0; a < 3; ++a)
      if (angles[j][a] < s.joints[j].min_angle[a] - tol || angles[j][a] > s.joints[j].max_angle[a] + tol) return false;
  return true;
}

LandmarkSet bake_landmarks(const MeshApose& mesh) {
  if (mesh.vertices.empty()) throw DegenerateMeshError("mesh has no vertices");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 extent = hi - lo;
  for (int a = 0; a < 3; ++a)
    if (!(extent[a] > 0.0)) throw DegenerateMeshError("A-pose bounding box has zero extent along axis " + std::to_string(a));
  const Vec3 origin = lo - 0.005 * extent;
  const Vec3 range = 1.01 * extent;
  LandmarkSet out;
  out.values.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) out.values.push_back((v - origin).cwiseQuotient(range));
  return out;
}

std::vector<Affine> joint_transforms(const Skeleton& s, const Pose& pose) {
  if (pose.angles.size() > s.joints.size())
    throw ContractError("pose references joint " + std::to_string(pose.angles.size() - 1) + " but the skeleton has " +
                        std::to_string(s.joints.size()));
  const Affine yaw(Eigen::AngleAxisd(pose.yaw, Vec3::UnitY()));
  std::vector<Affine> world(s.joints.size());
  for (std::size_t j = 0; j < s.joints.size(); ++j) {
    const Vec3 a = j < pose.angles.size() ? pose.angles[j] : Vec3::Zero();
    const Affine local = rotation_about(s.joints[j].pivot, rotation_xyz(a));
    const int p = s.joints[j].parent;
    world[j] = (p < 0 ? yaw : world[p]) * local;
  }
  return world;
}

PosedMesh pose_mesh(const MeshApose& mesh, const Pose& pose) {
  const auto world = joint_transforms(mesh.skeleton, pose);
  PosedMesh pm;
  pm.rest = &mesh;
  pm.positions.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const int j = mesh.vertex_joint[v];
    if (j < 0 || j >= static_cast<int>(world.size())) throw ContractError("vertex bound to unknown joint");
    pm.positions[v] = world[j] * mesh.vertices[v];
  }
  return pm;
}

}  // namespace conr
