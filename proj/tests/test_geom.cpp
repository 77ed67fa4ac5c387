#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "conr/errors.hpp"
#include "conr/raster.hpp"
#include "conr/rng.hpp"
#include "support/random_scene.hpp"
#include "support/raster_oracle.hpp"

using namespace conr;

namespace {

Skeleton single_joint() {
  Skeleton s;
  s.joints.push_back(Joint{"root", -1, Vec3::Zero(), Vec3::Constant(-1), Vec3::Constant(1)});
  return s;
}

MeshApose unit_cube() {
  MeshApose m;
  for (int k = 0; k < 8; ++k) m.vertices.emplace_back(k & 1, (k >> 1) & 1, (k >> 2) & 1);
  m.triangles = {{0, 1, 2}, {1, 3, 2}, {4, 6, 5}, {5, 6, 7}};
  m.colors.assign(8, Vec3(0.5, 0.5, 0.5));
  m.vertex_joint.assign(8, 0);
  m.skeleton = single_joint();
  return m;
}

// Upper arm from the shoulder (joint 1) and a forearm (joint 2) hinged at x=1.
MeshApose two_segment_arm() {
  MeshApose m;
  m.skeleton.joints = {
      Joint{"root", -1, Vec3::Zero(), Vec3::Constant(-3.2), Vec3::Constant(3.2)},
      Joint{"shoulder", 0, Vec3(0, 0, 0), Vec3::Constant(-3.2), Vec3::Constant(3.2)},
      Joint{"elbow", 1, Vec3(1, 0, 0), Vec3::Constant(-3.2), Vec3::Constant(3.2)},
  };
  const double xs[] = {0.0, 1.0, 2.0};
  for (double x : xs)
    for (double y : {-0.1, 0.1}) m.vertices.emplace_back(x, y, 0.05 * x);
  m.triangles = {{0, 2, 1}, {1, 2, 3}, {2, 4, 3}, {3, 4, 5}};
  m.colors.assign(m.vertices.size(), Vec3(1, 0, 0));
  m.vertex_joint = {1, 1, 2, 2, 2, 2};
  return m;
}

Camera ortho16(int size = 16) {
  Camera c;
  c.height = c.width = size;
  c.scale = size / 2.0;  // world [-1,1] fills the viewport
  return c;
}

}  // namespace

TEST(BakeLandmarks, UnitCubeCornersAndCenter) {
  auto cube = unit_cube();
  const auto lms = bake_landmarks(cube);
  EXPECT_NEAR(lms.values[0].x(), 0.005 / 1.01, 1e-15);
  EXPECT_NEAR(lms.values[0].x(), 0.0049, 1e-4);
  EXPECT_NEAR(lms.values[7].z(), 1.005 / 1.01, 1e-15);
  EXPECT_NEAR(lms.values[7].z(), 0.9951, 1e-4);

  cube.vertices.emplace_back(0.5, 0.5, 0.5);
  cube.colors.emplace_back(0, 0, 0);
  cube.vertex_joint.push_back(0);
  const auto with_center = bake_landmarks(cube);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(with_center.values.back()[a], 0.5, 1e-15);
}

TEST(BakeLandmarks, DeterministicAndInUnitRange) {
  auto a = unit_cube(), b = unit_cube();
  b.colors.assign(8, Vec3(0.1, 0.9, 0.3));  // appearance does not matter
  const auto la = bake_landmarks(a), lb = bake_landmarks(b);
  for (std::size_t v = 0; v < la.values.size(); ++v) {
    EXPECT_EQ(la.values[v], lb.values[v]);
    EXPECT_TRUE((la.values[v].array() >= 0.0).all() && (la.values[v].array() <= 1.0).all());
  }
}

TEST(BakeLandmarks, FlatMeshIsDegenerate) {
  auto m = unit_cube();
  for (auto& v : m.vertices) v.z() = 0.0;
  EXPECT_THROW(bake_landmarks(m), DegenerateMeshError);
}

TEST(PoseMesh, IdentityPoseKeepsPositions) {
  const auto m = two_segment_arm();
  const auto pm = pose_mesh(m, Pose::identity(m.skeleton));
  for (std::size_t v = 0; v < m.vertices.size(); ++v) EXPECT_EQ(pm.positions[v], m.vertices[v]);
}

TEST(PoseMesh, HalfTurnYawNegatesXZ) {
  const auto m = two_segment_arm();
  Pose p = Pose::identity(m.skeleton);
  p.yaw = M_PI;
  const auto pm = pose_mesh(m, p);
  const auto before = bake_landmarks(m);
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    EXPECT_NEAR(pm.positions[v].x(), -m.vertices[v].x(), 1e-12);
    EXPECT_NEAR(pm.positions[v].y(), m.vertices[v].y(), 1e-12);
    EXPECT_NEAR(pm.positions[v].z(), -m.vertices[v].z(), 1e-12);
  }
  // Landmarks come from the rest mesh only.
  EXPECT_EQ(bake_landmarks(*pm.rest).values, before.values);
}

TEST(PoseMesh, ElbowBendMatchesSingleMatrixOracle) {
  const auto m = two_segment_arm();
  Pose p = Pose::identity(m.skeleton);
  p.angles[2] = Vec3(0, 0, M_PI / 2);
  const auto pm = pose_mesh(m, p);
  // Rotation by +90 degrees about z through (1,0,0): (x,y,z) -> (1 - y, x - 1, z).
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    const Vec3& a = m.vertices[v];
    const Vec3 expect = m.vertex_joint[v] == 2 ? Vec3(1.0 - a.y(), a.x() - 1.0, a.z()) : a;
    EXPECT_NEAR((pm.positions[v] - expect).norm(), 0.0, 1e-12) << "vertex " << v;
  }
}

TEST(PoseMesh, ChainComposesParentTransforms) {
  const auto m = two_segment_arm();
  Pose p = Pose::identity(m.skeleton);
  p.angles[1] = Vec3(0, 0, M_PI / 2);  // whole arm swings up about the shoulder
  const auto pm = pose_mesh(m, p);
  // (x,y,z) -> (-y, x, z) for every arm vertex.
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    const Vec3& a = m.vertices[v];
    EXPECT_NEAR((pm.positions[v] - Vec3(-a.y(), a.x(), a.z())).norm(), 0.0, 1e-12);
  }
}

TEST(PoseMesh, UnknownJointIsContractViolation) {
  const auto m = two_segment_arm();
  Pose p;
  p.angles.assign(7, Vec3::Zero());
  EXPECT_THROW(pose_mesh(m, p), ContractError);
}

TEST(Project, OrthographicExamples) {
  Camera c = ortho16();
  c.eye = Vec3(0, 0, -10);  // on the -z axis looking at the origin
  const auto o = project(c, Vec3::Zero());
  EXPECT_DOUBLE_EQ(o.x, 8.0);
  EXPECT_DOUBLE_EQ(o.y, 8.0);

  const auto near = project(c, Vec3(0.3, 0.2, -1)), far = project(c, Vec3(0.3, 0.2, 2));
  EXPECT_DOUBLE_EQ(near.x, far.x);
  EXPECT_DOUBLE_EQ(near.y, far.y);
  EXPECT_LT(near.depth, far.depth);

  Camera front = ortho16();
  const auto shifted = project(front, Vec3(1, 0, 0));
  EXPECT_DOUBLE_EQ(shifted.x - 8.0, front.scale);
  EXPECT_DOUBLE_EQ(project(front, Vec3(0, 1, 0)).y, 8.0 - front.scale);  // image y points down
}

TEST(Project, PerspectiveBehindCamera) {
  Camera c = ortho16();
  c.mode = Projection::kPerspective;
  EXPECT_FALSE(project(c, Vec3::Zero()).behind);
  EXPECT_TRUE(project(c, Vec3(0, 0, 11)).behind);
  const auto on_axis = project(c, Vec3(0, 0, 3));
  EXPECT_DOUBLE_EQ(on_axis.x, 8.0);
  EXPECT_DOUBLE_EQ(on_axis.depth, 7.0);
}

TEST(RasterizeUdp, FullViewportTriangleIsConstant) {
  MeshApose m;
  m.vertices = {Vec3(-3, -3, 0), Vec3(3, -3, 0), Vec3(0, 5, 0)};
  m.triangles = {{0, 1, 2}};
  m.colors.assign(3, Vec3(1, 1, 1));
  m.vertex_joint.assign(3, 0);
  m.skeleton = single_joint();
  LandmarkSet lms{std::vector<Vec3>(3, Vec3(0.2, 0.4, 0.6))};
  const auto u = rasterize_udp(pose_mesh(m, Pose::identity(m.skeleton)), lms, ortho16());
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      ASSERT_FLOAT_EQ(u.at(i, j, 0), 0.2f);
      ASSERT_FLOAT_EQ(u.at(i, j, 2), 0.6f);
      ASSERT_EQ(u.at(i, j, 3), 1.0f);
    }
}

TEST(RasterizeUdp, NearerTriangleWinsEverywhere) {
  MeshApose m;
  // Far triangle (z = -1, depth 11) listed first, near one (z = 0, depth 10) second.
  m.vertices = {Vec3(-3, -3, -1), Vec3(3, -3, -1), Vec3(0, 5, -1), Vec3(-3, -3, 0), Vec3(3, -3, 0), Vec3(0, 5, 0)};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  m.colors.assign(6, Vec3(1, 1, 1));
  m.vertex_joint.assign(6, 0);
  m.skeleton = single_joint();
  LandmarkSet lms;
  lms.values = {Vec3(0.9, 0.9, 0.9), Vec3(0.9, 0.9, 0.9), Vec3(0.9, 0.9, 0.9),
                Vec3(0.1, 0.1, 0.1), Vec3(0.1, 0.1, 0.1), Vec3(0.1, 0.1, 0.1)};
  const auto u = rasterize_udp(pose_mesh(m, Pose::identity(m.skeleton)), lms, ortho16());
  for (std::size_t p = 0; p < u.pixels(); ++p) ASSERT_FLOAT_EQ(u.data[p * 4], 0.1f);
}

TEST(RasterizeUdp, EqualDepthTieGoesToLowerIndex) {
  MeshApose m;
  m.vertices = {Vec3(-3, -3, 0), Vec3(3, -3, 0), Vec3(0, 5, 0)};
  m.triangles = {{0, 1, 2}, {0, 2, 1}};
  m.colors.assign(3, Vec3(1, 1, 1));
  m.vertex_joint.assign(3, 0);
  m.skeleton = single_joint();
  const auto fr = rasterize_fragments(m.vertices, m.triangles, ortho16());
  for (int t : fr.triangle) ASSERT_EQ(t, 0);
}

TEST(RasterizeUdp, SharedEdgeIsPaintedOnce) {
  // Square split along a diagonal that passes through pixel centers.
  std::vector<Vec3> v = {Vec3(-1, -1, 0), Vec3(1, -1, 0), Vec3(1, 1, 0), Vec3(-1, 1, 0)};
  std::vector<std::array<int, 3>> t = {{0, 1, 2}, {0, 2, 3}};
  Camera c = ortho16();
  c.scale = 7.5;  // square spans [0.5, 15.5]: edges run exactly through pixel centers
  const auto fr = rasterize_fragments(v, t, c);
  int covered = 0;
  for (int id : fr.triangle) covered += id >= 0;
  // Top-left rule: left column and top row included, right and bottom excluded.
  EXPECT_EQ(covered, 15 * 15);
}

namespace {

void expect_matches_oracle(const oracle::RandomScene& s, const Camera& c) {
  MeshApose m;
  m.vertices = s.pos;
  m.triangles = s.tris;
  m.colors.assign(s.pos.size(), Vec3(1, 1, 1));
  m.vertex_joint.assign(s.pos.size(), 0);
  m.skeleton = single_joint();
  const auto got = rasterize_udp(pose_mesh(m, Pose::identity(m.skeleton)), LandmarkSet{s.lms}, c);
  const auto want = oracle::oracle_udp(s.pos, s.tris, s.lms, c);
  ASSERT_EQ(got.data.size(), want.data.size());
  for (std::size_t k = 0; k < got.data.size(); ++k) ASSERT_EQ(got.data[k], want.data[k]) << "element " << k;
  EXPECT_TRUE(is_valid_gt_udp(got));
}

}  // namespace

TEST(RasterizeUdp, MatchesBruteForceOracleOrthographic) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) expect_matches_oracle(oracle::random_scene(rng, 10, 1.0 / 16), ortho16());
}

TEST(RasterizeUdp, MatchesBruteForceOracleAt32) {
  Rng rng(78);
  for (int trial = 0; trial < 10; ++trial) expect_matches_oracle(oracle::random_scene(rng, 10, 1.0 / 32), ortho16(32));
}

TEST(RasterizeUdp, MatchesBruteForceOraclePerspective) {
  Rng rng(79);
  Camera c = ortho16();
  c.mode = Projection::kPerspective;
  c.eye = Vec3(0, 0, 3);
  for (int trial = 0; trial < 20; ++trial) expect_matches_oracle(oracle::random_scene(rng, 10, 1.0 / 10), c);
}

TEST(RasterizeUdp, OffscreenMeshGivesEmptyImage) {
  MeshApose m = unit_cube();
  for (auto& v : m.vertices) v.x() += 100.0;
  const auto u = rasterize_udp(pose_mesh(m, Pose::identity(m.skeleton)), bake_landmarks(m), ortho16());
  for (float f : u.data) ASSERT_EQ(f, 0.0f);
}

TEST(RasterizeRgba, ShadingHeadOnAndBackLit) {
  const Vec3 l = light_direction();
  // Orthonormal in-plane axes so the triangle normal is exactly +l or -l.
  const Vec3 e1 = l.cross(Vec3::UnitX()).normalized(), e2 = l.cross(e1);
  MeshApose m;
  m.vertices = {-6 * e1 - 6 * e2, 6 * e1 - 6 * e2, 6 * e2};
  m.colors.assign(3, Vec3(0.8, 0.6, 0.4));
  m.vertex_joint.assign(3, 0);
  m.skeleton = single_joint();
  const bool facing = (m.vertices[1] - m.vertices[0]).cross(m.vertices[2] - m.vertices[0]).dot(l) > 0;
  m.triangles = {facing ? std::array<int, 3>{0, 1, 2} : std::array<int, 3>{0, 2, 1}};
  const auto lit = rasterize_rgba(pose_mesh(m, Pose::identity(m.skeleton)), ortho16());
  EXPECT_NEAR(lit.at(8, 8, 0), 0.8f, 1e-6);
  EXPECT_NEAR(lit.at(8, 8, 2), 0.4f, 1e-6);
  EXPECT_EQ(lit.at(8, 8, 3), 1.0f);

  std::swap(m.triangles[0][1], m.triangles[0][2]);
  const auto back = rasterize_rgba(pose_mesh(m, Pose::identity(m.skeleton)), ortho16());
  EXPECT_NEAR(back.at(8, 8, 0), 0.3f * 0.8f, 1e-6);
  EXPECT_EQ(rasterize_rgba(pose_mesh(m, Pose::identity(m.skeleton)), ortho16()), back);
}

TEST(RasterizeRgba, CoverageMatchesUdpOccupancy) {
  Rng rng(80);
  const auto s = oracle::random_scene(rng, 10, 1.0 / 16);
  MeshApose m;
  m.vertices = s.pos;
  m.triangles = s.tris;
  m.colors.assign(s.pos.size(), Vec3(0.5, 0.5, 0.5));
  m.vertex_joint.assign(s.pos.size(), 0);
  m.skeleton = single_joint();
  const auto pm = pose_mesh(m, Pose::identity(m.skeleton));
  const auto u = rasterize_udp(pm, LandmarkSet{s.lms}, ortho16());
  const auto r = rasterize_rgba(pm, ortho16());
  for (std::size_t p = 0; p < u.pixels(); ++p) ASSERT_EQ(u.data[p * 4 + 3], r.data[p * 4 + 3]);
}

TEST(UdpFile, RoundTripSizeAndErrors) {
  UdpImage u(2, 2);
  for (std::size_t k = 0; k < u.data.size(); ++k) u.data[k] = static_cast<float>(k) / 16.0f;
  const auto dir = std::filesystem::temp_directory_path() / "conr_test_udpf";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.udpf";
  write_udp(u, path);
  // 13-byte header (magic, version, two u32 dimensions) + 2*2*4 floats.
  EXPECT_EQ(std::filesystem::file_size(path), 13u + 64u);
  EXPECT_EQ(read_udp(path), u);

  auto bytes = encode_udp(u);
  auto expect_kind = [](std::vector<std::uint8_t> b, ParseError::Kind kind, std::size_t offset) {
    try {
      decode_udp(b);
      ADD_FAILURE() << "no error";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
      EXPECT_EQ(e.offset(), offset) << e.what();
    }
  };
  auto bad = bytes;
  std::copy_n("XXXX", 4, bad.begin());
  expect_kind(bad, ParseError::Kind::kBadMagic, 0);
  bad = bytes;
  bad[4] = 2;
  expect_kind(bad, ParseError::Kind::kBadVersion, 4);
  expect_kind(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 40), ParseError::Kind::kTruncated, 40);
  expect_kind(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10), ParseError::Kind::kTruncated, 10);
  bad = bytes;
  bad.push_back(0);
  expect_kind(bad, ParseError::Kind::kTrailingData, 77);
  std::filesystem::remove_all(dir);
}

TEST(PngFile, RoundTripIsExactOn8BitValues) {
  RgbaImage img(3, 5);
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = static_cast<float>((k * 37) % 256) / 255.0f;
  const auto path = std::filesystem::temp_directory_path() / "conr_test_rgba.png";
  write_png(img, path);
  const auto back = read_png(path);
  ASSERT_EQ(back.height, 3);
  ASSERT_EQ(back.width, 5);
  for (std::size_t k = 0; k < img.data.size(); ++k) EXPECT_EQ(back.data[k], img.data[k]);
  std::filesystem::remove(path);
}

TEST(Composite, OverOperatorEndpoints) {
  RgbaImage fg(1, 2), bg(1, 2);
  for (int j = 0; j < 2; ++j) {
    bg.at(0, j, 0) = 0.2f;
    bg.at(0, j, 1) = 0.4f;
    bg.at(0, j, 2) = 0.6f;
    bg.at(0, j, 3) = 1.0f;
  }
  fg.at(0, 0, 0) = 1.0f;
  fg.at(0, 0, 3) = 1.0f;  // opaque pixel; pixel 1 fully transparent
  const auto out = composite_over(fg, bg);
  EXPECT_EQ(out.at(0, 0, 0), 1.0f);
  EXPECT_EQ(out.at(0, 0, 1), 0.0f);
  EXPECT_EQ(out.at(0, 1, 0), 0.2f);
  EXPECT_EQ(out.at(0, 1, 2), 0.6f);
  EXPECT_EQ(out.at(0, 1, 3), 1.0f);
}
