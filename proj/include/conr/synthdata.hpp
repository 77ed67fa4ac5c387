#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conr/errors.hpp"
#include "conr/image.hpp"
#include "conr/mesh.hpp"

namespace conr {

enum class PartShape { kBox, kSphere, kFrustum };

/// One rigid primitive, modelled in the A-pose.
struct Part {
  std::string name;
  PartShape shape = PartShape::kBox;
  int joint = 0;
  Vec3 center = Vec3::Zero();
  Vec3 half_size = Vec3::Constant(0.1);  // frustum: bottom half-extents
  Vec3 tilt = Vec3::Zero();              // rest orientation, rotation_xyz angles
  double taper = 1.0;                    // frustum: top/bottom width ratio
  Vec3 color = Vec3::Constant(0.5);
  Vec3 accent = Vec3::Constant(0.5);  // box front face, upper sphere half
};

struct CharacterSpec {
  std::uint64_t seed = 0;
  Skeleton skeleton;
  std::vector<Part> parts;
  double yaw_limit = 1.5707963267948966;  // |global yaw| bound for sampled poses

  void validate() const;
  bool operator==(const CharacterSpec& o) const;
};

/// Articulated low-poly character. Bit-identical for equal seeds.
CharacterSpec gen_character(std::uint64_t seed);

/// Triangulated A-pose, centered at the origin.
MeshApose build_mesh(const CharacterSpec& spec);

Pose gen_pose(std::uint64_t seed, const CharacterSpec& spec);

/// Two-color linear gradient plus low-frequency value noise, alpha 1.
RgbaImage gen_background(std::uint64_t seed, int height, int width);

/// Vertical extent of the character over which the default camera is fitted.
double framing_height(const MeshApose& mesh);

struct SampleOptions {
  bool random_crop = true;
  bool has_udp_gt = true;
};

struct TrainingSample {
  std::vector<RgbaImage> sheet;
  RgbaImage target;
  UdpImage target_udp;  // empty (0x0) when !has_udp_gt
  std::vector<RgbaImage> augmented;
  bool has_udp_gt = true;
};

/// Random crop of 7/8 of the side, scaled back to full size: nearest for UDPs,
/// bilinear on premultiplied color for RGBA.
struct CropWindow {
  int top = 0;
  int left = 0;
  int size = 0;  // 0 disables the crop
};
CropWindow random_crop_window(std::uint64_t seed, int resolution);
UdpImage apply_crop(const UdpImage& u, const CropWindow& w);
RgbaImage apply_crop(const RgbaImage& img, const CropWindow& w);

/// Renders m sheet views and a target in m + 1 distinct poses. The target, its
/// UDP and its k background-pasted copies share one crop; each sheet image is
/// cropped independently.
TrainingSample make_sample(const CharacterSpec& spec, int m, int k, std::uint64_t seed, int resolution,
                           const SampleOptions& opt = {});

/// Same as make_sample with a prebuilt mesh and landmarks (avoids re-meshing).
TrainingSample make_sample(const MeshApose& mesh, const LandmarkSet& lms, const CharacterSpec& spec, int m, int k,
                           std::uint64_t seed, int resolution, const SampleOptions& opt = {});

/// Uncropped renders of one pose at the training resolution.
struct PoseRender {
  RgbaImage rgba;
  UdpImage udp;
};
PoseRender render_pose(const MeshApose& mesh, const LandmarkSet& lms, const Pose& pose, int resolution);

/// The crop/background stage of make_sample on already rendered poses. Seeds
/// the same streams as make_sample, so both give identical samples for the
/// same poses.
TrainingSample assemble_sample(std::span<const PoseRender* const> sheet, const PoseRender& target, int k,
                               std::uint64_t seed, int resolution, const SampleOptions& opt = {});

struct Split {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
};

/// Per-character split: floor(N / (ratio + 1)) characters go to validation.
Split split_dataset(const std::vector<std::uint64_t>& character_seeds, int ratio, std::uint64_t shuffle_seed);

/// Cycles `images` in order until there are m of them.
template <typename T>
std::vector<T> fill_views(const std::vector<T>& images, int m) {
  if (images.empty()) throw EmptySetError("fill_views needs at least one image");
  if (m < 1) throw ContractError("fill_views needs m >= 1");
  if (static_cast<int>(images.size()) >= m) return images;
  std::vector<T> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) out.push_back(images[i % images.size()]);
  return out;
}

// JSON text form of characters and poses. Errors are ParseError with a 1-based
// line number as the offset.
std::string character_to_json(const CharacterSpec& spec);
CharacterSpec character_from_json(const std::string& text);
std::string pose_to_json(const Pose& pose, const Skeleton& skeleton);
Pose pose_from_json(const std::string& text, const Skeleton& skeleton);

}  // namespace conr
