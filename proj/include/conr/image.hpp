#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace conr {

/// H x W x 4 interleaved floats, row-major.
template <typename Tag>
struct Image4 {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image4() = default;
  Image4(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 4, 0.0f) {}

  float& at(int i, int j, int c) { return data[(static_cast<std::size_t>(i) * width + j) * 4 + c]; }
  float at(int i, int j, int c) const { return data[(static_cast<std::size_t>(i) * width + j) * 4 + c]; }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const Image4&) const = default;
};

struct UdpTag {};
struct RgbaTag {};
using UdpImage = Image4<UdpTag>;    // landmark x, y, z, occupancy
using RgbaImage = Image4<RgbaTag>;  // r, g, b, alpha

/// Every value in [0,1].
bool in_unit_range(const std::vector<float>& v);
/// Ground truth: occupancy in {0,1} and landmarks zero where unoccupied.
bool is_valid_gt_udp(const UdpImage& u);

std::vector<std::uint8_t> encode_udp(const UdpImage& u);
UdpImage decode_udp(const std::vector<std::uint8_t>& bytes);
void write_udp(const UdpImage& u, const std::filesystem::path& path);
UdpImage read_udp(const std::filesystem::path& path);

/// 8-bit RGBA PNG; floats are scaled by 255 and rounded.
void write_png(const RgbaImage& img, const std::filesystem::path& path);
RgbaImage read_png(const std::filesystem::path& path);
/// Landmarks as RGB, occupancy as alpha.
void write_udp_preview_png(const UdpImage& u, const std::filesystem::path& path);

/// `fg` over `bg` with straight alpha; result alpha is fg.a + bg.a * (1 - fg.a).
RgbaImage composite_over(const RgbaImage& fg, const RgbaImage& bg);

}  // namespace conr
