#include "conr/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "conr/errors.hpp"

namespace conr {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'P', 'F'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeader = 13;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

void write_rgba8(const std::vector<std::uint8_t>& px, int h, int w, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGBA;
  if (!png_image_write_to_file(&img, path.c_str(), 0, px.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error("writing " + path.string() + ": " + msg);
  }
}

}  // namespace

bool in_unit_range(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return x >= 0.0f && x <= 1.0f; });
}

bool is_valid_gt_udp(const UdpImage& u) {
  if (!in_unit_range(u.data)) return false;
  for (std::size_t p = 0; p < u.pixels(); ++p) {
    const float* px = &u.data[p * 4];
    if (px[3] != 0.0f && px[3] != 1.0f) return false;
    if (px[3] == 0.0f && (px[0] != 0.0f || px[1] != 0.0f || px[2] != 0.0f)) return false;
  }
  return true;
}

std::vector<std::uint8_t> encode_udp(const UdpImage& u) {
  if (u.height < 1 || u.width < 1 || u.data.size() != u.pixels() * 4)
    throw ContractError("UDP image dimensions do not match its data");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kHeader + u.data.size() * 4);
  out.push_back(kVersion);
  put_u32(out, static_cast<std::uint32_t>(u.height));
  put_u32(out, static_cast<std::uint32_t>(u.width));
  for (float f : u.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

UdpImage decode_udp(const std::vector<std::uint8_t>& bytes) {
  using K = ParseError::Kind;
  if (bytes.size() < 4) throw ParseError(K::kTruncated, bytes.size(), "UDP file truncated inside the magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError(K::kBadMagic, 0, "UDP file has bad magic (expected UDPF)");
  if (bytes.size() < 5) throw ParseError(K::kTruncated, bytes.size(), "UDP file truncated before the version byte");
  if (bytes[4] != kVersion)
    throw ParseError(K::kBadVersion, 4, "unsupported UDP version " + std::to_string(bytes[4]));
  if (bytes.size() < kHeader) throw ParseError(K::kTruncated, bytes.size(), "UDP file truncated inside the header");
  const std::uint32_t h = get_u32(&bytes[5]), w = get_u32(&bytes[9]);
  if (h == 0 || w == 0) throw ParseError(K::kSchema, 5, "UDP image has a zero dimension");
  const std::uint64_t payload = std::uint64_t(h) * w * 16;
  if (bytes.size() - kHeader < payload)
    throw ParseError(K::kTruncated, bytes.size(),
                     "UDP payload truncated: expected " + std::to_string(payload) + " bytes after offset 13");
  if (bytes.size() - kHeader > payload)
    throw ParseError(K::kTrailingData, kHeader + payload, "trailing bytes after the UDP payload");
  UdpImage u(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t k = 0; k < u.data.size(); ++k) u.data[k] = std::bit_cast<float>(get_u32(&bytes[kHeader + 4 * k]));
  return u;
}

void write_udp(const UdpImage& u, const std::filesystem::path& path) {
  const auto bytes = encode_udp(u);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

UdpImage read_udp(const std::filesystem::path& path) { return decode_udp(read_all(path)); }

void write_png(const RgbaImage& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> px(img.data.size());
  std::transform(img.data.begin(), img.data.end(), px.begin(), to_byte);
  write_rgba8(px, img.height, img.width, path);
}

void write_udp_preview_png(const UdpImage& u, const std::filesystem::path& path) {
  std::vector<std::uint8_t> px(u.data.size());
  std::transform(u.data.begin(), u.data.end(), px.begin(), to_byte);
  write_rgba8(px, u.height, u.width, path);
}

RgbaImage read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error("reading " + path.string() + ": " + msg);
  }
  img.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error("decoding " + path.string() + ": " + msg);
  }
  RgbaImage out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (std::size_t k = 0; k < px.size(); ++k) out.data[k] = px[k] / 255.0f;
  return out;
}

RgbaImage composite_over(const RgbaImage& fg, const RgbaImage& bg) {
  if (fg.height != bg.height || fg.width != bg.width) throw ContractError("composite_over size mismatch");
  RgbaImage out(fg.height, fg.width);
  for (std::size_t p = 0; p < fg.pixels(); ++p) {
    const float* f = &fg.data[p * 4];
    const float* b = &bg.data[p * 4];
    float* o = &out.data[p * 4];
    const float a = f[3], ia = 1.0f - a;
    const float oa = a + b[3] * ia;
    o[3] = oa;
    for (int c = 0; c < 3; ++c) o[c] = oa > 0.0f ? (f[c] * a + b[c] * b[3] * ia) / oa : 0.0f;
  }
  return out;
}

}  // namespace conr
