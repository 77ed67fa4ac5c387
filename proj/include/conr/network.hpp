#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "conr/image.hpp"
#include "conr/params.hpp"
#include "conr/tensor.hpp"

namespace conr {

struct ModelConfig {
  int base_channels = 16;      // renderer C: skips carry C, 2C, 4C, 8C channels
  int detector_channels = 16;  // detector encoder/decoder base width
  int renderer_res_units = 1;  // residual units per encoder stage
  int detector_res_units = 2;
  bool share_encoder = false;  // detector reuses the renderer encoder
  bool grid_sample = true;     // warp remote branches by the predicted flow

  void validate() const;
};

/// Encoder skips of one reference image at 1/2, 1/4, 1/8 and 1/16 scale.
template <typename T>
using Skips = std::array<Tensor<T>, 4>;

/// Encoder outputs for every view of a character sheet. Independent of any
/// target pose, so one encoding serves many UDPs.
template <typename T>
struct SheetEncoding {
  std::vector<Skips<T>> views;
};

template <typename T>
struct DecoderBlockOutput {
  Tensor<T> raw;     // conv output before the split
  Tensor<T> local;   // C_j/2 - 3 channels
  Tensor<T> remote;  // C_j/2 channels, already flow-warped when warping is on
  Tensor<T> flow;    // 2 channels, pixel offsets
  Tensor<T> weight;  // 1 channel in (0,1)
};

template <typename T>
struct Detection {
  Tensor<T> mean;                 // [1,4,H,W]
  std::vector<Tensor<T>> single;  // k individual detections
};

/// Renderer (shared weights for every view) plus the UDP detector.
template <typename T>
class Model {
 public:
  static constexpr T kSlope = T(0.1);

  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Channel count of decoder block j (0-based, D1 first).
  int block_channels(int j) const;

  /// img: [1,4,H,W] RGBA with H and W divisible by 16.
  Skips<T> encoder_forward(const Tensor<T>& img) const;
  SheetEncoding<T> encode_sheet(std::span<const Tensor<T>> views) const;

  /// `prev_local` / `prev_message` are undefined for the first block.
  DecoderBlockOutput<T> decoder_block_forward(int j, const Tensor<T>& prev_local, const Tensor<T>& prev_message,
                                              const Tensor<T>& skip, const Tensor<T>& udp_resized) const;

  /// Weighted mean of the warped remote branches, divided by the view count.
  static Tensor<T> cross_view_exchange(std::span<const DecoderBlockOutput<T>> outputs);

  /// RGBA [1,4,H,W] in (0,1). The deepest `message_blocks` of D1..D3 share
  /// messages across views; the others forward each view's own message.
  Tensor<T> renderer_forward(const SheetEncoding<T>& sheet, const Tensor<T>& udp, int message_blocks) const;

  /// [1,4,H,W] sigmoid-bounded UDP prediction.
  Tensor<T> detector_forward(const Tensor<T>& img) const;
  Detection<T> detect_averaged(std::span<const Tensor<T>> imgs) const;

 private:
  std::array<Tensor<T>, 5> encode(const std::string& prefix, int base, int units, const Tensor<T>& img) const;
  Tensor<T> conv(const std::string& name, const Tensor<T>& x, int stride = 1) const;
  Tensor<T> res_unit(const std::string& name, const Tensor<T>& x) const;
  void add_conv(const std::string& name, int cout, int cin, int k, double gain);
  void add_encoder(const std::string& prefix, int in_channels, int base, int units);

  ModelConfig cfg_;
  std::uint64_t seed_;
  ParamStore<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

template <typename T>
Tensor<T> to_tensor(const RgbaImage& img);
template <typename T>
Tensor<T> to_tensor(const UdpImage& img);
template <typename T>
RgbaImage to_rgba(const Tensor<T>& t);
template <typename T>
UdpImage to_udp(const Tensor<T>& t);

// Parameter files: "CONR", version byte, u32 record count, then per record
// u32 name length, UTF-8 name, u32 rank, u32 dims, float32 payload. All
// integers and floats little-endian.
struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

std::vector<std::uint8_t> encode_records(const std::vector<TensorRecord>& records);
std::vector<TensorRecord> decode_records(const std::vector<std::uint8_t>& bytes);
void write_records(const std::vector<TensorRecord>& records, const std::string& path);
std::vector<TensorRecord> read_records(const std::string& path);

template <typename T>
std::vector<TensorRecord> to_records(const ParamStore<T>& params);
/// Copies values into `params`; every expected name must be present once with
/// the expected shape and no extra names may appear. Throws ParseError
/// (kMismatch) naming the first offending parameter.
template <typename T>
void from_records(const std::vector<TensorRecord>& records, ParamStore<T>& params);

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::string& path) {
  write_records(to_records(params), path);
}
template <typename T>
void load_checkpoint(ParamStore<T>& params, const std::string& path) {
  from_records(read_records(path), params);
}

}  // namespace conr
