#include "conr/network.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "conr/errors.hpp"
#include "conr/ops.hpp"
#include "conr/rng.hpp"

namespace conr {

namespace {

constexpr double kReluGain = 1.0;
constexpr double kResidualGain = 0.5;  // second conv of a residual unit starts small
constexpr double kFlowGain = 0.1;      // flow starts near zero

std::string stage(int s) { return "s" + std::to_string(s); }

// Unit RMS over channels at every pixel. The renderer head reads normalized
// features so early updates cannot drive its sigmoids into saturation.
template <typename T>
Tensor<T> pixel_norm(const Tensor<T>& x) {
  return ops::scale(ops::normalize_channels(x, T(1e-6)), std::sqrt(T(x.dim(1))));
}

template <typename T>
void require_divisible(const Tensor<T>& img, const char* what) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 4)
    throw ContractError(std::string(what) + ": expected a [1,4,H,W] image, got " + shape_str(img.shape()));
  if (img.dim(2) % 16 != 0 || img.dim(3) % 16 != 0)
    throw ConfigError(std::string(what) + ": image size " + std::to_string(img.dim(2)) + "x" +
                      std::to_string(img.dim(3)) + " is not divisible by 16");
}

}  // namespace

void ModelConfig::validate() const {
  if (base_channels < 4 || base_channels % 2 != 0) throw ConfigError("base_channels must be even and >= 4");
  if (detector_channels < 1) throw ConfigError("detector_channels must be positive");
  if (renderer_res_units < 0 || detector_res_units < 0) throw ConfigError("residual unit counts must be >= 0");
}

template <typename T>
void Model<T>::add_conv(const std::string& name, int cout, int cin, int k, double gain) {
  params_.add_conv_weight(name + ".w", cout, cin, k, seed_, gain);
  params_.add(name + ".b", {cout});
}

template <typename T>
void Model<T>::add_encoder(const std::string& prefix, int in_channels, int base, int units) {
  add_conv(prefix + ".stem", base, in_channels, 3, kReluGain);
  int c = base;
  for (int s = 1; s <= 4; ++s) {
    const int out = base << (s - 1);
    add_conv(prefix + "." + stage(s) + ".down", out, c, 3, kReluGain);
    for (int u = 0; u < units; ++u) {
      const std::string r = prefix + "." + stage(s) + ".r" + std::to_string(u);
      add_conv(r + ".c1", out, out, 3, kReluGain);
      add_conv(r + ".c2", out, out, 3, kResidualGain);
    }
    c = out;
  }
}

template <typename T>
int Model<T>::block_channels(int j) const {
  const int c = cfg_.base_channels;
  return j == 0 ? 4 * c : 2 * c;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const int c = cfg_.base_channels;
  add_encoder("enc", 4, c, cfg_.renderer_res_units);

  // Decoder D1..D3. Inputs: upsampled previous local + message, skip, UDP.
  const int skip_ch[3] = {8 * c, 4 * c, 2 * c};
  for (int j = 0; j < 3; ++j) {
    const int cj = block_channels(j);
    int in = skip_ch[j] + 4;
    if (j > 0) {
      const int prev = block_channels(j - 1);
      in += (prev / 2 - 3) + prev / 2;
    }
    const std::string name = "dec.d" + std::to_string(j + 1);
    add_conv(name + ".c1", cj, in, 3, kReluGain);
    add_conv(name + ".c2", cj, cj, 3, kReluGain);
    // Flow channels sit at [cj - 3, cj - 1).
    auto w = params_.get(name + ".c2.w").mutable_data();
    const std::size_t row = static_cast<std::size_t>(cj) * 9;
    for (int o = cj - 3; o < cj - 1; ++o)
      for (std::size_t k = 0; k < row; ++k) w[o * row + k] *= T(kFlowGain);
  }

  // D4 head at 1/2 scale, then full resolution.
  const int head_in = block_channels(0) / 2 + block_channels(1) / 2 + block_channels(2) / 2 +
                      (block_channels(2) / 2 - 3) + c + 4;
  add_conv("head.c1", c, head_in, 3, kReluGain);
  add_conv("head.c2", c, c + 4, 3, kReluGain);
  add_conv("head.out", 4, c, 3, kReluGain);

  // Detector.
  const int dc = cfg_.share_encoder ? c : cfg_.detector_channels;
  if (!cfg_.share_encoder) add_encoder("det.enc", 4, dc, cfg_.detector_res_units);
  const int dec_out[5] = {8 * dc, 4 * dc, 2 * dc, dc, dc};
  const int enc_ch[5] = {dc, dc, 2 * dc, 4 * dc, 8 * dc};  // stem, 1/2, 1/4, 1/8, 1/16
  for (int b = 0; b < 5; ++b) {
    const int in = b == 0 ? enc_ch[4] : dec_out[b - 1] + enc_ch[4 - b];
    const std::string name = "det.dec.b" + std::to_string(b + 1);
    add_conv(name + ".in", dec_out[b], in, 3, kReluGain);
    add_conv(name + ".r.c1", dec_out[b], dec_out[b], 3, kReluGain);
    add_conv(name + ".r.c2", dec_out[b], dec_out[b], 3, kResidualGain);
  }
  add_conv("det.head", 4, dc, 3, kReluGain);
}

template <typename T>
Tensor<T> Model<T>::conv(const std::string& name, const Tensor<T>& x, int stride) const {
  const auto& w = params_.get(name + ".w");
  return ops::conv2d(x, w, params_.get(name + ".b"), stride, w.dim(2) / 2);
}

template <typename T>
Tensor<T> Model<T>::res_unit(const std::string& name, const Tensor<T>& x) const {
  const auto h = ops::leaky_relu(conv(name + ".c1", x), kSlope);
  return ops::leaky_relu(ops::add(x, conv(name + ".c2", h)), kSlope);
}

template <typename T>
std::array<Tensor<T>, 5> Model<T>::encode(const std::string& prefix, int, int units, const Tensor<T>& img) const {
  std::array<Tensor<T>, 5> out;
  out[0] = ops::leaky_relu(conv(prefix + ".stem", img), kSlope);
  Tensor<T> x = out[0];
  for (int s = 1; s <= 4; ++s) {
    x = ops::leaky_relu(conv(prefix + "." + stage(s) + ".down", ops::avg_pool2(x)), kSlope);
    for (int u = 0; u < units; ++u) x = res_unit(prefix + "." + stage(s) + ".r" + std::to_string(u), x);
    out[s] = x;
  }
  return out;
}

template <typename T>
Skips<T> Model<T>::encoder_forward(const Tensor<T>& img) const {
  require_divisible(img, "encoder");
  const auto all = encode("enc", cfg_.base_channels, cfg_.renderer_res_units, img);
  return {all[1], all[2], all[3], all[4]};
}

template <typename T>
SheetEncoding<T> Model<T>::encode_sheet(std::span<const Tensor<T>> views) const {
  if (views.empty()) throw EmptySetError("character sheet is empty");
  SheetEncoding<T> enc;
  for (const auto& v : views) enc.views.push_back(encoder_forward(v));
  return enc;
}

template <typename T>
DecoderBlockOutput<T> Model<T>::decoder_block_forward(int j, const Tensor<T>& prev_local,
                                                      const Tensor<T>& prev_message, const Tensor<T>& skip,
                                                      const Tensor<T>& udp_resized) const {
  if (j < 0 || j > 2) throw ContractError("decoder block index must be 0, 1 or 2");
  if (udp_resized.dim(2) != skip.dim(2) || udp_resized.dim(3) != skip.dim(3))
    throw ContractError("decoder block: UDP size " + shape_str(udp_resized.shape()) + " does not match skip " +
                        shape_str(skip.shape()));
  std::vector<Tensor<T>> parts;
  if (j > 0) {
    if (!prev_local.defined() || !prev_message.defined())
      throw ContractError("decoder block: missing previous features");
    parts.push_back(ops::upsample_nearest(prev_local, 2));
    parts.push_back(ops::upsample_nearest(prev_message, 2));
  }
  parts.push_back(skip);
  parts.push_back(udp_resized);
  const std::string name = "dec.d" + std::to_string(j + 1);
  const auto h = ops::leaky_relu(conv(name + ".c1", ops::concat_channels<T>(parts)), kSlope);
  DecoderBlockOutput<T> out;
  out.raw = conv(name + ".c2", h);
  const int cj = block_channels(j);
  const int half = cj / 2;
  out.local = ops::leaky_relu(ops::slice_channels(out.raw, 0, half - 3), kSlope);
  out.remote = ops::leaky_relu(ops::slice_channels(out.raw, half - 3, half), kSlope);
  const T reach = T(std::max(skip.dim(2), skip.dim(3))) / T(4);
  out.flow = ops::scale(ops::tanh(ops::slice_channels(out.raw, cj - 3, 2)), reach);
  out.weight = ops::sigmoid(ops::slice_channels(out.raw, cj - 1, 1));
  if (cfg_.grid_sample) out.remote = ops::grid_sample_bilinear(out.remote, out.flow);
  return out;
}

template <typename T>
Tensor<T> Model<T>::cross_view_exchange(std::span<const DecoderBlockOutput<T>> outputs) {
  if (outputs.empty()) throw EmptySetError("cross-view exchange over an empty set");
  std::vector<Tensor<T>> xs, ws;
  for (const auto& o : outputs) {
    xs.push_back(o.remote);
    ws.push_back(o.weight);
  }
  return ops::weighted_set_mean<T>(xs, ws);
}

template <typename T>
Tensor<T> Model<T>::renderer_forward(const SheetEncoding<T>& sheet, const Tensor<T>& udp, int message_blocks) const {
  if (message_blocks < 0 || message_blocks > 3) throw ConfigError("message_blocks must be in [0, 3]");
  if (sheet.views.empty()) throw EmptySetError("renderer needs at least one sheet view");
  if (udp.rank() != 4 || udp.dim(0) != 1 || udp.dim(1) != 4) throw ContractError("renderer: UDP must be [1,4,H,W]");
  const int h = udp.dim(2), w = udp.dim(3);
  if (sheet.views[0][0].dim(2) * 2 != h || sheet.views[0][0].dim(3) * 2 != w)
    throw ContractError("renderer: UDP size does not match the sheet resolution");
  const std::size_t n = sheet.views.size();

  std::vector<Tensor<T>> local(n), message(n), head_messages;
  for (int j = 0; j < 3; ++j) {
    const int skip_index = 3 - j;  // D1 reads the 1/16 skip
    const int div = 2 << skip_index;
    const auto udp_j = ops::resize_nearest(udp, h / div, w / div);
    std::vector<DecoderBlockOutput<T>> outs;
    outs.reserve(n);
    for (std::size_t v = 0; v < n; ++v)
      outs.push_back(decoder_block_forward(j, local[v], message[v], sheet.views[v][skip_index], udp_j));
    const auto shared = cross_view_exchange(outs);
    head_messages.push_back(shared);
    for (std::size_t v = 0; v < n; ++v) {
      local[v] = outs[v].local;
      message[v] = j < message_blocks ? shared : cross_view_exchange(std::span<const DecoderBlockOutput<T>>(&outs[v], 1));
    }
  }

  std::vector<Tensor<T>> skip1;
  for (const auto& v : sheet.views) skip1.push_back(v[0]);
  const Tensor<T> parts[] = {
      ops::upsample_nearest(head_messages[0], 8),
      ops::upsample_nearest(head_messages[1], 4),
      ops::upsample_nearest(head_messages[2], 2),
      ops::upsample_nearest(ops::set_mean<T>(local), 2),
      ops::set_mean<T>(skip1),
      ops::resize_nearest(udp, h / 2, w / 2),
  };
  auto x = ops::leaky_relu(conv("head.c1", ops::concat_channels<T>(parts)), kSlope);
  x = ops::upsample_nearest(x, 2);
  x = ops::leaky_relu(conv("head.c2", ops::concat_channels<T>({x, udp})), kSlope);
  // Alpha is gated by the UDP occupancy: pixels the pose marks empty stay
  // transparent and send no gradient into the shading features.
  const auto rgba = ops::sigmoid(conv("head.out", pixel_norm(x)));
  const auto alpha = ops::mul(ops::slice_channels(rgba, 3, 1), ops::slice_channels(udp, 3, 1));
  return ops::concat_channels<T>({ops::slice_channels(rgba, 0, 3), alpha});
}

template <typename T>
Tensor<T> Model<T>::detector_forward(const Tensor<T>& img) const {
  require_divisible(img, "detector");
  const bool shared = cfg_.share_encoder;
  const auto e = encode(shared ? "enc" : "det.enc", shared ? cfg_.base_channels : cfg_.detector_channels,
                        shared ? cfg_.renderer_res_units : cfg_.detector_res_units, img);
  Tensor<T> x;
  for (int b = 0; b < 5; ++b) {
    const std::string name = "det.dec.b" + std::to_string(b + 1);
    const Tensor<T> in = b == 0 ? e[4] : ops::concat_channels<T>({ops::upsample_nearest(x, 2), e[4 - b]});
    x = ops::leaky_relu(conv(name + ".in", in), kSlope);
    x = res_unit(name + ".r", x);
  }
  return ops::sigmoid(conv("det.head", x));
}

template <typename T>
Detection<T> Model<T>::detect_averaged(std::span<const Tensor<T>> imgs) const {
  if (imgs.empty()) throw EmptySetError("detect_averaged needs at least one image");
  Detection<T> d;
  for (const auto& img : imgs) d.single.push_back(detector_forward(img));
  d.mean = d.single.size() == 1 ? d.single[0] : ops::set_mean<T>(d.single);
  return d;
}

template class Model<float>;
template class Model<double>;

template <typename T>
Tensor<T> to_tensor(const RgbaImage& img) {
  std::vector<T> d(img.data.size());
  const std::size_t hw = img.pixels();
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 4; ++c) d[c * hw + p] = static_cast<T>(img.data[p * 4 + c]);
  return Tensor<T>({1, 4, img.height, img.width}, std::move(d));
}

template <typename T>
Tensor<T> to_tensor(const UdpImage& img) {
  RgbaImage tmp;
  tmp.height = img.height;
  tmp.width = img.width;
  tmp.data = img.data;
  return to_tensor<T>(tmp);
}

template <typename T>
RgbaImage to_rgba(const Tensor<T>& t) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 4) throw ContractError("expected a [1,4,H,W] tensor");
  RgbaImage img(t.dim(2), t.dim(3));
  const std::size_t hw = img.pixels();
  const auto d = t.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 4; ++c) img.data[p * 4 + c] = static_cast<float>(d[c * hw + p]);
  return img;
}

template <typename T>
UdpImage to_udp(const Tensor<T>& t) {
  const RgbaImage tmp = to_rgba(t);
  UdpImage u;
  u.height = tmp.height;
  u.width = tmp.width;
  u.data = tmp.data;
  return u;
}

template Tensor<float> to_tensor<float>(const RgbaImage&);
template Tensor<double> to_tensor<double>(const RgbaImage&);
template Tensor<float> to_tensor<float>(const UdpImage&);
template Tensor<double> to_tensor<double>(const UdpImage&);
template RgbaImage to_rgba<float>(const Tensor<float>&);
template RgbaImage to_rgba<double>(const Tensor<double>&);
template UdpImage to_udp<float>(const Tensor<float>&);
template UdpImage to_udp<double>(const Tensor<double>&);

// ---- parameter files ----

namespace {

constexpr char kMagic[4] = {'C', 'O', 'N', 'R'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (bytes.size() - pos < n)
      throw ParseError(ParseError::Kind::kTruncated, pos, std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const std::uint8_t* p = &bytes[pos];
    pos += 4;
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_records(const std::vector<TensorRecord>& records) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (numel(r.shape) != r.data.size()) throw ContractError("record '" + r.name + "' data does not match its shape");
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
    for (int d : r.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : r.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<TensorRecord> decode_records(const std::vector<std::uint8_t>& bytes) {
  using K = ParseError::Kind;
  if (bytes.size() < 4) throw ParseError(K::kTruncated, bytes.size(), "checkpoint truncated inside the magic");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw ParseError(K::kBadMagic, 0, "not a checkpoint (bad magic)");
  if (bytes.size() < 5) throw ParseError(K::kTruncated, bytes.size(), "checkpoint truncated before the version");
  if (bytes[4] != kVersion) throw ParseError(K::kBadVersion, 4, "unsupported checkpoint version");
  Cursor c{bytes, 5};
  const std::uint32_t count = c.u32("record count");
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const std::uint32_t len = c.u32("name length");
    c.need(len, "name");
    r.name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos), bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + len));
    c.pos += len;
    const std::uint32_t rank = c.u32("rank");
    if (rank > 8) throw ParseError(K::kSchema, c.pos - 4, "record '" + r.name + "' has an implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = c.u32("shape");
      if (dim == 0 || dim > (1u << 30)) throw ParseError(K::kSchema, c.pos - 4, "record '" + r.name + "' has a bad dimension");
      r.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    if (n > (bytes.size() - c.pos) / 4) c.need(n * 4, "payload");
    r.data.resize(n);
    for (auto& f : r.data) f = std::bit_cast<float>(c.u32("payload"));
    out.push_back(std::move(r));
  }
  if (c.pos != bytes.size()) throw ParseError(K::kTrailingData, c.pos, "trailing bytes after the last checkpoint record");
  return out;
}

void write_records(const std::vector<TensorRecord>& records, const std::string& path) {
  const auto bytes = encode_records(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot create " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

std::vector<TensorRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return decode_records(std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {}));
}

template <typename T>
std::vector<TensorRecord> to_records(const ParamStore<T>& params) {
  std::vector<TensorRecord> out;
  for (const auto& e : params.entries()) {
    const auto d = e.tensor.data();
    out.push_back(TensorRecord{e.name, e.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return out;
}

template <typename T>
void from_records(const std::vector<TensorRecord>& records, ParamStore<T>& params) {
  using K = ParseError::Kind;
  std::unordered_map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records)
    if (!by_name.emplace(r.name, &r).second) throw ParseError(K::kMismatch, 0, "duplicate parameter '" + r.name + "'");
  for (const auto& e : params.entries()) {
    const auto it = by_name.find(e.name);
    if (it == by_name.end()) throw ParseError(K::kMismatch, 0, "missing parameter '" + e.name + "'");
    if (it->second->shape != e.tensor.shape())
      throw ParseError(K::kMismatch, 0,
                       "parameter '" + e.name + "' has shape " + shape_str(it->second->shape) + ", expected " +
                           shape_str(e.tensor.shape()));
  }
  for (const auto& r : records)
    if (!params.contains(r.name)) throw ParseError(K::kMismatch, 0, "unexpected parameter '" + r.name + "'");
  for (auto& e : params.entries()) {
    const auto& src = by_name.at(e.name)->data;
    auto dst = e.tensor.mutable_data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

template std::vector<TensorRecord> to_records<float>(const ParamStore<float>&);
template std::vector<TensorRecord> to_records<double>(const ParamStore<double>&);
template void from_records<float>(const std::vector<TensorRecord>&, ParamStore<float>&);
template void from_records<double>(const std::vector<TensorRecord>&, ParamStore<double>&);

}  // namespace conr
