#include "conr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "blas.hpp"
#include "conr/errors.hpp"

namespace conr::ops {

namespace {

struct Dims4 {
  int n, c, h, w;
};

template <typename T>
Dims4 dims4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw ContractError(std::string(op) + ": expected a rank-4 tensor, got " + shape_str(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
}

struct ConvGeometry {
  int cin, h, w, kh, kw, stride, pad, ho, wo;
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int p = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * p;
        for (int oi = 0; oi < g.ho; ++oi) {
          const int ii = oi * g.stride - g.pad + ki;
          T* dst = row + oi * g.wo;
          if (ii < 0 || ii >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + ii) * g.w;
          for (int oj = 0; oj < g.wo; ++oj) {
            const int jj = oj * g.stride - g.pad + kj;
            dst[oj] = (jj >= 0 && jj < g.w) ? src[jj] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const int p = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * p;
        for (int oi = 0; oi < g.ho; ++oi) {
          const int ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h) continue;
          T* dst = dx + (static_cast<std::size_t>(c) * g.h + ii) * g.w;
          const T* src = row + oi * g.wo;
          for (int oj = 0; oj < g.wo; ++oj) {
            const int jj = oj * g.stride - g.pad + kj;
            if (jj >= 0 && jj < g.w) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  const Dims4 xd = dims4(x, "conv2d");
  const Dims4 wd = dims4(w, "conv2d weight");
  if (b.rank() != 1 || b.dim(0) != wd.n) {
    throw ContractError("conv2d: bias shape " + shape_str(b.shape()) + " does not match " +
                        std::to_string(wd.n) + " output channels");
  }
  if (wd.c != xd.c) {
    throw ContractError("conv2d: input has " + std::to_string(xd.c) + " channels, kernel expects " +
                        std::to_string(wd.c));
  }
  if (wd.h % 2 == 0 || wd.w % 2 == 0) throw ContractError("conv2d: kernel sizes must be odd");
  if (stride < 1 || pad < 0) throw ContractError("conv2d: stride must be >= 1 and pad >= 0");
  const int span_h = xd.h + 2 * pad - wd.h;
  const int span_w = xd.w + 2 * pad - wd.w;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ConfigError("conv2d: input " + shape_str(x.shape()) + " with kernel " + shape_str(w.shape()) +
                      ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad) +
                      " does not give an integral output size");
  }
  const ConvGeometry g{xd.c, xd.h, xd.w, wd.h, wd.w, stride, pad, span_h / stride + 1, span_w / stride + 1};
  const int cout = wd.n;
  const int k = g.cin * g.kh * g.kw;
  const int p = g.ho * g.wo;
  const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * p;

  std::vector<T> out(static_cast<std::size_t>(xd.n) * out_stride);
  std::vector<T> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(k) * p);
  const auto xs = x.data();
  const auto ws = w.data();
  const auto bs = b.data();
  for (int n = 0; n < xd.n; ++n) {
    const T* xn = xs.data() + n * in_stride;
    const T* cols = xn;
    if (!g.is_pointwise()) {
      im2col(xn, g, col.data());
      cols = col.data();
    }
    T* on = out.data() + n * out_stride;
    for (int co = 0; co < cout; ++co) std::fill(on + co * p, on + (co + 1) * p, bs[co]);
    detail::gemm(false, false, cout, p, k, T(1), ws.data(), k, cols, p, T(1), on, p);
  }

  return Tensor<T>::from_op(
      "conv2d", {xd.n, cout, g.ho, g.wo}, std::move(out), {x, w, b},
      [x, w, b, g, cout, k, p, in_stride, out_stride, batch = xd.n](std::span<const T> gout,
                                                                    std::span<const T>) mutable {
        const bool need_x = x.requires_grad();
        const bool need_w = w.requires_grad();
        if (b.requires_grad()) {
          std::vector<T> db(cout, T(0));
          for (int n = 0; n < batch; ++n) {
            for (int co = 0; co < cout; ++co) {
              const T* gp = gout.data() + n * out_stride + static_cast<std::size_t>(co) * p;
              T acc = 0;
              for (int i = 0; i < p; ++i) acc += gp[i];
              db[co] += acc;
            }
          }
          b.accumulate_grad(db);
        }
        if (!need_x && !need_w) return;
        std::vector<T> dw(need_w ? w.size() : 0, T(0));
        std::vector<T> dx(need_x ? x.size() : 0, T(0));
        std::vector<T> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(k) * p);
        std::vector<T> dcol(need_x && !g.is_pointwise() ? static_cast<std::size_t>(k) * p : 0);
        const auto xs = x.data();
        const auto ws = w.data();
        for (int n = 0; n < batch; ++n) {
          const T* gn = gout.data() + n * out_stride;
          if (need_w) {
            const T* cols = xs.data() + n * in_stride;
            if (!g.is_pointwise()) {
              im2col(cols, g, col.data());
              cols = col.data();
            }
            detail::gemm(false, true, cout, k, p, T(1), gn, p, cols, p, T(1), dw.data(), k);
          }
          if (need_x) {
            T* dxn = dx.data() + n * in_stride;
            if (g.is_pointwise()) {
              detail::gemm(true, false, k, p, cout, T(1), ws.data(), k, gn, p, T(1), dxn, p);
            } else {
              detail::gemm(true, false, k, p, cout, T(1), ws.data(), k, gn, p, T(0), dcol.data(), p);
              col2im_add(dcol.data(), g, dxn);
            }
          }
        }
        if (need_w) w.accumulate_grad(dw);
        if (need_x) x.accumulate_grad(dx);
      });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  const Dims4 d = dims4(x, "upsample_nearest");
  const int oh = d.h * factor;
  const int ow = d.w * factor;
  const auto xs = x.data();
  std::vector<T> out(static_cast<std::size_t>(d.n) * d.c * oh * ow);
  for (int nc = 0; nc < d.n * d.c; ++nc) {
    const T* src = xs.data() + static_cast<std::size_t>(nc) * d.h * d.w;
    T* dst = out.data() + static_cast<std::size_t>(nc) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / factor) * d.w + j / factor];
    }
  }
  return Tensor<T>::from_op("upsample_nearest", {d.n, d.c, oh, ow}, std::move(out), {x},
                            [x, d, factor, oh, ow](std::span<const T> g, std::span<const T>) mutable {
                              std::vector<T> dx(x.size(), T(0));
                              for (int nc = 0; nc < d.n * d.c; ++nc) {
                                const T* gs = g.data() + static_cast<std::size_t>(nc) * oh * ow;
                                T* dst = dx.data() + static_cast<std::size_t>(nc) * d.h * d.w;
                                for (int i = 0; i < oh; ++i) {
                                  for (int j = 0; j < ow; ++j) dst[(i / factor) * d.w + j / factor] += gs[i * ow + j];
                                }
                              }
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const Dims4 d = dims4(x, "avg_pool2");
  if (d.h % 2 != 0 || d.w % 2 != 0)
    throw ConfigError("avg_pool2: spatial size " + std::to_string(d.h) + "x" + std::to_string(d.w) + " is odd");
  const int oh = d.h / 2, ow = d.w / 2;
  const auto xs = x.data();
  std::vector<T> out(static_cast<std::size_t>(d.n) * d.c * oh * ow);
  for (int nc = 0; nc < d.n * d.c; ++nc) {
    const T* src = xs.data() + static_cast<std::size_t>(nc) * d.h * d.w;
    T* dst = out.data() + static_cast<std::size_t>(nc) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const T* r0 = src + (2 * i) * d.w;
      const T* r1 = r0 + d.w;
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = T(0.25) * ((r0[2 * j] + r0[2 * j + 1]) + (r1[2 * j] + r1[2 * j + 1]));
    }
  }
  return Tensor<T>::from_op("avg_pool2", {d.n, d.c, oh, ow}, std::move(out), {x},
                            [x, d, oh, ow](std::span<const T> g, std::span<const T>) mutable {
                              std::vector<T> dx(x.size(), T(0));
                              for (int nc = 0; nc < d.n * d.c; ++nc) {
                                const T* gs = g.data() + static_cast<std::size_t>(nc) * oh * ow;
                                T* dst = dx.data() + static_cast<std::size_t>(nc) * d.h * d.w;
                                for (int i = 0; i < d.h; ++i) {
                                  for (int j = 0; j < d.w; ++j) dst[i * d.w + j] = T(0.25) * gs[(i / 2) * ow + j / 2];
                                }
                              }
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ContractError("resize_nearest: output size must be >= 1");
  const Dims4 d = dims4(x, "resize_nearest");
  std::vector<int> src_row(out_h), src_col(out_w);
  for (int i = 0; i < out_h; ++i) src_row[i] = static_cast<int>(static_cast<long long>(i) * d.h / out_h);
  for (int j = 0; j < out_w; ++j) src_col[j] = static_cast<int>(static_cast<long long>(j) * d.w / out_w);
  const auto xs = x.data();
  std::vector<T> out(static_cast<std::size_t>(d.n) * d.c * out_h * out_w);
  for (int nc = 0; nc < d.n * d.c; ++nc) {
    const T* src = xs.data() + static_cast<std::size_t>(nc) * d.h * d.w;
    T* dst = out.data() + static_cast<std::size_t>(nc) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      for (int j = 0; j < out_w; ++j) dst[i * out_w + j] = src[src_row[i] * d.w + src_col[j]];
    }
  }
  return Tensor<T>::from_op(
      "resize_nearest", {d.n, d.c, out_h, out_w}, std::move(out), {x},
      [x, d, out_h, out_w, src_row, src_col](std::span<const T> g, std::span<const T>) mutable {
        std::vector<T> dx(x.size(), T(0));
        for (int nc = 0; nc < d.n * d.c; ++nc) {
          const T* gs = g.data() + static_cast<std::size_t>(nc) * out_h * out_w;
          T* dst = dx.data() + static_cast<std::size_t>(nc) * d.h * d.w;
          for (int i = 0; i < out_h; ++i) {
            for (int j = 0; j < out_w; ++j) dst[src_row[i] * d.w + src_col[j]] += gs[i * out_w + j];
          }
        }
        x.accumulate_grad(dx);
      });
}

namespace {

// Clamped bilinear footprint of one sample location.
template <typename T>
struct BilinearTap {
  int x0, x1, y0, y1;
  T ax, ay;
  bool in_x, in_y;  // false when the coordinate was clamped

  BilinearTap(T sx, T sy, int h, int w) {
    const T max_x = T(w - 1);
    const T max_y = T(h - 1);
    in_x = sx >= T(0) && sx <= max_x;
    in_y = sy >= T(0) && sy <= max_y;
    const T cx = std::clamp(sx, T(0), max_x);
    const T cy = std::clamp(sy, T(0), max_y);
    x0 = static_cast<int>(std::floor(cx));
    y0 = static_cast<int>(std::floor(cy));
    x1 = std::min(x0 + 1, w - 1);
    y1 = std::min(y0 + 1, h - 1);
    ax = cx - T(x0);
    ay = cy - T(y0);
  }
};

}  // namespace

template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& x, const Tensor<T>& flow) {
  const Dims4 d = dims4(x, "grid_sample_bilinear");
  const Dims4 fd = dims4(flow, "grid_sample_bilinear flow");
  if (fd.n != d.n || fd.c != 2 || fd.h != d.h || fd.w != d.w) {
    throw ContractError("grid_sample_bilinear: flow " + shape_str(flow.shape()) + " incompatible with input " +
                        shape_str(x.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const auto xs = x.data();
  const auto fs = flow.data();
  std::vector<T> out(x.size());
  for (int n = 0; n < d.n; ++n) {
    const T* fx = fs.data() + static_cast<std::size_t>(n) * 2 * plane;
    const T* fy = fx + plane;
    for (int i = 0; i < d.h; ++i) {
      for (int j = 0; j < d.w; ++j) {
        const std::size_t pix = static_cast<std::size_t>(i) * d.w + j;
        const BilinearTap<T> t(T(j) + fx[pix], T(i) + fy[pix], d.h, d.w);
        for (int c = 0; c < d.c; ++c) {
          const T* src = xs.data() + (static_cast<std::size_t>(n) * d.c + c) * plane;
          const T top = (T(1) - t.ax) * src[t.y0 * d.w + t.x0] + t.ax * src[t.y0 * d.w + t.x1];
          const T bot = (T(1) - t.ax) * src[t.y1 * d.w + t.x0] + t.ax * src[t.y1 * d.w + t.x1];
          out[(static_cast<std::size_t>(n) * d.c + c) * plane + pix] = (T(1) - t.ay) * top + t.ay * bot;
        }
      }
    }
  }
  return Tensor<T>::from_op(
      "grid_sample_bilinear", x.shape(), std::move(out), {x, flow},
      [x, flow, d, plane](std::span<const T> g, std::span<const T>) mutable {
        const bool need_x = x.requires_grad();
        const bool need_f = flow.requires_grad();
        std::vector<T> dx(need_x ? x.size() : 0, T(0));
        std::vector<T> df(need_f ? flow.size() : 0, T(0));
        const auto xs = x.data();
        const auto fs = flow.data();
        for (int n = 0; n < d.n; ++n) {
          const T* fx = fs.data() + static_cast<std::size_t>(n) * 2 * plane;
          const T* fy = fx + plane;
          for (int i = 0; i < d.h; ++i) {
            for (int j = 0; j < d.w; ++j) {
              const std::size_t pix = static_cast<std::size_t>(i) * d.w + j;
              const BilinearTap<T> t(T(j) + fx[pix], T(i) + fy[pix], d.h, d.w);
              T gfx = 0;
              T gfy = 0;
              for (int c = 0; c < d.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * d.c + c) * plane;
                const T go = g[base + pix];
                if (go == T(0)) continue;
                if (need_x) {
                  T* dst = dx.data() + base;
                  dst[t.y0 * d.w + t.x0] += go * (T(1) - t.ay) * (T(1) - t.ax);
                  dst[t.y0 * d.w + t.x1] += go * (T(1) - t.ay) * t.ax;
                  dst[t.y1 * d.w + t.x0] += go * t.ay * (T(1) - t.ax);
                  dst[t.y1 * d.w + t.x1] += go * t.ay * t.ax;
                }
                if (need_f) {
                  const T* src = xs.data() + base;
                  const T v00 = src[t.y0 * d.w + t.x0];
                  const T v01 = src[t.y0 * d.w + t.x1];
                  const T v10 = src[t.y1 * d.w + t.x0];
                  const T v11 = src[t.y1 * d.w + t.x1];
                  if (t.in_x) gfx += go * ((T(1) - t.ay) * (v01 - v00) + t.ay * (v11 - v10));
                  if (t.in_y) gfy += go * ((T(1) - t.ax) * (v10 - v00) + t.ax * (v11 - v01));
                }
              }
              if (need_f) {
                df[static_cast<std::size_t>(n) * 2 * plane + pix] += gfx;
                df[static_cast<std::size_t>(n) * 2 * plane + plane + pix] += gfy;
              }
            }
          }
        }
        if (need_x) x.accumulate_grad(dx);
        if (need_f) flow.accumulate_grad(df);
      });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw EmptySetError("concat_channels: no inputs");
  const Dims4 d0 = dims4(xs[0], "concat_channels");
  int total_c = 0;
  std::vector<int> offsets;
  for (const auto& t : xs) {
    const Dims4 d = dims4(t, "concat_channels");
    if (d.n != d0.n || d.h != d0.h || d.w != d0.w) {
      throw ContractError("concat_channels: " + shape_str(t.shape()) + " incompatible with " +
                          shape_str(xs[0].shape()));
    }
    offsets.push_back(total_c);
    total_c += d.c;
  }
  const std::size_t plane = static_cast<std::size_t>(d0.h) * d0.w;
  std::vector<T> out(static_cast<std::size_t>(d0.n) * total_c * plane);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const int c = xs[k].dim(1);
    const auto src = xs[k].data();
    for (int n = 0; n < d0.n; ++n) {
      std::copy_n(src.data() + static_cast<std::size_t>(n) * c * plane, c * plane,
                  out.data() + (static_cast<std::size_t>(n) * total_c + offsets[k]) * plane);
    }
  }
  std::vector<Tensor<T>> parents(xs.begin(), xs.end());
  return Tensor<T>::from_op("concat_channels", {d0.n, total_c, d0.h, d0.w}, std::move(out), parents,
                            [parents, offsets, total_c, plane, batch = d0.n](std::span<const T> g,
                                                                            std::span<const T>) mutable {
                              for (std::size_t k = 0; k < parents.size(); ++k) {
                                auto& p = parents[k];
                                if (!p.requires_grad()) continue;
                                const int c = p.dim(1);
                                std::vector<T> dp(p.size());
                                for (int n = 0; n < batch; ++n) {
                                  std::copy_n(g.data() + (static_cast<std::size_t>(n) * total_c + offsets[k]) * plane,
                                              c * plane, dp.data() + static_cast<std::size_t>(n) * c * plane);
                                }
                                p.accumulate_grad(dp);
                              }
                            });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  const Dims4 d = dims4(x, "slice_channels");
  if (begin < 0 || count < 1 || begin + count > d.c) {
    throw ContractError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                        ") out of range for " + std::to_string(d.c) + " channels");
  }
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const auto src = x.data();
  std::vector<T> out(static_cast<std::size_t>(d.n) * count * plane);
  for (int n = 0; n < d.n; ++n) {
    std::copy_n(src.data() + (static_cast<std::size_t>(n) * d.c + begin) * plane, count * plane,
                out.data() + static_cast<std::size_t>(n) * count * plane);
  }
  return Tensor<T>::from_op("slice_channels", {d.n, count, d.h, d.w}, std::move(out), {x},
                            [x, d, begin, count, plane](std::span<const T> g, std::span<const T>) mutable {
                              std::vector<T> dx(x.size(), T(0));
                              for (int n = 0; n < d.n; ++n) {
                                std::copy_n(g.data() + static_cast<std::size_t>(n) * count * plane, count * plane,
                                            dx.data() + (static_cast<std::size_t>(n) * d.c + begin) * plane);
                              }
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  if (!(slope >= T(0) && slope < T(1))) throw ContractError("leaky_relu: slope must lie in [0, 1)");
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] > T(0) ? xs[i] : slope * xs[i];
  return Tensor<T>::from_op("leaky_relu", x.shape(), std::move(out), {x},
                            [x, slope](std::span<const T> g, std::span<const T>) mutable {
                              const auto xs = x.data();
                              std::vector<T> dx(g.size());
                              for (std::size_t i = 0; i < g.size(); ++i) dx[i] = xs[i] > T(0) ? g[i] : slope * g[i];
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = sigmoid_scalar(xs[i]);
  return Tensor<T>::from_op("sigmoid", x.shape(), std::move(out), {x},
                            [x](std::span<const T> g, std::span<const T> y) mutable {
                              std::vector<T> dx(g.size());
                              for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * y[i] * (T(1) - y[i]);
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = std::tanh(xs[i]);
  return Tensor<T>::from_op("tanh", x.shape(), std::move(out), {x},
                            [x](std::span<const T> g, std::span<const T> y) mutable {
                              std::vector<T> dx(g.size());
                              for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * (T(1) - y[i] * y[i]);
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor<T>::from_op("add", a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g, std::span<const T>) mutable {
                              a.accumulate_grad(g);
                              b.accumulate_grad(g);
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] - bs[i];
  return Tensor<T>::from_op("sub", a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g, std::span<const T>) mutable {
                              a.accumulate_grad(g);
                              if (b.requires_grad()) {
                                std::vector<T> nb(g.begin(), g.end());
                                for (auto& v : nb) v = -v;
                                b.accumulate_grad(nb);
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.data();
  const auto bs = b.data();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[i];
  return Tensor<T>::from_op("mul", a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g, std::span<const T>) mutable {
                              const auto as = a.data();
                              const auto bs = b.data();
                              std::vector<T> d(g.size());
                              if (a.requires_grad()) {
                                for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * bs[i];
                                a.accumulate_grad(d);
                              }
                              if (b.requires_grad()) {
                                for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * as[i];
                                b.accumulate_grad(d);
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * factor;
  return Tensor<T>::from_op("scale", x.shape(), std::move(out), {x},
                            [x, factor](std::span<const T> g, std::span<const T>) mutable {
                              std::vector<T> dx(g.size());
                              for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * factor;
                              x.accumulate_grad(dx);
                            });
}

template <typename T>
Tensor<T> weighted_set_mean(std::span<const Tensor<T>> xs, std::span<const Tensor<T>> ws) {
  if (xs.empty()) throw EmptySetError("weighted_set_mean: empty set");
  if (ws.size() != xs.size()) throw ContractError("weighted_set_mean: feature and weight counts differ");
  const Dims4 d = dims4(xs[0], "weighted_set_mean");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require_same_shape(xs[i], xs[0], "weighted_set_mean");
    const Dims4 wd = dims4(ws[i], "weighted_set_mean weight");
    if (wd.n != d.n || wd.c != 1 || wd.h != d.h || wd.w != d.w) {
      throw ContractError("weighted_set_mean: weight " + shape_str(ws[i].shape()) + " incompatible with " +
                          shape_str(xs[0].shape()));
    }
  }
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const T count = static_cast<T>(xs.size());
  std::vector<T> out(xs[0].size(), T(0));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto x = xs[i].data();
    const auto w = ws[i].data();
    for (int n = 0; n < d.n; ++n) {
      for (int c = 0; c < d.c; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * d.c + c) * plane;
        const T* wp = w.data() + static_cast<std::size_t>(n) * plane;
        for (std::size_t p = 0; p < plane; ++p) out[base + p] += wp[p] * x[base + p];
      }
    }
  }
  for (auto& v : out) v /= count;

  std::vector<Tensor<T>> parents(xs.begin(), xs.end());
  parents.insert(parents.end(), ws.begin(), ws.end());
  return Tensor<T>::from_op(
      "weighted_set_mean", xs[0].shape(), std::move(out), parents,
      [parents, d, plane, count](std::span<const T> g, std::span<const T>) mutable {
        const std::size_t n_views = parents.size() / 2;
        for (std::size_t i = 0; i < n_views; ++i) {
          auto& x = parents[i];
          auto& w = parents[n_views + i];
          const auto xv = x.data();
          const auto wv = w.data();
          if (x.requires_grad()) {
            std::vector<T> dx(x.size());
            for (int n = 0; n < d.n; ++n) {
              for (int c = 0; c < d.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * d.c + c) * plane;
                const T* wp = wv.data() + static_cast<std::size_t>(n) * plane;
                for (std::size_t p = 0; p < plane; ++p) dx[base + p] = g[base + p] * wp[p] / count;
              }
            }
            x.accumulate_grad(dx);
          }
          if (w.requires_grad()) {
            std::vector<T> dw(w.size(), T(0));
            for (int n = 0; n < d.n; ++n) {
              T* dwp = dw.data() + static_cast<std::size_t>(n) * plane;
              for (int c = 0; c < d.c; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * d.c + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) dwp[p] += g[base + p] * xv[base + p];
              }
            }
            for (auto& v : dw) v /= count;
            w.accumulate_grad(dw);
          }
        }
      });
}

template <typename T>
Tensor<T> set_mean(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw EmptySetError("set_mean: empty set");
  for (const auto& x : xs) require_same_shape(x, xs[0], "set_mean");
  const T count = static_cast<T>(xs.size());
  std::vector<T> out(xs[0].size(), T(0));
  for (const auto& x : xs) {
    const auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  for (auto& v : out) v /= count;
  std::vector<Tensor<T>> parents(xs.begin(), xs.end());
  return Tensor<T>::from_op("set_mean", xs[0].shape(), std::move(out), parents,
                            [parents, count](std::span<const T> g, std::span<const T>) mutable {
                              std::vector<T> d(g.size());
                              for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] / count;
                              for (auto& p : parents) p.accumulate_grad(d);
                            });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto xs = x.data();
  T acc = 0;
  for (const T v : xs) acc += v;
  const T count = static_cast<T>(xs.size());
  return Tensor<T>::from_op("mean", {1}, {acc / count}, {x},
                            [x, count](std::span<const T> g, std::span<const T>) mutable {
                              x.accumulate_grad(std::vector<T>(x.size(), g[0] / count));
                            });
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw ContractError("weighted_sum: term and weight counts differ");
  T acc = 0;
  std::vector<Tensor<T>> parents;
  std::vector<T> used_weights;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i].defined()) continue;
    if (terms[i].size() != 1) throw ContractError("weighted_sum: terms must be scalars");
    acc += static_cast<T>(weights[i]) * terms[i].item();
    parents.push_back(terms[i]);
    used_weights.push_back(static_cast<T>(weights[i]));
  }
  return Tensor<T>::from_op("weighted_sum", {1}, {acc}, parents,
                            [parents, used_weights](std::span<const T> g, std::span<const T>) mutable {
                              for (std::size_t i = 0; i < parents.size(); ++i) {
                                const T d = g[0] * used_weights[i];
                                parents[i].accumulate_grad(std::span<const T>(&d, 1));
                              }
                            });
}

template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& x, T eps) {
  const Dims4 d = dims4(x, "normalize_channels");
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  std::vector<T> norms(static_cast<std::size_t>(d.n) * plane);
  for (int n = 0; n < d.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      T q = 0;
      for (int c = 0; c < d.c; ++c) {
        const T v = xs[(static_cast<std::size_t>(n) * d.c + c) * plane + p];
        q += v * v;
      }
      const T r = std::sqrt(q);
      norms[n * plane + p] = r;
      for (int c = 0; c < d.c; ++c) {
        const std::size_t k = (static_cast<std::size_t>(n) * d.c + c) * plane + p;
        out[k] = xs[k] / (r + eps);
      }
    }
  }
  return Tensor<T>::from_op(
      "normalize_channels", x.shape(), std::move(out), {x},
      [x, d, plane, eps, norms](std::span<const T> g, std::span<const T>) mutable {
        const auto xs = x.data();
        std::vector<T> dx(xs.size());
        for (int n = 0; n < d.n; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            const T r = norms[n * plane + p];
            const T s = r + eps;
            T dot = 0;
            for (int c = 0; c < d.c; ++c) {
              const std::size_t k = (static_cast<std::size_t>(n) * d.c + c) * plane + p;
              dot += g[k] * xs[k];
            }
            const T coupling = r > T(0) ? dot / (s * s * r) : T(0);
            for (int c = 0; c < d.c; ++c) {
              const std::size_t k = (static_cast<std::size_t>(n) * d.c + c) * plane + p;
              dx[k] = g[k] / s - xs[k] * coupling;
            }
          }
        }
        x.accumulate_grad(dx);
      });
}

template <typename T>
Tensor<T> composite_over_white(const Tensor<T>& rgba) {
  const Dims4 d = dims4(rgba, "composite_over_white");
  if (d.c != 4) throw ContractError("composite_over_white: expected 4 channels, got " + std::to_string(d.c));
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const auto xs = rgba.data();
  std::vector<T> out(static_cast<std::size_t>(d.n) * 3 * plane);
  for (int n = 0; n < d.n; ++n) {
    const T* a = xs.data() + (static_cast<std::size_t>(n) * 4 + 3) * plane;
    for (int c = 0; c < 3; ++c) {
      const T* src = xs.data() + (static_cast<std::size_t>(n) * 4 + c) * plane;
      T* dst = out.data() + (static_cast<std::size_t>(n) * 3 + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] * a[p] + (T(1) - a[p]);
    }
  }
  return Tensor<T>::from_op("composite_over_white", {d.n, 3, d.h, d.w}, std::move(out), {rgba},
                            [rgba, d, plane](std::span<const T> g, std::span<const T>) mutable {
                              const auto xs = rgba.data();
                              std::vector<T> dx(xs.size(), T(0));
                              for (int n = 0; n < d.n; ++n) {
                                const std::size_t abase = (static_cast<std::size_t>(n) * 4 + 3) * plane;
                                for (int c = 0; c < 3; ++c) {
                                  const std::size_t src = (static_cast<std::size_t>(n) * 4 + c) * plane;
                                  const std::size_t gb = (static_cast<std::size_t>(n) * 3 + c) * plane;
                                  for (std::size_t p = 0; p < plane; ++p) {
                                    dx[src + p] = g[gb + p] * xs[abase + p];
                                    dx[abase + p] += g[gb + p] * (xs[src + p] - T(1));
                                  }
                                }
                              }
                              rgba.accumulate_grad(dx);
                            });
}

#define CONR_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);          \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                          \
  template Tensor<T> resize_nearest(const Tensor<T>&, int, int);                                       \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                                      \
  template Tensor<T> grid_sample_bilinear(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                                      \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);                                       \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                        \
  template Tensor<T> tanh(const Tensor<T>&);                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> weighted_set_mean(std::span<const Tensor<T>>, std::span<const Tensor<T>>);        \
  template Tensor<T> set_mean(std::span<const Tensor<T>>);                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                           \
  template Tensor<T> weighted_sum(std::span<const Tensor<T>>, std::span<const double>);                \
  template Tensor<T> normalize_channels(const Tensor<T>&, T);                                          \
  template Tensor<T> composite_over_white(const Tensor<T>&);

CONR_INSTANTIATE_OPS(float)
CONR_INSTANTIATE_OPS(double)

}  // namespace conr::ops
