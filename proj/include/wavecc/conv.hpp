#pragma once

// Same-size 2D convolution (cross-correlation) with zero or whole-sample
// symmetric padding and optional raster-causal masks.

#include <Eigen/Core>

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "wavecc/autodiff.hpp"

namespace wavecc {

/// kSymmetric mirrors about the edge sample (x[-1] = x[1]); kHalfSymmetric
/// mirrors about the edge itself (x[-1] = x[0]).
enum class Padding { kZero, kSymmetric, kHalfSymmetric };

/// Raster-causal kernel masks. kA keeps taps strictly before the centre,
/// kB additionally keeps the centre.
enum class ConvMask { kNone, kA, kB };

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvTap {
  int dy;
  int dx;
  int k;  // flat kernel index ky * kw + kx
};

inline std::vector<ConvTap> conv_taps(int kh, int kw, ConvMask mask) {
  std::vector<ConvTap> taps;
  const int ry = kh / 2;
  const int rx = kw / 2;
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      const int dy = ky - ry;
      const int dx = kx - rx;
      const bool before = dy < 0 || (dy == 0 && dx < 0);
      const bool centre = dy == 0 && dx == 0;
      if (mask == ConvMask::kA && !before) continue;
      if (mask == ConvMask::kB && !(before || centre)) continue;
      taps.push_back({dy, dx, ky * kw + kx});
    }
  }
  return taps;
}

/// Whole-sample symmetric reflection (edge sample not repeated). A
/// single-sample axis cannot be reflected and degrades to replication.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

inline int half_reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

/// Source index of i on an axis of length n, or -1 for a zero sample.
inline int pad_index(int i, int n, Padding padding) {
  if (i >= 0 && i < n) return i;
  switch (padding) {
    case Padding::kZero: return -1;
    case Padding::kSymmetric: return reflect_index(i, n);
    case Padding::kHalfSymmetric: return half_reflect_index(i, n);
  }
  return -1;
}

namespace detail {

struct ConvGeometry {
  std::size_t batch, channels, h, w;
  Padding padding;
};

// A block of output columns: whole rows [y0, y1) of batch items [b0, b1).
// Columns are ordered batch-major, then raster.
struct ColumnTile {
  std::size_t b0, b1, y0, y1;
  std::size_t rows() const { return y1 - y0; }
};

inline std::vector<ColumnTile> column_tiles(std::size_t batch, std::size_t h, std::size_t w) {
  constexpr std::size_t kTarget = 4096;
  std::vector<ColumnTile> tiles;
  if (h * w >= kTarget) {
    const std::size_t rows = std::max<std::size_t>(1, kTarget / w);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t y = 0; y < h; y += rows) tiles.push_back({b, b + 1, y, std::min(h, y + rows)});
    }
  } else {
    const std::size_t items = std::max<std::size_t>(1, kTarget / (h * w));
    for (std::size_t b = 0; b < batch; b += items) tiles.push_back({b, std::min(batch, b + items), 0, h});
  }
  return tiles;
}

// Column matrix [channels * ntaps, tile columns] of the receptive fields.
template <class T>
void im2col(const T* input, const ConvGeometry& g, const std::vector<ConvTap>& taps, const ColumnTile& tile,
            RowMatrix<T>& cols) {
  const std::size_t hw = g.h * g.w, ntaps = taps.size();
  const std::size_t ncols = (tile.b1 - tile.b0) * tile.rows() * g.w;
  const int h = static_cast<int>(g.h), w = static_cast<int>(g.w);
  cols.resize(static_cast<Eigen::Index>(g.channels * ntaps), static_cast<Eigen::Index>(ncols));
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t t = 0; t < ntaps; ++t) {
      const int dx = taps[t].dx;
      const int x_lo = std::min(w, std::max(0, -dx));
      const int x_hi = std::max(x_lo, std::min(w, w - dx));
      T* d = cols.data() + (c * ntaps + t) * ncols;
      for (std::size_t b = tile.b0; b < tile.b1; ++b) {
        const T* plane = input + (b * g.channels + c) * hw;
        for (std::size_t y = tile.y0; y < tile.y1; ++y, d += g.w) {
          const int sy = pad_index(static_cast<int>(y) + taps[t].dy, h, g.padding);
          if (sy < 0) {
            std::fill_n(d, g.w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * g.w;
          for (int x = 0; x < x_lo; ++x) {
            const int sx = pad_index(x + dx, w, g.padding);
            d[x] = sx < 0 ? T{0} : src[sx];
          }
          if (x_hi > x_lo) std::copy_n(src + x_lo + dx, x_hi - x_lo, d + x_lo);
          for (int x = x_hi; x < w; ++x) {
            const int sx = pad_index(x + dx, w, g.padding);
            d[x] = sx < 0 ? T{0} : src[sx];
          }
        }
      }
    }
  }
}

// [B, ch, hw] tile region <-> [ch, tile columns]
template <class T>
void gather_tile(const T* src, std::size_t ch, std::size_t h, std::size_t w, const ColumnTile& tile,
                 RowMatrix<T>& out) {
  const std::size_t span = tile.rows() * w, ncols = (tile.b1 - tile.b0) * span;
  out.resize(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(ncols));
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t b = tile.b0; b < tile.b1; ++b) {
      std::copy_n(src + (b * ch + c) * h * w + tile.y0 * w, span, out.data() + c * ncols + (b - tile.b0) * span);
    }
  }
}

template <class T>
void scatter_tile(const RowMatrix<T>& in, std::size_t ch, std::size_t h, std::size_t w, const ColumnTile& tile,
                  T* dst, bool accumulate) {
  const std::size_t span = tile.rows() * w, ncols = (tile.b1 - tile.b0) * span;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t b = tile.b0; b < tile.b1; ++b) {
      const T* s = in.data() + c * ncols + (b - tile.b0) * span;
      T* d = dst + (b * ch + c) * h * w + tile.y0 * w;
      if (accumulate) {
        for (std::size_t i = 0; i < span; ++i) d[i] += s[i];
      } else {
        std::copy_n(s, span, d);
      }
    }
  }
}

// Kernel as [cout, cin * ntaps] matching the im2col row order.
template <class T>
RowMatrix<T> compress_kernel(const Tensor<T>& kernel, const std::vector<ConvTap>& taps) {
  const std::size_t cout = kernel.dim(0);
  const std::size_t cin = kernel.dim(1);
  const std::size_t ksize = kernel.dim(2) * kernel.dim(3);
  RowMatrix<T> wc(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin * taps.size()));
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t t = 0; t < taps.size(); ++t) {
        wc(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c * taps.size() + t)) =
            kernel[(o * cin + c) * ksize + static_cast<std::size_t>(taps[t].k)];
      }
    }
  }
  return wc;
}

// Transposed kernel as [cin, cout * ntaps] for the flipped-tap correlation.
template <class T>
RowMatrix<T> compress_kernel_transposed(const Tensor<T>& kernel, const std::vector<ConvTap>& taps) {
  const std::size_t cout = kernel.dim(0);
  const std::size_t cin = kernel.dim(1);
  const std::size_t ksize = kernel.dim(2) * kernel.dim(3);
  RowMatrix<T> wt(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout * taps.size()));
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t t = 0; t < taps.size(); ++t) {
        wt(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(o * taps.size() + t)) =
            kernel[(o * cin + c) * ksize + static_cast<std::size_t>(taps[t].k)];
      }
    }
  }
  return wt;
}

// Taps that read a reflected sample: for each tap, the (output, source)
// position pairs where the unpadded source falls outside the plane.
inline std::vector<std::vector<std::pair<int, int>>> reflected_pairs(const std::vector<ConvTap>& taps, int h, int w,
                                                                     Padding padding) {
  std::vector<std::vector<std::pair<int, int>>> pairs(taps.size());
  if (padding == Padding::kZero) return pairs;
  int ry = 0, rx = 0;
  for (const auto& t : taps) {
    ry = std::max(ry, std::abs(t.dy));
    rx = std::max(rx, std::abs(t.dx));
  }
  for (int y = 0; y < h; ++y) {
    const bool row_border = y < ry || y >= h - ry;
    for (int x = 0; x < w; ++x) {
      if (!row_border && x >= rx && x < w - rx) continue;
      for (std::size_t t = 0; t < taps.size(); ++t) {
        const int uy = y + taps[t].dy, ux = x + taps[t].dx;
        if (uy >= 0 && uy < h && ux >= 0 && ux < w) continue;
        const int sy = pad_index(uy, h, padding), sx = pad_index(ux, w, padding);
        if (sy >= 0 && sx >= 0) pairs[t].emplace_back(y * w + x, sy * w + sx);
      }
    }
  }
  return pairs;
}

// d(input): the output gradient correlated with the flipped kernel under
// zero padding, then every reflected read scattered back to its source.
template <class T>
void conv_input_grad(const T* grad_out, const Tensor<T>& kernel, const ConvGeometry& g,
                     const std::vector<ConvTap>& taps, T* input_grad) {
  const std::size_t cout = kernel.dim(0), cin = g.channels, ntaps = taps.size();
  const std::size_t ksize = kernel.dim(2) * kernel.dim(3), hw = g.h * g.w;
  std::vector<ConvTap> flipped(taps);
  for (auto& t : flipped) {
    t.dy = -t.dy;
    t.dx = -t.dx;
  }
  const RowMatrix<T> wt = compress_kernel_transposed(kernel, taps);
  const ConvGeometry gg{g.batch, cout, g.h, g.w, Padding::kZero};
  RowMatrix<T> cols, res;
  for (const ColumnTile& tile : column_tiles(g.batch, g.h, g.w)) {
    im2col(grad_out, gg, flipped, tile, cols);
    res.resize(static_cast<Eigen::Index>(cin), cols.cols());
    res.noalias() = wt * cols;
    scatter_tile(res, cin, g.h, g.w, tile, input_grad, true);
  }
  const auto pairs = reflected_pairs(taps, static_cast<int>(g.h), static_cast<int>(g.w), g.padding);
  for (std::size_t t = 0; t < ntaps; ++t) {
    const auto& pt = pairs[t];
    if (pt.empty()) continue;
    const auto n = static_cast<Eigen::Index>(pt.size() * g.batch);
    RowMatrix<T> wtap(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cout));
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t o = 0; o < cout; ++o) {
        wtap(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(o)) =
            kernel[(o * cin + c) * ksize + static_cast<std::size_t>(taps[t].k)];
      }
    }
    RowMatrix<T> gsel(static_cast<Eigen::Index>(cout), n);
    for (std::size_t o = 0; o < cout; ++o) {
      T* row = gsel.data() + o * static_cast<std::size_t>(n);
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* src = grad_out + (b * cout + o) * hw;
        for (std::size_t k = 0; k < pt.size(); ++k) row[b * pt.size() + k] = src[pt[k].first];
      }
    }
    RowMatrix<T> r(static_cast<Eigen::Index>(cin), n);
    r.noalias() = wtap * gsel;
    for (std::size_t c = 0; c < cin; ++c) {
      const T* row = r.data() + c * static_cast<std::size_t>(n);
      for (std::size_t b = 0; b < g.batch; ++b) {
        T* dst = input_grad + (b * cin + c) * hw;
        for (std::size_t k = 0; k < pt.size(); ++k) dst[pt[k].second] += row[b * pt.size() + k];
      }
    }
  }
}

}  // namespace detail

/// input [B,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout] (may be undefined)
/// -> [B,Cout,H,W]. Masked taps are excluded from both passes, which is the
/// same as multiplying the kernel by the mask.
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, Padding padding,
              ConvMask mask = ConvMask::kNone) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    fail(ErrorKind::kShape, "conv2d: input channels " + std::to_string(cin) + " do not match kernel input channels " +
                                std::to_string(kernel.dim(1)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    fail(ErrorKind::kShape, "conv2d: kernel height/width must be odd, got " + shape_str(kernel.shape()));
  }
  if (mask != ConvMask::kNone && (kh != 3 || kw != 3)) {
    fail(ErrorKind::kShape, "conv2d: masked convolution requires a 3x3 kernel, got " + shape_str(kernel.shape()));
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != cout)) {
    fail(ErrorKind::kShape, "conv2d: bias length does not match output channels " + std::to_string(cout));
  }

  auto taps = std::make_shared<std::vector<ConvTap>>(conv_taps(static_cast<int>(kh), static_cast<int>(kw), mask));
  const detail::ConvGeometry geom{batch, cin, h, w, padding};
  const RowMatrix<T> wc = detail::compress_kernel(kernel.value(), *taps);

  Tensor<T> out(Shape{batch, cout, h, w});
  {
    RowMatrix<T> cols, res;
    for (const auto& tile : detail::column_tiles(batch, h, w)) {
      detail::im2col(input.value().ptr(), geom, *taps, tile, cols);
      res.resize(static_cast<Eigen::Index>(cout), cols.cols());
      res.noalias() = wc * cols;
      if (bias.defined()) {
        for (std::size_t o = 0; o < cout; ++o) res.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];
      }
      detail::scatter_tile(res, cout, h, w, tile, out.ptr(), false);
    }
  }

  return make_result<T>(
      std::move(out), {input, kernel, bias},
      [input, kernel, bias, taps, geom, batch, cin, cout, h, w](const Tensor<T>& g, const Tensor<T>&) {
        const std::size_t hw = h * w, ntaps = taps->size();
        if (kernel.requires_grad()) {
          RowMatrix<T> dwc = RowMatrix<T>::Zero(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin * ntaps));
          RowMatrix<T> cols, gm;
          for (const auto& tile : detail::column_tiles(batch, h, w)) {
            detail::im2col(input.value().ptr(), geom, *taps, tile, cols);
            detail::gather_tile(g.ptr(), cout, h, w, tile, gm);
            dwc.noalias() += gm * cols.transpose();
          }
          Tensor<T>& dk = kernel.grad_buffer();
          const std::size_t ksize = kernel.dim(2) * kernel.dim(3);
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t c = 0; c < cin; ++c) {
              for (std::size_t t = 0; t < ntaps; ++t) {
                dk[(o * cin + c) * ksize + static_cast<std::size_t>((*taps)[t].k)] +=
                    dwc(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c * ntaps + t));
              }
            }
          }
        }
        if (input.requires_grad()) {
          detail::conv_input_grad(g.ptr(), kernel.value(), geom, *taps, input.grad_buffer().ptr());
        }
        if (bias.requires_grad()) {
          Tensor<T>& db = bias.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < cout; ++o) {
              const T* row = g.ptr() + (b * cout + o) * hw;
              T acc{0};
              for (std::size_t p = 0; p < hw; ++p) acc += row[p];
              db[o] += acc;
            }
          }
        }
      });
}

}  // namespace wavecc
