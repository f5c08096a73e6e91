#pragma once

// Elementwise, reduction and layout operations with gradients.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "wavecc/autodiff.hpp"

namespace wavecc {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_scalar(const Shape& s, const char* op) {
  if (numel(s) != 1) fail(ErrorKind::kShape, std::string(op) + ": expected a scalar, got " + shape_str(s));
}

// Elementwise op where the local derivative is a function of (x, y).
template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D df) {
  Tensor<T> out(x.shape());
  const T* xs = x.value().ptr();
  T* ys = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) ys[i] = f(xs[i]);
  return make_result<T>(std::move(out), {x}, [x, df](const Tensor<T>& g, const Tensor<T>& y) {
    Tensor<T>& dx = x.grad_buffer();
    const T* xv = x.value().ptr();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * df(xv[i], y[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    if (a.requires_grad()) a.accumulate(g);
    if (b.requires_grad()) b.accumulate(g);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    if (a.requires_grad()) a.accumulate(g);
    if (b.requires_grad()) {
      Tensor<T>& db = b.grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    if (a.requires_grad()) {
      Tensor<T>& da = a.grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor<T>& db = b.grad_buffer();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * a.value()[i];
    }
  });
}

/// s * x where s is a one-element variable.
template <class T>
Var<T> scale(const Var<T>& x, const Var<T>& s) {
  detail::require_scalar(s.shape(), "scale");
  const T k = s.value()[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x.value()[i];
  return make_result<T>(std::move(out), {x, s}, [x, s](const Tensor<T>& g, const Tensor<T>&) {
    const T kk = s.value()[0];
    if (x.requires_grad()) {
      Tensor<T>& dx = x.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * kk;
    }
    if (s.requires_grad()) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.value()[i];
      s.grad_buffer()[0] += acc;
    }
  });
}

/// x / s where s is a one-element variable.
template <class T>
Var<T> divide(const Var<T>& x, const Var<T>& s) {
  detail::require_scalar(s.shape(), "divide");
  const T k = s.value()[0];
  if (k == T{0}) fail(ErrorKind::kNumeric, "divide: division by zero");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] / k;
  return make_result<T>(std::move(out), {x, s}, [x, s](const Tensor<T>& g, const Tensor<T>&) {
    const T kk = s.value()[0];
    if (x.requires_grad()) {
      Tensor<T>& dx = x.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] / kk;
    }
    if (s.requires_grad()) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.value()[i];
      s.grad_buffer()[0] -= acc / (kk * kk);
    }
  });
}

template <class T>
Var<T> mul_const(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Var<T> add_const(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

namespace detail {

// Elementwise op with a vectorised forward pass and dy/dx = df(y).
template <class T, class F, class D>
Var<T> unary_array(const Var<T>& x, F f, D df) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Tensor<T> out(x.shape());
  const auto n = static_cast<Eigen::Index>(out.size());
  Eigen::Map<Arr>(out.ptr(), n) = f(Eigen::Map<const Arr>(x.value().ptr(), n));
  return make_result<T>(std::move(out), {x}, [x, df](const Tensor<T>& g, const Tensor<T>& y) {
    const auto m = static_cast<Eigen::Index>(y.size());
    Eigen::Map<const Arr> ya(y.ptr(), m), ga(g.ptr(), m);
    Eigen::Map<Arr>(x.grad_buffer().ptr(), m) += ga * df(ya);
  });
}

}  // namespace detail

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary_array(
      x, [](const auto& a) { return a.tanh(); }, [](const auto& y) { return T{1} - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary_array(
      x, [](const auto& a) { return a.logistic(); }, [](const auto& y) { return y * (T{1} - y); });
}

template <class T>
Var<T> square(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <class T>
Var<T> exp(const Var<T>& x) {
  Var<T> y = detail::unary(x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
  if (!y.value().all_finite()) fail(ErrorKind::kNumeric, "exp: overflow produced a non-finite value");
  return y;
}

template <class T>
Var<T> log(const Var<T>& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x.value()[i] > T{0})) {
      fail(ErrorKind::kNumeric, "log: non-positive argument at index " + std::to_string(i));
    }
  }
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

/// Clamps into [lo, hi]; the gradient passes only strictly inside.
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T{1} : T{0}; });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc{0};
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.value()[i];
  return make_result<T>(Tensor<T>::scalar(acc), {x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return mul_const(sum(x), T{1} / static_cast<T>(x.size()));
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean(square(sub(a, b)));
}

/// Inner product of the flattened tensors.
template <class T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  return sum(mul(a, b));
}

/// Softmax over axis 1 of a [B,C,H,W] tensor.
template <class T>
Var<T> channel_softmax(const Var<T>& x) {
  require_rank(x.shape(), 4, "channel_softmax");
  const std::size_t batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* xv = x.value().ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = b * ch * hw + p;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < ch; ++c) mx = std::max(mx, xv[base + c * hw]);
      T z{0};
      for (std::size_t c = 0; c < ch; ++c) {
        const T e = std::exp(xv[base + c * hw] - mx);
        out[base + c * hw] = e;
        z += e;
      }
      for (std::size_t c = 0; c < ch; ++c) out[base + c * hw] /= z;
    }
  }
  return make_result<T>(std::move(out), {x}, [x, batch, ch, hw](const Tensor<T>& g, const Tensor<T>& y) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t base = b * ch * hw + p;
        T dotp{0};
        for (std::size_t c = 0; c < ch; ++c) dotp += g[base + c * hw] * y[base + c * hw];
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t i = base + c * hw;
          dx[i] += y[i] * (g[i] - dotp);
        }
      }
    }
  });
}

/// Concatenates [B,Ci,H,W] tensors along the channel axis.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  require_rank(s0, 4, "concat_channels");
  std::size_t total = 0;
  for (const Var<T>& p : parts) {
    require_rank(p.shape(), 4, "concat_channels");
    if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3]) {
      fail(ErrorKind::kShape, "concat_channels: incompatible parts " + shape_str(s0) + " and " + shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  const std::size_t batch = s0[0], hw = s0[2] * s0[3];
  Tensor<T> out(Shape{batch, total, s0[2], s0[3]});
  std::size_t off = 0;
  for (const Var<T>& p : parts) {
    const std::size_t c = p.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(p.value().ptr() + b * c * hw, c * hw, out.ptr() + (b * total + off) * hw);
    }
    off += c;
  }
  return make_result<T>(std::move(out), parts, [parts, batch, total, hw](const Tensor<T>& g, const Tensor<T>&) {
    std::size_t offset = 0;
    for (const Var<T>& p : parts) {
      const std::size_t c = p.dim(1);
      if (p.requires_grad()) {
        Tensor<T>& dp = p.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = g.ptr() + (b * total + offset) * hw;
          T* dst = dp.ptr() + b * c * hw;
          for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

/// Channels [start, start + count) of a [B,C,H,W] tensor.
template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t start, std::size_t count) {
  require_rank(x.shape(), 4, "slice_channels");
  const std::size_t batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (start + count > ch) {
    fail(ErrorKind::kShape, "slice_channels: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                                ") exceeds " + std::to_string(ch) + " channels");
  }
  Tensor<T> out(Shape{batch, count, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x.value().ptr() + (b * ch + start) * hw, count * hw, out.ptr() + b * count * hw);
  }
  return make_result<T>(std::move(out), {x}, [x, batch, ch, hw, start, count](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* src = g.ptr() + b * count * hw;
      T* dst = dx.ptr() + (b * ch + start) * hw;
      for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

/// Nearest-neighbour upsampling by 2 along both spatial axes.
template <class T>
Var<T> upsample_nearest2(const Var<T>& x) {
  require_rank(x.shape(), 4, "upsample_nearest2");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().ptr() + p * h * w;
    T* dst = out.ptr() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_result<T>(std::move(out), {x}, [x, planes, h, w](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = g.ptr() + p * 4 * h * w;
      T* dst = dx.ptr() + p * h * w;
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
      }
    }
  });
}

/// Swaps the two spatial axes of a [B,C,H,W] tensor.
template <class T>
Var<T> transpose_hw(const Var<T>& x) {
  require_rank(x.shape(), 4, "transpose_hw");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), w, h});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().ptr() + p * h * w;
    T* dst = out.ptr() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) dst[xx * h + y] = src[y * w + xx];
    }
  }
  return make_result<T>(std::move(out), {x}, [x, planes, h, w](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = g.ptr() + p * h * w;
      T* dst = dx.ptr() + p * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) dst[y * w + xx] += src[xx * h + y];
      }
    }
  });
}

/// Rows 0,2,4,... (parity 0) or 1,3,5,... (parity 1) of a [B,C,H,W] tensor.
template <class T>
Var<T> take_rows(const Var<T>& x, std::size_t parity) {
  require_rank(x.shape(), 4, "take_rows");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0) fail(ErrorKind::kShape, "take_rows: odd-length axis " + shape_str(x.shape()));
  const std::size_t hh = h / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), hh, w});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < hh; ++y) {
      std::copy_n(x.value().ptr() + (p * h + 2 * y + parity) * w, w, out.ptr() + (p * hh + y) * w);
    }
  }
  return make_result<T>(std::move(out), {x}, [x, planes, h, hh, w, parity](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < hh; ++y) {
        const T* src = g.ptr() + (p * hh + y) * w;
        T* dst = dx.ptr() + (p * h + 2 * y + parity) * w;
        for (std::size_t xx = 0; xx < w; ++xx) dst[xx] += src[xx];
      }
    }
  });
}

/// Inverse of take_rows: interleaves even and odd rows.
template <class T>
Var<T> interleave_rows(const Var<T>& even, const Var<T>& odd) {
  detail::require_same_shape(even.shape(), odd.shape(), "interleave_rows");
  require_rank(even.shape(), 4, "interleave_rows");
  const std::size_t planes = even.dim(0) * even.dim(1), hh = even.dim(2), w = even.dim(3);
  Tensor<T> out(Shape{even.dim(0), even.dim(1), 2 * hh, w});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < hh; ++y) {
      std::copy_n(even.value().ptr() + (p * hh + y) * w, w, out.ptr() + (p * 2 * hh + 2 * y) * w);
      std::copy_n(odd.value().ptr() + (p * hh + y) * w, w, out.ptr() + (p * 2 * hh + 2 * y + 1) * w);
    }
  }
  return make_result<T>(std::move(out), {even, odd}, [even, odd, planes, hh, w](const Tensor<T>& g, const Tensor<T>&) {
    for (std::size_t parity = 0; parity < 2; ++parity) {
      const Var<T>& v = parity == 0 ? even : odd;
      if (!v.requires_grad()) continue;
      Tensor<T>& d = v.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < hh; ++y) {
          const T* src = g.ptr() + (p * 2 * hh + 2 * y + parity) * w;
          T* dst = d.ptr() + (p * hh + y) * w;
          for (std::size_t xx = 0; xx < w; ++xx) dst[xx] += src[xx];
        }
      }
    }
  });
}

/// Batch element `index` of a [B,...] tensor, keeping a leading axis of 1.
template <class T>
Var<T> batch_item(const Var<T>& x, std::size_t index) {
  const std::size_t per = x.size() / x.dim(0);
  Shape s = x.shape();
  s[0] = 1;
  Tensor<T> out(s);
  std::copy_n(x.value().ptr() + index * per, per, out.ptr());
  return make_result<T>(std::move(out), {x}, [x, index, per](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.grad_buffer();
    for (std::size_t i = 0; i < per; ++i) dx[index * per + i] += g[i];
  });
}

/// Zero tensor with the same layout as `x` but `channels` channels.
template <class T>
Var<T> zeros_like_channels(const Var<T>& x, std::size_t channels) {
  return constant(Tensor<T>(Shape{x.dim(0), channels, x.dim(2), x.dim(3)}));
}

}  // namespace wavecc
