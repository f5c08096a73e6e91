#pragma once

// Trainable 2D wavelet transform built from two predict/update lifting
// pairs, subband bookkeeping and scalar quantisation.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "wavecc/nn.hpp"

namespace wavecc {

enum class Orientation { kLL = 0, kHL = 1, kLH = 2, kHH = 3 };

inline const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::kLL: return "LL";
    case Orientation::kHL: return "HL";
    case Orientation::kLH: return "LH";
    case Orientation::kHH: return "HH";
  }
  return "?";
}

struct SubbandId {
  int level = 1;
  Orientation orientation = Orientation::kLL;

  friend bool operator==(const SubbandId&, const SubbandId&) = default;
};

inline std::string to_string(const SubbandId& id) {
  return std::string(to_string(id.orientation)) + std::to_string(id.level);
}

/// [LL_D, HL_D, LH_D, HH_D, HL_{D-1}, LH_{D-1}, HH_{D-1}, ..., HH_1]. For
/// every index i > 4 (1-based) entry i - 3 has the same orientation one
/// level coarser.
inline std::vector<SubbandId> coding_order(int levels) {
  if (levels < 1) fail(ErrorKind::kUsage, "coding_order: levels must be >= 1");
  std::vector<SubbandId> order{{levels, Orientation::kLL}};
  for (int d = levels; d >= 1; --d) {
    order.push_back({d, Orientation::kHL});
    order.push_back({d, Orientation::kLH});
    order.push_back({d, Orientation::kHH});
  }
  return order;
}

inline int subband_count(int levels) { return 3 * levels + 1; }

/// CDF 9/7 lifting coefficients (without the final scaling step).
namespace cdf97 {
inline constexpr double kAlpha = -1.586134342059924;
inline constexpr double kBeta = -0.052980118572961;
inline constexpr double kGamma = 0.882911075530934;
inline constexpr double kDelta = 0.443506852043971;
}  // namespace cdf97

/// One predict or update operator: a 3-tap linear skip path plus a gated
/// residual CNN, both filtering along the height axis.
template <class T>
struct LiftingFilterNet {
  // The residual branch sees inputs divided by this and its output is
  // multiplied back, keeping tanh out of saturation for 0..255 samples.
  static constexpr double kResidualScale = 64.0;

  Var<T> skip;  // [1,1,3,1]
  ConvLayer<T> res0, res1, res2;
  Var<T> gain;  // [1]

  static LiftingFilterNet create(ParamRegistry<T>& reg, const std::string& name, std::size_t width,
                                 std::uint64_t seed) {
    LiftingFilterNet f;
    f.skip = reg.add(name + ".skip", Tensor<T>(Shape{1, 1, 3, 1}));
    f.res0 = ConvLayer<T>::create(reg, name + ".res0", width, 1, 3, 1, Padding::kHalfSymmetric, seed);
    f.res1 = ConvLayer<T>::create(reg, name + ".res1", width, width, 3, 1, Padding::kHalfSymmetric, seed);
    f.res2 = ConvLayer<T>::create(reg, name + ".res2", 1, width, 3, 1, Padding::kHalfSymmetric, seed);
    f.gain = reg.add(name + ".gain", Tensor<T>(Shape{1}));
    return f;
  }

  void set_skip(const std::array<double, 3>& taps) {
    for (int k = 0; k < 3; ++k) skip.mutable_value()[k] = static_cast<T>(taps[k]);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> linear = conv2d(x, skip, Var<T>(), Padding::kHalfSymmetric);
    const T s = static_cast<T>(kResidualScale);
    Var<T> r = res2(tanh(res1(tanh(res0(mul_const(x, T{1} / s))))));
    return add(linear, scale(mul_const(r, s), gain));
  }
};

template <class T>
struct LiftingTransform {
  LiftingFilterNet<T> p1, u1, p2, u2;
  int levels = 4;

  static LiftingTransform create(ParamRegistry<T>& reg, int levels, std::size_t width, std::uint64_t seed) {
    LiftingTransform t;
    t.levels = levels;
    t.p1 = LiftingFilterNet<T>::create(reg, "lifting.p1", width, seed);
    t.u1 = LiftingFilterNet<T>::create(reg, "lifting.u1", width, seed);
    t.p2 = LiftingFilterNet<T>::create(reg, "lifting.p2", width, seed);
    t.u2 = LiftingFilterNet<T>::create(reg, "lifting.u2", width, seed);
    init_cdf97(t);
    return t;
  }
};

/// Sets the skip kernels to CDF 9/7 and the residual gains to zero. With
/// odd <- odd - P(even) and even <- even + U(odd), the predict kernels act on
/// (even[m], even[m+1]) and the update kernels on (odd[m-1], odd[m]).
/// Half-sample padding of the polyphase sequences is equivalent to
/// whole-sample symmetric extension of the signal itself.
template <class T>
void init_cdf97(LiftingTransform<T>& t) {
  using namespace cdf97;
  t.p1.set_skip({0.0, -kAlpha, -kAlpha});
  t.u1.set_skip({kBeta, kBeta, 0.0});
  t.p2.set_skip({0.0, -kGamma, -kGamma});
  t.u2.set_skip({kDelta, kDelta, 0.0});
  for (auto* f : {&t.p1, &t.u1, &t.p2, &t.u2}) f->gain.mutable_value()[0] = T{0};
}

template <class T>
struct LiftingBands {
  Var<T> lowpass;
  Var<T> highpass;
};

/// One lifting level along the height axis of [B,1,H,W]; H must be even.
template <class T>
LiftingBands<T> lift_forward_1d(const Var<T>& x, const LiftingTransform<T>& t) {
  if (x.dim(2) % 2 != 0) fail(ErrorKind::kShape, "lift_forward_1d: odd-length axis " + shape_str(x.shape()));
  Var<T> even = take_rows(x, 0);
  Var<T> odd = take_rows(x, 1);
  Var<T> hp = sub(odd, t.p1(even));
  Var<T> ev = add(even, t.u1(hp));
  Var<T> hp2 = sub(hp, t.p2(ev));
  Var<T> lp = add(ev, t.u2(hp2));
  return {lp, hp2};
}

template <class T>
Var<T> lift_inverse_1d(const Var<T>& lowpass, const Var<T>& highpass, const LiftingTransform<T>& t) {
  Var<T> ev = sub(lowpass, t.u2(highpass));
  Var<T> hp = add(highpass, t.p2(ev));
  Var<T> even = sub(ev, t.u1(hp));
  Var<T> odd = add(hp, t.p1(even));
  return interleave_rows(even, odd);
}

/// Subbands of one component in coding order, each [B,1,h,w].
template <class T>
struct SubbandPyramid {
  std::vector<Var<T>> bands;
  std::vector<SubbandId> ids;
  std::size_t height = 0;  // padded dims
  std::size_t width = 0;

  int levels() const { return static_cast<int>((bands.size() - 1) / 3); }
  std::size_t coefficient_count() const {
    std::size_t n = 0;
    for (const auto& b : bands) n += b.size();
    return n;
  }
};

inline std::size_t order_index_of(const SubbandId& id, int levels) {
  const auto order = coding_order(levels);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == id) return i;
  }
  fail(ErrorKind::kState, "subband " + to_string(id) + " not in coding order");
}

/// Rows are filtered first (horizontal lifting), then columns of both
/// results. HL = highpass along rows, lowpass along columns.
template <class T>
SubbandPyramid<T> dwt2d_forward(const Var<T>& plane, const LiftingTransform<T>& t) {
  require_rank(plane.shape(), 4, "dwt2d_forward");
  const int levels = t.levels;
  const std::size_t unit = std::size_t{1} << levels;
  if (plane.dim(2) % unit != 0 || plane.dim(3) % unit != 0) {
    fail(ErrorKind::kShape, "dwt2d_forward: dims " + shape_str(plane.shape()) + " not divisible by " +
                                std::to_string(unit) + "; pad first");
  }
  SubbandPyramid<T> pyr;
  pyr.height = plane.dim(2);
  pyr.width = plane.dim(3);
  pyr.ids = coding_order(levels);
  pyr.bands.resize(pyr.ids.size());
  Var<T> cur = plane;
  for (int d = 1; d <= levels; ++d) {
    LiftingBands<T> horiz = lift_forward_1d(transpose_hw(cur), t);
    LiftingBands<T> low = lift_forward_1d(transpose_hw(horiz.lowpass), t);
    LiftingBands<T> high = lift_forward_1d(transpose_hw(horiz.highpass), t);
    pyr.bands[order_index_of({d, Orientation::kHL}, levels)] = high.lowpass;
    pyr.bands[order_index_of({d, Orientation::kLH}, levels)] = low.highpass;
    pyr.bands[order_index_of({d, Orientation::kHH}, levels)] = high.highpass;
    cur = low.lowpass;
  }
  pyr.bands[0] = cur;
  return pyr;
}

template <class T>
Var<T> dwt2d_inverse(const SubbandPyramid<T>& pyr, const LiftingTransform<T>& t) {
  const int levels = t.levels;
  if (static_cast<int>(pyr.bands.size()) != subband_count(levels)) {
    fail(ErrorKind::kShape, "dwt2d_inverse: pyramid has " + std::to_string(pyr.bands.size()) + " subbands, expected " +
                                std::to_string(subband_count(levels)));
  }
  Var<T> cur = pyr.bands[0];
  for (int d = levels; d >= 1; --d) {
    const Var<T>& hl = pyr.bands[order_index_of({d, Orientation::kHL}, levels)];
    const Var<T>& lh = pyr.bands[order_index_of({d, Orientation::kLH}, levels)];
    const Var<T>& hh = pyr.bands[order_index_of({d, Orientation::kHH}, levels)];
    if (hl.shape() != cur.shape() || lh.shape() != cur.shape() || hh.shape() != cur.shape()) {
      fail(ErrorKind::kShape, "dwt2d_inverse: level " + std::to_string(d) + " subband dims mismatch");
    }
    Var<T> low = transpose_hw(lift_inverse_1d(cur, lh, t));
    Var<T> high = transpose_hw(lift_inverse_1d(hl, hh, t));
    cur = transpose_hw(lift_inverse_1d(low, high, t));
  }
  return cur;
}

// ---------------------------------------------------------------- quantiser

enum class QuantMode {
  kRound,     // round half away from zero, identity gradient
  kIdentity,  // no rounding; smooth surrogate used for gradient checks
};

/// q = round(y * delta). The backward pass treats rounding as identity:
/// dq/dy = delta, dq/ddelta = y.
template <class T>
Var<T> quantize(const Var<T>& y, const Var<T>& delta, QuantMode mode = QuantMode::kRound) {
  const T d = delta.value()[0];
  if (!(d > T{0})) fail(ErrorKind::kNumeric, "quantize: delta must be positive");
  Tensor<T> out(y.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = y.value()[i] * d;
    out[i] = mode == QuantMode::kRound ? std::round(v) : v;
  }
  return make_result<T>(std::move(out), {y, delta}, [y, delta](const Tensor<T>& g, const Tensor<T>&) {
    const T dd = delta.value()[0];
    if (y.requires_grad()) {
      Tensor<T>& dy = y.grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] += g[i] * dd;
    }
    if (delta.requires_grad()) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * y.value()[i];
      delta.grad_buffer()[0] += acc;
    }
  });
}

template <class T>
Var<T> dequantize(const Var<T>& q, const Var<T>& delta) {
  return divide(q, delta);
}

template <class T>
SubbandPyramid<T> quantize(const SubbandPyramid<T>& pyr, const Var<T>& delta, QuantMode mode = QuantMode::kRound) {
  SubbandPyramid<T> out = pyr;
  for (auto& b : out.bands) b = quantize(b, delta, mode);
  return out;
}

template <class T>
SubbandPyramid<T> dequantize(const SubbandPyramid<T>& pyr, const Var<T>& delta) {
  SubbandPyramid<T> out = pyr;
  for (auto& b : out.bands) b = dequantize(b, delta);
  return out;
}

inline constexpr int kMaxSymbolMagnitude = 32767;

/// Integer symbols of one subband in raster order.
struct SymbolPlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int16_t> values;

  friend bool operator==(const SymbolPlane&, const SymbolPlane&) = default;
};

/// Converts a quantised real pyramid (batch 1) into integer symbols.
template <class T>
std::vector<SymbolPlane> to_symbols(const SubbandPyramid<T>& quantized) {
  std::vector<SymbolPlane> out;
  for (std::size_t i = 0; i < quantized.bands.size(); ++i) {
    const Var<T>& b = quantized.bands[i];
    SymbolPlane sp{b.dim(2), b.dim(3), {}};
    sp.values.reserve(b.size());
    for (std::size_t k = 0; k < b.size(); ++k) {
      const T v = b.value()[k];
      if (!(std::abs(v) <= T(kMaxSymbolMagnitude))) {
        fail(ErrorKind::kNumeric, "quantize: symbol magnitude " + std::to_string(static_cast<double>(v)) +
                                      " exceeds 32767 in subband " + std::to_string(i + 1));
      }
      sp.values.push_back(static_cast<std::int16_t>(v));
    }
    out.push_back(std::move(sp));
  }
  return out;
}

template <class T>
Var<T> symbols_to_var(const SymbolPlane& sp) {
  Tensor<T> t(Shape{1, 1, sp.height, sp.width});
  for (std::size_t i = 0; i < sp.values.size(); ++i) t[i] = static_cast<T>(sp.values[i]);
  return constant(std::move(t));
}

}  // namespace wavecc
