#pragma once

// Differentiable analysis/synthesis and the per-component rate graph shared
// by training and the codec's reconstruction path.

#include <optional>
#include <type_traits>

#include "wavecc/model.hpp"
#include "wavecc/pixel_io.hpp"

namespace wavecc {

template <class T>
Var<T> plane_to_var(const Plane& p) {
  Tensor<T> t(Shape{1, 1, p.height, p.width});
  for (std::size_t i = 0; i < p.values.size(); ++i) t[i] = static_cast<T>(p.values[i]);
  return constant(std::move(t));
}

template <class T>
Plane var_to_plane(const Var<T>& v, PlaneLabel label, std::size_t batch_index = 0) {
  const std::size_t h = v.dim(2), w = v.dim(3);
  Plane p(w, h, label);
  const T* src = v.value().ptr() + batch_index * v.dim(1) * h * w;
  for (std::size_t i = 0; i < h * w; ++i) p.values[i] = static_cast<float>(src[i]);
  return p;
}

/// DWT followed by quantisation of every subband.
template <class T>
SubbandPyramid<T> analyze(const Model<T>& m, const Var<T>& plane, QuantMode mode = QuantMode::kRound) {
  return quantize(dwt2d_forward(plane, m.lifting), m.delta, mode);
}

/// Dequantisation, inverse DWT and refinement.
template <class T>
Var<T> synthesize(const Model<T>& m, const SubbandPyramid<T>& quantized) {
  return m.dequant(dwt2d_inverse(dequantize(quantized, m.delta), m.lifting));
}

/// Context-domain version of a quantised subband.
template <class T>
Var<T> context_map(const Model<T>& m, const Var<T>& quantized_subband) {
  return mul_const(dequantize(quantized_subband, m.delta), m.context_scale());
}

template <class T>
struct ComponentRate {
  Var<T> bits;                       // [B]
  std::vector<double> subband_bits;  // summed over the batch
  std::vector<RnnState<T>> snapshots;
  Var<T> first_prediction;
};

struct PassOptions {
  bool ablate = false;       // zero cross-component context
  bool compute_rate = true;  // false: only advance the predictor
};

/// Runs one component through the context model. Fills `coded` with the
/// component's context maps; chroma passes read Y (and Cb) from it.
template <class T>
ComponentRate<T> component_rate(const Model<T>& m, Component c, const SubbandPyramid<T>& quantized,
                                CodedContext<T>& coded, const std::optional<RnnState<std::type_identity_t<T>>>& initial,
                                PassOptions opt = {}) {
  ComponentPass<T> pass(m.context, c, coded, opt.ablate, initial);
  auto& own = coded.subbands[static_cast<std::size_t>(c)];
  own.clear();
  ComponentRate<T> out;
  const std::size_t batch = quantized.bands[0].dim(0);
  const int n = static_cast<int>(quantized.bands.size());
  for (int i = 1; i <= n; ++i) {
    const Var<T>& q = quantized.bands[static_cast<std::size_t>(i - 1)];
    Var<T> cur = context_map(m, q);
    if (opt.compute_rate) {
      Var<T> ctx = pass.prepare(i, batch, q.dim(2), q.dim(3));
      Var<T> raw = m.context.fusion(c, i)(cur, ctx);
      RateResult<T> r = subband_rate_bits(activate_params(raw), q);
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) s += static_cast<double>(r.bits.value()[b]);
      out.subband_bits.push_back(s);
      out.bits = out.bits.defined() ? add(out.bits, r.bits) : r.bits;
    }
    own.push_back(cur);
    pass.advance(i, cur);
  }
  out.snapshots = pass.snapshots();
  out.first_prediction = pass.first_prediction();
  if (c == Component::kY) coded.luma_prediction = select_prediction(out.first_prediction, Orientation::kLL);
  return out;
}

/// Initial chroma predictor state: the coarsest Y snapshot, or zeros when
/// cross-component information is ablated.
template <class T>
RnnState<T> chroma_initial_state(const Model<T>& m, const ComponentRate<T>& luma, bool ablate) {
  if (!ablate) return chroma_state_init(luma.snapshots);
  const RnnState<T>& ref = chroma_state_init(luma.snapshots);
  return m.context.rnn_c.zero_state(ref.units[0].h.dim(0), ref.height(), ref.width());
}

}  // namespace wavecc
