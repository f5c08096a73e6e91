#pragma once

// Parameterised building blocks: convolution layers and the convolutional
// LSTM cell.

#include <cmath>
#include <random>
#include <string>

#include "wavecc/conv.hpp"
#include "wavecc/ops.hpp"
#include "wavecc/params.hpp"

namespace wavecc {

/// Deterministic per-tensor initialisation stream.
inline std::mt19937_64 init_stream(std::uint64_t seed, const std::string& name) {
  return std::mt19937_64(seed ^ fnv1a64(reinterpret_cast<const std::uint8_t*>(name.data()), name.size()));
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::uint64_t seed, const std::string& name) {
  Tensor<T> t(std::move(shape));
  auto rng = init_stream(seed, name);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
struct ConvLayer {
  Var<T> weight;  // [Cout, Cin, kh, kw]
  Var<T> bias;    // [Cout]
  Padding padding = Padding::kSymmetric;
  ConvMask mask = ConvMask::kNone;

  static ConvLayer create(ParamRegistry<T>& reg, const std::string& name, std::size_t cout, std::size_t cin,
                          std::size_t kh, std::size_t kw, Padding padding, std::uint64_t seed,
                          ConvMask mask = ConvMask::kNone, bool with_bias = true) {
    ConvLayer layer;
    const double fan_in = static_cast<double>(cin * kh * kw);
    const double bound = fan_in > 0 ? 1.0 / std::sqrt(fan_in) : 0.0;
    layer.weight = reg.add(name + ".w", uniform_tensor<T>(Shape{cout, cin, kh, kw}, bound, seed, name + ".w"));
    if (with_bias) layer.bias = reg.add(name + ".b", uniform_tensor<T>(Shape{cout}, bound, seed, name + ".b"));
    layer.padding = padding;
    layer.mask = mask;
    return layer;
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, padding, mask); }

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
};

template <class T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

/// Convolutional LSTM with gates computed by one 3x3 convolution over
/// cat(input, h). Gate channel layout: input, forget, candidate, output.
template <class T>
struct ConvLstmCell {
  ConvLayer<T> gates;
  std::size_t hidden = 0;

  static ConvLstmCell create(ParamRegistry<T>& reg, const std::string& name, std::size_t in_channels,
                             std::size_t hidden_channels, std::uint64_t seed) {
    ConvLstmCell cell;
    cell.hidden = hidden_channels;
    cell.gates = ConvLayer<T>::create(reg, name + ".gates", 4 * hidden_channels, in_channels + hidden_channels, 3, 3,
                                      Padding::kSymmetric, seed);
    auto& b = cell.gates.bias.mutable_value();
    for (std::size_t i = 0; i < 4 * hidden_channels; ++i) b[i] = T{0};
    for (std::size_t i = hidden_channels; i < 2 * hidden_channels; ++i) b[i] = T{1};
    return cell;
  }

  std::size_t in_channels() const { return gates.in_channels() - hidden; }

  LstmState<T> zero_state(std::size_t batch, std::size_t h, std::size_t w) const {
    return {constant(Tensor<T>(Shape{batch, hidden, h, w})), constant(Tensor<T>(Shape{batch, hidden, h, w}))};
  }
};

template <class T>
LstmState<T> conv_lstm_step(const Var<T>& input, const LstmState<T>& state, const ConvLstmCell<T>& cell) {
  require_rank(input.shape(), 4, "conv_lstm_step input");
  if (state.h.dim(2) != input.dim(2) || state.h.dim(3) != input.dim(3) || state.c.shape() != state.h.shape()) {
    fail(ErrorKind::kShape, "conv_lstm_step: state " + shape_str(state.h.shape()) +
                                " does not match input spatial dims " + shape_str(input.shape()));
  }
  const std::size_t ch = cell.hidden;
  Var<T> z = cell.gates(concat_channels<T>({input, state.h}));
  Var<T> i = sigmoid(slice_channels(z, 0, ch));
  Var<T> f = sigmoid(slice_channels(z, ch, ch));
  Var<T> g = tanh(slice_channels(z, 2 * ch, ch));
  Var<T> o = sigmoid(slice_channels(z, 3 * ch, ch));
  Var<T> c_next = add(mul(f, state.c), mul(i, g));
  Var<T> h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

}  // namespace wavecc
