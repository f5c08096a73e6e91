#pragma once

// Long-term context for the entropy model: the conv-LSTM subband predictor,
// cross-component context assembly and the per-subband fusion networks.

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wavecc/gmm.hpp"
#include "wavecc/lifting.hpp"

namespace wavecc {

enum class Component { kY = 0, kCb = 1, kCr = 2 };

inline const char* to_string(Component c) {
  switch (c) {
    case Component::kY: return "Y";
    case Component::kCb: return "Cb";
    case Component::kCr: return "Cr";
  }
  return "?";
}

/// kSubbandFirst: subband -> u1(32) -> u2(32) -> u3(3).
/// kInsideOut: subband -> u3(3) -> u2(32) -> u1(32); u1/u2 never reach the
/// prediction in this order.
enum class RnnOrder { kSubbandFirst, kInsideOut };

inline constexpr std::size_t kRnnPredictionChannels = 3;

template <class T>
struct RnnState {
  std::array<LstmState<T>, 3> units;  // u1, u2, u3

  std::size_t height() const { return units[0].h.dim(2); }
  std::size_t width() const { return units[0].h.dim(3); }
};

template <class T>
struct ContextRnn {
  std::array<ConvLstmCell<T>, 3> cells;  // u1, u2, u3
  RnnOrder order = RnnOrder::kSubbandFirst;

  static ContextRnn create(ParamRegistry<T>& reg, const std::string& prefix, std::size_t hidden, RnnOrder order,
                           std::uint64_t seed) {
    ContextRnn r;
    r.order = order;
    if (order == RnnOrder::kSubbandFirst) {
      r.cells[0] = ConvLstmCell<T>::create(reg, prefix + ".u1", 1, hidden, seed);
      r.cells[1] = ConvLstmCell<T>::create(reg, prefix + ".u2", hidden, hidden, seed);
      r.cells[2] = ConvLstmCell<T>::create(reg, prefix + ".u3", hidden, kRnnPredictionChannels, seed);
    } else {
      r.cells[0] = ConvLstmCell<T>::create(reg, prefix + ".u1", hidden, hidden, seed);
      r.cells[1] = ConvLstmCell<T>::create(reg, prefix + ".u2", kRnnPredictionChannels, hidden, seed);
      r.cells[2] = ConvLstmCell<T>::create(reg, prefix + ".u3", 1, kRnnPredictionChannels, seed);
    }
    return r;
  }

  RnnState<T> zero_state(std::size_t batch, std::size_t h, std::size_t w) const {
    RnnState<T> s;
    for (std::size_t u = 0; u < 3; ++u) s.units[u] = cells[u].zero_state(batch, h, w);
    return s;
  }
};

template <class T>
struct RnnOutput {
  Var<T> prediction;  // [B,3,H,W], hidden state of u3
  RnnState<T> state;
};

template <class T>
RnnOutput<T> rnn_step(const ContextRnn<T>& rnn, const RnnState<T>& state, const Var<T>& prev_subband) {
  if (prev_subband.dim(2) != state.height() || prev_subband.dim(3) != state.width()) {
    fail(ErrorKind::kShape, "rnn_step: subband " + shape_str(prev_subband.shape()) + " vs state " +
                                std::to_string(state.height()) + "x" + std::to_string(state.width()));
  }
  RnnState<T> next = state;
  const std::array<int, 3> seq = rnn.order == RnnOrder::kSubbandFirst ? std::array<int, 3>{0, 1, 2}
                                                                       : std::array<int, 3>{2, 1, 0};
  Var<T> x = prev_subband;
  for (int u : seq) {
    next.units[u] = conv_lstm_step(x, state.units[u], rnn.cells[u]);
    x = next.units[u].h;
  }
  return {next.units[2].h, next};
}

/// Nearest x2 upsampling of every hidden and cell map.
template <class T>
RnnState<T> level_transition(const RnnState<T>& state) {
  RnnState<T> s;
  for (std::size_t u = 0; u < 3; ++u) {
    s.units[u].h = upsample_nearest2(state.units[u].h);
    s.units[u].c = upsample_nearest2(state.units[u].c);
  }
  return s;
}

inline std::size_t prediction_channel(Orientation o) {
  switch (o) {
    case Orientation::kHL: return 0;
    case Orientation::kLH: return 1;
    case Orientation::kHH: return 2;
    case Orientation::kLL: return 0;
  }
  return 0;
}

template <class T>
Var<T> select_prediction(const Var<T>& prediction, Orientation target) {
  return slice_channels(prediction, prediction_channel(target), 1);
}

/// Nearest x2 followed by a 3x3 conv (identity at initialisation).
template <class T>
struct LearnedUpsampler {
  ConvLayer<T> conv;

  static LearnedUpsampler create(ParamRegistry<T>& reg, const std::string& name, std::uint64_t seed) {
    LearnedUpsampler up;
    up.conv = ConvLayer<T>::create(reg, name, 1, 1, 3, 3, Padding::kSymmetric, seed);
    up.conv.weight.mutable_value().fill(T{0});
    up.conv.weight.mutable_value()[4] = T{1};
    up.conv.bias.mutable_value().fill(T{0});
    return up;
  }

  Var<T> operator()(const Var<T>& x) const { return conv(upsample_nearest2(x)); }
};

// ------------------------------------------------------------ context slots

/// Kinds of long-term context maps.
enum class ContextSource {
  kLumaSubband,      // s_i of Y
  kLumaPrediction,   // cached Y prediction after s_1 (Cb, i = 1)
  kCbSubband,        // s_i of Cb (Cr only)
  kRnn,              // own-group predictor output
  kUp,               // learned upsampling of own s_{i-3}
};

inline bool is_cross_component(ContextSource s) {
  return s == ContextSource::kLumaSubband || s == ContextSource::kLumaPrediction || s == ContextSource::kCbSubband;
}

/// Context maps for component c and 1-based subband index i, in channel
/// order.
inline std::vector<ContextSource> context_sources(Component c, int i) {
  using S = ContextSource;
  switch (c) {
    case Component::kY:
      if (i == 1) return {};
      if (i <= 4) return {S::kRnn};
      return {S::kRnn, S::kUp};
    case Component::kCb:
      if (i == 1) return {S::kLumaSubband, S::kLumaPrediction};
      if (i <= 4) return {S::kLumaSubband, S::kRnn};
      return {S::kLumaSubband, S::kRnn, S::kUp};
    case Component::kCr:
      if (i == 1) return {S::kLumaSubband, S::kCbSubband};
      if (i <= 4) return {S::kLumaSubband, S::kCbSubband, S::kRnn};
      return {S::kLumaSubband, S::kCbSubband, S::kRnn, S::kUp};
  }
  return {};
}

/// Input layout of the fusion module shared by Cb and Cr: the union of both
/// components' sources. A component feeds zeros into slots it does not use.
inline std::vector<ContextSource> fusion_slots(Component c, int i) {
  using S = ContextSource;
  if (c == Component::kY) return context_sources(c, i);
  if (i == 1) return {S::kLumaSubband, S::kLumaPrediction, S::kCbSubband};
  if (i <= 4) return {S::kLumaSubband, S::kCbSubband, S::kRnn};
  return {S::kLumaSubband, S::kCbSubband, S::kRnn, S::kUp};
}

template <class T>
struct ContextBundle {
  Component component = Component::kY;
  int index = 1;
  std::vector<ContextSource> sources;
  std::vector<Var<T>> maps;  // one [B,1,h,w] map per source

  std::size_t channels() const { return maps.size(); }
};

/// What has been coded so far, as seen by both encoder and decoder.
template <class T>
struct CodedContext {
  // Dequantised, scaled subbands per component (index 0 = s_1); entries
  // are filled as coding proceeds.
  std::array<std::vector<Var<T>>, 3> subbands;
  Var<T> luma_prediction;  // selected Y prediction after s_1^Y
};

template <class T>
ContextBundle<T> assemble_context(Component c, int i, const SubbandId& target, const CodedContext<T>& coded,
                                  const Var<T>& rnn_prediction, const LearnedUpsampler<T>& up) {
  ContextBundle<T> b;
  b.component = c;
  b.index = i;
  b.sources = context_sources(c, i);
  const auto idx = static_cast<std::size_t>(i - 1);
  auto need = [&](Component comp, std::size_t k) -> const Var<T>& {
    const auto& v = coded.subbands[static_cast<std::size_t>(comp)];
    if (k >= v.size() || !v[k].defined()) {
      fail(ErrorKind::kState, std::string("assemble_context: ") + to_string(c) + " s" + std::to_string(i) +
                                  " needs " + to_string(comp) + " s" + std::to_string(k + 1) + " which is not coded yet");
    }
    return v[k];
  };
  for (ContextSource s : b.sources) {
    switch (s) {
      case ContextSource::kLumaSubband: b.maps.push_back(need(Component::kY, idx)); break;
      case ContextSource::kCbSubband: b.maps.push_back(need(Component::kCb, idx)); break;
      case ContextSource::kLumaPrediction:
        if (!coded.luma_prediction.defined()) fail(ErrorKind::kState, "assemble_context: no cached Y prediction");
        b.maps.push_back(coded.luma_prediction);
        break;
      case ContextSource::kRnn:
        if (!rnn_prediction.defined()) fail(ErrorKind::kState, "assemble_context: missing predictor output");
        b.maps.push_back(select_prediction(rnn_prediction, target.orientation));
        break;
      case ContextSource::kUp: b.maps.push_back(up(need(c, idx - 3))); break;
    }
  }
  return b;
}

/// Orders a bundle into the module's input slots, zero-filling unused slots
/// and, when `ablate` is set, every cross-component map.
template <class T>
Var<T> bundle_to_input(const ContextBundle<T>& bundle, const std::vector<ContextSource>& slots, bool ablate,
                       std::size_t batch, std::size_t h, std::size_t w) {
  if (slots.empty()) return {};
  std::vector<Var<T>> parts;
  for (ContextSource s : slots) {
    Var<T> m;
    for (std::size_t k = 0; k < bundle.sources.size(); ++k) {
      if (bundle.sources[k] == s) m = bundle.maps[k];
    }
    if (!m.defined() || (ablate && is_cross_component(s))) m = constant(Tensor<T>(Shape{batch, 1, h, w}));
    parts.push_back(m);
  }
  return concat_channels(parts);
}

// ------------------------------------------------------------------ fusion

template <class T>
struct ResBlock {
  ConvLayer<T> a, b;

  static ResBlock create(ParamRegistry<T>& reg, const std::string& name, std::size_t width, std::uint64_t seed) {
    return {ConvLayer<T>::create(reg, name + ".a", width, width, 3, 3, Padding::kSymmetric, seed),
            ConvLayer<T>::create(reg, name + ".b", width, width, 3, 3, Padding::kSymmetric, seed)};
  }

  Var<T> operator()(const Var<T>& x) const { return add(x, b(tanh(a(x)))); }
};

template <class T>
struct LowerFeatures {
  Var<T> r1;  // [B,F,h,w]; undefined when the module has no context input
  Var<T> r2;
};

/// Lower path: context -> conv -> two residual blocks, whose outputs are
/// added after the first and second masked convolution of the upper path.
template <class T>
struct FusionModule {
  std::size_t context_channels = 0;
  std::size_t width = 128;
  ConvLayer<T> lower_in;
  ResBlock<T> rb1, rb2;
  ConvLayer<T> mask_a, mask_b, head1, head2;

  static FusionModule create(ParamRegistry<T>& reg, const std::string& name, std::size_t context_channels,
                             std::size_t width, std::uint64_t seed) {
    FusionModule f;
    f.context_channels = context_channels;
    f.width = width;
    if (context_channels > 0) {
      f.lower_in = ConvLayer<T>::create(reg, name + ".lower", width, context_channels, 3, 3, Padding::kSymmetric, seed);
      f.rb1 = ResBlock<T>::create(reg, name + ".rb1", width, seed);
      f.rb2 = ResBlock<T>::create(reg, name + ".rb2", width, seed);
    }
    f.mask_a = ConvLayer<T>::create(reg, name + ".mask_a", width, 1, 3, 3, Padding::kZero, seed, ConvMask::kA);
    f.mask_b = ConvLayer<T>::create(reg, name + ".mask_b", width, width, 3, 3, Padding::kZero, seed, ConvMask::kB);
    f.head1 = ConvLayer<T>::create(reg, name + ".head1", width, width, 1, 1, Padding::kZero, seed);
    f.head2 = ConvLayer<T>::create(reg, name + ".head2", kGmmChannels, width, 1, 1, Padding::kZero, seed);
    return f;
  }

  LowerFeatures<T> lower(const Var<T>& context) const {
    if (context_channels == 0) return {};
    if (!context.defined() || context.dim(1) != context_channels) {
      fail(ErrorKind::kShape, "fuse_context: module expects " + std::to_string(context_channels) +
                                  " context channels, got " +
                                  (context.defined() ? std::to_string(context.dim(1)) : std::string("none")));
    }
    LowerFeatures<T> lf;
    lf.r1 = rb1(lower_in(context));
    lf.r2 = rb2(lf.r1);
    return lf;
  }

  /// Raw GMM parameters [B,9,h,w] for the whole subband. Position j only
  /// sees `current` at raster positions before j.
  Var<T> operator()(const Var<T>& current, const Var<T>& context) const {
    LowerFeatures<T> lf = lower(context);
    Var<T> u1 = mask_a(current);
    if (lf.r1.defined()) u1 = add(u1, lf.r1);
    Var<T> h1 = tanh(u1);
    Var<T> u2 = mask_b(h1);
    if (lf.r2.defined()) u2 = add(u2, lf.r2);
    Var<T> h2 = tanh(u2);
    return head2(tanh(head1(h2)));
  }
};

/// Per-position evaluation of a fusion module's upper path, used by both the
/// encoder and the decoder so that they produce identical parameters.
template <class T>
class UpperPathEvaluator {
 public:
  UpperPathEvaluator(const FusionModule<T>& m, const LowerFeatures<T>& lower, std::size_t h, std::size_t w)
      : f_(m.width), h_(h), w_(w) {
    const auto taps_a = conv_taps(3, 3, ConvMask::kA);
    const auto taps_b = conv_taps(3, 3, ConvMask::kB);
    taps_a_ = taps_a;
    taps_b_ = taps_b;
    wa_ = detail::compress_kernel(m.mask_a.weight.value(), taps_a);
    wb_ = detail::compress_kernel(m.mask_b.weight.value(), taps_b);
    w1_ = detail::compress_kernel(m.head1.weight.value(), conv_taps(1, 1, ConvMask::kNone));
    w2_ = detail::compress_kernel(m.head2.weight.value(), conv_taps(1, 1, ConvMask::kNone));
    ba_ = to_vec(m.mask_a.bias.value());
    bb_ = to_vec(m.mask_b.bias.value());
    b1_ = to_vec(m.head1.bias.value());
    b2_ = to_vec(m.head2.bias.value());
    if (lower.r1.defined()) {
      r1_ = &lower.r1.value();
      r2_ = &lower.r2.value();
    }
    h1_.assign(f_ * h_ * w_, T{0});
    gather_b_.resize(static_cast<Eigen::Index>(f_ * taps_b_.size()));
  }

  /// Raw parameters at (y, x); `current` holds the subband in raster order
  /// and must be final at every position before (y, x). Positions have to
  /// be visited in raster order.
  std::array<T, kGmmChannels> at(std::size_t y, std::size_t x, const T* current) {
    const std::size_t hw = h_ * w_;
    const std::size_t j = y * w_ + x;
    // First masked layer at j only needs current values before j.
    Vec in_a(static_cast<Eigen::Index>(taps_a_.size()));
    for (std::size_t t = 0; t < taps_a_.size(); ++t) in_a[static_cast<Eigen::Index>(t)] = sample(current, y, x, taps_a_[t]);
    Vec u1 = wa_ * in_a + ba_;
    for (std::size_t c = 0; c < f_; ++c) {
      T v = u1[static_cast<Eigen::Index>(c)];
      if (r1_) v += (*r1_)[c * hw + j];
      h1_[c * hw + j] = std::tanh(v);
    }
    for (std::size_t c = 0; c < f_; ++c) {
      for (std::size_t t = 0; t < taps_b_.size(); ++t) {
        gather_b_[static_cast<Eigen::Index>(c * taps_b_.size() + t)] = sample(h1_.data() + c * hw, y, x, taps_b_[t]);
      }
    }
    Vec u2 = wb_ * gather_b_ + bb_;
    for (std::size_t c = 0; c < f_; ++c) {
      T v = u2[static_cast<Eigen::Index>(c)];
      if (r2_) v += (*r2_)[c * hw + j];
      u2[static_cast<Eigen::Index>(c)] = std::tanh(v);
    }
    Vec h3 = (w1_ * u2 + b1_).array().tanh().matrix();
    Vec out = w2_ * h3 + b2_;
    std::array<T, kGmmChannels> raw{};
    for (std::size_t k = 0; k < kGmmChannels; ++k) raw[k] = out[static_cast<Eigen::Index>(k)];
    return raw;
  }

 private:
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  static Vec to_vec(const Tensor<T>& t) {
    Vec v(static_cast<Eigen::Index>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) v[static_cast<Eigen::Index>(i)] = t[i];
    return v;
  }

  T sample(const T* plane, std::size_t y, std::size_t x, const ConvTap& tap) const {
    const long sy = static_cast<long>(y) + tap.dy;
    const long sx = static_cast<long>(x) + tap.dx;
    if (sy < 0 || sx < 0 || sy >= static_cast<long>(h_) || sx >= static_cast<long>(w_)) return T{0};
    return plane[static_cast<std::size_t>(sy) * w_ + static_cast<std::size_t>(sx)];
  }

  std::size_t f_, h_, w_;
  std::vector<ConvTap> taps_a_, taps_b_;
  RowMatrix<T> wa_, wb_, w1_, w2_;
  Vec ba_, bb_, b1_, b2_;
  const Tensor<T>* r1_ = nullptr;
  const Tensor<T>* r2_ = nullptr;
  std::vector<T> h1_;
  Vec gather_b_;
};

// ------------------------------------------------------- the whole context

/// Channels fed into the fusion module of (group, i).
inline std::size_t fusion_input_channels(Component c, int i) { return fusion_slots(c, i).size(); }

inline std::string fusion_name(bool chroma, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ctx.%s.fuse.i%02d", chroma ? "c" : "y", i);
  return buf;
}

template <class T>
struct ContextModel {
  ContextRnn<T> rnn_y, rnn_c;
  std::vector<FusionModule<T>> fuse_y, fuse_c;  // index i - 1
  LearnedUpsampler<T> up;
  int levels = 4;

  static ContextModel create(ParamRegistry<T>& reg, int levels, std::size_t hidden, std::size_t width,
                             RnnOrder order, std::uint64_t seed) {
    ContextModel m;
    m.levels = levels;
    m.rnn_y = ContextRnn<T>::create(reg, "ctx.y.rnn", hidden, order, seed);
    m.rnn_c = ContextRnn<T>::create(reg, "ctx.c.rnn", hidden, order, seed);
    const int n = subband_count(levels);
    for (int i = 1; i <= n; ++i) {
      m.fuse_y.push_back(
          FusionModule<T>::create(reg, fusion_name(false, i), fusion_input_channels(Component::kY, i), width, seed));
    }
    for (int i = 1; i <= n; ++i) {
      m.fuse_c.push_back(
          FusionModule<T>::create(reg, fusion_name(true, i), fusion_input_channels(Component::kCb, i), width, seed));
    }
    m.up = LearnedUpsampler<T>::create(reg, "ctx.up", seed);
    return m;
  }

  const ContextRnn<T>& rnn(Component c) const { return c == Component::kY ? rnn_y : rnn_c; }
  const FusionModule<T>& fusion(Component c, int i) const {
    return (c == Component::kY ? fuse_y : fuse_c)[static_cast<std::size_t>(i - 1)];
  }
};

/// Drives the predictor through one component's subbands. `prepare(i)`
/// returns the context input for subband i; `advance(s_i)` feeds the coded
/// subband i. Level transitions happen after the last subband of a level.
template <class T>
class ComponentPass {
 public:
  ComponentPass(const ContextModel<T>& model, Component c, const CodedContext<T>& coded, bool ablate,
                const std::optional<RnnState<T>>& initial)
      : model_(&model), component_(c), coded_(&coded), ablate_(ablate), order_(coding_order(model.levels)) {
    if (initial) state_ = *initial;
  }

  /// Context input (slot layout) for subband i (1-based), given the spatial
  /// size of that subband.
  Var<T> prepare(int i, std::size_t batch, std::size_t h, std::size_t w) {
    const SubbandId& id = order_[static_cast<std::size_t>(i - 1)];
    if (i == 1 && !state_) state_ = model_->rnn(component_).zero_state(batch, h, w);
    if (component_ != Component::kY && !state_) fail(ErrorKind::kState, "chroma_state_init: missing Y snapshot");
    ContextBundle<T> bundle =
        assemble_context(component_, i, id, *coded_, i > 1 ? prediction_ : Var<T>(), model_->up);
    last_bundle_channels_ = bundle.channels();
    return bundle_to_input(bundle, fusion_slots(component_, i), ablate_, batch, h, w);
  }

  /// Consumes coded subband i (already scaled) and moves the predictor to
  /// subband i + 1.
  void advance(int i, const Var<T>& coded_subband) {
    if (!state_) state_ = model_->rnn(component_).zero_state(coded_subband.dim(0), coded_subband.dim(2),
                                                             coded_subband.dim(3));
    RnnOutput<T> out = rnn_step(model_->rnn(component_), *state_, coded_subband);
    state_ = out.state;
    if (i == 1) first_prediction_ = out.prediction;
    const auto n = static_cast<int>(order_.size());
    if (i < n && order_[static_cast<std::size_t>(i)].level != order_[static_cast<std::size_t>(i - 1)].level &&
        i >= 4) {
      snapshots_.push_back(*state_);
      state_ = level_transition(*state_);
    }
    if (i == n) snapshots_.push_back(*state_);
    prediction_ = state_->units[2].h;
  }

  /// Prediction of the predictor after consuming s_1 (used by Cb, i = 1).
  const Var<T>& first_prediction() const { return first_prediction_; }
  /// States recorded at each resolution, coarsest first.
  const std::vector<RnnState<T>>& snapshots() const { return snapshots_; }
  std::size_t last_bundle_channels() const { return last_bundle_channels_; }

 private:
  const ContextModel<T>* model_;
  Component component_;
  const CodedContext<T>* coded_;
  bool ablate_;
  std::vector<SubbandId> order_;
  std::optional<RnnState<T>> state_;
  Var<T> prediction_;
  Var<T> first_prediction_;
  std::vector<RnnState<T>> snapshots_;
  std::size_t last_bundle_channels_ = 0;
};

/// Chroma predictors start from the Y state at the coarsest resolution.
template <class T>
RnnState<T> chroma_state_init(const std::vector<RnnState<T>>& y_snapshots) {
  if (y_snapshots.empty()) fail(ErrorKind::kState, "chroma_state_init: no Y snapshots recorded");
  return y_snapshots.front();
}

}  // namespace wavecc
