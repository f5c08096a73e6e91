#pragma once

// Image encoder and decoder. Both drive the same latent coding loop so the
// entropy parameters they compute are bit-identical.

#include <functional>

#include "wavecc/bitstream.hpp"
#include "wavecc/fpenv.hpp"
#include "wavecc/pipeline.hpp"
#include "wavecc/range_coder.hpp"

namespace wavecc {

using ComponentSymbols = std::vector<SymbolPlane>;  // coding order
using LatentSymbols = std::array<ComponentSymbols, 3>;

struct SubbandRate {
  Component component = Component::kY;
  int index = 1;
  SubbandId id;
  std::size_t coefficients = 0;
  double table_bits = 0.0;  // -log2(span / 65536) summed; what the coder spends
  double model_bits = 0.0;  // -log2(floored mass) summed; the training estimate
};

struct CodingTrace {
  std::vector<SubbandRate> subbands;

  double table_bits() const {
    double s = 0.0;
    for (const auto& r : subbands) s += r.table_bits;
    return s;
  }
  double model_bits() const {
    double s = 0.0;
    for (const auto& r : subbands) s += r.model_bits;
    return s;
  }
  double component_bits(Component c) const {
    double s = 0.0;
    for (const auto& r : subbands) {
      if (r.component == c) s += r.table_bits;
    }
    return s;
  }
};

/// Observer for the raw entropy parameters of every coded position.
using ParamObserver = std::function<void(Component, int, std::size_t, const std::array<float, kGmmChannels>&)>;

/// Coder hook: given the table for one position and (when encoding) the
/// symbol index, returns the symbol index.
using SymbolCoder = std::function<std::size_t(std::span<const std::uint32_t>, std::size_t)>;

struct LatentLayout {
  std::size_t height = 0;  // padded
  std::size_t width = 0;
  std::array<std::array<SymbolAlphabet, kBitstreamSubbands>, 3> bounds{};
  bool ablate = false;
};

/// Visits every latent symbol in coding order (Y, Cb, Cr; subbands in
/// coding order; raster order within a subband). When `encoding` the
/// symbols are read from `symbols`, otherwise they are filled in.
inline CodingTrace code_latents(const Model<float>& m, const LatentLayout& layout, LatentSymbols& symbols,
                                bool encoding, const SymbolCoder& coder, const ParamObserver& observe = {}) {
  if (m.config.levels != kBitstreamLevels) {
    fail(ErrorKind::kUsage, "codec: model has " + std::to_string(m.config.levels) + " levels, v1 needs 4");
  }
  NoGradGuard no_grad;
  const auto order = coding_order(m.config.levels);
  const float delta = m.delta.value()[0];
  const float scale = m.context_scale();
  CodingTrace trace;
  CodedContext<float> coded;
  ComponentRate<float> luma;
  for (std::size_t ci = 0; ci < 3; ++ci) {
    const auto c = static_cast<Component>(ci);
    std::optional<RnnState<float>> initial;
    if (c != Component::kY) initial = chroma_initial_state(m, luma, layout.ablate);
    ComponentPass<float> pass(m.context, c, coded, layout.ablate, initial);
    auto& own = coded.subbands[ci];
    own.clear();
    if (!encoding) symbols[ci].assign(order.size(), SymbolPlane{});
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int i = static_cast<int>(k) + 1;
      const std::size_t h = layout.height >> order[k].level;
      const std::size_t w = layout.width >> order[k].level;
      SymbolPlane& sp = symbols[ci][k];
      if (encoding) {
        if (sp.height != h || sp.width != w || sp.values.size() != h * w) {
          fail(ErrorKind::kShape, "encode: subband " + std::to_string(i) + " has unexpected dims");
        }
      } else {
        sp = SymbolPlane{h, w, std::vector<std::int16_t>(h * w, 0)};
      }
      const SymbolAlphabet alpha = layout.bounds[ci][k];
      SubbandRate rate{c, i, order[k], h * w, 0.0, 0.0};
      Tensor<float> cur(Shape{1, 1, h, w});
      if (alpha.size() == 1) {
        // Nothing to transmit; the header already pins every symbol.
        for (std::size_t j = 0; j < h * w; ++j) {
          if (encoding && sp.values[j] != alpha.lo) fail(ErrorKind::kState, "encode: symbol outside alphabet");
          sp.values[j] = static_cast<std::int16_t>(alpha.lo);
          cur[j] = static_cast<float>(alpha.lo) / delta * scale;
        }
      } else {
        Var<float> ctx = pass.prepare(i, 1, h, w);
        const FusionModule<float>& fm = m.context.fusion(c, i);
        LowerFeatures<float> lower = fm.lower(ctx);
        UpperPathEvaluator<float> eval(fm, lower, h, w);
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t j = y * w + x;
            const auto raw = eval.at(y, x, cur.ptr());
            if (observe) observe(c, i, j, raw);
            const GmmAt p = activate_at(raw.data());
            const auto cdf = integer_cdf(p, alpha);
            std::size_t index = 0;
            if (encoding) {
              const int s = sp.values[j];
              if (!alpha.contains(s)) {
                fail(ErrorKind::kUsage, "encode: symbol " + std::to_string(s) + " outside alphabet in subband " +
                                            std::to_string(i) + " at position " + std::to_string(j));
              }
              index = static_cast<std::size_t>(s - alpha.lo);
            }
            index = coder(cdf, index);
            const int s = alpha.lo + static_cast<int>(index);
            sp.values[j] = static_cast<std::int16_t>(s);
            rate.table_bits += span_bits(cdf[index + 1] - cdf[index]);
            rate.model_bits += -std::log2(coding_mass(p, s));
            cur[j] = static_cast<float>(s) / delta * scale;
          }
        }
      }
      trace.subbands.push_back(rate);
      Var<float> coded_map = constant(std::move(cur));
      own.push_back(coded_map);
      pass.advance(i, coded_map);
    }
    if (c == Component::kY) {
      luma.snapshots = pass.snapshots();
      luma.first_prediction = pass.first_prediction();
      coded.luma_prediction = select_prediction(luma.first_prediction, Orientation::kLL);
    }
  }
  return trace;
}

inline Var<float> symbols_to_pyramid_plane(const Model<float>& m, const ComponentSymbols& syms) {
  SubbandPyramid<float> pyr;
  pyr.ids = coding_order(m.config.levels);
  for (const auto& sp : syms) pyr.bands.push_back(symbols_to_var<float>(sp));
  return synthesize(m, pyr);
}

/// Decoded image from latent symbols, cropped to the original size. Both
/// the encoder and the decoder call this.
inline RgbImage reconstruct_image(const Model<float>& m, const LatentSymbols& symbols, std::size_t orig_width,
                                  std::size_t orig_height, YCbCrPlanes* planes_out = nullptr) {
  NoGradGuard no_grad;
  YCbCrPlanes planes;
  planes.y = var_to_plane(symbols_to_pyramid_plane(m, symbols[0]), PlaneLabel::kY);
  planes.cb = var_to_plane(symbols_to_pyramid_plane(m, symbols[1]), PlaneLabel::kCb);
  planes.cr = var_to_plane(symbols_to_pyramid_plane(m, symbols[2]), PlaneLabel::kCr);
  if (planes_out) *planes_out = planes;
  return quantize_8bit(crop_image(ycbcr_to_rgb(planes), orig_width, orig_height));
}

struct EncodeOptions {
  bool ablate_cross_component = false;
};

struct EncodeResult {
  Bitstream bitstream;
  std::vector<std::uint8_t> bytes;
  LatentSymbols symbols;
  CodingTrace trace;
  RgbImage reconstruction;  // 8-bit, what the decoder will output
};

inline LatentSymbols analyze_image(const Model<float>& m, const RgbImage& padded) {
  NoGradGuard no_grad;
  const YCbCrPlanes planes = rgb_to_ycbcr(padded);
  LatentSymbols out;
  const Plane* comps[3] = {&planes.y, &planes.cb, &planes.cr};
  for (std::size_t c = 0; c < 3; ++c) out[c] = to_symbols(analyze(m, plane_to_var<float>(*comps[c])));
  return out;
}

inline EncodeResult encode_image(const Model<float>& m, const RgbImage& image, const EncodeOptions& opt = {}) {
  FloatModeGuard fp_mode;
  if (image.width == 0 || image.height == 0) fail(ErrorKind::kShape, "encode: empty image");
  const std::size_t unit = std::size_t{1} << kBitstreamLevels;
  const RgbImage padded = pad_image(image, unit);
  if (padded.width < unit || padded.height < unit) fail(ErrorKind::kShape, "encode: image smaller than 2^D");
  EncodeResult res;
  res.symbols = analyze_image(m, padded);
  BitstreamHeader& h = res.bitstream.header;
  h.flags = opt.ablate_cross_component ? kFlagCrossComponentAblated : 0;
  h.orig_width = static_cast<std::uint32_t>(image.width);
  h.orig_height = static_cast<std::uint32_t>(image.height);
  h.padded_width = static_cast<std::uint32_t>(padded.width);
  h.padded_height = static_cast<std::uint32_t>(padded.height);
  h.delta = m.delta.value()[0];
  h.weights_digest = weights_digest(m.registry);
  LatentLayout layout{padded.height, padded.width, {}, opt.ablate_cross_component};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t k = 0; k < kBitstreamSubbands; ++k) {
      const auto& v = res.symbols[c][k].values;
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      layout.bounds[c][k] = {*lo, *hi};
    }
  }
  h.bounds = layout.bounds;
  RangeEncoder enc;
  res.trace = code_latents(m, layout, res.symbols, true,
                           [&enc](std::span<const std::uint32_t> cdf, std::size_t index) {
                             enc.encode_symbol(cdf, index);
                             return index;
                           });
  res.bitstream.payload = enc.finish();
  h.payload_length = res.bitstream.payload.size();
  res.bytes = write_bitstream(res.bitstream);
  res.reconstruction = reconstruct_image(m, res.symbols, image.width, image.height);
  return res;
}

struct DecodeOptions {
  bool force = false;  // ignore a weights digest mismatch
};

struct DecodeResult {
  RgbImage image;
  LatentSymbols symbols;
  CodingTrace trace;
  BitstreamHeader header;
};

inline DecodeResult decode_image(const Model<float>& m, const std::vector<std::uint8_t>& bytes,
                                 const DecodeOptions& opt = {}) {
  FloatModeGuard fp_mode;
  const Bitstream bs = parse_bitstream(bytes);
  const BitstreamHeader& h = bs.header;
  if (!opt.force) {
    const std::uint64_t digest = weights_digest(m.registry);
    if (digest != h.weights_digest) {
      fail(ErrorKind::kDigest, "decode: bitstream was produced with different weights (digest mismatch)");
    }
  }
  DecodeResult res;
  res.header = h;
  LatentLayout layout{h.padded_height, h.padded_width, h.bounds, (h.flags & kFlagCrossComponentAblated) != 0};
  RangeDecoder dec(bs.payload);
  res.trace = code_latents(m, layout, res.symbols, false,
                           [&dec](std::span<const std::uint32_t> cdf, std::size_t) { return dec.decode_symbol(cdf); });
  dec.finish();
  res.image = reconstruct_image(m, res.symbols, h.orig_width, h.orig_height);
  return res;
}

}  // namespace wavecc
