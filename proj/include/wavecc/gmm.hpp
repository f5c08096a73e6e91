#pragma once

// Discretised Gaussian mixture over integer symbols: parameter activation,
// per-symbol mass, differentiable rate and integer CDF tables.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "wavecc/ops.hpp"

namespace wavecc {

inline constexpr std::size_t kMixtures = 3;
inline constexpr std::size_t kGmmChannels = 3 * kMixtures;
inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kSigmaMax = 1e4;
inline constexpr double kMassFloor = 1.0 / 65536.0;
inline constexpr std::uint32_t kCdfTotal = 1u << 16;
inline constexpr std::size_t kMaxAlphabet = std::size_t{1} << 15;

struct GmmAt {
  std::array<double, kMixtures> w{};
  std::array<double, kMixtures> mu{};
  std::array<double, kMixtures> sigma{};
};

template <class T>
struct GmmField {
  Var<T> weights;  // [B,K,H,W]
  Var<T> means;
  Var<T> scales;
};

template <class T>
GmmField<T> activate_params(const Var<T>& raw) {
  require_rank(raw.shape(), 4, "activate_params");
  if (raw.dim(1) != kGmmChannels) {
    fail(ErrorKind::kShape, "activate_params: expected " + std::to_string(kGmmChannels) + " channels, got " +
                                std::to_string(raw.dim(1)));
  }
  GmmField<T> f;
  f.weights = channel_softmax(slice_channels(raw, 0, kMixtures));
  f.means = slice_channels(raw, kMixtures, kMixtures);
  f.scales = exp(clamp(slice_channels(raw, 2 * kMixtures, kMixtures), static_cast<T>(std::log(kSigmaMin)),
                       static_cast<T>(std::log(kSigmaMax))));
  return f;
}

/// Scalar activation of the 9 raw values at one position, computed in
/// double. Used identically by encoder and decoder.
template <class T>
GmmAt activate_at(const T* raw, std::size_t stride = 1) {
  GmmAt p;
  double mx = -INFINITY;
  for (std::size_t k = 0; k < kMixtures; ++k) mx = std::max(mx, static_cast<double>(raw[k * stride]));
  double z = 0.0;
  for (std::size_t k = 0; k < kMixtures; ++k) {
    p.w[k] = std::exp(static_cast<double>(raw[k * stride]) - mx);
    z += p.w[k];
  }
  const double lo = std::log(kSigmaMin), hi = std::log(kSigmaMax);
  for (std::size_t k = 0; k < kMixtures; ++k) {
    p.w[k] /= z;
    p.mu[k] = static_cast<double>(raw[(kMixtures + k) * stride]);
    p.sigma[k] = std::exp(std::clamp(static_cast<double>(raw[(2 * kMixtures + k) * stride]), lo, hi));
  }
  return p;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Mass of the unit bin around s under one Gaussian. Above the mean the
/// difference is taken on the upper tail to avoid cancellation.
inline double component_mass(double s, double mu, double sigma) {
  const double a = ((s + 0.5) - mu) / sigma;
  const double b = ((s - 0.5) - mu) / sigma;
  if (s > mu) return normal_cdf(-b) - normal_cdf(-a);
  return normal_cdf(a) - normal_cdf(b);
}

/// Unfloored mixture mass of symbol s.
inline double symbol_mass(const GmmAt& p, int s) {
  double m = 0.0;
  for (std::size_t k = 0; k < kMixtures; ++k) m += p.w[k] * component_mass(s, p.mu[k], p.sigma[k]);
  return m;
}

inline double coding_mass(const GmmAt& p, int s) { return std::max(symbol_mass(p, s), kMassFloor); }

template <class T>
struct RateResult {
  Var<T> bits;                // [B] total bits per batch item
  Tensor<T> position_bits;    // [B,1,H,W]
};

/// Sum over positions of -log2(max(mass, floor)). The floor passes the
/// gradient of the unfloored mass through (scaled by the floored value), so
/// badly mispredicted symbols still pull the model towards them.
template <class T>
RateResult<T> subband_rate_bits(const GmmField<T>& f, const Var<T>& symbols) {
  require_rank(symbols.shape(), 4, "subband_rate_bits symbols");
  const std::size_t b = symbols.dim(0), h = symbols.dim(2), w = symbols.dim(3);
  if (symbols.dim(1) != 1 || f.weights.shape() != Shape{b, kMixtures, h, w} || f.means.shape() != f.weights.shape() ||
      f.scales.shape() != f.weights.shape()) {
    fail(ErrorKind::kShape, "subband_rate_bits: params " + shape_str(f.weights.shape()) + " vs symbols " +
                                shape_str(symbols.shape()));
  }
  const std::size_t hw = h * w;
  Tensor<T> pos(Shape{b, 1, h, w});
  Tensor<T> total(Shape{b});
  // d bits / d (w_k, mu_k, sigma_k, s) per position, kept for backward.
  auto dcache = std::make_shared<std::vector<double>>(b * hw * (3 * kMixtures + 1));
  const double inv_ln2 = 1.0 / std::numbers::ln2;
  for (std::size_t n = 0; n < b; ++n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) {
      const double s = static_cast<double>(symbols.value()[n * hw + j]);
      double mass = 0.0;
      std::array<double, kMixtures> mk{}, dmu{}, dsig{};
      double ds = 0.0;
      std::array<double, kMixtures> wk{};
      for (std::size_t k = 0; k < kMixtures; ++k) {
        const std::size_t idx = (n * kMixtures + k) * hw + j;
        wk[k] = f.weights.value()[idx];
        const double mu = f.means.value()[idx];
        const double sg = f.scales.value()[idx];
        const double a = ((s + 0.5) - mu) / sg;
        const double bb = ((s - 0.5) - mu) / sg;
        mk[k] = component_mass(s, mu, sg);
        const double pa = normal_pdf(a), pb = normal_pdf(bb);
        dmu[k] = wk[k] * (pb - pa) / sg;
        dsig[k] = wk[k] * (bb * pb - a * pa) / sg;
        ds += wk[k] * (pa - pb) / sg;
        mass += wk[k] * mk[k];
      }
      const double floored = std::max(mass, kMassFloor);
      const double bits = -std::log2(floored);
      pos[n * hw + j] = static_cast<T>(bits);
      acc += bits;
      double* d = dcache->data() + (n * hw + j) * (3 * kMixtures + 1);
      if (mass >= kMassFloor) {
        const double dm = -inv_ln2 / floored;
        for (std::size_t k = 0; k < kMixtures; ++k) {
          d[k] = dm * mk[k];
          d[kMixtures + k] = dm * dmu[k];
          d[2 * kMixtures + k] = dm * dsig[k];
        }
        d[3 * kMixtures] = dm * ds;
      } else {
        // Floored: follow -log2 of the mixture density at s, which keeps a
        // useful gradient where the interval masses underflow.
        std::array<double, kMixtures> lp{}, z{};
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < kMixtures; ++k) {
          const std::size_t idx = (n * kMixtures + k) * hw + j;
          const double sg = f.scales.value()[idx];
          z[k] = (s - static_cast<double>(f.means.value()[idx])) / sg;
          lp[k] = std::log(wk[k]) - std::log(sg) - 0.5 * z[k] * z[k];
          top = std::max(top, lp[k]);
        }
        double zsum = 0.0;
        for (std::size_t k = 0; k < kMixtures; ++k) zsum += std::exp(lp[k] - top);
        d[3 * kMixtures] = 0.0;
        for (std::size_t k = 0; k < kMixtures; ++k) {
          const std::size_t idx = (n * kMixtures + k) * hw + j;
          const double sg = f.scales.value()[idx];
          const double resp = std::exp(lp[k] - top) / zsum;
          d[k] = -inv_ln2 * resp / wk[k];
          d[kMixtures + k] = -inv_ln2 * resp * z[k] / sg;
          d[2 * kMixtures + k] = -inv_ln2 * resp * (z[k] * z[k] - 1.0) / sg;
          d[3 * kMixtures] += inv_ln2 * resp * z[k] / sg;
        }
      }
    }
    total[n] = static_cast<T>(acc);
  }
  RateResult<T> r;
  r.position_bits = pos;
  r.bits = make_result<T>(std::move(total), {f.weights, f.means, f.scales, symbols},
                          [f, symbols, dcache, b, hw](const Tensor<T>& g, const Tensor<T>&) {
                            const Var<T>* params[3] = {&f.weights, &f.means, &f.scales};
                            for (std::size_t q = 0; q < 3; ++q) {
                              if (!params[q]->requires_grad()) continue;
                              Tensor<T>& gb = params[q]->grad_buffer();
                              for (std::size_t n = 0; n < b; ++n) {
                                for (std::size_t k = 0; k < kMixtures; ++k) {
                                  for (std::size_t j = 0; j < hw; ++j) {
                                    const double d = (*dcache)[(n * hw + j) * (3 * kMixtures + 1) + q * kMixtures + k];
                                    gb[(n * kMixtures + k) * hw + j] += static_cast<T>(g[n] * d);
                                  }
                                }
                              }
                            }
                            if (symbols.requires_grad()) {
                              Tensor<T>& gs = symbols.grad_buffer();
                              for (std::size_t n = 0; n < b; ++n) {
                                for (std::size_t j = 0; j < hw; ++j) {
                                  gs[n * hw + j] +=
                                      static_cast<T>(g[n] * (*dcache)[(n * hw + j) * (3 * kMixtures + 1) + 3 * kMixtures]);
                                }
                              }
                            }
                          });
  return r;
}

struct SymbolAlphabet {
  int lo = 0;
  int hi = 0;

  std::size_t size() const { return static_cast<std::size_t>(hi - lo + 1); }
  bool contains(int s) const { return s >= lo && s <= hi; }
};

/// Cumulative table c[0..N] with c[0] = 0 and c[N] = 65536. Every symbol gets
/// 1 + floor(share * (65536 - N)); the leftover units go to the largest
/// fractional parts, lowest symbol first on ties.
inline std::vector<std::uint32_t> integer_cdf_from_masses(std::span<const double> masses) {
  const std::size_t n = masses.size();
  if (n == 0) fail(ErrorKind::kUsage, "integer_cdf: empty alphabet");
  if (n > kMaxAlphabet) {
    fail(ErrorKind::kUsage, "integer_cdf: alphabet of " + std::to_string(n) + " symbols exceeds 32768");
  }
  double z = 0.0;
  for (double m : masses) z += m;
  if (!(z > 0.0) || !std::isfinite(z)) fail(ErrorKind::kNumeric, "integer_cdf: masses do not sum to a positive value");
  const double free = static_cast<double>(kCdfTotal - n);
  std::vector<std::uint32_t> span(n);
  std::vector<double> frac(n);
  std::int64_t used = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const double scaled = masses[s] / z * free;
    const double fl = std::floor(scaled);
    span[s] = 1 + static_cast<std::uint32_t>(fl);
    frac[s] = scaled - fl;
    used += span[s];
  }
  std::int64_t rem = static_cast<std::int64_t>(kCdfTotal) - used;
  if (rem > 0) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto k = static_cast<std::size_t>(rem);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return frac[a] > frac[b] || (frac[a] == frac[b] && a < b); });
    for (std::size_t q = 0; q < k; ++q) ++span[idx[q]];
  }
  while (rem < 0) {
    // Rounding overshoot: take from the largest span.
    const auto it = std::max_element(span.begin(), span.end());
    --*it;
    ++rem;
  }
  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::size_t s = 0; s < n; ++s) cdf[s + 1] = cdf[s] + span[s];
  return cdf;
}

inline std::vector<std::uint32_t> integer_cdf(const GmmAt& p, SymbolAlphabet alphabet) {
  if (alphabet.lo > alphabet.hi) fail(ErrorKind::kUsage, "integer_cdf: alphabet lo > hi");
  if (alphabet.size() > kMaxAlphabet) {
    fail(ErrorKind::kUsage, "integer_cdf: alphabet of " + std::to_string(alphabet.size()) + " symbols exceeds 32768");
  }
  std::vector<double> masses(alphabet.size());
  for (int s = alphabet.lo; s <= alphabet.hi; ++s) masses[static_cast<std::size_t>(s - alphabet.lo)] = coding_mass(p, s);
  return integer_cdf_from_masses(masses);
}

/// Bits charged by the coder for one symbol given its table span.
inline double span_bits(std::uint32_t span) { return -std::log2(static_cast<double>(span) / kCdfTotal); }

}  // namespace wavecc
