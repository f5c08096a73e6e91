#pragma once

// Reference implementations shared by the unit and acceptance tests. They
// are written directly from textbook definitions and deliberately avoid the
// library's own helpers.

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace oracle {

inline constexpr double kAlpha = -1.586134342059924;
inline constexpr double kBeta = -0.052980118572961;
inline constexpr double kGamma = 0.882911075530934;
inline constexpr double kDelta = 0.443506852043971;

/// In-place CDF 9/7 lifting without scaling on an even-length signal with
/// whole-sample symmetric extension. Returns {lowpass, highpass}.
inline std::pair<std::vector<double>, std::vector<double>> cdf97_1d(std::vector<double> x) {
  const std::size_t n = x.size();
  auto right = [&](std::size_t i) { return i + 1 < n ? x[i + 1] : x[i - 1]; };
  auto left = [&](std::size_t i) { return i > 0 ? x[i - 1] : x[i + 1]; };
  for (std::size_t i = 1; i < n; i += 2) x[i] += kAlpha * (x[i - 1] + right(i));
  for (std::size_t i = 0; i < n; i += 2) x[i] += kBeta * (left(i) + x[i + 1]);
  for (std::size_t i = 1; i < n; i += 2) x[i] += kGamma * (x[i - 1] + right(i));
  for (std::size_t i = 0; i < n; i += 2) x[i] += kDelta * (left(i) + x[i + 1]);
  std::vector<double> lo, hi;
  for (std::size_t i = 0; i < n; i += 2) {
    lo.push_back(x[i]);
    hi.push_back(x[i + 1]);
  }
  return {lo, hi};
}

/// One 2D level on a row-major h x w image: rows first, then columns.
/// Returns LL, HL, LH, HH, each (h/2) x (w/2) row-major. HL is highpass
/// along rows and lowpass along columns.
inline std::vector<std::vector<double>> cdf97_2d(const std::vector<double>& img, std::size_t h, std::size_t w) {
  const std::size_t hh = h / 2, hw = w / 2;
  std::vector<double> row_lo(h * hw), row_hi(h * hw);
  for (std::size_t y = 0; y < h; ++y) {
    std::vector<double> row(img.begin() + static_cast<std::ptrdiff_t>(y * w),
                            img.begin() + static_cast<std::ptrdiff_t>((y + 1) * w));
    auto [lo, hi] = cdf97_1d(row);
    for (std::size_t x = 0; x < hw; ++x) {
      row_lo[y * hw + x] = lo[x];
      row_hi[y * hw + x] = hi[x];
    }
  }
  std::vector<std::vector<double>> bands(4, std::vector<double>(hh * hw));
  for (int half = 0; half < 2; ++half) {
    const std::vector<double>& src = half == 0 ? row_lo : row_hi;
    for (std::size_t x = 0; x < hw; ++x) {
      std::vector<double> col(h);
      for (std::size_t y = 0; y < h; ++y) col[y] = src[y * hw + x];
      auto [lo, hi] = cdf97_1d(col);
      for (std::size_t y = 0; y < hh; ++y) {
        // half 0: LL (col lo), LH (col hi); half 1: HL (col lo), HH (col hi)
        bands[half == 0 ? 0 : 1][y * hw + x] = lo[y];
        bands[half == 0 ? 2 : 3][y * hw + x] = hi[y];
      }
    }
  }
  return bands;
}

/// Standard normal CDF.
inline double phi(double x) { return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace oracle
