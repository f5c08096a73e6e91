#pragma once

// PSNR, Bjontegaard delta rate, RD curve CSV and bit-share reports.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "wavecc/codec.hpp"

namespace wavecc {

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// PSNR over all three 8-bit channels with peak 255. Identical images give
/// +infinity.
inline double psnr(const RgbImage& ref, const RgbImage& test) {
  if (ref.width != test.width || ref.height != test.height) {
    fail(ErrorKind::kShape, "psnr: image dims differ (" + std::to_string(ref.width) + "x" +
                                std::to_string(ref.height) + " vs " + std::to_string(test.width) + "x" +
                                std::to_string(test.height) + ")");
  }
  double se = 0.0;
  std::size_t n = 0;
  const Plane* a[3] = {&ref.r, &ref.g, &ref.b};
  const Plane* b[3] = {&test.r, &test.g, &test.b};
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < a[c]->values.size(); ++i) {
      const double d = static_cast<double>(to_u8(a[c]->values[i])) - static_cast<double>(to_u8(b[c]->values[i]));
      se += d * d;
    }
    n += a[c]->values.size();
  }
  if (n == 0) fail(ErrorKind::kShape, "psnr: empty images");
  const double m = se / static_cast<double>(n);
  if (m == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

struct RdPoint {
  std::string codec;
  double lambda = 0.0;
  double bpp = 0.0;
  double psnr_db = 0.0;

  friend bool operator==(const RdPoint&, const RdPoint&) = default;
};

namespace detail {

// Least-squares cubic log10(rate) = p(psnr); coefficients low order first.
inline Eigen::Vector4d fit_cubic(const std::vector<RdPoint>& pts) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(pts.size()), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double q = pts[i].psnr_db;
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = 1.0;
    a(r, 1) = q;
    a(r, 2) = q * q;
    a(r, 3) = q * q * q;
    y(r) = std::log10(pts[i].bpp);
  }
  return a.colPivHouseholderQr().solve(y);
}

inline double integrate_cubic(const Eigen::Vector4d& c, double lo, double hi) {
  auto prim = [&](double x) { return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4; };
  return prim(hi) - prim(lo);
}

inline void check_curve(const std::vector<RdPoint>& pts, const char* which) {
  if (pts.size() < 4) {
    fail(ErrorKind::kUsage, std::string("bd_rate: ") + which + " curve needs at least 4 points, got " +
                                std::to_string(pts.size()));
  }
  for (const auto& p : pts) {
    if (!(p.bpp > 0.0) || !std::isfinite(p.psnr_db)) {
      fail(ErrorKind::kNumeric, std::string("bd_rate: ") + which + " curve has a non-positive rate or infinite PSNR");
    }
  }
}

}  // namespace detail

/// Average rate difference of `test` against `anchor` in percent over the
/// overlapping PSNR interval (negative: test needs fewer bits).
inline double bd_rate(std::vector<RdPoint> anchor, std::vector<RdPoint> test) {
  detail::check_curve(anchor, "anchor");
  detail::check_curve(test, "test");
  auto by_psnr = [](const RdPoint& a, const RdPoint& b) { return a.psnr_db < b.psnr_db; };
  std::sort(anchor.begin(), anchor.end(), by_psnr);
  std::sort(test.begin(), test.end(), by_psnr);
  const double lo = std::max(anchor.front().psnr_db, test.front().psnr_db);
  const double hi = std::min(anchor.back().psnr_db, test.back().psnr_db);
  if (!(hi > lo)) fail(ErrorKind::kUsage, "bd_rate: PSNR ranges do not overlap");
  const Eigen::Vector4d pa = detail::fit_cubic(anchor);
  const Eigen::Vector4d pt = detail::fit_cubic(test);
  const double avg = (detail::integrate_cubic(pt, lo, hi) - detail::integrate_cubic(pa, lo, hi)) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

inline std::string format_rd_csv(const std::vector<RdPoint>& points) {
  std::string out = "codec,lambda,bpp,psnr_db\n";
  char buf[256];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g\n", p.codec.c_str(), p.lambda, p.bpp, p.psnr_db);
    out += buf;
  }
  return out;
}

inline void export_rd(const std::vector<RdPoint>& points, const std::filesystem::path& path) {
  const std::string text = format_rd_csv(points);
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::vector<RdPoint> parse_rd_csv(const std::string& text, const std::string& source = "rd csv") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kFormat, source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "codec,lambda,bpp,psnr_db") fail(ErrorKind::kFormat, source + ": unexpected header '" + line + "'");
  std::vector<RdPoint> pts;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) fail(ErrorKind::kFormat, source + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      pts.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
    } catch (const std::logic_error&) {
      fail(ErrorKind::kFormat, source + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return pts;
}

inline std::vector<RdPoint> load_rd_csv(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_rd_csv(std::string(bytes.begin(), bytes.end()), path.string());
}

struct ComponentShare {
  std::array<double, 3> component{};  // Y, Cb, Cr fractions
  std::vector<std::array<double, 3>> subband;  // per subband index, per component
  double total_bits = 0.0;

  double chroma() const { return component[1] + component[2]; }
};

/// Fractions of the estimated bits per component and per subband. All-zero
/// rates yield all-zero fractions.
inline ComponentShare component_rate_report(const CodingTrace& trace) {
  ComponentShare s;
  int n = 0;
  for (const auto& r : trace.subbands) n = std::max(n, r.index);
  s.subband.assign(static_cast<std::size_t>(n), {0.0, 0.0, 0.0});
  for (const auto& r : trace.subbands) s.total_bits += r.table_bits;
  if (s.total_bits <= 0.0) return s;
  for (const auto& r : trace.subbands) {
    const double f = r.table_bits / s.total_bits;
    s.component[static_cast<std::size_t>(r.component)] += f;
    s.subband[static_cast<std::size_t>(r.index - 1)][static_cast<std::size_t>(r.component)] += f;
  }
  return s;
}

inline double bits_per_pixel(std::size_t payload_bytes, std::size_t width, std::size_t height) {
  return 8.0 * static_cast<double>(payload_bytes) / static_cast<double>(width * height);
}

struct EvalOptions {
  std::size_t jobs = 1;
  bool ablate_cross_component = false;
};

struct EvalSummary {
  std::size_t images = 0;
  double mean_bpp = 0.0;
  double mean_psnr_db = 0.0;  // lossless images count as 100 dB
};

/// Encodes and decodes every PNG/PPM in `dir` (sorted by name) and averages
/// bpp and PSNR. Images are spread over `jobs` threads.
inline EvalSummary evaluate_directory(const Model<float>& m, const std::filesystem::path& dir,
                                      const EvalOptions& opt = {}) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".PNG" || ext == ".PPM")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::kIo, "eval: no images in " + dir.string());
  std::vector<double> bpps(files.size()), psnrs(files.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::optional<Error> first_error;
  auto worker = [&]() {
    for (std::size_t k = next++; k < files.size(); k = next++) {
      try {
        const RgbImage img = load_image(files[k]);
        const EncodeResult enc = encode_image(m, img, {opt.ablate_cross_component});
        const DecodeResult dec = decode_image(m, enc.bytes);
        bpps[k] = bits_per_pixel(enc.bitstream.payload.size(), img.width, img.height);
        psnrs[k] = psnr(img, dec.image);
      } catch (const Error& e) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = Error(e.kind(), files[k].string() + ": " + e.message());
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < opt.jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) throw *first_error;
  EvalSummary s;
  s.images = files.size();
  for (std::size_t k = 0; k < files.size(); ++k) {
    s.mean_bpp += bpps[k];
    s.mean_psnr_db += std::isfinite(psnrs[k]) ? psnrs[k] : 100.0;
  }
  s.mean_bpp /= static_cast<double>(files.size());
  s.mean_psnr_db /= static_cast<double>(files.size());
  return s;
}

}  // namespace wavecc
