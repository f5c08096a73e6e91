#pragma once

// Bitstream v1: fixed little-endian header followed by one range-coded
// payload covering Y, Cb and Cr.

#include <array>
#include <cstring>
#include <vector>

#include "wavecc/gmm.hpp"
#include "wavecc/params.hpp"

namespace wavecc {

inline constexpr char kBitstreamMagic[4] = {'W', 'C', 'C', 'M'};
inline constexpr std::uint16_t kBitstreamVersion = 1;
inline constexpr int kBitstreamLevels = 4;
inline constexpr std::size_t kBitstreamSubbands = 3 * kBitstreamLevels + 1;
inline constexpr std::uint16_t kFlagCrossComponentAblated = 1u << 0;

struct BitstreamHeader {
  std::uint16_t version = kBitstreamVersion;
  std::uint16_t flags = 0;
  std::uint32_t orig_width = 0;
  std::uint32_t orig_height = 0;
  std::uint32_t padded_width = 0;
  std::uint32_t padded_height = 0;
  std::uint8_t levels = kBitstreamLevels;
  std::uint8_t mixtures = kMixtures;
  float delta = 0.0f;
  std::uint64_t weights_digest = 0;
  std::array<std::array<SymbolAlphabet, kBitstreamSubbands>, 3> bounds{};
  std::uint64_t payload_length = 0;

  friend bool operator==(const BitstreamHeader& a, const BitstreamHeader& b) {
    if (std::memcmp(&a.delta, &b.delta, sizeof(float)) != 0) return false;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < kBitstreamSubbands; ++i) {
        if (a.bounds[c][i].lo != b.bounds[c][i].lo || a.bounds[c][i].hi != b.bounds[c][i].hi) return false;
      }
    }
    return a.version == b.version && a.flags == b.flags && a.orig_width == b.orig_width &&
           a.orig_height == b.orig_height && a.padded_width == b.padded_width &&
           a.padded_height == b.padded_height && a.levels == b.levels && a.mixtures == b.mixtures &&
           a.weights_digest == b.weights_digest && a.payload_length == b.payload_length;
  }
};

inline constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 * 4 + 1 + 1 + 4 + 8 + 3 * kBitstreamSubbands * 4 + 8;

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> payload;
};

inline std::size_t padded_extent(std::size_t n) {
  const std::size_t unit = std::size_t{1} << kBitstreamLevels;
  return (n + unit - 1) / unit * unit;
}

inline void validate_header(const BitstreamHeader& h) {
  auto bad = [](const std::string& why) { fail(ErrorKind::kFormat, "header parse error: " + why); };
  if (h.version != kBitstreamVersion) bad("unsupported version " + std::to_string(h.version));
  if (h.levels != kBitstreamLevels) bad("v1 requires D = 4, got " + std::to_string(h.levels));
  if (h.mixtures != kMixtures) bad("v1 requires K = 3, got " + std::to_string(h.mixtures));
  if ((h.flags & ~kFlagCrossComponentAblated) != 0) bad("unknown flags");
  if (h.orig_width == 0 || h.orig_height == 0) bad("empty image");
  if (h.padded_width != padded_extent(h.orig_width) || h.padded_height != padded_extent(h.orig_height)) {
    bad("padded dims inconsistent with original dims");
  }
  if (!(h.delta > 0.0f) || !std::isfinite(h.delta)) bad("delta must be positive");
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < kBitstreamSubbands; ++i) {
      const SymbolAlphabet& a = h.bounds[c][i];
      if (a.lo > a.hi) {
        bad("alphabet lo > hi for component " + std::to_string(c) + " subband " + std::to_string(i + 1));
      }
      if (a.size() > kMaxAlphabet) bad("alphabet too large for subband " + std::to_string(i + 1));
    }
  }
}

inline std::vector<std::uint8_t> write_bitstream(const Bitstream& bs) {
  BitstreamHeader h = bs.header;
  h.payload_length = bs.payload.size();
  validate_header(h);
  detail::ByteWriter w;
  w.bytes(kBitstreamMagic, 4);
  w.u16(h.version);
  w.u16(h.flags);
  w.u32(h.orig_width);
  w.u32(h.orig_height);
  w.u32(h.padded_width);
  w.u32(h.padded_height);
  w.u8(h.levels);
  w.u8(h.mixtures);
  w.f32(h.delta);
  w.u64(h.weights_digest);
  for (const auto& comp : h.bounds) {
    for (const auto& a : comp) {
      w.i16(static_cast<std::int16_t>(a.lo));
      w.i16(static_cast<std::int16_t>(a.hi));
    }
  }
  w.u64(h.payload_length);
  std::vector<std::uint8_t> out = std::move(w.buffer());
  out.insert(out.end(), bs.payload.begin(), bs.payload.end());
  return out;
}

inline Bitstream parse_bitstream(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes) {
    fail(ErrorKind::kFormat, "header parse error: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  detail::ByteReader r(bytes.data(), bytes.size(), "header parse error");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kBitstreamMagic, 4) != 0) fail(ErrorKind::kFormat, "header parse error: bad magic");
  Bitstream bs;
  BitstreamHeader& h = bs.header;
  h.version = r.u16();
  if (h.version != kBitstreamVersion) {
    fail(ErrorKind::kFormat, "header parse error: unsupported version " + std::to_string(h.version));
  }
  h.flags = r.u16();
  h.orig_width = r.u32();
  h.orig_height = r.u32();
  h.padded_width = r.u32();
  h.padded_height = r.u32();
  h.levels = r.u8();
  h.mixtures = r.u8();
  h.delta = r.f32();
  h.weights_digest = r.u64();
  for (auto& comp : h.bounds) {
    for (auto& a : comp) {
      a.lo = r.i16();
      a.hi = r.i16();
    }
  }
  h.payload_length = r.u64();
  validate_header(h);
  const std::size_t remaining = bytes.size() - kHeaderBytes;
  if (h.payload_length != remaining) {
    fail(ErrorKind::kFormat, "header parse error: payload length " + std::to_string(h.payload_length) +
                                 " but " + std::to_string(remaining) + " bytes follow");
  }
  bs.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes), bytes.end());
  return bs;
}

}  // namespace wavecc
