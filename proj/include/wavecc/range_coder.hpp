#pragma once

// Byte-oriented range coder (64-bit low with carry cache, 32-bit range,
// 16-bit frequency totals). The stream ends with a CRC32 of the coded
// symbol indices so corrupted or truncated payloads fail loudly.

#include <zlib.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wavecc/error.hpp"

namespace wavecc {

namespace rc {
inline constexpr std::uint32_t kTopValue = 1u << 24;
inline constexpr int kTotalBits = 16;
// Bytes the decoder reads beyond the emitted stream. The encoder flush picks
// a final value whose low bytes are zero and leaves them out.
inline constexpr int kImplicitTail = 3;
}  // namespace rc

class RangeEncoder {
 public:
  /// Codes the interval [start, start + size) of a 2^16 total.
  void encode(std::uint32_t start, std::uint32_t size) {
    if (size == 0 || start + size > (1u << rc::kTotalBits)) {
      fail(ErrorKind::kUsage, "range_encode: invalid interval [" + std::to_string(start) + ", +" +
                                  std::to_string(size) + ")");
    }
    const std::uint32_t r = range_ >> rc::kTotalBits;
    low_ += static_cast<std::uint64_t>(r) * start;
    range_ = r * size;
    while (range_ < rc::kTopValue) {
      range_ <<= 8;
      shift_low();
    }
  }

  /// Codes symbol `index` of a cumulative table c[0..N].
  void encode_symbol(std::span<const std::uint32_t> cdf, std::size_t index) {
    if (index + 1 >= cdf.size()) {
      fail(ErrorKind::kUsage, "range_encode: symbol index " + std::to_string(index) + " outside alphabet of " +
                                  std::to_string(cdf.size() - 1));
    }
    encode(cdf[index], cdf[index + 1] - cdf[index]);
    const auto v = static_cast<std::uint16_t>(index);
    const std::uint8_t le[2] = {static_cast<std::uint8_t>(v & 0xFF), static_cast<std::uint8_t>(v >> 8)};
    crc_ = crc32(crc_, le, 2);
    ++count_;
  }

  /// Appends the checksum and flushes. The encoder cannot be reused.
  std::vector<std::uint8_t> finish() {
    encode(static_cast<std::uint32_t>(crc_ & 0xFFFF), 1);
    encode(static_cast<std::uint32_t>(crc_ >> 16), 1);
    // Round low up to a multiple of 2^24 inside [low, low + range); range is
    // at least 2^24 so this always fits.
    low_ = (low_ + (rc::kTopValue - 1)) & ~static_cast<std::uint64_t>(rc::kTopValue - 1);
    for (int i = 0; i < 5 - rc::kImplicitTail; ++i) shift_low();
    return std::move(out_);
  }

  std::size_t symbols() const { return count_; }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t temp = cache_;
      do {
        if (started_) out_.push_back(static_cast<std::uint8_t>(temp + carry));
        started_ = true;
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool started_ = false;  // the very first cache byte is always 0 and is omitted
  std::vector<std::uint8_t> out_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
  std::size_t count_ = 0;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes) : in_(bytes) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  std::size_t decode_symbol(std::span<const std::uint32_t> cdf) {
    const std::size_t n = cdf.size() - 1;
    const std::uint32_t v = decode_value();
    // Largest s with cdf[s] <= v.
    std::size_t lo = 0, hi = n;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (cdf[mid] <= v) lo = mid; else hi = mid;
    }
    consume(cdf[lo], cdf[lo + 1] - cdf[lo]);
    const auto idx = static_cast<std::uint16_t>(lo);
    const std::uint8_t le[2] = {static_cast<std::uint8_t>(idx & 0xFF), static_cast<std::uint8_t>(idx >> 8)};
    crc_ = crc32(crc_, le, 2);
    return lo;
  }

  /// Verifies the trailing checksum and that the stream was consumed exactly.
  void finish() {
    const std::uint32_t lo16 = decode_value();
    consume(lo16, 1);
    const std::uint32_t hi16 = decode_value();
    consume(hi16, 1);
    const std::uint32_t stored = lo16 | (hi16 << 16);
    if (stored != static_cast<std::uint32_t>(crc_)) fail(ErrorKind::kFormat, "range_decode: payload checksum mismatch");
    // The encoder flush rounds low up to the next multiple of 2^24, so the
    // leftover code is fully determined. Any other value means damaged bytes.
    if (code_ != ((0u - low_) & (rc::kTopValue - 1))) fail(ErrorKind::kFormat, "range_decode: non-canonical stream tail");
    const std::size_t expected = in_.size() + rc::kImplicitTail;
    if (pos_ != expected) {
      fail(ErrorKind::kFormat, "range_decode: stream length mismatch (" + std::to_string(in_.size()) +
                                   " bytes, consumed " + std::to_string(pos_ - rc::kImplicitTail) + ")");
    }
  }

 private:
  std::uint32_t decode_value() {
    r_ = range_ >> rc::kTotalBits;
    const std::uint32_t v = code_ / r_;
    if (v >= (1u << rc::kTotalBits)) fail(ErrorKind::kFormat, "range_decode: range violation (corrupted stream)");
    return v;
  }

  void consume(std::uint32_t start, std::uint32_t size) {
    code_ -= start * r_;
    low_ += start * r_;
    range_ = r_ * size;
    while (range_ < rc::kTopValue) {
      code_ = (code_ << 8) | next_byte();
      low_ <<= 8;
      range_ <<= 8;
    }
  }

  std::uint32_t next_byte() {
    const std::size_t p = pos_++;
    if (p < in_.size()) return in_[p];
    if (p < in_.size() + rc::kImplicitTail) return 0;
    fail(ErrorKind::kFormat, "range_decode: truncated payload");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t low_ = 0;  // encoder's low modulo 2^32
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 0;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

}  // namespace wavecc
