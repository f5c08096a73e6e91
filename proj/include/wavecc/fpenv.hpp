#pragma once

// Pins the floating-point environment for the duration of a scope. Subnormal
// floats are flushed to zero: they carry no useful signal here and are very
// slow on x86. Encoder and decoder both run under this mode so their entropy
// parameters agree.

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace wavecc {

class FloatModeGuard {
 public:
  FloatModeGuard() {
#if defined(__SSE__)
    saved_ = _mm_getcsr();
    // FTZ (bit 15) and DAZ (bit 6), round to nearest.
    _mm_setcsr((saved_ | 0x8040u) & ~0x6000u);
#endif
  }
  ~FloatModeGuard() {
#if defined(__SSE__)
    _mm_setcsr(saved_);
#endif
  }
  FloatModeGuard(const FloatModeGuard&) = delete;
  FloatModeGuard& operator=(const FloatModeGuard&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace wavecc
