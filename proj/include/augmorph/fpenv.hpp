#pragma once

#if defined(__SSE__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace augmorph {

/// Flushes subnormal results and inputs to zero on the calling thread.
/// Trained nets drive many gradients into the subnormal range, where x86
/// arithmetic is two orders of magnitude slower. The per-thread mode is
/// fixed, so results stay reproducible.
inline void flush_denormals() {
#if defined(__SSE__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

}  // namespace augmorph
