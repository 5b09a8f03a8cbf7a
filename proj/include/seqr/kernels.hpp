#pragma once

// Raw numeric kernels shared by the autodiff tape and the inference paths.
// All loops have a fixed iteration order, so results are reproducible run to
// run. Reductions carry an `omp simd` pragma: it licenses vectorization
// without -ffast-math while keeping one fixed summation order per build.

#include <cmath>
#include <cstdint>
#include <vector>

#include "seqr/tensor.hpp"

namespace seqr::kernels {

template <class S>
inline S dot(const S* a, const S* b, int n) {
  S acc = S(0);
#pragma omp simd reduction(+ : acc)
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class S>
inline void axpy(S* dst, const S* src, S scale, int n) {
  for (int i = 0; i < n; ++i) dst[i] += scale * src[i];
}

// ---------------------------------------------------------------------------
// conv2d, stride 1, symmetric zero padding. x:[B,Ci,H,W] w:[Co,Ci,k,k] b:[Co]
// y:[B,Co,Ho,Wo] with Ho = H + 2*pad - k + 1.

struct ConvDims {
  int B, Ci, H, W, Co, k, pad, Ho, Wo;
};

template <class S>
inline void conv2d_forward(const S* x, const S* w, const S* bias, S* y, const ConvDims& d) {
  const std::int64_t xPlane = static_cast<std::int64_t>(d.H) * d.W;
  const std::int64_t yPlane = static_cast<std::int64_t>(d.Ho) * d.Wo;
  for (int b = 0; b < d.B; ++b) {
    for (int co = 0; co < d.Co; ++co) {
      S* out = y + (static_cast<std::int64_t>(b) * d.Co + co) * yPlane;
      const S bv = bias ? bias[co] : S(0);
      for (std::int64_t i = 0; i < yPlane; ++i) out[i] = bv;
      for (int ci = 0; ci < d.Ci; ++ci) {
        const S* in = x + (static_cast<std::int64_t>(b) * d.Ci + ci) * xPlane;
        for (int ky = 0; ky < d.k; ++ky) {
          const int oyLo = std::max(0, d.pad - ky);
          const int oyHi = std::min(d.Ho - 1, d.H - 1 - ky + d.pad);
          for (int kx = 0; kx < d.k; ++kx) {
            const S wv = w[((static_cast<std::int64_t>(co) * d.Ci + ci) * d.k + ky) * d.k + kx];
            const int oxLo = std::max(0, d.pad - kx);
            const int oxHi = std::min(d.Wo - 1, d.W - 1 - kx + d.pad);
            const int len = oxHi - oxLo + 1;
            if (len <= 0) continue;
            for (int oy = oyLo; oy <= oyHi; ++oy) {
              const S* src = in + static_cast<std::int64_t>(oy + ky - d.pad) * d.W + (oxLo + kx - d.pad);
              axpy(out + static_cast<std::int64_t>(oy) * d.Wo + oxLo, src, wv, len);
            }
          }
        }
      }
    }
  }
}

/// dx += full correlation of dy with the flipped kernels.
template <class S>
inline void conv2d_backward_input(const S* dy, const S* w, S* dx, const ConvDims& d) {
  const std::int64_t xPlane = static_cast<std::int64_t>(d.H) * d.W;
  const std::int64_t yPlane = static_cast<std::int64_t>(d.Ho) * d.Wo;
  for (int b = 0; b < d.B; ++b) {
    for (int co = 0; co < d.Co; ++co) {
      const S* g = dy + (static_cast<std::int64_t>(b) * d.Co + co) * yPlane;
      for (int ci = 0; ci < d.Ci; ++ci) {
        S* dst = dx + (static_cast<std::int64_t>(b) * d.Ci + ci) * xPlane;
        for (int ky = 0; ky < d.k; ++ky) {
          const int oyLo = std::max(0, d.pad - ky);
          const int oyHi = std::min(d.Ho - 1, d.H - 1 - ky + d.pad);
          for (int kx = 0; kx < d.k; ++kx) {
            const S wv = w[((static_cast<std::int64_t>(co) * d.Ci + ci) * d.k + ky) * d.k + kx];
            const int oxLo = std::max(0, d.pad - kx);
            const int oxHi = std::min(d.Wo - 1, d.W - 1 - kx + d.pad);
            const int len = oxHi - oxLo + 1;
            if (len <= 0) continue;
            for (int oy = oyLo; oy <= oyHi; ++oy) {
              S* drow = dst + static_cast<std::int64_t>(oy + ky - d.pad) * d.W + (oxLo + kx - d.pad);
              axpy(drow, g + static_cast<std::int64_t>(oy) * d.Wo + oxLo, wv, len);
            }
          }
        }
      }
    }
  }
}

/// dw += x (*) dy and db += sum(dy).
template <class S>
inline void conv2d_backward_params(const S* x, const S* dy, S* dw, S* db, const ConvDims& d) {
  const std::int64_t xPlane = static_cast<std::int64_t>(d.H) * d.W;
  const std::int64_t yPlane = static_cast<std::int64_t>(d.Ho) * d.Wo;
  for (int b = 0; b < d.B; ++b) {
    for (int co = 0; co < d.Co; ++co) {
      const S* g = dy + (static_cast<std::int64_t>(b) * d.Co + co) * yPlane;
      if (db) {
        S acc = S(0);
#pragma omp simd reduction(+ : acc)
        for (std::int64_t i = 0; i < yPlane; ++i) acc += g[i];
        db[co] += acc;
      }
      if (!dw) continue;
      for (int ci = 0; ci < d.Ci; ++ci) {
        const S* in = x + (static_cast<std::int64_t>(b) * d.Ci + ci) * xPlane;
        for (int ky = 0; ky < d.k; ++ky) {
          const int oyLo = std::max(0, d.pad - ky);
          const int oyHi = std::min(d.Ho - 1, d.H - 1 - ky + d.pad);
          for (int kx = 0; kx < d.k; ++kx) {
            const int oxLo = std::max(0, d.pad - kx);
            const int oxHi = std::min(d.Wo - 1, d.W - 1 - kx + d.pad);
            const int len = oxHi - oxLo + 1;
            if (len <= 0) continue;
            S acc = S(0);
            for (int oy = oyLo; oy <= oyHi; ++oy) {
              acc += dot(in + static_cast<std::int64_t>(oy + ky - d.pad) * d.W + (oxLo + kx - d.pad),
                         g + static_cast<std::int64_t>(oy) * d.Wo + oxLo, len);
            }
            dw[((static_cast<std::int64_t>(co) * d.Ci + ci) * d.k + ky) * d.k + kx] += acc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// maxpool, stride 1. Ties go to the first element in row-major window order,
// which pins the gradient routing bit-exactly.

template <class S>
inline void maxpool_forward(const S* x, int B, int C, int H, int W, int k, S* y,
                            std::int32_t* argmax) {
  const int Ho = H - k + 1, Wo = W - k + 1;
  const std::int64_t xPlane = static_cast<std::int64_t>(H) * W;
  const std::int64_t yPlane = static_cast<std::int64_t>(Ho) * Wo;
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
    const S* in = x + p * xPlane;
    S* out = y + p * yPlane;
    std::int32_t* am = argmax + p * yPlane;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        S best = in[static_cast<std::int64_t>(oy) * W + ox];
        std::int32_t bestAt = static_cast<std::int32_t>(oy * W + ox);
        for (int ky = 0; ky < k; ++ky) {
          const S* row = in + static_cast<std::int64_t>(oy + ky) * W + ox;
          for (int kx = 0; kx < k; ++kx) {
            if (row[kx] > best) {
              best = row[kx];
              bestAt = static_cast<std::int32_t>((oy + ky) * W + ox + kx);
            }
          }
        }
        out[static_cast<std::int64_t>(oy) * Wo + ox] = best;
        am[static_cast<std::int64_t>(oy) * Wo + ox] = bestAt;
      }
    }
  }
}

template <class S>
inline void maxpool_backward(const std::int32_t* argmax, const S* dy, int B, int C, int H, int W,
                             int k, S* dx) {
  const int Ho = H - k + 1, Wo = W - k + 1;
  const std::int64_t xPlane = static_cast<std::int64_t>(H) * W;
  const std::int64_t yPlane = static_cast<std::int64_t>(Ho) * Wo;
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(B) * C; ++p) {
    const std::int32_t* am = argmax + p * yPlane;
    const S* g = dy + p * yPlane;
    S* dst = dx + p * xPlane;
    for (std::int64_t i = 0; i < yPlane; ++i) dst[am[i]] += g[i];
  }
}

// ---------------------------------------------------------------------------
// affine: x:[B,n] w:[m,n] b:[m] -> y:[B,m], y = x w^T + b.

template <class S>
inline void affine_forward(const S* x, int B, int n, const S* w, int m, const S* b, S* y) {
  for (int i = 0; i < m; ++i) {
    const S* wrow = w + static_cast<std::int64_t>(i) * n;
    const S bv = b ? b[i] : S(0);
    for (int bi = 0; bi < B; ++bi)
      y[static_cast<std::int64_t>(bi) * m + i] = bv + dot(x + static_cast<std::int64_t>(bi) * n, wrow, n);
  }
}

/// dx += dy w
template <class S>
inline void affine_backward_input(const S* dy, int B, int m, const S* w, int n, S* dx) {
  for (int i = 0; i < m; ++i) {
    const S* wrow = w + static_cast<std::int64_t>(i) * n;
    for (int bi = 0; bi < B; ++bi) {
      const S g = dy[static_cast<std::int64_t>(bi) * m + i];
      if (g != S(0)) axpy(dx + static_cast<std::int64_t>(bi) * n, wrow, g, n);
    }
  }
}

/// dw (+)= dy^T x. With accumulate=false the rows are written, not added,
/// so the destination may be uninitialized.
template <class S>
inline void affine_backward_weight(const S* dy, int B, int m, const S* x, int n, S* dw,
                                   bool accumulate) {
  for (int i = 0; i < m; ++i) {
    S* drow = dw + static_cast<std::int64_t>(i) * n;
    if (!accumulate) {
      const S g0 = dy[i];
      const S* x0 = x;
      for (int j = 0; j < n; ++j) drow[j] = g0 * x0[j];
      for (int bi = 1; bi < B; ++bi)
        axpy(drow, x + static_cast<std::int64_t>(bi) * n, dy[static_cast<std::int64_t>(bi) * m + i], n);
    } else {
      for (int bi = 0; bi < B; ++bi)
        axpy(drow, x + static_cast<std::int64_t>(bi) * n, dy[static_cast<std::int64_t>(bi) * m + i], n);
    }
  }
}

template <class S>
inline void affine_backward_bias(const S* dy, int B, int m, S* db) {
  for (int bi = 0; bi < B; ++bi)
    for (int i = 0; i < m; ++i) db[i] += dy[static_cast<std::int64_t>(bi) * m + i];
}

}  // namespace seqr::kernels
