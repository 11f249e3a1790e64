#include "clcs/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdint>
#include <vector>

namespace clcs::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace {

// 64-byte vector width worth of lanes.
template <typename T>
constexpr std::size_t kLanes = 64 / sizeof(T);

constexpr std::size_t kRowBlock = 4;

// Register tile: MR rows of c, NR contiguous columns, accumulated over k.
template <typename T, std::size_t MR, std::size_t NR>
inline void tile_nn(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
                    T* c, std::size_t ldc) {
  T acc[MR][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
#pragma GCC unroll 4
    for (std::size_t i = 0; i < MR; ++i) {
      const T av = a[i * lda + p];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (std::size_t i = 0; i < MR; ++i)
#pragma omp simd
    for (std::size_t j = 0; j < NR; ++j) c[i * ldc + j] += acc[i][j];
}

template <typename T>
void edge_nn(std::size_t rows, std::size_t cols, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      T* crow = c + i * ldc;
#pragma omp simd
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
}

template <typename T>
void gemm_nn_serial(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  constexpr std::size_t NR = 4 * kLanes<T>;
  std::size_t j0 = 0;
  for (; j0 + NR <= n; j0 += NR) {
    std::size_t i0 = 0;
    for (; i0 + kRowBlock <= m; i0 += kRowBlock)
      tile_nn<T, kRowBlock, NR>(k, a + i0 * lda, lda, b + j0, ldb, c + i0 * ldc + j0, ldc);
    for (; i0 < m; ++i0) tile_nn<T, 1, NR>(k, a + i0 * lda, lda, b + j0, ldb, c + i0 * ldc + j0, ldc);
  }
  if (j0 < n) edge_nn(m, n - j0, k, a, lda, b + j0, ldb, c + j0, ldc);
}

// c[i,j] += dot(a_i, b_j) for MR x NR pairs of row vectors of length k.
template <typename T, std::size_t MR, std::size_t NR>
inline void tile_nt(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                    std::size_t ldc) {
  constexpr std::size_t L = kLanes<T>;
  T acc[MR][NR][L] = {};
  std::size_t p = 0;
  for (; p + L <= k; p += L) {
    for (std::size_t i = 0; i < MR; ++i)
      for (std::size_t j = 0; j < NR; ++j)
#pragma omp simd
        for (std::size_t l = 0; l < L; ++l) acc[i][j][l] += a[i * lda + p + l] * b[j * ldb + p + l];
  }
  for (std::size_t i = 0; i < MR; ++i)
    for (std::size_t j = 0; j < NR; ++j) {
      T s = 0;
      for (std::size_t l = 0; l < L; ++l) s += acc[i][j][l];
      for (std::size_t q = p; q < k; ++q) s += a[i * lda + q] * b[j * ldb + q];
      c[i * ldc + j] += s;
    }
}

template <typename T>
void gemm_nt_serial(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  std::size_t i0 = 0;
  for (; i0 + kRowBlock <= m; i0 += kRowBlock) {
    std::size_t j0 = 0;
    for (; j0 + kRowBlock <= n; j0 += kRowBlock)
      tile_nt<T, kRowBlock, kRowBlock>(k, a + i0 * lda, lda, b + j0 * ldb, ldb, c + i0 * ldc + j0, ldc);
    for (; j0 < n; ++j0)
      tile_nt<T, kRowBlock, 1>(k, a + i0 * lda, lda, b + j0 * ldb, ldb, c + i0 * ldc + j0, ldc);
  }
  for (; i0 < m; ++i0)
    for (std::size_t j0 = 0; j0 < n; ++j0)
      tile_nt<T, 1, 1>(k, a + i0 * lda, lda, b + j0 * ldb, ldb, c + i0 * ldc + j0, ldc);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) dst[q * rows + r] = src[r * cols + q];
}

// Work threshold (multiply-adds) below which spawning threads is not worth it.
constexpr std::size_t kParallelWork = std::size_t{1} << 18;

template <typename T, typename Serial>
void gemm_rows_parallel(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row,
                        const T* b, T* c, Serial serial) {
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  const bool parallel = !omp_in_parallel() && m * n * k >= kParallelWork && blocks > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    serial(rows, n, k, a + i0 * a_row, b, c + i0 * n);
  }
}

// Output columns [lo, hi) whose tap lands inside an input row of `extent`.
struct TapRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

TapRange valid_taps(std::size_t out, std::size_t stride, std::size_t k, std::size_t pad,
                    std::size_t extent) {
  // Tap x maps to x * stride + k - pad, which must lie in [0, extent).
  TapRange r;
  r.lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::int64_t last = static_cast<std::int64_t>(extent) - 1 + static_cast<std::int64_t>(pad) -
                            static_cast<std::int64_t>(k);
  r.hi = last < 0 ? 0 : std::min(out, static_cast<std::size_t>(last) / stride + 1);
  if (r.hi < r.lo) r.hi = r.lo;
  return r;
}

// Column buffer for output rows [y0, y1): patch rows of (y1 - y0) * ow.
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col, std::size_t y0, std::size_t y1) {
  const auto ow = g.out_w(), ks = g.kernel, s = g.stride;
  const std::size_t width = (y1 - y0) * ow;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci)
    for (std::size_t ky = 0; ky < ks; ++ky) {
      const TapRange all = valid_taps(g.out_h(), s, ky, g.padding, g.in_h);
      const std::size_t lo = std::clamp(all.lo, y0, y1), hi = std::clamp(all.hi, y0, y1);
      for (std::size_t kx = 0; kx < ks; ++kx) {
        const TapRange cols = valid_taps(ow, s, kx, g.padding, g.in_w);
        T* row = col + ((ci * ks + ky) * ks + kx) * width;
        const T* plane = in + ci * g.in_h * g.in_w;
        std::fill(row, row + (lo - y0) * ow, T(0));
        std::fill(row + (hi - y0) * ow, row + width, T(0));
        for (std::size_t y = lo; y < hi; ++y) {
          T* out = row + (y - y0) * ow;
          const T* src = plane + (y * s + ky - g.padding) * g.in_w;
          std::fill(out, out + cols.lo, T(0));
          std::fill(out + cols.hi, out + ow, T(0));
          if (s == 1) {
            const T* first = src + (cols.lo + kx - g.padding);
            std::copy(first, first + (cols.hi - cols.lo), out + cols.lo);
          } else {
            for (std::size_t x = cols.lo; x < cols.hi; ++x) out[x] = src[x * s + kx - g.padding];
          }
        }
      }
    }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in, std::size_t y0, std::size_t y1) {
  const auto ow = g.out_w(), ks = g.kernel, s = g.stride;
  const std::size_t width = (y1 - y0) * ow;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci)
    for (std::size_t ky = 0; ky < ks; ++ky) {
      const TapRange all = valid_taps(g.out_h(), s, ky, g.padding, g.in_h);
      const std::size_t lo = std::clamp(all.lo, y0, y1), hi = std::clamp(all.hi, y0, y1);
      for (std::size_t kx = 0; kx < ks; ++kx) {
        const TapRange cols = valid_taps(ow, s, kx, g.padding, g.in_w);
        const T* row = col + ((ci * ks + ky) * ks + kx) * width;
        T* plane = in + ci * g.in_h * g.in_w;
        for (std::size_t y = lo; y < hi; ++y) {
          const T* src = row + (y - y0) * ow;
          T* dst = plane + (y * s + ky - g.padding) * g.in_w;
          if (s == 1) {
            T* first = dst + (cols.lo + kx - g.padding);
            const std::size_t len = cols.hi - cols.lo;
#pragma omp simd
            for (std::size_t x = 0; x < len; ++x) first[x] += src[cols.lo + x];
          } else {
            for (std::size_t x = cols.lo; x < cols.hi; ++x) dst[x * s + kx - g.padding] += src[x];
          }
        }
      }
    }
}

// Output rows per column chunk, sized so a chunk stays cache resident.
template <typename T>
std::size_t chunk_rows(const ConvGeometry& g) {
  // Small layers run as one GEMM; only very large patch matrices are tiled by rows.
  constexpr std::size_t kWholeBytes = 1024 * 1024;
  constexpr std::size_t kChunkBytes = 1024 * 1024;
  constexpr std::size_t kTile = 4 * kLanes<T>;
  const std::size_t ow = std::max<std::size_t>(g.out_w(), 1);
  const std::size_t per_row = std::max<std::size_t>(g.patch() * ow * sizeof(T), 1);
  if (per_row * g.out_h() <= kWholeBytes) return g.out_h();
  const std::size_t step = ow >= kTile ? 1 : (kTile + ow - 1) / ow;
  std::size_t rows = kChunkBytes / per_row;
  rows = std::max(step, rows - rows % step);
  return std::min(rows, g.out_h());
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

bool sample_parallel(const ConvGeometry& g) {
  return !omp_in_parallel() && g.batch > 1 &&
         g.output_size() * g.patch() >= kParallelWork;
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_rows_parallel(m, n, k, a, k, b, c, [](std::size_t r, std::size_t nn, std::size_t kk,
                                             const T* aa, const T* bb, T* cc) {
    gemm_nn_serial(r, nn, kk, aa, kk, bb, nn, cc, nn);
  });
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_rows_parallel(m, n, k, a, k, b, c, [](std::size_t r, std::size_t nn, std::size_t kk,
                                             const T* aa, const T* bb, T* cc) {
    gemm_nt_serial(r, nn, kk, aa, kk, bb, kk, cc, nn);
  });
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  std::vector<T> at(m * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, n, k, at.data(), b, c);
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const std::size_t ow = g.out_w(), oh = g.out_h(), pix = oh * ow;
  const std::size_t patch = g.patch();
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_channels * pix;
  const bool pointwise = is_pointwise(g);
  const std::size_t rows = chunk_rows<T>(g);

#pragma omp parallel if (sample_parallel(g))
  {
    std::vector<T> col(pointwise ? 0 : patch * rows * ow);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* in = input.data() + n * in_stride;
      T* out = output.data() + n * out_stride;
      for (std::size_t co = 0; co < g.out_channels; ++co)
        std::fill(out + co * pix, out + (co + 1) * pix, bias.empty() ? T(0) : bias[co]);
      if (pointwise) {
        gemm_nn_serial(g.out_channels, pix, patch, weight.data(), patch, in, pix, out, pix);
        continue;
      }
      for (std::size_t y0 = 0; y0 < oh; y0 += rows) {
        const std::size_t y1 = std::min(oh, y0 + rows), width = (y1 - y0) * ow;
        im2col(g, in, col.data(), y0, y1);
        gemm_nn_serial(g.out_channels, width, patch, weight.data(), patch, col.data(), width,
                       out + y0 * ow, pix);
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const std::size_t ow = g.out_w(), oh = g.out_h(), pix = oh * ow;
  const std::size_t patch = g.patch();
  const std::size_t co = g.out_channels;
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = co * pix;
  const bool pointwise = is_pointwise(g);
  const bool want_w = !grad_weight.empty();
  const bool want_x = !grad_input.empty();
  const std::size_t rows = chunk_rows<T>(g);

  if (!grad_bias.empty()) {
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t c = 0; c < co; ++c) {
        const T* go = grad_output.data() + n * out_stride + c * pix;
        T s = 0;
        for (std::size_t p = 0; p < pix; ++p) s += go[p];
        grad_bias[c] += s;
      }
  }
  if (!want_w && !want_x) return;

  // Per-sample weight gradients, summed in sample order afterwards so the
  // result does not depend on the thread count.
  std::vector<T> partial_w(want_w ? g.batch * g.weight_size() : 0, T(0));
  std::vector<T> weight_t(want_x ? g.weight_size() : 0);
  if (want_x) transpose(co, patch, weight.data(), weight_t.data());

#pragma omp parallel if (sample_parallel(g))
  {
    std::vector<T> col(want_w && !pointwise ? patch * rows * ow : 0);
    std::vector<T> dcol(want_x && !pointwise ? patch * rows * ow : 0);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* in = input.data() + n * in_stride;
      const T* go = grad_output.data() + n * out_stride;
      T* pw = want_w ? partial_w.data() + n * g.weight_size() : nullptr;
      T* gi = want_x ? grad_input.data() + n * in_stride : nullptr;
      if (pointwise) {
        if (want_w) gemm_nt_serial(co, patch, pix, go, pix, in, pix, pw, patch);
        if (want_x) gemm_nn_serial(patch, pix, co, weight_t.data(), co, go, pix, gi, pix);
        continue;
      }
      for (std::size_t y0 = 0; y0 < oh; y0 += rows) {
        const std::size_t y1 = std::min(oh, y0 + rows), width = (y1 - y0) * ow;
        const T* go_chunk = go + y0 * ow;
        if (want_w) {
          im2col(g, in, col.data(), y0, y1);
          gemm_nt_serial(co, patch, width, go_chunk, pix, col.data(), width, pw, patch);
        }
        if (want_x) {
          std::fill(dcol.begin(), dcol.begin() + patch * width, T(0));
          gemm_nn_serial(patch, width, co, weight_t.data(), co, go_chunk, pix, dcol.data(), width);
          col2im(g, dcol.data(), gi, y0, y1);
        }
      }
    }
  }

  if (want_w) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* src = partial_w.data() + n * g.weight_size();
      for (std::size_t i = 0; i < g.weight_size(); ++i) grad_weight[i] += src[i];
    }
  }
}

#define CLCS_INSTANTIATE(T)                                                                     \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);    \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);    \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);    \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                           \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>,                    \
                                   std::span<const T>, std::span<const T>, std::span<T>,       \
                                   std::span<T>, std::span<T>);

CLCS_INSTANTIATE(float)
CLCS_INSTANTIATE(double)
#undef CLCS_INSTANTIATE

}  // namespace clcs::kernels
