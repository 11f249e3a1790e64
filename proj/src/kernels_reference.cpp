#include "clcs/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace clcs::kernels::reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

namespace {

// Maps an output position and kernel tap to an input coordinate; returns
// false when the tap falls in the zero padding.
bool tap(const ConvGeometry& g, std::size_t out, std::size_t k, std::size_t extent,
         std::size_t& in) {
  const auto pos = static_cast<std::int64_t>(out * g.stride + k) -
                   static_cast<std::int64_t>(g.padding);
  if (pos < 0 || pos >= static_cast<std::int64_t>(extent)) return false;
  in = static_cast<std::size_t>(pos);
  return true;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const auto oh = g.out_h(), ow = g.out_w(), ks = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = bias.empty() ? T(0) : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                std::size_t iy = 0, ix = 0;
                if (!tap(g, y, ky, g.in_h, iy) || !tap(g, x, kx, g.in_w, ix)) continue;
                acc += weight[((co * g.in_channels + ci) * ks + ky) * ks + kx] *
                       input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
          output[((n * g.out_channels + co) * oh + y) * ow + x] = acc;
        }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const auto oh = g.out_h(), ow = g.out_w(), ks = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const T go = grad_output[((n * g.out_channels + co) * oh + y) * ow + x];
          if (!grad_bias.empty()) grad_bias[co] += go;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < ks; ++ky)
              for (std::size_t kx = 0; kx < ks; ++kx) {
                std::size_t iy = 0, ix = 0;
                if (!tap(g, y, ky, g.in_h, iy) || !tap(g, x, kx, g.in_w, ix)) continue;
                const auto wi = ((co * g.in_channels + ci) * ks + ky) * ks + kx;
                const auto xi = ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                if (!grad_weight.empty()) grad_weight[wi] += go * input[xi];
                if (!grad_input.empty()) grad_input[xi] += go * weight[wi];
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

}  // namespace clcs::kernels::reference
