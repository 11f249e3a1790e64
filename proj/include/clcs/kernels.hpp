#pragma once

// Dense compute kernels behind the autodiff ops.
//
// Two implementations share each signature: `clcs::kernels` holds the
// blocked, OpenMP-parallel versions used in training, and
// `clcs::kernels::reference` holds plain serial loops that the tests treat as
// ground truth. Backward kernels accumulate into their gradient outputs.

#include <cstddef>
#include <span>

namespace clcs::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * patch(); }
};

/// c[m,n] += sum_k a[m,k] * b[k,n], all row-major and contiguous.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

/// c[m,n] += sum_k a[m,k] * b[n,k].
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

/// c[m,n] += sum_k a[k,m] * b[k,n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

/// Output is overwritten. `bias` may be empty.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

/// Any of the gradient spans may be empty to skip that gradient.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);

}  // namespace reference

/// Threads OpenMP will use for the parallel kernels.
int max_threads();

}  // namespace clcs::kernels
