#include <cmath>
#include <vector>

#include "clcs/kernels.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clcs;
using kernels::ConvGeometry;

namespace {

template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(double(a[i]) - double(b[i])) /
                     std::max({1.0, std::abs(double(a[i])), std::abs(double(b[i]))});
    worst = std::max(worst, d);
  }
  return worst;
}

template <typename T>
constexpr double tolerance() {
  return sizeof(T) == 4 ? 1e-4 : 1e-12;
}

template <typename T>
void check_gemm(std::size_t m, std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed, {m, n, k});
  const auto a = test::random_vector<T>(m * k, rng);
  const auto b = test::random_vector<T>(k * n, rng);
  const auto bt = test::random_vector<T>(n * k, rng);
  const auto c0 = test::random_vector<T>(m * n, rng);
  auto c1 = c0, c2 = c0;
  kernels::gemm_nn<T>(m, n, k, a.data(), b.data(), c1.data());
  kernels::reference::gemm_nn<T>(m, n, k, a.data(), b.data(), c2.data());
  CHECK(max_rel_diff(c1, c2) < tolerance<T>());
  c1 = c0, c2 = c0;
  kernels::gemm_nt<T>(m, n, k, a.data(), bt.data(), c1.data());
  kernels::reference::gemm_nt<T>(m, n, k, a.data(), bt.data(), c2.data());
  CHECK(max_rel_diff(c1, c2) < tolerance<T>());
  const auto at = test::random_vector<T>(k * m, rng);
  c1 = c0, c2 = c0;
  kernels::gemm_tn<T>(m, n, k, at.data(), b.data(), c1.data());
  kernels::reference::gemm_tn<T>(m, n, k, at.data(), b.data(), c2.data());
  CHECK(max_rel_diff(c1, c2) < tolerance<T>());
}

template <typename T>
void check_conv(const ConvGeometry& g, bool with_bias, std::uint64_t seed) {
  Rng rng(seed, {g.in_channels, g.out_channels, g.kernel, g.stride});
  const auto x = test::random_vector<T>(g.input_size(), rng);
  const auto w = test::random_vector<T>(g.weight_size(), rng);
  const auto b = with_bias ? test::random_vector<T>(g.out_channels, rng) : std::vector<T>{};
  std::vector<T> y1(g.output_size()), y2(g.output_size());
  kernels::conv2d_forward<T>(g, x, w, b, y1);
  kernels::reference::conv2d_forward<T>(g, x, w, b, y2);
  CHECK(max_rel_diff(y1, y2) < tolerance<T>());

  const auto gy = test::random_vector<T>(g.output_size(), rng);
  std::vector<T> gx1(g.input_size(), T(0.5)), gx2 = gx1;
  std::vector<T> gw1(g.weight_size(), T(-0.25)), gw2 = gw1;
  std::vector<T> gb1(g.out_channels, T(1)), gb2 = gb1;
  kernels::conv2d_backward<T>(g, x, w, gy, gx1, gw1, gb1);
  kernels::reference::conv2d_backward<T>(g, x, w, gy, gx2, gw2, gb2);
  CHECK(max_rel_diff(gx1, gx2) < tolerance<T>());
  CHECK(max_rel_diff(gw1, gw2) < tolerance<T>());
  CHECK(max_rel_diff(gb1, gb2) < tolerance<T>());

  // Skipped gradients leave the other outputs unchanged.
  std::vector<T> gw3(g.weight_size(), T(-0.25));
  kernels::conv2d_backward<T>(g, x, w, gy, {}, gw3, {});
  CHECK(max_rel_diff(gw3, gw2) < tolerance<T>());
}

}  // namespace

TEST_CASE_TEMPLATE("gemm matches the serial reference", T, float, double) {
  const std::size_t dims[][3] = {{1, 1, 1},    {3, 5, 7},    {16, 64, 27}, {17, 130, 33},
                                 {64, 4096, 144}, {5, 3, 300}, {32, 257, 96}};
  for (const auto& d : dims) check_gemm<T>(d[0], d[1], d[2], 1);
}

TEST_CASE_TEMPLATE("conv2d matches the serial reference", T, float, double) {
  const ConvGeometry shapes[] = {
      {.batch = 2, .in_channels = 3, .in_h = 9, .in_w = 7, .out_channels = 5, .kernel = 3, .stride = 1, .padding = 1},
      {.batch = 3, .in_channels = 4, .in_h = 10, .in_w = 10, .out_channels = 6, .kernel = 3, .stride = 2, .padding = 1},
      {.batch = 2, .in_channels = 8, .in_h = 6, .in_w = 5, .out_channels = 4, .kernel = 1, .stride = 1, .padding = 0},
      {.batch = 1, .in_channels = 2, .in_h = 5, .in_w = 5, .out_channels = 3, .kernel = 5, .stride = 1, .padding = 0},
      // Large enough to take the row-chunked path.
      {.batch = 2, .in_channels = 16, .in_h = 64, .in_w = 64, .out_channels = 8, .kernel = 3, .stride = 1, .padding = 1},
      {.batch = 2, .in_channels = 32, .in_h = 48, .in_w = 40, .out_channels = 5, .kernel = 3, .stride = 1, .padding = 1},
  };
  std::uint64_t seed = 0;
  for (const auto& g : shapes) {
    check_conv<T>(g, true, ++seed);
    check_conv<T>(g, false, ++seed);
  }
}

TEST_CASE("thread count is positive") { CHECK(kernels::max_threads() >= 1); }
