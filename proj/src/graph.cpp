#include "clcs/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "clcs/kernels.hpp"

namespace clcs::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::softmax_channel: return "softmax_channel";
    case OpKind::log: return "log";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::upsample_nearest_2x: return "upsample_nearest_2x";
    case OpKind::concat_channel: return "concat_channel";
    case OpKind::cosine_channel: return "cosine_channel";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& what) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + what);
}

void expect_arity(OpKind kind, std::size_t got, std::size_t lo, std::size_t hi) {
  if (got < lo || got > hi) {
    shape_error(kind, "expected " + std::to_string(lo) +
                          (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                          std::to_string(got));
  }
}

// Layout of a channel-axis op: `outer` blocks of `channels` x `inner`.
struct ChannelLayout {
  std::size_t outer = 1;
  std::size_t channels = 1;
  std::size_t inner = 1;
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() <= 1) return {1, shape_numel(s), 1};
  ChannelLayout l;
  l.outer = s[0];
  l.channels = s[1];
  l.inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

kernels::ConvGeometry conv_geometry(OpKind kind, const Shape& x, const Shape& w,
                                    const OpAttrs& attrs) {
  if (x.size() != 4) shape_error(kind, "input must be rank 4 [N,C,H,W], got " + shape_string(x));
  if (w.size() != 4) shape_error(kind, "weight must be rank 4 [Co,Ci,k,k], got " + shape_string(w));
  if (w[1] != x[1]) {
    shape_error(kind, "input channels " + std::to_string(x[1]) + " != weight channels " +
                          std::to_string(w[1]));
  }
  if (w[2] != w[3]) shape_error(kind, "kernel must be square, got " + shape_string(w));
  if (attrs.stride == 0) shape_error(kind, "stride must be positive");
  kernels::ConvGeometry g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_channels = w[0];
  g.kernel = w[2];
  g.stride = attrs.stride;
  g.padding = attrs.padding;
  if (g.in_h + 2 * g.padding < g.kernel || g.in_w + 2 * g.padding < g.kernel) {
    shape_error(kind, "kernel " + std::to_string(g.kernel) + " larger than padded input " +
                          shape_string(x));
  }
  return g;
}

// Elementwise maps over raw pointers so the loops vectorize.
template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  const std::size_t n = x.values.size();
  std::vector<T> out(n);
  const T* src = x.values.data();
  T* dst = out.data();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return Tensor<T>(x.shape, std::move(out));
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  const std::size_t n = a.values.size();
  std::vector<T> out(n);
  const T* pa = a.values.data();
  const T* pb = b.values.data();
  T* dst = out.data();
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return Tensor<T>(a.shape, std::move(out));
}

template <typename T>
bool finite(const std::vector<T>& v) {
  // x - x is NaN exactly for infinities and NaNs; the sum keeps the loop
  // branch-free.
  const T* p = v.data();
  const std::size_t n = v.size();
  T acc = T(0);
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += p[i] - p[i];
  return acc == T(0);
}

}  // namespace

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range("graph: node " + std::to_string(id.index) + " not recorded");
  }
  return nodes_[id.index];
}

template <typename T>
NodeId Graph<T>::leaf(Tensor<T> t) {
  if (!finite(t.values)) throw std::domain_error("leaf: non-finite value");
  t.grad.reset();
  nodes_.push_back(Node{OpKind::leaf, {}, {}, std::move(t)});
  has_backward_ = false;
  return NodeId{nodes_.size() - 1};
}

template <typename T>
NodeId Graph<T>::forward(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs) {
  if (kind == OpKind::leaf) shape_error(kind, "use leaf() to record inputs");
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  bool track = false;
  for (NodeId in : inputs) {
    track = track || node(in).value.requires_grad;
    ids.push_back(in.index);
  }
  MemoKey key{kind, ids, attrs.stride, attrs.padding, attrs.slope, attrs.floor};
  if (auto it = memo_.find(key); it != memo_.end()) return NodeId{it->second};
  Tensor<T> out = evaluate(kind, ids, attrs);
  if (!finite(out.values)) {
    throw std::domain_error(std::string(op_name(kind)) + ": non-finite output");
  }
  out.requires_grad = track;
  nodes_.push_back(Node{kind, std::move(ids), attrs, std::move(out)});
  memo_.emplace(std::move(key), nodes_.size() - 1);
  has_backward_ = false;
  return NodeId{nodes_.size() - 1};
}

template <typename T>
Tensor<T> Graph<T>::evaluate(OpKind kind, const std::vector<std::size_t>& in,
                             const OpAttrs& attrs) const {
  auto val = [&](std::size_t i) -> const Tensor<T>& { return nodes_[in[i]].value; };

  switch (kind) {
    case OpKind::leaf:
      break;

    case OpKind::add:
    case OpKind::mul: {
      expect_arity(kind, in.size(), 2, 2);
      const auto& a = val(0);
      const auto& b = val(1);
      const bool mul = kind == OpKind::mul;
      if (a.shape == b.shape) {
        if (mul) return map_binary(a, b, [](T u, T v) { return u * v; });
        return map_binary(a, b, [](T u, T v) { return u + v; });
      }
      if (a.numel() == 1 || b.numel() == 1) {
        const auto& big = a.numel() == 1 ? b : a;
        const T s = a.numel() == 1 ? a.values[0] : b.values[0];
        if (mul) return map_unary(big, [s](T u) { return u * s; });
        return map_unary(big, [s](T u) { return u + s; });
      }
      shape_error(kind, "shapes " + shape_string(a.shape) + " and " + shape_string(b.shape) +
                            " differ and neither is a scalar");
    }

    case OpKind::matmul: {
      expect_arity(kind, in.size(), 2, 2);
      const auto& a = val(0);
      const auto& b = val(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_error(kind, "cannot multiply " + shape_string(a.shape) + " by " +
                              shape_string(b.shape));
      }
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      auto out = Tensor<T>::zeros({m, n});
      kernels::gemm_nn(m, n, k, a.values.data(), b.values.data(), out.values.data());
      return out;
    }

    case OpKind::conv2d: {
      expect_arity(kind, in.size(), 2, 3);
      const auto& x = val(0);
      const auto& w = val(1);
      const auto g = conv_geometry(kind, x.shape, w.shape, attrs);
      std::span<const T> bias;
      if (in.size() == 3) {
        const auto& b = val(2);
        if (b.numel() != g.out_channels) {
          shape_error(kind, "bias " + shape_string(b.shape) + " does not match " +
                                std::to_string(g.out_channels) + " output channels");
        }
        bias = b.values;
      }
      auto out = Tensor<T>::zeros({g.batch, g.out_channels, g.out_h(), g.out_w()});
      kernels::conv2d_forward<T>(g, x.values, w.values, bias, out.values);
      return out;
    }

    case OpKind::relu:
    case OpKind::leaky_relu: {
      expect_arity(kind, in.size(), 1, 1);
      const auto& x = val(0);
      const T slope = kind == OpKind::relu ? T(0) : static_cast<T>(attrs.slope);
      return map_unary(x, [slope](T v) { return v > T(0) ? v : slope * v; });
    }

    case OpKind::softmax_channel: {
      expect_arity(kind, in.size(), 1, 1);
      const auto& x = val(0);
      if (x.rank() == 0) shape_error(kind, "needs at least one axis");
      const auto l = channel_layout(x.shape);
      Tensor<T> out(x.shape, std::vector<T>(x.numel()));
      std::vector<T> mx(l.inner), total(l.inner);
      for (std::size_t o = 0; o < l.outer; ++o) {
        const T* src = x.values.data() + o * l.channels * l.inner;
        T* dst = out.values.data() + o * l.channels * l.inner;
        std::copy(src, src + l.inner, mx.begin());
        for (std::size_t c = 1; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i) mx[i] = std::max(mx[i], src[c * l.inner + i]);
        std::fill(total.begin(), total.end(), T(0));
        for (std::size_t c = 0; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i) {
            const T e = std::exp(src[c * l.inner + i] - mx[i]);
            dst[c * l.inner + i] = e;
            total[i] += e;
          }
        for (std::size_t c = 0; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i) dst[c * l.inner + i] /= total[i];
      }
      return out;
    }

    case OpKind::log: {
      expect_arity(kind, in.size(), 1, 1);
      const auto& x = val(0);
      return map_unary(x, [](T v) { return std::log(v); });
    }

    case OpKind::clamp_min: {
      expect_arity(kind, in.size(), 1, 1);
      const auto& x = val(0);
      const T lo = static_cast<T>(attrs.floor);
      return map_unary(x, [lo](T v) { return std::max(v, lo); });
    }

    case OpKind::mean:
    case OpKind::sum: {
      expect_arity(kind, in.size(), 1, 1);
      const auto& x = val(0);
      if (x.numel() == 0) shape_error(kind, "empty input");
      double acc = 0.0;
      for (T v : x.values) acc += static_cast<double>(v);
      if (kind == OpKind::mean) acc /= static_cast<double>(x.numel());
      return Tensor<T>::scalar(static_cast<T>(acc));
    }

    case OpKind::upsample_nearest_2x: {
      expect_arity(kind, in.size(), 1, 1);
      const auto& x = val(0);
      if (x.rank() != 4) shape_error(kind, "input must be rank 4, got " + shape_string(x.shape));
      const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
      auto out = Tensor<T>::zeros({x.dim(0), x.dim(1), 2 * h, 2 * w});
      for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.values.data() + p * h * w;
        T* dst = out.values.data() + p * 4 * h * w;
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
      }
      return out;
    }

    case OpKind::concat_channel: {
      expect_arity(kind, in.size(), 2, 2);
      const auto& a = val(0);
      const auto& b = val(1);
      if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0) ||
          !std::equal(a.shape.begin() + 2, a.shape.end(), b.shape.begin() + 2)) {
        shape_error(kind, "cannot concatenate " + shape_string(a.shape) + " and " +
                              shape_string(b.shape) + " along axis 1");
      }
      const auto la = channel_layout(a.shape), lb = channel_layout(b.shape);
      Shape s = a.shape;
      s[1] = la.channels + lb.channels;
      Tensor<T> out(s, std::vector<T>(a.numel() + b.numel()));
      auto dst = out.values.begin();
      for (std::size_t o = 0; o < la.outer; ++o) {
        dst = std::copy_n(a.values.begin() + o * la.channels * la.inner, la.channels * la.inner, dst);
        dst = std::copy_n(b.values.begin() + o * lb.channels * lb.inner, lb.channels * lb.inner, dst);
      }
      return out;
    }

    case OpKind::cosine_channel: {
      expect_arity(kind, in.size(), 2, 2);
      const auto& a = val(0);
      const auto& b = val(1);
      if (a.shape != b.shape || a.rank() < 2) {
        shape_error(kind, "shapes " + shape_string(a.shape) + " and " + shape_string(b.shape) +
                              " must match with rank >= 2");
      }
      const auto l = channel_layout(a.shape);
      Shape s = a.shape;
      s.erase(s.begin() + 1);
      Tensor<T> out(s, std::vector<T>(l.outer * l.inner, T(0)));
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.inner; ++i) {
          T dot = 0, na = 0, nb = 0;
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t j = (o * l.channels + c) * l.inner + i;
            dot += a.values[j] * b.values[j];
            na += a.values[j] * a.values[j];
            nb += b.values[j] * b.values[j];
          }
          // Zero-norm vectors have cosine 0 by convention.
          if (na > T(0) && nb > T(0)) out.values[o * l.inner + i] = dot / std::sqrt(na * nb);
        }
      return out;
    }
  }
  shape_error(kind, "unsupported op");
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(std::size_t index) {
  auto& v = nodes_[index].value;
  if (!v.grad) v.grad.emplace(v.numel(), T(0));
  return *v.grad;
}

template <typename T>
std::span<const T> Graph<T>::grad(NodeId id) const {
  const auto& v = node(id).value;
  if (!has_backward_ || !v.grad) {
    throw std::logic_error("graph: no gradient for node " + std::to_string(id.index));
  }
  return *v.grad;
}

template <typename T>
void Graph<T>::backward(NodeId loss) {
  if (nodes_.empty()) throw std::logic_error("backward: graph is empty, run forward first");
  const auto& root = node(loss).value;
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_string(root.shape));
  }
  for (auto& n : nodes_) n.value.grad.reset();
  has_backward_ = true;
  if (!root.requires_grad) return;
  grad_buffer(loss.index)[0] = T(1);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.kind == OpKind::leaf || !n.value.requires_grad || !n.value.grad) continue;
    propagate(n);
  }
  for (const auto& n : nodes_) {
    if (n.value.grad && !finite(*n.value.grad)) {
      throw std::domain_error(std::string("backward: non-finite gradient at ") +
                              std::string(op_name(n.kind)));
    }
  }
}

template <typename T>
void Graph<T>::propagate(const Node& n) {
  const std::vector<T>& g = *n.value.grad;
  auto needs = [&](std::size_t i) { return nodes_[n.inputs[i]].value.requires_grad; };
  auto val = [&](std::size_t i) -> const Tensor<T>& { return nodes_[n.inputs[i]].value; };

  switch (n.kind) {
    case OpKind::leaf:
      return;

    case OpKind::add:
    case OpKind::mul: {
      const bool mul = n.kind == OpKind::mul;
      for (std::size_t side = 0; side < 2; ++side) {
        if (!needs(side)) continue;
        const auto& self = val(side);
        const auto& other = val(1 - side);
        T* dst = grad_buffer(n.inputs[side]).data();
        const T* gp = g.data();
        const std::size_t count = g.size();
        if (self.numel() == count) {
          if (!mul) {
#pragma omp simd
            for (std::size_t i = 0; i < count; ++i) dst[i] += gp[i];
          } else if (other.numel() == count) {
            const T* op = other.values.data();
#pragma omp simd
            for (std::size_t i = 0; i < count; ++i) dst[i] += gp[i] * op[i];
          } else {
            const T s = other.values[0];
#pragma omp simd
            for (std::size_t i = 0; i < count; ++i) dst[i] += gp[i] * s;
          }
        } else {
          // Scalar operand broadcast over the other: reduce.
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i)
            acc += mul ? static_cast<double>(g[i]) * other.values[i] : static_cast<double>(g[i]);
          dst[0] += static_cast<T>(acc);
        }
      }
      return;
    }

    case OpKind::matmul: {
      const auto& a = val(0);
      const auto& b = val(1);
      const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
      if (needs(0)) kernels::gemm_nt(m, k, nn, g.data(), b.values.data(), grad_buffer(n.inputs[0]).data());
      if (needs(1)) kernels::gemm_tn(k, nn, m, a.values.data(), g.data(), grad_buffer(n.inputs[1]).data());
      return;
    }

    case OpKind::conv2d: {
      const auto& x = val(0);
      const auto& w = val(1);
      const auto geo = conv_geometry(n.kind, x.shape, w.shape, n.attrs);
      std::span<T> gx, gw, gb;
      if (needs(0)) gx = grad_buffer(n.inputs[0]);
      if (needs(1)) gw = grad_buffer(n.inputs[1]);
      if (n.inputs.size() == 3 && needs(2)) gb = grad_buffer(n.inputs[2]);
      kernels::conv2d_backward<T>(geo, x.values, w.values, g, gx, gw, gb);
      return;
    }

    case OpKind::relu:
    case OpKind::leaky_relu: {
      if (!needs(0)) return;
      const auto& x = val(0);
      const T slope = n.kind == OpKind::relu ? T(0) : static_cast<T>(n.attrs.slope);
      T* dst = grad_buffer(n.inputs[0]).data();
      const T* gp = g.data();
      const T* xp = x.values.data();
      const std::size_t count = g.size();
#pragma omp simd
      for (std::size_t i = 0; i < count; ++i) dst[i] += xp[i] > T(0) ? gp[i] : slope * gp[i];
      return;
    }

    case OpKind::softmax_channel: {
      if (!needs(0)) return;
      const auto& s = n.value;
      const auto l = channel_layout(s.shape);
      auto& dst = grad_buffer(n.inputs[0]);
      std::vector<T> dot(l.inner);
      for (std::size_t o = 0; o < l.outer; ++o) {
        const std::size_t base = o * l.channels * l.inner;
        std::fill(dot.begin(), dot.end(), T(0));
        for (std::size_t c = 0; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i)
            dot[i] += g[base + c * l.inner + i] * s.values[base + c * l.inner + i];
        for (std::size_t c = 0; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t j = base + c * l.inner + i;
            dst[j] += s.values[j] * (g[j] - dot[i]);
          }
      }
      return;
    }

    case OpKind::log: {
      if (!needs(0)) return;
      const auto& x = val(0);
      T* dst = grad_buffer(n.inputs[0]).data();
      const T* gp = g.data();
      const T* xp = x.values.data();
      const std::size_t count = g.size();
#pragma omp simd
      for (std::size_t i = 0; i < count; ++i) dst[i] += gp[i] / xp[i];
      return;
    }

    case OpKind::clamp_min: {
      if (!needs(0)) return;
      const auto& x = val(0);
      const T lo = static_cast<T>(n.attrs.floor);
      T* dst = grad_buffer(n.inputs[0]).data();
      const T* gp = g.data();
      const T* xp = x.values.data();
      const std::size_t count = g.size();
      // Subgradient 0 at and below the floor.
#pragma omp simd
      for (std::size_t i = 0; i < count; ++i) dst[i] += xp[i] > lo ? gp[i] : T(0);
      return;
    }

    case OpKind::mean:
    case OpKind::sum: {
      if (!needs(0)) return;
      auto& dst = grad_buffer(n.inputs[0]);
      const T d = n.kind == OpKind::mean ? g[0] / static_cast<T>(dst.size()) : g[0];
      for (auto& v : dst) v += d;
      return;
    }

    case OpKind::upsample_nearest_2x: {
      if (!needs(0)) return;
      const auto& x = val(0);
      const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
      auto& dst = grad_buffer(n.inputs[0]);
      for (std::size_t p = 0; p < planes; ++p) {
        const T* src = g.data() + p * 4 * h * w;
        T* out = dst.data() + p * h * w;
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx) out[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
      }
      return;
    }

    case OpKind::concat_channel: {
      const auto la = channel_layout(val(0).shape), lb = channel_layout(val(1).shape);
      const std::size_t sa = la.channels * la.inner, sb = lb.channels * lb.inner;
      for (std::size_t o = 0; o < la.outer; ++o) {
        const T* src = g.data() + o * (sa + sb);
        if (needs(0)) {
          T* dst = grad_buffer(n.inputs[0]).data() + o * sa;
          for (std::size_t i = 0; i < sa; ++i) dst[i] += src[i];
        }
        if (needs(1)) {
          T* dst = grad_buffer(n.inputs[1]).data() + o * sb;
          for (std::size_t i = 0; i < sb; ++i) dst[i] += src[sa + i];
        }
      }
      return;
    }

    case OpKind::cosine_channel: {
      const auto& a = val(0);
      const auto& b = val(1);
      const auto l = channel_layout(a.shape);
      T* ga = needs(0) ? grad_buffer(n.inputs[0]).data() : nullptr;
      T* gb = needs(1) ? grad_buffer(n.inputs[1]).data() : nullptr;
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.inner; ++i) {
          T dot = 0, na = 0, nb = 0;
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t j = (o * l.channels + c) * l.inner + i;
            dot += a.values[j] * b.values[j];
            na += a.values[j] * a.values[j];
            nb += b.values[j] * b.values[j];
          }
          if (!(na > T(0) && nb > T(0))) continue;
          const T inv = T(1) / std::sqrt(na * nb);
          const T cosv = dot * inv;
          const T go = g[o * l.inner + i];
          for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t j = (o * l.channels + c) * l.inner + i;
            if (ga) ga[j] += go * (b.values[j] * inv - cosv * a.values[j] / na);
            if (gb) gb[j] += go * (a.values[j] * inv - cosv * b.values[j] / nb);
          }
        }
      return;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace clcs::ad
