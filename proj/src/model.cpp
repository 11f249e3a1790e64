#include "clcs/model.hpp"

#include <cmath>
#include <stdexcept>

#include "clcs/random.hpp"

namespace clcs {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// He-uniform for leaky-relu fan-in; biases start at zero.
template <typename T>
void add_conv(std::vector<Parameter<T>>& params, const std::string& name, std::size_t out,
              std::size_t in, std::size_t k, double slope, std::uint64_t seed) {
  Rng rng(seed, {fnv1a(name)});
  const double fan_in = static_cast<double>(in * k * k);
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
  auto w = Tensor<T>::zeros({out, in, k, k});
  for (auto& v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
  params.push_back({name + ".weight", std::move(w), {}});
  params.push_back({name + ".bias", Tensor<T>::zeros({out}), {}});
  params[params.size() - 2].zero_grad();
  params.back().zero_grad();
}

template <typename T>
Binding bind_all(ad::Graph<T>& g, const std::vector<Parameter<T>>& params) {
  Binding b;
  b.reserve(params.size());
  for (const auto& p : params) b.push_back(g.parameter(p.value));
  return b;
}

template <typename T>
void collect(const ad::Graph<T>& g, std::vector<Parameter<T>>& params, const Binding& b) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].grad.size() != params[i].value.numel()) params[i].zero_grad();
    if (!g.has_grad(b[i])) continue;  // not reached by the loss
    const auto grad = g.grad(b[i]);
    for (std::size_t j = 0; j < grad.size(); ++j) params[i].grad[j] += grad[j];
  }
}

}  // namespace

template <typename T>
BranchNet<T>::BranchNet(const ArchConfig& arch, std::uint64_t seed, const std::string& prefix)
    : arch_(arch) {
  const double s = arch.slope;
  add_conv(params_, prefix + ".enc1", arch.enc1, 3, 3, s, seed);
  add_conv(params_, prefix + ".enc2", arch.enc2, arch.enc1, 3, s, seed);
  add_conv(params_, prefix + ".enc3", arch.feature_dim, arch.enc2, 3, s, seed);
  add_conv(params_, prefix + ".dec1", arch.dec1, arch.feature_dim, 3, s, seed);
  add_conv(params_, prefix + ".dec2", arch.dec2, arch.dec1 + (arch.skip ? arch.enc1 : 0), 3, s, seed);
  add_conv(params_, prefix + ".head", arch.classes, arch.dec2, 1, 1.0, seed);
}

template <typename T>
Binding BranchNet<T>::bind(ad::Graph<T>& g) const {
  return bind_all(g, params_);
}

template <typename T>
typename BranchNet<T>::Nodes BranchNet<T>::forward(ad::Graph<T>& g, const Binding& b,
                                                   ad::NodeId image) const {
  const double s = arch_.slope;
  auto block = [&](ad::NodeId x, std::size_t layer, std::size_t stride) {
    return g.leaky_relu(g.conv2d(x, b[2 * layer], b[2 * layer + 1], stride, 1), s);
  };
  // Center the [0,1] pixels; plain SGD converges poorly on offset inputs.
  const ad::NodeId x = g.scale(g.add_scalar(image, T(-0.5)), T(4));
  const ad::NodeId e1 = block(x, 0, 1);
  const ad::NodeId features = block(block(e1, 1, 2), 2, 2);
  ad::NodeId h = g.upsample_nearest_2x(block(g.upsample_nearest_2x(features), 3, 1));
  if (arch_.skip) h = g.concat_channel(h, e1);
  h = block(h, 4, 1);
  const ad::NodeId logits = g.conv2d(h, b[10], b[11], 1, 0);
  return {features, logits};
}

template <typename T>
MappingLayer<T>::MappingLayer(const ArchConfig& arch, std::uint64_t seed,
                              const std::string& prefix)
    : arch_(arch) {
  add_conv(params_, prefix + ".map1", arch.feature_dim, arch.feature_dim, 1, arch.slope, seed);
  add_conv(params_, prefix + ".map2", arch.feature_dim, arch.feature_dim, 1, 1.0, seed);
}

template <typename T>
Binding MappingLayer<T>::bind(ad::Graph<T>& g) const {
  return bind_all(g, params_);
}

template <typename T>
ad::NodeId MappingLayer<T>::forward(ad::Graph<T>& g, const Binding& b,
                                    ad::NodeId features) const {
  const ad::NodeId h = g.leaky_relu(g.conv2d(features, b[0], b[1], 1, 0), arch_.slope);
  return g.conv2d(h, b[2], b[3], 1, 0);
}

template <typename T>
Predictions predictions(const Tensor<T>& logits) {
  std::size_t outer = 1, channels = 0, inner = 1;
  if (logits.rank() == 1) {
    channels = logits.dim(0);
  } else if (logits.rank() >= 2) {
    outer = logits.dim(0);
    channels = logits.dim(1);
    for (std::size_t i = 2; i < logits.rank(); ++i) inner *= logits.dim(i);
  }
  if (channels < 2) throw std::invalid_argument("predictions: need at least 2 classes");
  Predictions out;
  out.pred.resize(outer * inner);
  out.conf.resize(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const T* px = logits.values.data() + o * channels * inner + i;
      std::size_t best = 0;
      for (std::size_t c = 1; c < channels; ++c)
        if (px[c * inner] > px[best * inner]) best = c;
      double total = 0.0;
      const double top = static_cast<double>(px[best * inner]);
      for (std::size_t c = 0; c < channels; ++c) total += std::exp(static_cast<double>(px[c * inner]) - top);
      out.pred[o * inner + i] = static_cast<Label>(best);
      out.conf[o * inner + i] = 1.0 / total;
    }
  return out;
}

template <typename T>
TwoBranchModel<T>::TwoBranchModel(const ArchConfig& a, std::uint64_t seed)
    : arch(a),
      net1(a, stream_key(seed, {1}), "branch1"),
      net2(a, stream_key(seed, {2}), "branch2"),
      mapping(a, stream_key(seed, {3}), "mapping") {}

template <typename T>
std::vector<Parameter<T>*> TwoBranchModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto* group : {&net1.params(), &net2.params(), &mapping.params()})
    for (auto& p : *group) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> TwoBranchModel<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto* group : {&net1.params(), &net2.params(), &mapping.params()})
    for (const auto& p : *group) out.push_back(&p);
  return out;
}

template <typename T>
void TwoBranchModel<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
TwoBranchOutputs<T> forward_two_branch(ad::Graph<T>& g, const TwoBranchModel<T>& model,
                                       ad::NodeId image) {
  const auto& x = g.value(image);
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw std::invalid_argument("forward_two_branch: image batch must be [N,3,H,W], got " +
                                shape_string(x.shape));
  }
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw std::invalid_argument("forward_two_branch: H and W must be divisible by 4, got " +
                                shape_string(x.shape));
  }
  TwoBranchOutputs<T> out;
  out.binding.net1 = model.net1.bind(g);
  out.binding.net2 = model.net2.bind(g);
  out.binding.mapping = model.mapping.bind(g);
  const auto b1 = model.net1.forward(g, out.binding.net1, image);
  const auto b2 = model.net2.forward(g, out.binding.net2, image);
  out.f1 = b1.features;
  out.f2 = b2.features;
  out.f2_mapped = model.mapping.forward(g, out.binding.mapping, b2.features);
  out.logits1 = b1.logits;
  out.logits2 = b2.logits;
  out.branch1 = predictions(g.value(out.logits1));
  out.branch2 = predictions(g.value(out.logits2));
  return out;
}

template <typename T>
Predictions predict_branch1(const TwoBranchModel<T>& model, const Tensor<T>& images) {
  ad::Graph<T> g;
  Tensor<T> x = images;
  x.requires_grad = false;
  const ad::NodeId in = g.constant(std::move(x));
  Binding b;
  for (const auto& p : model.net1.params()) b.push_back(g.constant(p.value));
  return predictions(g.value(model.net1.forward(g, b, in).logits));
}

template <typename T>
void accumulate_grads(const ad::Graph<T>& g, TwoBranchModel<T>& model,
                      const TwoBranchBinding& binding) {
  collect(g, model.net1.params(), binding.net1);
  collect(g, model.net2.params(), binding.net2);
  collect(g, model.mapping.params(), binding.mapping);
}

template class BranchNet<float>;
template class BranchNet<double>;
template class MappingLayer<float>;
template class MappingLayer<double>;
template struct TwoBranchModel<float>;
template struct TwoBranchModel<double>;

template Predictions predictions<float>(const Tensor<float>&);
template Predictions predictions<double>(const Tensor<double>&);
template TwoBranchOutputs<float> forward_two_branch<float>(ad::Graph<float>&,
                                                           const TwoBranchModel<float>&, ad::NodeId);
template TwoBranchOutputs<double> forward_two_branch<double>(ad::Graph<double>&,
                                                             const TwoBranchModel<double>&, ad::NodeId);
template Predictions predict_branch1<float>(const TwoBranchModel<float>&, const Tensor<float>&);
template Predictions predict_branch1<double>(const TwoBranchModel<double>&, const Tensor<double>&);
template void accumulate_grads<float>(const ad::Graph<float>&, TwoBranchModel<float>&,
                                      const TwoBranchBinding&);
template void accumulate_grads<double>(const ad::Graph<double>&, TwoBranchModel<double>&,
                                       const TwoBranchBinding&);

}  // namespace clcs
