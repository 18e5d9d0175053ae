#pragma once
//
// Training-time RepCaM networks.
//
// A RepCamConv holds M parallel linear branches; branch i is i pointwise
// (1x1) convolutions followed by one 3x3 convolution, and the block output is
// the sum (or channel concatenation) of the branch outputs. Branch inputs are
// zero-padded by one pixel *before* the pointwise cascade and the 3x3 conv is
// then applied without padding. With that border convention the cascade sees
// the padding ring as input, so a fused single convolution reproduces the
// block exactly, borders included.
//
// Forward passes are written once against an "ops" policy: EagerOps computes
// tensors directly, TapeOps records onto a Tape for differentiation.
//

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "repcam/grad.hpp"
#include "repcam/tensor.hpp"

namespace repcam {

enum class MergeMode { sum, concat };

inline const char* to_string(MergeMode m) { return m == MergeMode::sum ? "sum" : "concat"; }
inline MergeMode merge_mode_from_string(const std::string& s) {
  if (s == "sum") return MergeMode::sum;
  if (s == "concat") return MergeMode::concat;
  throw ShapeError("unknown merge mode '" + s + "'");
}

template <class T>
struct Branch {
  std::vector<ConvKernel<T>> cascade;  // 1x1 kernels, applied in order
  ConvKernel<T> conv3;
};

struct RepCamConvSpec {
  std::size_t channels = 16;
  std::size_t branches = 3;
  MergeMode merge = MergeMode::sum;
};

template <class T>
struct RepCamConv {
  std::vector<Branch<T>> branches;
  MergeMode merge = MergeMode::sum;

  std::size_t in_channels() const { return branches.front().conv3.in_channels(); }
  std::size_t out_channels() const {
    const std::size_t per = branches.front().conv3.out_channels();
    return merge == MergeMode::sum ? per : per * branches.size();
  }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& b : branches) {
      for (const auto& k : b.cascade) n += k.param_count();
      n += b.conv3.param_count();
    }
    return n;
  }
};

struct NetConfig {
  std::size_t channels = 16;
  std::size_t blocks = 2;
  std::size_t branches = 3;
  int scale = 2;
  bool global_skip = true;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

template <class T>
struct ResBlock {
  RepCamConv<T> first;
  RepCamConv<T> second;
};

template <class T>
struct RepCamNet {
  NetConfig config;
  ConvKernel<T> head;
  std::vector<ResBlock<T>> body;
  ConvKernel<T> tail;
};

// The inference-time network: every RepCamConv has a single bare 3x3 branch.
template <class T>
using FusedNet = RepCamNet<T>;

template <class T>
bool is_single_branch(const RepCamNet<T>& net) {
  for (const auto& blk : net.body)
    for (const auto* c : {&blk.first, &blk.second})
      if (c->branches.size() != 1 || !c->branches.front().cascade.empty()) return false;
  return true;
}

// Visits every parameter tensor in a fixed order with its serialized name.
template <class Net, class F>
void for_each_param(Net& net, F&& f) {
  auto kernel = [&](const std::string& prefix, auto& k) {
    f(prefix + ".weight", k.weight);
    f(prefix + ".bias", k.bias);
  };
  kernel("head", net.head);
  for (std::size_t b = 0; b < net.body.size(); ++b) {
    auto& blk = net.body[b];
    for (int j = 0; j < 2; ++j) {
      auto& conv = j == 0 ? blk.first : blk.second;
      for (std::size_t i = 0; i < conv.branches.size(); ++i) {
        const std::string p = "body." + std::to_string(b) + ".conv" + std::to_string(j) +
                              ".branch" + std::to_string(i);
        auto& br = conv.branches[i];
        for (std::size_t k = 0; k < br.cascade.size(); ++k)
          kernel(p + ".cascade" + std::to_string(k), br.cascade[k]);
        kernel(p + ".conv3", br.conv3);
      }
    }
  }
  kernel("tail", net.tail);
}

template <class T>
std::size_t param_count(const RepCamNet<T>& net) {
  std::size_t n = 0;
  for_each_param(net, [&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

// Closed form: head, 2 RepCamConvs per block, tail.
inline std::size_t expected_param_count(const NetConfig& c) {
  const std::size_t C = c.channels;
  const std::size_t out = 3 * static_cast<std::size_t>(c.scale * c.scale);
  std::size_t per_conv = 0;
  for (std::size_t i = 0; i < c.branches; ++i) per_conv += i * (C * C + C) + 9 * C * C + C;
  return (27 * C + C) + c.blocks * 2 * per_conv + (9 * C * out + out);
}

namespace detail {

// Uniform double in [0,1) from the top 53 bits; identical on every platform.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class T>
void fill_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  for (auto& v : t.data()) v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * bound);
}

template <class T>
ConvKernel<T> init_conv3(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  auto k = ConvKernel<T>::zeros(out, in, 3);
  fill_uniform(k.weight, 1.0 / std::sqrt(static_cast<double>(in) * 9.0), rng);
  return k;
}

template <class T>
ConvKernel<T> init_pointwise(std::size_t channels, std::mt19937_64& rng) {
  auto k = ConvKernel<T>::zeros(channels, channels, 1);
  fill_uniform(k.weight, 0.01, rng);
  for (std::size_t c = 0; c < channels; ++c) k.weight.at(c, c, 0, 0) += T{1};
  return k;
}

inline void check_config(const NetConfig& c) {
  require(c.channels >= 1, "network needs at least one channel");
  require(c.blocks >= 1, "network needs at least one residual block");
  require(c.branches >= 1, "RepCamConv needs at least one branch");
  require(c.scale == 2 || c.scale == 3 || c.scale == 4,
          "scale must be 2, 3 or 4, got " + std::to_string(c.scale));
}

}  // namespace detail

// Random RepCamConv: 3x3 ~ U(+-1/sqrt(9C)), cascades ~ identity + U(+-0.01),
// zero biases.
template <class T>
RepCamConv<T> make_repcam_conv(const RepCamConvSpec& spec, std::mt19937_64& rng) {
  detail::require(spec.channels >= 1 && spec.branches >= 1, "RepCamConv spec needs C>=1, M>=1");
  RepCamConv<T> conv;
  conv.merge = spec.merge;
  for (std::size_t i = 0; i < spec.branches; ++i) {
    Branch<T> b;
    for (std::size_t k = 0; k < i; ++k) b.cascade.push_back(detail::init_pointwise<T>(spec.channels, rng));
    b.conv3 = detail::init_conv3<T>(spec.channels, spec.channels, rng);
    conv.branches.push_back(std::move(b));
  }
  return conv;
}

template <class T>
RepCamNet<T> build_backbone(const NetConfig& config, std::uint64_t seed) {
  detail::check_config(config);
  std::mt19937_64 rng(seed);
  RepCamNet<T> net;
  net.config = config;
  const std::size_t C = config.channels;
  net.head = detail::init_conv3<T>(C, 3, rng);
  const RepCamConvSpec spec{C, config.branches, MergeMode::sum};
  for (std::size_t b = 0; b < config.blocks; ++b) {
    ResBlock<T> blk;
    blk.first = make_repcam_conv<T>(spec, rng);
    blk.second = make_repcam_conv<T>(spec, rng);
    net.body.push_back(std::move(blk));
  }
  net.tail = detail::init_conv3<T>(3 * static_cast<std::size_t>(config.scale * config.scale), C, rng);
  return net;
}

template <class T>
struct EagerOps {
  using Var = Tensor<T>;
  Var conv(const Var& x, const ConvKernel<T>& k, std::size_t p) { return conv2d(x, k, p); }
  Var pad(const Var& x, std::size_t p) { return repcam::pad(x, p); }
  Var add(const Var& a, const Var& b) { return repcam::add(a, b); }
  Var relu(const Var& x) { return repcam::relu(x); }
  Var pixel_shuffle(const Var& x, std::size_t r) { return repcam::pixel_shuffle(x, r); }
  Var upscale(const Var& x, int s) { return bicubic_resize(x, Scale::up(s)); }
  Var concat(const std::vector<Var>& parts) { return concat_channels<T>(parts); }
};

// Records onto a tape. Each parameter tensor becomes one leaf the first time
// it is used; node_of() maps it back after backward().
template <class T>
struct TapeOps {
  using Var = NodeId;

  explicit TapeOps(Tape<T>& t, bool params_require_grad = true)
      : tape(t), train_params(params_require_grad) {}

  NodeId param(const Tensor<T>& p) {
    auto it = leaves.find(&p);
    if (it != leaves.end()) return it->second;
    const NodeId id = tape.leaf(p, train_params);
    leaves.emplace(&p, id);
    return id;
  }
  // Tensor must have been used in a forward pass on this tape.
  NodeId node_of(const Tensor<T>& p) const { return leaves.at(&p); }
  bool used(const Tensor<T>& p) const { return leaves.count(&p) != 0; }

  Var conv(Var x, const ConvKernel<T>& k, std::size_t p) {
    return ad::conv2d(tape, x, param(k.weight), param(k.bias), p);
  }
  Var pad(Var x, std::size_t p) { return ad::pad(tape, x, p); }
  Var add(Var a, Var b) { return ad::add(tape, a, b); }
  Var relu(Var x) { return ad::relu(tape, x); }
  Var pixel_shuffle(Var x, std::size_t r) { return ad::pixel_shuffle(tape, x, r); }
  Var upscale(Var x, int s) { return ad::bicubic_resize(tape, x, Scale::up(s)); }
  Var concat(const std::vector<Var>& parts) { return ad::concat_channels(tape, parts); }

  Tape<T>& tape;
  bool train_params;
  std::unordered_map<const Tensor<T>*, NodeId> leaves;
};

// Multi-branch forward; output spatial dims equal input dims.
template <class Ops, class T>
typename Ops::Var repcam_forward(Ops& ops, const RepCamConv<T>& conv, const typename Ops::Var& x) {
  using Var = typename Ops::Var;
  detail::require(!conv.branches.empty(), "RepCamConv has no branches");
  std::vector<Var> outs;
  std::optional<Var> padded;
  for (const auto& br : conv.branches) {
    if (br.cascade.empty()) {
      // Zero-pad + valid 3x3 is the same arithmetic as a padded 3x3.
      outs.push_back(ops.conv(x, br.conv3, 1));
      continue;
    }
    if (!padded) padded = ops.pad(x, 1);
    Var y = ops.conv(*padded, br.cascade.front(), 0);
    for (std::size_t k = 1; k < br.cascade.size(); ++k) y = ops.conv(y, br.cascade[k], 0);
    outs.push_back(ops.conv(y, br.conv3, 0));
  }
  if (conv.merge == MergeMode::concat) return ops.concat(outs);
  Var acc = outs.front();
  for (std::size_t i = 1; i < outs.size(); ++i) acc = ops.add(acc, outs[i]);
  return acc;
}

template <class T>
Tensor<T> repcam_forward(const RepCamConv<T>& conv, const Tensor<T>& x) {
  EagerOps<T> ops;
  detail::require(x.shape().c == conv.in_channels(),
                  "repcam_forward: channel mismatch, input has " + std::to_string(x.shape().c) +
                      " channels, block expects " + std::to_string(conv.in_channels()));
  return repcam_forward(ops, conv, x);
}

// Super-resolution forward (unclamped): head, residual body, tail, pixel
// shuffle, optional global bicubic skip.
template <class Ops, class T>
typename Ops::Var sr_forward(Ops& ops, const RepCamNet<T>& net, const typename Ops::Var& lr) {
  using Var = typename Ops::Var;
  Var h = ops.conv(lr, net.head, 1);
  for (const auto& blk : net.body) {
    Var r = repcam_forward(ops, blk.first, h);
    r = ops.relu(r);
    r = repcam_forward(ops, blk.second, r);
    h = ops.add(h, r);
  }
  Var y = ops.pixel_shuffle(ops.conv(h, net.tail, 1), static_cast<std::size_t>(net.config.scale));
  if (net.config.global_skip) y = ops.add(y, ops.upscale(lr, net.config.scale));
  return y;
}

template <class T>
Tensor<T> sr_forward(const RepCamNet<T>& net, const Tensor<T>& lr) {
  detail::require(lr.shape().c == 3, "sr_forward: expected 3-channel input, got " + lr.shape().str());
  EagerOps<T> ops;
  return sr_forward(ops, net, lr);
}

template <class T, class U>
RepCamNet<U> cast_net(const RepCamNet<T>& net) {
  RepCamNet<U> out;
  out.config = net.config;
  out.head = net.head.template cast<U>();
  out.tail = net.tail.template cast<U>();
  for (const auto& blk : net.body) {
    ResBlock<U> b;
    for (int j = 0; j < 2; ++j) {
      const auto& src = j == 0 ? blk.first : blk.second;
      auto& dst = j == 0 ? b.first : b.second;
      dst.merge = src.merge;
      for (const auto& br : src.branches) {
        Branch<U> nb;
        for (const auto& k : br.cascade) nb.cascade.push_back(k.template cast<U>());
        nb.conv3 = br.conv3.template cast<U>();
        dst.branches.push_back(std::move(nb));
      }
    }
    out.body.push_back(std::move(b));
  }
  return out;
}

}  // namespace repcam
