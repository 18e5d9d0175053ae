#pragma once
//
// Structural re-parameterization of RepCamConv blocks.
//
// A pointwise chain followed by a 3x3 conv is affine in its input, so it
// folds into one 3x3 kernel Q' and bias b':
//
//   W_chain, b_chain   = composition of the 1x1 maps  (x -> W x + b)
//   Q'[o,i,u,v]        = sum_m Q3[o,m,u,v] * W_chain[m,i]
//   b'[o]              = b3[o] + sum_{m,u,v} Q3[o,m,u,v] * b_chain[m]
//
// The b' term assumes every 3x3 tap sees b_chain, including taps on the zero
// padding ring; the training forward pads before the cascade to match.
// Parallel branches then merge by summing kernels (sum mode) or stacking them
// along the output-channel axis (concat mode). Arithmetic runs in double.
//

#include <span>
#include <vector>

#include "repcam/repcam.hpp"

namespace repcam {

template <class T>
ConvKernel<T> fuse_cascade(std::span<const ConvKernel<T>> cascade, const ConvKernel<T>& conv3) {
  detail::require(conv3.size() == 3, "fuse_cascade: final kernel must be 3x3");
  using Mat = Eigen::MatrixXd;
  const auto c_in = static_cast<Eigen::Index>(cascade.empty() ? conv3.in_channels()
                                                              : cascade.front().in_channels());
  Mat chain = Mat::Identity(c_in, c_in);
  Eigen::VectorXd chain_bias = Eigen::VectorXd::Zero(c_in);
  for (const auto& k : cascade) {
    detail::require(k.size() == 1, "fuse_cascade: cascade kernels must be 1x1");
    detail::require(static_cast<Eigen::Index>(k.in_channels()) == chain.rows(),
                    "fuse_cascade: channel mismatch in pointwise chain");
    const Mat w = detail::ConstRowMap<T>(k.weight.data().data(),
                                         static_cast<Eigen::Index>(k.out_channels()),
                                         static_cast<Eigen::Index>(k.in_channels()))
                      .template cast<double>();
    Eigen::VectorXd b(static_cast<Eigen::Index>(k.out_channels()));
    for (Eigen::Index o = 0; o < b.size(); ++o) b(o) = static_cast<double>(k.bias.data()[o]);
    chain = w * chain;
    chain_bias = w * chain_bias + b;
  }
  detail::require(static_cast<Eigen::Index>(conv3.in_channels()) == chain.rows(),
                  "fuse_cascade: channel mismatch between cascade and 3x3 kernel");

  const std::size_t co = conv3.out_channels();
  const std::size_t cm = conv3.in_channels();
  const std::size_t ci = static_cast<std::size_t>(c_in);
  auto fused = ConvKernel<T>::zeros(co, ci, 3);
  for (std::size_t o = 0; o < co; ++o) {
    double bias = conv3.bias.data()[o];
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v) {
        for (std::size_t i = 0; i < ci; ++i) {
          double acc = 0.0;
          for (std::size_t m = 0; m < cm; ++m)
            acc += static_cast<double>(conv3.weight.at(o, m, u, v)) *
                   chain(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i));
          fused.weight.at(o, i, u, v) = static_cast<T>(acc);
        }
        for (std::size_t m = 0; m < cm; ++m)
          bias += static_cast<double>(conv3.weight.at(o, m, u, v)) *
                  chain_bias(static_cast<Eigen::Index>(m));
      }
    fused.bias.data()[o] = static_cast<T>(bias);
  }
  return fused;
}

template <class T>
ConvKernel<T> fuse_parallel_sum(std::span<const ConvKernel<T>> branches) {
  detail::require(!branches.empty(), "fuse_parallel_sum: no branches");
  const auto& ref = branches.front();
  std::vector<double> w(ref.weight.numel(), 0.0);
  std::vector<double> b(ref.bias.numel(), 0.0);
  for (const auto& k : branches) {
    detail::require(k.weight.shape() == ref.weight.shape(),
                    "fuse_parallel_sum: branch configurations differ " + k.weight.shape().str() +
                        " vs " + ref.weight.shape().str());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += k.weight.data()[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += k.bias.data()[i];
  }
  ConvKernel<T> out = ConvKernel<T>::zeros(ref.out_channels(), ref.in_channels(), ref.size());
  for (std::size_t i = 0; i < w.size(); ++i) out.weight.data()[i] = static_cast<T>(w[i]);
  for (std::size_t i = 0; i < b.size(); ++i) out.bias.data()[i] = static_cast<T>(b[i]);
  return out;
}

template <class T>
ConvKernel<T> fuse_parallel_concat(std::span<const ConvKernel<T>> branches) {
  detail::require(!branches.empty(), "fuse_parallel_concat: no branches");
  const auto& ref = branches.front();
  std::size_t total_out = 0;
  for (const auto& k : branches) {
    detail::require(k.in_channels() == ref.in_channels() && k.size() == ref.size(),
                    "fuse_parallel_concat: branch configurations differ");
    total_out += k.out_channels();
  }
  auto out = ConvKernel<T>::zeros(total_out, ref.in_channels(), ref.size());
  std::size_t w0 = 0;
  std::size_t b0 = 0;
  for (const auto& k : branches) {
    std::copy(k.weight.data().begin(), k.weight.data().end(), out.weight.data().begin() + static_cast<std::ptrdiff_t>(w0));
    std::copy(k.bias.data().begin(), k.bias.data().end(), out.bias.data().begin() + static_cast<std::ptrdiff_t>(b0));
    w0 += k.weight.numel();
    b0 += k.bias.numel();
  }
  return out;
}

// Single 3x3 kernel (padding 1, zero pad) equivalent to the whole block.
template <class T>
ConvKernel<T> fuse_repcam_conv(const RepCamConv<T>& conv) {
  std::vector<ConvKernel<T>> collapsed;
  for (const auto& br : conv.branches)
    collapsed.push_back(fuse_cascade<T>(std::span<const ConvKernel<T>>(br.cascade), br.conv3));
  return conv.merge == MergeMode::sum ? fuse_parallel_sum<T>(collapsed)
                                      : fuse_parallel_concat<T>(collapsed);
}

template <class T>
FusedNet<T> fuse_network(const RepCamNet<T>& net) {
  FusedNet<T> out;
  out.config = net.config;
  out.config.branches = 1;
  out.head = net.head;
  out.tail = net.tail;
  for (const auto& blk : net.body) {
    ResBlock<T> fb;
    for (int j = 0; j < 2; ++j) {
      const auto& src = j == 0 ? blk.first : blk.second;
      detail::require(src.merge == MergeMode::sum,
                      "fuse_network: concat-merge block inside a residual body changes channel count");
      auto& dst = j == 0 ? fb.first : fb.second;
      dst.merge = MergeMode::sum;
      // Already a bare single branch: copy so fusion is idempotent bit-for-bit.
      if (src.branches.size() == 1 && src.branches.front().cascade.empty()) {
        dst.branches = src.branches;
      } else {
        dst.branches.push_back(Branch<T>{{}, fuse_repcam_conv(src)});
      }
    }
    out.body.push_back(std::move(fb));
  }
  return out;
}

}  // namespace repcam
