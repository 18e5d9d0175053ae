#pragma once
//
// Transparent visual prompts: a zero-initialized (S_H x S_W x C) patch added
// to the centered region of every LR frame of one chunk.
//
//   I_p[i,j] = I[i,j] + w[i - dH, j - dW]   inside [dH, dH+S_H) x [dW, dW+S_W)
//   dH = floor((H - S_H) / 2),  dW = floor((W - S_W) / 2)
//
// The Jacobian of I_p with respect to w is the identity on that region, so
// the prompt gradient is the upstream gradient restricted to it.
//

#include <algorithm>
#include <cstddef>
#include <vector>

#include "repcam/grad.hpp"
#include "repcam/tensor.hpp"

namespace repcam {

template <class T>
struct Tvp {
  Tensor<T> values;  // (1, C, S_H, S_W)
  std::size_t chunk = 0;

  static Tvp zeros(std::size_t s_h, std::size_t s_w, std::size_t chunk_id, std::size_t channels = 3) {
    return Tvp{Tensor<T>({1, channels, s_h, s_w}), chunk_id};
  }
  std::size_t height() const { return values.shape().h; }
  std::size_t width() const { return values.shape().w; }
  std::size_t channels() const { return values.shape().c; }
};

struct TvpOffsets {
  std::size_t dh = 0;
  std::size_t dw = 0;
};

inline TvpOffsets center_offsets(std::size_t h, std::size_t w, std::size_t s_h, std::size_t s_w) {
  detail::require(s_h <= h && s_w <= w, "prompt " + std::to_string(s_h) + "x" + std::to_string(s_w) +
                                            " larger than frame " + std::to_string(h) + "x" +
                                            std::to_string(w));
  return {(h - s_h) / 2, (w - s_w) / 2};
}

// Where a prompt lands in one batch item: the prompt's top-left corner in
// that item's coordinates (may be negative or beyond the item when the item
// is a patch cut from a larger frame). prompt < 0 means "no prompt".
struct PromptUse {
  std::ptrdiff_t prompt = -1;
  std::ptrdiff_t dy = 0;
  std::ptrdiff_t dx = 0;
};

namespace detail {

struct Overlap {
  std::size_t y0 = 0, x0 = 0;  // in item coordinates
  std::size_t py = 0, px = 0;  // in prompt coordinates
  std::size_t h = 0, w = 0;
};

inline Overlap overlap(const Shape4& item, const Shape4& prompt, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const auto ih = static_cast<std::ptrdiff_t>(item.h), iw = static_cast<std::ptrdiff_t>(item.w);
  const auto ph = static_cast<std::ptrdiff_t>(prompt.h), pw = static_cast<std::ptrdiff_t>(prompt.w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(dy, 0), y1 = std::min(dy + ph, ih);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(dx, 0), x1 = std::min(dx + pw, iw);
  if (y1 <= y0 || x1 <= x0) return {};
  return {static_cast<std::size_t>(y0), static_cast<std::size_t>(x0), static_cast<std::size_t>(y0 - dy),
          static_cast<std::size_t>(x0 - dx), static_cast<std::size_t>(y1 - y0), static_cast<std::size_t>(x1 - x0)};
}

template <class T>
void add_prompt(Tensor<T>& x, std::size_t n, const Tensor<T>& prompt, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const Overlap o = overlap(x.shape(), prompt.shape(), dy, dx);
  for (std::size_t c = 0; c < x.shape().c; ++c)
    for (std::size_t y = 0; y < o.h; ++y)
      for (std::size_t xx = 0; xx < o.w; ++xx)
        x.at(n, c, o.y0 + y, o.x0 + xx) += prompt.at(0, c, o.py + y, o.px + xx);
}

template <class T>
void accumulate_prompt_grad(const Tensor<T>& upstream, std::size_t n, Tensor<T>& grad, std::ptrdiff_t dy,
                            std::ptrdiff_t dx) {
  const Overlap o = overlap(upstream.shape(), grad.shape(), dy, dx);
  for (std::size_t c = 0; c < grad.shape().c; ++c)
    for (std::size_t y = 0; y < o.h; ++y)
      for (std::size_t xx = 0; xx < o.w; ++xx)
        grad.at(0, c, o.py + y, o.px + xx) += upstream.at(n, c, o.y0 + y, o.x0 + xx);
}

}  // namespace detail

// Prompted frame(s). No clamping: values may leave [0,1].
template <class T>
Tensor<T> apply_tvp(const Tensor<T>& frame, const Tvp<T>& tvp) {
  const auto& s = frame.shape();
  detail::require(s.c == tvp.channels(), "apply_tvp: channel mismatch");
  const auto off = center_offsets(s.h, s.w, tvp.height(), tvp.width());
  Tensor<T> out = frame;
  for (std::size_t n = 0; n < s.n; ++n)
    detail::add_prompt(out, n, tvp.values, static_cast<std::ptrdiff_t>(off.dh), static_cast<std::ptrdiff_t>(off.dw));
  return out;
}

// Gradient of the loss with respect to the prompt given the gradient with
// respect to the prompted frame(s), summed over the batch.
template <class T>
Tensor<T> tvp_gradient(const Tensor<T>& upstream, const Tvp<T>& tvp) {
  const auto& s = upstream.shape();
  const auto off = center_offsets(s.h, s.w, tvp.height(), tvp.width());
  Tensor<T> g(tvp.values.shape());
  for (std::size_t n = 0; n < s.n; ++n)
    detail::accumulate_prompt_grad(upstream, n, g, static_cast<std::ptrdiff_t>(off.dh),
                                   static_cast<std::ptrdiff_t>(off.dw));
  return g;
}

namespace ad {

// Adds prompts[uses[n].prompt] to batch item n at (uses[n].dy, uses[n].dx).
template <class T>
NodeId apply_prompts(Tape<T>& t, NodeId x, const std::vector<NodeId>& prompts, std::vector<PromptUse> uses) {
  std::vector<NodeId> inputs{x};
  inputs.insert(inputs.end(), prompts.begin(), prompts.end());
  detail::require(t.value(x).shape().n == uses.size(), "apply_prompts: one placement per batch item required");
  for (const auto& u : uses)
    detail::require(u.prompt < static_cast<std::ptrdiff_t>(prompts.size()), "apply_prompts: prompt index out of range");
  return t.record(
      "apply_prompts", std::move(inputs),
      [uses](auto in) {
        Tensor<T> out = *in[0];
        for (std::size_t n = 0; n < uses.size(); ++n)
          if (uses[n].prompt >= 0)
            detail::add_prompt(out, n, *in[1 + static_cast<std::size_t>(uses[n].prompt)], uses[n].dy, uses[n].dx);
        return out;
      },
      [uses](auto in, const Tensor<T>&, const Tensor<T>& g) {
        std::vector<Tensor<T>> grads;
        grads.push_back(g);
        for (std::size_t k = 1; k < in.size(); ++k) grads.emplace_back(in[k]->shape());
        for (std::size_t n = 0; n < uses.size(); ++n)
          if (uses[n].prompt >= 0)
            detail::accumulate_prompt_grad(g, n, grads[1 + static_cast<std::size_t>(uses[n].prompt)], uses[n].dy,
                                           uses[n].dx);
        return grads;
      });
}

// Whole-frame prompt at the centered offsets.
template <class T>
NodeId apply_tvp(Tape<T>& t, NodeId frame, NodeId prompt) {
  const auto& s = t.value(frame).shape();
  const auto& p = t.value(prompt).shape();
  const auto off = center_offsets(s.h, s.w, p.h, p.w);
  return apply_prompts(t, frame, {prompt},
                       std::vector<PromptUse>(s.n, PromptUse{0, static_cast<std::ptrdiff_t>(off.dh),
                                                             static_cast<std::ptrdiff_t>(off.dw)}));
}

}  // namespace ad

// Prompt/model float ratio; the budget claim is "< 0.1%".
inline double prompt_overhead(std::size_t prompt_floats_total, std::size_t model_floats) {
  return static_cast<double>(prompt_floats_total) / static_cast<double>(model_floats);
}

}  // namespace repcam
