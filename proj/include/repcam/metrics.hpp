#pragma once
//
// Restoration quality metrics and the delivery cost model.
//

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "repcam/tensor.hpp"

namespace repcam {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// Round-half-away-from-zero to the 8-bit grid after clamping to [0,1].
inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

template <class T>
Tensor<T> quantize_8bit(const Tensor<T>& x) {
  return map(x, [](T v) { return static_cast<T>(to_byte(static_cast<double>(v)) / 255.0); });
}

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same(a.shape(), b.shape(), "mse");
  detail::require(a.numel() > 0, "mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

// Peak 1.0, all channels. Identical inputs return +infinity.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / m);
}

namespace detail {

inline std::vector<double> gaussian_window(int size = 11, double sigma = 1.5) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) v /= s;
  return g;
}

// Valid-mode separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t k = g.size();
  const std::size_t wo = w - k + 1;
  const std::size_t ho = h - k + 1;
  std::vector<double> rows(h * wo, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += g[t] * img[y * w + x + t];
      rows[y * wo + x] = acc;
    }
  std::vector<double> out(ho * wo, 0.0);
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += g[t] * rows[(y + t) * wo + x];
      out[y * wo + x] = acc;
    }
  return out;
}

template <class T>
std::vector<double> luma_mean_rgb(const Tensor<T>& x, std::size_t n) {
  const auto& s = x.shape();
  std::vector<double> out(s.plane(), 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    const T* p = x.plane_ptr(n, c);
    for (std::size_t i = 0; i < s.plane(); ++i) out[i] += static_cast<double>(p[i]);
  }
  for (auto& v : out) v /= static_cast<double>(s.c);
  return out;
}

}  // namespace detail

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1, on the mean of the channels. Averaged over the
// batch.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same(a.shape(), b.shape(), "ssim");
  const auto& s = a.shape();
  detail::require(s.h >= 11 && s.w >= 11, "ssim: image " + s.str() + " smaller than the 11x11 window");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto g = detail::gaussian_window();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto x = detail::luma_mean_rgb(a, n);
    const auto y = detail::luma_mean_rgb(b, n);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, s.h, s.w, g);
    const auto my = detail::filter_valid(y, s.h, s.w, g);
    const auto sxx = detail::filter_valid(xx, s.h, s.w, g);
    const auto syy = detail::filter_valid(yy, s.h, s.w, g);
    const auto sxy = detail::filter_valid(xy, s.h, s.w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(s.n);
}

// MSE between the LR input and the bicubically downsampled SR output, in
// units of 1e-1 (i.e. MSE x 10).
template <class T>
double consistency(const Tensor<T>& lr, const Tensor<T>& sr, int scale) {
  const auto& l = lr.shape();
  const auto su = static_cast<std::size_t>(scale);
  detail::require(sr.shape() == Shape4{l.n, l.c, l.h * su, l.w * su},
                  "consistency: SR dims " + sr.shape().str() + " are not LR dims " + l.str() +
                      " times " + std::to_string(scale));
  return 10.0 * mse(lr, bicubic_resize(sr, Scale::down(scale)));
}

enum class DeliveryScheme { per_chunk_models, shared_model, shared_model_tvp };

inline const char* to_string(DeliveryScheme s) {
  switch (s) {
    case DeliveryScheme::per_chunk_models: return "per-chunk-models";
    case DeliveryScheme::shared_model: return "shared-model";
    case DeliveryScheme::shared_model_tvp: return "shared-model+tvp";
  }
  return "?";
}

inline constexpr double kBytesPerMB = 1e6;

// Bytes delivered to a client under one scheme. Model-side bytes are the
// SR model(s) plus, for the prompt scheme, the per-chunk prompts.
struct CostReport {
  DeliveryScheme scheme = DeliveryScheme::shared_model;
  std::vector<std::uint64_t> lr_bytes;     // L_i, one per chunk
  std::vector<std::uint64_t> model_bytes;  // S, or S_i per chunk
  std::vector<std::uint64_t> tvp_bytes;    // T_i, one per chunk (prompt scheme)

  std::size_t chunks() const { return lr_bytes.size(); }
  std::uint64_t lr_total() const { return std::accumulate(lr_bytes.begin(), lr_bytes.end(), std::uint64_t{0}); }
  std::uint64_t tvp_total() const { return std::accumulate(tvp_bytes.begin(), tvp_bytes.end(), std::uint64_t{0}); }
  std::uint64_t model_only_total() const {
    return std::accumulate(model_bytes.begin(), model_bytes.end(), std::uint64_t{0});
  }
  std::uint64_t model_total() const { return model_only_total() + tvp_total(); }
  std::uint64_t total() const { return lr_total() + model_total(); }

  // "LR+MODEL (TOTAL)" in MB with two decimals, e.g. "3.62+0.27 (3.89)".
  std::string format() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.2f+%.2f (%.2f)", static_cast<double>(lr_total()) / kBytesPerMB,
                  static_cast<double>(model_total()) / kBytesPerMB,
                  static_cast<double>(total()) / kBytesPerMB);
    return buf;
  }
};

// per-chunk-models: sum_i (S_i + L_i); shared: S + sum_i L_i;
// shared+tvp: S + sum_i (L_i + T_i).
inline CostReport make_cost_report(DeliveryScheme scheme, std::vector<std::uint64_t> lr_bytes,
                                   std::vector<std::uint64_t> model_bytes,
                                   std::vector<std::uint64_t> tvp_bytes = {}) {
  detail::require(!lr_bytes.empty(), "cost report: no chunks");
  switch (scheme) {
    case DeliveryScheme::per_chunk_models:
      detail::require(model_bytes.size() == lr_bytes.size(),
                      "cost report: per-chunk scheme needs one model size per chunk");
      detail::require(tvp_bytes.empty(), "cost report: per-chunk scheme carries no prompts");
      break;
    case DeliveryScheme::shared_model:
      detail::require(model_bytes.size() == 1, "cost report: shared scheme needs exactly one model size");
      detail::require(tvp_bytes.empty(), "cost report: shared scheme carries no prompts");
      break;
    case DeliveryScheme::shared_model_tvp:
      detail::require(model_bytes.size() == 1, "cost report: shared scheme needs exactly one model size");
      detail::require(tvp_bytes.size() == lr_bytes.size(),
                      "cost report: prompt scheme needs one prompt size per chunk");
      break;
  }
  return CostReport{scheme, std::move(lr_bytes), std::move(model_bytes), std::move(tvp_bytes)};
}

}  // namespace repcam
