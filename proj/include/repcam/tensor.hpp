#pragma once
//
// Dense rank-4 tensors (batch, channel, height, width) and the forward
// primitives of the engine: stride-1 convolution with per-channel constant
// padding, depth-to-space, separable bicubic resampling and pointwise ops.
//
// Every operation is a pure function of its arguments. Storage is row-major
// NCHW. The scalar type is a template parameter so the same kernels run in
// float for training/inference and in double for gradient checking.
//

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "repcam/error.hpp"

namespace repcam {

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// 64-byte aligned storage. Eigen's vectorized kernels peel leading
// elements up to the first aligned address, so results depend on buffer
// alignment; fixing it makes every run bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape4 shape, T fill = T{0})
      : shape_(shape), data_(shape.numel(), fill) {}

  Tensor(Shape4 shape, const std::vector<T>& data)
      : shape_(shape), data_(data.begin(), data.end()) {
    detail::require(data_.size() == shape_.numel(),
                    "tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_.str());
  }

  const Shape4& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  std::vector<T> vec() const { return {data_.begin(), data_.end()}; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y,
                    std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }
  T* plane_ptr(std::size_t n, std::size_t c) {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }
  const T* plane_ptr(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_{};
  std::vector<T, AlignedAllocator<T>> data_;
};

using Tensor4 = Tensor<float>;

// Convolution parameters: weight (C1, C2, K, K) and bias (1, C1, 1, 1).
template <class T>
struct ConvKernel {
  Tensor<T> weight;
  Tensor<T> bias;

  ConvKernel() = default;
  ConvKernel(Tensor<T> w, Tensor<T> b) : weight(std::move(w)), bias(std::move(b)) {
    detail::require(weight.shape().h == weight.shape().w,
                    "kernel must be square, got " + weight.shape().str());
    detail::require(bias.shape() == Shape4{1, weight.shape().n, 1, 1},
                    "bias shape " + bias.shape().str() +
                        " does not match out_channels " +
                        std::to_string(weight.shape().n));
  }
  static ConvKernel zeros(std::size_t out_ch, std::size_t in_ch, std::size_t k) {
    return ConvKernel(Tensor<T>({out_ch, in_ch, k, k}), Tensor<T>({1, out_ch, 1, 1}));
  }

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t size() const { return weight.shape().h; }
  std::size_t param_count() const { return weight.numel() + bias.numel(); }

  template <class U>
  ConvKernel<U> cast() const {
    return ConvKernel<U>(weight.template cast<U>(), bias.template cast<U>());
  }
  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

// Positive rational resampling factor, kept in lowest terms.
struct Scale {
  int num = 1;
  int den = 1;

  Scale() = default;
  Scale(int n, int d) : num(n), den(d) {
    detail::require(n > 0 && d > 0, "scale must be positive");
    const int g = std::gcd(n, d);
    num /= g;
    den /= g;
  }
  static Scale up(int s) { return {s, 1}; }
  static Scale down(int s) { return {1, s}; }

  double value() const { return static_cast<double>(num) / den; }
  friend bool operator==(const Scale&, const Scale&) = default;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

inline void check_same(const Shape4& a, const Shape4& b, const char* op) {
  require(a == b, std::string(op) + ": dimension mismatch " + a.str() + " vs " + b.str());
}

template <class T>
void check_conv(const Shape4& in, const ConvKernel<T>& k, std::size_t padding,
                std::span<const T> pad_values) {
  require(k.size() % 2 == 1, "conv2d: kernel size must be odd, got " +
                                 std::to_string(k.size()));
  require(in.c == k.in_channels(),
          "conv2d: channel mismatch, input has " + std::to_string(in.c) +
              " channels but kernel expects " + std::to_string(k.in_channels()));
  require(padding == 0 || padding == (k.size() - 1) / 2,
          "conv2d: padding must be 0 or (K-1)/2");
  require(pad_values.empty() || pad_values.size() == in.c,
          "conv2d: pad value vector must have one entry per input channel");
  require(in.h + 2 * padding >= k.size() && in.w + 2 * padding >= k.size(),
          "conv2d: input " + in.str() + " smaller than kernel");
}

// Patch matrix of batch item n: rows (c, ky, kx), columns output pixels.
template <class T>
void im2col(const Tensor<T>& x, std::size_t n, std::size_t k, std::size_t pad,
            std::span<const T> pad_values, RowMat<T>& col) {
  const auto& s = x.shape();
  const std::size_t ho = s.h + 2 * pad - k + 1;
  const std::size_t wo = s.w + 2 * pad - k + 1;
  col.resize(static_cast<Eigen::Index>(s.c * k * k), static_cast<Eigen::Index>(ho * wo));
  for (std::size_t c = 0; c < s.c; ++c) {
    const T fill = pad_values.empty() ? T{0} : pad_values[c];
    const T* src = x.plane_ptr(n, c);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col.data() + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) {
            std::fill(dst, dst + wo, fill);
            continue;
          }
          const T* line = src + static_cast<std::size_t>(iy) * s.w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w))
                          ? fill
                          : line[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-matrix gradient back onto batch item n.
template <class T>
void col2im_add(const RowMat<T>& col, std::size_t n, std::size_t k, std::size_t pad,
                Tensor<T>& dx) {
  const auto& s = dx.shape();
  const std::size_t ho = s.h + 2 * pad - k + 1;
  const std::size_t wo = s.w + 2 * pad - k + 1;
  for (std::size_t c = 0; c < s.c; ++c) {
    T* dst = dx.plane_ptr(n, c);
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col.data() + ((c * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          T* line = dst + static_cast<std::size_t>(iy) * s.w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            line[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Stride-1 convolution. Taps outside the image read pad_values[c] (zero when
// pad_values is empty).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvKernel<T>& kernel, std::size_t padding,
                 std::span<const T> pad_values = {}) {
  detail::check_conv(x.shape(), kernel, padding, pad_values);
  const auto& s = x.shape();
  const std::size_t k = kernel.size();
  const std::size_t c1 = kernel.out_channels();
  const std::size_t ho = s.h + 2 * padding - k + 1;
  const std::size_t wo = s.w + 2 * padding - k + 1;
  Tensor<T> out({s.n, c1, ho, wo});

  const detail::ConstRowMap<T> wmat(kernel.weight.data().data(),
                                    static_cast<Eigen::Index>(c1),
                                    static_cast<Eigen::Index>(s.c * k * k));
  detail::RowMat<T> col;
  for (std::size_t n = 0; n < s.n; ++n) {
    detail::RowMap<T> omat(out.plane_ptr(n, 0), static_cast<Eigen::Index>(c1),
                           static_cast<Eigen::Index>(ho * wo));
    if (k == 1 && padding == 0) {
      const detail::ConstRowMap<T> xmat(x.plane_ptr(n, 0), static_cast<Eigen::Index>(s.c),
                                        static_cast<Eigen::Index>(s.h * s.w));
      omat.noalias() = wmat * xmat;
    } else {
      detail::im2col(x, n, k, padding, pad_values, col);
      omat.noalias() = wmat * col;
    }
    for (std::size_t o = 0; o < c1; ++o) {
      omat.row(static_cast<Eigen::Index>(o)).array() += kernel.bias.data()[o];
    }
  }
  return out;
}

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Vector-Jacobian products of conv2d with respect to input, weight and bias.
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvKernel<T>& kernel,
                             std::size_t padding, std::span<const T> pad_values,
                             const Tensor<T>& grad_out, bool want_input = true,
                             bool want_params = true) {
  const auto& s = x.shape();
  const std::size_t k = kernel.size();
  const std::size_t c1 = kernel.out_channels();
  const std::size_t ho = s.h + 2 * padding - k + 1;
  const std::size_t wo = s.w + 2 * padding - k + 1;
  detail::check_same(grad_out.shape(), Shape4{s.n, c1, ho, wo}, "conv2d_backward");

  ConvGrads<T> g;
  const auto kk = static_cast<Eigen::Index>(s.c * k * k);
  const detail::ConstRowMap<T> wmat(kernel.weight.data().data(),
                                    static_cast<Eigen::Index>(c1), kk);
  detail::RowMat<T> dw;
  if (want_params) {
    dw = detail::RowMat<T>::Zero(static_cast<Eigen::Index>(c1), kk);
    g.bias = Tensor<T>({1, c1, 1, 1});
  }
  if (want_input) g.input = Tensor<T>(s);

  detail::RowMat<T> col;
  detail::RowMat<T> dcol;
  for (std::size_t n = 0; n < s.n; ++n) {
    const detail::ConstRowMap<T> gmat(grad_out.plane_ptr(n, 0), static_cast<Eigen::Index>(c1),
                                      static_cast<Eigen::Index>(ho * wo));
    const bool direct = (k == 1 && padding == 0);
    if (want_params) {
      if (direct) {
        const detail::ConstRowMap<T> xmat(x.plane_ptr(n, 0), static_cast<Eigen::Index>(s.c),
                                          static_cast<Eigen::Index>(s.h * s.w));
        dw.noalias() += gmat * xmat.transpose();
      } else {
        detail::im2col(x, n, k, padding, pad_values, col);
        dw.noalias() += gmat * col.transpose();
      }
      for (std::size_t o = 0; o < c1; ++o) {
        g.bias.data()[o] += gmat.row(static_cast<Eigen::Index>(o)).sum();
      }
    }
    if (want_input) {
      if (direct) {
        detail::RowMap<T> dxmat(g.input.plane_ptr(n, 0), static_cast<Eigen::Index>(s.c),
                                static_cast<Eigen::Index>(s.h * s.w));
        dxmat.noalias() = wmat.transpose() * gmat;
      } else {
        dcol.noalias() = wmat.transpose() * gmat;
        detail::col2im_add(dcol, n, k, padding, g.input);
      }
    }
  }
  if (want_params) {
    g.weight = Tensor<T>(kernel.weight.shape(),
                         std::vector<T>(dw.data(), dw.data() + dw.size()));
  }
  return g;
}

// Depth-to-space: out[b, c, y*r+i, x*r+j] = in[b, c*r*r + i*r + j, y, x].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  const auto& s = x.shape();
  detail::require(r >= 1, "pixel_shuffle: factor must be positive");
  detail::require(s.c % (r * r) == 0, "pixel_shuffle: channels " + std::to_string(s.c) +
                                          " not divisible by r^2=" + std::to_string(r * r));
  const std::size_t co = s.c / (r * r);
  Tensor<T> out({s.n, co, s.h * r, s.w * r});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
          const T* src = x.plane_ptr(n, c * r * r + i * r + j);
          for (std::size_t y = 0; y < s.h; ++y)
            for (std::size_t xx = 0; xx < s.w; ++xx)
              out.at(n, c, y * r + i, xx * r + j) = src[y * s.w + xx];
        }
  return out;
}

// Space-to-depth; exact inverse of pixel_shuffle.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  const auto& s = x.shape();
  detail::require(r >= 1 && s.h % r == 0 && s.w % r == 0,
                  "pixel_unshuffle: spatial dims not divisible by factor");
  const std::size_t h = s.h / r;
  const std::size_t w = s.w / r;
  Tensor<T> out({s.n, s.c * r * r, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
          T* dst = out.plane_ptr(n, c * r * r + i * r + j);
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              dst[y * w + xx] = x.at(n, c, y * r + i, xx * r + j);
        }
  return out;
}

// Keys cubic convolution kernel with a = -0.5.
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

inline bool supported_scale(const Scale& s) {
  static constexpr std::array<std::pair<int, int>, 7> kAllowed = {
      {{1, 4}, {1, 3}, {1, 2}, {1, 1}, {2, 1}, {3, 1}, {4, 1}}};
  return std::any_of(kAllowed.begin(), kAllowed.end(), [&](const auto& p) {
    return p.first == s.num && p.second == s.den;
  });
}

inline std::size_t scaled_length(std::size_t len, const Scale& s) {
  detail::require((len * static_cast<std::size_t>(s.num)) % static_cast<std::size_t>(s.den) == 0,
                  "bicubic_resize: length " + std::to_string(len) + " times " +
                      std::to_string(s.num) + "/" + std::to_string(s.den) +
                      " is not integral");
  return len * static_cast<std::size_t>(s.num) / static_cast<std::size_t>(s.den);
}

// 1-D resampling operator (out_len x in_len): half-pixel centers, border clamp.
template <class T>
detail::RowMat<T> bicubic_matrix(std::size_t in_len, const Scale& s) {
  const std::size_t out_len = scaled_length(in_len, s);
  detail::RowMat<double> m = detail::RowMat<double>::Zero(static_cast<Eigen::Index>(out_len),
                                                          static_cast<Eigen::Index>(in_len));
  const double inv = static_cast<double>(s.den) / s.num;
  const auto last = static_cast<std::ptrdiff_t>(in_len) - 1;
  for (std::size_t d = 0; d < out_len; ++d) {
    const double src = (static_cast<double>(d) + 0.5) * inv - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int tap = -1; tap <= 2; ++tap) {
      const double wgt = cubic_weight(t - tap);
      if (wgt == 0.0) continue;
      const auto idx = std::clamp(static_cast<std::ptrdiff_t>(base) + tap, std::ptrdiff_t{0}, last);
      m(static_cast<Eigen::Index>(d), idx) += wgt;
    }
  }
  return m.cast<T>();
}

template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& x, const Scale& scale) {
  detail::require(supported_scale(scale), "bicubic_resize: unsupported scale " +
                                              std::to_string(scale.num) + "/" +
                                              std::to_string(scale.den));
  const auto& s = x.shape();
  const auto rh = bicubic_matrix<T>(s.h, scale);
  const auto rw = bicubic_matrix<T>(s.w, scale);
  const std::size_t ho = static_cast<std::size_t>(rh.rows());
  const std::size_t wo = static_cast<std::size_t>(rw.rows());
  Tensor<T> out({s.n, s.c, ho, wo});
  detail::RowMat<T> tmp;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const detail::ConstRowMap<T> in(x.plane_ptr(n, c), static_cast<Eigen::Index>(s.h),
                                      static_cast<Eigen::Index>(s.w));
      detail::RowMap<T> o(out.plane_ptr(n, c), static_cast<Eigen::Index>(ho),
                          static_cast<Eigen::Index>(wo));
      tmp.noalias() = rh * in;
      o.noalias() = tmp * rw.transpose();
    }
  return out;
}

// Adjoint of bicubic_resize: maps an output-space gradient to input space.
template <class T>
Tensor<T> bicubic_resize_adjoint(const Tensor<T>& grad_out, const Shape4& in_shape,
                                 const Scale& scale) {
  const auto rh = bicubic_matrix<T>(in_shape.h, scale);
  const auto rw = bicubic_matrix<T>(in_shape.w, scale);
  detail::check_same(grad_out.shape(),
                     Shape4{in_shape.n, in_shape.c, static_cast<std::size_t>(rh.rows()),
                            static_cast<std::size_t>(rw.rows())},
                     "bicubic_resize_adjoint");
  Tensor<T> out(in_shape);
  detail::RowMat<T> tmp;
  for (std::size_t n = 0; n < in_shape.n; ++n)
    for (std::size_t c = 0; c < in_shape.c; ++c) {
      const detail::ConstRowMap<T> g(grad_out.plane_ptr(n, c), rh.rows(), rw.rows());
      detail::RowMap<T> o(out.plane_ptr(n, c), static_cast<Eigen::Index>(in_shape.h),
                          static_cast<Eigen::Index>(in_shape.w));
      tmp.noalias() = rh.transpose() * g;
      o.noalias() = tmp * rw;
    }
  return out;
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F f) {
  std::vector<T> out(x.numel());
  std::transform(x.data().begin(), x.data().end(), out.begin(), f);
  return Tensor<T>(x.shape(), std::move(out));
}

template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* op) {
  detail::check_same(a.shape(), b.shape(), op);
  std::vector<T> out(a.numel());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), f);
  return Tensor<T>(a.shape(), std::move(out));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, std::plus<T>{}, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, std::minus<T>{}, "sub");
}
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return map(a, [s](T v) { return v * s; });
}
template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return map(a, [](T v) { return v > T{0} ? v : T{0}; });
}
template <class T>
Tensor<T> clamp01(const Tensor<T>& a) {
  return map(a, [](T v) { return std::clamp(v, T{0}, T{1}); });
}

template <class T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  detail::check_same(dst.shape(), src.shape(), "add_inplace");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <class T>
T sum(const Tensor<T>& a) {
  return std::accumulate(a.data().begin(), a.data().end(), T{0});
}

// Zero ring of width p around every plane.
template <class T>
Tensor<T> pad(const Tensor<T>& x, std::size_t p) {
  const auto& s = x.shape();
  Tensor<T> out({s.n, s.c, s.h + 2 * p, s.w + 2 * p});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        std::copy_n(x.plane_ptr(n, c) + y * s.w, s.w, &out.at(n, c, y + p, p));
  return out;
}

// Window [y0, y0+h) x [x0, x0+w) of every plane.
template <class T>
Tensor<T> crop(const Tensor<T>& x, std::size_t y0, std::size_t x0, std::size_t h,
               std::size_t w) {
  const auto& s = x.shape();
  detail::require(y0 + h <= s.h && x0 + w <= s.w, "crop: window exceeds " + s.str());
  Tensor<T> out({s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(x.plane_ptr(n, c) + (y0 + y) * s.w + x0, w, out.plane_ptr(n, c) + y * w);
  return out;
}

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  Shape4 s = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    detail::require(p.shape().n == s.n && p.shape().h == s.h && p.shape().w == s.w,
                    "concat_channels: dimension mismatch");
    channels += p.shape().c;
  }
  Tensor<T> out({s.n, channels, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      std::copy_n(p.plane_ptr(n, 0), p.shape().c * s.plane(), out.plane_ptr(n, c0));
      c0 += p.shape().c;
    }
  }
  return out;
}

// Stack B=1 tensors along the batch axis.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  detail::require(!items.empty(), "stack_batch: no inputs");
  const Shape4 s = items.front().shape();
  detail::require(s.n == 1, "stack_batch: items must have batch 1");
  Tensor<T> out({items.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < items.size(); ++i) {
    detail::check_same(items[i].shape(), s, "stack_batch");
    std::copy(items[i].data().begin(), items[i].data().end(), out.plane_ptr(i, 0));
  }
  return out;
}

template <class T>
Tensor<T> batch_item(const Tensor<T>& x, std::size_t n) {
  const auto& s = x.shape();
  detail::require(n < s.n, "batch_item: index out of range");
  std::vector<T> v(x.plane_ptr(n, 0), x.plane_ptr(n, 0) + s.c * s.plane());
  return Tensor<T>({1, s.c, s.h, s.w}, std::move(v));
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same(a.shape(), b.shape(), "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace repcam
