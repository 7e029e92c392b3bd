// SPDX-License-Identifier: Apache-2.0
//
// Minimal layer kernels with hand-written backward passes. Activations are
// HWC (row = pixel, column = channel) so that 1x1 convolutions are plain GEMMs.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "asd/errors.hpp"

namespace asd::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using VecMap = Eigen::Map<RowVec<T>>;
template <class T>
using ConstVecMap = Eigen::Map<const RowVec<T>>;

struct Shape3 {
  int h = 0, w = 0, c = 0;
  std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Spatial output size of a 3x3 "same" convolution: ceil(in / stride).
constexpr int same_out(int in, int stride) { return (in + stride - 1) / stride; }

/// Leading pad of a "same" convolution (the extra pad, if odd, goes last).
constexpr int same_pad_before(int in, int out, int stride, int k = 3) {
  const int total = std::max((out - 1) * stride + k - in, 0);
  return total / 2;
}

/// Named slices of one flat parameter vector.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    int fan_in = 1;
    bool bias = false;
  };

  std::size_t add(std::string name, std::vector<int> shape, int fan_in, bool bias) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    entries_.push_back({std::move(name), std::move(shape), total_, n, fan_in, bias});
    total_ += n;
    return entries_.back().offset;
  }

  std::size_t total() const { return total_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw NotFoundError("no parameter named " + name);
  }

 private:
  std::vector<Entry> entries_;
  std::size_t total_ = 0;
};

template <class T>
inline T relu(T v) {
  return v > T(0) ? v : T(0);
}

template <class T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

/// Zeroes upstream gradient where the ReLU output was not positive.
template <class T>
inline void relu_backward(std::span<const T> out, std::span<T> grad) {
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(out[i] > T(0))) grad[i] = T(0);
}

/// Full 3x3 convolution, arbitrary stride, same padding, fused ReLU.
/// Kernel layout [ky][kx][cin][cout], bias [cout].
struct Conv3x3 {
  Shape3 in, out;
  int stride = 1;
  std::size_t kernel = 0, bias = 0;

  int pad_y() const { return same_pad_before(in.h, out.h, stride); }
  int pad_x() const { return same_pad_before(in.w, out.w, stride); }
  int patch() const { return 9 * in.c; }

  template <class T>
  void im2col(std::span<const T> x, std::vector<T>& cols) const {
    const int P = patch();
    cols.assign(static_cast<std::size_t>(out.h) * out.w * P, T(0));
    const int py = pad_y(), px = pad_x();
    for (int oy = 0; oy < out.h; ++oy)
      for (int ox = 0; ox < out.w; ++ox) {
        T* row = cols.data() + (static_cast<std::size_t>(oy) * out.w + ox) * P;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - py;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - px;
            if (ix < 0 || ix >= in.w) continue;
            const T* src = x.data() + (static_cast<std::size_t>(iy) * in.w + ix) * in.c;
            std::copy(src, src + in.c, row + (ky * 3 + kx) * in.c);
          }
        }
      }
  }

  template <class T>
  void forward(std::span<const T> params, std::span<const T> x, std::vector<T>& cols,
               std::span<T> y) const {
    im2col(x, cols);
    const int P = patch();
    ConstMatMap<T> C(cols.data(), out.h * out.w, P);
    ConstMatMap<T> K(params.data() + kernel, P, out.c);
    ConstVecMap<T> b(params.data() + bias, out.c);
    MatMap<T> Y(y.data(), out.h * out.w, out.c);
    Y.noalias() = C * K;
    Y.rowwise() += b;
    Y = Y.cwiseMax(T(0));
  }

  /// `dy` must already be ReLU-masked. Input gradient is not produced; the
  /// stem always sees raw features.
  template <class T>
  void backward(std::span<const T> cols, std::span<const T> dy, std::span<T> grads) const {
    const int P = patch();
    ConstMatMap<T> C(cols.data(), out.h * out.w, P);
    ConstMatMap<T> dY(dy.data(), out.h * out.w, out.c);
    MatMap<T> dK(grads.data() + kernel, P, out.c);
    VecMap<T> db(grads.data() + bias, out.c);
    dK.noalias() += C.transpose() * dY;
    db += dY.colwise().sum();
  }
};

/// Per-channel 3x3 convolution with fused ReLU. Kernel [ky][kx][c], bias [c].
struct Depthwise3x3 {
  Shape3 in, out;
  int stride = 1;
  std::size_t kernel = 0, bias = 0;

  template <class T>
  void forward(std::span<const T> params, std::span<const T> x, std::span<T> y) const {
    const int C = in.c;
    const int py = same_pad_before(in.h, out.h, stride), px = same_pad_before(in.w, out.w, stride);
    const T* k = params.data() + kernel;
    const T* b = params.data() + bias;
    for (int oy = 0; oy < out.h; ++oy)
      for (int ox = 0; ox < out.w; ++ox) {
        T* dst = y.data() + (static_cast<std::size_t>(oy) * out.w + ox) * C;
        std::copy(b, b + C, dst);
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - py;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - px;
            if (ix < 0 || ix >= in.w) continue;
            const T* src = x.data() + (static_cast<std::size_t>(iy) * in.w + ix) * C;
            const T* kk = k + (ky * 3 + kx) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c] * kk[c];
          }
        }
        for (int c = 0; c < C; ++c) dst[c] = relu(dst[c]);
      }
  }

  /// `dy` must already be ReLU-masked. `dx` is overwritten.
  template <class T>
  void backward(std::span<const T> params, std::span<const T> x, std::span<const T> dy,
                std::span<T> dx, std::span<T> grads) const {
    const int C = in.c;
    const int py = same_pad_before(in.h, out.h, stride), px = same_pad_before(in.w, out.w, stride);
    const T* k = params.data() + kernel;
    T* dk = grads.data() + kernel;
    T* db = grads.data() + bias;
    std::fill(dx.begin(), dx.end(), T(0));
    for (int oy = 0; oy < out.h; ++oy)
      for (int ox = 0; ox < out.w; ++ox) {
        const T* g = dy.data() + (static_cast<std::size_t>(oy) * out.w + ox) * C;
        for (int c = 0; c < C; ++c) db[c] += g[c];
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - py;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - px;
            if (ix < 0 || ix >= in.w) continue;
            const std::size_t at = (static_cast<std::size_t>(iy) * in.w + ix) * C;
            const T* src = x.data() + at;
            T* dsrc = dx.data() + at;
            const T* kk = k + (ky * 3 + kx) * C;
            T* dkk = dk + (ky * 3 + kx) * C;
            for (int c = 0; c < C; ++c) {
              dkk[c] += src[c] * g[c];
              dsrc[c] += kk[c] * g[c];
            }
          }
        }
      }
  }
};

/// 1x1 convolution (a GEMM over pixels) with fused ReLU. Kernel [cin][cout].
struct Pointwise {
  Shape3 in, out;
  std::size_t kernel = 0, bias = 0;

  template <class T>
  void forward(std::span<const T> params, std::span<const T> x, std::span<T> y) const {
    const int n = in.h * in.w;
    ConstMatMap<T> X(x.data(), n, in.c);
    ConstMatMap<T> K(params.data() + kernel, in.c, out.c);
    ConstVecMap<T> b(params.data() + bias, out.c);
    MatMap<T> Y(y.data(), n, out.c);
    Y.noalias() = X * K;
    Y.rowwise() += b;
    Y = Y.cwiseMax(T(0));
  }

  template <class T>
  void backward(std::span<const T> params, std::span<const T> x, std::span<const T> dy,
                std::span<T> dx, std::span<T> grads) const {
    const int n = in.h * in.w;
    ConstMatMap<T> X(x.data(), n, in.c);
    ConstMatMap<T> K(params.data() + kernel, in.c, out.c);
    ConstMatMap<T> dY(dy.data(), n, out.c);
    MatMap<T> dK(grads.data() + kernel, in.c, out.c);
    VecMap<T> db(grads.data() + bias, out.c);
    dK.noalias() += X.transpose() * dY;
    db += dY.colwise().sum();
    MatMap<T> dX(dx.data(), n, in.c);
    dX.noalias() = dY * K.transpose();
  }
};

/// Fully connected layer y = x K + b. Kernel [in][out].
struct Dense {
  int in = 0, out = 0;
  std::size_t kernel = 0, bias = 0;

  template <class T>
  void forward(std::span<const T> params, std::span<const T> x, std::span<T> y) const {
    ConstVecMap<T> X(x.data(), in);
    ConstMatMap<T> K(params.data() + kernel, in, out);
    ConstVecMap<T> b(params.data() + bias, out);
    VecMap<T> Y(y.data(), out);
    Y.noalias() = X * K;
    Y += b;
  }

  /// Accumulates parameter gradients; writes (not accumulates) `dx` if nonempty.
  template <class T>
  void backward(std::span<const T> params, std::span<const T> x, std::span<const T> dy,
                std::span<T> dx, std::span<T> grads) const {
    ConstVecMap<T> X(x.data(), in);
    ConstVecMap<T> dY(dy.data(), out);
    MatMap<T> dK(grads.data() + kernel, in, out);
    VecMap<T> db(grads.data() + bias, out);
    dK.noalias() += X.transpose() * dY;
    db += dY;
    if (!dx.empty()) {
      ConstMatMap<T> K(params.data() + kernel, in, out);
      VecMap<T> dX(dx.data(), in);
      dX.noalias() = dY * K.transpose();
    }
  }
};

/// Gated recurrent unit, gates ordered (update z, reset r, candidate c):
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   c = tanh(x Wc + (r * h) Uc + bc)
///   h' = (1 - z) * h + z * c
/// Kernel [in][3u], recurrent [u][3u], bias [3u].
struct GruCell {
  int in = 0, units = 0;
  std::size_t kernel = 0, recurrent = 0, bias = 0;

  template <class T>
  struct Step {
    std::vector<T> x, h_prev, z, r, c, h;
  };

  template <class T>
  void forward(std::span<const T> params, std::span<const T> x, std::span<const T> h_prev,
               Step<T>& s) const {
    const int u = units;
    s.x.assign(x.begin(), x.end());
    s.h_prev.assign(h_prev.begin(), h_prev.end());
    ConstMatMap<T> W(params.data() + kernel, in, 3 * u);
    ConstMatMap<T> U(params.data() + recurrent, u, 3 * u);
    ConstVecMap<T> b(params.data() + bias, 3 * u);
    ConstVecMap<T> X(s.x.data(), in);
    ConstVecMap<T> H(s.h_prev.data(), u);
    RowVec<T> ax = X * W + b;
    RowVec<T> ahzr = H * U.leftCols(2 * u);
    s.z.resize(u);
    s.r.resize(u);
    s.c.resize(u);
    s.h.resize(u);
    for (int i = 0; i < u; ++i) {
      s.z[i] = sigmoid(ax[i] + ahzr[i]);
      s.r[i] = sigmoid(ax[u + i] + ahzr[u + i]);
    }
    RowVec<T> rh(u);
    for (int i = 0; i < u; ++i) rh[i] = s.r[i] * s.h_prev[i];
    RowVec<T> ahc = rh * U.rightCols(u);
    for (int i = 0; i < u; ++i) {
      s.c[i] = std::tanh(ax[2 * u + i] + ahc[i]);
      s.h[i] = (T(1) - s.z[i]) * s.h_prev[i] + s.z[i] * s.c[i];
    }
  }

  /// Given dL/dh' for this step, accumulates parameter gradients and writes
  /// dL/dx (if nonempty) and dL/dh_prev.
  template <class T>
  void backward(std::span<const T> params, const Step<T>& s, std::span<const T> dh,
                std::span<T> dx, std::span<T> dh_prev, std::span<T> grads) const {
    const int u = units;
    ConstMatMap<T> W(params.data() + kernel, in, 3 * u);
    ConstMatMap<T> U(params.data() + recurrent, u, 3 * u);
    MatMap<T> dW(grads.data() + kernel, in, 3 * u);
    MatMap<T> dU(grads.data() + recurrent, u, 3 * u);
    VecMap<T> db(grads.data() + bias, 3 * u);

    RowVec<T> da(3 * u);   // pre-activation gradients, (z, r, c)
    RowVec<T> rh(u), hp(u), dhp(u);
    for (int i = 0; i < u; ++i) {
      const T z = s.z[i], c = s.c[i], h0 = s.h_prev[i];
      da[i] = dh[i] * (c - h0) * z * (T(1) - z);
      da[2 * u + i] = dh[i] * z * (T(1) - c * c);
      dhp[i] = dh[i] * (T(1) - z);
      rh[i] = s.r[i] * h0;
      hp[i] = h0;
    }
    RowVec<T> drh = da.tail(u) * U.rightCols(u).transpose();
    for (int i = 0; i < u; ++i) {
      const T r = s.r[i];
      da[u + i] = drh[i] * s.h_prev[i] * r * (T(1) - r);
      dhp[i] += drh[i] * r;
    }
    ConstVecMap<T> X(s.x.data(), in);
    dW.noalias() += X.transpose() * da;
    dU.leftCols(2 * u).noalias() += hp.transpose() * da.head(2 * u);
    dU.rightCols(u).noalias() += rh.transpose() * da.tail(u);
    db += da;
    dhp.noalias() += da.head(2 * u) * U.leftCols(2 * u).transpose();
    std::copy(dhp.data(), dhp.data() + u, dh_prev.begin());
    if (!dx.empty()) {
      VecMap<T> dX(dx.data(), in);
      dX.noalias() = da * W.transpose();
    }
  }
};

/// Two-way softmax returning (p0, p1). Numerically stable.
template <class T>
inline std::pair<T, T> softmax2(T z0, T z1) {
  const T m = std::max(z0, z1);
  const T e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  const T s = e0 + e1;
  return {e0 / s, e1 / s};
}

}  // namespace asd::nn
