#pragma once

// Forward/backward kernels for the axial regressor. Activations are row-major
// (cells x features); every backward adds into parameter gradients and writes
// (not adds) the input gradient unless stated otherwise.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "metalic/tensor.hpp"

namespace metalic::nn {

template <class T>
using StridedRef = Eigen::Ref<Mat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedRef = Eigen::Ref<const Mat<T>, 0, Eigen::OuterStride<>>;

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct LayerNormCache {
  Mat<T> normalized;  // (x - mean) * rstd
  Vec<T> rstd;
};

template <class T>
void layer_norm_forward(const Mat<T>& x, const ConstMatMap<T>& gamma, const ConstMatMap<T>& beta, Mat<T>& y,
                        LayerNormCache<T>& cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  cache.normalized.resize(n, d);
  cache.rstd.resize(n);
  y.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
    cache.rstd(i) = rstd;
    cache.normalized.row(i) = (x.row(i).array() - mean) * rstd;
  }
  y = (cache.normalized.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

template <class T>
void layer_norm_backward(const Mat<T>& dy, const ConstMatMap<T>& gamma, const LayerNormCache<T>& cache, Mat<T>& dx,
                         MatMap<T> dgamma, MatMap<T> dbeta) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  dgamma.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  dx.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = (dy.row(i).array() * gamma.row(0).array()).eval();
    const T mean_g = g.mean();
    const T mean_gx = (g * cache.normalized.row(i).array()).mean();
    dx.row(i) = cache.rstd(i) * (g - mean_g - cache.normalized.row(i).array() * mean_gx);
  }
}

/// y = x W + b, with W (in x out) and b (1 x out).
template <class T>
void linear_forward(const Mat<T>& x, const ConstMatMap<T>& w, const ConstMatMap<T>& b, Mat<T>& y) {
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
}

/// Adds dW, db; writes dx when requested.
template <class T>
void linear_backward(const Mat<T>& x, const Mat<T>& dy, const ConstMatMap<T>& w, MatMap<T> dw, MatMap<T> db,
                     Mat<T>* dx) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  if (dx != nullptr) dx->noalias() = dy * w.transpose();
}

// tanh approximation of GELU
template <class T>
inline T gelu(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
Mat<T> gelu(const Mat<T>& x) {
  constexpr T c = T(0.7978845608028654);
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <class T>
Mat<T> gelu_grad(const Mat<T>& x) {
  constexpr T c = T(0.7978845608028654);
  const auto a = x.array();
  const auto t = (c * (a + T(0.044715) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) + T(0.5) * a * (T(1) - t.square()) * c * (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

template <class T>
inline T gelu_grad(T x) {
  constexpr T c = T(0.7978845608028654);
  const T inner = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * x * x);
}

/// Inverted dropout mask (entries 0 or 1/(1-p)); empty when inactive. One
/// engine draw seeds a splitmix64 stream; each stream word yields four 16-bit
/// keep decisions.
template <class T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= 0.0) return {};
  Mat<T> mask(rows, cols);
  const auto threshold = static_cast<std::uint64_t>(p * 65536.0);
  const T scale = T(1.0 / (1.0 - p));
  std::uint64_t state = (*rng)();
  const auto next = [&state] {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30U)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27U)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31U);
  };
  const auto keep = [&](std::uint64_t bits) { return (bits & 0xFFFFU) >= threshold ? scale : T(0); };
  T* out = mask.data();
  const Eigen::Index n = mask.size();
  Eigen::Index i = 0;
  for (; i + 4 <= n; i += 4) {
    const std::uint64_t bits = next();
    out[i] = keep(bits);
    out[i + 1] = keep(bits >> 16U);
    out[i + 2] = keep(bits >> 32U);
    out[i + 3] = keep(bits >> 48U);
  }
  if (i < n) {
    const std::uint64_t bits = next();
    const auto rest = static_cast<unsigned>(n - i);
    for (unsigned k = 0; k < rest; ++k) out[i + k] = keep(bits >> (16U * k));
  }
  return mask;
}

/// Per-group multi-head attention state: softmax probabilities per head and
/// the optional dropout mask applied to them.
template <class T>
struct AttentionCache {
  std::vector<Mat<T>> probs;
  std::vector<Mat<T>> drop;
};

/// Multi-head scaled dot-product attention over one group of `n` cells.
/// `qkv` is (n x 3D) laid out [Q | K | V]; keys with key_valid == 0 get zero weight.
template <class T>
void attention_forward(const ConstStridedRef<T>& qkv, const std::vector<std::uint8_t>& key_valid, int heads,
                       double dropout, std::mt19937_64* rng, StridedRef<T> out, AttentionCache<T>& cache) {
  const auto n = qkv.rows();
  const auto d = qkv.cols() / 3;
  const auto dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  cache.probs.resize(static_cast<std::size_t>(heads));
  cache.drop.assign(static_cast<std::size_t>(heads), Mat<T>());
  const T neg_inf = -std::numeric_limits<T>::infinity();
  bool any_masked = false;
  for (Eigen::Index j = 0; j < n; ++j) any_masked = any_masked || !key_valid[static_cast<std::size_t>(j)];
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(d + h * dh, dh);
    const auto v = qkv.middleCols(2 * d + h * dh, dh);
    Mat<T>& p = cache.probs[static_cast<std::size_t>(h)];
    p.noalias() = q * k.transpose();
    if (any_masked) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!key_valid[static_cast<std::size_t>(j)]) p.col(j).setConstant(neg_inf);
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      auto row = p.row(i);
      const T m = row.maxCoeff();
      row = ((row.array() - m) * scale).exp().matrix();
      row /= row.sum();
    }
    Mat<T>& mask = cache.drop[static_cast<std::size_t>(h)];
    mask = dropout_mask<T>(n, n, dropout, rng);
    if (mask.size() > 0) {
      out.middleCols(h * dh, dh).noalias() = p.cwiseProduct(mask) * v;
    } else {
      out.middleCols(h * dh, dh).noalias() = p * v;
    }
  }
}

/// Writes d(qkv) for one group.
template <class T>
void attention_backward(const ConstStridedRef<T>& qkv, const ConstStridedRef<T>& dout, const AttentionCache<T>& cache,
                        int heads, StridedRef<T> dqkv) {
  const auto d = qkv.cols() / 3;
  const auto dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(d + h * dh, dh);
    const auto v = qkv.middleCols(2 * d + h * dh, dh);
    const auto dO = dout.middleCols(h * dh, dh);
    const Mat<T>& p = cache.probs[static_cast<std::size_t>(h)];
    const Mat<T>& mask = cache.drop[static_cast<std::size_t>(h)];
    Mat<T> dp;
    if (mask.size() > 0) {
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.cwiseProduct(mask).transpose() * dO;
      dp.noalias() = dO * v.transpose();
      dp.array() *= mask.array();
    } else {
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * dO;
      dp.noalias() = dO * v.transpose();
    }
    const Vec<T> row_dot = (dp.array() * p.array()).rowwise().sum();
    Mat<T> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix();
    ds *= scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
  }
}

}  // namespace metalic::nn
