#pragma once

// Dense layer primitives with hand-written backward passes. Activations are row-major
// matrices with one token (or sample) per row; parameters live in a ParameterSet buffer
// and are addressed by offset.

#include "multidiff/params.hpp"
#include "multidiff/types.hpp"

#include <cmath>
#include <random>

namespace multidiff::nn {

template <typename T>
using ConstMap = Eigen::Map<const MatrixT<T>>;
template <typename T>
using Map = Eigen::Map<MatrixT<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowVectorT<T>>;
template <typename T>
using RowMap = Eigen::Map<RowVectorT<T>>;

/// y = x W + b with W stored (in, out).
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in = 0;
  int out = 0;

  template <typename T>
  static Linear create(ParameterSet<T>& params, const std::string& name, int in, int out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = params.add(name + ".weight", {in, out});
    l.bias = params.add(name + ".bias", {out});
    return l;
  }

  template <typename T>
  MatrixT<T> forward(const T* params, const MatrixT<T>& x) const {
    ConstMap<T> w(params + weight, in, out);
    ConstRowMap<T> b(params + bias, out);
    MatrixT<T> y(x.rows(), out);
    y.noalias() = x * w;
    y.rowwise() += b;
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  template <typename T>
  MatrixT<T> backward(const T* params, T* grads, const MatrixT<T>& x, const MatrixT<T>& dy) const {
    ConstMap<T> w(params + weight, in, out);
    Map<T> dw(grads + weight, in, out);
    RowMap<T> db(grads + bias, out);
    dw.noalias() += x.transpose() * dy;
    db += dy.colwise().sum();
    MatrixT<T> dx(dy.rows(), in);
    dx.noalias() = dy * w.transpose();
    return dx;
  }

  /// Parameter-gradient-only variant for layers whose input needs no gradient.
  template <typename T>
  void backward_params(T* grads, const MatrixT<T>& x, const MatrixT<T>& dy) const {
    Map<T> dw(grads + weight, in, out);
    RowMap<T> db(grads + bias, out);
    dw.noalias() += x.transpose() * dy;
    db += dy.colwise().sum();
  }
};

template <typename T>
struct LayerNormCache {
  MatrixT<T> normalized;  // (x - mean) * rstd
  VectorT<T> rstd;
};

struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  int dim = 0;
  static constexpr double kEps = 1e-5;

  template <typename T>
  static LayerNorm create(ParameterSet<T>& params, const std::string& name, int dim) {
    LayerNorm l;
    l.dim = dim;
    l.gamma = params.add(name + ".gamma", {dim});
    l.beta = params.add(name + ".beta", {dim});
    return l;
  }

  template <typename T>
  MatrixT<T> forward(const T* params, const MatrixT<T>& x, LayerNormCache<T>* cache) const {
    ConstRowMap<T> g(params + gamma, dim);
    ConstRowMap<T> b(params + beta, dim);
    const auto rows = x.rows();
    MatrixT<T> xhat(rows, dim);
    VectorT<T> rstd(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const T mean = x.row(r).mean();
      const T var = (x.row(r).array() - mean).square().mean();
      rstd(r) = T(1) / std::sqrt(var + static_cast<T>(kEps));
      xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
    }
    MatrixT<T> y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
    if (cache) {
      cache->normalized = std::move(xhat);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  template <typename T>
  MatrixT<T> backward(const T* params, T* grads, const LayerNormCache<T>& cache,
                      const MatrixT<T>& dy) const {
    ConstRowMap<T> g(params + gamma, dim);
    RowMap<T> dg(grads + gamma, dim);
    RowMap<T> db(grads + beta, dim);
    dg += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    db += dy.colwise().sum();
    MatrixT<T> dxhat = dy.array().rowwise() * g.array();
    MatrixT<T> dx(dy.rows(), dim);
    const T inv_dim = T(1) / static_cast<T>(dim);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const T mean_d = dxhat.row(r).mean();
      const T mean_dx = (dxhat.row(r).array() * cache.normalized.row(r).array()).sum() * inv_dim;
      dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - mean_d -
                                   cache.normalized.row(r).array() * mean_dx);
    }
    return dx;
  }
};

/// tanh-form GELU; the backward pass is the exact derivative of this form.
template <typename T>
MatrixT<T> gelu(const MatrixT<T>& z) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  auto inner = (c * (z.array() + k * z.array().cube())).tanh();
  return (T(0.5) * z.array() * (T(1) + inner)).matrix();
}

template <typename T>
MatrixT<T> gelu_backward(const MatrixT<T>& z, const MatrixT<T>& dy) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> th =
      (c * (z.array() + k * z.array().cube())).tanh();
  auto dgelu = T(0.5) * (T(1) + th) +
               T(0.5) * z.array() * (T(1) - th.square()) * c * (T(1) + T(3) * k * z.array().square());
  return (dy.array() * dgelu).matrix();
}

template <typename T>
MatrixT<T> silu(const MatrixT<T>& z) {
  return (z.array() / (T(1) + (-z.array()).exp())).matrix();
}

template <typename T>
MatrixT<T> silu_backward(const MatrixT<T>& z, const MatrixT<T>& dy) {
  auto s = T(1) / (T(1) + (-z.array()).exp());
  return (dy.array() * s * (T(1) + z.array() * (T(1) - s))).matrix();
}

/// Normal draws with |x| <= 2 std, by rejection.
template <typename T>
void truncated_normal(std::span<T> out, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : out) {
    double x = dist(rng);
    while (std::abs(x) > 2.0) x = dist(rng);
    v = static_cast<T>(x * std);
  }
}

}  // namespace multidiff::nn
