#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "efficomm/errors.hpp"
#include "efficomm/grid.hpp"
#include "efficomm/random.hpp"

namespace efficomm {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
typename Derived::PlainObject relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

template <typename Derived>
typename Derived::PlainObject elu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : std::expm1(v); });
}

template <typename Scalar>
Scalar leaky_relu(Scalar x, Scalar slope) {
  return x > Scalar(0) ? x : slope * x;
}

/// Max-subtracted softmax of a vector.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = logits.maxCoeff();
  VectorX<Scalar> e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

/// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] draws, rounded through binary32
/// so that parameter files store them without loss.
template <typename Scalar>
MatrixX<Scalar> init_uniform(Index rows, Index cols, Index fan_in, std::uint64_t seed,
                             std::string_view name) {
  Rng rng(derive_seed(seed, {fnv1a64(name)}));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  MatrixX<Scalar> m(rows, cols);
  // Row-major draw order matches the on-disk layout.
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = Scalar(float(rng.uniform(-bound, bound)));
  return m;
}

/// y = W x + b, applied column-wise.
template <typename Scalar>
struct Affine {
  MatrixX<Scalar> weight;
  VectorX<Scalar> bias;

  Affine() = default;
  Affine(MatrixX<Scalar> w, VectorX<Scalar> b) : weight(std::move(w)), bias(std::move(b)) {}

  static Affine zeros(Index in, Index out) {
    return Affine(MatrixX<Scalar>::Zero(out, in), VectorX<Scalar>::Zero(out));
  }
  static Affine random(Index in, Index out, std::uint64_t seed, const std::string& name) {
    return Affine(init_uniform<Scalar>(out, in, in, seed, name + ".weight"),
                  init_uniform<Scalar>(out, 1, in, seed, name + ".bias"));
  }

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }

  template <typename Derived>
  MatrixX<Scalar> operator()(const Eigen::MatrixBase<Derived>& x) const {
    if (x.rows() != in_dim())
      throw ConfigError("input", "affine stage expects " + std::to_string(in_dim()) +
                                     " rows, got " + std::to_string(x.rows()));
    MatrixX<Scalar> y = weight * x;
    y.colwise() += bias;
    return y;
  }
};

/// 2-D convolution over a (channels x H*W) row-major grid, zero padded.
/// Weight rows are output channels; columns follow (in_channel, ky, kx).
template <typename Scalar>
struct Conv2d {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  MatrixX<Scalar> weight;
  VectorX<Scalar> bias;

  int patch_size() const { return in_channels * kernel * kernel; }
  int out_extent(int in) const { return (in + 2 * padding - kernel) / stride + 1; }

  bool consistent() const {
    return in_channels >= 1 && out_channels >= 1 && kernel >= 1 && stride >= 1 && padding >= 0 &&
           weight.rows() == out_channels && weight.cols() == patch_size() &&
           bias.size() == out_channels;
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& input, int height, int width, int& out_h,
                          int& out_w) const {
    if (input.rows() != in_channels || input.cols() != Index(height) * width)
      throw ConfigError("conv.input", "expected " + std::to_string(in_channels) + " channels over " +
                                          std::to_string(height) + "x" + std::to_string(width));
    if (height + 2 * padding < kernel || width + 2 * padding < kernel)
      throw ConfigError("conv.kernel", "kernel " + std::to_string(kernel) +
                                           " exceeds padded input " + std::to_string(height) +
                                           "x" + std::to_string(width));
    out_h = out_extent(height);
    out_w = out_extent(width);
    MatrixX<Scalar> cols = MatrixX<Scalar>::Zero(patch_size(), Index(out_h) * out_w);
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const Index col = Index(oy) * out_w + ox;
        for (int ch = 0; ch < in_channels; ++ch)
          for (int ky = 0; ky < kernel; ++ky) {
            const int y = oy * stride + ky - padding;
            if (y < 0 || y >= height) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int x = ox * stride + kx - padding;
              if (x < 0 || x >= width) continue;
              cols((ch * kernel + ky) * kernel + kx, col) = input(ch, Index(y) * width + x);
            }
          }
      }
    MatrixX<Scalar> out = weight * cols;
    out.colwise() += bias;
    return out;
  }
};

}  // namespace efficomm
