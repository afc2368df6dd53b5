#pragma once

#include "relnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace relnet::nn {

/// Geometry of a square convolution with "same"-style padding (k / 2).
struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;

  [[nodiscard]] int pad() const { return kernel / 2; }
  [[nodiscard]] int out_size(int in) const { return (in + 2 * pad() - kernel) / stride + 1; }
  [[nodiscard]] int patch() const { return in_channels * kernel * kernel; }
};

/// Unfolds input patches into a (Cin*k*k) x (Ho*Wo) matrix.
template <typename Scalar>
RowMatrix<Scalar> im2col(const FeatureMap<Scalar>& in, const ConvShape& cs) {
  const int ho = cs.out_size(in.height);
  const int wo = cs.out_size(in.width);
  const int k = cs.kernel;
  const int p = cs.pad();
  RowMatrix<Scalar> cols(cs.patch(), static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < in.channels; ++c) {
    const Scalar* src = in.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * cs.stride + ky - p;
          Scalar* drow = dst + static_cast<std::ptrdiff_t>(oy) * wo;
          if (iy < 0 || iy >= in.height) {
            std::fill(drow, drow + wo, Scalar(0));
            continue;
          }
          const Scalar* srow = src + static_cast<std::ptrdiff_t>(iy) * in.width;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * cs.stride + kx - p;
            drow[ox] = (ix >= 0 && ix < in.width) ? srow[ix] : Scalar(0);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters patch gradients back onto the input grid.
template <typename Scalar>
FeatureMap<Scalar> col2im(const RowMatrix<Scalar>& cols, const ConvShape& cs, int in_h, int in_w) {
  const int ho = cs.out_size(in_h);
  const int wo = cs.out_size(in_w);
  const int k = cs.kernel;
  const int p = cs.pad();
  FeatureMap<Scalar> out(cs.in_channels, in_h, in_w);
  for (int c = 0; c < cs.in_channels; ++c) {
    Scalar* dst = out.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * cs.stride + ky - p;
          if (iy < 0 || iy >= in_h) continue;
          Scalar* drow = dst + static_cast<std::ptrdiff_t>(iy) * in_w;
          const Scalar* srow = src + static_cast<std::ptrdiff_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * cs.stride + kx - p;
            if (ix >= 0 && ix < in_w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
  return out;
}

/// Saved state of one convolution for the backward pass.
template <typename Scalar>
struct ConvCache {
  RowMatrix<Scalar> cols;  // empty for 1x1 stride-1 convs (input reused)
  int in_h = 0;
  int in_w = 0;
};

/// out = W * im2col(in) + b. `bias` may be null.
template <typename Scalar>
FeatureMap<Scalar> conv_forward(const FeatureMap<Scalar>& in, const RowMatrix<Scalar>& weight,
                                const RowMatrix<Scalar>* bias, const ConvShape& cs, ConvCache<Scalar>* cache) {
  FeatureMap<Scalar> out(cs.out_channels, cs.out_size(in.height), cs.out_size(in.width));
  const bool pointwise = cs.kernel == 1 && cs.stride == 1;
  if (pointwise) {
    out.data.noalias() = weight * in.data;
  } else {
    RowMatrix<Scalar> cols = im2col(in, cs);
    out.data.noalias() = weight * cols;
    if (cache) cache->cols = std::move(cols);
  }
  if (bias) out.data.colwise() += bias->col(0);
  if (cache) {
    cache->in_h = in.height;
    cache->in_w = in.width;
  }
  return out;
}

/// Accumulates dW, db and returns dIn (when `need_input_grad`).
/// `input` is required only for pointwise convolutions, whose cache holds no columns.
template <typename Scalar>
FeatureMap<Scalar> conv_backward(const FeatureMap<Scalar>& grad_out, const RowMatrix<Scalar>& weight,
                                 const ConvShape& cs, const ConvCache<Scalar>& cache, const FeatureMap<Scalar>* input,
                                 RowMatrix<Scalar>& grad_weight, RowMatrix<Scalar>* grad_bias, bool need_input_grad) {
  const bool pointwise = cs.kernel == 1 && cs.stride == 1;
  const RowMatrix<Scalar>& cols = pointwise ? input->data : cache.cols;
  grad_weight.noalias() += grad_out.data * cols.transpose();
  if (grad_bias) grad_bias->col(0) += grad_out.data.rowwise().sum();
  if (!need_input_grad) return {};
  if (pointwise) {
    FeatureMap<Scalar> gin(cs.in_channels, cache.in_h, cache.in_w);
    gin.data.noalias() = weight.transpose() * grad_out.data;
    return gin;
  }
  RowMatrix<Scalar> gcols = weight.transpose() * grad_out.data;
  return col2im(gcols, cs, cache.in_h, cache.in_w);
}

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& x) {
  x.data = x.data.cwiseMax(Scalar(0));
}

/// Masks `grad` where the activation output was not positive.
template <typename Scalar>
void relu_backward_inplace(FeatureMap<Scalar>& grad, const FeatureMap<Scalar>& activated) {
  grad.data = (activated.data.array() > Scalar(0)).select(grad.data, Scalar(0));
}

template <typename Scalar>
void leaky_relu_inplace(FeatureMap<Scalar>& x, Scalar slope) {
  x.data = (x.data.array() > Scalar(0)).select(x.data, slope * x.data);
}

/// `pre` is the input of the leaky ReLU.
template <typename Scalar>
void leaky_relu_backward_inplace(FeatureMap<Scalar>& grad, const FeatureMap<Scalar>& pre, Scalar slope) {
  grad.data = (pre.data.array() > Scalar(0)).select(grad.data, slope * grad.data);
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

template <typename Scalar>
FeatureMap<Scalar> sigmoid(const FeatureMap<Scalar>& logits) {
  FeatureMap<Scalar> out = logits;
  out.data = logits.data.unaryExpr([](Scalar z) { return sigmoid(z); });
  return out;
}

/// Per-channel instance normalisation without affine parameters.
template <typename Scalar>
struct InstanceNormCache {
  FeatureMap<Scalar> normalized;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
FeatureMap<Scalar> instance_norm_forward(const FeatureMap<Scalar>& x, Scalar eps, InstanceNormCache<Scalar>* cache) {
  FeatureMap<Scalar> out(x.channels, x.height, x.width);
  Vector<Scalar> inv_std(x.channels);
  const auto n = static_cast<Scalar>(x.pixels());
  for (int c = 0; c < x.channels; ++c) {
    const auto row = x.data.row(c).array();
    const Scalar mean = row.sum() / n;
    const Scalar var = (row - mean).square().sum() / n;
    inv_std(c) = Scalar(1) / std::sqrt(var + eps);
    out.data.row(c) = (row - mean) * inv_std(c);
  }
  if (cache) {
    cache->normalized = out;
    cache->inv_std = inv_std;
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> instance_norm_backward(const FeatureMap<Scalar>& grad_out, const InstanceNormCache<Scalar>& cache) {
  FeatureMap<Scalar> gin(grad_out.channels, grad_out.height, grad_out.width);
  const auto n = static_cast<Scalar>(grad_out.pixels());
  for (int c = 0; c < grad_out.channels; ++c) {
    const auto g = grad_out.data.row(c).array();
    const auto xhat = cache.normalized.data.row(c).array();
    const Scalar mean_g = g.sum() / n;
    const Scalar mean_gx = (g * xhat).sum() / n;
    gin.data.row(c) = cache.inv_std(c) * (g - mean_g - xhat * mean_gx);
  }
  return gin;
}

}  // namespace relnet::nn
