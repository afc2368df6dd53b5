#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relnet {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense C x H x W tensor. Each channel is one contiguous row of `data`,
/// laid out row-major over (y, x).
template <typename Scalar>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMatrix<Scalar> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w), data(RowMatrix<Scalar>::Zero(c, static_cast<Eigen::Index>(h) * w)) {}

  static FeatureMap Constant(int c, int h, int w, Scalar value) {
    FeatureMap m(c, h, w);
    m.data.setConstant(value);
    return m;
  }

  [[nodiscard]] Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }

  Scalar& operator()(int c, int y, int x) { return data(c, static_cast<Eigen::Index>(y) * width + x); }
  Scalar operator()(int c, int y, int x) const { return data(c, static_cast<Eigen::Index>(y) * width + x); }

  [[nodiscard]] bool same_shape(const FeatureMap& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }

  template <typename Other>
  [[nodiscard]] FeatureMap<Other> cast() const {
    FeatureMap<Other> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data = data.template cast<Other>();
    return out;
  }

  /// Copy of channel range [first, first + count).
  [[nodiscard]] FeatureMap slice(int first, int count) const {
    FeatureMap out;
    out.channels = count;
    out.height = height;
    out.width = width;
    out.data = data.middleRows(first, count);
    return out;
  }
};

/// Stack two maps along the channel axis (a first).
template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("concat_channels: spatial shapes differ");
  }
  FeatureMap<Scalar> out(a.channels + b.channels, a.height, a.width);
  out.data.topRows(a.channels) = a.data;
  out.data.bottomRows(b.channels) = b.data;
  return out;
}

/// An RGB image in [0,1], stored as a 3-channel map.
using Image = FeatureMap<float>;

inline std::string shape_string(int c, int h, int w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace relnet
