#pragma once

#include "relnet/layers.hpp"
#include "relnet/param_store.hpp"
#include "relnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace relnet {

/// Desk-scale multi-task detector: a /4 convolutional trunk with four
/// "3x3 conv -> ReLU -> 1x1 conv" heads (landmark heatmap, size, offset,
/// relation heatmap).
struct DetectorConfig {
  int stem_width = 16;
  int mid_width = 32;
  int width = 64;
  int res_blocks = 2;
  int head_width = 64;
  /// Initial sigmoid output of both heatmap heads.
  double heatmap_prior = 0.1;

  static constexpr int kDownsample = 4;

  void validate() const;
  [[nodiscard]] std::string describe() const;
  [[nodiscard]] std::string arch_hash() const;
};

template <typename Scalar>
struct NetworkOutput {
  FeatureMap<Scalar> y_hat;  // landmark heatmap, sigmoid
  FeatureMap<Scalar> s_hat;  // box size (w, h) in input pixels
  FeatureMap<Scalar> o_hat;  // sub-cell offset
  FeatureMap<Scalar> r_hat;  // relation heatmap, sigmoid

  /// Zero tensors with the same shapes, used to carry dL/d(output).
  [[nodiscard]] NetworkOutput zeros_like() const {
    return {FeatureMap<Scalar>(y_hat.channels, y_hat.height, y_hat.width),
            FeatureMap<Scalar>(s_hat.channels, s_hat.height, s_hat.width),
            FeatureMap<Scalar>(o_hat.channels, o_hat.height, o_hat.width),
            FeatureMap<Scalar>(r_hat.channels, r_hat.height, r_hat.width)};
  }
};

enum class Head : int { Heatmap = 0, Size = 1, Offset = 2, Relation = 3 };
inline constexpr std::array<const char*, 4> kHeadNames = {"heatmap", "size", "offset", "relation"};
inline constexpr std::array<int, 4> kHeadChannels = {1, 2, 2, 1};

/// Activations retained by forward() for backward().
template <typename Scalar>
struct DetectorCache {
  std::vector<nn::ConvCache<Scalar>> convs;
  std::vector<FeatureMap<Scalar>> acts;
  RowMatrix<Scalar> head_cols;
  std::array<FeatureMap<Scalar>, 4> head_hidden;
  NetworkOutput<Scalar> output;
};

template <typename Scalar>
class Detector {
 public:
  explicit Detector(DetectorConfig cfg = {});

  [[nodiscard]] const DetectorConfig& config() const { return cfg_; }

  /// Deterministic in `seed`; the float and double stores built from the same
  /// seed agree up to rounding.
  [[nodiscard]] ParamStore<Scalar> init_params(std::uint64_t seed) const;

  /// `image` is 3 x H x W with H, W divisible by 4. Outputs are H/4 x W/4.
  NetworkOutput<Scalar> forward(const FeatureMap<Scalar>& image, const ParamStore<Scalar>& params,
                                DetectorCache<Scalar>* cache = nullptr,
                                FeatureMap<Scalar>* features = nullptr) const;

  /// Accumulates into `grads` the parameter gradient of a scalar loss whose
  /// derivative w.r.t. the outputs is `grad_out`. Gradients for y_hat and
  /// r_hat are taken w.r.t. the post-sigmoid probabilities.
  void backward(const DetectorCache<Scalar>& cache, const ParamStore<Scalar>& params,
                const NetworkOutput<Scalar>& grad_out, ParamStore<Scalar>& grads) const;

  /// Throws if `params` does not have this architecture's layout.
  void check_params(const ParamStore<Scalar>& params) const;

 private:
  struct ConvSlot {
    nn::ConvShape shape;
    std::size_t weight = 0;
    std::size_t bias = 0;
    double init_std = 0.0;
  };

  DetectorConfig cfg_;
  std::vector<ConvSlot> trunk_;                 // stem, down1, down2, then 2 per residual block
  std::array<ConvSlot, 4> head_hidden_{};       // 3x3 per head
  std::array<ConvSlot, 4> head_out_{};          // 1x1 per head
  ParamStore<Scalar> layout_;
};

extern template class Detector<float>;
extern template class Detector<double>;

}  // namespace relnet
