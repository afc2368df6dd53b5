#pragma once

#include "relnet/layers.hpp"
#include "relnet/param_store.hpp"
#include "relnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace relnet {

/// Grouped consistency evaluator: scores how consistent a (landmark heatmap,
/// relation heatmap) pair is. Four blocks of stride-2 3x3 conv, instance
/// norm and LeakyReLU, then global average pooling and an affine score.
struct GceConfig {
  std::array<int, 4> widths = {16, 32, 64, 64};
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;

  [[nodiscard]] std::string describe() const;
  [[nodiscard]] std::string arch_hash() const;
};

enum class Provenance { GroundTruth, Predicted };

template <typename Scalar>
struct HeatmapPair {
  FeatureMap<Scalar> landmark_map;
  FeatureMap<Scalar> relation_map;
  Provenance landmark_source = Provenance::GroundTruth;
  Provenance relation_source = Provenance::GroundTruth;
};

template <typename Scalar>
struct GceCache {
  std::array<nn::ConvCache<Scalar>, 4> convs;
  std::array<nn::InstanceNormCache<Scalar>, 4> norms;
  std::array<FeatureMap<Scalar>, 4> pre_act;  // instance-norm outputs
  Vector<Scalar> pooled;
  int in_h = 0;
  int in_w = 0;
};

template <typename Scalar>
class Gce {
 public:
  explicit Gce(GceConfig cfg = {});

  [[nodiscard]] const GceConfig& config() const { return cfg_; }
  [[nodiscard]] ParamStore<Scalar> init_params(std::uint64_t seed) const;

  /// Pre-sigmoid score of a 2-channel input (landmark first, relation second).
  Scalar logit(const FeatureMap<Scalar>& input, const ParamStore<Scalar>& params,
               GceCache<Scalar>* cache = nullptr) const;

  /// Consistency score in (0,1).
  Scalar evaluate(const HeatmapPair<Scalar>& pair, const ParamStore<Scalar>& params) const;

  /// Backpropagates dL/dlogit. Either output pointer may be null.
  void backward(const GceCache<Scalar>& cache, const ParamStore<Scalar>& params, Scalar grad_logit,
                ParamStore<Scalar>* grads, FeatureMap<Scalar>* grad_input) const;

  void check_params(const ParamStore<Scalar>& params) const;

 private:
  GceConfig cfg_;
  std::array<nn::ConvShape, 4> shapes_{};
  std::array<std::size_t, 4> weights_{};
  std::size_t score_w_ = 0;
  std::size_t score_b_ = 0;
  ParamStore<Scalar> layout_;
};

/// Channel-concatenates a pair in the fixed (landmark, relation) order.
template <typename Scalar>
FeatureMap<Scalar> stack_pair(const FeatureMap<Scalar>& landmark, const FeatureMap<Scalar>& relation) {
  if (landmark.channels != 1 || relation.channels != 1) {
    throw std::invalid_argument("gce: heatmaps must have one channel each");
  }
  return concat_channels(landmark, relation);
}

extern template class Gce<float>;
extern template class Gce<double>;

}  // namespace relnet
