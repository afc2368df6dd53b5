#include "relnet/gce.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace relnet {

std::string GceConfig::describe() const {
  std::ostringstream os;
  os << "gce widths=" << widths[0] << "," << widths[1] << "," << widths[2] << "," << widths[3]
     << " slope=" << leaky_slope << " eps=" << norm_eps;
  return os.str();
}

std::string GceConfig::arch_hash() const { return hex64(fnv1a(describe())); }

template <typename Scalar>
Gce<Scalar>::Gce(GceConfig cfg) : cfg_(cfg), layout_(cfg.arch_hash()) {
  int in = 2;
  for (int b = 0; b < 4; ++b) {
    if (cfg_.widths[b] < 1) throw std::invalid_argument("gce config: widths must be positive");
    shapes_[b] = nn::ConvShape{in, cfg_.widths[b], 3, 2};
    // instance norm cancels any conv bias, so the blocks carry none
    weights_[b] = layout_.add("block" + std::to_string(b) + ".weight", {cfg_.widths[b], in, 3, 3}, cfg_.widths[b],
                              shapes_[b].patch());
    in = cfg_.widths[b];
  }
  score_w_ = layout_.add("score.weight", {1, in}, 1, in);
  score_b_ = layout_.add("score.bias", {1}, 1, 1);
}

template <typename Scalar>
ParamStore<Scalar> Gce<Scalar>::init_params(std::uint64_t seed) const {
  ParamStore<Scalar> params = layout_.zeros_like();
  std::mt19937_64 rng(seed);
  const double slope = cfg_.leaky_slope;
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  for (int b = 0; b < 4; ++b) {
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(shapes_[b].patch())));
    auto& w = params.value(weights_[b]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
  }
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.widths[3])));
  auto& w = params.value(score_w_);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(dist(rng));
  return params;
}

template <typename Scalar>
void Gce<Scalar>::check_params(const ParamStore<Scalar>& params) const {
  if (params.size() != layout_.size()) throw std::invalid_argument("gce params: wrong number of arrays");
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (params[i].name != layout_[i].name || params[i].value.rows() != layout_[i].value.rows() ||
        params[i].value.cols() != layout_[i].value.cols()) {
      throw std::invalid_argument("gce params: layout mismatch at " + layout_[i].name);
    }
  }
}

template <typename Scalar>
Scalar Gce<Scalar>::logit(const FeatureMap<Scalar>& input, const ParamStore<Scalar>& params,
                          GceCache<Scalar>* cache) const {
  if (input.channels != 2) throw std::invalid_argument("gce: input must have 2 channels");
  if (input.height < 1 || input.width < 1) throw std::invalid_argument("gce: empty input");
  check_params(params);
  const auto slope = static_cast<Scalar>(cfg_.leaky_slope);
  const auto eps = static_cast<Scalar>(cfg_.norm_eps);

  FeatureMap<Scalar> x = input;
  for (int b = 0; b < 4; ++b) {
    FeatureMap<Scalar> c = nn::conv_forward(x, params.value(weights_[b]), static_cast<const RowMatrix<Scalar>*>(nullptr),
                                            shapes_[b], cache ? &cache->convs[b] : nullptr);
    FeatureMap<Scalar> n = nn::instance_norm_forward(c, eps, cache ? &cache->norms[b] : nullptr);
    if (cache) cache->pre_act[b] = n;
    nn::leaky_relu_inplace(n, slope);
    x = std::move(n);
  }
  Vector<Scalar> pooled = x.data.rowwise().mean();
  const Scalar z = (params.value(score_w_) * pooled)(0, 0) + params.value(score_b_)(0, 0);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->in_h = input.height;
    cache->in_w = input.width;
  }
  return z;
}

template <typename Scalar>
Scalar Gce<Scalar>::evaluate(const HeatmapPair<Scalar>& pair, const ParamStore<Scalar>& params) const {
  return nn::sigmoid(logit(stack_pair(pair.landmark_map, pair.relation_map), params));
}

template <typename Scalar>
void Gce<Scalar>::backward(const GceCache<Scalar>& cache, const ParamStore<Scalar>& params, Scalar grad_logit,
                           ParamStore<Scalar>* grads, FeatureMap<Scalar>* grad_input) const {
  const auto slope = static_cast<Scalar>(cfg_.leaky_slope);
  if (grads) {
    grads->value(score_w_).row(0) += grad_logit * cache.pooled.transpose();
    grads->value(score_b_)(0, 0) += grad_logit;
  }
  const auto& last = cache.pre_act[3];
  FeatureMap<Scalar> g(last.channels, last.height, last.width);
  const Vector<Scalar> gpool = grad_logit * params.value(score_w_).row(0).transpose();
  g.data = (gpool / static_cast<Scalar>(last.pixels())).replicate(1, last.pixels());

  RowMatrix<Scalar> scratch;
  for (int b = 3; b >= 0; --b) {
    nn::leaky_relu_backward_inplace(g, cache.pre_act[b], slope);
    g = nn::instance_norm_backward(g, cache.norms[b]);
    const bool need_input = b > 0 || grad_input != nullptr;
    RowMatrix<Scalar>& gw = grads ? grads->value(weights_[b]) : scratch;
    if (!grads) scratch = RowMatrix<Scalar>::Zero(params.value(weights_[b]).rows(), params.value(weights_[b]).cols());
    g = nn::conv_backward(g, params.value(weights_[b]), shapes_[b], cache.convs[b],
                          static_cast<const FeatureMap<Scalar>*>(nullptr), gw, static_cast<RowMatrix<Scalar>*>(nullptr),
                          need_input);
  }
  if (grad_input) *grad_input = std::move(g);
}

template class Gce<float>;
template class Gce<double>;

}  // namespace relnet
